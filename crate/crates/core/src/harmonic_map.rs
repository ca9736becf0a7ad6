//! The harmonic map `Q`: the static solution of `r Q_r = g(Q)` with
//! `Q(0) = 0`, `Q(∞) = C*`, `Q(1) = C*/2`.
//!
//! In `s = ln r` the equation is the autonomous ODE `dQ/ds = g(Q)`, so we
//! integrate with classical RK4 from `s = 0` in both directions.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::fields::RadialGrid;
use crate::fmt_f64;
use crate::geometry::TargetGeometry;
use crate::quad::trapezoid;

pub const DEFAULT_DS: f64 = 1e-3;
pub const DEFAULT_S_RANGE: (f64, f64) = (-16.0, 16.0);
const ENERGY_IDENTITY_TOL: f64 = 1e-4;
const DIVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum HarmonicMapError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("integration left [0, C*] at s = {s}: Q = {q}")]
    Divergence { s: f64, q: f64 },
    #[error(
        "E(Q) = {computed} differs from 2G(C*) = {expected} by more than {ENERGY_IDENTITY_TOL:e}"
    )]
    ThresholdMismatch { computed: f64, expected: f64 },
}

#[derive(Debug, Clone)]
pub struct HarmonicMapProfile {
    geometry: TargetGeometry,
    ds: f64,
    s_min: f64,
    q: Vec<f64>,
    energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub c_star: f64,
    pub e_q: f64,
    pub residual_max: f64,
}

fn rk4(geo: &TargetGeometry, q: f64, ds: f64) -> f64 {
    let k1 = geo.g(q);
    let k2 = geo.g(q + 0.5 * ds * k1);
    let k3 = geo.g(q + 0.5 * ds * k2);
    let k4 = geo.g(q + ds * k3);
    q + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates `dQ/ds = g(Q)` on `[s_min, s_max]` with a node at `s = 0`.
pub fn solve_q(
    geo: &TargetGeometry,
    ds: f64,
    s_range: (f64, f64),
) -> Result<HarmonicMapProfile, HarmonicMapError> {
    let (s_min, s_max) = s_range;
    if !(ds > 0.0 && ds <= 1e-2) {
        return Err(HarmonicMapError::InvalidParameters(format!(
            "step {ds} must lie in (0, 1e-2]"
        )));
    }
    if s_max <= s_min {
        return Err(HarmonicMapError::InvalidParameters(format!(
            "empty range [{s_min}, {s_max}]"
        )));
    }
    if s_min > -8.0 || s_max < 8.0 {
        return Err(HarmonicMapError::InvalidParameters(format!(
            "range [{s_min}, {s_max}] must contain [-8, 8]"
        )));
    }
    let n_neg = (-s_min / ds).round() as usize;
    let n_pos = (s_max / ds).round() as usize;
    let c = geo.c_star();

    let check = |s: f64, q: f64| {
        if q < -DIVERGENCE_TOL || q > c + DIVERGENCE_TOL || !q.is_finite() {
            Err(HarmonicMapError::Divergence { s, q })
        } else {
            Ok(q)
        }
    };

    let mut q = vec![0.0; n_neg + n_pos + 1];
    q[n_neg] = 0.5 * c;
    for j in n_neg + 1..q.len() {
        let s = (j - n_neg) as f64 * ds;
        q[j] = check(s, rk4(geo, q[j - 1], ds))?;
    }
    for j in (0..n_neg).rev() {
        let s = -((n_neg - j) as f64) * ds;
        q[j] = check(s, rk4(geo, q[j + 1], -ds))?;
    }

    let mut profile = HarmonicMapProfile {
        geometry: geo.clone(),
        ds,
        s_min: -(n_neg as f64) * ds,
        q,
        energy: 0.0,
    };
    profile.energy = energy_of_q(&profile)?;
    Ok(profile)
}

/// `E(Q) = ∫((dQ/ds)² + g²(Q)) ds`, checked against `2 G(C*)`.
pub fn energy_of_q(profile: &HarmonicMapProfile) -> Result<f64, HarmonicMapError> {
    if profile.q.len() < 2 {
        return Err(HarmonicMapError::InvalidParameters(
            "degenerate s-range".into(),
        ));
    }
    let geo = &profile.geometry;
    let density: Vec<f64> = profile
        .q
        .iter()
        .map(|&q| {
            let g = geo.g(q);
            2.0 * g * g
        })
        .collect();
    let computed = trapezoid(&density, profile.ds);
    let expected = geo.threshold_energy();
    if (computed - expected).abs() > ENERGY_IDENTITY_TOL {
        return Err(HarmonicMapError::ThresholdMismatch { computed, expected });
    }
    Ok(computed)
}

impl HarmonicMapProfile {
    pub fn geometry(&self) -> &TargetGeometry {
        &self.geometry
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s_min, self.s_min + (self.q.len() - 1) as f64 * self.ds)
    }

    pub fn s_nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.q.len()).map(move |j| self.s_min + j as f64 * self.ds)
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    /// Index of the node at `s = 0`.
    pub fn origin_index(&self) -> usize {
        (-self.s_min / self.ds).round() as usize
    }

    /// Max of `|dQ/ds − g(Q)|` over interior nodes, with a five-point centered difference.
    pub fn residual_max(&self) -> f64 {
        let q = &self.q;
        (2..q.len().saturating_sub(2))
            .map(|j| {
                let dq =
                    (-q[j + 2] + 8.0 * q[j + 1] - 8.0 * q[j - 1] + q[j - 2]) / (12.0 * self.ds);
                (dq - self.geometry.g(q[j])).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `Q(s) ≈ A e^{ks}` below `s_min`.
    fn left_tail_coeff(&self) -> f64 {
        self.q[0] * (-(self.geometry.k() as f64) * self.s_min).exp()
    }

    /// Q at log-radius `s`: four-point cubic interpolation inside the table,
    /// linearized exponential tails outside it.
    pub fn q_at_s(&self, s: f64) -> f64 {
        let (lo, hi) = self.s_range();
        let k = self.geometry.k() as f64;
        let c = self.geometry.c_star();
        if s <= lo {
            return self.left_tail_coeff() * (k * s).exp();
        }
        if s >= hi {
            let rate = self.geometry.gp(c);
            let gap = (c - self.q[self.q.len() - 1]) * (-rate * hi).exp();
            return c - gap * (rate * s).exp();
        }
        let x = (s - lo) / self.ds;
        let n = self.q.len();
        let i = (x.floor() as usize).clamp(1, n - 3);
        let t = x - i as f64;
        let (p0, p1, p2, p3) = (self.q[i - 1], self.q[i], self.q[i + 1], self.q[i + 2]);
        // Lagrange weights for nodes −1, 0, 1, 2
        let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3
    }

    pub fn q_at_r(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else {
            self.q_at_s(r.ln())
        }
    }

    /// `lim_{r→0} Q(λr)/r^k`.
    pub fn scaled_origin_ratio(&self, lambda: f64) -> f64 {
        self.left_tail_coeff() * lambda.powi(self.geometry.k() as i32)
    }

    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            c_star: self.geometry.c_star(),
            e_q: self.energy,
            residual_max: self.residual_max(),
        }
    }

    /// CSV with columns `r,Q,dQ/ds`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "r,Q,dQ/ds")?;
        for (s, &q) in self.s_nodes().zip(&self.q) {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(s.exp()),
                fmt_f64(q),
                fmt_f64(self.geometry.g(q))
            )?;
        }
        Ok(())
    }
}

/// `u(r) = Q(λr)` sampled on the grid; `u(0) = 0`.
pub fn sample_q_scaled(profile: &HarmonicMapProfile, lambda: f64, grid: &RadialGrid) -> Vec<f64> {
    assert!(lambda > 0.0, "scale must be positive");
    grid.nodes()
        .map(|r| {
            if r == 0.0 {
                0.0
            } else {
                profile.q_at_s((lambda * r).ln())
            }
        })
        .collect()
}

/// `v = Q(λr)/r^k` on the grid, with the exact limit at the origin.
pub fn sample_q_scaled_v(profile: &HarmonicMapProfile, lambda: f64, grid: &RadialGrid) -> Vec<f64> {
    let k = profile.geometry.k() as i32;
    let u = sample_q_scaled(profile, lambda, grid);
    grid.nodes()
        .zip(u)
        .map(|(r, u)| {
            if r == 0.0 {
                profile.scaled_origin_ratio(lambda)
            } else {
                u / r.powi(k)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn sphere() -> HarmonicMapProfile {
        solve_q(&TargetGeometry::sphere(), DEFAULT_DS, DEFAULT_S_RANGE).unwrap()
    }

    #[test]
    fn sphere_closed_form() {
        let p = sphere();
        let err = p
            .s_nodes()
            .zip(p.q_values())
            .map(|(s, &q)| (q - 2.0 * s.exp().atan()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "max error {err:e}");
        assert_eq!(p.q_values()[p.origin_index()], PI / 2.0);
        assert!((p.energy() - 4.0).abs() <= 1e-4);
    }

    #[test]
    fn yang_mills_closed_form() {
        let p = solve_q(
            &TargetGeometry::yang_mills_shifted(),
            DEFAULT_DS,
            DEFAULT_S_RANGE,
        )
        .unwrap();
        let err = p
            .s_nodes()
            .zip(p.q_values())
            .map(|(s, &q)| {
                let e = (2.0 * s).exp();
                (q - 2.0 * e / (1.0 + e)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "max error {err:e}");
        assert!((p.energy() - 8.0 / 3.0).abs() <= 1e-4);
    }

    #[test]
    fn profile_invariants() {
        for geo in [
            TargetGeometry::sphere(),
            TargetGeometry::yang_mills_shifted(),
        ] {
            let p = solve_q(&geo, DEFAULT_DS, DEFAULT_S_RANGE).unwrap();
            let q = p.q_values();
            assert!(q.windows(2).all(|w| w[1] >= w[0]), "nondecreasing");
            // consecutive samples near C* agree to the last ulp in the far tail
            let mid: Vec<f64> = p
                .s_nodes()
                .zip(q)
                .filter(|(s, _)| s.abs() <= 8.0)
                .map(|(_, &q)| q)
                .collect();
            assert!(mid.windows(2).all(|w| w[1] > w[0]), "strictly increasing");
            assert!(q[0] <= 1e-6);
            assert!(geo.c_star() - q[q.len() - 1] <= 1e-6);
            assert!(p.residual_max() <= 1e-8, "residual {:e}", p.residual_max());
            assert_eq!(q[p.origin_index()], geo.c_star() / 2.0);
        }
    }

    #[test]
    fn invalid_parameters() {
        let geo = TargetGeometry::sphere();
        assert!(matches!(
            solve_q(&geo, 1e-3, (0.0, 0.0)),
            Err(HarmonicMapError::InvalidParameters(_))
        ));
        assert!(matches!(
            solve_q(&geo, 0.1, DEFAULT_S_RANGE),
            Err(HarmonicMapError::InvalidParameters(_))
        ));
        assert!(matches!(
            solve_q(&geo, 1e-3, (-4.0, 12.0)),
            Err(HarmonicMapError::InvalidParameters(_))
        ));
    }

    #[test]
    fn scaled_samples() {
        let p = sphere();
        let grid = RadialGrid::new(1000, 2.0).unwrap();
        let u1 = sample_q_scaled(&p, 1.0, &grid);
        assert_eq!(u1[0], 0.0);
        assert!((u1[500] - PI / 2.0).abs() < 1e-12);
        let u2 = sample_q_scaled(&p, 2.0, &grid);
        assert!((u2[250] - PI / 2.0).abs() < 1e-12);
        assert!((p.q_at_r(1e3) - (PI - 2e-3)).abs() < 1e-5);
        // interpolation between nodes against the closed form
        for &r in &[1e-5, 0.0123, 0.77, 3.3, 450.0, 2e7] {
            assert!((p.q_at_r(r) - 2.0 * f64::atan(r)).abs() < 1e-9, "r = {r}");
        }
        let v = sample_q_scaled_v(&p, 1.5, &grid);
        assert!((v[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn csv_export() {
        let p = sphere();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,Q,dQ/ds"));
        assert_eq!(lines.count(), p.q_values().len());
        let s = serde_json::to_value(p.summary()).unwrap();
        assert!((s["e_q"].as_f64().unwrap() - 4.0).abs() < 1e-4);
    }
}
