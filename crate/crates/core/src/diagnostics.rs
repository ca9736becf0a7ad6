//! Dynamical functionals: cutoff virial quantities, exterior tails, the
//! space-time accumulator used as a scattering indicator, and the random
//! coercivity scan comparing `F(u)` with `E(u)`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::RunRecord;
use crate::fields::{
    integrate_range, norm_density, report_from, Densities, FieldState, RadialGrid, BOUNDARY_TOL,
};
use crate::fmt_f64;
use crate::geometry::{bisect, TargetGeometry};
use crate::quad::trapezoid;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("radius {r} outside [0, {r_max})")]
    Domain { r: f64, r_max: f64 },
    #[error("invalid scan parameters: {0}")]
    Parameters(String),
    #[error("profile {index} rejected: {reason}")]
    Rejected { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Radii `R` at which `τ(R)` is recorded.
    pub tail_radii: Vec<f64>,
    /// Cutoff radius for the virial quantities; defaults to `r_max / 2`.
    pub virial_radius: Option<f64>,
    /// Radius of the interior energy `E_0^{R}` used by the classifier.
    pub interior_radius: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            tail_radii: Vec::new(),
            virial_radius: None,
            interior_radius: 1.0,
        }
    }
}

/// Smooth cutoff `φ_R(r) = φ(r / R)`: 1 on `[0, R]`, 0 beyond `2R`, quintic smoothstep between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFunction {
    pub radius: f64,
}

impl CutoffFunction {
    pub const SUP_DPHI: f64 = 15.0 / 8.0;
    /// `10 / √3`
    pub const SUP_D2PHI: f64 = 5.773_502_691_896_258;

    pub fn new(radius: f64) -> Self {
        CutoffFunction { radius }
    }

    /// Profile `φ(x)` on the unit scale.
    pub fn profile(x: f64) -> f64 {
        if x <= 1.0 {
            1.0
        } else if x >= 2.0 {
            0.0
        } else {
            let y = x - 1.0;
            1.0 - y * y * y * (10.0 + y * (-15.0 + 6.0 * y))
        }
    }

    pub fn profile_d1(x: f64) -> f64 {
        if x <= 1.0 || x >= 2.0 {
            0.0
        } else {
            let y = x - 1.0;
            -30.0 * y * y * (1.0 - y) * (1.0 - y)
        }
    }

    pub fn profile_d2(x: f64) -> f64 {
        if x <= 1.0 || x >= 2.0 {
            0.0
        } else {
            let y = x - 1.0;
            -60.0 * y * (1.0 - y) * (1.0 - 2.0 * y)
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        Self::profile(r / self.radius)
    }

    /// `C_φ = 10 (1 + 2 sup|φ′| + 4 sup|φ″|)`
    pub fn bound_constant() -> f64 {
        10.0 * (1.0 + 2.0 * Self::SUP_DPHI + 4.0 * Self::SUP_D2PHI)
    }
}

/// `τ(R) = ∫_R^{r_max} (u_t² + u_r² + u²/r²) r dr`
pub fn tail(state: &FieldState, radius: f64) -> Result<f64, DiagnosticsError> {
    let r_max = state.grid.r_max();
    if !(radius >= 0.0 && radius < r_max) {
        return Err(DiagnosticsError::Domain { r: radius, r_max });
    }
    Ok(integrate_range(&norm_density(state), &state.grid, radius, r_max).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirialSample {
    pub t: f64,
    pub radius: f64,
    /// `∫ u_t u_r r² φ_R dr`
    pub v1: f64,
    /// `∫ u u_t r φ_R dr`
    pub v2: f64,
    /// `−∫ u_t² r dr`
    pub main1: f64,
    /// `∫ (u_t² − u_r² − u f(u)/r²) r φ_R dr`
    pub main2: f64,
    pub tail: f64,
}

pub fn virial_sample(state: &FieldState, geo: &TargetGeometry, radius: f64) -> VirialSample {
    let d = Densities::new(state, geo);
    let cut = CutoffFunction::new(radius);
    let n = d.u.len();
    let mut i1 = vec![0.0; n];
    let mut i2 = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for j in 1..n {
        let r = state.grid.r(j);
        let phi = cut.eval(r);
        let (u, ur, ut) = (d.u[j], d.u_r[j], d.u_t[j]);
        i1[j] = ut * ur * r * r * phi;
        i2[j] = u * ut * r * phi;
        m1[j] = -ut * ut * r;
        m2[j] = ((ut * ut - ur * ur) * r - u * geo.f(u) / r) * phi;
    }
    let h = state.grid.h();
    let r_max = state.grid.r_max();
    VirialSample {
        t: state.t,
        radius,
        v1: trapezoid(&i1, h),
        v2: trapezoid(&i2, h),
        main1: trapezoid(&m1, h),
        main2: trapezoid(&m2, h),
        tail: if radius < r_max {
            integrate_range(&d.norm, &state.grid, radius, r_max).max(0.0)
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VirialResidual {
    pub t: f64,
    /// `dv1/dt − main1`
    pub r1: f64,
    /// `dv2/dt − main2`
    pub r2: f64,
    /// `C_φ τ(R)`
    pub bound: f64,
}

/// Centered differences of the recorded virial quantities minus their main terms,
/// at every interior series row.
pub fn virial_residuals(record: &RunRecord) -> Vec<VirialResidual> {
    let s = &record.series;
    let c = CutoffFunction::bound_constant();
    (1..s.len().saturating_sub(1))
        .map(|i| {
            let dt = s[i + 1].t - s[i - 1].t;
            let (a, b, m) = (&s[i - 1].virial, &s[i + 1].virial, &s[i].virial);
            VirialResidual {
                t: s[i].t,
                r1: (b.v1 - a.v1) / dt - m.main1,
                r2: (b.v2 - a.v2) / dt - m.main2,
                bound: c * m.tail,
            }
        })
        .collect()
}

pub fn write_virial_csv(residuals: &[VirialResidual], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "t,residual1,residual2,bound")?;
    for p in residuals {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(p.t),
            fmt_f64(p.r1),
            fmt_f64(p.r2),
            fmt_f64(p.bound)
        )?;
    }
    Ok(())
}

/// Exponent `2 + 3/k` of the space-time norm.
pub fn snorm_exponent(k: u32) -> f64 {
    2.0 + 3.0 / k as f64
}

/// `∫ |v|^{2+3/k} r^{2k+1} dr` at one time.
pub fn snorm_integral(state: &FieldState) -> f64 {
    let p = snorm_exponent(state.k);
    let w = 2 * state.k as i32 + 1;
    let dens: Vec<f64> = state
        .v
        .iter()
        .enumerate()
        .map(|(j, v)| v.abs().powf(p) * state.grid.r(j).powi(w))
        .collect();
    trapezoid(&dens, state.grid.h())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnormPoint {
    pub t: f64,
    pub acc: f64,
}

/// Left-rectangle accumulation `Σ Δt ∫|v|^{2+3/k} r^{2k+1} dr` over the recorded rows.
pub fn snorm_accumulate(record: &RunRecord) -> Vec<SnormPoint> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(record.series.len());
    for (i, row) in record.series.iter().enumerate() {
        if i > 0 {
            let prev = &record.series[i - 1];
            acc += (row.t - prev.t) * prev.snorm_integrand;
        }
        out.push(SnormPoint { t: row.t, acc });
    }
    out
}

/// Relative growth of the accumulator over the trailing 10% of the time window.
pub fn trailing_increment(points: &[SnormPoint]) -> f64 {
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return 0.0;
    };
    if last.acc == 0.0 {
        return 0.0;
    }
    let t0 = first.t + 0.9 * (last.t - first.t);
    let start = points
        .iter()
        .find(|p| p.t >= t0)
        .map_or(last.acc, |p| p.acc);
    (last.acc - start) / last.acc
}

/// `u(r) = Σ a_i r^k exp(−b_i (r − c_i)²)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomProfile {
    pub k: u32,
    pub terms: Vec<[f64; 3]>,
}

impl RandomProfile {
    /// `1..=max_terms` terms, `a ∈ [−1, 1]`, `b ∈ [0.5, 4]`, `c ∈ [0, 4]`.
    pub fn draw(rng: &mut impl Rng, k: u32, max_terms: usize) -> Self {
        let m = rng.gen_range(1..=max_terms.max(1));
        let terms = (0..m)
            .map(|_| {
                [
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(0.5..=4.0),
                    rng.gen_range(0.0..=4.0),
                ]
            })
            .collect();
        RandomProfile { k, terms }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let rk = r.powi(self.k as i32);
        self.terms
            .iter()
            .map(|[a, b, c]| a * rk * (-b * (r - c) * (r - c)).exp())
            .sum()
    }

    pub fn sample(&self, grid: &RadialGrid, scale: f64) -> FieldState {
        let u: Vec<f64> = grid.nodes().map(|r| scale * self.eval(r)).collect();
        FieldState::from_u(*grid, self.k, &u, &vec![0.0; grid.len()]).expect("finite profile")
    }
}

/// Terms per scanned profile. With one term 200 draws resolve the minimum of `F/E`
/// to about 1%; mixtures reach lower ratios but their minimum scatters by >10% between batches.
pub const SCAN_TERMS: usize = 1;

/// Grid used by the scan (profiles decay well inside it).
pub fn scan_grid() -> RadialGrid {
    RadialGrid::new(4000, 20.0).expect("valid grid")
}

/// Seeded generator for profile `index` of a batch.
pub fn profile_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScannedProfile {
    pub index: usize,
    pub profile: RandomProfile,
    pub scale: f64,
    pub energy: f64,
    pub f: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma7Result {
    pub c_emp: f64,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
    pub energy_fraction: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub min_f: f64,
    pub all_f_positive: bool,
    pub worst_low: ScannedProfile,
    pub worst_high: ScannedProfile,
}

/// Every profile is rescaled to energy `energy_fraction · (E(Q) + δ)`,
/// with `energy_fraction ∈ (0, 1)`.
pub fn lemma7_scan_at(
    geo: &TargetGeometry,
    delta: f64,
    n_profiles: usize,
    seed: u64,
    energy_fraction: f64,
) -> Result<Lemma7Result, DiagnosticsError> {
    let eq = geo.threshold_energy();
    if !(delta > 0.0 && delta <= 0.5 * eq) {
        return Err(DiagnosticsError::Parameters(format!(
            "δ = {delta} must lie in (0, E(Q)/2]"
        )));
    }
    if n_profiles < 100 {
        return Err(DiagnosticsError::Parameters(format!(
            "n_profiles = {n_profiles} < 100"
        )));
    }
    if !(energy_fraction > 0.0 && energy_fraction < 1.0) {
        return Err(DiagnosticsError::Parameters(format!(
            "energy fraction {energy_fraction} outside (0, 1)"
        )));
    }
    let grid = scan_grid();
    let target = energy_fraction * (eq + delta);
    let scanned: Vec<ScannedProfile> = (0..n_profiles)
        .into_par_iter()
        .map(|i| scan_one(geo, &grid, delta, target, seed, i))
        .collect::<Result<_, _>>()?;

    let low = scanned
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .expect("non-empty");
    let high = scanned
        .iter()
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .expect("non-empty");
    let min_f = scanned.iter().map(|p| p.f).fold(f64::INFINITY, f64::min);
    Ok(Lemma7Result {
        c_emp: low.ratio.min(1.0 / high.ratio),
        delta,
        n: n_profiles,
        seed,
        energy_fraction,
        min_ratio: low.ratio,
        max_ratio: high.ratio,
        min_f,
        all_f_positive: min_f > 0.0,
        worst_low: low.clone(),
        worst_high: high.clone(),
    })
}

/// Default scan: profiles at 99% of the admissible energy.
pub fn lemma7_scan(
    geo: &TargetGeometry,
    delta: f64,
    n_profiles: usize,
    seed: u64,
) -> Result<Lemma7Result, DiagnosticsError> {
    lemma7_scan_at(geo, delta, n_profiles, seed, 0.99)
}

fn scan_one(
    geo: &TargetGeometry,
    grid: &RadialGrid,
    delta: f64,
    target: f64,
    seed: u64,
    index: usize,
) -> Result<ScannedProfile, DiagnosticsError> {
    let profile = RandomProfile::draw(&mut profile_rng(seed, index), geo.k(), SCAN_TERMS);
    let energy_at = |s: f64| {
        let st = profile.sample(grid, s);
        let d = Densities::new(&st, geo);
        report_from(&d, grid, 0.0, grid.r_max())
    };
    let unit = energy_at(1.0).e_total;
    if !(unit > 0.0) {
        return Err(DiagnosticsError::Rejected {
            index,
            reason: "degenerate profile".into(),
        });
    }
    // E(s u) ≥ s² ∫u_r² r dr, so the bracket below always contains the target
    let mut hi = 1.0;
    while energy_at(hi).e_total < target {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(DiagnosticsError::Rejected {
                index,
                reason: "energy target unreachable".into(),
            });
        }
    }
    let scale = bisect(|s| energy_at(s).e_total - target, 0.0, hi, 1e-13 * hi);
    let state = profile.sample(grid, scale);
    if !crate::fields::membership_v(&state, geo, delta) {
        return Err(DiagnosticsError::Rejected {
            index,
            reason: "rescaled profile not in 𝒱(δ)".into(),
        });
    }
    debug_assert!(state
        .u_values()
        .last()
        .map_or(true, |u| u.abs() <= BOUNDARY_TOL));
    let rep = energy_at(scale);
    Ok(ScannedProfile {
        index,
        profile,
        scale,
        energy: rep.e_total,
        f: rep.f_functional,
        ratio: rep.f_functional / rep.e_total,
    })
}

impl Lemma7Result {
    /// Writes `lemma7.json`, `worst_low.csv` and `worst_high.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DiagnosticsError> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("lemma7.json"), json + "\n")?;
        let grid = scan_grid();
        for (name, p) in [
            ("worst_low.csv", &self.worst_low),
            ("worst_high.csv", &self.worst_high),
        ] {
            let mut out = io::BufWriter::new(fs::File::create(dir.join(name))?);
            writeln!(out, "r,u")?;
            for r in grid.nodes() {
                writeln!(
                    out,
                    "{},{}",
                    fmt_f64(r),
                    fmt_f64(p.scale * p.profile.eval(r))
                )?;
            }
            out.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{evolve, EvolutionConfig};
    use crate::fields::hl2_norm_sq;

    #[test]
    fn cutoff_shape_and_bounds() {
        assert_eq!(CutoffFunction::profile(0.5), 1.0);
        assert_eq!(CutoffFunction::profile(2.5), 0.0);
        assert!((CutoffFunction::profile(1.5) - 0.5).abs() < 1e-15);
        let mut d1 = 0.0f64;
        let mut d2 = 0.0f64;
        for i in 0..=100_000 {
            let x = 1.0 + i as f64 * 1e-5;
            let p = CutoffFunction::profile(x);
            assert!((0.0..=1.0).contains(&p));
            d1 = d1.max(CutoffFunction::profile_d1(x).abs());
            d2 = d2.max(CutoffFunction::profile_d2(x).abs());
        }
        assert!((d1 - CutoffFunction::SUP_DPHI).abs() < 1e-8);
        assert!((d2 - 10.0 / 3f64.sqrt()).abs() < 1e-6);
        assert!((CutoffFunction::SUP_D2PHI - 10.0 / 3f64.sqrt()).abs() < 1e-15);
        // derivative by finite differences
        for x in [1.1, 1.37, 1.5, 1.93] {
            let fd = (CutoffFunction::profile(x + 1e-6) - CutoffFunction::profile(x - 1e-6)) / 2e-6;
            assert!((fd - CutoffFunction::profile_d1(x)).abs() < 1e-7);
            let fd2 = (CutoffFunction::profile_d1(x + 1e-6) - CutoffFunction::profile_d1(x - 1e-6))
                / 2e-6;
            assert!((fd2 - CutoffFunction::profile_d2(x)).abs() < 1e-6);
        }
    }

    fn bump(grid: RadialGrid, k: u32, support: f64) -> FieldState {
        let u: Vec<f64> = grid
            .nodes()
            .map(|r| {
                if r < support {
                    (r / support).powi(k as i32) * (1.0 - r / support).powi(4)
                } else {
                    0.0
                }
            })
            .collect();
        FieldState::from_u(grid, k, &u, &vec![0.0; grid.len()]).unwrap()
    }

    #[test]
    fn tail_examples() {
        let grid = RadialGrid::new(1000, 10.0).unwrap();
        let z = FieldState::zero(grid, 1);
        assert_eq!(tail(&z, 1.0).unwrap(), 0.0);
        let s = bump(grid, 1, 3.0);
        assert!(tail(&s, 3.0).unwrap() <= 1e-12);
        assert!((tail(&s, 0.0).unwrap() - hl2_norm_sq(&s)).abs() <= 1e-12 * hl2_norm_sq(&s));
        assert!(tail(&s, 10.0).is_err());
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let t = tail(&s, i as f64 * 0.1).unwrap();
            assert!(t <= prev);
            prev = t;
        }
    }

    #[test]
    fn virial_static_and_zero() {
        let grid = RadialGrid::new(1000, 10.0).unwrap();
        let geo = TargetGeometry::sphere();
        let s = bump(grid, 1, 3.0);
        let v = virial_sample(&s, &geo, 4.0);
        assert_eq!((v.v1, v.v2, v.main1), (0.0, 0.0, 0.0));
        assert!(v.main2 < 0.0 && v.tail.is_finite());
        let z = virial_sample(&FieldState::zero(grid, 1), &geo, 4.0);
        assert_eq!(
            (z.v1, z.v2, z.main1, z.main2, z.tail),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn virial_identities_inside_light_cone() {
        let grid = RadialGrid::new(2048, 32.0).unwrap();
        let geo = TargetGeometry::sphere();
        let s0 = bump(grid, 1, 4.0);
        let e = crate::fields::total_energy(&s0, &geo);
        let mut cfg = EvolutionConfig {
            t_max: 4.0,
            ..Default::default()
        };
        cfg.diagnostics.virial_radius = Some(16.0);
        let rec = evolve(&s0, &geo, &cfg).unwrap();
        let res = virial_residuals(&rec);
        assert!(!res.is_empty());
        for p in &res {
            assert!(p.r1.abs() <= 5e-3 * e && p.r2.abs() <= 5e-3 * e, "{p:?}");
            assert!(p.bound < 1e-20);
        }
    }

    #[test]
    fn snorm_accumulation() {
        let grid = RadialGrid::new(64, 16.0).unwrap();
        let geo = TargetGeometry::sphere();
        let cfg = EvolutionConfig {
            t_max: 1.0,
            ..Default::default()
        };
        let rec = evolve(&FieldState::zero(grid, 1), &geo, &cfg).unwrap();
        let acc = snorm_accumulate(&rec);
        assert!(acc.iter().all(|p| p.acc == 0.0));
        assert_eq!(trailing_increment(&acc), 0.0);

        let pts: Vec<SnormPoint> = (0..=10)
            .map(|i| SnormPoint {
                t: i as f64,
                acc: 2.0 * i as f64,
            })
            .collect();
        assert!((trailing_increment(&pts) - 0.1).abs() < 1e-15);
        assert_eq!(snorm_exponent(1), 5.0);
        assert_eq!(snorm_exponent(2), 3.5);
    }

    #[test]
    fn profile_rng_is_reproducible() {
        let a = RandomProfile::draw(&mut profile_rng(7, 3), 1, 3);
        let b = RandomProfile::draw(&mut profile_rng(7, 3), 1, 3);
        let c = RandomProfile::draw(&mut profile_rng(7, 4), 1, 3);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scan_small_energy_ratio_near_one() {
        for geo in [
            TargetGeometry::sphere(),
            TargetGeometry::yang_mills_shifted(),
        ] {
            let delta = 0.1 * geo.threshold_energy();
            let res = lemma7_scan_at(&geo, delta, 100, 11, 1e-6).unwrap();
            assert!(res.all_f_positive);
            assert!(
                (res.min_ratio - 1.0).abs() < 1e-3 && (res.max_ratio - 1.0).abs() < 1e-3,
                "{} {}",
                res.min_ratio,
                res.max_ratio
            );
        }
    }

    #[test]
    fn scan_rejects_bad_parameters() {
        let geo = TargetGeometry::sphere();
        assert!(lemma7_scan(&geo, 3.0, 200, 1).is_err());
        assert!(lemma7_scan(&geo, 0.4, 50, 1).is_err());
    }

    #[test]
    fn q_is_outside_v() {
        let geo = TargetGeometry::sphere();
        let grid = RadialGrid::new(4000, 20.0).unwrap();
        let u: Vec<f64> = grid.nodes().map(|r| 2.0 * r.atan()).collect();
        let q = FieldState::from_u(grid, 1, &u, &vec![0.0; grid.len()]).unwrap();
        assert!(!crate::fields::membership_v(&q, &geo, 0.4));
    }
}
