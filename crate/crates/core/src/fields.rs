//! Uniform radial grid, field state in the regularized variable `v = u / r^k`,
//! and the static functionals of a state: energies, the `H × L²` norm, `F`,
//! the pointwise `G`-bound and the sup bound.

use std::io::{self, Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::fmt_f64;
use crate::geometry::TargetGeometry;
use crate::quad::cumulative_trapezoid;

/// Discrete stand-in for `u(∞) = 0`: `|u(r_max)| ≤ BOUNDARY_TOL · max(1, sup|u|)`.
pub const BOUNDARY_TOL: f64 = 1e-6;
/// Nodes kept by the pair scan of the pointwise bound.
pub const PAIR_SCAN_NODES: usize = 512;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("array length {got} does not match grid ({want} nodes)")]
    Length { got: usize, want: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("interval [{a}, {b}] not inside [0, {r_max}]")]
    Domain { a: f64, b: f64, r_max: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialGrid {
    n_cells: usize,
    h: f64,
}

impl RadialGrid {
    pub fn new(n_cells: usize, r_max: f64) -> Result<Self, FieldError> {
        if n_cells < 16 {
            return Err(FieldError::Grid(format!("n_cells = {n_cells} < 16")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(FieldError::Grid(format!(
                "r_max = {r_max} must be positive"
            )));
        }
        Ok(RadialGrid {
            n_cells,
            h: r_max / n_cells as f64,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn len(&self) -> usize {
        self.n_cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn r_max(&self) -> f64 {
        self.n_cells as f64 * self.h
    }

    #[inline]
    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |j| self.r(j))
    }
}

/// Radial field `(v, v_t)` at time `t`, with `u = r^k v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub grid: RadialGrid,
    pub t: f64,
    pub k: u32,
    pub v: Vec<f64>,
    pub v_t: Vec<f64>,
}

impl FieldState {
    pub fn new(
        grid: RadialGrid,
        k: u32,
        t: f64,
        v: Vec<f64>,
        v_t: Vec<f64>,
    ) -> Result<Self, FieldError> {
        for arr in [&v, &v_t] {
            if arr.len() != grid.len() {
                return Err(FieldError::Length {
                    got: arr.len(),
                    want: grid.len(),
                });
            }
            if let Some(j) = arr.iter().position(|x| !x.is_finite()) {
                return Err(FieldError::NonFinite(j));
            }
        }
        Ok(FieldState { grid, t, k, v, v_t })
    }

    pub fn zero(grid: RadialGrid, k: u32) -> Self {
        FieldState {
            grid,
            t: 0.0,
            k,
            v: vec![0.0; grid.len()],
            v_t: vec![0.0; grid.len()],
        }
    }

    /// Converts `u`-samples to `v`-form. The origin value uses the even extrapolation
    /// `v(0) = (4 v(h) − v(2h)) / 3`.
    pub fn from_u(grid: RadialGrid, k: u32, u: &[f64], u_t: &[f64]) -> Result<Self, FieldError> {
        let to_v = |w: &[f64]| -> Result<Vec<f64>, FieldError> {
            if w.len() != grid.len() {
                return Err(FieldError::Length {
                    got: w.len(),
                    want: grid.len(),
                });
            }
            let mut v: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    if j == 0 {
                        0.0
                    } else {
                        x / grid.r(j).powi(k as i32)
                    }
                })
                .collect();
            v[0] = (4.0 * v[1] - v[2]) / 3.0;
            Ok(v)
        };
        FieldState::new(grid, k, 0.0, to_v(u)?, to_v(u_t)?)
    }

    /// `u_j = r_j^k v_j`.
    pub fn u_values(&self) -> Vec<f64> {
        u_from_v(&self.grid, self.k, &self.v)
    }

    pub fn u_t_values(&self) -> Vec<f64> {
        u_from_v(&self.grid, self.k, &self.v_t)
    }

    /// Centered `v_r`; zero at the origin (evenness), one-sided second order at `r_max`.
    pub fn v_r(&self) -> Vec<f64> {
        derivative_even(&self.v, self.grid.h())
    }

    /// `u_r = r^k v_r + k r^{k−1} v`.
    pub fn u_r_values(&self) -> Vec<f64> {
        let vr = self.v_r();
        let k = self.k as i32;
        (0..self.grid.len())
            .map(|j| {
                let r = self.grid.r(j);
                r.powi(k) * vr[j] + k as f64 * r.powi(k - 1) * self.v[j]
            })
            .collect()
    }

    /// Componentwise difference of two states on the same grid.
    pub fn difference(&self, other: &FieldState) -> FieldState {
        assert_eq!(self.grid, other.grid, "states live on different grids");
        FieldState {
            grid: self.grid,
            t: self.t,
            k: self.k,
            v: self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect(),
            v_t: self
                .v_t
                .iter()
                .zip(&other.v_t)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn sup_u(&self) -> f64 {
        self.u_values().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sup_v_r(&self) -> f64 {
        self.v_r().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Discrete version of the endpoint condition `u(∞) = 0`.
    pub fn boundary_is_trivial(&self) -> bool {
        let u = self.u_values();
        let sup = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        u[u.len() - 1].abs() <= BOUNDARY_TOL * sup.max(1.0)
    }

    /// CSV with columns `r,v,v_t,u,u_t`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let u = self.u_values();
        let ut = self.u_t_values();
        writeln!(w, "r,v,v_t,u,u_t")?;
        for j in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(self.grid.r(j)),
                fmt_f64(self.v[j]),
                fmt_f64(self.v_t[j]),
                fmt_f64(u[j]),
                fmt_f64(ut[j])
            )?;
        }
        Ok(())
    }

    /// Binary checkpoint: magic, version, then little-endian fields.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<(), FieldError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        w.write_all(&(self.grid.n_cells as u64).to_le_bytes())?;
        w.write_all(&self.grid.h.to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        for x in self.v.iter().chain(&self.v_t) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self, FieldError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(FieldError::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(FieldError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        r.read_exact(&mut b4)?;
        let k = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let n_cells = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let h = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let t = f64::from_le_bytes(b8);
        if n_cells < 16 || !(h > 0.0) {
            return Err(FieldError::Checkpoint("corrupt grid header".into()));
        }
        let grid = RadialGrid { n_cells, h };
        let mut read_array = || -> Result<Vec<f64>, FieldError> {
            (0..grid.len())
                .map(|_| {
                    r.read_exact(&mut b8)?;
                    Ok(f64::from_le_bytes(b8))
                })
                .collect()
        };
        let v = read_array()?;
        let v_t = read_array()?;
        FieldState::new(grid, k, t, v, v_t)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CWCKPT\0\0";
const CHECKPOINT_VERSION: u32 = 1;

fn u_from_v(grid: &RadialGrid, k: u32, v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(j, &x)| grid.r(j).powi(k as i32) * x)
        .collect()
}

pub(crate) fn derivative_even(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len() - 1;
    let mut d = vec![0.0; v.len()];
    for j in 1..n {
        d[j] = (v[j + 1] - v[j - 1]) / (2.0 * h);
    }
    d[n] = (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h);
    d
}

/// Fourth-order centered derivative of an even function sampled from the origin.
pub(crate) fn derivative_even_4(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len() - 1;
    let at = |j: isize| v[j.unsigned_abs()];
    let mut d = vec![0.0; v.len()];
    for j in 1..n.saturating_sub(1) {
        let j = j as isize;
        d[j as usize] = (at(j - 2) - 8.0 * at(j - 1) + 8.0 * at(j + 1) - at(j + 2)) / (12.0 * h);
    }
    for j in n.saturating_sub(1)..=n {
        d[j] = if j == n {
            (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h)
        } else {
            (v[j + 1] - v[j - 1]) / (2.0 * h)
        };
    }
    d
}

/// Running integral of samples of an odd function from the origin, trapezoid
/// with the `−h²/12 (f′_j − f′_0)` end correction.
pub(crate) fn cumulative_end_corrected_odd(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let trap = cumulative_trapezoid(f, h);
    let df = |j: usize| -> f64 {
        if j == 0 {
            f[1] / h
        } else if j == n {
            (3.0 * f[n] - 4.0 * f[n - 1] + f[n - 2]) / (2.0 * h)
        } else {
            (f[j + 1] - f[j - 1]) / (2.0 * h)
        }
    };
    let d0 = df(0);
    (0..=n)
        .map(|j| trap[j] - h * h / 12.0 * (df(j) - d0))
        .collect()
}

/// Pointwise densities (already multiplied by the measure `r`).
#[derive(Debug, Clone)]
pub struct Densities {
    pub u: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_t: Vec<f64>,
    /// `u_t² r`
    pub kinetic: Vec<f64>,
    /// `(u_r² + g²(u)/r²) r`
    pub potential: Vec<f64>,
    /// `(u_r² + d(u)/r²) r`
    pub virial: Vec<f64>,
    /// `(u_t² + u_r² + u²/r²) r`
    pub norm: Vec<f64>,
}

impl Densities {
    pub fn new(state: &FieldState, geo: &TargetGeometry) -> Self {
        let u = state.u_values();
        let u_t = state.u_t_values();
        let u_r = state.u_r_values();
        let n = u.len();
        let mut kinetic = vec![0.0; n];
        let mut potential = vec![0.0; n];
        let mut virial = vec![0.0; n];
        let mut norm = vec![0.0; n];
        for j in 1..n {
            let r = state.grid.r(j);
            let g = geo.g(u[j]);
            let ur2 = u_r[j] * u_r[j];
            kinetic[j] = u_t[j] * u_t[j] * r;
            potential[j] = ur2 * r + g * g / r;
            virial[j] = ur2 * r + geo.d(u[j]) / r;
            norm[j] = (u_t[j] * u_t[j] + ur2) * r + u[j] * u[j] / r;
        }
        Densities {
            u,
            u_r,
            u_t,
            kinetic,
            potential,
            virial,
            norm,
        }
    }
}

/// `∫_a^b` of nodal samples, exact for the piecewise-linear interpolant.
pub fn integrate_range(values: &[f64], grid: &RadialGrid, a: f64, b: f64) -> f64 {
    let cum = cumulative_trapezoid(values, grid.h());
    integrate_range_cum(values, &cum, grid, a, b)
}

fn integrate_range_cum(values: &[f64], cum: &[f64], grid: &RadialGrid, a: f64, b: f64) -> f64 {
    let at = |x: f64| -> f64 {
        let h = grid.h();
        let n = grid.n_cells();
        let j = ((x / h).floor() as usize).min(n);
        if j == n {
            return cum[n];
        }
        let dx = x - grid.r(j);
        cum[j] + dx * values[j] + 0.5 * dx * dx * (values[j + 1] - values[j]) / h
    };
    at(b) - at(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub a: f64,
    pub b: f64,
    pub e_total: f64,
    pub e_kinetic: f64,
    pub e_potential: f64,
    pub f_functional: f64,
    pub h_norm_sq: f64,
    pub sup_u: f64,
}

fn check_interval(grid: &RadialGrid, a: f64, b: f64) -> Result<(), FieldError> {
    let r_max = grid.r_max();
    if !(0.0 <= a && a < b && b <= r_max * (1.0 + 1e-14)) {
        return Err(FieldError::Domain { a, b, r_max });
    }
    Ok(())
}

/// Energy-type functionals of the state restricted to `[a, b]`.
pub fn energy(
    state: &FieldState,
    geo: &TargetGeometry,
    a: f64,
    b: f64,
) -> Result<EnergyReport, FieldError> {
    check_interval(&state.grid, a, b)?;
    let b = b.min(state.grid.r_max());
    let d = Densities::new(state, geo);
    Ok(report_from(&d, &state.grid, a, b))
}

pub(crate) fn report_from(d: &Densities, grid: &RadialGrid, a: f64, b: f64) -> EnergyReport {
    let kin = integrate_range(&d.kinetic, grid, a, b);
    let pot = integrate_range(&d.potential, grid, a, b);
    let lo = (a / grid.h()).ceil() as usize;
    let hi = ((b / grid.h()).floor() as usize).min(grid.n_cells());
    let sup_u = d.u[lo..=hi.max(lo)]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    EnergyReport {
        a,
        b,
        e_total: kin + pot,
        e_kinetic: kin,
        e_potential: pot,
        f_functional: integrate_range(&d.virial, grid, a, b),
        h_norm_sq: integrate_range(&d.norm, grid, a, b),
        sup_u,
    }
}

/// Full-range energy `E(u, u_t)`.
pub fn total_energy(state: &FieldState, geo: &TargetGeometry) -> f64 {
    energy(state, geo, 0.0, state.grid.r_max())
        .map(|r| r.e_total)
        .unwrap_or(f64::NAN)
}

/// `F(u) = ∫(u_r² + d(u)/r²) r dr`.
pub fn f_functional(state: &FieldState, geo: &TargetGeometry) -> f64 {
    let d = Densities::new(state, geo);
    crate::quad::trapezoid(&d.virial, state.grid.h())
}

/// `‖(u, u_t)‖²_{H×L²} = ∫(u_t² + u_r² + u²/r²) r dr`.
pub fn hl2_norm_sq(state: &FieldState) -> f64 {
    crate::quad::trapezoid(&norm_density(state), state.grid.h())
}

/// `‖(u, u_t)‖²_{H×L²}` restricted to `[a, b]`.
pub fn hl2_norm_sq_range(state: &FieldState, a: f64, b: f64) -> Result<f64, FieldError> {
    check_interval(&state.grid, a, b)?;
    Ok(integrate_range(
        &norm_density(state),
        &state.grid,
        a,
        b.min(state.grid.r_max()),
    ))
}

/// `‖u‖²_H` restricted to `[a, b]` (no velocity term).
pub fn h_norm_sq_range(state: &FieldState, a: f64, b: f64) -> Result<f64, FieldError> {
    check_interval(&state.grid, a, b)?;
    let u = state.u_values();
    let u_r = state.u_r_values();
    let dens: Vec<f64> = (0..u.len())
        .map(|j| {
            let r = state.grid.r(j);
            if j == 0 {
                0.0
            } else {
                u_r[j] * u_r[j] * r + u[j] * u[j] / r
            }
        })
        .collect();
    Ok(integrate_range(
        &dens,
        &state.grid,
        a,
        b.min(state.grid.r_max()),
    ))
}

pub(crate) fn norm_density(state: &FieldState) -> Vec<f64> {
    let u = state.u_values();
    let u_t = state.u_t_values();
    let u_r = state.u_r_values();
    (0..u.len())
        .map(|j| {
            let r = state.grid.r(j);
            if j == 0 {
                0.0
            } else {
                (u_t[j] * u_t[j] + u_r[j] * u_r[j]) * r + u[j] * u[j] / r
            }
        })
        .collect()
}

/// Energy of the linear flow, `∫(u_t² + u_r² + k²u²/r²) r dr`; conserved by `W(t)`.
pub fn linear_energy(state: &FieldState) -> f64 {
    let u = state.u_values();
    let u_t = state.u_t_values();
    let u_r = state.u_r_values();
    let k2 = (state.k * state.k) as f64;
    let dens: Vec<f64> = (0..u.len())
        .map(|j| {
            let r = state.grid.r(j);
            if j == 0 {
                0.0
            } else {
                (u_t[j] * u_t[j] + u_r[j] * u_r[j]) * r + k2 * u[j] * u[j] / r
            }
        })
        .collect();
    crate::quad::trapezoid(&dens, state.grid.h())
}

/// Ingredients of the two-point inequality `|G(u(r)) − G(u(r'))| ≤ ½ E_r^{r'}(u)`
/// on a decimated set of nodes.
#[derive(Debug, Clone)]
pub struct BoundTable {
    pub r: Vec<f64>,
    /// `G(u(r_i))`
    pub integral: Vec<f64>,
    /// `E_0^{r_i}(u)` (static energy)
    pub cumulative_energy: Vec<f64>,
}

impl BoundTable {
    pub fn new(state: &FieldState, geo: &TargetGeometry) -> Self {
        // near-equality holds at the origin for any smooth map, so both sides
        // are computed to fourth order
        let h = state.grid.h();
        let u = state.u_values();
        let vr = derivative_even_4(&state.v, h);
        let k = state.k as i32;
        let potential: Vec<f64> = (0..u.len())
            .map(|j| {
                let r = state.grid.r(j);
                if j == 0 {
                    return 0.0;
                }
                let ur = r.powi(k) * vr[j] + k as f64 * r.powi(k - 1) * state.v[j];
                let g = geo.g(u[j]);
                ur * ur * r + g * g / r
            })
            .collect();
        let cum = cumulative_end_corrected_odd(&potential, h);
        let n = state.grid.len();
        let stride = n.div_ceil(PAIR_SCAN_NODES - 1).max(1);
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        BoundTable {
            r: idx.iter().map(|&j| state.grid.r(j)).collect(),
            integral: idx.iter().map(|&j| geo.integral(u[j])).collect(),
            cumulative_energy: idx.iter().map(|&j| cum[j]).collect(),
        }
    }

    /// `(|G(u_i) − G(u_j)|, ½ E_{r_i}^{r_j})`.
    pub fn sides(&self, i: usize, j: usize) -> (f64, f64) {
        let lhs = (self.integral[i] - self.integral[j]).abs();
        let rhs = 0.5 * (self.cumulative_energy[i] - self.cumulative_energy[j]).abs();
        (lhs, rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundViolation {
    /// `max over pairs of |G(u_i) − G(u_j)| − ½ E_{r_i}^{r_j}`; ≤ quadrature tolerance when the bound holds.
    pub violation: f64,
    pub r_i: f64,
    pub r_j: f64,
}

pub fn check_pointwise_bound(state: &FieldState, geo: &TargetGeometry) -> BoundViolation {
    let table = BoundTable::new(state, geo);
    let mut worst = BoundViolation {
        violation: f64::NEG_INFINITY,
        r_i: 0.0,
        r_j: 0.0,
    };
    let m = table.r.len();
    for i in 0..m {
        for j in i + 1..m {
            let (lhs, rhs) = table.sides(i, j);
            let gap = lhs - rhs;
            if gap > worst.violation {
                worst = BoundViolation {
                    violation: gap,
                    r_i: table.r[i],
                    r_j: table.r[j],
                };
            }
        }
    }
    worst
}

/// `(sup|u|, K(E))` with `K(E) = G⁻¹(E/2)`.
pub fn sup_bound_check(state: &FieldState, geo: &TargetGeometry) -> Result<(f64, f64), FieldError> {
    let u = state.u_values();
    let last = u[u.len() - 1].abs();
    if last > BOUNDARY_TOL {
        return Err(FieldError::Precondition(format!(
            "|u(r_max)| = {last:e} is not zero"
        )));
    }
    let e = total_energy(state, geo);
    if e >= 2.0 * geo.threshold_energy() {
        return Err(FieldError::Precondition(format!(
            "E = {e} is not below 2E(Q)"
        )));
    }
    Ok((state.sup_u(), geo.sup_bound(e)))
}

/// Membership in `𝒱(δ)`: energy below `E(Q) + δ` and trivial endpoints.
pub fn membership_v(state: &FieldState, geo: &TargetGeometry, delta: f64) -> bool {
    total_energy(state, geo) < geo.threshold_energy() + delta && state.boundary_is_trivial()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma4Check {
    /// `∫ v_r² r^{2k+1} dr`
    pub a: f64,
    /// `‖u‖²_H`
    pub b: f64,
    /// `(k²+1) B − A`
    pub upper_margin: f64,
    /// `(2 + 1/k²) A − B`
    pub lower_margin: f64,
    /// The printed statement `A/3 ≤ B ≤ (k²+1) A`, recorded only.
    pub stated_lower_holds: bool,
    pub stated_upper_holds: bool,
}

pub fn lemma4_check(state: &FieldState) -> Lemma4Check {
    let k = state.k as f64;
    let vr = state.v_r();
    let kk = 2 * state.k as i32 + 1;
    let a_dens: Vec<f64> = (0..vr.len())
        .map(|j| vr[j] * vr[j] * state.grid.r(j).powi(kk))
        .collect();
    let a = crate::quad::trapezoid(&a_dens, state.grid.h());
    let b = h_norm_sq_range(state, 0.0, state.grid.r_max()).unwrap_or(f64::NAN);
    Lemma4Check {
        a,
        b,
        upper_margin: (k * k + 1.0) * b - a,
        lower_margin: (2.0 + 1.0 / (k * k)) * a - b,
        stated_lower_holds: a / 3.0 <= b,
        stated_upper_holds: b <= (k * k + 1.0) * a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_map::{sample_q_scaled_v, solve_q, DEFAULT_DS, DEFAULT_S_RANGE};

    fn from_u_fn(grid: RadialGrid, k: u32, u: impl Fn(f64) -> f64) -> FieldState {
        let vals: Vec<f64> = grid.nodes().map(&u).collect();
        FieldState::from_u(grid, k, &vals, &vec![0.0; grid.len()]).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(RadialGrid::new(8, 1.0).is_err());
        assert!(RadialGrid::new(16, 0.0).is_err());
        let g = RadialGrid::new(100, 2.0).unwrap();
        assert_eq!(g.len(), 101);
        assert!((g.r(100) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn u_values_examples() {
        let grid = RadialGrid::new(20, 20.0).unwrap();
        let s = FieldState::new(grid, 1, 0.0, vec![1.0; 21], vec![0.0; 21]).unwrap();
        assert_eq!(s.u_values(), (0..=20).map(|j| j as f64).collect::<Vec<_>>());
        let z = FieldState::zero(grid, 2);
        assert!(z.u_values().iter().all(|&x| x == 0.0));

        let v: Vec<f64> = grid
            .nodes()
            .map(|r| if r == 0.0 { 2.0 } else { 2.0 * r.atan() / r })
            .collect();
        let s = FieldState::new(grid, 1, 0.0, v, vec![0.0; 21]).unwrap();
        for (r, u) in grid.nodes().zip(s.u_values()) {
            assert!((u - 2.0 * r.atan()).abs() < 1e-14);
        }
    }

    #[test]
    fn new_rejects_bad_arrays() {
        let grid = RadialGrid::new(16, 1.0).unwrap();
        assert!(matches!(
            FieldState::new(grid, 1, 0.0, vec![0.0; 3], vec![0.0; 17]),
            Err(FieldError::Length { .. })
        ));
        let mut v = vec![0.0; 17];
        v[4] = f64::NAN;
        assert!(matches!(
            FieldState::new(grid, 1, 0.0, v, vec![0.0; 17]),
            Err(FieldError::NonFinite(4))
        ));
    }

    #[test]
    fn zero_state_functionals() {
        let grid = RadialGrid::new(64, 4.0).unwrap();
        let geo = TargetGeometry::sphere();
        let z = FieldState::zero(grid, 1);
        let rep = energy(&z, &geo, 0.0, 4.0).unwrap();
        assert_eq!(rep.e_total, 0.0);
        assert_eq!(rep.f_functional, 0.0);
        assert_eq!(rep.h_norm_sq, 0.0);
        assert_eq!(f_functional(&z, &geo), 0.0);
        assert!(check_pointwise_bound(&z, &geo).violation <= 0.0);
        assert!(membership_v(&z, &geo, 0.4));
        let l4 = lemma4_check(&z);
        assert_eq!((l4.a, l4.b), (0.0, 0.0));
    }

    #[test]
    fn energy_domain_errors() {
        let grid = RadialGrid::new(64, 4.0).unwrap();
        let z = FieldState::zero(grid, 1);
        let geo = TargetGeometry::sphere();
        assert!(energy(&z, &geo, -1.0, 2.0).is_err());
        assert!(energy(&z, &geo, 0.0, 5.0).is_err());
        assert!(energy(&z, &geo, 2.0, 1.0).is_err());
    }

    #[test]
    fn energy_of_sampled_q() {
        let grid = RadialGrid::new(1_000_000, 1000.0).unwrap();
        for (geo, expected) in [
            (TargetGeometry::sphere(), 4.0),
            (TargetGeometry::yang_mills_shifted(), 8.0 / 3.0),
        ] {
            let p = solve_q(&geo, DEFAULT_DS, DEFAULT_S_RANGE).unwrap();
            let v = sample_q_scaled_v(&p, 1.0, &grid);
            let s = FieldState::new(grid, geo.k(), 0.0, v, vec![0.0; grid.len()]).unwrap();
            let e = total_energy(&s, &geo);
            assert!((e - expected).abs() <= 2e-3, "{}: {e}", geo.tag());
        }
    }

    #[test]
    fn partial_energies_add_up() {
        let grid = RadialGrid::new(2000, 10.0).unwrap();
        let geo = TargetGeometry::sphere();
        let s = from_u_fn(grid, 1, |r| 0.8 * r * (-r * r).exp());
        let full = energy(&s, &geo, 0.0, 10.0).unwrap().e_total;
        let left = energy(&s, &geo, 0.0, 1.2345).unwrap().e_total;
        let right = energy(&s, &geo, 1.2345, 10.0).unwrap().e_total;
        assert!((left + right - full).abs() < 1e-12 * full);
    }

    #[test]
    fn energy_converges_at_second_order() {
        let geo = TargetGeometry::sphere();
        let bump = |r: f64| 0.6 * r * (-(r - 1.5) * (r - 1.5)).exp();
        let e = |n| total_energy(&from_u_fn(RadialGrid::new(n, 12.0).unwrap(), 1, bump), &geo);
        let (e1, e2, e4) = (e(400), e(800), e(1600));
        let ratio = (e1 - e2) / (e2 - e4);
        assert!((3.0..5.0).contains(&ratio), "Richardson ratio {ratio}");
    }

    #[test]
    fn small_bump_f_over_e_near_one() {
        let grid = RadialGrid::new(4000, 10.0).unwrap();
        let geo = TargetGeometry::sphere();
        let s = from_u_fn(grid, 1, |r| 1e-3 * r * (-r * r).exp());
        let ratio = f_functional(&s, &geo) / total_energy(&s, &geo);
        assert!((0.9..=1.0).contains(&ratio), "{ratio}");
        assert!(membership_v(&s, &geo, 0.4));
    }

    #[test]
    fn q_is_not_in_v() {
        let grid = RadialGrid::new(20000, 200.0).unwrap();
        let geo = TargetGeometry::sphere();
        let p = solve_q(&geo, DEFAULT_DS, DEFAULT_S_RANGE).unwrap();
        let s = FieldState::new(
            grid,
            1,
            0.0,
            sample_q_scaled_v(&p, 1.0, &grid),
            vec![0.0; grid.len()],
        )
        .unwrap();
        assert!(total_energy(&s, &geo) < geo.threshold_energy() + 0.4);
        assert!(!membership_v(&s, &geo, 0.4));
        assert!(sup_bound_check(&s, &geo).is_err());
    }

    #[test]
    fn sup_bound_holds_for_bump() {
        let grid = RadialGrid::new(4000, 20.0).unwrap();
        let geo = TargetGeometry::sphere();
        let s = from_u_fn(grid, 1, |r| 1.2 * r * (-(r - 1.0) * (r - 1.0)).exp());
        let (sup, k) = sup_bound_check(&s, &geo).unwrap();
        assert!(sup <= k + 1e-6, "sup {sup} vs K {k}");
    }

    #[test]
    fn pointwise_bound_equality_on_q() {
        let geo = TargetGeometry::sphere();
        let p = solve_q(&geo, DEFAULT_DS, DEFAULT_S_RANGE).unwrap();
        let grid = RadialGrid::new(200_000, 200.0).unwrap();
        let s = FieldState::new(
            grid,
            1,
            0.0,
            sample_q_scaled_v(&p, 1.0, &grid),
            vec![0.0; grid.len()],
        )
        .unwrap();
        let table = BoundTable::new(&s, &geo);
        let mut worst = 0.0f64;
        for i in 0..table.r.len() {
            for j in i + 1..table.r.len() {
                let (lhs, rhs) = table.sides(i, j);
                if rhs > 1e-3 {
                    worst = worst.max((lhs - rhs).abs() / rhs);
                }
            }
        }
        assert!(worst <= 1e-5, "relative defect {worst:e}");
        assert!(check_pointwise_bound(&s, &geo).violation <= 1e-6);
    }

    #[test]
    fn fourth_order_helpers() {
        let h = 0.01;
        let v: Vec<f64> = (0..=400).map(|j| (j as f64 * h).cos()).collect();
        let d = derivative_even_4(&v, h);
        let err = (0..398)
            .map(|j| (d[j] + (j as f64 * h).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err:e}");
        let f: Vec<f64> = (0..=400).map(|j| (j as f64 * h).sin()).collect();
        let c = cumulative_end_corrected_odd(&f, h);
        let err = (0..=400)
            .map(|j| (c[j] - (1.0 - (j as f64 * h).cos())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err:e}");
    }

    #[test]
    fn lemma4_examples() {
        let grid = RadialGrid::new(4000, 10.0).unwrap();
        let s1 = from_u_fn(grid, 1, |r| r * (-r * r).exp());
        let c1 = lemma4_check(&s1);
        assert!(c1.upper_margin > 0.0 && c1.lower_margin > 0.0, "{c1:?}");
        let s2 = from_u_fn(grid, 2, |r| r * r * (-r * r).exp());
        let c2 = lemma4_check(&s2);
        assert!(c2.upper_margin > 0.0 && c2.lower_margin > 0.0, "{c2:?}");
    }

    #[test]
    fn norm_range_and_tail_consistency() {
        let grid = RadialGrid::new(1000, 10.0).unwrap();
        let s = from_u_fn(grid, 2, |r| r * r * (-r * r).exp());
        let full = hl2_norm_sq(&s);
        let ranged = hl2_norm_sq_range(&s, 0.0, 10.0).unwrap();
        assert!((full - ranged).abs() < 1e-12 * full);
        // k = 2: linear energy weights u²/r² by 4, the H-norm by 1
        assert!(linear_energy(&s) > full);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let grid = RadialGrid::new(32, 3.0).unwrap();
        let mut s = from_u_fn(grid, 2, |r| (r * 1.37).sin() * r * r);
        s.t = 1.25;
        s.v_t[5] = -0.3;
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        let back = FieldState::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        buf[0] = b'X';
        assert!(FieldState::read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn snapshot_csv_columns() {
        let grid = RadialGrid::new(16, 1.0).unwrap();
        let s = FieldState::zero(grid, 1);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,v,v_t,u,u_t\n0.0,0.0,0.0,0.0,0.0\n"));
        assert_eq!(text.lines().count(), 18);
    }
}
