//! Time integration of the conjugated equation
//!
//! ```text
//! v_tt = v_rr + (2k+1)/r v_r − h(r^k v) v^{1+2/k}
//! ```
//!
//! with an explicit leapfrog in kick-drift-kick form, and of the free flow
//! (same stencil, no source). Runs are recorded as a time series plus sparse
//! field snapshots and classified as dispersed, stationary or blow-up suspected.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    snorm_accumulate, snorm_integral, tail, trailing_increment, virial_sample, DiagnosticsConfig,
    VirialSample,
};
use crate::fields::{hl2_norm_sq, report_from, Densities, FieldState, RadialGrid};
use crate::fmt_f64;
use crate::geometry::TargetGeometry;

/// Values beyond this magnitude abort the run.
pub const INSTABILITY_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(
        "numerical instability at t = {t}: |v| exceeded {INSTABILITY_LIMIT:e} or became non-finite"
    )]
    Instability { t: f64 },
    #[error("invalid time step {dt} for h = {h} (need 0 < dt ≤ h/2)")]
    InvalidStep { dt: f64, h: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no snapshot at t = {0}")]
    MissingSnapshot(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `v(r_max) = 0`; the light cone must stay inside the grid.
    DirichletZero,
    /// `v(r_max)` held at its initial value (for harmonic-map data).
    DirichletFrozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt_factor: f64,
    pub t_max: f64,
    /// Steps between recorded series rows.
    pub snapshot_stride: usize,
    /// Steps between stored field snapshots; 0 keeps only the initial and final fields.
    pub field_snapshot_stride: usize,
    pub blowup_gradient_threshold: f64,
    /// Concentration radius in units of the grid spacing.
    pub blowup_concentration_cells: f64,
    pub blowup_concentration_fraction: f64,
    pub boundary: Boundary,
    #[serde(skip)]
    pub diagnostics: DiagnosticsConfig,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt_factor: 0.25,
            t_max: 10.0,
            snapshot_stride: 8,
            field_snapshot_stride: 0,
            blowup_gradient_threshold: 1e6,
            blowup_concentration_cells: 4.0,
            blowup_concentration_fraction: 0.5,
            boundary: Boundary::DirichletZero,
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        if !(self.dt_factor > 0.0 && self.dt_factor <= 0.5) {
            return Err(EvolutionError::Config(format!(
                "dt_factor = {} outside (0, 0.5]",
                self.dt_factor
            )));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(EvolutionError::Config(format!(
                "t_max = {} must be positive",
                self.t_max
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(EvolutionError::Config("snapshot_stride must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Kick-drift-kick leapfrog with cached acceleration.
///
/// The radial Laplacian in dimension `m + 1 = 2k + 2` is taken in flux form,
/// `[r_{j+½}^m (v_{j+1} − v_j) − r_{j−½}^m (v_j − v_{j−1})] / (r_j^m h²)`,
/// and `2(m+1)(v_1 − v_0)/h²` at the origin.
///
/// The last node is held fixed; `geo = None` evolves the free equation.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    geo: Option<&'a TargetGeometry>,
    state: FieldState,
    accel: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(mut state: FieldState, geo: Option<&'a TargetGeometry>, boundary: Boundary) -> Self {
        let n = state.grid.n_cells();
        if boundary == Boundary::DirichletZero {
            state.v[n] = 0.0;
        }
        state.v_t[n] = 0.0;
        let h = state.grid.h();
        let m = 2 * state.k as i32 + 1;
        let mut plus = vec![0.0; n + 1];
        let mut minus = vec![0.0; n + 1];
        plus[0] = 2.0 * (m + 1) as f64 / (h * h);
        for j in 1..n {
            let jf = j as f64;
            plus[j] = ((jf + 0.5) / jf).powi(m) / (h * h);
            minus[j] = ((jf - 0.5) / jf).powi(m) / (h * h);
        }
        let mut it = Integrator {
            geo,
            state,
            accel: Vec::new(),
            plus,
            minus,
        };
        it.accel = vec![0.0; n + 1];
        it.compute_accel();
        it
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub fn into_state(self) -> FieldState {
        self.state
    }

    fn compute_accel(&mut self) {
        let s = &self.state;
        let v = &s.v;
        let n = s.grid.n_cells();
        let k = s.k;
        let a = &mut self.accel;
        a[0] = self.plus[0] * (v[1] - v[0]);
        for j in 1..n {
            a[j] = self.plus[j] * (v[j + 1] - v[j]) - self.minus[j] * (v[j] - v[j - 1]);
        }
        a[n] = 0.0;
        if let Some(geo) = self.geo {
            for j in 0..n {
                let r = s.grid.r(j);
                let vj = v[j];
                let (u, power) = if k == 1 {
                    (r * vj, vj * vj * vj)
                } else {
                    (r * r * vj, vj * vj)
                };
                a[j] -= geo.h(u) * power;
            }
        }
    }

    pub fn step(&mut self, dt: f64) -> Result<(), EvolutionError> {
        let n = self.state.grid.n_cells();
        let half = 0.5 * dt;
        {
            let s = &mut self.state;
            for j in 0..n {
                s.v_t[j] += half * self.accel[j];
                s.v[j] += dt * s.v_t[j];
            }
        }
        self.compute_accel();
        let s = &mut self.state;
        let mut worst = 0.0f64;
        for j in 0..n {
            s.v_t[j] += half * self.accel[j];
            worst = worst.max(s.v[j].abs()).max(s.v_t[j].abs());
        }
        s.t += dt;
        if !(worst <= INSTABILITY_LIMIT) {
            return Err(EvolutionError::Instability { t: s.t });
        }
        Ok(())
    }
}

fn check_dt(grid: &RadialGrid, dt: f64) -> Result<(), EvolutionError> {
    if !(dt > 0.0 && dt <= 0.5 * grid.h()) {
        return Err(EvolutionError::InvalidStep { dt, h: grid.h() });
    }
    Ok(())
}

/// One nonlinear step; the outer node keeps its current value.
pub fn step(
    state: &FieldState,
    geo: &TargetGeometry,
    dt: f64,
) -> Result<FieldState, EvolutionError> {
    check_dt(&state.grid, dt)?;
    let mut it = Integrator::new(state.clone(), Some(geo), Boundary::DirichletFrozen);
    it.step(dt)?;
    Ok(it.into_state())
}

/// One step of the free flow `W(t)` (same stencil without the source).
pub fn linear_evolve(state: &FieldState, dt: f64) -> Result<FieldState, EvolutionError> {
    check_dt(&state.grid, dt)?;
    let mut it = Integrator::new(state.clone(), None, Boundary::DirichletFrozen);
    it.step(dt)?;
    Ok(it.into_state())
}

/// Runs `steps` free-flow steps.
pub fn linear_evolve_steps(
    state: &FieldState,
    dt: f64,
    steps: usize,
    boundary: Boundary,
) -> Result<FieldState, EvolutionError> {
    check_dt(&state.grid, dt)?;
    let mut it = Integrator::new(state.clone(), None, boundary);
    for _ in 0..steps {
        it.step(dt)?;
    }
    Ok(it.into_state())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Dispersed,
    Stationary,
    BlowupSuspected,
    Undecided,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Dispersed => "dispersed",
            Classification::Stationary => "stationary",
            Classification::BlowupSuspected => "blowup-suspected",
            Classification::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest interior energy fraction `E_0^{R_in}/E` at `t_max` for "dispersed".
    pub dispersal_fraction: f64,
    /// Largest relative S-norm growth over the trailing 10% of the run for "dispersed".
    pub snorm_trailing: f64,
    /// "stationary" when `sup_t ‖(u,u_t)(t) − (u,u_t)(0)‖ ≤ factor · √E`.
    pub stationary_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            dispersal_fraction: 0.05,
            snorm_trailing: 0.01,
            stationary_factor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    pub e: f64,
    pub e_kin: f64,
    pub sup_u: f64,
    pub sup_vr: f64,
    pub tails: Vec<f64>,
    pub virial: VirialSample,
    /// `∫|v|^{2+3/k} r^{2k+1} dr` at this time.
    pub snorm_integrand: f64,
    pub snorm_acc: f64,
    /// `E_0^{R_in}` for the configured interior radius.
    pub e_interior: f64,
    /// `‖(u,u_t)(t) − (u,u_t)(0)‖_{H×L²}`
    pub dist_initial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub state: FieldState,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: EvolutionConfig,
    pub geometry_tag: String,
    pub initial_descriptor: String,
    pub dt: f64,
    pub series: Vec<SeriesRow>,
    pub snapshots: Vec<Snapshot>,
    pub triggers: Vec<String>,
    pub classification: Classification,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub classification: Classification,
    pub e_initial: f64,
    pub e_drift_rel: f64,
    pub triggers: Vec<String>,
}

impl RunRecord {
    pub fn e_initial(&self) -> f64 {
        self.series.first().map_or(0.0, |r| r.e)
    }

    /// `max_t |E(t) − E(0)| / E(0)` (0 for zero data).
    pub fn e_drift_rel(&self) -> f64 {
        let e0 = self.e_initial();
        if e0 == 0.0 {
            return 0.0;
        }
        self.series
            .iter()
            .map(|r| (r.e - e0).abs() / e0)
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            classification: self.classification,
            e_initial: self.e_initial(),
            e_drift_rel: self.e_drift_rel(),
            triggers: self.triggers.clone(),
        }
    }

    pub fn final_state(&self) -> &FieldState {
        &self
            .snapshots
            .last()
            .expect("record holds the final snapshot")
            .state
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.state.t - t).abs() <= 0.5 * self.dt)
    }

    /// Series CSV: `t,E,E_kin,sup_u,sup_vr,tail@R...,virial1,virial2,main1,main2,snorm_acc,E_interior,dist0`.
    pub fn write_series_csv(&self, mut w: impl Write) -> io::Result<()> {
        let mut header = vec![
            "t".to_string(),
            "E".into(),
            "E_kin".into(),
            "sup_u".into(),
            "sup_vr".into(),
        ];
        header.extend(
            self.config
                .diagnostics
                .tail_radii
                .iter()
                .map(|r| format!("tail@{}", fmt_f64(*r))),
        );
        header.extend(
            [
                "virial1",
                "virial2",
                "main1",
                "main2",
                "snorm_acc",
                "E_interior",
                "dist0",
            ]
            .map(String::from),
        );
        writeln!(w, "{}", header.join(","))?;
        for row in &self.series {
            let mut cells = vec![
                fmt_f64(row.t),
                fmt_f64(row.e),
                fmt_f64(row.e_kin),
                fmt_f64(row.sup_u),
                fmt_f64(row.sup_vr),
            ];
            cells.extend(row.tails.iter().map(|x| fmt_f64(*x)));
            cells.extend(
                [
                    row.virial.v1,
                    row.virial.v2,
                    row.virial.main1,
                    row.virial.main2,
                    row.snorm_acc,
                    row.e_interior,
                    row.dist_initial,
                ]
                .map(fmt_f64),
            );
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Radius beyond which the data vanishes (relative threshold 1e−12).
pub fn data_support(state: &FieldState) -> f64 {
    let u = state.u_values();
    let ut = state.u_t_values();
    let su = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let st = ut.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (0..u.len())
        .rev()
        .find(|&j| u[j].abs() > 1e-12 * su || ut[j].abs() > 1e-12 * st)
        .map_or(0.0, |j| state.grid.r(j))
}

struct Recorder<'a> {
    geo: &'a TargetGeometry,
    cfg: &'a EvolutionConfig,
    initial: FieldState,
    virial_radius: f64,
    rows: Vec<SeriesRow>,
}

impl Recorder<'_> {
    fn record(&mut self, step: usize, state: &FieldState) -> SeriesRow {
        let d = Densities::new(state, self.geo);
        let full = report_from(&d, &state.grid, 0.0, state.grid.r_max());
        let r_in = self.cfg.diagnostics.interior_radius.min(state.grid.r_max());
        let interior = report_from(&d, &state.grid, 0.0, r_in);
        let tails = self
            .cfg
            .diagnostics
            .tail_radii
            .iter()
            .map(|&r| tail(state, r).unwrap_or(f64::NAN))
            .collect();
        let integrand = snorm_integral(state);
        let snorm_acc = match self.rows.last() {
            Some(prev) => prev.snorm_acc + (state.t - prev.t) * prev.snorm_integrand,
            None => 0.0,
        };
        let row = SeriesRow {
            step,
            t: state.t,
            e: full.e_total,
            e_kin: full.e_kinetic,
            sup_u: full.sup_u,
            sup_vr: state.sup_v_r(),
            tails,
            virial: virial_sample(state, self.geo, self.virial_radius),
            snorm_integrand: integrand,
            snorm_acc,
            e_interior: interior.e_total,
            dist_initial: hl2_norm_sq(&state.difference(&self.initial)).sqrt(),
        };
        self.rows.push(row.clone());
        row
    }
}

/// Evolves `initial` to `t_max` (or until a blow-up trigger fires) and classifies the run.
pub fn evolve(
    initial: &FieldState,
    geo: &TargetGeometry,
    cfg: &EvolutionConfig,
) -> Result<RunRecord, EvolutionError> {
    run(initial, geo, cfg, &Thresholds::default(), "")
}

/// [`evolve`] with explicit classification thresholds and a data descriptor for the record.
pub fn run(
    initial: &FieldState,
    geo: &TargetGeometry,
    cfg: &EvolutionConfig,
    thresholds: &Thresholds,
    descriptor: &str,
) -> Result<RunRecord, EvolutionError> {
    cfg.validate()?;
    if initial.k != geo.k() {
        return Err(EvolutionError::Config(format!(
            "state has k = {}, geometry k = {}",
            initial.k,
            geo.k()
        )));
    }
    let grid = initial.grid;
    let h = grid.h();
    if cfg.boundary == Boundary::DirichletZero {
        let support = data_support(initial);
        let need = support + cfg.t_max + 2.0 * h;
        if grid.r_max() < need - 1e-12 {
            return Err(EvolutionError::Precondition(format!(
                "r_max = {} < support {} + t_max {} + 2h (light cone reaches the boundary)",
                grid.r_max(),
                support,
                cfg.t_max
            )));
        }
    }
    let virial_radius = cfg.diagnostics.virial_radius.unwrap_or(0.5 * grid.r_max());
    if virial_radius > 0.5 * grid.r_max() + 1e-12 {
        return Err(EvolutionError::Config(format!(
            "virial radius {virial_radius} exceeds r_max/2"
        )));
    }
    for &r in &cfg.diagnostics.tail_radii {
        if !(r >= 0.0 && r < grid.r_max()) {
            return Err(EvolutionError::Config(format!(
                "tail radius {r} must lie in [0, r_max)"
            )));
        }
    }

    let dt = cfg.dt_factor * h;
    let n_steps = ((cfg.t_max / dt).round() as usize).max(1);
    let mut it = Integrator::new(initial.clone(), Some(geo), cfg.boundary);
    let start = it.state().clone();
    let mut rec = Recorder {
        geo,
        cfg,
        initial: start.clone(),
        virial_radius,
        rows: Vec::new(),
    };
    rec.record(0, &start);
    let mut snapshots = vec![Snapshot {
        step: 0,
        state: start,
    }];
    let mut triggers = Vec::new();
    let conc_radius = (cfg.blowup_concentration_cells * h).min(grid.r_max());

    for n in 1..=n_steps {
        it.step(dt)?;
        let last = n == n_steps;
        if cfg.field_snapshot_stride > 0 && n % cfg.field_snapshot_stride == 0 && !last {
            snapshots.push(Snapshot {
                step: n,
                state: it.state().clone(),
            });
        }
        if n % cfg.snapshot_stride == 0 || last {
            let row = rec.record(n, it.state());
            if row.sup_vr > cfg.blowup_gradient_threshold {
                triggers.push(format!(
                    "gradient: sup|v_r| = {:e} at t = {}",
                    row.sup_vr, row.t
                ));
            }
            let d = Densities::new(it.state(), geo);
            let core = report_from(&d, &grid, 0.0, conc_radius).e_total;
            if row.e > 0.0 && core > cfg.blowup_concentration_fraction * row.e {
                triggers.push(format!(
                    "concentration: E(r < {conc_radius}) = {core} of {} at t = {}",
                    row.e, row.t
                ));
            }
            if !triggers.is_empty() {
                snapshots.push(Snapshot {
                    step: n,
                    state: it.state().clone(),
                });
                break;
            }
        }
        if last {
            snapshots.push(Snapshot {
                step: n,
                state: it.state().clone(),
            });
        }
    }

    let mut record = RunRecord {
        config: cfg.clone(),
        geometry_tag: geo.tag().to_string(),
        initial_descriptor: descriptor.to_string(),
        dt,
        series: rec.rows,
        snapshots,
        triggers,
        classification: Classification::Undecided,
    };
    record.classification = classify(&record, thresholds);
    Ok(record)
}

/// Empirical mirror of the stationary-or-scattering alternative.
pub fn classify(record: &RunRecord, thresholds: &Thresholds) -> Classification {
    if !record.triggers.is_empty() {
        return Classification::BlowupSuspected;
    }
    let Some(last) = record.series.last() else {
        return Classification::Undecided;
    };
    let e0 = record.e_initial();
    let max_dist = record
        .series
        .iter()
        .map(|r| r.dist_initial)
        .fold(0.0, f64::max);
    if max_dist <= thresholds.stationary_factor * e0.max(0.0).sqrt() {
        return Classification::Stationary;
    }
    let fraction = if last.e > 0.0 {
        last.e_interior / last.e
    } else {
        0.0
    };
    let acc = snorm_accumulate(record);
    if fraction < thresholds.dispersal_fraction
        && trailing_increment(&acc) < thresholds.snorm_trailing
    {
        return Classification::Dispersed;
    }
    Classification::Undecided
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearResidual {
    pub t: f64,
    /// `‖(u,u_t)_nl(t) − W(t − T)(u,u_t)_nl(T)‖_{H×L²}`
    pub residual: f64,
    /// `‖(u,u_t)_nl(t)‖_{H×L²}`
    pub norm: f64,
}

/// Feeds the snapshot at `t_fit` to the free flow and measures the distance
/// to the nonlinear solution at later snapshots up to `t_fit + horizon`.
pub fn compare_to_linear(
    record: &RunRecord,
    t_fit: f64,
    horizon: f64,
) -> Result<Vec<LinearResidual>, EvolutionError> {
    let base = record
        .snapshot_at(t_fit)
        .ok_or(EvolutionError::MissingSnapshot(t_fit))?;
    let later: Vec<&Snapshot> = record
        .snapshots
        .iter()
        .filter(|s| s.step > base.step && s.state.t <= t_fit + horizon + 0.5 * record.dt)
        .collect();
    if later.is_empty() {
        return Err(EvolutionError::MissingSnapshot(t_fit + horizon));
    }
    let mut it = Integrator::new(base.state.clone(), None, record.config.boundary);
    let mut step = base.step;
    let mut out = vec![LinearResidual {
        t: base.state.t,
        residual: 0.0,
        norm: hl2_norm_sq(&base.state).sqrt(),
    }];
    for snap in later {
        while step < snap.step {
            it.step(record.dt)?;
            step += 1;
        }
        let diff = snap.state.difference(it.state());
        out.push(LinearResidual {
            t: snap.state.t,
            residual: hl2_norm_sq(&diff).sqrt(),
            norm: hl2_norm_sq(&snap.state).sqrt(),
        });
    }
    Ok(out)
}
