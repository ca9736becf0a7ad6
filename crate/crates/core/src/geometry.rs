//! Target geometry `g` and everything derived from it.
//!
//! The equation is driven by `f = g g'`. The other quantities built from `g`
//! are `G(ρ) = ∫₀^ρ |g|`, the virial density `d(ρ) = ρ f(ρ)`, the smooth
//! coefficient `h` of the conjugated equation, and the constants `C*`
//! (first positive zero of `g`) and `D*` (where `G` reaches half of `G(C*)`).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ParseError};
use crate::quad::adaptive_simpson;

/// Half-width of the window around ρ = 0 where `h` is blended with its Taylor value.
pub const H_BLEND_WIDTH: f64 = 1e-3;

const ZERO_SCAN_STEP: f64 = 1e-2;
const ZERO_SCAN_BOUND: f64 = 50.0;
const ROOT_TOL: f64 = 1e-12;
const CONSISTENCY_TOL: f64 = 1e-6;
const G_TABLE_NODES: usize = 10_000;
const G_QUAD_RTOL: f64 = 1e-10;
const ASSUMPTION_TOL: f64 = 1e-9;
const ORIGIN_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cannot parse {which}: {source}")]
    Parse {
        which: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("supplied {which} disagrees with finite difference at rho = {rho}: |diff| = {diff:e}")]
    Inconsistent {
        which: &'static str,
        rho: f64,
        diff: f64,
    },
    #[error("(A1) violated: g has no positive zero in (0, {bound}]")]
    NoPositiveZero { bound: f64 },
    #[error("equivariance index k = {0} not supported (must be 1 or 2)")]
    UnsupportedK(u32),
    #[error("geometry assumptions violated: {0}")]
    Assumptions(AssumptionReport),
    #[error("rho = {rho} outside tabulated domain [{lo}, {hi}]")]
    Domain { rho: f64, lo: f64, hi: f64 },
}

/// Serializable description of a target geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeometrySpec {
    Sphere,
    YangMillsShifted,
    Custom {
        k: u32,
        g: String,
        gp: String,
        gpp: String,
    },
}

impl GeometrySpec {
    pub fn build(&self) -> Result<TargetGeometry, GeometryError> {
        match self {
            GeometrySpec::Sphere => Ok(TargetGeometry::builtin(Builtin::Sphere)),
            GeometrySpec::YangMillsShifted => {
                Ok(TargetGeometry::builtin(Builtin::YangMillsShifted))
            }
            GeometrySpec::Custom { k, g, gp, gpp } => TargetGeometry::custom(g, gp, gpp, *k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// `g = sin`, `k = 1`: corotational maps into the round sphere.
    Sphere,
    /// `g(u) = u(2 − u)`, `k = 2`: radial Yang-Mills after the shift `u ↦ u − 1`.
    YangMillsShifted,
}

/// Which derived function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    G,
    Gp,
    Gpp,
    F,
    /// `G(ρ) = ∫₀^ρ |g|`
    Integral,
    D,
}

#[derive(Debug, Clone)]
enum Kind {
    Builtin(Builtin),
    Custom {
        g: Expr,
        gp: Expr,
        gpp: Expr,
        table: IntegralTable,
    },
}

/// Cubic Hermite table of `G` on Chebyshev-spaced nodes.
#[derive(Debug, Clone)]
struct IntegralTable {
    x: Vec<f64>,
    val: Vec<f64>,
    slope: Vec<f64>,
}

impl IntegralTable {
    fn build(g: &Expr, lo: f64, hi: f64, kinks: &[f64]) -> Self {
        let n = G_TABLE_NODES;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut x: Vec<f64> = (0..n)
            .map(|i| mid - half * (PI * (i as f64) / ((n - 1) as f64)).cos())
            .collect();
        x.extend(kinks.iter().copied().filter(|&p| p > lo && p < hi));
        x.push(0.0);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        x.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let abs_g = |t: f64| g.eval(t).abs();
        let zero = x
            .iter()
            .position(|&t| t == 0.0)
            .expect("origin node present");
        let mut val = vec![0.0; x.len()];
        for i in zero + 1..x.len() {
            val[i] = val[i - 1] + integrate_abs(&abs_g, x[i - 1], x[i]);
        }
        for i in (0..zero).rev() {
            val[i] = val[i + 1] - integrate_abs(&abs_g, x[i], x[i + 1]);
        }
        let slope = x.iter().map(|&t| abs_g(t)).collect();
        IntegralTable { x, val, slope }
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.x[0] && t <= *self.x.last().unwrap()
    }

    fn eval(&self, t: f64) -> f64 {
        let i = match self.x.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.val[i],
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        };
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let dx = x1 - x0;
        let s = (t - x0) / dx;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.val[i]
            + h10 * dx * self.slope[i]
            + h01 * self.val[i + 1]
            + h11 * dx * self.slope[i + 1]
    }
}

fn integrate_abs(abs_g: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let coarse = 0.5 * (b - a) * (abs_g(a) + abs_g(b)) + (b - a) * abs_g(0.5 * (a + b));
    let tol = (G_QUAD_RTOL * coarse.abs()).max(1e-300);
    adaptive_simpson(abs_g, a, b, tol)
}

/// The target geometry with all derived constants.
#[derive(Debug, Clone)]
pub struct TargetGeometry {
    k: u32,
    kind: Kind,
    c_star: f64,
    d_star: f64,
    integral_at_c_star: f64,
    h_at_zero: f64,
}

impl TargetGeometry {
    pub fn builtin(which: Builtin) -> Self {
        let (k, c_star, d_star, big_g) = match which {
            Builtin::Sphere => (1, PI, FRAC_PI_2, 2.0),
            Builtin::YangMillsShifted => (2, 2.0, 1.0, 4.0 / 3.0),
        };
        let mut geo = TargetGeometry {
            k,
            kind: Kind::Builtin(which),
            c_star,
            d_star,
            integral_at_c_star: big_g,
            h_at_zero: 0.0,
        };
        geo.h_at_zero = geo.taylor_h0();
        geo
    }

    pub fn sphere() -> Self {
        Self::builtin(Builtin::Sphere)
    }

    pub fn yang_mills_shifted() -> Self {
        Self::builtin(Builtin::YangMillsShifted)
    }

    /// Builds a geometry from expression sources for `g`, `g'`, `g''`.
    ///
    /// The supplied derivatives are cross-checked against centered finite
    /// differences; the assumption checks are not run here (see [`parse_custom`]).
    pub fn custom(g: &str, gp: &str, gpp: &str, k: u32) -> Result<Self, GeometryError> {
        if k != 1 && k != 2 {
            return Err(GeometryError::UnsupportedK(k));
        }
        let parse = |which, s: &str| {
            Expr::parse(s).map_err(|source| GeometryError::Parse { which, source })
        };
        let g = parse("g", g)?;
        let gp = parse("g'", gp)?;
        let gpp = parse("g''", gpp)?;

        let c_star = first_positive_zero(|x| g.eval(x))?;
        let lo = -c_star - 1.0;
        let hi = c_star + 1.0;
        check_derivative("g'", &g, &gp, lo, hi)?;
        check_derivative("g''", &gp, &gpp, lo, hi)?;

        let abs_g = |t: f64| g.eval(t).abs();
        let integral_at = |x: f64| integrate_abs(&abs_g, 0.0, x);
        let big_g = integral_at(c_star);
        let d_star = bisect(|x| integral_at(x) - 0.5 * big_g, 0.0, c_star, ROOT_TOL);

        let mut kinks = vec![c_star];
        // other zeros of g in the table range are kinks of G as well
        let mut x = lo;
        while x < hi {
            let y = (x + ZERO_SCAN_STEP).min(hi);
            let (ga, gb) = (g.eval(x), g.eval(y));
            if ga * gb < 0.0 {
                kinks.push(bisect(|t| g.eval(t), x, y, ROOT_TOL));
            }
            x = y;
        }
        let table = IntegralTable::build(&g, lo, hi, &kinks);

        let mut geo = TargetGeometry {
            k,
            kind: Kind::Custom { g, gp, gpp, table },
            c_star,
            d_star,
            integral_at_c_star: big_g,
            h_at_zero: 0.0,
        };
        geo.h_at_zero = geo.taylor_h0();
        Ok(geo)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    pub fn d_star(&self) -> f64 {
        self.d_star
    }

    /// `G(C*)`.
    pub fn integral_at_c_star(&self) -> f64 {
        self.integral_at_c_star
    }

    /// Energy of the harmonic map, `2 G(C*)`.
    pub fn threshold_energy(&self) -> f64 {
        2.0 * self.integral_at_c_star
    }

    pub fn tag(&self) -> &'static str {
        match self.kind {
            Kind::Builtin(Builtin::Sphere) => "sphere",
            Kind::Builtin(Builtin::YangMillsShifted) => "yang-mills-shifted",
            Kind::Custom { .. } => "custom",
        }
    }

    pub fn spec(&self) -> GeometrySpec {
        match &self.kind {
            Kind::Builtin(Builtin::Sphere) => GeometrySpec::Sphere,
            Kind::Builtin(Builtin::YangMillsShifted) => GeometrySpec::YangMillsShifted,
            Kind::Custom { g, gp, gpp, .. } => GeometrySpec::Custom {
                k: self.k,
                g: g.source().to_string(),
                gp: gp.source().to_string(),
                gpp: gpp.source().to_string(),
            },
        }
    }

    /// Domain on which a custom geometry is tabulated; built-ins are defined everywhere.
    pub fn domain(&self) -> (f64, f64) {
        match self.kind {
            Kind::Builtin(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Kind::Custom { .. } => (-self.c_star - 1.0, self.c_star + 1.0),
        }
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Builtin(Builtin::Sphere) => x.sin(),
            Kind::Builtin(Builtin::YangMillsShifted) => x * (2.0 - x),
            Kind::Custom { g, .. } => g.eval(x),
        }
    }

    #[inline]
    pub fn gp(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Builtin(Builtin::Sphere) => x.cos(),
            Kind::Builtin(Builtin::YangMillsShifted) => 2.0 - 2.0 * x,
            Kind::Custom { gp, .. } => gp.eval(x),
        }
    }

    #[inline]
    pub fn gpp(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Builtin(Builtin::Sphere) => -x.sin(),
            Kind::Builtin(Builtin::YangMillsShifted) => -2.0,
            Kind::Custom { gpp, .. } => gpp.eval(x),
        }
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Builtin(Builtin::Sphere) => 0.5 * (2.0 * x).sin(),
            _ => self.g(x) * self.gp(x),
        }
    }

    #[inline]
    pub fn d(&self, x: f64) -> f64 {
        x * self.f(x)
    }

    /// `G(ρ) = ∫₀^ρ |g|` (negative for ρ < 0).
    pub fn integral(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Builtin(Builtin::Sphere) => {
                let a = x.abs();
                let periods = (a / PI).floor();
                let rem = a - periods * PI;
                x.signum() * (2.0 * periods + 1.0 - rem.cos())
            }
            Kind::Builtin(Builtin::YangMillsShifted) => {
                let p = |t: f64| t * t - t * t * t / 3.0;
                if x < 0.0 {
                    -p(x)
                } else if x <= 2.0 {
                    p(x)
                } else {
                    2.0 * p(2.0) - p(x)
                }
            }
            Kind::Custom { g, table, .. } => {
                if table.contains(x) {
                    table.eval(x)
                } else {
                    let abs_g = |t: f64| g.eval(t).abs();
                    integrate_abs(&abs_g, 0.0, x)
                }
            }
        }
    }

    /// Checked evaluation; custom geometries reject arguments outside the tabulated domain.
    pub fn eval(&self, which: Which, x: f64) -> Result<f64, GeometryError> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(GeometryError::Domain { rho: x, lo, hi });
        }
        Ok(match which {
            Which::G => self.g(x),
            Which::Gp => self.gp(x),
            Which::Gpp => self.gpp(x),
            Which::F => self.f(x),
            Which::Integral => self.integral(x),
            Which::D => self.d(x),
        })
    }

    /// Value of `h` at the origin from the Taylor expansion of `f − k²ρ`.
    pub fn h_at_zero(&self) -> f64 {
        self.h_at_zero
    }

    fn taylor_h0(&self) -> f64 {
        if self.k == 2 {
            1.5 * self.k as f64 * self.gpp(0.0)
        } else {
            let step = 1e-4;
            let g3 = (self.gpp(step) - self.gpp(-step)) / (2.0 * step);
            2.0 / 3.0 * g3
        }
    }

    #[inline]
    fn h_quotient(&self, x: f64) -> f64 {
        let k2 = (self.k * self.k) as f64;
        let num = self.f(x) - k2 * x;
        if self.k == 1 {
            num / (x * x * x)
        } else {
            num / (x * x)
        }
    }

    /// `h(ρ) = (f(ρ) − k²ρ) / ρ^{1+2/k}`, smooth through ρ = 0.
    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        if let Kind::Builtin(Builtin::YangMillsShifted) = self.kind {
            // f(ρ) − 4ρ = 2ρ²(ρ − 3)
            return 2.0 * (x - 3.0);
        }
        let a = x.abs();
        if a >= H_BLEND_WIDTH {
            return self.h_quotient(x);
        }
        let edge = self.h_quotient(H_BLEND_WIDTH.copysign(if x == 0.0 { 1.0 } else { x }));
        self.h_at_zero + (edge - self.h_at_zero) * (a / H_BLEND_WIDTH)
    }

    /// `K(E) = G⁻¹(E/2)`, the sup bound for maps with trivial endpoints.
    /// Saturates at `C*` when `E/2 ≥ G(C*)`.
    pub fn sup_bound(&self, energy: f64) -> f64 {
        let target = 0.5 * energy.max(0.0);
        if target <= 0.0 {
            return 0.0;
        }
        if target >= self.integral_at_c_star {
            return self.c_star;
        }
        bisect(|x| self.integral(x) - target, 0.0, self.c_star, ROOT_TOL)
    }

    /// Sampled `sup |g'|` on `[−C*, C*]`.
    pub fn gp_sup(&self) -> f64 {
        let n = 2000;
        (0..=n)
            .map(|i| -self.c_star + 2.0 * self.c_star * i as f64 / n as f64)
            .map(|x| self.gp(x).abs())
            .fold(0.0, f64::max)
    }
}

fn first_positive_zero(g: impl Fn(f64) -> f64) -> Result<f64, GeometryError> {
    let mut a = ZERO_SCAN_STEP;
    let mut ga = g(a);
    if ga == 0.0 {
        return Ok(a);
    }
    while a < ZERO_SCAN_BOUND {
        let b = (a + ZERO_SCAN_STEP).min(ZERO_SCAN_BOUND);
        let gb = g(b);
        if gb == 0.0 {
            return Ok(b);
        }
        if ga * gb < 0.0 {
            return Ok(bisect(&g, a, b, ROOT_TOL));
        }
        a = b;
        ga = gb;
    }
    Err(GeometryError::NoPositiveZero {
        bound: ZERO_SCAN_BOUND,
    })
}

/// Bisection for a sign change of `f` on `[a, b]`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    if fa == 0.0 {
        return a;
    }
    if f(b) == 0.0 {
        return b;
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if m == a && m == b {
            break;
        }
    }
    0.5 * (a + b)
}

fn check_derivative(
    which: &'static str,
    base: &Expr,
    deriv: &Expr,
    lo: f64,
    hi: f64,
) -> Result<(), GeometryError> {
    let n = 400;
    let step = 1e-5;
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let fd = (base.eval(x + step) - base.eval(x - step)) / (2.0 * step);
        let supplied = deriv.eval(x);
        let diff = (fd - supplied).abs();
        if !(diff <= CONSISTENCY_TOL * supplied.abs().max(1.0)) {
            return Err(GeometryError::Inconsistent {
                which,
                rho: x,
                diff,
            });
        }
    }
    Ok(())
}

/// One assumption violation (or the tightest margin when nothing fails).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: String,
    pub rho: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub integral_monotone: bool,
    /// Largest violation amount; values ≤ 0 are margins.
    pub worst: Violation,
    pub sample_count: usize,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.a1 && self.a2 && self.a3 && self.integral_monotone
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "A1={} A2={} A3={} G-monotone={} (worst {} at rho={} by {:e})",
            self.a1,
            self.a2,
            self.a3,
            self.integral_monotone,
            self.worst.assumption,
            self.worst.rho,
            self.worst.violation
        )
    }
}

struct Tally {
    worst: Violation,
}

impl Tally {
    /// Records `amount` (positive = violated beyond tolerance) and returns whether it passed.
    fn record(&mut self, name: &str, rho: f64, amount: f64) -> bool {
        let amount = if amount.is_nan() {
            f64::INFINITY
        } else {
            amount
        };
        if amount > self.worst.violation {
            self.worst = Violation {
                assumption: name.to_string(),
                rho,
                violation: amount,
            };
        }
        amount <= 0.0
    }
}

/// Sampled check of (A1)–(A3). Deterministic: uniform grids of `sample_count` points.
pub fn check_assumptions(geo: &TargetGeometry, sample_count: usize) -> AssumptionReport {
    let n = sample_count.max(100);
    let c = geo.c_star();
    let mut tally = Tally {
        worst: Violation {
            assumption: "none".into(),
            rho: 0.0,
            violation: f64::NEG_INFINITY,
        },
    };

    // (A1): g(C*) = 0 and g > 0 on (0, C*)
    let mut a1 = tally.record("A1", c, geo.g(c).abs() - 1e-9);
    for i in 1..n {
        let x = c * i as f64 / n as f64;
        a1 &= tally.record("A1", x, -geo.g(x));
    }

    // (A2)
    let mut a2 = geo.k() == 1 || geo.k() == 2;
    a2 &= tally.record("A2", 0.0, geo.g(0.0).abs() - ORIGIN_TOL);
    a2 &= tally.record("A2", 0.0, (geo.gp(0.0) - geo.k() as f64).abs() - ORIGIN_TOL);
    if geo.k() == 1 {
        a2 &= tally.record("A2", 0.0, geo.gpp(0.0).abs() - ORIGIN_TOL);
    }

    // (A3)
    let mut a3 = true;
    for i in 0..=n {
        let x = c * i as f64 / n as f64;
        a3 &= tally.record("A3", x, geo.gp(x) - geo.gp(-x) - ASSUMPTION_TOL);
    }
    let ds = geo.d_star();
    for i in 0..=n {
        let x = ds * i as f64 / n as f64;
        a3 &= tally.record("A3", x, -geo.gp(x) - ASSUMPTION_TOL);
    }

    let mut monotone = true;
    let mut prev = geo.integral(-c);
    for i in 1..=2 * n {
        let x = -c + c * i as f64 / n as f64;
        let cur = geo.integral(x);
        monotone &= tally.record("G-monotone", x, prev - cur - ASSUMPTION_TOL);
        prev = cur;
    }

    AssumptionReport {
        a1,
        a2,
        a3,
        integral_monotone: monotone,
        worst: tally.worst,
        sample_count: n,
    }
}

/// Builds a custom geometry and rejects it unless every assumption passes.
pub fn parse_custom(g: &str, gp: &str, gpp: &str, k: u32) -> Result<TargetGeometry, GeometryError> {
    let geo = TargetGeometry::custom(g, gp, gpp, k)?;
    let report = check_assumptions(&geo, 1000);
    if !report.all_pass() {
        return Err(GeometryError::Assumptions(report));
    }
    Ok(geo)
}
