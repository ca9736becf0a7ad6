//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use critwave::diagnostics::{lemma7_scan, profile_rng, scan_grid, virial_residuals, RandomProfile};
use critwave::evolution::{compare_to_linear, Classification, RunRecord};
use critwave::experiments::{run_scenario, run_sweep, simulate, ScenarioConfig};
use critwave::fields::{
    check_pointwise_bound, h_norm_sq_range, lemma4_check, BoundTable, FieldState, RadialGrid,
};
use critwave::harmonic_map::{sample_q_scaled_v, solve_q, DEFAULT_S_RANGE};
use critwave::TargetGeometry;
use serde_json::json;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bump_config(
    geometry: &str,
    energy_fraction: f64,
    n_cells: usize,
    r_max: f64,
    t_max: f64,
) -> ScenarioConfig {
    ScenarioConfig::default()
        .with_override("geometry", json!({ "kind": geometry }))
        .and_then(|c| c.with_override("initial_data", json!({"family": "gaussian-bump", "energy_fraction": energy_fraction, "r0": 2.0, "w": 0.75})))
        .and_then(|c| c.with_override("grid", json!({"n_cells": n_cells, "r_max": r_max})))
        .and_then(|c| c.with_override("evolution.t_max", json!(t_max)))
        .expect("valid config")
}

fn q_config(lambda: f64, n_cells: usize) -> ScenarioConfig {
    ScenarioConfig::default()
        .with_override("initial_data", json!({"family": "scaled-q", "lambda": lambda}))
        .and_then(|c| c.with_override("grid", json!({"n_cells": n_cells, "r_max": 100.0})))
        .and_then(|c| c.with_override("evolution", json!({"t_max": 10.0, "boundary": "dirichlet_frozen", "field_snapshot_stride": 256})))
        .expect("valid config")
}

// 1. harmonic map against closed forms
fn criterion_1() -> Outcome {
    let cases: [(TargetGeometry, fn(f64) -> f64); 2] = [
        (TargetGeometry::sphere(), |r| 2.0 * r.atan()),
        (TargetGeometry::yang_mills_shifted(), |r| {
            2.0 * r * r / (1.0 + r * r)
        }),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (geo, exact) in cases {
        let t = Instant::now();
        let p = solve_q(&geo, 1e-3, DEFAULT_S_RANGE).expect("profile");
        let elapsed = t.elapsed();
        let (lo, hi) = (1e-4f64.ln(), 1e4f64.ln());
        let mut err = p
            .s_nodes()
            .zip(p.q_values())
            .filter(|(s, _)| *s >= lo && *s <= hi)
            .map(|(s, &q)| (q - exact(s.exp())).abs())
            .fold(0.0, f64::max);
        for i in 0..=10_000 {
            let r = (lo + (hi - lo) * i as f64 / 10_000.0).exp();
            err = err.max((p.q_at_r(r) - exact(r)).abs());
        }
        pass &= err <= 1e-8 && elapsed < Duration::from_secs(1);
        detail.push(format!(
            "{}: max err {err:.2e}, {:.0} ms",
            geo.tag(),
            elapsed.as_secs_f64() * 1e3
        ));
    }
    outcome(pass, detail.join("; "))
}

// 2. E(Q) = 2G(C*)
fn criterion_2() -> Outcome {
    let es = solve_q(&TargetGeometry::sphere(), 1e-3, DEFAULT_S_RANGE)
        .unwrap()
        .energy();
    let ey = solve_q(&TargetGeometry::yang_mills_shifted(), 1e-3, DEFAULT_S_RANGE)
        .unwrap()
        .energy();
    let pass = (es - 4.0).abs() <= 1e-4 && (ey - 8.0 / 3.0).abs() <= 1e-4;
    outcome(
        pass,
        format!("E(Q) sphere {es:.10}, yang-mills-shifted {ey:.10}"),
    )
}

// 3. constants
fn criterion_3() -> Outcome {
    let s = TargetGeometry::sphere();
    let y = TargetGeometry::yang_mills_shifted();
    let pass = (s.c_star() - PI).abs() <= 1e-10
        && (s.d_star() - PI / 2.0).abs() <= 1e-8
        && (y.c_star() - 2.0).abs() <= 1e-10
        && (y.d_star() - 1.0).abs() <= 1e-8
        && (s.h(0.0) + 2.0 / 3.0).abs() <= 1e-6
        && (y.h(0.0) + 6.0).abs() <= 1e-6;
    outcome(
        pass,
        format!(
            "sphere C*={} D*={} h(0)={}; yang-mills-shifted C*={} D*={} h(0)={}",
            s.c_star(),
            s.d_star(),
            s.h(0.0),
            y.c_star(),
            y.d_star(),
            y.h(0.0)
        ),
    )
}

// 4. energy conservation and second-order drift reduction
fn criterion_4() -> (Outcome, RunRecord) {
    let cfg = bump_config("sphere", 0.5, 4096, 40.0, 20.0)
        .with_override("evolution.field_snapshot_stride", json!(1024))
        .unwrap();
    let t = Instant::now();
    let coarse = simulate(&cfg).expect("run");
    let elapsed = t.elapsed();
    let fine = simulate(&cfg.with_override("grid.n_cells", json!(8192)).unwrap()).expect("run");
    let (d1, d2) = (coarse.e_drift_rel(), fine.e_drift_rel());
    let ratio = d1 / d2;
    let e_ratio = coarse.e_initial() / 4.0;
    let pass = d1 <= 1e-3
        && (2.5..=6.0).contains(&ratio)
        && elapsed < Duration::from_secs(30)
        && (e_ratio - 0.5).abs() < 1e-6;
    (
        outcome(pass, format!("E/E(Q)={e_ratio:.6}, drift {d1:.3e}, halved-h drift {d2:.3e}, reduction {ratio:.2}, {:.1} s", elapsed.as_secs_f64())),
        coarse,
    )
}

// 5. virial identities inside the light cone
fn criterion_5() -> (Outcome, RunRecord) {
    let cfg = bump_config("sphere", 0.6, 4096, 64.0, 10.0)
        .with_override("diagnostics.virial_radius", json!(30.0))
        .and_then(|c| c.with_override("evolution.field_snapshot_stride", json!(640)))
        .unwrap();
    let support = cfg.analytic_support().unwrap();
    let rec = simulate(&cfg).expect("run");
    let e = rec.e_initial();
    let res = virial_residuals(&rec);
    let w1 = res.iter().map(|p| p.r1.abs()).fold(0.0, f64::max);
    let w2 = res.iter().map(|p| p.r2.abs()).fold(0.0, f64::max);
    let pass = support <= 5.0 && !res.is_empty() && w1 <= 5e-3 * e && w2 <= 5e-3 * e;
    (
        outcome(
            pass,
            format!(
                "{} times, max |dv1/dt-main1|/E {:.2e}, max |dv2/dt-main2|/E {:.2e}",
                res.len(),
                w1 / e,
                w2 / e
            ),
        ),
        rec,
    )
}

// 6. pointwise bound on recorded snapshots, equality case on Q
fn criterion_6(runs: &[&RunRecord]) -> Outcome {
    let geo = TargetGeometry::sphere();
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for rec in runs {
        for s in &rec.snapshots {
            worst = worst.max(check_pointwise_bound(&s.state, &geo).violation);
            count += 1;
        }
    }
    let p = solve_q(&geo, 1e-3, DEFAULT_S_RANGE).unwrap();
    let grid = RadialGrid::new(200_000, 200.0).unwrap();
    let q = FieldState::new(
        grid,
        1,
        0.0,
        sample_q_scaled_v(&p, 1.0, &grid),
        vec![0.0; grid.len()],
    )
    .unwrap();
    let table = BoundTable::new(&q, &geo);
    let mut defect = 0.0f64;
    for i in 0..table.r.len() {
        for j in i + 1..table.r.len() {
            let (lhs, rhs) = table.sides(i, j);
            if rhs > 1e-3 {
                defect = defect.max((lhs - rhs).abs() / rhs);
            }
        }
    }
    let pass = count > 0 && worst <= 1e-6 && defect <= 1e-5;
    outcome(
        pass,
        format!("{count} snapshots, worst violation {worst:.2e}; Q equality defect {defect:.2e}"),
    )
}

// 7. stationarity of Q and its rescalings
fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (lambda, n) in [(1.0, 8192), (0.5, 8192), (2.0, 16384)] {
        let rec = simulate(&q_config(lambda, n)).expect("run");
        let s0 = &rec.snapshots[0].state;
        let sup = rec
            .snapshots
            .iter()
            .map(|s| {
                h_norm_sq_range(&s.state.difference(s0), 0.0, 50.0)
                    .unwrap()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        pass &= sup <= 1e-2 && rec.classification == Classification::Stationary;
        detail.push(format!(
            "λ={lambda} n={n}: sup ‖u-Q‖_H {sup:.2e}, {}",
            rec.classification.as_str()
        ));
    }
    outcome(pass, detail.join("; "))
}

// 8. dichotomy sweep below threshold
fn criterion_8(out: &Path) -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for (geo, fracs) in [
        ("sphere", vec![0.3, 0.6, 0.9]),
        ("yang-mills-shifted", vec![0.3, 0.6]),
    ] {
        // support radius 5, t_max = 3 · 5
        let base = bump_config(geo, 0.5, 2048, 24.0, 15.0);
        let values: Vec<_> = fracs.iter().map(|f| json!(f)).collect();
        let sweep = run_sweep(
            &base,
            "initial_data.energy_fraction",
            &values,
            4,
            &out.join(geo),
        )
        .expect("sweep");
        for e in &sweep.entries {
            let ok = e.classification == Some(Classification::Dispersed)
                && e.interior_fraction <= 0.05
                && e.snorm_trailing < 0.01;
            pass &= ok;
            detail.push(format!(
                "{geo} {:.1}: {} E0^1/E {:.1e} trail {:.1e}",
                e.energy_ratio,
                e.classification.map_or("error", |c| c.as_str()),
                e.interior_fraction,
                e.snorm_trailing
            ));
        }
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!("{}; {:.1} s", detail.join("; "), elapsed.as_secs_f64()),
    )
}

// 9. scattering profile extraction
fn criterion_9() -> Outcome {
    // h = 1/64, dt = 1/256: snapshots every 5 time units
    let cfg = bump_config("sphere", 0.6, 4096, 64.0, 35.0)
        .with_override("evolution.field_snapshot_stride", json!(1280))
        .unwrap();
    let rec = simulate(&cfg).expect("run");
    let mut rel = Vec::new();
    let mut resid = Vec::new();
    for t_fit in [10.0, 20.0, 30.0] {
        let series = compare_to_linear(&rec, t_fit, 5.0).expect("snapshots");
        let last = series.last().unwrap();
        resid.push(last.residual);
        rel.push(last.residual / last.norm);
    }
    let pass = resid.windows(2).all(|w| w[1] < w[0]) && rel[2] <= 0.05;
    outcome(
        pass,
        format!(
            "relative residual at T+5 for T=10,20,30: {:.2e}, {:.2e}, {:.2e}",
            rel[0], rel[1], rel[2]
        ),
    )
}

// 10. cubic scaling of the nonlinear correction
fn criterion_10() -> Outcome {
    let mut scaled = Vec::new();
    for a in [1e-2f64, 5e-3] {
        let cfg = ScenarioConfig::default()
            .with_override(
                "initial_data",
                json!({"family": "gaussian-bump", "a": a, "r0": 2.0, "w": 0.75}),
            )
            .and_then(|c| c.with_override("grid", json!({"n_cells": 2048, "r_max": 32.0})))
            .and_then(|c| c.with_override("evolution.t_max", json!(10.0)))
            .unwrap();
        let rec = simulate(&cfg).expect("run");
        let series = compare_to_linear(&rec, 0.0, 10.0).expect("snapshots");
        let last = series.last().unwrap();
        assert!((last.t - 10.0).abs() < 1e-9);
        scaled.push(last.residual / a.powi(3));
    }
    let ratio = scaled[0] / scaled[1];
    let pass = (0.5..=2.0).contains(&ratio);
    outcome(
        pass,
        format!(
            "‖u_nl-u_lin‖/a³ at t=10: {:.6}, {:.6} (ratio {ratio:.4})",
            scaled[0], scaled[1]
        ),
    )
}

// 11. norm equivalence between u and v
fn criterion_11() -> Outcome {
    let grid = scan_grid();
    let mut worst = f64::INFINITY;
    for k in [1, 2] {
        for i in 0..100 {
            let profile = RandomProfile::draw(&mut profile_rng(2024, i), k, 3);
            let c = lemma4_check(&profile.sample(&grid, 1.0));
            let scale = c.a.max(c.b);
            worst = worst
                .min(c.upper_margin / scale)
                .min(c.lower_margin / scale);
        }
    }
    outcome(
        worst >= -1e-9,
        format!("200 profiles, smallest relative margin {worst:.3e}"),
    )
}

// 12. coercivity scan
fn criterion_12() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for geo in [
        TargetGeometry::sphere(),
        TargetGeometry::yang_mills_shifted(),
    ] {
        let delta = 0.1 * geo.threshold_energy();
        let a = lemma7_scan(&geo, delta, 200, 1).expect("scan");
        let b = lemma7_scan(&geo, delta, 200, 2).expect("scan");
        let spread = (a.c_emp - b.c_emp).abs() / a.c_emp;
        pass &= a.all_f_positive && b.all_f_positive && spread <= 0.1;
        detail.push(format!(
            "{}: c_emp {:.4} / {:.4} (spread {:.1}%), min F {:.3}",
            geo.tag(),
            a.c_emp,
            b.c_emp,
            100.0 * spread,
            a.min_f.min(b.min_f)
        ));
    }
    outcome(pass, detail.join("; "))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

// 13. byte-identical reruns
fn criterion_13(root: &Path) -> Outcome {
    let scenarios = [
        bump_config("sphere", 0.6, 2048, 24.0, 15.0),
        bump_config("yang-mills-shifted", 0.3, 2048, 24.0, 15.0)
            .with_override("diagnostics.tail_radii", json!([1.0, 5.0, 10.0]))
            .unwrap(),
        q_config(1.0, 2048)
            .with_override("evolution.t_max", json!(2.0))
            .unwrap(),
    ];
    let mut pass = true;
    let mut files = 0;
    for (i, cfg) in scenarios.iter().enumerate() {
        let a = run_scenario(cfg, &root.join(format!("a{i}"))).expect("run");
        let b = run_scenario(cfg, &root.join(format!("b{i}"))).expect("run");
        let (fa, fb) = (csv_files(&a.dir), csv_files(&b.dir));
        pass &= a.dir.file_name() == b.dir.file_name() && !fa.is_empty() && fa == fb;
        files += fa.len();
    }
    let geo = TargetGeometry::sphere();
    let s1 = lemma7_scan(&geo, 0.4, 100, 9).unwrap();
    let s2 = lemma7_scan(&geo, 0.4, 100, 9).unwrap();
    s1.write(&root.join("scan_a")).unwrap();
    s2.write(&root.join("scan_b")).unwrap();
    let (la, lb) = (
        csv_files(&root.join("scan_a")),
        csv_files(&root.join("scan_b")),
    );
    pass &= la == lb
        && fs::read(root.join("scan_a/lemma7.json")).unwrap()
            == fs::read(root.join("scan_b/lemma7.json")).unwrap();
    files += la.len();
    outcome(
        pass,
        format!(
            "{} scenarios + scan rerun, {files} CSV files compared",
            scenarios.len()
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "criterion {n:>2}: {} {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        )
        .unwrap();
        out.flush().unwrap();
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    let (o4, run4) = criterion_4();
    report(4, o4);
    let (o5, run5) = criterion_5();
    report(5, o5);
    report(6, criterion_6(&[&run4, &run5]));
    drop((run4, run5));
    report(7, criterion_7());
    report(8, criterion_8(&tmp.path().join("sweep")));
    report(9, criterion_9());
    report(10, criterion_10());
    report(11, criterion_11());
    report(12, criterion_12());
    report(13, criterion_13(&tmp.path().join("determinism")));

    let failed: Vec<u32> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: FAILED criteria {failed:?}");
        std::process::exit(1);
    }
}
