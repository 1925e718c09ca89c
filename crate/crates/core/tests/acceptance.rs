//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;
#[path = "common/quadrature.rs"]
mod quadrature;

use std::fs;
use std::process::Command;
use std::time::Instant;

use common::*;
use drm::design::{build_penalty_u, build_penalty_v, build_z2v};
use drm::inference::{cluster_means, compare_adjacent, f_cdf, p_value, Direction};
use drm::ingest::Measurement;
use drm::solver::{check_uniqueness, PreparedSystem, SolveError, MAX_CONDITION};
use drm::synth::NoiseSource;
use drm::{solve, synth, tune, Frame, LinearSystem, SamplingPlan, SmoothnessTargets, TrueModel};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (&'static str, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1", "exact recovery at zero smoothing", c1_exact_recovery),
        ("C2", "raw and aggregated fits coincide", c2_modes_agree),
        ("C3", "four points with no three collinear give a regular system", c3_four_points),
        ("C4", "large level penalty gives a bilinear level surface", c4_bilinear_limit),
        ("C5", "tuner reaches 0.2 / 0.2 within 200 solves", c5_tuner),
        ("C6", "F statistics and tail probabilities", c6_inference),
        ("C7", "stepped trend detected in at least 95 of 100 runs", c7_replication),
        ("C8", "penalty matrices reproduce the direct sums", c8_penalties),
        ("C9", "CLI artifacts are deterministic with exact row counts", c9_cli),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("{status} {id} {name} [{:.1} s]: {}", start.elapsed().as_secs_f64(), v.detail);
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Noise-free raw data, two fractions in every cell, no smoothing.
fn c1_exact_recovery() -> Verdict {
    let frame = reference_frame();
    let model = smooth_model(frame, 0.0);
    let data = synth::generate(&model, &SamplingPlan::full_coverage(&frame, &[0.1, 0.4], 1), 1).unwrap();
    let sys = LinearSystem::from_measurements(&frame, &data).unwrap();
    let z = model.z();
    let scale = max_abs(z.iter().copied());
    let start = Instant::now();
    let exact = solve(&sys, 0.0, 0.0);
    let secs = start.elapsed().as_secs_f64();
    match exact {
        Ok(fit) => {
            let err = max_abs((&fit.z_hat - &z).iter().copied()) / scale;
            verdict(err <= 1e-8 && secs < 5.0, format!("relative error {err:.3e} (limit 1e-8), {secs:.2} s (limit 5 s)"))
        }
        Err(SolveError::SingularSystem { unidentified, .. }) => {
            // Diagnose: the unidentified entries should be exactly the two entry levels whose
            // cohorts never cross a lattice cell; everything else must come back exactly.
            let layout = frame.layout();
            let corners = [0, layout.n_v0() - 1];
            let fit = solve(&sys, 1e-9, 1e-9).unwrap();
            let rest = (0..z.len()).filter(|k| !corners.contains(k)).map(|k| fit.z_hat[k] - z[k]);
            let err = max_abs(rest) / scale;
            verdict(
                false,
                format!(
                    "normal matrix singular at lambda = 0 with entries {unidentified:?} unidentified \
                     (corner levels v(I+1,0), v(0,J+1): no cell lies on their cohorts, so no data can \
                     reach them); all other {} entries recovered to {err:.1e} relative at lambda = 1e-9",
                    z.len() - 2
                ),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn c2_modes_agree() -> Verdict {
    let frame = reference_frame();
    let data = synth::generate(&smooth_model(frame, 3.5), &SamplingPlan::full_coverage(&frame, &[0.3], 5), 17).unwrap();
    let raw = solve(&LinearSystem::from_measurements(&frame, &data).unwrap(), 10.0, 100.0).unwrap();
    let agg = solve(&aggregated_system(&frame, &data), 10.0, 100.0).unwrap();
    let dz = max_abs((&raw.z_hat - &agg.z_hat).iter().copied());
    let ds = (raw.sigma2_hat.unwrap() - agg.sigma2_hat.unwrap()).abs();
    let dc = max_abs((&raw.cov_z - &agg.cov_z).iter().copied());
    verdict(
        dz <= 1e-10 && ds <= 1e-10 && dc <= 1e-10,
        format!("max |dz| {dz:.1e}, |d sigma2| {ds:.1e}, max |d cov| {dc:.1e} (limit 1e-10)"),
    )
}

fn random_point(src: &mut NoiseSource) -> (f64, f64) {
    (5.0 * src.uniform(), 5.0 * src.uniform())
}

fn c3_four_points() -> Verdict {
    let frame = Frame::new(0.0, 5.0, 0.0, 5.0).unwrap();
    let mut src = NoiseSource::new(2024);
    let (mut regular, mut degenerate, mut ill_conditioned) = (0, 0, 0);
    let mut tried = 0;
    while regular + degenerate + ill_conditioned < 1000 {
        let pts: Vec<(f64, f64)> = (0..4).map(|_| random_point(&mut src)).collect();
        tried += 1;
        if !pts.iter().all(|&(y, a)| frame.contains(y, a)) || !check_uniqueness(&pts).unique {
            continue;
        }
        let data: Vec<Measurement> = pts.iter().map(|&(y, a)| Measurement { x: 20.0 + src.standard_normal(), y, a }).collect();
        let ok = solve(&LinearSystem::from_measurements(&frame, &data).unwrap(), 1.0, 1.0)
            .map(|fit| fit.condition < MAX_CONDITION)
            .unwrap_or(false);
        if ok {
            regular += 1;
        } else if null_space_condition(&frame, &pts) > 1e12 {
            degenerate += 1;
        } else {
            ill_conditioned += 1;
        }
    }

    // Three collinear points plus one more: the checker must refuse.
    let mut refused = 0;
    for _ in 0..1000 {
        let (p, q) = (random_point(&mut src), random_point(&mut src));
        let s = 2.0 * src.uniform() - 0.5;
        let r = (p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1));
        let pts = [p, q, r, random_point(&mut src)];
        refused += usize::from(!check_uniqueness(&pts).unique);
    }

    let pass = regular == 1000 && refused == 1000;
    let mut detail = format!(
        "{regular}/1000 accepted configurations regular (condition < 1e12), {refused}/1000 collinear \
         configurations refused ({tried} draws)"
    );
    if !pass {
        detail += &format!(
            "; of the failures {degenerate} are exactly degenerate and {ill_conditioned} merely beyond the \
             condition guard. Both penalties vanish on bilinear level surfaces, where a point in cell (i, j) at \
             fraction t sees (1, i+t, j+t, ij+t(i+j+1)). No three collinear points does not make these four rows \
             independent: three points in one cell, or pairs in cells with equal i+j and ij, are degenerate, as is \
             any quadruple on a hyperbola in the continuous analogue"
        );
    }
    verdict(pass, detail)
}

/// Condition number of the data rows restricted to the bilinear null space of both penalties.
fn null_space_condition(frame: &Frame, pts: &[(f64, f64)]) -> f64 {
    let rows = DMatrix::from_fn(pts.len(), 4, |r, c| {
        let (cell, t) = frame.locate_with_fraction(pts[r].0, pts[r].1).unwrap();
        let (i, j) = (cell.i as f64, cell.j as f64);
        [1.0, i + t, j + t, i * j + t * (i + j + 1.0)][c]
    });
    let sv = rows.singular_values();
    sv.max() / sv.min()
}

fn c4_bilinear_limit() -> Verdict {
    let frame = reference_frame();
    let plan = SamplingPlan::full_coverage(&frame, &[0.05, 0.25, 0.45], 20);
    let data = synth::generate(&smooth_model(frame, 3.5), &plan, 31).unwrap();
    let fit = match solve(&aggregated_system(&frame, &data), 1e10, 1.0) {
        Ok(fit) => fit,
        Err(e) => return verdict(false, e.to_string()),
    };
    let v = &fit.v_hat;
    let (nr, nc) = v.shape();
    let basis = DMatrix::from_fn(nr * nc, 4, |k, c| {
        let (i, j) = ((k / nc) as f64, (k % nc) as f64);
        [1.0, i, j, i * j][c]
    });
    let target = DVector::from_fn(nr * nc, |k, _| v[(k / nc, k % nc)]);
    let coef = basis.clone().svd(true, true).solve(&target, 1e-14).unwrap();
    let resid = max_abs((&basis * coef - &target).iter().copied());
    let range = v.max() - v.min();
    let rel = resid / range;
    verdict(
        fit.s1 <= 1e-6 && rel <= 1e-4,
        format!("S1 {:.2e} (limit 1e-6), bilinear residual {rel:.2e} of range {range:.3} (limit 1e-4)", fit.s1),
    )
}

fn c5_tuner() -> Verdict {
    let frame = reference_frame();
    let data = synth::generate(&smooth_model(frame, 3.5), &wave_plan(&frame), 2).unwrap();
    let targets = SmoothnessTargets::standard(&frame.layout());
    match tune(&aggregated_system(&frame, &data), &targets) {
        Ok((_, r)) => {
            let err = r.log_error(&targets);
            verdict(
                r.converged && r.iterations <= 200 && err <= targets.delta,
                format!(
                    "{} solves, stat_v {:.4}, stat_u {:.4}, max log error {err:.4} (limit 0.05), lambda ({:.3e}, {:.3e})",
                    r.iterations, r.stat_v, r.stat_u, r.lambda1, r.lambda2
                ),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn c6_inference() -> Verdict {
    let frame = reference_frame();
    let data = synth::generate(&smooth_model(frame, 3.5), &wave_plan(&frame), 3).unwrap();
    let fit = solve(&aggregated_system(&frame, &data), 12.0, 7000.0).unwrap();
    let grid = cluster_means(&fit, 5, 5).unwrap();
    let means: Vec<f64> = (0..grid.partition.len())
        .map(|k| grid.means[(k / grid.partition.age_bands, k % grid.partition.age_bands)])
        .collect();
    let mut f_err: f64 = 0.0;
    let results = compare_adjacent(&grid).unwrap();
    for r in &results {
        let a = grid.partition.flat(r.cluster_a.0, r.cluster_a.1);
        let b = grid.partition.flat(r.cluster_b.0, r.cluster_b.1);
        let d = means[a] - means[b];
        let f_ref = d * d / (grid.cov[(a, a)] - 2.0 * grid.cov[(a, b)] + grid.cov[(b, b)]);
        f_err = f_err.max((r.f_value.unwrap() - f_ref).abs() / f_ref);
    }
    let mut cdf_err: f64 = 0.0;
    for d2 in [1, 10, 60, 1000] {
        for k in 0..20 {
            let x = 0.05 * 1.5f64.powi(k);
            cdf_err = cdf_err.max((f_cdf(x, 1, d2).unwrap() - quadrature::f1_cdf_by_quadrature(x, d2)).abs());
        }
    }
    let p0 = [1, 10, 60, 1000].iter().all(|&d| p_value(0.0, d).unwrap() == 1.0);
    verdict(
        f_err <= 1e-12 && cdf_err <= 1e-8 && p0,
        format!(
            "{} comparisons, F relative error {f_err:.1e} (limit 1e-12), CDF error {cdf_err:.1e} (limit 1e-8), p(0) = 1: {p0}",
            results.len()
        ),
    )
}

fn c7_replication() -> Verdict {
    let frame = reference_frame();
    let layout = frame.layout();
    let plan = wave_plan(&frame);
    let sd = 3.5;
    let flat = |delta: f64| {
        TrueModel::from_fn(
            frame,
            |_, _| 24.0,
            move |i, j| if (5..=9).contains(&i) && (10..=14).contains(&j) { 0.1 + delta } else { 0.1 },
            sd,
        )
        .unwrap()
    };
    // The smoothing parameters depend on the design alone, so tune once.
    let design = aggregated_system(&frame, &synth::generate(&flat(0.0), &plan, 1000).unwrap());
    let (fit, _) = tune(&design, &SmoothnessTargets::standard(&layout)).unwrap();
    let (l1, l2) = (fit.lambda1, fit.lambda2);
    let grid = cluster_means(&fit, 5, 5).unwrap();
    let (a, b) = (grid.partition.flat(0, 2), grid.partition.flat(1, 2));
    let unit = sd * sd / fit.sigma2_hat.unwrap();
    let se_cluster = (grid.cov[(b, b)] * unit).sqrt();
    let se_contrast = ((grid.cov[(a, a)] - 2.0 * grid.cov[(a, b)] + grid.cov[(b, b)]) * unit).sqrt();
    let effect = 3.0 * se_cluster;

    let (mut hits, mut shrink) = (0, 0.0);
    for seed in 0..100u64 {
        let data = synth::generate(&flat(-effect), &plan, 1000 + seed).unwrap();
        let sys = aggregated_system(&frame, &data);
        let fit = PreparedSystem::new(&sys).solve(l1, l2).unwrap();
        let grid = cluster_means(&fit, 5, 5).unwrap();
        let r = compare_adjacent(&grid)
            .unwrap()
            .into_iter()
            .find(|r| r.cluster_a == (0, 2) && r.cluster_b == (1, 2) && r.direction == Direction::YearAdjacent)
            .unwrap();
        hits += usize::from(r.diff > 0.0 && r.p_value.unwrap() < 0.05);
        shrink += r.diff / effect / 100.0;
    }
    // Best case power of a two-sided 5% z-test whose mean is a given number of standard errors.
    let normal = Normal::standard();
    let power = |k: f64| normal.cdf(k - 1.96) + normal.cdf(-k - 1.96);
    let pass = hits >= 95;
    let mut detail = format!(
        "{hits}/100 runs with p < 0.05 (need 95); step {effect:.4} = 3 cluster SE, contrast SE {se_contrast:.4}, \
         mean estimated/true difference {shrink:.2}"
    );
    if !pass {
        detail += &format!(
            ". An unbiased test at 3 standard errors of the contrast detects only {:.0}% of the time, \
             at 3 cluster SE {:.0}%; smoothing shrinks the estimate further, so 95% is out of reach",
            100.0 * power(3.0),
            100.0 * power(effect / se_contrast)
        );
    }
    verdict(pass, detail)
}

fn c8_penalties() -> Verdict {
    let layout = reference_frame().layout();
    let (b1, b2) = (build_penalty_v(&layout).unwrap(), build_penalty_u(&layout));
    let z2v = build_z2v(&layout);
    let (ni, nj) = (layout.extent_i(), layout.extent_j());
    let mut src = NoiseSource::new(77);
    let (mut e1, mut e2): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let z = DVector::from_fn(layout.dim(), |_, _| src.standard_normal());
        let via_rows = |rows: &[drm::design::SparseRow]| rows.iter().map(|r| r.dot(&z).powi(2)).sum::<f64>();
        let mapped = z2v.apply(&z);
        let (nr, nc) = layout.v_shape();
        let v = DMatrix::from_fn(nr, nc, |i, j| mapped[i * nc + j]);
        let recursion = levels_by_recursion(&z, ni, nj);
        let s1 = s1_direct(&v, &layout);
        e1 = e1.max((via_rows(&b1) - s1).abs() / s1).max(max_abs((&v - recursion).iter().copied()));
        let s2 = s2_direct(&trends_of(&z, ni, nj), &layout);
        e2 = e2.max((via_rows(&b2) - s2).abs() / s2);
    }
    verdict(e1 <= 1e-10 && e2 <= 1e-10, format!("level penalty error {e1:.1e}, trend penalty error {e2:.1e} (limit 1e-10)"))
}

fn c9_cli() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let frame_args = ["--y-min", "1982", "--y-max", "1992.5", "--a-min", "25", "--a-max", "64"];
    let bin = env!("CARGO_BIN_EXE_drm");
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"v0": 24.0, "u": 0.1, "waves": [0, 5, 10], "fractions": [0.05, 0.15, 0.25], "repeats": 10, "noise_sd": 3.5}"#)
        .unwrap();
    let sim = dir.path().join("sim");
    let run = |args: Vec<&str>| Command::new(bin).args(args).args(frame_args).status().unwrap().success();
    if !run(vec!["simulate", "--spec", spec.to_str().unwrap(), "--seed", "9", "--out", sim.to_str().unwrap()]) {
        return verdict(false, "simulate failed");
    }
    let data = sim.join("data.csv");
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for out in &outs {
        if !run(vec!["analyze", "--input", data.to_str().unwrap(), "--out", out.to_str().unwrap()]) {
            return verdict(false, "analyze failed");
        }
    }
    let names = ["levels.csv", "ctrends.csv", "clusters.csv", "comparisons.csv", "run.json"];
    let identical = names.iter().all(|n| fs::read(outs[0].join(n)).unwrap() == fs::read(outs[1].join(n)).unwrap());
    let rows = |n: &str| fs::read_to_string(outs[0].join(n)).unwrap().lines().count() - 1;
    let (levels, trends) = (rows("levels.csv"), rows("ctrends.csv"));
    verdict(
        identical && levels == 12 * 41 && trends == 11 * 40,
        format!("artifacts identical: {identical}; levels {levels} rows (want 492), ctrends {trends} rows (want 440)"),
    )
}
