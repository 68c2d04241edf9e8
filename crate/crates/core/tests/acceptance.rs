//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL/SKIP line; the process fails if any gating
//! criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use lvsem::inference::{baseline_discrepancy, chi_square_stat, fit_indices};
use lvsem::inference::{chisq_sf, normal_cdf};
use lvsem::ram::{analytic_gradient, discrepancy, discrepancy_gradient};
use lvsem::{
    analyze, build_ram, fit_ml, load_scores, parse_model, parse_theta, recovery_study,
    AnalysisOptions, CovInput, FitOptions, FitReport, Identification, ModelSpec, RamMatrices,
    ScoreTable, SemError,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn toy_spec() -> ModelSpec {
    parse_model(&std::fs::read_to_string(fixture("toy_dck_eck.model")).unwrap()).unwrap()
}

fn toy_truth(ram: &RamMatrices) -> Vec<f64> {
    parse_theta(
        &std::fs::read_to_string(fixture("toy_truth.theta")).unwrap(),
        ram,
    )
    .unwrap()
}

fn reference_table() -> ScoreTable {
    load_scores(fixture("toy_reference.csv")).unwrap()
}

fn tight() -> FitOptions {
    FitOptions {
        tol: 1e-14,
        grad_tol: 1e-9,
        max_iter: 5000,
        ..FitOptions::default()
    }
}

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_time(outcome: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let secs = elapsed.as_secs_f64();
    match outcome {
        Outcome::Pass(d) if elapsed <= limit => Outcome::Pass(format!("{d}; {secs:.2}s")),
        Outcome::Pass(d) => Outcome::Fail(format!(
            "{d}; {secs:.2}s exceeds {:.0}s",
            limit.as_secs_f64()
        )),
        other => other,
    }
}

fn saturated_exactness() -> Outcome {
    let start = Instant::now();
    let spec = parse_model("F =~ x + y + z").unwrap();
    let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.4, 0.5, 1.2, 0.3, 0.4, 0.3, 0.9]);
    let input =
        CovInput::from_covariance(s, 200, vec!["x".into(), "y".into(), "z".into()]).unwrap();
    let ram = build_ram(&spec);
    let fit = fit_ml(&ram, &input, &FitOptions::default()).unwrap();
    let df = spec.validate_identification().degrees_of_freedom;
    let t = chi_square_stat(fit.f_min, input.n);
    let (t_b, df_b) = baseline_discrepancy(&input).unwrap();
    let (idx, _) = fit_indices(t, df, t_b, df_b, input.n, false).unwrap();
    let ok = df == 0 && fit.f_min <= 1e-8 && t.abs() <= 1e-6 && idx.cfi == 1.0 && idx.rmsea == 0.0;
    within_time(
        check(
            ok,
            format!(
                "df={df} F={:.2e} T={t:.2e} CFI={} RMSEA={}",
                fit.f_min, idx.cfi, idx.rmsea
            ),
        ),
        start.elapsed(),
        Duration::from_secs(1),
    )
}

fn degrees_of_freedom() -> Outcome {
    let report = analyze(&toy_spec(), &reference_table(), &AnalysisOptions::default()).unwrap();
    let id = toy_spec().validate_identification();
    check(
        id.degrees_of_freedom == 1
            && report.fit.df == 1
            && report.fit.df_baseline == 6
            && report.p == 4,
        format!(
            "df={} df_b={} p={}",
            report.fit.df, report.fit.df_baseline, report.p
        ),
    )
}

/// F_ML written directly from Σ = ΛΦΛᵀ + Θ for the toy model, independent of
/// the RAM code path.
fn oracle_f(theta: &[f64], idx: &ToyIndex, s: &DMatrix<f64>) -> f64 {
    let mut lambda = DMatrix::<f64>::zeros(4, 2);
    lambda[(0, 0)] = 1.0;
    lambda[(1, 0)] = theta[idx.l_dan];
    lambda[(2, 1)] = 1.0;
    lambda[(3, 1)] = theta[idx.l_squad];
    let phi = DMatrix::from_row_slice(
        2,
        2,
        &[
            theta[idx.v_dck],
            theta[idx.c],
            theta[idx.c],
            theta[idx.v_eck],
        ],
    );
    let theta_d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        4,
        idx.resid.iter().map(|&j| theta[j]),
    ));
    let sigma = &lambda * phi * lambda.transpose() + theta_d;
    let lu = sigma.clone().lu();
    let inv = lu.try_inverse().unwrap();
    sigma.determinant().ln() - s.determinant().ln() + (s * inv).trace() - 4.0
}

struct ToyIndex {
    l_dan: usize,
    l_squad: usize,
    c: usize,
    v_dck: usize,
    v_eck: usize,
    resid: [usize; 4],
}

fn toy_index(ram: &RamMatrices) -> ToyIndex {
    let i = |l: &str| ram.param_index(l).unwrap();
    ToyIndex {
        l_dan: i("DCK=~danske_talemaader"),
        l_squad: i("ECK=~squad"),
        c: i("DCK~~ECK"),
        v_dck: i("DCK~~DCK"),
        v_eck: i("ECK~~ECK"),
        resid: [
            i("danish_citizen_tests~~danish_citizen_tests"),
            i("danske_talemaader~~danske_talemaader"),
            i("cnn_dm~~cnn_dm"),
            i("squad~~squad"),
        ],
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let spec = toy_spec();
    let ram = build_ram(&spec);
    let idx = toy_index(&ram);
    let input = lvsem::align_and_covariance(&reference_table(), &spec, Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut theta = vec![0.0f64; ram.k()];
        theta[idx.l_dan] = rng.random_range(0.3..1.5);
        theta[idx.l_squad] = rng.random_range(0.3..1.5);
        theta[idx.v_dck] = rng.random_range(0.5..2.0);
        theta[idx.v_eck] = rng.random_range(0.5..2.0);
        let r: f64 = rng.random_range(-0.8..0.8);
        theta[idx.c] = r * (theta[idx.v_dck] * theta[idx.v_eck]).sqrt();
        for j in idx.resid {
            theta[j] = rng.random_range(0.2..1.5);
        }
        // Five-point stencil on the oracle objective.
        let h = 1e-4;
        let oracle: Vec<f64> = (0..theta.len())
            .map(|j| {
                let at = |d: f64| {
                    let mut t = theta.clone();
                    t[j] += d;
                    oracle_f(&t, &idx, &input.s)
                };
                (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
            })
            .collect();
        let scale = oracle.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-8);
        let f_gap =
            (discrepancy(&ram, &theta, &input).unwrap() - oracle_f(&theta, &idx, &input.s)).abs();
        worst = worst.max(f_gap);
        for shipped in [
            analytic_gradient(&ram, &theta, &input).unwrap(),
            discrepancy_gradient(&ram, &theta, &input).unwrap(),
        ] {
            for (g, o) in shipped.iter().zip(&oracle) {
                worst = worst.max((g - o).abs() / scale);
            }
        }
    }
    within_time(
        check(
            worst <= 1e-4,
            format!("max relative deviation {worst:.2e} over 10 points"),
        ),
        start.elapsed(),
        Duration::from_secs(5),
    )
}

fn recovery(n: usize, seeds: std::ops::RangeInclusive<u64>) -> lvsem::simulate::RecoveryStudy {
    let spec = toy_spec();
    let truth = toy_truth(&build_ram(&spec));
    let seeds: Vec<u64> = seeds.collect();
    recovery_study(&spec, &truth, n, &seeds, &FitOptions::default())
}

fn parameter_recovery() -> (Outcome, Option<f64>) {
    let start = Instant::now();
    let study = recovery(2000, 1..=20);
    let all_converged = study.failures.is_empty() && study.runs.iter().all(|r| r.converged);
    let mean = study.rho_mean.unwrap_or(f64::NAN);
    let outcome = check(
        all_converged && study.runs.len() == 20 && (mean - 0.48).abs() <= 0.05,
        format!(
            "mean rho={mean:.4} sd={:.4} converged {}/20",
            study.rho_sd.unwrap_or(f64::NAN),
            study.runs.iter().filter(|r| r.converged).count()
        ),
    );
    (
        within_time(outcome, start.elapsed(), Duration::from_secs(30)),
        study.rho_sd,
    )
}

fn small_sample(sd_large: Option<f64>) -> Outcome {
    let start = Instant::now();
    let study = recovery(45, 1001..=1100);
    let rhos: Vec<f64> = study
        .runs
        .iter()
        .filter_map(|r| r.rho_hat)
        .filter(|r| r.is_finite())
        .collect();
    let n = rhos.len() as f64;
    let mean = rhos.iter().sum::<f64>() / n;
    let sd = (rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let Some(sd_large) = sd_large else {
        return Outcome::Fail("no n=2000 reference SD".into());
    };
    let ratio = sd / sd_large;
    within_time(
        check(
            ratio >= 2.0,
            format!(
                "sd(n=45)={sd:.4} over {} fits, sd(n=2000)={sd_large:.4}, ratio {ratio:.2}",
                rhos.len()
            ),
        ),
        start.elapsed(),
        Duration::from_secs(60),
    )
}

fn max_std_gap(a: &FitReport, b: &FitReport) -> f64 {
    let mut gap = 0.0f64;
    for row in &a.parameters {
        let other = b.parameter(&row.label).map(|r| r.std).unwrap_or(f64::NAN);
        gap = gap.max((row.std - other).abs());
    }
    for (x, y) in a.latent_correlations.iter().zip(&b.latent_correlations) {
        gap = gap.max((x.rho - y.rho).abs());
    }
    if gap.is_nan() {
        f64::INFINITY
    } else {
        gap
    }
}

fn invariance() -> Outcome {
    let spec = toy_spec();
    let table = reference_table();
    let options = AnalysisOptions {
        fit: tight(),
        ..AnalysisOptions::default()
    };
    let base = analyze(&spec, &table, &options).unwrap();

    let mut scaled = table.clone();
    let col = scaled.column_index("squad").unwrap();
    for row in &mut scaled.values {
        row[col] = row[col].map(|v| v * 10.0);
    }
    let rescaled = analyze(&spec, &scaled, &options).unwrap();

    let std_lv = analyze(
        &spec,
        &table,
        &AnalysisOptions {
            identification: Identification::StdLv,
            ..options.clone()
        },
    )
    .unwrap();

    let dt_scale = (base.fit.chi2 - rescaled.fit.chi2).abs();
    let dt_id = (base.fit.chi2 - std_lv.fit.chi2).abs();
    let ds_scale = max_std_gap(&base, &rescaled);
    let ds_id = max_std_gap(&base, &std_lv);
    check(
        dt_scale <= 1e-6 && dt_id <= 1e-6 && ds_scale <= 1e-6 && ds_id <= 1e-6,
        format!("rescale: dT={dt_scale:.1e} dStd={ds_scale:.1e}; std.lv: dT={dt_id:.1e} dStd={ds_id:.1e}"),
    )
}

fn reference_cross_check() -> Outcome {
    let text = std::fs::read_to_string(fixture("toy_reference.semopy.json")).unwrap();
    let reference: Value = serde_json::from_str(&text).unwrap();
    let report = analyze(&toy_spec(), &reference_table(), &AnalysisOptions::default()).unwrap();
    let mut worst = 0.0f64;
    let mut worst_what = String::new();
    let mut compare = |what: String, ours: f64, theirs: f64| {
        let gap = (ours - theirs).abs();
        if gap > worst || gap.is_nan() {
            worst = if gap.is_nan() { f64::INFINITY } else { gap };
            worst_what = what;
        }
    };
    compare(
        "chi2".into(),
        report.fit.chi2,
        reference["chi2"].as_f64().unwrap(),
    );
    compare(
        "cfi".into(),
        report.fit.cfi,
        reference["cfi"].as_f64().unwrap(),
    );
    compare(
        "rmsea".into(),
        report.fit.rmsea,
        reference["rmsea"].as_f64().unwrap(),
    );
    let params = reference["parameters"].as_object().unwrap();
    for (label, entry) in params {
        let Some(row) = report.parameter(label) else {
            compare(format!("{label} missing"), f64::NAN, 0.0);
            continue;
        };
        compare(
            format!("{label} estimate"),
            row.estimate,
            entry["estimate"].as_f64().unwrap(),
        );
        if let Some(se) = entry["se"].as_f64() {
            compare(format!("{label} se"), row.se, se);
        }
    }
    check(
        worst <= 1e-3 && params.len() == report.parameters.len(),
        format!(
            "{} parameters vs {}; max gap {worst:.2e} ({worst_what})",
            params.len(),
            reference["generator"].as_str().unwrap_or("reference")
        ),
    )
}

fn distributions() -> Outcome {
    let phi0 = normal_cdf(0.0);
    let phi196 = normal_cdf(1.959964);
    let sf2 = [0.0, 0.5, 1.0, 3.7, 10.0, 42.0]
        .iter()
        .map(|&x| (chisq_sf(x, 2).unwrap() - (-x / 2.0).exp()).abs())
        .fold(0.0f64, f64::max);
    let sf1 = chisq_sf(3.841, 1).unwrap();
    check(
        phi0 == 0.5 && (phi196 - 0.975).abs() <= 1e-6 && sf2 <= 1e-10 && (sf1 - 0.05004).abs() <= 1e-4,
        format!("Phi(0)={phi0} Phi(1.959964)={phi196:.9} max|sf(x,2)-exp(-x/2)|={sf2:.1e} sf(3.841,1)={sf1:.6}"),
    )
}

fn snapshot_replication() -> Outcome {
    let path = fixture("scandeval_germanic_nlg.csv");
    if !path.exists() {
        return Outcome::Skip(format!("no score snapshot at {}", path.display()));
    }
    let table = match load_scores(&path) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    match analyze(&toy_spec(), &table, &AnalysisOptions::default()) {
        Ok(r) => {
            let rho = &r.latent_correlations[0];
            let v = r.verdicts();
            check(
                rho.rho > 0.0
                    && rho.pvalue < 0.05
                    && v.cfi_above_threshold
                    && v.rmsea_below_threshold,
                format!(
                    "n={} rho={:.3} p={:.3} CFI={:.3} RMSEA={:.3}",
                    r.n, rho.rho, rho.pvalue, r.fit.cfi, r.fit.rmsea
                ),
            )
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn missing_benchmark() -> Outcome {
    let spec =
        parse_model(&std::fs::read_to_string(fixture("fig1_alignment_transfer.model")).unwrap())
            .unwrap();
    let table = load_scores(fixture("fig1_without_danish_hhh.csv")).unwrap();
    match analyze(&spec, &table, &AnalysisOptions::default()) {
        Err(e @ SemError::MissingColumn(_)) => {
            let msg = e.to_string();
            check(msg.contains("danish_hhh"), msg)
        }
        Err(e) => Outcome::Fail(format!("unexpected error: {e}")),
        Ok(_) => Outcome::Fail("fit succeeded without danish_hhh".into()),
    }
}

fn main() {
    let (recovery_outcome, sd_large) = parameter_recovery();
    let results = vec![
        (1, "saturated model is exact", saturated_exactness(), true),
        (
            2,
            "toy model degrees of freedom",
            degrees_of_freedom(),
            true,
        ),
        (
            3,
            "gradients match finite-difference oracle",
            gradient_correctness(),
            true,
        ),
        (4, "parameter recovery at n=2000", recovery_outcome, true),
        (
            5,
            "small-sample spread at n=45",
            small_sample(sd_large),
            true,
        ),
        (6, "scale and identification invariance", invariance(), true),
        (
            7,
            "agreement with third-party SEM fit",
            reference_cross_check(),
            true,
        ),
        (8, "distribution functions", distributions(), true),
        (
            9,
            "replication on benchmark snapshot (non-gating)",
            snapshot_replication(),
            false,
        ),
        (10, "missing benchmark is named", missing_benchmark(), true),
    ];
    let mut failed = 0;
    for (id, name, outcome, gating) in results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                if gating {
                    failed += 1;
                }
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {id:>2}: {name} ({detail})");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
