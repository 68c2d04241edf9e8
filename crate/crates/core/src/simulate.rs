//! Synthetic score tables drawn from a model with known parameters.
//!
//! Draws use ChaCha8 seeded from a `u64` with the ziggurat standard-normal
//! transform from `rand_distr`, so a given seed reproduces the same table on
//! the same build.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{align_and_covariance, CovOptions, ScoreTable};
use crate::error::{Result, SemError};
use crate::inference::standardized_solution;
use crate::modelspec::{ModelSpec, ParamKind};
use crate::optimizer::{fit_ml, FitOptions};
use crate::ram::{build_ram, implied_covariance, RamMatrices};

/// Lower-triangular `L` with `L Lᵀ = Σ`. Only the lower triangle of `Σ` is read.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(SemError::Invalid("cholesky of a non-square matrix".into()));
    }
    sigma
        .clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or(SemError::NotPositiveDefinite)
}

#[derive(Debug, Clone)]
pub struct TrueModel {
    pub ram: RamMatrices,
    pub columns: Vec<String>,
    pub theta: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl TrueModel {
    pub fn new(spec: &ModelSpec, theta: Vec<f64>, n: usize, seed: u64) -> Result<Self> {
        let ram = build_ram(spec);
        if theta.len() != ram.k() {
            return Err(SemError::ThetaLength {
                expected: ram.k(),
                got: theta.len(),
            });
        }
        Ok(Self {
            ram,
            columns: spec.observed.clone(),
            theta,
            n,
            seed,
        })
    }
}

/// Reads a parameter vector for `ram`. Each non-comment line is either a
/// bare number (positional) or `label = value`; a file must use one style.
/// Labels follow the parameter table (`DCK=~danske_talemaader`, `DCK~~ECK`).
pub fn parse_theta(text: &str, ram: &RamMatrices) -> Result<Vec<f64>> {
    let mut positional = Vec::new();
    let mut labelled: Vec<(String, f64, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |v: &str| SemError::Invalid(format!("line {}: `{v}` is not a number", i + 1));
        if let Some((label, value)) = line.rsplit_once('=') {
            let value = value.trim();
            let v: f64 = value.parse().map_err(|_| bad(value))?;
            labelled.push((label.split_whitespace().collect(), v, i + 1));
        } else {
            for tok in line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
            {
                positional.push(tok.parse::<f64>().map_err(|_| bad(tok))?);
            }
        }
    }
    if !labelled.is_empty() && !positional.is_empty() {
        return Err(SemError::Invalid(
            "theta file mixes labelled and positional values".into(),
        ));
    }
    if labelled.is_empty() {
        if positional.len() != ram.k() {
            return Err(SemError::ThetaLength {
                expected: ram.k(),
                got: positional.len(),
            });
        }
        return Ok(positional);
    }
    let mut theta = vec![f64::NAN; ram.k()];
    for (label, v, line) in labelled {
        let j = ram.param_index(&label).ok_or_else(|| {
            SemError::Invalid(format!("line {line}: `{label}` is not a free parameter"))
        })?;
        theta[j] = v;
    }
    if let Some(j) = theta.iter().position(|v| v.is_nan()) {
        return Err(SemError::Invalid(format!(
            "theta file has no value for `{}`",
            ram.params[j].label
        )));
    }
    Ok(theta)
}

/// Draws `model.n` independent rows `x = L z`, `z ~ N(0, I)`.
pub fn sample_scores(model: &TrueModel) -> Result<ScoreTable> {
    let sigma = implied_covariance(&model.ram, &model.theta)?.sigma;
    let l = cholesky_factor(&sigma)?;
    let p = sigma.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let width = model.n.to_string().len().max(4);
    let mut row_ids = Vec::with_capacity(model.n);
    let mut values = Vec::with_capacity(model.n);
    for i in 0..model.n {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let x = &l * z;
        row_ids.push(format!("sim_{:0width$}", i + 1));
        values.push(x.iter().map(|v| Some(*v)).collect());
    }
    ScoreTable::new(row_ids, model.columns.clone(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRun {
    pub seed: u64,
    pub theta_hat: Vec<f64>,
    /// Correlation of the first declared latent covariance, if any.
    pub rho_hat: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryStudy {
    pub runs: Vec<RecoveryRun>,
    /// Seeds whose simulate-or-fit step failed, with the error.
    pub failures: Vec<(u64, SemError)>,
    pub labels: Vec<String>,
    /// Per-parameter mean and SD across successful runs.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub rho_mean: Option<f64>,
    pub rho_sd: Option<f64>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn first_latent_pair(spec: &ModelSpec) -> Option<(String, String)> {
    spec.parameters()
        .into_iter()
        .find(|p| {
            p.kind == ParamKind::Covariance && spec.is_latent(&p.lhs) && spec.is_latent(&p.rhs)
        })
        .map(|p| (p.lhs, p.rhs))
}

fn one_run(
    spec: &ModelSpec,
    theta_true: &[f64],
    n: usize,
    seed: u64,
    options: &FitOptions,
    pair: Option<&(String, String)>,
) -> Result<RecoveryRun> {
    let model = TrueModel::new(spec, theta_true.to_vec(), n, seed)?;
    let table = sample_scores(&model)?;
    let input = align_and_covariance(&table, spec, CovOptions::default())?;
    let fit = fit_ml(&model.ram, &input, options)?;
    let rho_hat = match pair {
        Some((a, b)) => standardized_solution(&model.ram, &fit.theta_hat)?.correlation(a, b),
        None => None,
    };
    Ok(RecoveryRun {
        seed,
        theta_hat: fit.theta_hat,
        rho_hat,
        converged: fit.converged,
    })
}

/// Simulates and refits once per seed. A failing seed is recorded and the
/// study continues.
pub fn recovery_study(
    spec: &ModelSpec,
    theta_true: &[f64],
    n: usize,
    seeds: &[u64],
    options: &FitOptions,
) -> RecoveryStudy {
    let pair = first_latent_pair(spec);
    let labels: Vec<String> = build_ram(spec)
        .params
        .iter()
        .map(|p| p.label.clone())
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        match one_run(spec, theta_true, n, seed, options, pair.as_ref()) {
            Ok(run) => runs.push(run),
            Err(e) => failures.push((seed, e)),
        }
    }
    let (mut mean, mut sd) = (Vec::new(), Vec::new());
    if !runs.is_empty() {
        for j in 0..labels.len() {
            let xs: Vec<f64> = runs.iter().map(|r| r.theta_hat[j]).collect();
            let (m, s) = mean_sd(&xs);
            mean.push(m);
            sd.push(s);
        }
    }
    let rhos: Vec<f64> = runs.iter().filter_map(|r| r.rho_hat).collect();
    let (rho_mean, rho_sd) = if rhos.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_sd(&rhos);
        (Some(m), Some(s))
    };
    RecoveryStudy {
        runs,
        failures,
        labels,
        mean,
        sd,
        rho_mean,
        rho_sd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelspec::parse_model;

    #[test]
    fn cholesky_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(cholesky_factor(&id).unwrap(), id);
        let l = cholesky_factor(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0])).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]));
        assert_eq!(
            cholesky_factor(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            Err(SemError::NotPositiveDefinite)
        );
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (m, s) = mean_sd(&draws);
        assert!(m.abs() < 0.005, "mean {m}");
        assert!((s * s - 1.0).abs() < 0.01, "var {}", s * s);
    }

    #[test]
    fn single_row_and_ids() {
        let spec = parse_model("A =~ x + y").unwrap();
        let model = TrueModel::new(&spec, vec![0.8, 0.5, 0.5, 1.0], 1, 3).unwrap();
        let t = sample_scores(&model).unwrap();
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.row_ids, vec!["sim_0001"]);
        assert_eq!(t.columns, vec!["x", "y"]);
    }

    #[test]
    fn theta_length_checked() {
        let spec = parse_model("A =~ x + y").unwrap();
        assert!(matches!(
            TrueModel::new(&spec, vec![1.0], 10, 0),
            Err(SemError::ThetaLength {
                expected: 4,
                got: 1
            })
        ));
    }

    #[test]
    fn theta_files() {
        let spec = parse_model("A =~ x + y").unwrap();
        let ram = build_ram(&spec);
        assert_eq!(
            parse_theta("0.8 0.5\n0.5, 1.0\n", &ram).unwrap(),
            vec![0.8, 0.5, 0.5, 1.0]
        );
        let named = "# truth\nA=~y = 0.8\nx~~x = 0.5\ny ~~ y = 0.4\nA~~A = 1\n";
        assert_eq!(parse_theta(named, &ram).unwrap(), vec![0.8, 0.5, 0.4, 1.0]);
        assert!(matches!(
            parse_theta("0.8 0.5", &ram),
            Err(SemError::ThetaLength {
                expected: 4,
                got: 2
            })
        ));
        assert!(parse_theta("A=~y = 0.8\n", &ram).is_err());
        assert!(parse_theta("A=~y = 0.8\n0.5\n", &ram).is_err());
    }

    #[test]
    fn empty_seed_list() {
        let spec = parse_model("A =~ x + y + z").unwrap();
        let study = recovery_study(
            &spec,
            &[0.8, 0.8, 0.5, 0.5, 0.5, 1.0],
            50,
            &[],
            &FitOptions::default(),
        );
        assert!(study.runs.is_empty());
        assert!(study.mean.is_empty());
        assert_eq!(study.rho_mean, None);
    }

    #[test]
    fn failing_seed_recorded() {
        // n = 2 rows cannot form a covariance; every seed fails without aborting.
        let spec = parse_model("A =~ x + y + z").unwrap();
        let study = recovery_study(
            &spec,
            &[0.8, 0.8, 0.5, 0.5, 0.5, 1.0],
            2,
            &[1, 2],
            &FitOptions::default(),
        );
        assert!(study.runs.is_empty());
        assert_eq!(study.failures.len(), 2);
    }
}
