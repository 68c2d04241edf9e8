//! Quasi-Newton minimization of the ML discrepancy.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::CovInput;
use crate::error::{Result, SemError};
use crate::modelspec::ParamKind;
use crate::ram::{analytic_gradient, discrepancy, discrepancy_gradient, MatrixId, RamMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradientMethod {
    #[default]
    Analytic,
    /// Central differences, see [`discrepancy_gradient`].
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on |Δf| between iterations.
    pub tol: f64,
    /// Convergence threshold on the Euclidean gradient norm.
    pub grad_tol: f64,
    pub gradient: GradientMethod,
    /// Extra jittered starts; the lowest objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-8,
            grad_tol: 1e-5,
            gradient: GradientMethod::Analytic,
            restarts: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub f_min: f64,
    /// Objective at the deterministic starting point.
    pub f_start: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

/// Deterministic starting values: free loadings 1, regressions and
/// covariances 0, residual variances half the sample variance, latent
/// variances half the variance of the latent's first indicator.
pub fn initial_values(ram: &RamMatrices, input: &CovInput) -> Vec<f64> {
    let p = ram.n_observed;
    let mut theta = vec![0.0; ram.k()];
    for (j, param) in ram.params.iter().enumerate() {
        theta[j] = match param.kind {
            ParamKind::Loading => 1.0,
            ParamKind::Regression | ParamKind::Covariance => 0.0,
            ParamKind::Variance => {
                let idx = ram.index_of(&param.lhs).expect("variable in RAM layout");
                if idx < p {
                    0.5 * input.s[(idx, idx)]
                } else {
                    let first = (0..p).find(|&i| ram.a[(i, idx)] != 0.0).or_else(|| {
                        ram.param_map
                            .iter()
                            .find(|e| e.matrix == MatrixId::A && e.col == idx && e.row < p)
                            .map(|e| e.row)
                    });
                    match first {
                        Some(i) => 0.5 * input.s[(i, i)],
                        None => 0.5,
                    }
                }
            }
        };
    }
    theta
}

/// Outcome of one BFGS run on a generic objective.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

/// BFGS with backtracking Armijo line search. `f` returns `None` outside the
/// admissible region, which the line search treats as +∞.
pub fn minimize_bfgs<F, G>(
    f: F,
    grad: G,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
    grad_tol: f64,
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> Option<f64>,
    G: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let k = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice()).ok_or(SemError::BadStart)?;
    let mut g = grad(x.as_slice()).map_err(|_| SemError::BadStart)?;
    let mut h = DMatrix::<f64>::identity(k, k);
    let mut fresh = true;
    let mut iterations = 0;

    if g.norm() <= grad_tol {
        return Ok(Minimum {
            x: x.as_slice().to_vec(),
            f: fx,
            gradient_norm: g.norm(),
            iterations,
            converged: true,
            stalled: false,
        });
    }

    let mut converged = false;
    let mut stalled = false;
    while iterations < max_iter {
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope.is_nan() || slope >= 0.0 {
            h = DMatrix::identity(k, k);
            fresh = true;
            d = -g.clone();
            slope = g.dot(&d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = &x + step * &d;
            if let Some(ft) = f(trial.as_slice()) {
                if ft.is_finite() && ft <= fx + ARMIJO_C1 * step * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                stalled = true;
                break;
            }
            h = DMatrix::identity(k, k);
            fresh = true;
            continue;
        };
        let g_new = match grad(x_new.as_slice()) {
            Ok(g) => g,
            Err(_) => {
                stalled = true;
                break;
            }
        };
        iterations += 1;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= rho * (&hy * s.transpose() + &s * hy.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
            fresh = false;
        }

        let df = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if df.abs() <= tol && g.norm() <= grad_tol {
            converged = true;
            break;
        }
    }
    let gradient_norm = g.norm();
    if stalled && gradient_norm <= grad_tol {
        converged = true;
    }
    Ok(Minimum {
        x: x.as_slice().to_vec(),
        f: fx,
        gradient_norm,
        iterations,
        converged,
        stalled,
    })
}

fn run_from(
    ram: &RamMatrices,
    input: &CovInput,
    start: &[f64],
    options: &FitOptions,
) -> Result<Minimum> {
    let objective = |t: &[f64]| discrepancy(ram, t, input).ok();
    match options.gradient {
        GradientMethod::Analytic => minimize_bfgs(
            objective,
            |t: &[f64]| analytic_gradient(ram, t, input),
            start,
            options.max_iter,
            options.tol,
            options.grad_tol,
        ),
        GradientMethod::FiniteDifference => minimize_bfgs(
            objective,
            |t: &[f64]| discrepancy_gradient(ram, t, input),
            start,
            options.max_iter,
            options.tol,
            options.grad_tol,
        ),
    }
}

fn jitter(theta0: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    theta0
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + 0.2 * v.abs().max(0.25) * z
        })
        .collect()
}

/// Maximum-likelihood fit from [`initial_values`], plus `options.restarts`
/// jittered starts drawn from a generator seeded with `options.seed`.
pub fn fit_ml(ram: &RamMatrices, input: &CovInput, options: &FitOptions) -> Result<FitResult> {
    let theta0 = initial_values(ram, input);
    let f_start = discrepancy(ram, &theta0, input).map_err(|e| match e {
        SemError::ImpliedNotPd | SemError::SingularPaths => SemError::BadStart,
        other => other,
    })?;
    let mut best = run_from(ram, input, &theta0, options)?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.restarts {
        let start = jitter(&theta0, &mut rng);
        let Ok(run) = run_from(ram, input, &start, options) else {
            continue;
        };
        let better = run.f < best.f || (run.f == best.f && run.iterations < best.iterations);
        if better {
            best = run;
        }
    }

    let mut warnings = Vec::new();
    if !best.converged {
        if best.iterations >= options.max_iter {
            warnings.push(format!(
                "did not converge within {} iterations (gradient norm {:.3e})",
                options.max_iter, best.gradient_norm
            ));
        } else {
            warnings.push(format!(
                "line search stalled before convergence (gradient norm {:.3e})",
                best.gradient_norm
            ));
        }
    }
    for (param, &value) in ram.params.iter().zip(&best.x) {
        if param.kind == ParamKind::Variance && value < 0.0 {
            warnings.push(format!(
                "Heywood case: variance `{}` estimated at {value:.4} < 0",
                param.label
            ));
        }
    }

    Ok(FitResult {
        theta_hat: best.x,
        f_min: best.f,
        f_start,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        warnings,
    })
}
