//! Test statistics, fit indices, standard errors and the standardized solution.

pub mod dist;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::CovInput;
use crate::error::{Result, SemError};
use crate::modelspec::ParamKind;
use crate::ram::{discrepancy, log_det_pd, MatrixId, RamMatrices};

pub use dist::{chisq_sf, normal_cdf, two_sided_p};

/// T = (n − 1)·F_ML.
pub fn chi_square_stat(f_min: f64, n: usize) -> f64 {
    (n as f64 - 1.0) * f_min
}

/// Test statistic and df of the independence model. Its ML optimum is
/// `diag(S)`, so `F_b = −ln det R` with `R` the sample correlation matrix.
pub fn baseline_discrepancy(input: &CovInput) -> Result<(f64, i64)> {
    let p = input.p();
    let ln_det_s = log_det_pd(&input.s).ok_or(SemError::SampleNotPd)?;
    let ln_diag: f64 = (0..p).map(|i| input.s[(i, i)].ln()).sum();
    let f_b = ln_diag - ln_det_s;
    let df_b = (p * (p.saturating_sub(1)) / 2) as i64;
    Ok((chi_square_stat(f_b.max(0.0), input.n), df_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    #[serde(with = "crate::report::nan_as_null")]
    pub chi2: f64,
    pub df: i64,
    #[serde(with = "crate::report::nan_as_null")]
    pub pvalue: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub chi2_baseline: f64,
    pub df_baseline: i64,
    /// Not clamped to [0, 1] unless requested.
    #[serde(with = "crate::report::nan_as_null")]
    pub cfi: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub rmsea: f64,
}

/// CFI = 1 − (T − df)/(T_b − df_b) and RMSEA = sqrt(max(T − df, 0)/(df·(n − 1))).
/// With df = 0 the model is saturated: CFI is 1, RMSEA 0 and p 1.
/// Returns the indices together with any warnings.
pub fn fit_indices(
    t: f64,
    df: i64,
    t_baseline: f64,
    df_baseline: i64,
    n: usize,
    clamp_cfi: bool,
) -> Result<(FitIndices, Vec<String>)> {
    if df < 0 {
        return Err(SemError::Invalid(format!(
            "negative degrees of freedom ({df})"
        )));
    }
    let mut warnings = Vec::new();
    let dff = df as f64;
    let denom = t_baseline - df_baseline as f64;
    let mut cfi = if denom > 0.0 && df == 0 {
        // A saturated model reproduces S exactly; any T left is optimizer residue.
        1.0
    } else if denom > 0.0 {
        1.0 - (t - dff) / denom
    } else {
        warnings.push(format!(
            "baseline model is degenerate (T_b = {t_baseline:.4} <= df_b = {df_baseline}); CFI undefined"
        ));
        f64::NAN
    };
    if clamp_cfi && cfi.is_finite() {
        cfi = cfi.clamp(0.0, 1.0);
    }
    let (rmsea, pvalue) = if df == 0 {
        warnings.push(
            "df = 0: CFI reported as 1, RMSEA as 0; the chi-square test is uninformative".into(),
        );
        (0.0, 1.0)
    } else {
        let r = ((t - dff).max(0.0) / (dff * (n as f64 - 1.0))).sqrt();
        (r, chisq_sf(t, df)?)
    };
    Ok((
        FitIndices {
            chi2: t,
            df,
            pvalue,
            chi2_baseline: t_baseline,
            df_baseline,
            cfi,
            rmsea,
        },
        warnings,
    ))
}

/// Symmetrized central-difference Hessian of F_ML with step `1e-4·max(1, |θ_j|)`.
pub fn discrepancy_hessian(
    ram: &RamMatrices,
    theta: &[f64],
    input: &CovInput,
) -> Result<DMatrix<f64>> {
    let k = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| 1e-4 * t.abs().max(1.0)).collect();
    let f0 = discrepancy(ram, theta, input)?;
    let mut x = theta.to_vec();
    let eval = |x: &[f64]| discrepancy(ram, x, input);
    let mut hess = DMatrix::zeros(k, k);
    for i in 0..k {
        x[i] = theta[i] + h[i];
        let up = eval(&x)?;
        x[i] = theta[i] - h[i];
        let down = eval(&x)?;
        x[i] = theta[i];
        hess[(i, i)] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let v = eval(&x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Asymptotic covariance of θ̂, `(2/(n−1))·H⁻¹`, or `None` when the Hessian is
/// not positive definite. Eigenvalues below 1e-7 of the largest count as zero,
/// which is where finite-difference noise sits for a flat direction.
pub fn parameter_covariance(hessian: &DMatrix<f64>, n: usize) -> Option<DMatrix<f64>> {
    let k = hessian.nrows();
    if k == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let eig = hessian.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    if max.is_nan() || max <= 0.0 || eig.eigenvalues.min() <= 1e-7 * max {
        return None;
    }
    let chol = hessian.clone().cholesky()?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(inv * (2.0 / (n as f64 - 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardErrors {
    pub se: Vec<f64>,
    /// Asymptotic covariance of θ̂ (NaN-filled when unavailable).
    pub covariance: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// SE_j = sqrt([(2/(n−1))·H⁻¹]_jj). A Hessian that cannot be evaluated or is
/// not positive definite yields NaN standard errors and a warning.
pub fn standard_errors(ram: &RamMatrices, theta_hat: &[f64], input: &CovInput) -> StandardErrors {
    let k = theta_hat.len();
    let nan = || {
        StandardErrors {
        se: vec![f64::NAN; k],
        covariance: DMatrix::from_element(k, k, f64::NAN),
        warnings: vec![
            "information matrix is singular or not positive definite: possible under-identification; standard errors unavailable"
                .into(),
        ],
    }
    };
    let Ok(hess) = discrepancy_hessian(ram, theta_hat, input) else {
        return nan();
    };
    match parameter_covariance(&hess, input.n) {
        Some(cov) => StandardErrors {
            se: (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
            covariance: cov,
            warnings: Vec::new(),
        },
        None => nan(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTest {
    pub z: f64,
    pub pvalue: f64,
}

/// Wald test of estimate = 0: z = estimate/SE, p = 2(1 − Φ(|z|)).
pub fn z_test(estimate: f64, se: f64) -> ZTest {
    if se == 0.0 {
        return if estimate == 0.0 {
            ZTest {
                z: 0.0,
                pvalue: 1.0,
            }
        } else {
            ZTest {
                z: f64::INFINITY.copysign(estimate),
                pvalue: 0.0,
            }
        };
    }
    let z = estimate / se;
    ZTest {
        z,
        pvalue: two_sided_p(z),
    }
}

pub fn parameter_tests(estimates: &[f64], ses: &[f64]) -> Vec<ZTest> {
    estimates
        .iter()
        .zip(ses)
        .map(|(&e, &s)| z_test(e, s))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedSolution {
    /// Standardized value of every entry of `ram.all_params`, in order.
    pub values: Vec<f64>,
    pub latents: Vec<String>,
    /// Model-implied latent correlation matrix.
    pub latent_correlations: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl StandardizedSolution {
    pub fn correlation(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.latents.iter().position(|l| l == a)?;
        let j = self.latents.iter().position(|l| l == b)?;
        Some(self.latent_correlations[(i, j)])
    }
}

/// Rescales all parameters so every variable has unit model-implied variance.
/// Paths become `value·sd(source)/sd(target)` and (co)variances
/// `value/(sd_i·sd_j)`; latent covariances become correlations.
pub fn standardized_solution(ram: &RamMatrices, theta: &[f64]) -> Result<StandardizedSolution> {
    let c = ram.implied_full(theta)?;
    let m = ram.m();
    let mut warnings = Vec::new();
    let sd: Vec<f64> = (0..m)
        .map(|i| {
            let v = c[(i, i)];
            if v > 0.0 {
                v.sqrt()
            } else {
                warnings.push(format!(
                    "Heywood case: implied variance of `{}` is {v:.4}; standardized values involving it are NaN",
                    ram.names[i]
                ));
                f64::NAN
            }
        })
        .collect();
    let values = ram
        .all_params
        .iter()
        .map(|p| {
            let v = p.value(theta);
            match p.matrix {
                MatrixId::A => v * sd[p.col] / sd[p.row],
                MatrixId::S => v / (sd[p.row] * sd[p.col]),
            }
        })
        .collect();
    let p = ram.n_observed;
    let q = m - p;
    let latent_correlations =
        DMatrix::from_fn(q, q, |i, j| c[(p + i, p + j)] / (sd[p + i] * sd[p + j]));
    Ok(StandardizedSolution {
        values,
        latents: ram.names[p..].to_vec(),
        latent_correlations,
        warnings,
    })
}

/// Delta-method standard errors of the standardized values, using a
/// central-difference Jacobian of [`standardized_solution`].
pub fn standardized_errors(
    ram: &RamMatrices,
    theta: &[f64],
    covariance: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let base = standardized_solution(ram, theta)?.values;
    let k = theta.len();
    let mut jac = DMatrix::zeros(base.len(), k);
    let mut x = theta.to_vec();
    for j in 0..k {
        let h = 1e-6 * theta[j].abs().max(1.0);
        x[j] = theta[j] + h;
        let up = standardized_solution(ram, &x)?.values;
        x[j] = theta[j] - h;
        let down = standardized_solution(ram, &x)?.values;
        x[j] = theta[j];
        for i in 0..base.len() {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    let var = &jac * covariance * jac.transpose();
    Ok((0..base.len())
        .map(|i| {
            if ram.all_params[i].free.is_none() && jac.row(i).iter().all(|v| *v == 0.0) {
                0.0
            } else {
                var[(i, i)].max(0.0).sqrt()
            }
        })
        .collect())
}

/// Row of the parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub label: String,
    pub kind: ParamKind,
    pub free: bool,
    pub estimate: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub se: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub z: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub pvalue: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub std: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub std_se: f64,
}

/// Latent correlation with its delta-method Wald test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCorrelation {
    pub a: String,
    pub b: String,
    #[serde(with = "crate::report::nan_as_null")]
    pub rho: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub se: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub z: f64,
    #[serde(with = "crate::report::nan_as_null")]
    pub pvalue: f64,
}

/// Builds the parameter table for every model parameter, free and fixed.
pub fn parameter_table(
    ram: &RamMatrices,
    theta: &[f64],
    se: &StandardErrors,
) -> Result<(Vec<ParameterRow>, Vec<String>)> {
    let std = standardized_solution(ram, theta)?;
    let mut warnings = std.warnings.clone();
    let std_se = if se.se.iter().all(|s| s.is_finite()) {
        standardized_errors(ram, theta, &se.covariance)?
    } else {
        vec![f64::NAN; ram.all_params.len()]
    };
    let rows = ram
        .all_params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let estimate = p.value(theta);
            let (se_j, test) = match p.free {
                Some(j) if se.se[j].is_finite() => (se.se[j], z_test(estimate, se.se[j])),
                Some(_) => (
                    f64::NAN,
                    ZTest {
                        z: f64::NAN,
                        pvalue: f64::NAN,
                    },
                ),
                None => (
                    f64::NAN,
                    ZTest {
                        z: f64::NAN,
                        pvalue: f64::NAN,
                    },
                ),
            };
            ParameterRow {
                label: p.label.clone(),
                kind: p.kind,
                free: p.free.is_some(),
                estimate,
                se: se_j,
                z: test.z,
                pvalue: test.pvalue,
                std: std.values[i],
                std_se: std_se[i],
            }
        })
        .collect::<Vec<_>>();
    for p in ram
        .all_params
        .iter()
        .filter(|p| p.kind == ParamKind::Variance)
    {
        let v = p.value(theta);
        if v < 0.0 && p.free.is_some() {
            let msg = format!(
                "Heywood case: variance `{}` estimated at {v:.4} < 0",
                p.label
            );
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
        }
    }
    Ok((rows, warnings))
}

/// Correlations for every declared covariance between two latents.
pub fn latent_correlations(ram: &RamMatrices, rows: &[ParameterRow]) -> Vec<LatentCorrelation> {
    let p = ram.n_observed;
    ram.all_params
        .iter()
        .zip(rows)
        .filter(|(param, _)| {
            param.kind == ParamKind::Covariance && param.row >= p && param.col >= p
        })
        .map(|(param, row)| {
            let test = if row.std_se.is_finite() {
                z_test(row.std, row.std_se)
            } else {
                ZTest {
                    z: f64::NAN,
                    pvalue: f64::NAN,
                }
            };
            LatentCorrelation {
                a: param.lhs.clone(),
                b: param.rhs.clone(),
                rho: row.std,
                se: row.std_se,
                z: test.z,
                pvalue: test.pvalue,
            }
        })
        .collect()
}

/// Gradient norm of F_ML at `theta` by central differences; used to check
/// stationarity independently of the optimizer's gradient.
pub fn fd_gradient_norm(ram: &RamMatrices, theta: &[f64], input: &CovInput) -> Result<f64> {
    let g: DVector<f64> = crate::ram::discrepancy_gradient(ram, theta, input)?;
    Ok(g.norm())
}
