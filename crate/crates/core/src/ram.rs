//! Reticular action model.
//!
//! Variables are ordered observed first, then latents (m = p + q). Paths live
//! in `A` (row = target, column = source), variances and covariances in the
//! symmetric `S`, and `F` selects the observed rows. The implied covariance is
//!
//! ```text
//! Σ(θ) = F (I − A)⁻¹ S (I − A)⁻ᵀ Fᵀ
//! ```
//!
//! and the ML discrepancy is `ln|Σ| − ln|S_sample| + tr(S_sample Σ⁻¹) − p`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::CovInput;
use crate::error::{Result, SemError};
use crate::modelspec::{ModelSpec, Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixId {
    A,
    S,
}

/// A free entry of `A` or `S`. Off-diagonal `S` parameters appear twice,
/// once per triangle, with the same index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamEntry {
    pub matrix: MatrixId,
    pub row: usize,
    pub col: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeParam {
    pub label: String,
    pub kind: ParamKind,
    pub lhs: String,
    pub rhs: String,
}

/// Every model parameter, fixed or free, with its matrix position.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParam {
    pub label: String,
    pub kind: ParamKind,
    pub lhs: String,
    pub rhs: String,
    pub matrix: MatrixId,
    pub row: usize,
    pub col: usize,
    /// Index into theta when free.
    pub free: Option<usize>,
    /// Value when fixed.
    pub fixed: f64,
}

impl ModelParam {
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.free.map_or(self.fixed, |i| theta[i])
    }
}

#[derive(Debug, Clone)]
pub struct RamMatrices {
    pub names: Vec<String>,
    pub n_observed: usize,
    /// Fixed part of the path matrix; free entries hold 0.
    pub a: DMatrix<f64>,
    /// Fixed part of the (co)variance matrix; free entries hold 0.
    pub s: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub param_map: Vec<ParamEntry>,
    pub params: Vec<FreeParam>,
    pub all_params: Vec<ModelParam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedCov {
    pub sigma: DMatrix<f64>,
}

impl RamMatrices {
    pub fn k(&self) -> usize {
        self.params.len()
    }

    pub fn m(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param_index(&self, label: &str) -> Option<usize> {
        self.params.iter().position(|p| p.label == label)
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.k() {
            return Err(SemError::ThetaLength {
                expected: self.k(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// `A` and `S` with `theta` written into the free entries.
    pub fn fill(&self, theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_len(theta)?;
        let mut a = self.a.clone();
        let mut s = self.s.clone();
        for e in &self.param_map {
            match e.matrix {
                MatrixId::A => a[(e.row, e.col)] = theta[e.index],
                MatrixId::S => s[(e.row, e.col)] = theta[e.index],
            }
        }
        Ok((a, s))
    }

    /// `(I − A)⁻¹`.
    pub fn path_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = a.nrows();
        let i_minus_a = DMatrix::identity(m, m) - a;
        let inv = i_minus_a.try_inverse().ok_or(SemError::SingularPaths)?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(SemError::SingularPaths);
        }
        Ok(inv)
    }

    /// Covariance of all m variables, `(I − A)⁻¹ S (I − A)⁻ᵀ`.
    pub fn implied_full(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let (a, s) = self.fill(theta)?;
        let b = Self::path_inverse(&a)?;
        Ok(symmetrize(&b * s * b.transpose()))
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Lays out the RAM matrices for `spec`: observed then latents, free
/// parameters indexed in [`ModelSpec::parameters`] order.
pub fn build_ram(spec: &ModelSpec) -> RamMatrices {
    let p = spec.observed.len();
    let names: Vec<String> = spec
        .observed
        .iter()
        .chain(spec.latents.iter())
        .cloned()
        .collect();
    let m = names.len();
    let pos = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .expect("known variable")
    };

    let mut a = DMatrix::zeros(m, m);
    let mut s = DMatrix::zeros(m, m);
    let mut f = DMatrix::zeros(p, m);
    for i in 0..p {
        f[(i, i)] = 1.0;
    }
    let mut param_map = Vec::new();
    let mut params = Vec::new();
    let mut all_params = Vec::new();

    for decl in spec.parameters() {
        let (matrix, row, col) = match decl.kind {
            // Loading `L =~ x`: path from L into x.
            ParamKind::Loading => (MatrixId::A, pos(&decl.rhs), pos(&decl.lhs)),
            // Regression `y ~ x`: path from x into y.
            ParamKind::Regression => (MatrixId::A, pos(&decl.lhs), pos(&decl.rhs)),
            ParamKind::Covariance | ParamKind::Variance => {
                (MatrixId::S, pos(&decl.lhs), pos(&decl.rhs))
            }
        };
        let mut entry = ModelParam {
            label: decl.label(),
            kind: decl.kind,
            lhs: decl.lhs.clone(),
            rhs: decl.rhs.clone(),
            matrix,
            row,
            col,
            free: None,
            fixed: 0.0,
        };
        match decl.value {
            Param::Fixed(v) => {
                entry.fixed = v;
                match matrix {
                    MatrixId::A => a[(row, col)] = v,
                    MatrixId::S => {
                        s[(row, col)] = v;
                        s[(col, row)] = v;
                    }
                }
            }
            Param::Free(_) => {
                let index = params.len();
                entry.free = Some(index);
                param_map.push(ParamEntry {
                    matrix,
                    row,
                    col,
                    index,
                });
                if matrix == MatrixId::S && row != col {
                    param_map.push(ParamEntry {
                        matrix,
                        row: col,
                        col: row,
                        index,
                    });
                }
                params.push(FreeParam {
                    label: decl.label(),
                    kind: decl.kind,
                    lhs: decl.lhs.clone(),
                    rhs: decl.rhs.clone(),
                });
            }
        }
        all_params.push(entry);
    }

    RamMatrices {
        names,
        n_observed: p,
        a,
        s,
        f,
        param_map,
        params,
        all_params,
    }
}

pub fn implied_covariance(ram: &RamMatrices, theta: &[f64]) -> Result<ImpliedCov> {
    let (a, s) = ram.fill(theta)?;
    let b = RamMatrices::path_inverse(&a)?;
    let g = &ram.f * &b;
    let sigma = &g * s * g.transpose();
    Ok(ImpliedCov {
        sigma: symmetrize(sigma),
    })
}

/// Eigen-decomposition of a symmetric matrix, rejecting it unless the
/// smallest eigenvalue exceeds 1e-12 times the largest.
pub(crate) fn pd_eigen(m: &DMatrix<f64>) -> Option<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 || min <= 1e-12 * max {
        return None;
    }
    Some(eig)
}

pub(crate) fn inverse_from_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    symmetrize(v * DMatrix::from_diagonal(&inv_vals) * v.transpose())
}

pub fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    pd_eigen(m).map(|e| e.eigenvalues.iter().map(|l| l.ln()).sum())
}

pub fn ml_discrepancy(sigma: &ImpliedCov, input: &CovInput) -> Result<f64> {
    let p = input.p();
    if sigma.sigma.nrows() != p {
        return Err(SemError::Invalid(format!(
            "implied covariance is {}x{}, sample is {p}x{p}",
            sigma.sigma.nrows(),
            sigma.sigma.ncols()
        )));
    }
    let ln_det_s = log_det_pd(&input.s).ok_or(SemError::SampleNotPd)?;
    let eig = pd_eigen(&sigma.sigma).ok_or(SemError::ImpliedNotPd)?;
    let ln_det_sigma: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let inv = inverse_from_eigen(&eig);
    let trace = (&input.s * inv).trace();
    Ok(ln_det_sigma - ln_det_s + trace - p as f64)
}

/// F_ML at `theta`.
pub fn discrepancy(ram: &RamMatrices, theta: &[f64], input: &CovInput) -> Result<f64> {
    ml_discrepancy(&implied_covariance(ram, theta)?, input)
}

/// Central-difference gradient of F_ML with step `1e-6·max(1, |θ_j|)`. When a
/// perturbed point leaves the admissible region the step is halved, up to
/// three times.
pub fn discrepancy_gradient(
    ram: &RamMatrices,
    theta: &[f64],
    input: &CovInput,
) -> Result<DVector<f64>> {
    ram.check_len(theta)?;
    let k = theta.len();
    let mut grad = DVector::zeros(k);
    let mut point = theta.to_vec();
    for j in 0..k {
        let mut h = 1e-6 * theta[j].abs().max(1.0);
        let mut attempt = 0;
        grad[j] = loop {
            point[j] = theta[j] + h;
            let up = discrepancy(ram, &point, input);
            point[j] = theta[j] - h;
            let down = discrepancy(ram, &point, input);
            point[j] = theta[j];
            match (up, down) {
                (Ok(u), Ok(d)) => break (u - d) / (2.0 * h),
                (Err(e), _) | (_, Err(e)) => {
                    if attempt == 3
                        || !matches!(e, SemError::ImpliedNotPd | SemError::SingularPaths)
                    {
                        return Err(e);
                    }
                    attempt += 1;
                    h *= 0.5;
                }
            }
        };
    }
    Ok(grad)
}

/// Closed-form gradient of F_ML.
///
/// With `B = (I − A)⁻¹`, `G = F B` and `W = Σ⁻¹ (Σ − S) Σ⁻¹`, an `S` entry
/// (i, j) contributes `(Gᵀ W G)ᵢⱼ` and an `A` entry (i, j) contributes
/// `2 (B S Gᵀ W G)ⱼᵢ`.
pub fn analytic_gradient(
    ram: &RamMatrices,
    theta: &[f64],
    input: &CovInput,
) -> Result<DVector<f64>> {
    let (a, s) = ram.fill(theta)?;
    let b = RamMatrices::path_inverse(&a)?;
    let g = &ram.f * &b;
    let sigma = symmetrize(&g * &s * g.transpose());
    let eig = pd_eigen(&sigma).ok_or(SemError::ImpliedNotPd)?;
    let inv = inverse_from_eigen(&eig);
    let w = &inv - &inv * &input.s * &inv;
    let gwg = g.transpose() * w * &g;
    let mut bsgwg = None;
    let mut grad = DVector::zeros(ram.k());
    for e in &ram.param_map {
        match e.matrix {
            MatrixId::S => grad[e.index] += gwg[(e.row, e.col)],
            MatrixId::A => {
                let n = bsgwg.get_or_insert_with(|| &b * &s * &gwg);
                grad[e.index] += 2.0 * n[(e.col, e.row)];
            }
        }
    }
    Ok(grad)
}
