//! End-to-end analysis of a model against a score table, and the report it produces.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{align_and_covariance, CovOptions, ScoreTable};
use crate::error::{Result, SemError};
use crate::inference::{
    baseline_discrepancy, chi_square_stat, fit_indices, latent_correlations, parameter_table,
    standard_errors, FitIndices, LatentCorrelation, ParameterRow,
};
use crate::modelspec::{Identification, IdentificationReport, IdentificationStatus, ModelSpec};
use crate::optimizer::{fit_ml, FitOptions, FitResult};
use crate::ram::build_ram;

pub const CFI_THRESHOLD: f64 = 0.95;
pub const RMSEA_THRESHOLD: f64 = 0.06;

pub const THRESHOLD_NOTE: &str = "CFI > 0.95 and RMSEA < 0.06 are conventional cut-offs. \
Treat them as one piece of evidence next to the estimates, not as a mechanical accept/reject rule.";

/// Serializes non-finite floats as JSON `null` and reads `null` back as NaN.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub identification: Identification,
    pub standardize: bool,
    pub clamp_cfi: bool,
    /// Fit even when the model is under-identified.
    pub force: bool,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub converged: bool,
    pub iterations: usize,
    pub f_min: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub cfi_above_threshold: bool,
    pub rmsea_below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub n: usize,
    pub p: usize,
    pub deleted_rows: usize,
    pub identification: IdentificationReport,
    pub optimizer: OptimizerSummary,
    pub fit: FitIndices,
    pub parameters: Vec<ParameterRow>,
    pub latent_correlations: Vec<LatentCorrelation>,
    pub warnings: Vec<String>,
    pub note: String,
    /// Full optimizer output, for DOT labelling.
    #[serde(skip)]
    pub fit_result: Option<FitResult>,
}

impl FitReport {
    /// Threshold verdicts, always derived from the stored indices. NaN fails both.
    pub fn verdicts(&self) -> Verdicts {
        Verdicts {
            cfi_above_threshold: self.fit.cfi > CFI_THRESHOLD,
            rmsea_below_threshold: self.fit.rmsea < RMSEA_THRESHOLD,
        }
    }

    /// JSON with a `verdicts` object computed at serialization time.
    pub fn to_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value["verdicts"] = serde_json::to_value(self.verdicts()).expect("verdicts serialize");
        value
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SemError::Invalid(format!("report JSON: {e}")))
    }

    pub fn parameter(&self, label: &str) -> Option<&ParameterRow> {
        self.parameters.iter().find(|p| p.label == label)
    }
}

/// Parses, checks identification, fits and assembles the full report.
///
/// An under-identified model is refused with [`SemError::UnderIdentified`]
/// unless `options.force` is set. Non-convergence is not an error; it is
/// recorded in `optimizer.converged`.
pub fn analyze(
    spec: &ModelSpec,
    table: &ScoreTable,
    options: &AnalysisOptions,
) -> Result<FitReport> {
    let spec = spec.clone().with_identification(options.identification);
    let identification = spec.validate_identification();
    if identification.status == IdentificationStatus::UnderIdentified && !options.force {
        return Err(SemError::UnderIdentified(
            identification.warnings.join("; "),
        ));
    }
    let input = align_and_covariance(
        table,
        &spec,
        CovOptions {
            standardize: options.standardize,
        },
    )?;
    let ram = build_ram(&spec);
    let fit = fit_ml(&ram, &input, &options.fit)?;

    let mut warnings = input.warnings.clone();
    warnings.extend(identification.warnings.iter().cloned());
    warnings.extend(fit.warnings.iter().cloned());

    let t = chi_square_stat(fit.f_min, input.n);
    let (t_b, df_b) = baseline_discrepancy(&input)?;
    let df = identification.degrees_of_freedom;
    let fit_idx = if df >= 0 {
        let (idx, w) = fit_indices(t, df, t_b, df_b, input.n, options.clamp_cfi)?;
        warnings.extend(w);
        idx
    } else {
        FitIndices {
            chi2: t,
            df,
            pvalue: f64::NAN,
            chi2_baseline: t_b,
            df_baseline: df_b,
            cfi: f64::NAN,
            rmsea: f64::NAN,
        }
    };

    let se = standard_errors(&ram, &fit.theta_hat, &input);
    warnings.extend(se.warnings.iter().cloned());
    let (parameters, w) = parameter_table(&ram, &fit.theta_hat, &se)?;
    for msg in w {
        if !warnings.contains(&msg) {
            warnings.push(msg);
        }
    }
    let correlations = latent_correlations(&ram, &parameters);

    Ok(FitReport {
        model: spec.to_string(),
        n: input.n,
        p: input.p(),
        deleted_rows: input.deleted,
        identification,
        optimizer: OptimizerSummary {
            converged: fit.converged,
            iterations: fit.iterations,
            f_min: fit.f_min,
            gradient_norm: fit.gradient_norm,
        },
        fit: fit_idx,
        parameters,
        latent_correlations: correlations,
        warnings,
        note: THRESHOLD_NOTE.to_string(),
        fit_result: Some(fit),
    })
}

fn num(v: f64, width: usize, prec: usize) -> String {
    if v.is_nan() {
        format!("{:>width$}", "NA")
    } else {
        format!("{v:>width$.prec$}")
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Human-readable report.
pub fn render_text(report: &FitReport) -> String {
    let mut out = String::new();
    let id = &report.identification;
    let _ = writeln!(out, "Model");
    for line in report.model.lines() {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(
        out,
        "\nData: n = {} complete rows, p = {} observed ({} rows dropped)",
        report.n, report.p, report.deleted_rows
    );
    let _ = writeln!(
        out,
        "Identification: {:?} (free parameters {}, moments {}, df {})",
        id.status, id.free_parameters, id.moments, id.degrees_of_freedom
    );
    let o = &report.optimizer;
    let _ = writeln!(
        out,
        "Optimizer: converged = {}, iterations = {}, F_ML = {:.6e}, |grad| = {:.2e}",
        o.converged, o.iterations, o.f_min, o.gradient_norm
    );

    let f = &report.fit;
    let v = report.verdicts();
    let _ = writeln!(out, "\nFit");
    let _ = writeln!(
        out,
        "  chi2 = {:.4}  df = {}  p = {}",
        f.chi2,
        f.df,
        num(f.pvalue, 0, 4)
    );
    let _ = writeln!(
        out,
        "  baseline chi2 = {:.4}  df = {}",
        f.chi2_baseline, f.df_baseline
    );
    let _ = writeln!(
        out,
        "  CFI   = {}   (> {CFI_THRESHOLD}: {})",
        num(f.cfi, 0, 4),
        yes_no(v.cfi_above_threshold)
    );
    let _ = writeln!(
        out,
        "  RMSEA = {}   (< {RMSEA_THRESHOLD}: {})",
        num(f.rmsea, 0, 4),
        yes_no(v.rmsea_below_threshold)
    );

    let width = report
        .parameters
        .iter()
        .map(|p| p.label.len())
        .max()
        .unwrap_or(5)
        .max(9);
    let _ = writeln!(out, "\nParameters");
    let _ = writeln!(
        out,
        "  {:<width$} {:>10} {:>10} {:>9} {:>9} {:>9}",
        "parameter", "estimate", "se", "z", "p", "std"
    );
    for p in &report.parameters {
        let _ = writeln!(
            out,
            "  {:<width$} {} {} {} {} {}{}",
            p.label,
            num(p.estimate, 10, 4),
            num(p.se, 10, 4),
            num(p.z, 9, 3),
            num(p.pvalue, 9, 4),
            num(p.std, 9, 4),
            if p.free { "" } else { "  (fixed)" }
        );
    }

    if !report.latent_correlations.is_empty() {
        let _ = writeln!(out, "\nLatent correlations");
        for c in &report.latent_correlations {
            let _ = writeln!(
                out,
                "  {} ~~ {}: rho = {}  se = {}  z = {}  p = {}",
                c.a,
                c.b,
                num(c.rho, 0, 4),
                num(c.se, 0, 4),
                num(c.z, 0, 3),
                num(c.pvalue, 0, 4)
            );
        }
    }

    if !report.warnings.is_empty() {
        let _ = writeln!(out, "\nWarnings");
        for w in &report.warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
    let _ = writeln!(out, "\nNote: {}", report.note);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelspec::parse_model;

    fn dummy(cfi: f64, rmsea: f64) -> FitReport {
        FitReport {
            model: "A =~ x + y + z\n".into(),
            n: 10,
            p: 3,
            deleted_rows: 0,
            identification: parse_model("A =~ x + y + z")
                .unwrap()
                .validate_identification(),
            optimizer: OptimizerSummary {
                converged: true,
                iterations: 3,
                f_min: 0.0,
                gradient_norm: 0.0,
            },
            fit: FitIndices {
                chi2: 1.0,
                df: 0,
                pvalue: f64::NAN,
                chi2_baseline: 10.0,
                df_baseline: 3,
                cfi,
                rmsea,
            },
            parameters: vec![],
            latent_correlations: vec![],
            warnings: vec![],
            note: THRESHOLD_NOTE.into(),
            fit_result: None,
        }
    }

    #[test]
    fn verdicts_follow_numbers() {
        assert_eq!(
            dummy(0.97, 0.02).verdicts(),
            Verdicts {
                cfi_above_threshold: true,
                rmsea_below_threshold: true
            }
        );
        assert_eq!(
            dummy(0.95, 0.06).verdicts(),
            Verdicts {
                cfi_above_threshold: false,
                rmsea_below_threshold: false
            }
        );
        assert!(!dummy(f64::NAN, 0.0).verdicts().cfi_above_threshold);
    }

    #[test]
    fn json_round_trip_preserves_verdicts() {
        let r = dummy(1.02, 0.0);
        let json = r.to_json();
        assert!(json["fit"]["pvalue"].is_null());
        let back = FitReport::from_json(&json.to_string()).unwrap();
        assert!(back.fit.pvalue.is_nan());
        let stored: Verdicts = serde_json::from_value(json["verdicts"].clone()).unwrap();
        assert_eq!(back.verdicts(), stored);
    }
}
