//! Model-specification language.
//!
//! The language is line oriented. Each non-blank line holds one statement:
//!
//! ```text
//! # measurement: latent =~ indicator + indicator ...
//! DCK =~ danish_citizen_tests + danske_talemaader
//! ECK =~ cnn_dm + 0.8*squad
//! # covariance or variance
//! DCK ~~ ECK
//! squad ~~ 0.5*squad
//! # regression: dependent ~ predictor + ...
//! ECK ~ DCK
//! ```
//!
//! A term may carry a prefix: a number fixes the parameter, `NA` frees it,
//! and an identifier attaches a label. `#` starts a comment.
//!
//! Every observed variable gets a free residual variance and every latent a
//! variance unless the variance is declared explicitly. Under the default
//! marker identification the first indicator of each latent is fixed to 1.0.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Free(Option<String>),
    Fixed(f64),
}

impl Param {
    pub fn is_free(&self) -> bool {
        matches!(self, Param::Free(_))
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            Param::Fixed(v) => Some(*v),
            Param::Free(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    pub latent: String,
    pub indicator: String,
    pub param: Param,
    /// First indicator of its latent written without a prefix.
    pub marker: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub a: String,
    pub b: String,
    pub param: Param,
}

impl Covariance {
    pub fn is_variance(&self) -> bool {
        self.a == self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub dependent: String,
    pub predictor: String,
    pub param: Param,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Identification {
    /// First loading of each latent fixed to 1.
    #[default]
    Marker,
    /// Latent variances fixed to 1, markers freed.
    StdLv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub latents: Vec<String>,
    pub observed: Vec<String>,
    pub loadings: Vec<Loading>,
    pub covariances: Vec<Covariance>,
    pub regressions: Vec<Regression>,
    pub identification: Identification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Loading,
    Regression,
    Covariance,
    Variance,
}

impl ParamKind {
    pub fn op(self) -> &'static str {
        match self {
            ParamKind::Loading => "=~",
            ParamKind::Regression => "~",
            ParamKind::Covariance | ParamKind::Variance => "~~",
        }
    }
}

/// One model parameter, free or fixed, with implicit variances resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDecl {
    pub kind: ParamKind,
    pub lhs: String,
    pub rhs: String,
    pub value: Param,
}

impl ParameterDecl {
    pub fn label(&self) -> String {
        format!("{}{}{}", self.lhs, self.kind.op(), self.rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentificationStatus {
    OverIdentified,
    JustIdentified,
    UnderIdentified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub free_parameters: usize,
    pub moments: usize,
    pub degrees_of_freedom: i64,
    pub status: IdentificationStatus,
    pub warnings: Vec<String>,
}

impl ModelSpec {
    pub fn is_latent(&self, name: &str) -> bool {
        self.latents.iter().any(|l| l == name)
    }

    pub fn with_identification(mut self, mode: Identification) -> Self {
        self.set_identification(mode);
        self
    }

    /// Switches identification mode. Auto markers are freed under `StdLv`
    /// and re-fixed to 1.0 under `Marker`; explicit prefixes are untouched.
    pub fn set_identification(&mut self, mode: Identification) {
        self.identification = mode;
        for l in self.loadings.iter_mut().filter(|l| l.marker) {
            l.param = match mode {
                Identification::Marker => Param::Fixed(1.0),
                Identification::StdLv => Param::Free(None),
            };
        }
    }

    /// Number of distinct sample moments, p(p+1)/2.
    pub fn moment_count(&self) -> usize {
        let p = self.observed.len();
        p * (p + 1) / 2
    }

    /// All parameters in index order: loadings, regressions, declared
    /// (co)variances, then implicit variances of observed and latent variables.
    pub fn parameters(&self) -> Vec<ParameterDecl> {
        let mut out = Vec::new();
        for l in &self.loadings {
            out.push(ParameterDecl {
                kind: ParamKind::Loading,
                lhs: l.latent.clone(),
                rhs: l.indicator.clone(),
                value: l.param.clone(),
            });
        }
        for r in &self.regressions {
            out.push(ParameterDecl {
                kind: ParamKind::Regression,
                lhs: r.dependent.clone(),
                rhs: r.predictor.clone(),
                value: r.param.clone(),
            });
        }
        for c in &self.covariances {
            out.push(ParameterDecl {
                kind: if c.is_variance() {
                    ParamKind::Variance
                } else {
                    ParamKind::Covariance
                },
                lhs: c.a.clone(),
                rhs: c.b.clone(),
                value: c.param.clone(),
            });
        }
        let declared: HashSet<&str> = self
            .covariances
            .iter()
            .filter(|c| c.is_variance())
            .map(|c| c.a.as_str())
            .collect();
        for name in &self.observed {
            if !declared.contains(name.as_str()) {
                out.push(ParameterDecl {
                    kind: ParamKind::Variance,
                    lhs: name.clone(),
                    rhs: name.clone(),
                    value: Param::Free(None),
                });
            }
        }
        for name in &self.latents {
            if !declared.contains(name.as_str()) {
                let value = match self.identification {
                    Identification::Marker => Param::Free(None),
                    Identification::StdLv => Param::Fixed(1.0),
                };
                out.push(ParameterDecl {
                    kind: ParamKind::Variance,
                    lhs: name.clone(),
                    rhs: name.clone(),
                    value,
                });
            }
        }
        out
    }

    pub fn free_parameter_count(&self) -> usize {
        self.parameters()
            .iter()
            .filter(|p| p.value.is_free())
            .count()
    }

    fn has_scale(&self, latent: &str, params: &[ParameterDecl]) -> bool {
        params.iter().any(|p| {
            let fixed_nonzero = matches!(p.value, Param::Fixed(v) if v != 0.0);
            fixed_nonzero
                && match p.kind {
                    ParamKind::Loading => p.lhs == latent,
                    ParamKind::Variance => p.lhs == latent,
                    _ => false,
                }
        })
    }

    pub fn validate_identification(&self) -> IdentificationReport {
        let params = self.parameters();
        let free = params.iter().filter(|p| p.value.is_free()).count();
        let moments = self.moment_count();
        let df = moments as i64 - free as i64;
        let mut warnings = Vec::new();
        let mut unscaled = false;
        for latent in &self.latents {
            let n_ind = self.loadings.iter().filter(|l| &l.latent == latent).count();
            if n_ind < 2 {
                warnings.push(format!(
                    "latent `{latent}` has {n_ind} indicator; its variance and the indicator residual are not separately identified without further constraints"
                ));
            }
            if !self.has_scale(latent, &params) {
                unscaled = true;
                warnings.push(format!(
                    "latent `{latent}` has no scale constraint (no fixed loading or fixed variance)"
                ));
            }
        }
        if df < 0 {
            warnings.push(format!(
                "{free} free parameters exceed {moments} sample moments (df = {df})"
            ));
        }
        let status = if df < 0 || unscaled {
            IdentificationStatus::UnderIdentified
        } else if df == 0 {
            IdentificationStatus::JustIdentified
        } else {
            IdentificationStatus::OverIdentified
        };
        IdentificationReport {
            free_parameters: free,
            moments,
            degrees_of_freedom: df,
            status,
            warnings,
        }
    }
}

pub fn validate_identification(spec: &ModelSpec) -> IdentificationReport {
    spec.validate_identification()
}

fn fmt_term(f: &mut fmt::Formatter<'_>, param: &Param, name: &str, bare: bool) -> fmt::Result {
    match param {
        _ if bare => write!(f, "{name}"),
        Param::Fixed(v) => write!(f, "{v:?}*{name}"),
        Param::Free(Some(label)) => write!(f, "{label}*{name}"),
        Param::Free(None) => write!(f, "NA*{name}"),
    }
}

impl fmt::Display for ModelSpec {
    /// Canonical source form; parsing it yields an equal spec (in marker mode).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut i = 0;
        while i < self.loadings.len() {
            let latent = &self.loadings[i].latent;
            write!(f, "{latent} =~ ")?;
            let mut j = i;
            while j < self.loadings.len() && &self.loadings[j].latent == latent {
                let l = &self.loadings[j];
                if j > i {
                    write!(f, " + ")?;
                }
                let first = seen.insert(latent.as_str());
                // Bare names re-parse as marker (first) or free (later).
                let bare = if first {
                    l.marker
                } else {
                    matches!(l.param, Param::Free(None))
                };
                fmt_term(f, &l.param, &l.indicator, bare)?;
                j += 1;
            }
            writeln!(f)?;
            i = j;
        }
        for r in &self.regressions {
            write!(f, "{} ~ ", r.dependent)?;
            let bare = matches!(r.param, Param::Free(None));
            fmt_term(f, &r.param, &r.predictor, bare)?;
            writeln!(f)?;
        }
        for c in &self.covariances {
            write!(f, "{} ~~ ", c.a)?;
            let bare = matches!(c.param, Param::Free(None));
            fmt_term(f, &c.param, &c.b, bare)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Measure,
    Covary,
    Regress,
}

#[derive(Debug, Clone, PartialEq)]
enum Prefix {
    None,
    Fixed(f64),
    Free,
    Label(String),
}

struct Term {
    prefix: Prefix,
    name: String,
}

struct Statement {
    line: usize,
    lhs: String,
    op: Op,
    terms: Vec<Term>,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> SemError {
    SemError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Splits `s` (starting at byte `offset` in the line) on `sep`, yielding
/// trimmed pieces with their 1-based column.
fn split_trimmed(s: &str, offset: usize, sep: char) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in s.char_indices().chain(std::iter::once((s.len(), sep))) {
        if c == sep {
            let piece = &s[start..i];
            let lead = piece.len() - piece.trim_start().len();
            out.push((piece.trim(), offset + start + lead + 1));
            start = i + c.len_utf8();
        }
    }
    out
}

fn parse_term(raw: &str, line: usize, column: usize) -> Result<Term> {
    if raw.is_empty() {
        return Err(syntax(line, column, "expected a variable name"));
    }
    let pieces = split_trimmed(raw, column - 1, '*');
    let (prefix, (name, name_col)) = match pieces.as_slice() {
        [single] => (Prefix::None, *single),
        [(pre, pre_col), name] => {
            let prefix = if *pre == "NA" {
                Prefix::Free
            } else if let Ok(v) = pre.parse::<f64>() {
                if !v.is_finite() {
                    return Err(syntax(line, *pre_col, "fixed value must be finite"));
                }
                Prefix::Fixed(v)
            } else if is_ident(pre) {
                Prefix::Label(pre.to_string())
            } else if pre.is_empty() {
                return Err(syntax(line, *pre_col, "missing value or label before `*`"));
            } else {
                return Err(syntax(line, *pre_col, format!("invalid prefix `{pre}`")));
            };
            (prefix, *name)
        }
        _ => {
            return Err(syntax(
                line,
                column,
                "a term may carry at most one `*` prefix",
            ))
        }
    };
    if !is_ident(name) {
        let msg = if name.is_empty() {
            "expected a variable name".to_string()
        } else {
            format!("invalid variable name `{name}`")
        };
        return Err(syntax(line, name_col, msg));
    }
    Ok(Term {
        prefix,
        name: name.to_string(),
    })
}

fn parse_statement(text: &str, line: usize) -> Result<Statement> {
    let (op, at, width) = if let Some(i) = text.find("=~") {
        (Op::Measure, i, 2)
    } else if let Some(i) = text.find("~~") {
        (Op::Covary, i, 2)
    } else if let Some(i) = text.find('~') {
        (Op::Regress, i, 1)
    } else {
        let col = text.len() - text.trim_start().len() + 1;
        return Err(syntax(
            line,
            col,
            "expected an operator (`=~`, `~~` or `~`)",
        ));
    };
    let lhs_raw = &text[..at];
    let lhs = lhs_raw.trim();
    let lhs_col = lhs_raw.len() - lhs_raw.trim_start().len() + 1;
    if lhs.is_empty() {
        return Err(syntax(line, at + 1, "missing left-hand side"));
    }
    if !is_ident(lhs) {
        return Err(syntax(
            line,
            lhs_col,
            format!("invalid variable name `{lhs}`"),
        ));
    }
    let rhs = &text[at + width..];
    if rhs.contains('~') {
        let pos = at + width + rhs.find('~').unwrap() + 1;
        return Err(syntax(line, pos, "unexpected second operator"));
    }
    let mut terms = Vec::new();
    for (piece, col) in split_trimmed(rhs, at + width, '+') {
        terms.push(parse_term(piece, line, col)?);
    }
    Ok(Statement {
        line,
        lhs: lhs.to_string(),
        op,
        terms,
    })
}

fn prefix_param(prefix: &Prefix) -> Param {
    match prefix {
        Prefix::None | Prefix::Free => Param::Free(None),
        Prefix::Fixed(v) => Param::Fixed(*v),
        Prefix::Label(l) => Param::Free(Some(l.clone())),
    }
}

fn push_unique(list: &mut Vec<String>, seen: &mut HashSet<String>, name: &str) {
    if seen.insert(name.to_string()) {
        list.push(name.to_string());
    }
}

/// Parses model source into a marker-identified [`ModelSpec`].
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let mut statements = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let code = raw.split('#').next().unwrap_or("");
        if code.trim().is_empty() {
            continue;
        }
        statements.push(parse_statement(code, idx + 1)?);
    }
    if statements.is_empty() {
        return Err(SemError::EmptyModel);
    }

    let mut latents = Vec::new();
    let mut latent_set = HashSet::new();
    for s in statements.iter().filter(|s| s.op == Op::Measure) {
        push_unique(&mut latents, &mut latent_set, &s.lhs);
    }

    let mut loadings: Vec<Loading> = Vec::new();
    let mut regressions: Vec<Regression> = Vec::new();
    let mut covariances: Vec<Covariance> = Vec::new();
    let mut has_marker: HashSet<String> = HashSet::new();
    let mut labels: HashMap<String, usize> = HashMap::new();

    for s in &statements {
        for t in &s.terms {
            if let Prefix::Label(label) = &t.prefix {
                if let Some(prev) = labels.insert(label.clone(), s.line) {
                    return Err(syntax(
                        s.line,
                        1,
                        format!(
                            "label `{label}` already used at line {prev}; equality constraints are not supported"
                        ),
                    ));
                }
            }
            match s.op {
                Op::Measure => {
                    if latent_set.contains(&t.name) {
                        return Err(SemError::LatentObservedClash(t.name.clone()));
                    }
                    if loadings
                        .iter()
                        .any(|l| l.latent == s.lhs && l.indicator == t.name)
                    {
                        return Err(SemError::Duplicate {
                            kind: "loading",
                            lhs: s.lhs.clone(),
                            op: "=~",
                            rhs: t.name.clone(),
                            line: s.line,
                        });
                    }
                    let first = has_marker.insert(s.lhs.clone());
                    let (param, marker) = match (&t.prefix, first) {
                        (Prefix::None, true) => (Param::Fixed(1.0), true),
                        (p, _) => (prefix_param(p), false),
                    };
                    loadings.push(Loading {
                        latent: s.lhs.clone(),
                        indicator: t.name.clone(),
                        param,
                        marker,
                    });
                }
                Op::Regress => {
                    if t.name == s.lhs {
                        return Err(syntax(
                            s.line,
                            1,
                            format!("`{}` regressed on itself", s.lhs),
                        ));
                    }
                    if regressions
                        .iter()
                        .any(|r| r.dependent == s.lhs && r.predictor == t.name)
                    {
                        return Err(SemError::Duplicate {
                            kind: "regression",
                            lhs: s.lhs.clone(),
                            op: "~",
                            rhs: t.name.clone(),
                            line: s.line,
                        });
                    }
                    regressions.push(Regression {
                        dependent: s.lhs.clone(),
                        predictor: t.name.clone(),
                        param: prefix_param(&t.prefix),
                    });
                }
                Op::Covary => {
                    if covariances
                        .iter()
                        .any(|c| (c.a == s.lhs && c.b == t.name) || (c.a == t.name && c.b == s.lhs))
                    {
                        return Err(SemError::Duplicate {
                            kind: "covariance",
                            lhs: s.lhs.clone(),
                            op: "~~",
                            rhs: t.name.clone(),
                            line: s.line,
                        });
                    }
                    covariances.push(Covariance {
                        a: s.lhs.clone(),
                        b: t.name.clone(),
                        param: prefix_param(&t.prefix),
                    });
                }
            }
        }
    }

    // Observed order is canonical (loadings, regressions, covariances) so
    // that it does not depend on how statements are interleaved.
    let mut observed = Vec::new();
    let mut seen = HashSet::new();
    let mut note = |name: &str| {
        if !latent_set.contains(name) {
            push_unique(&mut observed, &mut seen, name);
        }
    };
    for l in &loadings {
        note(&l.indicator);
    }
    for r in &regressions {
        note(&r.dependent);
        note(&r.predictor);
    }
    for c in &covariances {
        note(&c.a);
        note(&c.b);
    }

    Ok(ModelSpec {
        latents,
        observed,
        loadings,
        covariances,
        regressions,
        identification: Identification::Marker,
    })
}
