//! Graphviz path diagrams: latents as ellipses, observed variables as boxes,
//! directed edges for loadings and regressions, dashed two-headed edges for
//! covariances.

use std::fmt::Write as _;

use crate::modelspec::{ModelSpec, ParamKind};
use crate::optimizer::FitResult;
use crate::ram::build_ram;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT text for `spec`. With a fit, each edge is labelled with its estimate.
pub fn export_dot(spec: &ModelSpec, fit: Option<&FitResult>) -> String {
    let ram = build_ram(spec);
    let mut out = String::new();
    out.push_str("digraph sem {\n  rankdir=LR;\n");
    for l in &spec.latents {
        let _ = writeln!(out, "  {} [shape=ellipse];", quote(l));
    }
    for o in &spec.observed {
        let _ = writeln!(out, "  {} [shape=box];", quote(o));
    }
    for p in &ram.all_params {
        let label = match fit {
            Some(f) if f.theta_hat.len() == ram.k() => {
                format!(" label=\"{:.2}\"", p.value(&f.theta_hat))
            }
            _ => String::new(),
        };
        match p.kind {
            ParamKind::Loading => {
                let _ = writeln!(
                    out,
                    "  {} -> {} [{}];",
                    quote(&p.lhs),
                    quote(&p.rhs),
                    label.trim()
                );
            }
            ParamKind::Regression => {
                let _ = writeln!(
                    out,
                    "  {} -> {} [{}];",
                    quote(&p.rhs),
                    quote(&p.lhs),
                    label.trim()
                );
            }
            ParamKind::Covariance => {
                let _ = writeln!(
                    out,
                    "  {} -> {} [dir=both, style=dashed{}];",
                    quote(&p.lhs),
                    quote(&p.rhs),
                    if label.is_empty() {
                        String::new()
                    } else {
                        format!(",{label}")
                    }
                );
            }
            ParamKind::Variance => {}
        }
    }
    out.push_str("}\n");
    out
}
