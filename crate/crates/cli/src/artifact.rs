//! Transformation artifact: everything `simulate` needs to replay a synthesis
//! without rerunning it.

use std::collections::BTreeSet;
use std::sync::Arc;

use mechlin::expr::{parse_expr, Expr, NumFn, NumFnTable, ParseContext};
use mechlin::synthesis::{LinearModel, MechanicalDiffeo, MechanicalFeedback, Synthesis};
use mechlin::system_file::SystemFile;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT: &str = "mechlin-artifact/1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("unsupported artifact format `{0}`")]
    Format(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedFunction {
    pub name: String,
    /// `H'` in the placeholder variable `x1`.
    pub derivative: String,
    pub interpolation: String,
    pub table: NumFnTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub e: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub offset: Vec<f64>,
    pub fit_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub output_method: String,
    pub annihilation_residual: f64,
    pub transversality_margin: f64,
    pub lambda: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub format: String,
    pub system_hash: String,
    pub n: usize,
    pub h: String,
    pub phi: Vec<String>,
    pub alpha: String,
    pub beta: String,
    /// Full symmetric matrix, row-major.
    pub gamma: Vec<Vec<String>>,
    pub model: ModelRecord,
    pub numfns: Vec<TabulatedFunction>,
    pub diagnostics: Diagnostics,
}

/// The replayable part of an artifact.
pub struct Restored {
    pub diffeo: MechanicalDiffeo,
    pub feedback: MechanicalFeedback,
    pub model: LinearModel,
}

/// SHA-256 of the canonical JSON form of a system file, so whitespace and
/// key order in the file do not matter.
pub fn system_hash(file: &SystemFile) -> String {
    let canonical = serde_json::to_string(file).expect("system files always serialize");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Tabulated functions used by `exprs`, each listed after the ones its
/// derivative refers to.
fn collect_numfns(exprs: &[&Expr]) -> Vec<Arc<NumFn>> {
    fn visit(f: &Arc<NumFn>, out: &mut Vec<Arc<NumFn>>) {
        if out.iter().any(|g| Arc::ptr_eq(f, g)) {
            return;
        }
        for inner in f.derivative().numfns() {
            visit(&inner, out);
        }
        out.push(f.clone());
    }
    let mut out = Vec::new();
    for e in exprs {
        for f in e.numfns() {
            visit(&f, &mut out);
        }
    }
    out
}

impl Artifact {
    pub fn from_synthesis(file: &SystemFile, syn: &Synthesis) -> Artifact {
        let n = file.n;
        let fb = &syn.feedback;
        let mut all: Vec<&Expr> = vec![&syn.h, &fb.alpha, &fb.beta];
        all.extend(&syn.diffeo.phi);
        all.extend(fb.gamma.iter().flatten());
        let numfns = collect_numfns(&all)
            .iter()
            .map(|f| TabulatedFunction {
                name: f.name().to_string(),
                derivative: f.derivative().to_string(),
                interpolation: "quintic hermite".into(),
                table: f.table().clone(),
            })
            .collect();
        let m = &syn.model;
        Artifact {
            format: FORMAT.into(),
            system_hash: system_hash(file),
            n,
            h: syn.h.to_string(),
            phi: syn.diffeo.phi.iter().map(Expr::to_string).collect(),
            alpha: fb.alpha.to_string(),
            beta: fb.beta.to_string(),
            gamma: fb.gamma.iter().map(|row| row.iter().map(Expr::to_string).collect()).collect(),
            model: ModelRecord {
                e: (0..n).map(|i| (0..n).map(|j| m.e[(i, j)]).collect()).collect(),
                b: m.b.iter().copied().collect(),
                offset: m.offset.iter().copied().collect(),
                fit_residual: m.fit_residual,
            },
            numfns,
            diagnostics: Diagnostics {
                output_method: syn.output.method.clone(),
                annihilation_residual: syn.output.annihilation_residual,
                transversality_margin: syn.output.transversality_margin,
                lambda: syn.lambda.as_ref().map(Expr::to_string),
            },
        }
    }

    /// Rebuild `φ`, the feedback and the linear model. `params` are the
    /// parameter names of the system the artifact belongs to.
    pub fn restore(&self, params: &BTreeSet<String>) -> Result<Restored, ArtifactError> {
        if self.format != FORMAT {
            return Err(ArtifactError::Format(self.format.clone()));
        }
        let n = self.n;
        let invalid = |field: &str, message: String| ArtifactError::Invalid { field: field.into(), message };
        let names: Vec<&String> = params.iter().collect();
        let mut ctx = ParseContext::new(n, &names);
        for t in &self.numfns {
            let d = parse_expr(&t.derivative, &ctx)
                .map_err(|e| invalid(&format!("numfns.{}.derivative", t.name), e.to_string()))?;
            let t_ok = t.table.knots.len() >= 2
                && [&t.table.values, &t.table.slopes, &t.table.curvatures].iter().all(|v| v.len() == t.table.knots.len())
                && t.table.knots.windows(2).all(|w| w[0] < w[1]);
            if !t_ok {
                return Err(invalid(&format!("numfns.{}.table", t.name), "malformed knot table".into()));
            }
            if ctx.numfns.contains_key(&t.name) {
                return Err(invalid("numfns", format!("duplicate name `{}`", t.name)));
            }
            ctx = ctx.with_numfn(Arc::new(NumFn::from_table(&t.name, d, t.table.clone())));
        }
        let parse = |field: String, text: &str| parse_expr(text, &ctx).map_err(|e| invalid(&field, e.to_string()));
        if self.phi.len() != n {
            return Err(invalid("phi", format!("expected {n} components, got {}", self.phi.len())));
        }
        let phi = self
            .phi
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("phi[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let alpha = parse("alpha".into(), &self.alpha)?;
        let beta = parse("beta".into(), &self.beta)?;
        if self.gamma.len() != n || self.gamma.iter().any(|r| r.len() != n) {
            return Err(invalid("gamma", format!("expected a {n}x{n} matrix")));
        }
        let mut gamma = Vec::with_capacity(n);
        for (j, row) in self.gamma.iter().enumerate() {
            let parsed = row
                .iter()
                .enumerate()
                .map(|(k, s)| parse(format!("gamma[{j}][{k}]"), s))
                .collect::<Result<Vec<_>, _>>()?;
            gamma.push(parsed);
        }
        let m = &self.model;
        if m.e.len() != n || m.e.iter().any(|r| r.len() != n) || m.b.len() != n || m.offset.len() != n {
            return Err(invalid("model", format!("E must be {n}x{n}, b and offset of length {n}")));
        }
        let model = LinearModel {
            e: DMatrix::from_fn(n, n, |i, j| m.e[i][j]),
            b: DVector::from_column_slice(&m.b),
            offset: DVector::from_column_slice(&m.offset),
            fit_residual: m.fit_residual,
        };
        Ok(Restored {
            diffeo: MechanicalDiffeo::from_components(phi),
            feedback: MechanicalFeedback { alpha, beta, gamma },
            model,
        })
    }
}
