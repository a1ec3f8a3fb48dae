//! On-disk system definition: expressions as strings, sparse Christoffel
//! symbols with 1-based indices.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, Expr, ParseContext, ParseError};
use crate::geometry::{MechanicalSystem, SystemError, VectorFieldSym};
use crate::sampling::Domain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub gamma: Vec<GammaEntry>,
    pub e: Vec<String>,
    pub g: Vec<String>,
    pub domain: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemFileError {
    #[error("{field}: {source}")]
    Expression { field: String, source: ParseError },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

struct Field<'a>(&'a str, usize);

impl fmt::Display for Field<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.0, self.1)
    }
}

impl SystemFile {
    pub fn build(&self) -> Result<MechanicalSystem, SystemFileError> {
        let n = self.n;
        let invalid = |field: &str, message: String| SystemFileError::Invalid { field: field.into(), message };
        if n < 2 {
            return Err(invalid("n", format!("dimension must be at least 2, got {n}")));
        }
        for (name, v) in &self.params {
            if !v.is_finite() {
                return Err(invalid(&format!("params.{name}"), "value must be finite".into()));
            }
        }
        let names: Vec<&str> = self.params.keys().map(String::as_str).collect();
        let ctx = ParseContext::new(n, &names);
        let parse = |field: String, text: &str| -> Result<Expr, SystemFileError> {
            parse_expr(text, &ctx).map_err(|source| SystemFileError::Expression { field, source })
        };
        let field = |name: &str, list: &[String]| -> Result<VectorFieldSym, SystemFileError> {
            if list.len() != n {
                return Err(invalid(name, format!("expected {n} components, got {}", list.len())));
            }
            list.iter()
                .enumerate()
                .map(|(i, s)| parse(Field(name, i).to_string(), s))
                .collect::<Result<Vec<_>, _>>()
                .map(VectorFieldSym)
        };
        let e = field("e", &self.e)?;
        let g = field("g", &self.g)?;
        let mut gamma = Vec::with_capacity(self.gamma.len());
        for (idx, entry) in self.gamma.iter().enumerate() {
            let name = Field("gamma", idx).to_string();
            let (i, j, k) = (entry.i, entry.j, entry.k);
            if [i, j, k].iter().any(|&v| v == 0 || v > n) {
                return Err(invalid(&name, format!("indices ({i}, {j}, {k}) must lie in 1..={n}")));
            }
            if j > k {
                return Err(invalid(&name, format!("lower indices must satisfy j <= k, got ({j}, {k})")));
            }
            gamma.push(((i - 1, j - 1, k - 1), parse(format!("{name}.expr"), &entry.expr)?));
        }
        if self.domain.len() != n {
            return Err(invalid("domain", format!("expected {n} intervals, got {}", self.domain.len())));
        }
        let bounds: Vec<(f64, f64)> = self.domain.iter().map(|b| (b[0], b[1])).collect();
        let domain = Domain::from_bounds(&bounds)
            .ok_or_else(|| invalid("domain", "every interval needs finite lo < hi".into()))?;
        Ok(MechanicalSystem::new(n, gamma, e, g, domain, self.params.clone())?)
    }
}
