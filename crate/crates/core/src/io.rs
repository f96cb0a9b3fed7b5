//! JSON graph documents.
//!
//! ```json
//! {
//!   "epsilon": 0.1,
//!   "vertices": [
//!     {"id": "v1", "role": "connecting", "condition": {"type": "kirchhoff"}},
//!     {"id": "o1", "role": "outer", "condition": {"type": "neumann"}}
//!   ],
//!   "edges": [
//!     {"id": "lead1", "from": "v1", "to": "o1", "length": 1.0},
//!     {"id": "core", "from": "v1", "to": "v1", "length": 1.0,
//!      "potential": {"kind": "constant", "data": 1.0}}
//!   ]
//! }
//! ```
//!
//! Matrix entries of `P` and `Theta` are numbers or `[re, im]` pairs.
//! Unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    ConditionSpec, EdgeLength, GraphBuilder, GraphSystem, PotentialKind, PotentialSpec, VertexId, VertexRole,
};
use crate::linalg::{CMat, C};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub epsilon: f64,
    pub vertices: Vec<VertexDoc>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexDoc {
    pub id: String,
    pub role: VertexRole,
    pub condition: ConditionDoc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionType {
    Dirichlet,
    Neumann,
    Robin,
    Kirchhoff,
    Delta,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionDoc {
    #[serde(rename = "type")]
    pub kind: ConditionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<Entry>>>,
    #[serde(rename = "Theta", default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<Entry>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> C {
        match self {
            Entry::Real(r) => C::new(r, 0.0),
            Entry::Complex([r, i]) => C::new(r, i),
        }
    }

    fn from_value(v: C) -> Self {
        if v.im == 0.0 {
            Entry::Real(v.re)
        } else {
            Entry::Complex([v.re, v.im])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: String,
    pub from: String,
    pub to: Option<String>,
    pub length: LengthDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialDoc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthDoc {
    Finite(f64),
    HalfLine(HalfLineTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfLineTag {
    #[serde(rename = "halfline")]
    HalfLine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKindDoc {
    Constant,
    Poly,
    Samples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialDoc {
    pub kind: PotentialKindDoc,
    pub data: PotentialData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialData {
    Scalar(f64),
    List(Vec<f64>),
}

fn field_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{path}: {msg}"))
}

fn matrix(path: &str, rows: &[Vec<Entry>]) -> Result<CMat> {
    let n = rows.len();
    if let Some(k) = rows.iter().position(|r| r.len() != n) {
        return Err(field_err(&format!("{path}[{k}]"), format!("expected {n} entries in a square matrix")));
    }
    Ok(CMat::from_fn(n, n, |i, j| rows[i][j].value()))
}

fn matrix_doc(m: &CMat) -> Vec<Vec<Entry>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| Entry::from_value(m[(i, j)])).collect()).collect()
}

impl ConditionDoc {
    fn to_spec(&self, path: &str) -> Result<ConditionSpec> {
        let alpha = || self.alpha.ok_or_else(|| field_err(&format!("{path}.alpha"), "required for this type"));
        let unused = |name: &str, present: bool| {
            if present {
                Err(field_err(&format!("{path}.{name}"), "not used by this condition type"))
            } else {
                Ok(())
            }
        };
        if self.kind != ConditionType::General {
            unused("P", self.p.is_some())?;
            unused("Theta", self.theta.is_some())?;
        }
        if !matches!(self.kind, ConditionType::Robin | ConditionType::Delta) {
            unused("alpha", self.alpha.is_some())?;
        }
        Ok(match self.kind {
            ConditionType::Dirichlet => ConditionSpec::Dirichlet,
            ConditionType::Neumann => ConditionSpec::Neumann,
            ConditionType::Kirchhoff => ConditionSpec::Kirchhoff,
            ConditionType::Robin => ConditionSpec::Robin(alpha()?),
            ConditionType::Delta => ConditionSpec::Delta(alpha()?),
            ConditionType::General => {
                let p = self.p.as_ref().ok_or_else(|| field_err(&format!("{path}.P"), "required for type general"))?;
                let p = matrix(&format!("{path}.P"), p)?;
                let theta = match &self.theta {
                    Some(t) => matrix(&format!("{path}.Theta"), t)?,
                    None => CMat::zeros(p.nrows(), p.nrows()),
                };
                ConditionSpec::General { p, theta }
            }
        })
    }

    fn from_spec(spec: &ConditionSpec) -> Self {
        let plain = |kind| Self { kind, alpha: None, p: None, theta: None };
        match spec {
            ConditionSpec::Dirichlet => plain(ConditionType::Dirichlet),
            ConditionSpec::Neumann => plain(ConditionType::Neumann),
            ConditionSpec::Kirchhoff => plain(ConditionType::Kirchhoff),
            ConditionSpec::Robin(a) => Self { alpha: Some(*a), ..plain(ConditionType::Robin) },
            ConditionSpec::Delta(a) => Self { alpha: Some(*a), ..plain(ConditionType::Delta) },
            ConditionSpec::General { p, theta } => Self {
                p: Some(matrix_doc(p)),
                theta: Some(matrix_doc(theta)),
                ..plain(ConditionType::General)
            },
        }
    }
}

impl PotentialDoc {
    fn to_spec(&self, path: &str) -> Result<PotentialSpec> {
        let kind = match (self.kind, &self.data) {
            (PotentialKindDoc::Constant, PotentialData::Scalar(v)) => PotentialKind::Constant(*v),
            (PotentialKindDoc::Poly, PotentialData::List(a)) => PotentialKind::Poly(a.clone()),
            (PotentialKindDoc::Samples, PotentialData::List(a)) => PotentialKind::Samples(a.clone()),
            (PotentialKindDoc::Constant, _) => return Err(field_err(&format!("{path}.data"), "expected a number")),
            _ => return Err(field_err(&format!("{path}.data"), "expected an array of numbers")),
        };
        Ok(PotentialSpec { kind, support: self.support })
    }

    fn from_spec(spec: &PotentialSpec) -> Self {
        let (kind, data) = match &spec.kind {
            PotentialKind::Constant(v) => (PotentialKindDoc::Constant, PotentialData::Scalar(*v)),
            PotentialKind::Poly(a) => (PotentialKindDoc::Poly, PotentialData::List(a.clone())),
            PotentialKind::Samples(a) => (PotentialKindDoc::Samples, PotentialData::List(a.clone())),
        };
        Self { kind, data, support: spec.support }
    }
}

impl GraphDoc {
    /// Resolves names and builds the system. Errors name the offending field.
    pub fn to_system(&self) -> Result<GraphSystem> {
        let mut b = GraphBuilder::new();
        let mut ids = std::collections::HashMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            let path = format!("vertices[{i}]");
            let spec = v.condition.to_spec(&format!("{path}.condition"))?;
            if ids.insert(v.id.clone(), b.vertex(&v.id, v.role, spec)).is_some() {
                return Err(field_err(&format!("{path}.id"), format!("duplicate vertex id {:?}", v.id)));
            }
        }
        let lookup = |path: String, name: &str| -> Result<VertexId> {
            ids.get(name).copied().ok_or_else(|| field_err(&path, format!("unknown vertex {name:?}")))
        };
        for (i, e) in self.edges.iter().enumerate() {
            let path = format!("edges[{i}]");
            let from = lookup(format!("{path}.from"), &e.from)?;
            let to = e.to.as_deref().map(|t| lookup(format!("{path}.to"), t)).transpose()?;
            let length = match e.length {
                LengthDoc::Finite(l) => EdgeLength::Finite(l),
                LengthDoc::HalfLine(_) => EdgeLength::HalfLine,
            };
            let potential = match &e.potential {
                Some(p) => p.to_spec(&format!("{path}.potential"))?,
                None => PotentialSpec::zero(),
            };
            b.edge(&e.id, from, to, length, potential);
        }
        let graph = b.build().map_err(|e| Error::Parse(e.to_string()))?;
        GraphSystem::new(graph, self.epsilon).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_system(system: &GraphSystem) -> Self {
        let g = system.graph();
        let vertices = g
            .vertices
            .iter()
            .map(|v| VertexDoc {
                id: v.name.clone(),
                role: v.role,
                condition: ConditionDoc::from_spec(&v.condition.spec),
            })
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                id: e.name.clone(),
                from: g.vertex(e.from).name.clone(),
                to: e.to.map(|t| g.vertex(t).name.clone()),
                length: match e.length {
                    EdgeLength::Finite(l) => LengthDoc::Finite(l),
                    EdgeLength::HalfLine => LengthDoc::HalfLine(HalfLineTag::HalfLine),
                },
                potential: (e.potential != PotentialSpec::zero())
                    .then(|| PotentialDoc::from_spec(&e.potential)),
            })
            .collect();
        Self { epsilon: system.epsilon(), vertices, edges }
    }
}

/// Parses the document syntax only. Syntax and schema errors carry the
/// field path and the line and column.
pub fn parse_doc(text: &str) -> Result<GraphDoc> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            Error::Parse(inner.to_string())
        } else {
            Error::Parse(format!("field {path}: {inner}"))
        }
    })
}

pub fn parse_graph(text: &str) -> Result<GraphSystem> {
    parse_doc(text)?.to_system()
}

pub fn read_graph(path: &Path) -> Result<GraphSystem> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_graph(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn emit_graph(system: &GraphSystem) -> String {
    serde_json::to_string_pretty(&GraphDoc::from_system(system)).expect("graph document serializes")
}
