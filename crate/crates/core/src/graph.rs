//! Metric graphs with a compact core attached to leads, vertex conditions
//! given by a projector `P` and a Hermitian `Θ` on `Ran P`, and the
//! ε-scaling of the core.
//!
//! Edge ends at a vertex are ordered by (edge index, end) with the `x = 0`
//! end first, so a loop contributes two consecutive entries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_eigen, CMat, CVec, C};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum End {
    /// `x = 0`
    Start,
    /// `x = ℓ`
    Finish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeEnd {
    pub edge: EdgeId,
    pub end: End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexRole {
    Outer,
    Connecting,
    Inner,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeLength {
    Finite(f64),
    HalfLine,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind {
    Constant(f64),
    /// Coefficients `a_0, a_1, ...` of `Σ a_k x^k`.
    Poly(Vec<f64>),
    /// Values on a uniform grid over `[0, ℓ]` (or `[0, support]` on a half-line),
    /// linearly interpolated.
    Samples(Vec<f64>),
}

/// Real potential on one edge, in the edge's unscaled coordinate.
/// Beyond `support` (if given) the potential vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub support: Option<f64>,
}

impl PotentialSpec {
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(v: f64) -> Self {
        Self { kind: PotentialKind::Constant(v), support: None }
    }

    pub fn poly(coeffs: Vec<f64>) -> Self {
        Self { kind: PotentialKind::Poly(coeffs), support: None }
    }

    pub fn samples(values: Vec<f64>) -> Self {
        Self { kind: PotentialKind::Samples(values), support: None }
    }

    pub fn with_support(mut self, support: f64) -> Self {
        self.support = Some(support);
        self
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            PotentialKind::Constant(v) => *v == 0.0,
            PotentialKind::Poly(a) | PotentialKind::Samples(a) => a.iter().all(|v| *v == 0.0),
        }
    }

    /// Polynomial degree, `None` for sampled data.
    pub fn poly_degree(&self) -> Option<usize> {
        match &self.kind {
            PotentialKind::Constant(_) => Some(0),
            PotentialKind::Poly(a) => Some(a.len().saturating_sub(1)),
            PotentialKind::Samples(_) => None,
        }
    }

    pub fn value(&self, x: f64, length: Option<f64>) -> f64 {
        if let Some(s) = self.support {
            if x > s {
                return 0.0;
            }
        }
        match &self.kind {
            PotentialKind::Constant(v) => *v,
            PotentialKind::Poly(a) => a.iter().rev().fold(0.0, |acc, &k| acc * x + k),
            PotentialKind::Samples(v) => {
                let span = self.support.or(length).unwrap_or(1.0);
                let n = v.len();
                let t = (x / span).clamp(0.0, 1.0) * (n - 1) as f64;
                let i = (t.floor() as usize).min(n - 2);
                let s = t - i as f64;
                v[i] * (1.0 - s) + v[i + 1] * s
            }
        }
    }

    /// Sup norm, sampled on a fine grid (exact for constants and samples).
    pub fn sup_norm(&self, length: Option<f64>) -> f64 {
        match &self.kind {
            PotentialKind::Constant(v) => v.abs(),
            PotentialKind::Samples(v) => v.iter().fold(0.0, |a: f64, b| a.max(b.abs())),
            PotentialKind::Poly(_) => {
                let span = self.support.or(length).unwrap_or(1.0);
                (0..=1000)
                    .map(|k| self.value(span * k as f64 / 1000.0, length).abs())
                    .fold(0.0, f64::max)
            }
        }
    }

    fn validate(&self, edge: &str, half_line: bool) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidGraph(format!("edge {edge}: {m}")));
        let data: Vec<f64> = match &self.kind {
            PotentialKind::Constant(v) => vec![*v],
            PotentialKind::Poly(a) => a.clone(),
            PotentialKind::Samples(a) => a.clone(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return bad("potential data must be finite");
        }
        if let PotentialKind::Poly(a) = &self.kind {
            if a.is_empty() {
                return bad("polynomial potential needs at least one coefficient");
            }
        }
        if let PotentialKind::Samples(a) = &self.kind {
            if a.len() < 2 {
                return bad("sampled potential needs at least two samples");
            }
        }
        if let Some(s) = self.support {
            if !(s > 0.0 && s.is_finite()) {
                return bad("potential support must be positive and finite");
            }
        }
        if half_line && self.support.is_none() && !self.is_zero() {
            return bad("potential on a half-line needs a finite support");
        }
        Ok(())
    }
}

/// Named or general vertex condition, before the degree is known.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionSpec {
    Dirichlet,
    /// Free ends, no coupling (`P = I`, `Θ = 0`).
    Neumann,
    /// `P = I`, `Θ = α I`.
    Robin(f64),
    /// Continuity and vanishing sum of outgoing derivatives.
    Kirchhoff,
    /// Continuity and sum of outgoing derivatives equal to `α ψ(v)`.
    Delta(f64),
    General { p: CMat, theta: CMat },
}

/// Vertex condition `P^⊥ Ψ(v) = 0`, `P Ψ'(v) = Θ P Ψ(v)` for a vertex of degree `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexCondition {
    pub spec: ConditionSpec,
    pub p: CMat,
    pub theta: CMat,
}

pub fn kirchhoff_projector(d: usize) -> Result<CMat> {
    if d == 0 {
        return Err(Error::InvalidArgument("Kirchhoff projector needs degree >= 1".into()));
    }
    Ok(CMat::from_element(d, d, c(1.0 / d as f64)))
}

impl VertexCondition {
    pub fn new(spec: ConditionSpec, d: usize) -> Result<Self> {
        let (p, theta) = match &spec {
            ConditionSpec::Dirichlet => (CMat::zeros(d, d), CMat::zeros(d, d)),
            ConditionSpec::Neumann => (CMat::identity(d, d), CMat::zeros(d, d)),
            ConditionSpec::Robin(a) => (CMat::identity(d, d), CMat::identity(d, d) * c(*a)),
            ConditionSpec::Kirchhoff => (kirchhoff_projector(d)?, CMat::zeros(d, d)),
            ConditionSpec::Delta(a) => {
                let k = kirchhoff_projector(d)?;
                let t = &k * c(*a / d as f64);
                (k, t)
            }
            ConditionSpec::General { p, theta } => (p.clone(), theta.clone()),
        };
        let cond = Self { spec, p, theta };
        cond.validate(d)?;
        Ok(cond)
    }

    pub fn dirichlet(d: usize) -> Self {
        Self::new(ConditionSpec::Dirichlet, d).expect("dirichlet condition")
    }

    pub fn neumann(d: usize) -> Self {
        Self::new(ConditionSpec::Neumann, d).expect("neumann condition")
    }

    pub fn robin(d: usize, alpha: f64) -> Self {
        Self::new(ConditionSpec::Robin(alpha), d).expect("robin condition")
    }

    pub fn kirchhoff(d: usize) -> Result<Self> {
        Self::new(ConditionSpec::Kirchhoff, d)
    }

    pub fn delta(d: usize, alpha: f64) -> Result<Self> {
        Self::new(ConditionSpec::Delta(alpha), d)
    }

    pub fn general(p: CMat, theta: CMat) -> Result<Self> {
        let d = p.nrows();
        Self::new(ConditionSpec::General { p, theta }, d)
    }

    pub fn degree(&self) -> usize {
        self.p.nrows()
    }

    fn validate(&self, d: usize) -> Result<()> {
        let fail = |r: String| Err(Error::InvalidCondition { vertex: String::new(), reason: r });
        let (p, t) = (&self.p, &self.theta);
        if p.shape() != (d, d) || t.shape() != (d, d) {
            return fail(format!("P and Theta must be {d}x{d}"));
        }
        if p.iter().chain(t.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return fail("entries must be finite".into());
        }
        let tol = 1e-10 * (1.0 + p.norm().max(t.norm()));
        if (p - p.adjoint()).norm() > tol {
            return fail("P is not Hermitian".into());
        }
        if (p * p - p).norm() > tol {
            return fail("P is not idempotent".into());
        }
        if (t - t.adjoint()).norm() > tol {
            return fail("Theta is not Hermitian".into());
        }
        if (t * p - t).norm() > tol || (p * t - t).norm() > tol {
            return fail("Theta must act on Ran P (Theta P = P Theta = Theta)".into());
        }
        Ok(())
    }

    /// Orthonormal basis of `Ran P`, one column per free trace direction.
    pub fn range_basis(&self) -> CMat {
        let d = self.degree();
        match self.spec {
            ConditionSpec::Dirichlet => CMat::zeros(d, 0),
            ConditionSpec::Neumann | ConditionSpec::Robin(_) => CMat::identity(d, d),
            ConditionSpec::Kirchhoff | ConditionSpec::Delta(_) => {
                CMat::from_element(d, 1, c(1.0 / (d as f64).sqrt()))
            }
            ConditionSpec::General { .. } => {
                let (vals, vecs) = hermitian_eigen(&self.p);
                let cols: Vec<usize> = (0..d).filter(|&k| vals[k] > 0.5).collect();
                CMat::from_fn(d, cols.len(), |r, k| vecs[(r, cols[k])])
            }
        }
    }

    /// Same projector, `Θ` multiplied by `factor`.
    pub fn scale_theta(&self, factor: f64) -> Self {
        let spec = match &self.spec {
            ConditionSpec::Robin(a) => ConditionSpec::Robin(a * factor),
            ConditionSpec::Delta(a) => ConditionSpec::Delta(a * factor),
            ConditionSpec::General { p, theta } => {
                ConditionSpec::General { p: p.clone(), theta: theta * c(factor) }
            }
            other => other.clone(),
        };
        Self { spec, p: self.p.clone(), theta: &self.theta * c(factor) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub name: String,
    pub role: VertexRole,
    pub condition: VertexCondition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub name: String,
    /// Unscaled length.
    pub length: EdgeLength,
    pub from: VertexId,
    pub to: Option<VertexId>,
    /// Unscaled potential.
    pub potential: PotentialSpec,
    /// Length scale factor (ε on the core, 1 on leads).
    pub scale: f64,
}

impl Edge {
    pub fn base_length(&self) -> Option<f64> {
        match self.length {
            EdgeLength::Finite(l) => Some(l),
            EdgeLength::HalfLine => None,
        }
    }

    pub fn physical_length(&self) -> Option<f64> {
        self.base_length().map(|l| l * self.scale)
    }

    pub fn is_half_line(&self) -> bool {
        matches!(self.length, EdgeLength::HalfLine)
    }

    /// `scale^{-2} B(x / scale)` at physical coordinate `x`.
    pub fn potential_at(&self, x: f64) -> f64 {
        self.potential.value(x / self.scale, self.base_length()) / (self.scale * self.scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    incidence: Vec<Vec<EdgeEnd>>,
}

impl MetricGraph {
    pub fn degree(&self, v: VertexId) -> usize {
        self.incidence[v.0].len()
    }

    /// Edge ends at `v` in canonical order.
    pub fn incidence(&self, v: VertexId) -> &[EdgeEnd] {
        &self.incidence[v.0]
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v.0]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn vertex_id(&self, name: &str) -> Option<VertexId> {
        self.vertices.iter().position(|v| v.name == name).map(VertexId)
    }

    pub fn vertex_ids(&self) -> impl Iterator<Item = VertexId> {
        (0..self.vertices.len()).map(VertexId)
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len()).map(EdgeId)
    }

    pub fn connecting(&self) -> Vec<VertexId> {
        self.vertex_ids()
            .filter(|&v| self.vertex(v).role == VertexRole::Connecting)
            .collect()
    }

    /// Position of an edge end in the incidence list of its vertex.
    pub fn slot_of(&self, v: VertexId, end: EdgeEnd) -> Option<usize> {
        self.incidence[v.0].iter().position(|&x| x == end)
    }

    pub fn endpoint(&self, end: EdgeEnd) -> Option<VertexId> {
        let e = self.edge(end.edge);
        match end.end {
            End::Start => Some(e.from),
            End::Finish => e.to,
        }
    }

    fn to_builder(&self) -> GraphBuilder {
        GraphBuilder {
            vertices: self
                .vertices
                .iter()
                .map(|v| (v.name.clone(), v.role, Some(v.condition.clone()), v.condition.spec.clone()))
                .collect(),
            edges: self.edges.clone(),
        }
    }
}

/// Incremental construction of a [`MetricGraph`]; conditions are resolved
/// against vertex degrees at build time.
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    vertices: Vec<(String, VertexRole, Option<VertexCondition>, ConditionSpec)>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex(&mut self, name: &str, role: VertexRole, condition: ConditionSpec) -> VertexId {
        self.vertices.push((name.to_string(), role, None, condition));
        VertexId(self.vertices.len() - 1)
    }

    pub fn edge(
        &mut self,
        name: &str,
        from: VertexId,
        to: Option<VertexId>,
        length: EdgeLength,
        potential: PotentialSpec,
    ) -> EdgeId {
        self.edges.push(Edge {
            name: name.to_string(),
            length,
            from,
            to,
            potential,
            scale: 1.0,
        });
        EdgeId(self.edges.len() - 1)
    }

    /// Builds and checks the lead/core structure implied by the vertex roles.
    pub fn build(self) -> Result<MetricGraph> {
        let g = self.build_plain()?;
        validate_roles(&g)?;
        Ok(g)
    }

    /// Builds without role checks (auxiliary graphs, lead stars).
    pub fn build_plain(self) -> Result<MetricGraph> {
        let nv = self.vertices.len();
        let mut names = HashMap::new();
        for (i, (name, ..)) in self.vertices.iter().enumerate() {
            if names.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex id {name}")));
            }
        }
        let mut edge_names = HashMap::new();
        let mut incidence = vec![Vec::new(); nv];
        for (i, e) in self.edges.iter().enumerate() {
            if edge_names.insert(e.name.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge id {}", e.name)));
            }
            if e.from.0 >= nv || e.to.is_some_and(|t| t.0 >= nv) {
                return Err(Error::InvalidGraph(format!("edge {} references a missing vertex", e.name)));
            }
            match (e.length, e.to) {
                (EdgeLength::Finite(l), Some(_)) => {
                    if !(l > 0.0 && l.is_finite()) {
                        return Err(Error::InvalidGraph(format!(
                            "edge {} has nonpositive length {l}",
                            e.name
                        )));
                    }
                }
                (EdgeLength::HalfLine, None) => {}
                (EdgeLength::Finite(_), None) => {
                    return Err(Error::InvalidGraph(format!(
                        "edge {} has a finite length but no terminal vertex",
                        e.name
                    )))
                }
                (EdgeLength::HalfLine, Some(_)) => {
                    return Err(Error::InvalidGraph(format!(
                        "half-line {} cannot have a terminal vertex",
                        e.name
                    )))
                }
            }
            if !(e.scale > 0.0) {
                return Err(Error::InvalidGraph(format!("edge {} has nonpositive scale", e.name)));
            }
            e.potential.validate(&e.name, e.is_half_line())?;
            incidence[e.from.0].push(EdgeEnd { edge: EdgeId(i), end: End::Start });
            if let Some(t) = e.to {
                incidence[t.0].push(EdgeEnd { edge: EdgeId(i), end: End::Finish });
            }
        }
        for list in &mut incidence {
            list.sort();
        }
        let mut vertices = Vec::with_capacity(nv);
        for (i, (name, role, resolved, spec)) in self.vertices.into_iter().enumerate() {
            let d = incidence[i].len();
            if d == 0 {
                return Err(Error::InvalidGraph(format!("vertex {name} is isolated")));
            }
            let condition = match resolved {
                Some(cond) if cond.degree() == d => cond,
                _ => VertexCondition::new(spec, d).map_err(|e| match e {
                    Error::InvalidCondition { reason, .. } => {
                        Error::InvalidCondition { vertex: name.clone(), reason }
                    }
                    other => other,
                })?,
            };
            vertices.push(Vertex { name, role, condition });
        }
        Ok(MetricGraph { vertices, edges: self.edges, incidence })
    }
}

fn validate_roles(g: &MetricGraph) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidGraph(m));
    let role = |v: VertexId| g.vertex(v).role;
    let is_lead = |e: &Edge| {
        role(e.from) == VertexRole::Connecting
            && e.to.is_none_or(|t| role(t) == VertexRole::Outer)
    };
    for e in &g.edges {
        if is_lead(e) {
            continue;
        }
        if e.is_half_line() {
            return bad(format!("half-line {} must start at a connecting vertex", e.name));
        }
        let ends = [Some(e.from), e.to];
        if ends.iter().flatten().any(|&v| role(v) == VertexRole::Outer) {
            return bad(format!(
                "edge {} touches an outer vertex but does not start at a connecting vertex",
                e.name
            ));
        }
    }
    for v in g.vertex_ids() {
        let vx = g.vertex(v);
        let ends = g.incidence(v);
        match vx.role {
            VertexRole::Connecting => {
                let leads = ends
                    .iter()
                    .filter(|x| x.end == End::Start && is_lead(g.edge(x.edge)))
                    .count();
                if leads != 1 {
                    return bad(format!(
                        "connecting vertex {} must carry exactly one lead at its x=0 end (found {leads})",
                        vx.name
                    ));
                }
                if ends.len() < 2 {
                    return bad(format!("connecting vertex {} has no core edge", vx.name));
                }
                if vx.condition.spec != ConditionSpec::Kirchhoff {
                    return bad(format!("connecting vertex {} must carry the Kirchhoff condition", vx.name));
                }
            }
            VertexRole::Outer => {
                if ends.len() != 1 || ends[0].end != End::Finish || !is_lead(g.edge(ends[0].edge)) {
                    return bad(format!("outer vertex {} must be the far end of exactly one lead", vx.name));
                }
            }
            VertexRole::Inner => {}
        }
    }
    Ok(())
}

/// Values and outgoing derivatives at `v` of a function given edgewise by
/// `psi(edge, x) = (ψ_e(x), ψ_e'(x))` in physical coordinates.
pub fn boundary_vectors(
    g: &MetricGraph,
    v: VertexId,
    psi: &dyn Fn(EdgeId, f64) -> (C, C),
) -> (CVec, CVec) {
    let ends = g.incidence(v);
    let mut val = CVec::zeros(ends.len());
    let mut der = CVec::zeros(ends.len());
    for (k, end) in ends.iter().enumerate() {
        match end.end {
            End::Start => {
                let (a, b) = psi(end.edge, 0.0);
                val[k] = a;
                der[k] = b;
            }
            End::Finish => {
                let l = g.edge(end.edge).physical_length().expect("finite edge");
                let (a, b) = psi(end.edge, l);
                val[k] = a;
                der[k] = -b;
            }
        }
    }
    (val, der)
}

/// A graph with small core: the unscaled graph together with the scale ε
/// of its core. Leads are listed in the order of the connecting vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSystem {
    graph: MetricGraph,
    epsilon: f64,
    connecting: Vec<VertexId>,
    leads: Vec<EdgeId>,
    inner_edges: Vec<EdgeId>,
}

/// The core on its own with Kirchhoff conditions at the connecting vertices,
/// the domain of the auxiliary Hamiltonian.
#[derive(Clone, Debug)]
pub struct AuxGraph {
    pub graph: MetricGraph,
    pub connecting: Vec<VertexId>,
}

impl GraphSystem {
    pub fn new(graph: MetricGraph, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        validate_roles(&graph)?;
        if graph.edges.iter().any(|e| e.scale != 1.0) {
            return Err(Error::InvalidGraph("graph must be given at unit scale".into()));
        }
        let connecting = graph.connecting();
        if connecting.is_empty() {
            return Err(Error::InvalidGraph("no connecting vertex".into()));
        }
        let leads: Vec<EdgeId> = connecting
            .iter()
            .map(|&v| {
                graph
                    .incidence(v)
                    .iter()
                    .find(|x| {
                        let e = graph.edge(x.edge);
                        x.end == End::Start
                            && e.to.is_none_or(|t| graph.vertex(t).role == VertexRole::Outer)
                    })
                    .expect("validated lead")
                    .edge
            })
            .collect();
        let inner_edges = graph.edge_ids().filter(|e| !leads.contains(e)).collect();
        Ok(Self { graph, epsilon, connecting, leads, inner_edges })
    }

    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_leads(&self) -> usize {
        self.connecting.len()
    }

    pub fn connecting(&self) -> &[VertexId] {
        &self.connecting
    }

    pub fn leads(&self) -> &[EdgeId] {
        &self.leads
    }

    pub fn inner_edges(&self) -> &[EdgeId] {
        &self.inner_edges
    }

    /// `d^in(v_j)`, number of core edge ends at each connecting vertex.
    pub fn inner_degrees(&self) -> Vec<usize> {
        self.connecting.iter().map(|&v| self.graph.degree(v) - 1).collect()
    }

    /// Composes the core scale: `scale_inner(scale_inner(s, a), b) = scale_inner(s, a b)`.
    pub fn scale_inner(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {eps}")));
        }
        let mut s = self.clone();
        s.epsilon *= eps;
        Ok(s)
    }

    /// The system at unit core scale.
    pub fn unit(&self) -> Self {
        let mut s = self.clone();
        s.epsilon = 1.0;
        s
    }

    /// The whole graph at scale ε, in the original edge order.
    pub fn scaled_graph(&self) -> MetricGraph {
        let mut g = self.graph.clone();
        for &e in &self.inner_edges {
            g.edges[e.0].scale = self.epsilon;
        }
        for v in &mut g.vertices {
            if v.role == VertexRole::Inner {
                v.condition = v.condition.scale_theta(1.0 / self.epsilon);
            }
        }
        g
    }

    /// The whole graph at scale ε with the leads first (in connecting order)
    /// followed by the core edges; this is the layout used for discrete
    /// functions on the full graph.
    pub fn full_graph(&self) -> MetricGraph {
        let scaled = self.scaled_graph();
        let order: Vec<EdgeId> = self.leads.iter().chain(&self.inner_edges).copied().collect();
        let mut b = scaled.to_builder();
        b.edges = order.iter().map(|&e| scaled.edges[e.0].clone()).collect();
        b.build_plain().expect("reordering a valid graph")
    }

    /// The core alone at scale `eps`, connecting vertices carrying the
    /// Kirchhoff condition of degree `d^in`.
    pub fn aux_graph(&self, eps: f64) -> AuxGraph {
        let mut b = GraphBuilder::new();
        let mut map = HashMap::new();
        let mut connecting = Vec::new();
        for v in self.graph.vertex_ids() {
            let vx = self.graph.vertex(v);
            let touches = self.inner_edges.iter().any(|&e| {
                let ed = self.graph.edge(e);
                ed.from == v || ed.to == Some(v)
            });
            if !touches {
                continue;
            }
            let spec = match vx.role {
                VertexRole::Connecting => ConditionSpec::Kirchhoff,
                _ => vx.condition.scale_theta(1.0 / eps).spec,
            };
            let id = b.vertex(&vx.name, vx.role, spec);
            map.insert(v, id);
        }
        for &v in &self.connecting {
            connecting.push(map[&v]);
        }
        for &e in &self.inner_edges {
            let ed = self.graph.edge(e);
            let id = b.edge(&ed.name, map[&ed.from], ed.to.map(|t| map[&t]), ed.length, ed.potential.clone());
            b.edges[id.0].scale = eps;
        }
        AuxGraph { graph: b.build_plain().expect("core of a valid graph"), connecting }
    }

    /// The leads joined at a single center vertex `o` (edge `j` is the lead of
    /// `v_j`), with the given center condition and the outer vertex conditions.
    pub fn lead_star(&self, center: ConditionSpec) -> Result<MetricGraph> {
        let mut b = GraphBuilder::new();
        let o = b.vertex("o", VertexRole::Inner, center);
        for &e in &self.leads {
            let ed = self.graph.edge(e);
            let to = ed.to.map(|t| {
                let vx = self.graph.vertex(t);
                b.vertex(&vx.name, VertexRole::Outer, vx.condition.spec.clone())
            });
            b.edge(&ed.name, o, to, ed.length, ed.potential.clone());
        }
        b.build_plain()
    }
}
