//! Piecewise-linear finite elements on metric graphs.
//!
//! Discrete functions are stored edgewise ("broken" layout): edge `e` owns
//! `nodes_e` consecutive values, its two end nodes included, so a function
//! is an element of `⊕_e L²(e)` and the mass matrix is block tridiagonal.
//! Vertex conditions are imposed through an orthonormal constraint basis `Z`:
//! interior nodes are free, and the end values at a vertex are `Q_v a_v`
//! where the columns of `Q_v` span `Ran P_v`.
//!
//! Linear systems are solved by eliminating each edge interior with a
//! tridiagonal factorization and solving the small dense system left on the
//! vertex unknowns, so the cost is linear in the number of nodes.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{End, MetricGraph, PotentialKind, VertexId};
use crate::linalg::{c, gauss_legendre, generalized_hermitian_eigen, sqrt_im_pos, CMat, CVec, TridiagLu, C, I};

/// Largest constrained system handed to the dense eigensolver.
pub const DENSE_LIMIT: usize = 6000;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeshSpec {
    /// Nodes on every finite edge, end nodes included (at least 3).
    pub nodes_per_edge: usize,
    /// A half-line is truncated at `support + halfline_margin`.
    pub halfline_margin: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { nodes_per_edge: 200, halfline_margin: 2.0 }
    }
}

impl MeshSpec {
    pub fn with_nodes(nodes_per_edge: usize) -> Self {
        Self { nodes_per_edge, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMesh {
    pub nodes: usize,
    pub base_length: f64,
    pub scale: f64,
    pub offset: usize,
    /// A half-line cut at `base_length`, closed by a transparent condition.
    pub truncated: bool,
}

impl EdgeMesh {
    pub fn base_h(&self) -> f64 {
        self.base_length / (self.nodes - 1) as f64
    }

    pub fn h(&self) -> f64 {
        self.base_h() * self.scale
    }

    pub fn length(&self) -> f64 {
        self.base_length * self.scale
    }

    pub fn x(&self, i: usize) -> f64 {
        self.h() * i as f64
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.nodes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub edges: Vec<EdgeMesh>,
    pub total: usize,
}

impl Mesh {
    pub fn new(g: &MetricGraph, spec: &MeshSpec) -> Result<Self> {
        if spec.nodes_per_edge < 3 {
            return Err(Error::InvalidArgument("every edge needs at least 3 nodes".into()));
        }
        let mut edges = Vec::with_capacity(g.edges.len());
        let mut offset = 0;
        for e in &g.edges {
            let (base_length, truncated) = match e.base_length() {
                Some(l) => (l, false),
                None => (e.potential.support.unwrap_or(0.0) + spec.halfline_margin, true),
            };
            edges.push(EdgeMesh { nodes: spec.nodes_per_edge, base_length, scale: e.scale, offset, truncated });
            offset += spec.nodes_per_edge;
        }
        Ok(Self { edges, total: offset })
    }

    /// Concatenation of two meshes (functions on the disjoint union).
    pub fn join(&self, other: &Mesh) -> Mesh {
        let mut edges = self.edges.clone();
        for e in &other.edges {
            let mut e = e.clone();
            e.offset += self.total;
            edges.push(e);
        }
        Mesh { edges, total: self.total + other.total }
    }

    pub fn max_h(&self) -> f64 {
        self.edges.iter().map(|e| e.h()).fold(0.0, f64::max)
    }

    /// `M u` with the consistent P1 mass matrix of each edge.
    pub fn mass_apply(&self, u: &CVec) -> CVec {
        let mut out = CVec::zeros(self.total);
        for em in &self.edges {
            let h = em.h();
            let (a, b) = (h / 3.0, h / 6.0);
            let o = em.offset;
            for i in 0..em.nodes {
                let mut s = u[o + i] * (if i == 0 || i == em.nodes - 1 { a } else { 2.0 * a });
                if i > 0 {
                    s += u[o + i - 1] * b;
                }
                if i + 1 < em.nodes {
                    s += u[o + i + 1] * b;
                }
                out[o + i] = s;
            }
        }
        out
    }

    /// `(u, v) = ∫ conj(u) v`, antilinear in the first argument.
    pub fn inner(&self, u: &CVec, v: &CVec) -> C {
        u.dotc(&self.mass_apply(v))
    }

    pub fn norm(&self, u: &CVec) -> f64 {
        self.inner(u, u).re.max(0.0).sqrt()
    }

    /// Nodal interpolant of `f(edge_index, x)`, `x` physical.
    pub fn interpolate(&self, f: &dyn Fn(usize, f64) -> C) -> CVec {
        let mut out = CVec::zeros(self.total);
        for (e, em) in self.edges.iter().enumerate() {
            for i in 0..em.nodes {
                out[em.offset + i] = f(e, em.x(i));
            }
        }
        out
    }

    /// Sup norm of a P1 function (attained at nodes).
    pub fn sup_norm(&self, u: &CVec) -> f64 {
        u.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Tridiagonal real matrix stored as diagonal and off-diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiag {
    fn zeros(n: usize) -> Self {
        Self { diag: vec![0.0; n], off: vec![0.0; n - 1] }
    }
}

/// Element forms of one edge in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeForms {
    pub stiffness: Tridiag,
    pub mass: Tridiag,
    pub potential: Tridiag,
}

fn edge_forms(g: &MetricGraph, e: usize, em: &EdgeMesh) -> EdgeForms {
    let n = em.nodes;
    let hb = em.base_h();
    let s = em.scale;
    let mut k = Tridiag::zeros(n);
    let mut m = Tridiag::zeros(n);
    let mut v = Tridiag::zeros(n);
    let edge = &g.edges[e];
    let pot = &edge.potential;
    let base_len = edge.base_length();
    let quad = pot.poly_degree().map(|d| gauss_legendre((d + 4) / 2));
    for el in 0..n - 1 {
        let (ia, ib) = (el, el + 1);
        k.diag[ia] += 1.0 / hb;
        k.diag[ib] += 1.0 / hb;
        k.off[el] -= 1.0 / hb;
        m.diag[ia] += hb / 3.0;
        m.diag[ib] += hb / 3.0;
        m.off[el] += hb / 6.0;
        if pot.is_zero() {
            continue;
        }
        let xa = hb * el as f64;
        match (&pot.kind, &quad) {
            (PotentialKind::Samples(_), _) | (_, None) => {
                v.diag[ia] += 0.5 * hb * pot.value(xa, base_len);
                v.diag[ib] += 0.5 * hb * pot.value(xa + hb, base_len);
            }
            (_, Some((xs, ws))) => {
                let (mut aa, mut ab, mut bb) = (0.0, 0.0, 0.0);
                for (t, w) in xs.iter().zip(ws) {
                    let lam = 0.5 * (t + 1.0);
                    let b = pot.value(xa + lam * hb, base_len) * 0.5 * hb * w;
                    aa += b * (1.0 - lam) * (1.0 - lam);
                    ab += b * (1.0 - lam) * lam;
                    bb += b * lam * lam;
                }
                v.diag[ia] += aa;
                v.diag[ib] += bb;
                v.off[el] += ab;
            }
        }
    }
    // Map the unit-scale element integrals to the scaled edge.
    for t in [&mut k, &mut v] {
        t.diag.iter_mut().chain(t.off.iter_mut()).for_each(|x| *x /= s);
    }
    m.diag.iter_mut().chain(m.off.iter_mut()).for_each(|x| *x *= s);
    EdgeForms { stiffness: k, mass: m, potential: v }
}

#[derive(Clone, Debug)]
struct VertexBlock {
    /// `(edge, end)` per trace slot.
    slots: Vec<(usize, End)>,
    q: CMat,
    robin: CMat,
    transparent: bool,
    offset: usize,
}

impl VertexBlock {
    fn rank(&self) -> usize {
        self.q.ncols()
    }
}

/// Discrete forms and constraint structure of one graph at one mesh.
#[derive(Clone, Debug)]
pub struct DiscreteOperatorSet {
    pub mesh: Mesh,
    pub forms: Vec<EdgeForms>,
    blocks: Vec<VertexBlock>,
    vertex_block: Vec<usize>,
    /// Block and slot of the start and finish end of each edge.
    end_block: Vec<[(usize, usize); 2]>,
    interior_offset: Vec<usize>,
    n_interior: usize,
    n_dofs: usize,
}

/// Dense forms on the unconstrained nodes together with the constraint basis.
#[derive(Clone, Debug)]
pub struct DenseForms {
    pub k: CMat,
    pub v: CMat,
    pub m: CMat,
    pub r: CMat,
    pub z: CMat,
}

fn end_index(end: End) -> usize {
    match end {
        End::Start => 0,
        End::Finish => 1,
    }
}

impl DiscreteOperatorSet {
    pub fn new(g: &MetricGraph, spec: &MeshSpec) -> Result<Arc<Self>> {
        let mesh = Mesh::new(g, spec)?;
        let forms: Vec<EdgeForms> =
            mesh.edges.iter().enumerate().map(|(e, em)| edge_forms(g, e, em)).collect();
        let mut interior_offset = Vec::with_capacity(mesh.edges.len());
        let mut off = 0;
        for em in &mesh.edges {
            interior_offset.push(off);
            off += em.nodes - 2;
        }
        let mut blocks = Vec::new();
        let mut vertex_block = Vec::new();
        let mut end_block = vec![[(usize::MAX, 0); 2]; g.edges.len()];
        for v in g.vertex_ids() {
            let cond = &g.vertex(v).condition;
            let q = cond.range_basis();
            let robin = q.adjoint() * &cond.theta * &q;
            let slots: Vec<(usize, End)> = g.incidence(v).iter().map(|x| (x.edge.0, x.end)).collect();
            for (s, &(e, end)) in slots.iter().enumerate() {
                end_block[e][end_index(end)] = (blocks.len(), s);
            }
            vertex_block.push(blocks.len());
            blocks.push(VertexBlock { slots, q, robin, transparent: false, offset: 0 });
        }
        for (e, em) in mesh.edges.iter().enumerate() {
            if em.truncated {
                end_block[e][1] = (blocks.len(), 0);
                blocks.push(VertexBlock {
                    slots: vec![(e, End::Finish)],
                    q: CMat::identity(1, 1),
                    robin: CMat::zeros(1, 1),
                    transparent: true,
                    offset: 0,
                });
            }
        }
        let n_interior = off;
        for b in &mut blocks {
            b.offset = off;
            off += b.rank();
        }
        Ok(Arc::new(Self { mesh, forms, blocks, vertex_block, end_block, interior_offset, n_interior, n_dofs: off }))
    }

    /// Number of constrained unknowns.
    pub fn dim(&self) -> usize {
        self.n_dofs
    }

    pub fn broken_dim(&self) -> usize {
        self.mesh.total
    }

    pub fn has_transparent_ends(&self) -> bool {
        self.blocks.iter().any(|b| b.transparent)
    }

    fn block_of(&self, v: VertexId) -> &VertexBlock {
        &self.blocks[self.vertex_block[v.0]]
    }

    /// Constrained coefficients of the value at an end node.
    fn end_coeffs(&self, e: usize, end: usize) -> Vec<(usize, C)> {
        let (b, s) = self.end_block[e][end];
        let blk = &self.blocks[b];
        (0..blk.rank()).map(|k| (blk.offset + k, blk.q[(s, k)])).collect()
    }

    fn node_coeffs(&self, e: usize, i: usize) -> Vec<(usize, C)> {
        let n = self.mesh.edges[e].nodes;
        if i == 0 {
            self.end_coeffs(e, 0)
        } else if i == n - 1 {
            self.end_coeffs(e, 1)
        } else {
            vec![(self.interior_offset[e] + i - 1, c(1.0))]
        }
    }

    /// `Z x`: constrained coefficients to broken nodal values.
    pub fn extend(&self, x: &CVec) -> CVec {
        let mut out = CVec::zeros(self.mesh.total);
        for (e, em) in self.mesh.edges.iter().enumerate() {
            for i in 0..em.nodes {
                out[em.offset + i] = self.node_coeffs(e, i).iter().map(|&(p, w)| w * x[p]).sum();
            }
        }
        out
    }

    /// `Z^H b`.
    pub fn restrict(&self, b: &CVec) -> CVec {
        let mut out = CVec::zeros(self.n_dofs);
        for (e, em) in self.mesh.edges.iter().enumerate() {
            for i in 0..em.nodes {
                for (p, w) in self.node_coeffs(e, i) {
                    out[p] += w.conj() * b[em.offset + i];
                }
            }
        }
        out
    }

    /// Load vector `Z^H M f` of a broken function.
    pub fn load(&self, f: &CVec) -> CVec {
        self.restrict(&self.mesh.mass_apply(f))
    }

    /// Largest violation of `P_v^⊥ Ψ(v) = 0` over all vertices.
    pub fn constraint_residual(&self, u: &CVec) -> f64 {
        let mut worst: f64 = 0.0;
        for blk in &self.blocks {
            let vals = CVec::from_iterator(
                blk.slots.len(),
                blk.slots.iter().map(|&(e, end)| {
                    let em = &self.mesh.edges[e];
                    u[em.offset + if end == End::Start { 0 } else { em.nodes - 1 }]
                }),
            );
            let proj = &blk.q * (blk.q.adjoint() * &vals);
            worst = worst.max((vals - proj).norm());
        }
        worst
    }

    pub fn dense_unconstrained(&self) -> Result<DenseForms> {
        let n = self.mesh.total;
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { dofs: n, limit: DENSE_LIMIT });
        }
        let mut k = CMat::zeros(n, n);
        let mut v = CMat::zeros(n, n);
        let mut m = CMat::zeros(n, n);
        let mut r = CMat::zeros(n, n);
        for (em, f) in self.mesh.edges.iter().zip(&self.forms) {
            let o = em.offset;
            for (dst, t) in [(&mut k, &f.stiffness), (&mut v, &f.potential), (&mut m, &f.mass)] {
                for i in 0..em.nodes {
                    dst[(o + i, o + i)] = c(t.diag[i]);
                    if i + 1 < em.nodes {
                        dst[(o + i, o + i + 1)] = c(t.off[i]);
                        dst[(o + i + 1, o + i)] = c(t.off[i]);
                    }
                }
            }
        }
        let node = |e: usize, end: End| {
            let em = &self.mesh.edges[e];
            em.offset + if end == End::Start { 0 } else { em.nodes - 1 }
        };
        for blk in &self.blocks {
            let theta = &blk.q * &blk.robin * blk.q.adjoint();
            for (s, &(e, end)) in blk.slots.iter().enumerate() {
                for (t, &(e2, end2)) in blk.slots.iter().enumerate() {
                    r[(node(e, end), node(e2, end2))] += theta[(s, t)];
                }
            }
        }
        let mut z = CMat::zeros(n, self.n_dofs);
        for (e, em) in self.mesh.edges.iter().enumerate() {
            for i in 0..em.nodes {
                for (p, w) in self.node_coeffs(e, i) {
                    z[(em.offset + i, p)] = w;
                }
            }
        }
        Ok(DenseForms { k, v, m, r, z })
    }

    /// Constrained `A = Z^H (K + V + R) Z` and `M_c = Z^H M Z`.
    pub fn dense_constrained(&self) -> Result<(CMat, CMat)> {
        let n = self.n_dofs;
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { dofs: n, limit: DENSE_LIMIT });
        }
        let mut a = CMat::zeros(n, n);
        let mut m = CMat::zeros(n, n);
        for (e, em) in self.mesh.edges.iter().enumerate() {
            let f = &self.forms[e];
            let coeffs: Vec<Vec<(usize, C)>> = (0..em.nodes).map(|i| self.node_coeffs(e, i)).collect();
            let mut add = |i: usize, j: usize, av: f64, mv: f64| {
                for &(p, wp) in &coeffs[i] {
                    for &(q, wq) in &coeffs[j] {
                        let w = wp.conj() * wq;
                        a[(p, q)] += w * av;
                        m[(p, q)] += w * mv;
                    }
                }
            };
            for i in 0..em.nodes {
                add(i, i, f.stiffness.diag[i] + f.potential.diag[i], f.mass.diag[i]);
                if i + 1 < em.nodes {
                    let av = f.stiffness.off[i] + f.potential.off[i];
                    add(i, i + 1, av, f.mass.off[i]);
                    add(i + 1, i, av, f.mass.off[i]);
                }
            }
        }
        for blk in &self.blocks {
            for k in 0..blk.rank() {
                for l in 0..blk.rank() {
                    a[(blk.offset + k, blk.offset + l)] += blk.robin[(k, l)];
                }
            }
        }
        Ok((a, m))
    }

    /// `(A x, M_c x)` for constrained coefficients, without forming matrices.
    pub fn apply_constrained(&self, x: &CVec) -> (CVec, CVec) {
        let u = self.extend(x);
        let mut au = CVec::zeros(self.mesh.total);
        for (em, f) in self.mesh.edges.iter().zip(&self.forms) {
            let o = em.offset;
            for i in 0..em.nodes {
                let mut s = u[o + i] * (f.stiffness.diag[i] + f.potential.diag[i]);
                if i > 0 {
                    s += u[o + i - 1] * (f.stiffness.off[i - 1] + f.potential.off[i - 1]);
                }
                if i + 1 < em.nodes {
                    s += u[o + i + 1] * (f.stiffness.off[i] + f.potential.off[i]);
                }
                au[o + i] = s;
            }
        }
        let mut ax = self.restrict(&au);
        for blk in &self.blocks {
            let a = x.rows(blk.offset, blk.rank()).into_owned();
            let ra = &blk.robin * a;
            for k in 0..blk.rank() {
                ax[blk.offset + k] += ra[k];
            }
        }
        (ax, self.restrict(&self.mesh.mass_apply(&u)))
    }

    /// Factorization of `A - z M_c` (with transparent terms at truncated half-lines).
    pub fn factor(self: &Arc<Self>, z: C) -> Result<ShiftedSystem> {
        ShiftedSystem::new(self.clone(), z)
    }

    /// Solves `(A - z M_c) u = M_c f` and returns `u` in broken layout.
    pub fn resolvent_solve(self: &Arc<Self>, z: C, f: &CVec) -> Result<CVec> {
        let sys = self.factor(z)?;
        Ok(sys.solve(&self.load(f)))
    }

    /// All eigenpairs of `A φ = λ M_c φ`, ascending, M-orthonormal, in broken layout.
    pub fn eigenpairs(&self) -> Result<Eigenpairs> {
        if self.has_transparent_ends() {
            return Err(Error::InvalidArgument(
                "eigenpairs need finite edges (no transparent truncation)".into(),
            ));
        }
        let (a, m) = self.dense_constrained()?;
        let (mut values, x) = generalized_hermitian_eigen(&a, &m)?;
        let anorm = a.norm();
        drop((a, m));
        for k in 0..values.len() {
            let col = x.column(k).into_owned();
            let (ax, mx) = self.apply_constrained(&col);
            // Rayleigh quotient on the original pencil sharpens small eigenvalues
            values[k] = col.dotc(&ax).re / col.dotc(&mx).re;
            let r = (ax - mx * c(values[k])).norm();
            if r > 1e-10 * anorm * col.norm() {
                return Err(Error::Solver(format!(
                    "eigenpair {k} residual {r:.3e} exceeds 1e-10 ||A||"
                )));
            }
        }
        let mut vectors = CMat::zeros(self.mesh.total, values.len());
        for k in 0..values.len() {
            let mut u = self.extend(&x.column(k).into_owned());
            normalize_phase(&mut u);
            vectors.set_column(k, &u);
        }
        Ok(Eigenpairs { values, vectors })
    }

    /// Trace `Ψ(v)` of a broken function, one entry per incident edge end.
    pub fn vertex_values(&self, u: &CVec, v: VertexId) -> CVec {
        let blk = self.block_of(v);
        CVec::from_iterator(
            blk.slots.len(),
            blk.slots.iter().map(|&(e, end)| self.end_value(u, e, end)),
        )
    }

    pub fn end_value(&self, u: &CVec, e: usize, end: End) -> C {
        let em = &self.mesh.edges[e];
        u[em.offset + if end == End::Start { 0 } else { em.nodes - 1 }]
    }

    /// Outgoing derivative at one edge end.
    ///
    /// With [`DerivativeRule::Duality`] the derivative of a solution of
    /// `(-d²/dx² + B - z) u = f` is recovered from the weak form tested with
    /// the end hat function, which is second-order accurate and exact for
    /// discrete solutions.
    pub fn end_derivative(&self, u: &CVec, e: usize, end: End, rule: &DerivativeRule) -> C {
        let em = &self.mesh.edges[e];
        let f = &self.forms[e];
        let o = em.offset;
        let n = em.nodes;
        let (i, j, jo) = match end {
            End::Start => (0, 1, 0),
            End::Finish => (n - 1, n - 2, n - 2),
        };
        match rule {
            DerivativeRule::OneSided => (u[o + j] - u[o + i]) / em.h(),
            DerivativeRule::Duality { z, f: rhs } => {
                let ediag = f.stiffness.diag[i] + f.potential.diag[i];
                let eoff = f.stiffness.off[jo] + f.potential.off[jo];
                let au = u[o + i] * (c(ediag) - z * f.mass.diag[i]) + u[o + j] * (c(eoff) - z * f.mass.off[jo]);
                let mf = match rhs {
                    Some(rhs) => rhs[o + i] * f.mass.diag[i] + rhs[o + j] * f.mass.off[jo],
                    None => c(0.0),
                };
                -(au - mf)
            }
        }
    }

    /// `Ψ'(v)` (outgoing derivatives), one entry per incident edge end.
    pub fn vertex_derivative(&self, u: &CVec, v: VertexId, rule: &DerivativeRule) -> CVec {
        let blk = self.block_of(v);
        CVec::from_iterator(
            blk.slots.len(),
            blk.slots.iter().map(|&(e, end)| self.end_derivative(u, e, end, rule)),
        )
    }
}

/// How outgoing derivatives are extracted from a discrete function.
#[derive(Clone, Debug)]
pub enum DerivativeRule<'a> {
    /// Weak-form (variational) derivative of a solution of `(H - z) u = f`;
    /// `f = None` means `f = 0`.
    Duality { z: C, f: Option<&'a CVec> },
    /// One-sided difference quotient over the end element.
    OneSided,
}

/// Rotates a vector so that its first entry of at least half the maximal
/// modulus is real and positive.
pub fn normalize_phase(u: &mut CVec) {
    let max = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    if let Some(p) = u.iter().find(|v| v.norm() >= 0.5 * max) {
        let ph = p.conj() / p.norm();
        *u *= ph;
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// Broken-layout eigenvectors, one per column.
    pub vectors: CMat,
}

struct EdgeFactor {
    eoff: Vec<C>,
    lu: TridiagLu,
    w0: Vec<C>,
    w1: Vec<C>,
}

/// `A - z M_c` factored for repeated solves.
pub struct ShiftedSystem {
    ops: Arc<DiscreteOperatorSet>,
    z: C,
    edges: Vec<EdgeFactor>,
    /// Schur complement on vertex unknowns.
    schur: Option<LU<C, Dyn, Dyn>>,
    /// Coupling from each edge end to the vertex equations: `S_e`.
    s_e: Vec<[[C; 2]; 2]>,
}

impl ShiftedSystem {
    fn new(ops: Arc<DiscreteOperatorSet>, z: C) -> Result<Self> {
        let mut edges = Vec::with_capacity(ops.mesh.edges.len());
        let mut s_e = Vec::with_capacity(ops.mesh.edges.len());
        for (em, f) in ops.mesh.edges.iter().zip(&ops.forms) {
            let n = em.nodes;
            let ediag: Vec<C> = (0..n)
                .map(|i| c(f.stiffness.diag[i] + f.potential.diag[i]) - z * f.mass.diag[i])
                .collect();
            let eoff: Vec<C> = (0..n - 1)
                .map(|i| c(f.stiffness.off[i] + f.potential.off[i]) - z * f.mass.off[i])
                .collect();
            let m = n - 2;
            let lu = TridiagLu::new(&eoff[1..n - 2], &ediag[1..n - 1], &eoff[1..n - 2])?;
            let mut w0 = vec![c(0.0); m];
            w0[0] = eoff[0];
            lu.solve_in_place(&mut w0);
            let mut w1 = vec![c(0.0); m];
            w1[m - 1] = eoff[n - 2];
            lu.solve_in_place(&mut w1);
            s_e.push([
                [ediag[0] - eoff[0] * w0[0], -eoff[0] * w1[0]],
                [-eoff[n - 2] * w0[m - 1], ediag[n - 1] - eoff[n - 2] * w1[m - 1]],
            ]);
            edges.push(EdgeFactor { eoff, lu, w0, w1 });
        }
        let base = ops.n_interior;
        let nv = ops.n_dofs - base;
        let mut sv = CMat::zeros(nv, nv);
        for (e, s) in s_e.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    for (p, wp) in ops.end_coeffs(e, a) {
                        for (q, wq) in ops.end_coeffs(e, b) {
                            sv[(p - base, q - base)] += wp.conj() * s[a][b] * wq;
                        }
                    }
                }
            }
        }
        let ik = I * sqrt_im_pos(z);
        for blk in &ops.blocks {
            for k in 0..blk.rank() {
                for l in 0..blk.rank() {
                    sv[(blk.offset - base + k, blk.offset - base + l)] += blk.robin[(k, l)];
                }
            }
            if blk.transparent {
                sv[(blk.offset - base, blk.offset - base)] -= ik;
            }
        }
        let schur = if nv > 0 {
            let lu = sv.lu();
            if !lu.is_invertible() {
                return Err(Error::Solver(format!("A - zM is singular at z = {z}")));
            }
            Some(lu)
        } else {
            None
        };
        Ok(Self { ops, z, edges, schur, s_e })
    }

    pub fn z(&self) -> C {
        self.z
    }

    pub fn ops(&self) -> &Arc<DiscreteOperatorSet> {
        &self.ops
    }

    /// Solves for a constrained load and returns the broken-layout solution.
    pub fn solve(&self, load: &CVec) -> CVec {
        self.solve_with_data(load, &[])
    }

    /// As [`solve`](Self::solve), with prescribed end values `Ψ(v)` at
    /// Dirichlet vertices (those with `P = 0`).
    pub fn solve_with_data(&self, load: &CVec, data: &[(VertexId, CVec)]) -> CVec {
        let ops = &self.ops;
        let mut prescribed: Vec<[Option<C>; 2]> = vec![[None, None]; ops.mesh.edges.len()];
        for (v, vals) in data {
            let blk = ops.block_of(*v);
            assert_eq!(blk.rank(), 0, "boundary data only at Dirichlet vertices");
            for (s, &(e, end)) in blk.slots.iter().enumerate() {
                prescribed[e][end_index(end)] = Some(vals[s]);
            }
        }
        let base = ops.n_interior;
        let mut ys = Vec::with_capacity(self.edges.len());
        let mut rhs = load.rows(base, ops.n_dofs - base).into_owned();
        for (e, ef) in self.edges.iter().enumerate() {
            let io = ops.interior_offset[e];
            let m = ef.w0.len();
            let mut y: Vec<C> = (0..m).map(|i| load[io + i]).collect();
            ef.lu.solve_in_place(&mut y);
            let r = [ef.eoff[0] * y[0], ef.eoff[m] * y[m - 1]];
            for a in 0..2 {
                for (p, wp) in ops.end_coeffs(e, a) {
                    let mut v = r[a];
                    for b in 0..2 {
                        if let Some(g) = prescribed[e][b] {
                            v += self.s_e[e][a][b] * g;
                        }
                    }
                    rhs[p - base] -= wp.conj() * v;
                }
            }
            ys.push(y);
        }
        let a = match &self.schur {
            Some(lu) => lu.solve(&rhs).expect("invertible Schur complement"),
            None => CVec::zeros(0),
        };
        let mut out = CVec::zeros(ops.mesh.total);
        for (e, ef) in self.edges.iter().enumerate() {
            let em = &ops.mesh.edges[e];
            let mut ends = [c(0.0); 2];
            for k in 0..2 {
                ends[k] = match prescribed[e][k] {
                    Some(g) => g,
                    None => ops.end_coeffs(e, k).iter().map(|&(p, w)| w * a[p - base]).sum(),
                };
            }
            let o = em.offset;
            out[o] = ends[0];
            out[o + em.nodes - 1] = ends[1];
            for i in 0..ef.w0.len() {
                out[o + 1 + i] = ys[e][i] - ef.w0[i] * ends[0] - ef.w1[i] * ends[1];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct OpNormOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for OpNormOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iter: 500, seed: 0x5eed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpNorm {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Operator norm `‖A‖` between weighted spaces by power iteration on `A* A`.
///
/// `apply` maps the domain to the codomain, `adjoint` is the Hilbert-space
/// adjoint, `mass_in`/`mass_out` apply the Gram matrices of the two spaces.
pub fn opnorm(
    dim_in: usize,
    apply: &dyn Fn(&CVec) -> CVec,
    adjoint: &dyn Fn(&CVec) -> CVec,
    mass_in: &dyn Fn(&CVec) -> CVec,
    mass_out: &dyn Fn(&CVec) -> CVec,
    opts: &OpNormOptions,
) -> OpNorm {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = CVec::from_fn(dim_in, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let norm_in = |v: &CVec| v.dotc(&mass_in(v)).re.max(0.0).sqrt();
    let nv = norm_in(&v);
    if nv == 0.0 {
        return OpNorm { value: 0.0, converged: true, iterations: 0 };
    }
    v /= c(nv);
    let mut sigma = 0.0;
    for it in 1..=opts.max_iter {
        let w = apply(&v);
        let s = w.dotc(&mass_out(&w)).re.max(0.0).sqrt();
        if s == 0.0 {
            return OpNorm { value: 0.0, converged: true, iterations: it };
        }
        let mut next = adjoint(&w);
        let nn = norm_in(&next);
        if nn == 0.0 {
            return OpNorm { value: s, converged: true, iterations: it };
        }
        next /= c(nn);
        if it > 1 && (s - sigma).abs() <= opts.rel_tol * s {
            return OpNorm { value: s.max(sigma), converged: true, iterations: it };
        }
        sigma = s;
        v = next;
    }
    OpNorm { value: sigma, converged: false, iterations: opts.max_iter }
}
