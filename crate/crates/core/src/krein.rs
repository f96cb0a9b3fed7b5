//! Kreĭn resolvent calculus for a graph with small core.
//!
//! The reference operator decouples the leads (Dirichlet at the star center)
//! from the core (Kirchhoff at the connecting vertices). The resolvent of the
//! coupled operator is recovered from the two decoupled resolvents and a
//! `2N × 2N` boundary correction:
//!
//! ```text
//! R^ε_z = R̊_z - G_z (M_z - Θ)^{-1} Ğ_z,   Θ = [[0, I], [I, 0]]
//! ```
//!
//! Traces: `τ^out ψ = Ψ'(0)` and `σ^out ψ = Ψ(0)` on the leads;
//! `τ^in ψ` is the value at each connecting vertex and
//! `σ^in ψ = -Σ Ψ'(v)` sums the outgoing derivatives of the core edges.
//!
//! The core side is evaluated through the unit-scale auxiliary eigenpairs.
//! With `p_n = (φ_n, χ)` taken at unit scale,
//!
//! ```text
//! R̊^{in,ε} χ = ε² Σ φ_n p_n / (λ_n - ε² z)
//! Ğ^{in,ε} χ = ε² Σ c_n p_n / (λ_n - ε² z)
//! G^{in,ε} q = ε  Σ φ_n (c_n, q) / (λ_n - ε² z)
//! M^{in,ε}   = ε  Σ c_n c_n^* / (λ_n - ε² z)
//! ```
//!
//! acting on nodal values of the ε-scaled core with the same node count.

use std::sync::Arc;
use std::time::Instant;

use log::debug;
use nalgebra::{Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{DerivativeRule, DiscreteOperatorSet, Mesh, MeshSpec, ShiftedSystem};
use crate::graph::{ConditionSpec, GraphSystem, VertexId};
use crate::linalg::{c, hermitian_eigen, norm2, CMat, CVec, C};
use crate::spectral::{auxiliary_spectrum, EigenData};

/// Center of the lead star built by [`GraphSystem::lead_star`].
const CENTER: VertexId = VertexId(0);

fn check_z(z: C) -> Result<()> {
    if z.im == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidArgument(format!("spectral parameter must be non-real, got {z}")));
    }
    Ok(())
}

/// Truncation policy for the core spectral series.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeriesOptions {
    /// Number of modes used; `None` uses every computed mode.
    pub max_modes: Option<usize>,
    /// Largest admissible tail estimate relative to `‖M^{in,ε}‖`.
    pub tail_tol: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self { max_modes: None, tail_tol: 1e-8 }
    }
}

/// `M^{in,ε}_z` together with its truncation metadata.
#[derive(Clone, Debug)]
pub struct MInSeries {
    pub matrix: CMat,
    pub n_used: usize,
    /// Relative tail estimate; zero when every discrete mode is summed.
    pub tail: f64,
}

/// Weyl-law bound on the omitted part of the series, relative to `‖M‖`.
///
/// With `λ_n ≥ C n²` (C fitted from the computed modes) and
/// `‖c_n‖² ≤ c_max²`, the tail is at most `ε c_max² / (C n_max)`.
fn tail_estimate(eig: &EigenData, n_used: usize, eps: f64, partial_norm: f64) -> f64 {
    if n_used >= eig.len() {
        return 0.0;
    }
    if n_used < 2 {
        return f64::INFINITY;
    }
    let fit = (1..n_used)
        .filter(|&n| eig.values[n] > 0.0)
        .map(|n| eig.values[n] / (n * n) as f64)
        .fold(f64::INFINITY, f64::min);
    let cmax = (0..n_used).map(|n| eig.c.column(n).norm_squared()).fold(0.0, f64::max);
    if !fit.is_finite() || fit <= 0.0 {
        return f64::INFINITY;
    }
    let tail = eps * cmax / (fit * (n_used - 1) as f64);
    tail / partial_norm.max(f64::MIN_POSITIVE)
}

fn series_weights(eig: &EigenData, n_used: usize, eps: f64, z: C) -> Vec<C> {
    (0..n_used).map(|n| c(1.0) / (c(eig.values[n]) - z * (eps * eps))).collect()
}

fn used_modes(eig: &EigenData, opts: &SeriesOptions) -> usize {
    opts.max_modes.map_or(eig.len(), |m| m.min(eig.len()))
}

/// `M^{in,ε}_z = ε Σ c_n c_n^* / (λ_n - ε² z)` from unit-scale eigendata.
pub fn m_in_series(z: C, eps: f64, eig: &EigenData, opts: &SeriesOptions) -> Result<MInSeries> {
    check_z(z)?;
    let n_used = used_modes(eig, opts);
    let w = series_weights(eig, n_used, eps, z);
    let matrix = m_in_from(eig, &w, eps);
    let tail = tail_estimate(eig, n_used, eps, norm2(&matrix));
    if tail > opts.tail_tol {
        return Err(Error::SeriesTail { estimate: tail, tol: opts.tail_tol });
    }
    Ok(MInSeries { matrix, n_used, tail })
}

fn m_in_from(eig: &EigenData, w: &[C], eps: f64) -> CMat {
    let n = eig.n_leads();
    let mut m = CMat::zeros(n, n);
    for (k, wk) in w.iter().enumerate() {
        let ck = eig.c.column(k);
        m += ck * ck.adjoint() * (wk * eps);
    }
    m
}

/// The leads joined at a Dirichlet center: `R̊^out`, `G^out`, `Ğ^out`.
pub struct OuterSide {
    ops: Arc<DiscreteOperatorSet>,
    n: usize,
}

impl OuterSide {
    pub fn new(system: &GraphSystem, mesh: &MeshSpec) -> Result<Self> {
        let g = system.lead_star(ConditionSpec::Dirichlet)?;
        Ok(Self { ops: DiscreteOperatorSet::new(&g, mesh)?, n: system.n_leads() })
    }

    pub fn ops(&self) -> &Arc<DiscreteOperatorSet> {
        &self.ops
    }

    pub fn mesh(&self) -> &Mesh {
        &self.ops.mesh
    }

    /// Factors the star at `z` and computes `G^out_z e_j` and `M^out_z`.
    pub fn at(&self, z: C) -> Result<OuterAtZ> {
        check_z(z)?;
        let sys = self.ops.factor(z)?;
        let zero = CVec::zeros(self.ops.dim());
        let mut g = CMat::zeros(self.ops.broken_dim(), self.n);
        let mut m_out = CMat::zeros(self.n, self.n);
        for j in 0..self.n {
            let mut q = CVec::zeros(self.n);
            q[j] = c(1.0);
            let u = sys.solve_with_data(&zero, &[(CENTER, q)]);
            let d = self.ops.vertex_derivative(&u, CENTER, &DerivativeRule::Duality { z, f: None });
            m_out.set_column(j, &d);
            g.set_column(j, &u);
        }
        Ok(OuterAtZ { sys, g, m_out })
    }
}

/// Lead-side maps at one spectral parameter.
pub struct OuterAtZ {
    sys: ShiftedSystem,
    g: CMat,
    m_out: CMat,
}

impl OuterAtZ {
    pub fn z(&self) -> C {
        self.sys.z()
    }

    pub fn ops(&self) -> &Arc<DiscreteOperatorSet> {
        self.sys.ops()
    }

    pub fn mesh(&self) -> &Mesh {
        &self.sys.ops().mesh
    }

    /// `M^out_z = τ^out G^out_z`, the Dirichlet-to-Neumann map of the leads.
    pub fn m_out(&self) -> &CMat {
        &self.m_out
    }

    /// `R̊^out_z χ`.
    pub fn r0(&self, chi: &CVec) -> CVec {
        self.sys.solve(&self.ops().load(chi))
    }

    /// `τ^out u` for a solution of `(H - z) u = f` on the leads.
    pub fn trace(&self, u: &CVec, f: Option<&CVec>) -> CVec {
        self.ops().vertex_derivative(u, CENTER, &DerivativeRule::Duality { z: self.z(), f })
    }

    /// `Ğ^out_z χ = τ^out R̊^out_z χ`.
    pub fn gcheck(&self, chi: &CVec) -> CVec {
        self.trace(&self.r0(chi), Some(chi))
    }

    /// `G^out_z q`: the solution with lead values `q` at the center.
    pub fn g(&self, q: &CVec) -> CVec {
        &self.g * q
    }
}

/// Core-side maps at one `(z, ε)`, evaluated by the spectral series.
#[derive(Clone, Debug)]
pub struct InnerAtZ {
    eig: Arc<EigenData>,
    eps: f64,
    z: C,
    w: Vec<C>,
    m_in: MInSeries,
}

impl InnerAtZ {
    pub fn new(eig: Arc<EigenData>, z: C, eps: f64, opts: &SeriesOptions) -> Result<Self> {
        let m_in = m_in_series(z, eps, &eig, opts)?;
        let w = series_weights(&eig, m_in.n_used, eps, z);
        Ok(Self { eig, eps, z, w, m_in })
    }

    pub fn z(&self) -> C {
        self.z
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn m_in(&self) -> &MInSeries {
        &self.m_in
    }

    pub fn eigen(&self) -> &Arc<EigenData> {
        &self.eig
    }

    /// `(φ_n, χ)` at unit scale for the used modes.
    fn coefficients(&self, chi: &CVec) -> CVec {
        let mchi = self.eig.mesh().mass_apply(chi);
        self.eig.phi.columns(0, self.w.len()).ad_mul(&mchi)
    }

    fn weighted(&self, p: &CVec, factor: f64) -> CVec {
        CVec::from_iterator(p.len(), p.iter().zip(&self.w).map(|(a, w)| a * w * factor))
    }

    /// `R̊^{in,ε}_z χ` on nodal values of the scaled core.
    pub fn r0(&self, chi: &CVec) -> CVec {
        let p = self.weighted(&self.coefficients(chi), self.eps * self.eps);
        self.eig.phi.columns(0, self.w.len()) * p
    }

    /// `Ğ^{in,ε}_z χ = τ^in R̊^{in,ε}_z χ`.
    pub fn gcheck(&self, chi: &CVec) -> CVec {
        let p = self.weighted(&self.coefficients(chi), self.eps * self.eps);
        self.eig.c.columns(0, self.w.len()) * p
    }

    /// `G^{in,ε}_z q`.
    pub fn g(&self, q: &CVec) -> CVec {
        let p = self.weighted(&self.eig.c.columns(0, self.w.len()).ad_mul(q), self.eps);
        self.eig.phi.columns(0, self.w.len()) * p
    }

    /// `τ^in u`: the value at each connecting vertex.
    pub fn trace(&self, u: &CVec) -> CVec {
        self.eig.connecting_values(u)
    }
}

/// The four `N × N` blocks of `[[M^out, -I], [-I, M^in]]^{-1}`.
#[derive(Clone, Debug)]
pub struct MiddleBlocks {
    /// `(M^in M^out - I)^{-1} M^in`
    pub tl: CMat,
    /// `(M^in M^out - I)^{-1}`
    pub tr: CMat,
    /// `(M^out M^in - I)^{-1}`
    pub bl: CMat,
    /// `M^out (M^in M^out - I)^{-1}`
    pub br: CMat,
    /// Condition numbers of `M^in M^out - I` and `M^out M^in - I`.
    pub cond: [f64; 2],
}

impl MiddleBlocks {
    pub fn apply(&self, a: &CVec, b: &CVec) -> (CVec, CVec) {
        (&self.tl * a + &self.tr * b, &self.bl * a + &self.br * b)
    }

    pub fn as_matrix(&self) -> CMat {
        let n = self.tl.nrows();
        let mut m = CMat::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.tl);
        m.view_mut((0, n), (n, n)).copy_from(&self.tr);
        m.view_mut((n, 0), (n, n)).copy_from(&self.bl);
        m.view_mut((n, n), (n, n)).copy_from(&self.br);
        m
    }
}

/// Condition number in the spectral norm.
pub fn condition_number(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

const COND_LIMIT: f64 = 1e14;

fn factor_checked(m: CMat, what: &str) -> Result<(LU<C, Dyn, Dyn>, f64)> {
    let cond = condition_number(&m);
    if !(cond < COND_LIMIT) {
        return Err(Error::Singular(format!("{what} has condition number {cond:.3e}")));
    }
    Ok((m.lu(), cond))
}

/// Middle blocks of the Kreĭn formula, computed by linear solves.
pub fn block_inverse(m_out: &CMat, m_in: &CMat) -> Result<MiddleBlocks> {
    let n = m_out.nrows();
    let id = CMat::identity(n, n);
    let (lu1, c1) = factor_checked(m_in * m_out - &id, "M^in M^out - I")?;
    let (lu2, c2) = factor_checked(m_out * m_in - &id, "M^out M^in - I")?;
    let solve = |lu: &LU<C, Dyn, Dyn>, b: &CMat| lu.solve(b).ok_or_else(|| Error::Singular("middle block".into()));
    let tl = solve(&lu1, m_in)?;
    let tr = solve(&lu1, &id)?;
    let bl = solve(&lu2, &id)?;
    let br = m_out * &tr;
    debug!("middle blocks: cond {c1:.3e}, {c2:.3e}");
    Ok(MiddleBlocks { tl, tr, bl, br, cond: [c1, c2] })
}

/// A graph with small core prepared for the Kreĭn path: unit-scale
/// auxiliary eigenpairs and the Dirichlet lead star.
pub struct KreinSystem {
    system: GraphSystem,
    mesh: MeshSpec,
    eig: Arc<EigenData>,
    outer: OuterSide,
}

impl KreinSystem {
    pub fn new(system: &GraphSystem, mesh: &MeshSpec) -> Result<Self> {
        let eig = Arc::new(auxiliary_spectrum(system, mesh)?);
        Self::with_eigen(system, mesh, eig)
    }

    pub fn with_eigen(system: &GraphSystem, mesh: &MeshSpec, eig: Arc<EigenData>) -> Result<Self> {
        Ok(Self { system: system.unit(), mesh: *mesh, outer: OuterSide::new(system, mesh)?, eig })
    }

    pub fn system(&self) -> &GraphSystem {
        &self.system
    }

    pub fn mesh_spec(&self) -> &MeshSpec {
        &self.mesh
    }

    pub fn eigen(&self) -> &Arc<EigenData> {
        &self.eig
    }

    pub fn outer(&self) -> &OuterSide {
        &self.outer
    }

    /// Discrete operators of the core at scale `eps` (Kirchhoff at the
    /// connecting vertices), used for derivative traces.
    pub fn inner_ops(&self, eps: f64) -> Result<Arc<DiscreteOperatorSet>> {
        DiscreteOperatorSet::new(&self.system.aux_graph(eps).graph, &self.mesh)
    }

    pub fn at(&self, z: C, eps: f64, opts: &SeriesOptions) -> Result<KreinAtZ> {
        self.at_with(Arc::new(self.outer.at(z)?), eps, opts)
    }

    /// As [`at`](Self::at), reusing lead-side data already factored at `z`.
    pub fn at_with(&self, outer: Arc<OuterAtZ>, eps: f64, opts: &SeriesOptions) -> Result<KreinAtZ> {
        let z = outer.z();
        let inner = InnerAtZ::new(self.eig.clone(), z, eps, opts)?;
        let blocks = block_inverse(outer.m_out(), &inner.m_in.matrix)?;
        let inner_ops = self.inner_ops(eps)?;
        Ok(KreinAtZ { outer, inner, blocks, inner_ops })
    }
}

/// Everything needed to apply `R^ε_z` by the Kreĭn formula.
pub struct KreinAtZ {
    outer: Arc<OuterAtZ>,
    inner: InnerAtZ,
    blocks: MiddleBlocks,
    inner_ops: Arc<DiscreteOperatorSet>,
}

impl KreinAtZ {
    pub fn z(&self) -> C {
        self.outer.z()
    }

    pub fn eps(&self) -> f64 {
        self.inner.eps
    }

    pub fn outer(&self) -> &Arc<OuterAtZ> {
        &self.outer
    }

    pub fn inner(&self) -> &InnerAtZ {
        &self.inner
    }

    pub fn blocks(&self) -> &MiddleBlocks {
        &self.blocks
    }

    pub fn m_out(&self) -> &CMat {
        self.outer.m_out()
    }

    pub fn m_in(&self) -> &CMat {
        &self.inner.m_in.matrix
    }

    pub fn inner_ops(&self) -> &Arc<DiscreteOperatorSet> {
        &self.inner_ops
    }

    pub fn n_out(&self) -> usize {
        self.outer.mesh().total
    }

    /// Mesh of the lead part.
    pub fn out_mesh(&self) -> &Mesh {
        self.outer.mesh()
    }

    /// Mesh of the scaled core.
    pub fn in_mesh(&self) -> &Mesh {
        &self.inner_ops.mesh
    }

    /// Leads followed by the scaled core, the layout of [`apply_joined`](Self::apply_joined).
    pub fn full_mesh(&self) -> Mesh {
        self.out_mesh().join(self.in_mesh())
    }

    /// `R^ε_z (χ^out, χ^in)` split into lead and core parts.
    pub fn apply(&self, chi_out: &CVec, chi_in: &CVec) -> (CVec, CVec) {
        let u_out = self.outer.r0(chi_out);
        let go = self.outer.trace(&u_out, Some(chi_out));
        let p = self.inner.coefficients(chi_in);
        let pw = self.inner.weighted(&p, self.eps() * self.eps());
        let used = self.inner.w.len();
        let gi = self.inner.eig.c.columns(0, used) * &pw;
        let u_in = self.inner.eig.phi.columns(0, used) * &pw;
        let (qo, qi) = self.blocks.apply(&go, &gi);
        (u_out - self.outer.g(&qo), u_in - self.inner.g(&qi))
    }

    pub fn apply_joined(&self, chi: &CVec) -> CVec {
        let (a, b) = split(chi, self.n_out());
        let (u, v) = self.apply(&a, &b);
        join(&u, &v)
    }

    /// Boundary residuals of a pair `(u^out, u^in)`.
    pub fn verify(&self, u_out: &CVec, u_in: &CVec, rule: &TraceRule) -> VertexReport {
        verify_vertex_conditions(
            self.outer.ops(),
            &self.inner_ops,
            &self.inner.eig.connecting,
            u_out,
            u_in,
            rule,
        )
    }
}

pub fn split(u: &CVec, n_out: usize) -> (CVec, CVec) {
    (u.rows(0, n_out).into_owned(), u.rows(n_out, u.len() - n_out).into_owned())
}

pub fn join(a: &CVec, b: &CVec) -> CVec {
    CVec::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Direct finite-element resolvent of `H^ε` on the full graph (leads first).
pub struct DirectResolvent {
    ops: Arc<DiscreteOperatorSet>,
    n_out: usize,
}

impl DirectResolvent {
    /// `system` carries the scale ε of its core.
    pub fn new(system: &GraphSystem, mesh: &MeshSpec) -> Result<Self> {
        let ops = DiscreteOperatorSet::new(&system.full_graph(), mesh)?;
        let n_out = ops.mesh.edges[..system.n_leads()].iter().map(|e| e.nodes).sum();
        Ok(Self { ops, n_out })
    }

    pub fn ops(&self) -> &Arc<DiscreteOperatorSet> {
        &self.ops
    }

    pub fn mesh(&self) -> &Mesh {
        &self.ops.mesh
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn at(&self, z: C) -> Result<ShiftedSystem> {
        check_z(z)?;
        self.ops.factor(z)
    }
}

/// `R̂^out_z = R̊^out_z - G^out_z P̂ (P̂ M^out_z P̂)^{-1} P̂ Ğ^out_z`, the
/// resolvent of the lead star with center condition `P̂^⊥Ψ(0) = 0`,
/// `P̂Ψ'(0) = 0`.
pub struct EffectiveResolvent {
    outer: Arc<OuterAtZ>,
    u: CMat,
    k: Option<LU<C, Dyn, Dyn>>,
}

/// Orthonormal basis of the range of an orthogonal projector.
pub fn projector_basis(p: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(p);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.5).collect();
    CMat::from_fn(p.nrows(), keep.len(), |r, k| vecs[(r, keep[k])])
}

impl EffectiveResolvent {
    pub fn new(outer: Arc<OuterAtZ>, p_hat: &CMat) -> Result<Self> {
        let u = projector_basis(p_hat);
        let k = if u.ncols() == 0 {
            None
        } else {
            let (lu, _) = factor_checked(u.adjoint() * outer.m_out() * &u, "P̂ M^out P̂")?;
            Some(lu)
        };
        Ok(Self { outer, u, k })
    }

    pub fn z(&self) -> C {
        self.outer.z()
    }

    pub fn apply(&self, chi: &CVec) -> CVec {
        let r = self.outer.r0(chi);
        let Some(k) = &self.k else { return r };
        let d = self.outer.trace(&r, Some(chi));
        let y = k.solve(&(self.u.adjoint() * d)).expect("factored");
        r - self.outer.g(&(&self.u * y))
    }
}

pub fn effective_resolvent(outer: Arc<OuterAtZ>, p_hat: &CMat, chi: &CVec) -> Result<CVec> {
    Ok(EffectiveResolvent::new(outer, p_hat)?.apply(chi))
}

/// Distance of the middle block from its small-core limit.
#[derive(Clone, Debug)]
pub struct LimitMatrixReport {
    /// `‖(M^in M^out - I)^{-1} M^in - P̂ (P̂ M^out P̂)^{-1} P̂‖`
    pub deviation: f64,
    /// `N_z = (P̂^⊥ (M^out)^{-1} P̂^⊥)^{-1}` on `Ran P̂^⊥`, in an orthonormal basis.
    pub n_z: Option<CMat>,
    pub n_z_cond: Option<f64>,
}

pub fn check_limit_matrix(m_out: &CMat, m_in: &CMat, p_hat: &CMat) -> Result<LimitMatrixReport> {
    let blocks = block_inverse(m_out, m_in)?;
    let u = projector_basis(p_hat);
    let limit = if u.ncols() == 0 {
        CMat::zeros(m_out.nrows(), m_out.ncols())
    } else {
        let (lu, _) = factor_checked(u.adjoint() * m_out * &u, "P̂ M^out P̂")?;
        &u * lu.solve(&u.adjoint()).expect("factored")
    };
    let deviation = norm2(&(&blocks.tl - limit));
    let n = m_out.nrows();
    let w = projector_basis(&(CMat::identity(n, n) - p_hat));
    let (n_z, n_z_cond) = if w.ncols() == 0 {
        (None, None)
    } else {
        match m_out.clone().try_inverse() {
            Some(inv) => {
                let inner = w.adjoint() * inv * &w;
                let cond = condition_number(&inner);
                (inner.try_inverse(), Some(cond))
            }
            None => (None, None),
        }
    };
    Ok(LimitMatrixReport { deviation, n_z, n_z_cond })
}

/// How boundary derivatives are read off discrete functions.
pub enum TraceRule<'a> {
    /// Weak-form derivatives of solutions of `(H - z) u = χ`.
    Duality { z: C, chi_out: &'a CVec, chi_in: &'a CVec },
    OneSided,
}

#[derive(Clone, Debug, Serialize)]
pub struct VertexResidual {
    /// Index `j` of the connecting vertex `v_j`.
    pub lead: usize,
    /// Largest deviation of an edge-end value from their mean.
    pub continuity: f64,
    /// `|Ψ'_lead(0) + Σ_core Ψ'(v_j)|`
    pub kirchhoff: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VertexReport {
    pub vertices: Vec<VertexResidual>,
    /// `‖τ^out ψ^out - σ^in ψ^in‖`
    pub coupling_out: f64,
    /// `‖τ^in ψ^in - σ^out ψ^out‖`
    pub coupling_in: f64,
}

impl VertexReport {
    pub fn max_continuity(&self) -> f64 {
        self.vertices.iter().map(|v| v.continuity).fold(0.0, f64::max)
    }

    pub fn max_kirchhoff(&self) -> f64 {
        self.vertices.iter().map(|v| v.kirchhoff).fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.max_continuity().max(self.max_kirchhoff()).max(self.coupling_out).max(self.coupling_in)
    }
}

/// Continuity and Kirchhoff residuals at the connecting vertices of a
/// function given as a lead part (on the lead star mesh) and a core part.
pub fn verify_vertex_conditions(
    out_ops: &DiscreteOperatorSet,
    in_ops: &DiscreteOperatorSet,
    connecting: &[VertexId],
    u_out: &CVec,
    u_in: &CVec,
    rule: &TraceRule,
) -> VertexReport {
    let (rule_out, rule_in) = match rule {
        TraceRule::Duality { z, chi_out, chi_in } => (
            DerivativeRule::Duality { z: *z, f: Some(chi_out) },
            DerivativeRule::Duality { z: *z, f: Some(chi_in) },
        ),
        TraceRule::OneSided => (DerivativeRule::OneSided, DerivativeRule::OneSided),
    };
    let tau_out = out_ops.vertex_derivative(u_out, CENTER, &rule_out);
    let sigma_out = out_ops.vertex_values(u_out, CENTER);
    let n = connecting.len();
    let mut tau_in = CVec::zeros(n);
    let mut sigma_in = CVec::zeros(n);
    let mut vertices = Vec::with_capacity(n);
    for (j, &v) in connecting.iter().enumerate() {
        let vals = in_ops.vertex_values(u_in, v);
        let ders = in_ops.vertex_derivative(u_in, v, &rule_in);
        tau_in[j] = vals.sum() / c(vals.len() as f64);
        sigma_in[j] = -ders.sum();
        let all: Vec<C> = std::iter::once(sigma_out[j]).chain(vals.iter().copied()).collect();
        let mean = all.iter().sum::<C>() / c(all.len() as f64);
        let continuity = all.iter().map(|x| (x - mean).norm()).fold(0.0, f64::max);
        vertices.push(VertexResidual { lead: j, continuity, kirchhoff: (tau_out[j] - sigma_in[j]).norm() });
    }
    VertexReport {
        vertices,
        coupling_out: (tau_out - sigma_in).norm(),
        coupling_in: (tau_in - sigma_out).norm(),
    }
}

/// Random smooth test function: on every edge a combination of
/// `cos(jπ x/ℓ)`, `j ≤ 2`, in the edge's own coordinate, so the same
/// function can be sampled on any mesh of the same graph.
#[derive(Clone, Debug)]
pub struct SmoothField {
    coeffs: Vec<[C; 3]>,
}

impl SmoothField {
    pub fn random(n_edges: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        Self { coeffs: (0..n_edges).map(|_| [draw(), draw(), draw()]).collect() }
    }

    pub fn sample(&self, mesh: &Mesh) -> CVec {
        mesh.interpolate(&|e, x| {
            let em = &mesh.edges[e];
            let t = x / em.length();
            let a = &self.coeffs[e];
            (0..3).map(|j| a[j] * (j as f64 * std::f64::consts::PI * t).cos()).sum()
        })
    }
}

/// Nodal values of a fine-mesh function at the nodes of a nested coarse mesh.
pub fn inject(fine: &CVec, fine_mesh: &Mesh, coarse_mesh: &Mesh) -> Result<CVec> {
    let mut out = CVec::zeros(coarse_mesh.total);
    for (fe, ce) in fine_mesh.edges.iter().zip(&coarse_mesh.edges) {
        if (fe.nodes - 1) % (ce.nodes - 1) != 0 {
            return Err(Error::InvalidArgument("meshes are not nested".into()));
        }
        let stride = (fe.nodes - 1) / (ce.nodes - 1);
        for i in 0..ce.nodes {
            out[ce.offset + i] = fine[fe.offset + i * stride];
        }
    }
    Ok(out)
}

fn relative(mesh: &Mesh, u: &CVec, reference: &CVec) -> f64 {
    let num = mesh.norm(&(u - reference));
    let den = mesh.norm(reference);
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// `n` nodes per edge refined `k` times by halving.
pub fn refined_nodes(n: usize, halvings: u32) -> usize {
    (n - 1) * 2usize.pow(halvings) + 1
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub eps: Vec<f64>,
    pub z: C,
    pub nodes_per_edge: usize,
    pub inputs: usize,
    pub seed: u64,
    pub series: SeriesOptions,
    /// Use zero inputs (a smoke test of the pipeline).
    pub zero_inputs: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.25],
            z: C::new(0.0, 2.0),
            nodes_per_edge: 400,
            inputs: 20,
            seed: 7,
            series: SeriesOptions::default(),
            zero_inputs: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRecord {
    pub eps: f64,
    /// Kreĭn path against the direct solver on the same mesh.
    pub same_mesh: f64,
    /// Kreĭn path at `h` against a direct reference at `h/4`.
    pub at_h: f64,
    /// Kreĭn path at `h/2` against the same reference.
    pub at_h2: f64,
    pub improvement: f64,
    /// Largest vertex residual of the Kreĭn output (weak-form derivatives).
    pub vertex_residual: f64,
    pub cond: [f64; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub z: [f64; 2],
    pub nodes_per_edge: usize,
    pub inputs: usize,
    pub seed: u64,
    pub records: Vec<OracleRecord>,
    pub seconds: f64,
}

impl OracleReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.records.iter().map(|r| r.at_h).fold(0.0, f64::max)
    }

    pub fn min_improvement(&self) -> f64 {
        self.records.iter().map(|r| r.improvement).fold(f64::INFINITY, f64::min)
    }
}

/// Compares the Kreĭn path with direct discretization on random smooth
/// inputs. The reference is the direct solver on a mesh refined twice, so
/// the discrepancy measures discretization error of the Kreĭn evaluation.
pub fn krein_vs_direct(system: &GraphSystem, cfg: &OracleConfig) -> Result<OracleReport> {
    let start = Instant::now();
    let unit = system.unit();
    let n = cfg.nodes_per_edge;
    let spec_h = MeshSpec::with_nodes(n);
    let spec_h2 = MeshSpec::with_nodes(refined_nodes(n, 1));
    let spec_ref = MeshSpec::with_nodes(refined_nodes(n, 2));
    let ks_h = KreinSystem::new(&unit, &spec_h)?;
    let ks_h2 = KreinSystem::new(&unit, &spec_h2)?;
    let outer_h = Arc::new(ks_h.outer().at(cfg.z)?);
    let outer_h2 = Arc::new(ks_h2.outer().at(cfg.z)?);
    let mut records = Vec::new();
    for &eps in &cfg.eps {
        let scaled = unit.scale_inner(eps)?;
        let k_h = ks_h.at_with(outer_h.clone(), eps, &cfg.series)?;
        let k_h2 = ks_h2.at_with(outer_h2.clone(), eps, &cfg.series)?;
        let d_h = DirectResolvent::new(&scaled, &spec_h)?;
        let d_ref = DirectResolvent::new(&scaled, &spec_ref)?;
        let s_h = d_h.at(cfg.z)?;
        let s_ref = d_ref.at(cfg.z)?;
        let mesh_h = k_h.full_mesh();
        let mesh_h2 = k_h2.full_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut rec = OracleRecord {
            eps,
            same_mesh: 0.0,
            at_h: 0.0,
            at_h2: 0.0,
            improvement: f64::INFINITY,
            vertex_residual: 0.0,
            cond: k_h.blocks().cond,
        };
        for _ in 0..cfg.inputs {
            let field = SmoothField::random(mesh_h.edges.len(), &mut rng);
            let sample = |m: &Mesh| if cfg.zero_inputs { CVec::zeros(m.total) } else { field.sample(m) };
            let chi_h = sample(&mesh_h);
            let chi_h2 = sample(&mesh_h2);
            let chi_ref = sample(d_ref.mesh());
            let (uo, ui) = k_h.apply(&split(&chi_h, k_h.n_out()).0, &split(&chi_h, k_h.n_out()).1);
            let u_h = join(&uo, &ui);
            let u_h2 = k_h2.apply_joined(&chi_h2);
            let direct_h = s_h.solve(&d_h.ops().load(&chi_h));
            let u_ref = s_ref.solve(&d_ref.ops().load(&chi_ref));
            rec.same_mesh = rec.same_mesh.max(relative(&mesh_h, &u_h, &direct_h));
            rec.at_h = rec.at_h.max(relative(&mesh_h, &u_h, &inject(&u_ref, d_ref.mesh(), &mesh_h)?));
            rec.at_h2 = rec.at_h2.max(relative(&mesh_h2, &u_h2, &inject(&u_ref, d_ref.mesh(), &mesh_h2)?));
            let (co, ci) = split(&chi_h, k_h.n_out());
            let rep = k_h.verify(&uo, &ui, &TraceRule::Duality { z: cfg.z, chi_out: &co, chi_in: &ci });
            rec.vertex_residual = rec.vertex_residual.max(rep.max());
        }
        rec.improvement = if rec.at_h == 0.0 { f64::INFINITY } else { rec.at_h / rec.at_h2 };
        records.push(rec);
    }
    Ok(OracleReport {
        z: [cfg.z.re, cfg.z.im],
        nodes_per_edge: n,
        inputs: cfg.inputs,
        seed: cfg.seed,
        records,
        seconds: start.elapsed().as_secs_f64(),
    })
}
