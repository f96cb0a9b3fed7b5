//! Spectrum of the auxiliary core Hamiltonian (the core alone, Kirchhoff at
//! the connecting vertices), its zero modes, and the resulting
//! classification of the small-core limit.
//!
//! Everything here lives at unit core scale. The discrete operator on the
//! ε-scaled core with the same number of nodes per edge is unitarily
//! equivalent to `ε^{-2}` times the unit one: eigenvalues scale by `ε^{-2}`
//! and nodal eigenvector values by `ε^{-1/2}`.

use std::sync::Arc;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{DiscreteOperatorSet, Mesh, MeshSpec};
use crate::graph::{GraphSystem, VertexId};
use crate::linalg::{c, hermitian_eigen, norm2, CMat, CVec};

/// Eigenpairs of the unit-scale auxiliary Hamiltonian.
#[derive(Clone, Debug)]
pub struct EigenData {
    pub values: Vec<f64>,
    /// Broken-layout eigenvectors, M-orthonormal.
    pub phi: CMat,
    /// `c_n = (φ_n(v_1), ..., φ_n(v_N))`, one column per mode.
    pub c: CMat,
    pub ops: Arc<DiscreteOperatorSet>,
    pub connecting: Vec<VertexId>,
}

impl EigenData {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mesh(&self) -> &Mesh {
        &self.ops.mesh
    }

    pub fn n_leads(&self) -> usize {
        self.connecting.len()
    }

    /// `ε^{-2} λ_n`.
    pub fn scaled_values(&self, eps: f64) -> Vec<f64> {
        self.values.iter().map(|l| l / (eps * eps)).collect()
    }

    /// Vertex values of a broken function on the core, averaged over the
    /// edge ends at each connecting vertex.
    pub fn connecting_values(&self, u: &CVec) -> CVec {
        CVec::from_iterator(
            self.connecting.len(),
            self.connecting.iter().map(|&v| {
                let vals = self.ops.vertex_values(u, v);
                vals.sum() / c(vals.len() as f64)
            }),
        )
    }
}

/// Computes all eigenpairs of the auxiliary Hamiltonian at unit scale.
pub fn auxiliary_spectrum(system: &GraphSystem, mesh: &MeshSpec) -> Result<EigenData> {
    let aux = system.aux_graph(1.0);
    let ops = DiscreteOperatorSet::new(&aux.graph, mesh)?;
    let eig = ops.eigenpairs()?;
    let mut data = EigenData {
        values: eig.values,
        phi: eig.vectors,
        c: CMat::zeros(0, 0),
        ops,
        connecting: aux.connecting,
    };
    data.c = CMat::from_fn(data.n_leads(), data.len(), |_, _| c(0.0));
    for k in 0..data.len() {
        let ck = data.connecting_values(&data.phi.column(k).into_owned());
        data.c.set_column(k, &ck);
    }
    Ok(data)
}

/// Default zero threshold `1e-8 (1 + ‖B^in‖_∞ + ℓ_min^{-2})` of the unit core.
pub fn default_tol0(system: &GraphSystem) -> f64 {
    let g = system.graph();
    let mut bmax: f64 = 0.0;
    let mut lmin = f64::INFINITY;
    for &e in system.inner_edges() {
        let ed = g.edge(e);
        let l = ed.base_length().expect("core edges are finite");
        bmax = bmax.max(ed.potential.sup_norm(Some(l)));
        lmin = lmin.min(l);
    }
    1e-8 * (1.0 + bmax + 1.0 / (lmin * lmin))
}

/// Indices with `|λ| ≤ tol0`, and eigenvalues falling in the ambiguous band
/// `(tol0, 100 tol0]`.
pub fn zero_indices(values: &[f64], tol0: f64) -> (Vec<usize>, Vec<f64>) {
    let zero = (0..values.len()).filter(|&i| values[i].abs() <= tol0).collect();
    let ambiguous = values
        .iter()
        .copied()
        .filter(|l| l.abs() > tol0 && l.abs() <= 100.0 * tol0)
        .collect();
    (zero, ambiguous)
}

/// Zero modes `φ̂_k` of the auxiliary Hamiltonian with their vertex values `ĉ_k`.
#[derive(Clone, Debug)]
pub struct ZeroModes {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Broken layout, one column per mode.
    pub phi_hat: CMat,
    /// `N × m`.
    pub c_hat: CMat,
    pub ambiguous: Vec<f64>,
    pub tol0: f64,
}

impl ZeroModes {
    pub fn m(&self) -> usize {
        self.indices.len()
    }
}

pub fn detect_zero_modes(eig: &EigenData, tol0: f64) -> ZeroModes {
    let (mut indices, ambiguous) = zero_indices(&eig.values, tol0);
    for l in &ambiguous {
        warn!("eigenvalue {l:.3e} lies in the ambiguous band ({tol0:.3e}, {:.3e}]", 100.0 * tol0);
    }
    indices.sort_by(|&a, &b| eig.values[a].abs().total_cmp(&eig.values[b].abs()));
    let mesh = eig.mesh();
    let mut basis: Vec<CVec> = Vec::new();
    for &i in &indices {
        let mut v = eig.phi.column(i).into_owned();
        for b in &basis {
            let p = mesh.inner(b, &v);
            v -= b * p;
        }
        let n = mesh.norm(&v);
        basis.push(v / c(n));
    }
    let m = basis.len();
    let phi_hat = CMat::from_fn(mesh.total, m, |r, k| basis[k][r]);
    let mut c_hat = CMat::zeros(eig.n_leads(), m);
    for (k, b) in basis.iter().enumerate() {
        c_hat.set_column(k, &eig.connecting_values(b));
    }
    ZeroModes {
        values: indices.iter().map(|&i| eig.values[i]).collect(),
        indices,
        phi_hat,
        c_hat,
        ambiguous,
        tol0,
    }
}

/// `Ĉ = Σ_k ĉ_k ĉ_k*`.
pub fn chat_matrix(c_hat: &CMat) -> CMat {
    c_hat * c_hat.adjoint()
}

/// Eigenvalues of `Ĉ` below this are treated as zero.
pub fn rank_tolerance(chat: &CMat) -> f64 {
    (1e-10 * norm2(chat)).max(1e-12)
}

/// Orthonormal basis of `Ran Ĉ` and the restriction eigenvalues.
fn range_decomposition(chat: &CMat) -> (CMat, Vec<f64>) {
    let (vals, vecs) = hermitian_eigen(chat);
    let tol = rank_tolerance(chat);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol).collect();
    let u = CMat::from_fn(chat.nrows(), keep.len(), |r, k| vecs[(r, keep[k])]);
    (u, keep.iter().map(|&i| vals[i]).collect())
}

/// Orthogonal projector `P̂` onto `Ran Ĉ`.
pub fn riesz_projection(chat: &CMat) -> CMat {
    let (u, _) = range_decomposition(chat);
    &u * u.adjoint()
}

/// `Ĉ₀^{-1}` on `Ran P̂`, extended by zero.
pub fn c0_inverse(chat: &CMat) -> CMat {
    let (u, mu) = range_decomposition(chat);
    let d = CMat::from_diagonal(&CVec::from_iterator(mu.len(), mu.iter().map(|m| c(1.0 / m))));
    &u * d * u.adjoint()
}

/// `L_{kk'} = δ_{kk'} - (ĉ_k, Ĉ₀^{-1} ĉ_{k'})`.
pub fn lambda_coefficients(c_hat: &CMat) -> CMat {
    let m = c_hat.ncols();
    let inv = c0_inverse(&chat_matrix(c_hat));
    CMat::identity(m, m) - c_hat.adjoint() * inv * c_hat
}

#[derive(Clone, Debug)]
pub struct NonGenericData {
    pub m: usize,
    pub c_hat: CMat,
    pub chat: CMat,
    pub p_hat: CMat,
    pub c0_inv: CMat,
    pub l: CMat,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum EffectiveModel {
    /// `0` is not an eigenvalue of the auxiliary Hamiltonian; the leads
    /// decouple with Dirichlet conditions.
    Generic,
    NonGeneric(NonGenericData),
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub model: EffectiveModel,
    pub zero_modes: ZeroModes,
    pub n_leads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationSummary {
    pub case: String,
    pub m: usize,
    pub rank_p_hat: usize,
    pub effective: String,
    pub tol0: f64,
    pub zero_eigenvalues: Vec<f64>,
    pub ambiguous_eigenvalues: Vec<f64>,
    pub p_hat: Vec<Vec<[f64; 2]>>,
    pub l: Vec<Vec<[f64; 2]>>,
    pub c_hat_norm: f64,
}

fn matrix_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|k| [m[(r, k)].re, m[(r, k)].im]).collect())
        .collect()
}

impl Classification {
    pub fn is_generic(&self) -> bool {
        matches!(self.model, EffectiveModel::Generic)
    }

    pub fn p_hat(&self) -> CMat {
        match &self.model {
            EffectiveModel::Generic => CMat::zeros(self.n_leads, self.n_leads),
            EffectiveModel::NonGeneric(d) => d.p_hat.clone(),
        }
    }

    pub fn rank_p_hat(&self) -> usize {
        let p = self.p_hat();
        (0..p.nrows()).map(|i| p[(i, i)].re).sum::<f64>().round() as usize
    }

    /// `L`, empty in the generic case.
    pub fn l(&self) -> CMat {
        match &self.model {
            EffectiveModel::Generic => CMat::zeros(0, 0),
            EffectiveModel::NonGeneric(d) => d.l.clone(),
        }
    }

    /// Name of the effective vertex condition at the junction of the leads.
    pub fn effective_condition(&self) -> String {
        let n = self.n_leads;
        let p = self.p_hat();
        let r = self.rank_p_hat();
        if self.is_generic() {
            return "Dirichlet (decoupling)".into();
        }
        if r == 0 {
            return "Dirichlet".into();
        }
        let kirchhoff = CMat::from_element(n, n, c(1.0 / n as f64));
        if (&p - kirchhoff).norm() < 1e-8 {
            return "Kirchhoff".into();
        }
        if r == n {
            return "Neumann (decoupled)".into();
        }
        format!("projector coupling of rank {r}")
    }

    /// One-line description, e.g. `NonGeneric, m=1, effective: Kirchhoff`.
    pub fn describe(&self) -> String {
        match &self.model {
            EffectiveModel::Generic => format!("Generic, effective: {}", self.effective_condition()),
            EffectiveModel::NonGeneric(d) => {
                if self.rank_p_hat() == 0 {
                    format!("NonGeneric, P̂=0, effective: {}", self.effective_condition())
                } else {
                    format!("NonGeneric, m={}, effective: {}", d.m, self.effective_condition())
                }
            }
        }
    }

    pub fn summary(&self) -> ClassificationSummary {
        ClassificationSummary {
            case: if self.is_generic() { "Generic" } else { "NonGeneric" }.into(),
            m: self.zero_modes.m(),
            rank_p_hat: self.rank_p_hat(),
            effective: self.effective_condition(),
            tol0: self.zero_modes.tol0,
            zero_eigenvalues: self.zero_modes.values.clone(),
            ambiguous_eigenvalues: self.zero_modes.ambiguous.clone(),
            p_hat: matrix_rows(&self.p_hat()),
            l: matrix_rows(&self.l()),
            c_hat_norm: self.zero_modes.c_hat.norm(),
        }
    }
}

/// Classifies the small-core limit. An eigenvalue in the ambiguous band is
/// an error unless `force` is set.
pub fn classify(eig: &EigenData, tol0: f64, force: bool) -> Result<Classification> {
    let zm = detect_zero_modes(eig, tol0);
    if let Some(&l) = zm.ambiguous.first() {
        if !force {
            return Err(Error::AmbiguousGap { lambda: l, tol0 });
        }
    }
    let n = eig.n_leads();
    let model = if zm.m() == 0 {
        EffectiveModel::Generic
    } else {
        let chat = chat_matrix(&zm.c_hat);
        let p_hat = riesz_projection(&chat);
        let c0_inv = c0_inverse(&chat);
        let l = lambda_coefficients(&zm.c_hat);
        EffectiveModel::NonGeneric(NonGenericData { m: zm.m(), c_hat: zm.c_hat.clone(), chat, p_hat, c0_inv, l })
    };
    Ok(Classification { model, zero_modes: zm, n_leads: n })
}

/// `Λ^ε χ = Σ_{kk'} L_{kk'} φ̂^ε_k (φ̂^ε_{k'}, χ)` on the ε-scaled core, for
/// nodal values `chi` on the scaled mesh. Nodal values of `φ̂^ε_k` are
/// `ε^{-1/2}` times the unit ones and the scaled mass is `ε` times the unit
/// mass, so `Λ^ε` acts on nodal values exactly as `Λ` does at unit scale.
pub fn apply_lambda(cls: &Classification, mesh_unit: &Mesh, chi: &CVec) -> CVec {
    let l = cls.l();
    if l.nrows() == 0 {
        return CVec::zeros(chi.len());
    }
    let phi = &cls.zero_modes.phi_hat;
    let coeffs = phi.adjoint() * mesh_unit.mass_apply(chi);
    phi * (l * coeffs)
}

#[derive(Clone, Debug, Serialize)]
pub struct WeylReport {
    pub n_min: usize,
    pub n_max: usize,
    /// `λ_n / n²` for `n_min ≤ n ≤ n_max`.
    pub ratios: Vec<(usize, f64)>,
    pub band: (f64, f64),
    /// `sup |φ_n|` for `0 ≤ n ≤ n_max`.
    pub sup_norms: Vec<f64>,
    pub max_sup: f64,
}

impl WeylReport {
    pub fn within(&self, lower: f64, upper: f64, sup_bound: f64) -> bool {
        self.band.0 >= lower && self.band.1 <= upper && self.max_sup <= sup_bound
    }
}

/// Weyl-type growth `λ_n ≍ n²` and uniform sup bounds of the eigenfunctions.
pub fn weyl_check(eig: &EigenData, n_min: usize, n_max: usize) -> Result<WeylReport> {
    if n_min == 0 || n_min > n_max || n_max >= eig.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n_min <= n_max < {} modes",
            eig.len()
        )));
    }
    let ratios: Vec<(usize, f64)> =
        (n_min..=n_max).map(|n| (n, eig.values[n] / (n * n) as f64)).collect();
    let band = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, r)| (lo.min(r), hi.max(r)));
    let sup_norms: Vec<f64> = (0..=n_max)
        .map(|n| eig.mesh().sup_norm(&eig.phi.column(n).into_owned()))
        .collect();
    let max_sup = sup_norms.iter().copied().fold(0.0, f64::max);
    Ok(WeylReport { n_min, n_max, ratios, band, sup_norms, max_sup })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_selection_with_warning_band() {
        let (z, amb) = zero_indices(&[-1e-12, 3e-9, 0.5], 1e-8);
        assert_eq!(z, vec![0, 1]);
        assert!(amb.is_empty());
        let (z, amb) = zero_indices(&[1e-12, 5e-7, 0.5], 1e-8);
        assert_eq!(z, vec![0]);
        assert_eq!(amb, vec![5e-7]);
    }

    #[test]
    fn chat_and_projection_examples() {
        let c1 = CMat::from_column_slice(2, 1, &[c(1.0), c(1.0)]);
        let chat = chat_matrix(&c1);
        assert_eq!(chat, CMat::from_element(2, 2, c(1.0)));
        let p = riesz_projection(&chat);
        assert!((p - CMat::from_element(2, 2, c(0.5))).norm() < 1e-14);
        assert!(lambda_coefficients(&c1).norm() < 1e-14);

        let none = CMat::zeros(2, 0);
        assert_eq!(chat_matrix(&none), CMat::zeros(2, 2));
        assert_eq!(riesz_projection(&CMat::zeros(2, 2)), CMat::zeros(2, 2));

        let two = CMat::from_column_slice(2, 2, &[c(1.0), c(0.0), c(1.0), c(0.0)]);
        let chat = chat_matrix(&two);
        assert_eq!(chat, CMat::from_row_slice(2, 2, &[c(2.0), c(0.0), c(0.0), c(0.0)]));
        let p = riesz_projection(&chat);
        assert!((p - CMat::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)])).norm() < 1e-14);
        let l = lambda_coefficients(&two);
        let expect = CMat::from_row_slice(2, 2, &[c(0.5), c(-0.5), c(-0.5), c(0.5)]);
        assert!((l - expect).norm() < 1e-14);

        let zero = CMat::zeros(1, 1);
        assert_eq!(lambda_coefficients(&zero), CMat::identity(1, 1));
    }
}
