use std::f64::consts::PI;

use proptest::prelude::*;
use qgraph::fem::{opnorm, DerivativeRule, DiscreteOperatorSet, MeshSpec, OpNormOptions};
use qgraph::graph::{ConditionSpec, EdgeLength, GraphBuilder, MetricGraph, PotentialSpec, VertexId, VertexRole};
use qgraph::linalg::{c, CMat, CVec, C, I};

fn interval(left: ConditionSpec, right: ConditionSpec, pot: PotentialSpec) -> MetricGraph {
    let mut b = GraphBuilder::new();
    let v0 = b.vertex("a", VertexRole::Inner, left);
    let v1 = b.vertex("b", VertexRole::Inner, right);
    b.edge("e", v0, Some(v1), EdgeLength::Finite(1.0), pot);
    b.build_plain().unwrap()
}

/// Loop with a stem, a general complex coupling and a Robin end.
fn awkward_graph() -> MetricGraph {
    let mut b = GraphBuilder::new();
    let p = CMat::from_row_slice(
        3,
        3,
        &[c(0.5), C::new(0.0, 0.5), c(0.0), C::new(0.0, -0.5), c(0.5), c(0.0), c(0.0), c(0.0), c(1.0)],
    );
    let theta = &p * c(0.7);
    let w = b.vertex("w", VertexRole::Inner, ConditionSpec::General { p, theta });
    let t = b.vertex("t", VertexRole::Inner, ConditionSpec::Robin(-0.3));
    b.edge("loop", w, Some(w), EdgeLength::Finite(1.3), PotentialSpec::poly(vec![0.5, -1.0, 2.0]));
    b.edge("stem", w, Some(t), EdgeLength::Finite(0.7), PotentialSpec::samples(vec![1.0, 3.0, -2.0]));
    b.build_plain().unwrap()
}

#[test]
fn dirichlet_interval_matrices_at_quarter_mesh() {
    let g = interval(ConditionSpec::Dirichlet, ConditionSpec::Dirichlet, PotentialSpec::zero());
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(5)).unwrap();
    let (a, m) = ops.dense_constrained().unwrap();
    assert_eq!(a.nrows(), 3);
    for i in 0..3 {
        assert!((a[(i, i)] - c(8.0)).norm() < 1e-12);
        assert!((m[(i, i)] - c(1.0 / 6.0)).norm() < 1e-14);
        if i + 1 < 3 {
            assert!((a[(i, i + 1)] - c(-4.0)).norm() < 1e-12);
            assert!((m[(i, i + 1)] - c(1.0 / 24.0)).norm() < 1e-14);
        }
    }
}

#[test]
fn robin_parameter_adds_to_the_end_diagonal() {
    let alpha = 2.5;
    let neu = interval(ConditionSpec::Neumann, ConditionSpec::Dirichlet, PotentialSpec::zero());
    let rob = interval(ConditionSpec::Robin(alpha), ConditionSpec::Dirichlet, PotentialSpec::zero());
    let spec = MeshSpec::with_nodes(5);
    let (a0, _) = DiscreteOperatorSet::new(&neu, &spec).unwrap().dense_constrained().unwrap();
    let (a1, _) = DiscreteOperatorSet::new(&rob, &spec).unwrap().dense_constrained().unwrap();
    let d = a1 - a0;
    // vertex unknowns follow the three interior ones
    assert!((d[(3, 3)] - c(alpha)).norm() < 1e-14);
    assert!((d.norm() - alpha).abs() < 1e-14);
}

#[test]
fn forms_are_hermitian_and_constraint_basis_is_orthonormal() {
    let g = awkward_graph();
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(9)).unwrap();
    let f = ops.dense_unconstrained().unwrap();
    for m in [&f.k, &f.v, &f.m, &f.r] {
        assert!((m - m.adjoint()).norm() < 1e-12);
    }
    let gram = f.z.adjoint() * &f.z;
    assert!((gram - CMat::identity(ops.dim(), ops.dim())).norm() < 1e-12);
    let (a, mc) = ops.dense_constrained().unwrap();
    let a2 = f.z.adjoint() * (&f.k + &f.v + &f.r) * &f.z;
    let m2 = f.z.adjoint() * &f.m * &f.z;
    assert!((a - a2).norm() < 1e-10);
    assert!((mc - m2).norm() < 1e-12);
}

#[test]
fn structured_solver_matches_dense_solve() {
    let g = awkward_graph();
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(11)).unwrap();
    let (a, m) = ops.dense_constrained().unwrap();
    let z = C::new(-0.7, 1.3);
    let f = ops.mesh.interpolate(&|e, x| C::new((e as f64 + x).cos(), x * x));
    let load = ops.load(&f);
    let dense = (&a - &m * z).lu().solve(&load).unwrap();
    let u = ops.factor(z).unwrap().solve(&load);
    assert!((ops.extend(&dense) - &u).norm() < 1e-10 * u.norm());
    assert!(ops.constraint_residual(&u) < 1e-12);
}

#[test]
fn dirichlet_ground_state_and_mesh_convergence() {
    let g = interval(ConditionSpec::Dirichlet, ConditionSpec::Dirichlet, PotentialSpec::zero());
    let err = |n: usize| {
        let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(n)).unwrap();
        ops.eigenpairs().unwrap().values[0] - PI * PI
    };
    let (e1, e2) = (err(41), err(81));
    assert!(e1.abs() < 1e-2 * PI * PI);
    let ratio = e1 / e2;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn eigenpairs_are_mass_orthonormal_with_small_residual() {
    let g = awkward_graph();
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(15)).unwrap();
    let eig = ops.eigenpairs().unwrap();
    let mphi = CMat::from_fn(ops.broken_dim(), eig.values.len(), |r, k| {
        ops.mesh.mass_apply(&eig.vectors.column(k).into_owned())[r]
    });
    let gram = eig.vectors.adjoint() * mphi;
    assert!((gram - CMat::identity(eig.values.len(), eig.values.len())).norm() < 1e-9);
    assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn neumann_ground_state_is_constant_and_constant_potential_shifts() {
    let spec = MeshSpec::with_nodes(51);
    let g = interval(ConditionSpec::Neumann, ConditionSpec::Neumann, PotentialSpec::zero());
    let ops = DiscreteOperatorSet::new(&g, &spec).unwrap();
    let eig = ops.eigenpairs().unwrap();
    assert!(eig.values[0].abs() < 1e-10);
    assert!(eig.vectors.column(0).iter().all(|v| (v - c(1.0)).norm() < 1e-10));
    let g1 = interval(ConditionSpec::Neumann, ConditionSpec::Neumann, PotentialSpec::constant(1.0));
    let eig1 = DiscreteOperatorSet::new(&g1, &spec).unwrap().eigenpairs().unwrap();
    for k in 0..10 {
        assert!((eig1.values[k] - eig.values[k] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn resolvent_solve_examples() {
    let g = interval(ConditionSpec::Dirichlet, ConditionSpec::Dirichlet, PotentialSpec::zero());
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(41)).unwrap();
    let eig = ops.eigenpairs().unwrap();
    let z = C::new(0.5, 2.0);
    let phi = eig.vectors.column(0).into_owned();
    let u = ops.resolvent_solve(z, &phi).unwrap();
    assert!((u - &phi / (c(eig.values[0]) - z)).norm() < 1e-10 * phi.norm());
    let zero = ops.resolvent_solve(z, &CVec::zeros(ops.broken_dim())).unwrap();
    assert_eq!(zero.norm(), 0.0);

    let g = interval(ConditionSpec::Neumann, ConditionSpec::Neumann, PotentialSpec::zero());
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(41)).unwrap();
    let one = CVec::from_element(ops.broken_dim(), c(1.0));
    let u = ops.resolvent_solve(I, &one).unwrap();
    assert!(u.iter().all(|v| (v - I).norm() < 1e-12));
}

#[test]
fn vertex_derivative_of_linear_and_sine_functions() {
    let g = interval(ConditionSpec::Neumann, ConditionSpec::Neumann, PotentialSpec::zero());
    let a = VertexId(0);
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(11)).unwrap();
    let u = ops.mesh.interpolate(&|_, x| c(x));
    let d = ops.vertex_derivative(&u, a, &DerivativeRule::Duality { z: c(0.0), f: None });
    assert!((d[0] - c(1.0)).norm() < 1e-10);

    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(1001)).unwrap();
    let u = ops.mesh.interpolate(&|_, x| c(x.sin()));
    let f = u.clone();
    let d = ops.vertex_derivative(&u, a, &DerivativeRule::Duality { z: c(0.0), f: Some(&f) });
    assert!((d[0] - c(1.0)).norm() < 2e-6, "{}", d[0]);
    let d = ops.vertex_derivative(&u, VertexId(1), &DerivativeRule::Duality { z: c(0.0), f: Some(&f) });
    assert!((d[0] + c(1f64.cos())).norm() < 2e-6);
}

#[test]
fn derivative_of_dirichlet_resolvent_matches_closed_form() {
    let g = interval(ConditionSpec::Dirichlet, ConditionSpec::Dirichlet, PotentialSpec::zero());
    let z = I;
    let k = z.sqrt();
    let exact = k * (k / 2.0).tan() / z;
    let err = |n: usize| {
        let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(n)).unwrap();
        let f = CVec::from_element(ops.broken_dim(), c(1.0));
        let u = ops.resolvent_solve(z, &f).unwrap();
        let d = ops.vertex_derivative(&u, VertexId(0), &DerivativeRule::Duality { z, f: Some(&f) });
        (d[0] - exact).norm()
    };
    let (e1, e2) = (err(51), err(101));
    assert!(e1 < 1e-4, "{e1}");
    assert!(e1 / e2 > 3.5, "{e1} {e2}");
}

#[test]
fn opnorm_examples() {
    let n = 6;
    let ident = |v: &CVec| v.clone();
    let r = opnorm(n, &ident, &ident, &ident, &ident, &OpNormOptions::default());
    assert!((r.value - 1.0).abs() < 1e-10 && r.converged);
    let scale = |v: &CVec| v * c(3.0);
    let r = opnorm(n, &scale, &scale, &ident, &ident, &OpNormOptions::default());
    assert!((r.value - 3.0).abs() < 1e-10);
    let e = CVec::from_fn(n, |i, _| c(if i == 2 { 1.0 } else { 0.0 }));
    let proj = |v: &CVec| &e * e.dotc(v);
    let r = opnorm(n, &proj, &proj, &ident, &ident, &OpNormOptions::default());
    assert!((r.value - 1.0).abs() < 1e-10);
}

#[test]
fn dense_limit_is_enforced() {
    let g = interval(ConditionSpec::Neumann, ConditionSpec::Neumann, PotentialSpec::zero());
    let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(6100)).unwrap();
    assert!(matches!(ops.eigenpairs(), Err(qgraph::Error::TooLarge { .. })));
    assert!(ops.factor(I).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resolvent_identity_holds(zr in -3.0..3.0f64, zi in 0.2..3.0f64, wr in -3.0..3.0f64, wi in -3.0..-0.2f64) {
        let g = awkward_graph();
        let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(21)).unwrap();
        let (z, w) = (C::new(zr, zi), C::new(wr, wi));
        let f = ops.mesh.interpolate(&|e, x| C::new(1.0 + e as f64 * x, (3.0 * x).sin()));
        let rz = ops.resolvent_solve(z, &f).unwrap();
        let rw = ops.resolvent_solve(w, &f).unwrap();
        let rzrw = ops.resolvent_solve(z, &rw).unwrap();
        let lhs = &rz - &rw;
        let rhs = rzrw * (z - w);
        prop_assert!((&lhs - &rhs).norm() <= 1e-8 * lhs.norm().max(1e-300));
    }

    #[test]
    fn assembly_is_hermitian_for_random_potentials(a0 in -5.0..5.0f64, a1 in -5.0..5.0f64, a2 in -5.0..5.0f64, alpha in -3.0..3.0f64, n in 3usize..30) {
        let g = interval(ConditionSpec::Robin(alpha), ConditionSpec::Kirchhoff, PotentialSpec::poly(vec![a0, a1, a2]));
        let ops = DiscreteOperatorSet::new(&g, &MeshSpec::with_nodes(n)).unwrap();
        let (a, m) = ops.dense_constrained().unwrap();
        prop_assert!((&a - a.adjoint()).norm() <= 1e-12 * (1.0 + a.norm()));
        prop_assert!((&m - m.adjoint()).norm() <= 1e-15);
    }
}
