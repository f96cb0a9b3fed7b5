use std::sync::Arc;

use qgraph::fem::{DerivativeRule, DiscreteOperatorSet, MeshSpec};
use qgraph::graph::{ConditionSpec, GraphSystem, PotentialSpec};
use qgraph::krein::*;
use qgraph::linalg::{c, sqrt_im_pos, CMat, CVec, C, I};
use qgraph::spectral::{auxiliary_spectrum, classify, default_tol0};
use qgraph::systems::{interval_core, lasso, star_core, tuned_lasso, Leads};

mod common;
use common::{interval_m_in_exact, interval_m_in_shooting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Z: C = C::new(0.0, 2.0);

fn amax(v: &CVec) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn rvec(n: usize, rng: &mut impl Rng) -> CVec {
    CVec::from_fn(n, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

#[test]
fn m_out_for_half_lines_is_i_sqrt_z() {
    let s = interval_core(PotentialSpec::zero(), Leads::HalfLines);
    let out = OuterSide::new(&s, &MeshSpec::with_nodes(2001)).unwrap().at(Z).unwrap();
    let expect = CMat::identity(2, 2) * (I * sqrt_im_pos(Z));
    assert!((out.m_out() - expect).norm() < 1e-6);
}

#[test]
fn m_out_for_finite_lead_is_k_tan_k() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let out = OuterSide::new(&s, &MeshSpec::with_nodes(801)).unwrap().at(Z).unwrap();
    let k = sqrt_im_pos(Z);
    let m = out.m_out();
    assert!((m[(0, 0)] - k * k.tan()).norm() < 1e-6);
    // decoupled identical leads
    assert!(m[(0, 1)].norm() < 1e-14 && m[(1, 0)].norm() < 1e-14);
    assert!((m[(0, 0)] - m[(1, 1)]).norm() < 1e-12);
}

#[test]
fn half_line_g_out_is_outgoing_wave() {
    let s = lasso(PotentialSpec::zero(), PotentialSpec::constant(1.0), Leads::HalfLines);
    let out = OuterSide::new(&s, &MeshSpec::with_nodes(2001)).unwrap().at(Z).unwrap();
    let g = out.g(&CVec::from_element(1, c(1.0)));
    let k = sqrt_im_pos(Z);
    let exact = out.mesh().interpolate(&|_, x| (I * k * x).exp());
    assert!(amax(&(g - exact)) < 1e-6);
}

#[test]
fn interval_m_in_matches_closed_form_and_shooting() {
    let exact = interval_m_in_exact(Z);
    let shoot = interval_m_in_shooting(Z);
    assert!((&shoot - &exact).norm() < 1e-10);
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let eig = auxiliary_spectrum(&s, &MeshSpec::with_nodes(801)).unwrap();
    let m = m_in_series(Z, 1.0, &eig, &SeriesOptions::default()).unwrap();
    assert_eq!(m.n_used, eig.len());
    assert_eq!(m.tail, 0.0);
    assert!((&m.matrix - &exact).norm() < 1e-6, "{}", (&m.matrix - &exact).norm());
    assert!((&m.matrix - &shoot).norm() < 1e-6);
}

#[test]
fn m_matrices_are_symmetric_under_conjugation_and_have_positive_imaginary_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let systems = [
        interval_core(PotentialSpec::zero(), Leads::Finite(1.0)),
        star_core(3, Leads::HalfLines),
        tuned_lasso(41, Leads::Finite(2.0)),
    ];
    for s in &systems {
        let ks = KreinSystem::new(s, &MeshSpec::with_nodes(41)).unwrap();
        for z in [Z, C::new(-1.0, 1.0), C::new(3.0, -0.5)] {
            for eps in [1.0, 0.2] {
                let a = ks.at(z, eps, &SeriesOptions::default()).unwrap();
                let b = ks.at(z.conj(), eps, &SeriesOptions::default()).unwrap();
                assert!((a.m_out() - b.m_out().adjoint()).norm() < 1e-10);
                assert!((a.m_in() - b.m_in().adjoint()).norm() < 1e-10);
                for _ in 0..10 {
                    let q = rvec(s.n_leads(), &mut rng);
                    for m in [a.m_out(), a.m_in()] {
                        let im = q.dotc(&(m * &q)).im;
                        assert!(im * z.im.signum() > 0.0, "{im}");
                    }
                }
            }
        }
    }
}

#[test]
fn g_maps_are_adjoint_to_g_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = star_core(3, Leads::Finite(1.0));
    let ks = KreinSystem::new(&s, &MeshSpec::with_nodes(31)).unwrap();
    let eps = 0.3;
    let a = ks.at(Z, eps, &SeriesOptions::default()).unwrap();
    let b = ks.at(Z.conj(), eps, &SeriesOptions::default()).unwrap();
    for _ in 0..10 {
        let q = rvec(3, &mut rng);
        let f_in = rvec(a.in_mesh().total, &mut rng);
        let lhs = a.inner().gcheck(&f_in).dotc(&q);
        let rhs = a.in_mesh().inner(&f_in, &b.inner().g(&q));
        assert!((lhs - rhs).norm() < 1e-8 * (1.0 + lhs.norm()));
        let f_out = rvec(a.out_mesh().total, &mut rng);
        let lhs = a.outer().gcheck(&f_out).dotc(&q);
        let rhs = a.out_mesh().inner(&f_out, &b.outer().g(&q));
        assert!((lhs - rhs).norm() < 1e-8 * (1.0 + lhs.norm()));
    }
}

#[test]
fn sigma_of_g_returns_the_boundary_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = interval_core(PotentialSpec::constant(1.0), Leads::Finite(1.0));
    let ks = KreinSystem::new(&s, &MeshSpec::with_nodes(51)).unwrap();
    let a = ks.at(Z, 0.25, &SeriesOptions::default()).unwrap();
    let q = rvec(2, &mut rng);
    let g_out = a.outer().g(&q);
    let center = qgraph::graph::VertexId(0);
    assert!((a.outer().ops().vertex_values(&g_out, center) - &q).norm() < 1e-14);
    let g_in = a.inner().g(&q);
    let rule = DerivativeRule::Duality { z: Z, f: None };
    for (j, &v) in ks.eigen().connecting.iter().enumerate() {
        let sigma = -a.inner_ops().vertex_derivative(&g_in, v, &rule).sum();
        assert!((sigma - q[j]).norm() < 1e-9, "{sigma} {}", q[j]);
    }
}

#[test]
fn block_inverse_examples() {
    let one = |v: C| CMat::from_element(1, 1, v);
    let b = block_inverse(&one(C::new(0.0, 2.0)), &one(C::new(0.0, 3.0))).unwrap();
    assert!((b.tl[(0, 0)] - C::new(0.0, 3.0) / c(-7.0)).norm() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let mo = CMat::from_fn(3, 3, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)));
        let mi = CMat::from_fn(3, 3, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)));
        let b = block_inverse(&mo, &mi).unwrap();
        let mut big = CMat::zeros(6, 6);
        big.view_mut((0, 0), (3, 3)).copy_from(&mo);
        big.view_mut((3, 3), (3, 3)).copy_from(&mi);
        for i in 0..3 {
            big[(i, 3 + i)] = c(-1.0);
            big[(3 + i, i)] = c(-1.0);
        }
        let inv = big.try_inverse().unwrap();
        assert!((inv - b.as_matrix()).norm() < 1e-10);
    }

    let mo = CMat::from_diagonal(&CVec::from_vec(vec![C::new(1.0, 2.0), C::new(-0.5, 1.0)]));
    let b = block_inverse(&mo, &CMat::zeros(2, 2)).unwrap();
    assert_eq!(b.tl, CMat::zeros(2, 2));
    assert!((&b.tr + CMat::identity(2, 2)).norm() < 1e-15);
    assert!((&b.bl + CMat::identity(2, 2)).norm() < 1e-15);
    assert!((&b.br + &mo).norm() < 1e-15);
}

#[test]
fn singular_middle_matrix_is_reported() {
    let one = |v: f64| CMat::from_element(1, 1, c(v));
    assert!(matches!(block_inverse(&one(1.0), &one(1.0)), Err(qgraph::Error::Singular(_))));
}

fn same_mesh_check(s: &GraphSystem, nodes: usize, eps: f64, seed: u64) {
    let spec = MeshSpec::with_nodes(nodes);
    let ks = KreinSystem::new(s, &spec).unwrap();
    let a = ks.at(Z, eps, &SeriesOptions::default()).unwrap();
    let d = DirectResolvent::new(&s.scale_inner(eps).unwrap(), &spec).unwrap();
    let sys = d.at(Z).unwrap();
    assert_eq!(d.mesh().total, a.full_mesh().total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let chi = rvec(d.mesh().total, &mut rng);
        let u = a.apply_joined(&chi);
        let v = sys.solve(&d.ops().load(&chi));
        let rel = d.mesh().norm(&(&u - &v)) / d.mesh().norm(&v);
        assert!(rel < 1e-10, "{rel}");
        let (co, ci) = split(&chi, a.n_out());
        let (uo, ui) = split(&u, a.n_out());
        let rep = a.verify(&uo, &ui, &TraceRule::Duality { z: Z, chi_out: &co, chi_in: &ci });
        assert!(rep.max() < 1e-9 * (1.0 + amax(&u)), "{rep:?}");
    }
}

#[test]
fn krein_path_equals_direct_solver_on_the_same_mesh() {
    same_mesh_check(&interval_core(PotentialSpec::zero(), Leads::Finite(1.0)), 101, 0.25, 1);
    same_mesh_check(&interval_core(PotentialSpec::poly(vec![1.0, -2.0, 3.0]), Leads::HalfLines), 81, 0.1, 2);
    same_mesh_check(&star_core(3, Leads::Finite(1.5)), 61, 0.5, 3);
    same_mesh_check(&tuned_lasso(61, Leads::Finite(1.0)), 61, 0.2, 4);
}

#[test]
fn oracle_against_refined_direct_solution() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let cfg = OracleConfig { eps: vec![0.25], nodes_per_edge: 101, inputs: 5, ..Default::default() };
    let r = krein_vs_direct(&s, &cfg).unwrap();
    let rec = &r.records[0];
    assert!(rec.same_mesh < 1e-10);
    assert!(rec.at_h < 1e-3);
    assert!(rec.improvement > 3.5, "{}", rec.improvement);

    let zero = OracleConfig { zero_inputs: true, inputs: 2, nodes_per_edge: 21, ..cfg };
    let r = krein_vs_direct(&s, &zero).unwrap();
    assert_eq!(r.records[0].at_h, 0.0);
    assert_eq!(r.records[0].same_mesh, 0.0);
}

#[test]
fn effective_resolvent_with_zero_projection_is_dirichlet() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let out = Arc::new(OuterSide::new(&s, &MeshSpec::with_nodes(51)).unwrap().at(Z).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let chi = rvec(out.mesh().total, &mut rng);
    let r = effective_resolvent(out.clone(), &CMat::zeros(2, 2), &chi).unwrap();
    assert_eq!(r, out.r0(&chi));
}

#[test]
fn effective_resolvent_matches_direct_star_with_projected_condition() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let spec = MeshSpec::with_nodes(81);
    let out = Arc::new(OuterSide::new(&s, &spec).unwrap().at(Z).unwrap());
    let p = CMat::from_element(2, 2, c(0.5));
    let eff = EffectiveResolvent::new(out.clone(), &p).unwrap();
    let star = s.lead_star(ConditionSpec::Kirchhoff).unwrap();
    let ops = DiscreteOperatorSet::new(&star, &spec).unwrap();
    let sys = ops.factor(Z).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let chi = rvec(out.mesh().total, &mut rng);
        let u = eff.apply(&chi);
        let v = sys.solve(&ops.load(&chi));
        assert!(amax(&(&u - &v)) < 1e-10 * amax(&v));
        // P̂^⊥Ψ(0) = 0 and P̂Ψ'(0) = 0
        let center = qgraph::graph::VertexId(0);
        let vals = out.ops().vertex_values(&u, center);
        let ders = out.trace(&u, Some(&chi));
        let id = CMat::identity(2, 2);
        assert!(((&id - &p) * vals).norm() < 1e-10 * amax(&v));
        assert!((&p * ders).norm() < 1e-9 * amax(&v));
    }
}

#[test]
fn effective_resolvent_for_one_half_line_is_neumann() {
    let s = lasso(PotentialSpec::zero(), PotentialSpec::constant(1.0), Leads::HalfLines);
    let out = Arc::new(OuterSide::new(&s, &MeshSpec::with_nodes(2001)).unwrap().at(Z).unwrap());
    let chi_fn = |y: f64| C::new((-8.0 * (y - 1.0).powi(2)).exp(), 0.0);
    let chi = out.mesh().interpolate(&|_, x| chi_fn(x));
    let u = effective_resolvent(out.clone(), &CMat::identity(1, 1), &chi).unwrap();
    // kernel (i/2k)(e^{ik|x-y|} + e^{ik(x+y)}) integrated by composite Simpson over [0, 2]
    let k = sqrt_im_pos(Z);
    let kernel = |x: f64, y: f64| I / (k * 2.0) * ((I * k * (x - y).abs()).exp() + (I * k * (x + y)).exp());
    let exact = |x: f64| {
        let n = 4000;
        let h = 2.0 / n as f64;
        let mut s = C::new(0.0, 0.0);
        for i in 0..=n {
            let y = i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += kernel(x, y) * chi_fn(y) * w;
        }
        s * (h / 3.0)
    };
    let em = &out.mesh().edges[0];
    for i in [0, 250, 500, 1000, 1500, 2000] {
        let x = em.x(i);
        assert!((u[em.offset + i] - exact(x)).norm() < 1e-5, "x={x}");
    }
}

#[test]
fn limit_matrix_deviation_decays_linearly_for_interval() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let ks = KreinSystem::new(&s, &MeshSpec::with_nodes(41)).unwrap();
    let cls = classify(ks.eigen(), default_tol0(&s), false).unwrap();
    let dev = |eps: f64| {
        let a = ks.at(Z, eps, &SeriesOptions::default()).unwrap();
        check_limit_matrix(a.m_out(), a.m_in(), &cls.p_hat()).unwrap()
    };
    let r1 = dev(0.1);
    let r2 = dev(0.05);
    let ratio = r1.deviation / r2.deviation;
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    assert_eq!(r1.n_z.as_ref().unwrap().nrows(), 1);

    // at ε = 1 the deviation is the plain difference
    let a = ks.at(Z, 1.0, &SeriesOptions::default()).unwrap();
    let r = check_limit_matrix(a.m_out(), a.m_in(), &cls.p_hat()).unwrap();
    let u = CMat::from_element(2, 1, c(std::f64::consts::FRAC_1_SQRT_2));
    let limit = &u * (u.adjoint() * a.m_out() * &u).try_inverse().unwrap() * u.adjoint();
    let tl = (a.m_in() * a.m_out() - CMat::identity(2, 2)).try_inverse().unwrap() * a.m_in();
    let direct = (tl - limit).svd(false, false).singular_values.max();
    assert!(r.deviation.is_finite() && (r.deviation - direct).abs() < 1e-10 * direct);
}

#[test]
fn generic_limit_matrix_is_order_eps() {
    let s = interval_core(PotentialSpec::constant(1.0), Leads::Finite(1.0));
    let ks = KreinSystem::new(&s, &MeshSpec::with_nodes(41)).unwrap();
    let d: Vec<f64> = [0.02, 0.01]
        .iter()
        .map(|&e| {
            let a = ks.at(Z, e, &SeriesOptions::default()).unwrap();
            check_limit_matrix(a.m_out(), a.m_in(), &CMat::zeros(2, 2)).unwrap().deviation
        })
        .collect();
    assert!((d[0] / d[1] - 2.0).abs() < 0.05, "{d:?}");
}

#[test]
fn generic_m_in_is_order_eps() {
    let s = interval_core(PotentialSpec::constant(1.0), Leads::Finite(1.0));
    let eig = auxiliary_spectrum(&s, &MeshSpec::with_nodes(101)).unwrap();
    let eps = 1e-2;
    let m = m_in_series(C::new(0.0, 1.0), eps, &eig, &SeriesOptions::default()).unwrap();
    let bound: f64 = (0..eig.len()).map(|n| eig.c.column(n).norm_squared() / eig.values[n]).sum();
    let norm = m.matrix.svd(false, false).singular_values.max();
    assert!(norm <= 1.01 * bound * eps, "{norm} {}", bound * eps);
}

#[test]
fn m_in_series_matches_scaled_eigendata() {
    let s = star_core(3, Leads::Finite(1.0));
    let spec = MeshSpec::with_nodes(21);
    let eig = auxiliary_spectrum(&s, &spec).unwrap();
    for eps in [0.5, 0.125] {
        let m = m_in_series(Z, eps, &eig, &SeriesOptions::default()).unwrap().matrix;
        let aux = s.aux_graph(eps);
        let ops = DiscreteOperatorSet::new(&aux.graph, &spec).unwrap();
        let e = ops.eigenpairs().unwrap();
        let mut direct = CMat::zeros(3, 3);
        for n in 0..e.values.len() {
            let u = e.vectors.column(n).into_owned();
            let cn = CVec::from_iterator(3, aux.connecting.iter().map(|&v| ops.vertex_values(&u, v)[0]));
            direct += &cn * cn.adjoint() / (c(e.values[n]) - Z);
        }
        assert!((&m - &direct).norm() < 1e-12 * m.norm(), "{}", (&m - &direct).norm());
    }
}

#[test]
fn truncated_series_reports_its_tail() {
    let s = interval_core(PotentialSpec::constant(1.0), Leads::Finite(1.0));
    let eig = auxiliary_spectrum(&s, &MeshSpec::with_nodes(41)).unwrap();
    let opts = SeriesOptions { max_modes: Some(10), tail_tol: 1e-8 };
    assert!(matches!(m_in_series(Z, 0.5, &eig, &opts), Err(qgraph::Error::SeriesTail { .. })));
    let loose = SeriesOptions { max_modes: Some(10), tail_tol: 1.0 };
    let m = m_in_series(Z, 0.5, &eig, &loose).unwrap();
    assert_eq!(m.n_used, 10);
    assert!(m.tail > 0.0 && m.tail < 1.0);
}

#[test]
fn nongeneric_g_check_leading_term() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let eig = Arc::new(auxiliary_spectrum(&s, &MeshSpec::with_nodes(41)).unwrap());
    let cls = classify(&eig, default_tol0(&s), false).unwrap();
    let zm = &cls.zero_modes;
    let f1 = eig.mesh().interpolate(&|_, x| C::new(1.0 + x, x * x));
    let rem = |eps: f64| {
        // f^ε(x) = ε^{-1/2} f(x/ε) has the same norm at every scale
        let f = &f1 * c(eps.powf(-0.5));
        let inner = InnerAtZ::new(eig.clone(), Z, eps, &SeriesOptions::default()).unwrap();
        let g = inner.gcheck(&f);
        let proj = zm.phi_hat.ad_mul(&eig.mesh().mass_apply(&f1));
        let lead = &zm.c_hat * proj / (Z * eps.sqrt());
        (g + lead).norm()
    };
    let (a, b) = (rem(0.04), rem(0.02));
    let slope = (a / b).log2();
    assert!(slope > 1.4, "{slope}");
}

#[test]
fn vertex_residuals_exact_refined_and_mismatched() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let eps = 0.5;
    let spec = MeshSpec::with_nodes(21);
    let ks = KreinSystem::new(&s, &spec).unwrap();
    let a = ks.at(Z, eps, &SeriesOptions::default()).unwrap();
    // u = 1 + x along the core, continued linearly into both leads
    let ui = a.in_mesh().interpolate(&|_, x| c(1.0 + x));
    let uo = a.out_mesh().interpolate(&|e, x| if e == 0 { c(1.0 - x) } else { c(1.0 + eps + x) });
    let r = a.verify(&uo, &ui, &TraceRule::OneSided);
    assert!(r.max() < 1e-10, "{r:?}");

    // direct solutions at h and h/2 with one-sided derivatives
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let field = SmoothField::random(3, &mut rng);
    let resid = |nodes: usize| {
        let spec = MeshSpec::with_nodes(nodes);
        let ks = KreinSystem::new(&s, &spec).unwrap();
        let a = ks.at(Z, eps, &SeriesOptions::default()).unwrap();
        let d = DirectResolvent::new(&s.scale_inner(eps).unwrap(), &spec).unwrap();
        let chi = field.sample(d.mesh());
        let u = d.at(Z).unwrap().solve(&d.ops().load(&chi));
        let (uo, ui) = split(&u, d.n_out());
        a.verify(&uo, &ui, &TraceRule::OneSided).max_kirchhoff()
    };
    let (r1, r2) = (resid(41), resid(81));
    assert!(r1 / r2 > 1.8, "{r1} {r2}");

    // Dirichlet-star output alone violates the coupling
    let chi = field.sample(&a.full_mesh());
    let (co, ci) = split(&chi, a.n_out());
    let uo = a.outer().r0(&co);
    let ui = a.inner().r0(&ci);
    let r = a.verify(&uo, &ui, &TraceRule::Duality { z: Z, chi_out: &co, chi_in: &ci });
    assert!(r.coupling_in > 1e-3 && r.coupling_out > 1e-3);
}

#[test]
fn non_real_z_is_required() {
    let s = interval_core(PotentialSpec::zero(), Leads::Finite(1.0));
    let out = OuterSide::new(&s, &MeshSpec::with_nodes(11)).unwrap();
    assert!(matches!(out.at(c(2.0)), Err(qgraph::Error::InvalidArgument(_))));
}
