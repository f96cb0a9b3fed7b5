//! Ready-made graph systems used by the tests, the CLI and the examples.

use std::f64::consts::PI;

use crate::graph::{ConditionSpec, EdgeLength, GraphBuilder, GraphSystem, PotentialSpec, VertexId, VertexRole};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Leads {
    /// Finite leads of the given length with Neumann far ends.
    Finite(f64),
    HalfLines,
}

fn add_lead(b: &mut GraphBuilder, v: VertexId, j: usize, leads: Leads) {
    match leads {
        Leads::Finite(l) => {
            let o = b.vertex(&format!("o{j}"), VertexRole::Outer, ConditionSpec::Neumann);
            b.edge(&format!("lead{j}"), v, Some(o), EdgeLength::Finite(l), PotentialSpec::zero());
        }
        Leads::HalfLines => {
            b.edge(&format!("lead{j}"), v, None, EdgeLength::HalfLine, PotentialSpec::zero());
        }
    }
}

/// Unit interval core between two connecting vertices.
pub fn interval_core(potential: PotentialSpec, leads: Leads) -> GraphSystem {
    let mut b = GraphBuilder::new();
    let v1 = b.vertex("v1", VertexRole::Connecting, ConditionSpec::Kirchhoff);
    let v2 = b.vertex("v2", VertexRole::Connecting, ConditionSpec::Kirchhoff);
    b.edge("core", v1, Some(v2), EdgeLength::Finite(1.0), potential);
    add_lead(&mut b, v1, 1, leads);
    add_lead(&mut b, v2, 2, leads);
    GraphSystem::new(b.build().expect("interval core"), 1.0).expect("interval core")
}

/// `k` unit edges from a Kirchhoff center, each tip a connecting vertex.
pub fn star_core(k: usize, leads: Leads) -> GraphSystem {
    let mut b = GraphBuilder::new();
    let tips: Vec<VertexId> = (1..=k)
        .map(|j| b.vertex(&format!("v{j}"), VertexRole::Connecting, ConditionSpec::Kirchhoff))
        .collect();
    let center = b.vertex("c", VertexRole::Inner, ConditionSpec::Kirchhoff);
    for (j, &t) in tips.iter().enumerate() {
        b.edge(&format!("arm{}", j + 1), center, Some(t), EdgeLength::Finite(1.0), PotentialSpec::zero());
    }
    for (j, &t) in tips.iter().enumerate() {
        add_lead(&mut b, t, j + 1, leads);
    }
    GraphSystem::new(b.build().expect("star core"), 1.0).expect("star core")
}

/// A unit loop hanging from a unit stem; the single lead is attached at the
/// free end of the stem.
pub fn lasso(loop_potential: PotentialSpec, stem_potential: PotentialSpec, leads: Leads) -> GraphSystem {
    let mut b = GraphBuilder::new();
    let v = b.vertex("v1", VertexRole::Connecting, ConditionSpec::Kirchhoff);
    let w = b.vertex("w", VertexRole::Inner, ConditionSpec::Kirchhoff);
    b.edge("stem", v, Some(w), EdgeLength::Finite(1.0), stem_potential);
    b.edge("loop", w, Some(w), EdgeLength::Finite(1.0), loop_potential);
    add_lead(&mut b, v, 1, leads);
    GraphSystem::new(b.build().expect("lasso"), 1.0).expect("lasso")
}

/// Discrete eigenvalue of `sin(2πx)` on a unit loop split into
/// `nodes - 1` P1 elements: `6 (1 - cos θ) / (h² (2 + cos θ))`, `θ = 2π h`.
pub fn discrete_loop_eigenvalue(nodes: usize) -> f64 {
    let h = 1.0 / (nodes - 1) as f64;
    let t = (2.0 * PI * h).cos();
    6.0 * (1.0 - t) / (h * h * (2.0 + t))
}

/// Lasso whose loop potential cancels the `sin(2πx)` mode exactly at the
/// given resolution, so the core has a zero mode vanishing at the
/// connecting vertex. The stem carries `B = 1`, which removes the companion
/// `cos(2πx)` mode. The continuum analogue is the loop potential `-4π²`.
pub fn tuned_lasso(nodes_per_edge: usize, leads: Leads) -> GraphSystem {
    let b = -discrete_loop_eigenvalue(nodes_per_edge);
    lasso(PotentialSpec::constant(b), PotentialSpec::constant(1.0), leads)
}
