//! Oracles shared by the integration tests and the acceptance harness.

use qgraph::linalg::{c, sqrt_im_pos, CMat, C};

/// `M^in_z` of the free unit interval with Kirchhoff ends:
/// `-(k sin k)^{-1} [[cos k, 1], [1, cos k]]`, `k = √z`.
pub fn interval_m_in_exact(z: C) -> CMat {
    let k = sqrt_im_pos(z);
    CMat::from_row_slice(2, 2, &[k.cos(), c(1.0), c(1.0), k.cos()]) * (-c(1.0) / (k * k.sin()))
}

/// Independent oracle: RK4 shooting for `-u'' = z u` on `[0, 1]` with the
/// Neumann data `-u'(0) = q_1`, `u'(1) = q_2`; returns `(u(0), u(1))`.
pub fn interval_m_in_shooting(z: C) -> CMat {
    let steps = 4000;
    let h = 1.0 / steps as f64;
    let rhs = |y: [C; 2]| [y[1], -z * y[0]];
    let shoot = |mut y: [C; 2]| {
        for _ in 0..steps {
            let k1 = rhs(y);
            let k2 = rhs([y[0] + k1[0] * (h / 2.0), y[1] + k1[1] * (h / 2.0)]);
            let k3 = rhs([y[0] + k2[0] * (h / 2.0), y[1] + k2[1] * (h / 2.0)]);
            let k4 = rhs([y[0] + k3[0] * h, y[1] + k3[1] * h]);
            for i in 0..2 {
                y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
            }
        }
        y
    };
    // u = a U + b V with U(0) = 1, U'(0) = 0 and V(0) = 0, V'(0) = 1
    let u1 = shoot([c(1.0), c(0.0)]);
    let v1 = shoot([c(0.0), c(1.0)]);
    let mut m = CMat::zeros(2, 2);
    for (j, q) in [[c(1.0), c(0.0)], [c(0.0), c(1.0)]].iter().enumerate() {
        let b = -q[0];
        let a = (q[1] - b * v1[1]) / u1[1];
        m[(0, j)] = a;
        m[(1, j)] = a * u1[0] + b * v1[0];
    }
    m
}
