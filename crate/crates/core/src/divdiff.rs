//! Divided differences of `z -> exp(tau z)` over complex nodes.
//!
//! Entries of `f(J)` for a bidiagonal `J` and of the Fréchet derivative
//! `L_f(J, E)` are divided differences of `f` over runs of the diagonal, so
//! these drive the analytic qubit exponential and all of its derivatives.
//! Confluent and nearly confluent nodes are handled by a Taylor expansion
//! about the node mean; well separated clusters by recursive splitting at
//! the widest pair.

use crate::types::C64;

/// Clusters whose scaled spread `tau * max|z_a - z_b|` is below this are
/// expanded in a Taylor series.
const CLUSTER_SPREAD: f64 = 0.5;
const TAYLOR_TERMS: usize = 40;

/// `f[z_0, ..., z_m]` for `f(z) = exp(tau z)`. Nodes may repeat.
pub fn dd_exp(nodes: &[C64], tau: f64) -> C64 {
    assert!(!nodes.is_empty(), "divided difference needs at least one node");
    if nodes.len() == 1 {
        return (nodes[0] * tau).exp();
    }
    let (a, b, spread) = widest_pair(nodes);
    if spread * tau.abs() <= CLUSTER_SPREAD {
        return taylor_cluster(nodes, tau);
    }
    let without = |skip: usize| -> Vec<C64> {
        nodes.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, z)| *z).collect()
    };
    (dd_exp(&without(a), tau) - dd_exp(&without(b), tau)) / (nodes[b] - nodes[a])
}

fn widest_pair(nodes: &[C64]) -> (usize, usize, f64) {
    let mut best = (0, 1, 0.0);
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let d = (nodes[i] - nodes[j]).norm();
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    best
}

/// `exp(tau c) * sum_{k >= m} tau^k h_{k-m}(delta) / k!` with `c` the node
/// mean and `h` the complete homogeneous symmetric polynomials of the
/// shifted nodes `delta`.
fn taylor_cluster(nodes: &[C64], tau: f64) -> C64 {
    let m = nodes.len() - 1;
    let center = nodes.iter().sum::<C64>() / nodes.len() as f64;
    let deltas: Vec<C64> = nodes.iter().map(|z| (z - center) * tau).collect();

    // h[k] = h_k(deltas) by the standard recurrence over variables.
    let mut h = vec![C64::new(0.0, 0.0); TAYLOR_TERMS];
    h[0] = C64::new(1.0, 0.0);
    for d in &deltas {
        for k in 1..TAYLOR_TERMS {
            h[k] = h[k] + d * h[k - 1];
        }
    }
    // sum_j h_j / (j + m)!  with the 1/(j+m)! built incrementally.
    let mut inv_fact = 1.0;
    for k in 1..=m {
        inv_fact /= k as f64;
    }
    let mut sum = C64::new(0.0, 0.0);
    for (j, hj) in h.iter().enumerate() {
        if j > 0 {
            inv_fact /= (j + m) as f64;
        }
        sum += hj * inv_fact;
    }
    (center * tau).exp() * sum * tau.powi(m as i32)
}
