#![allow(dead_code)]

use std::collections::BTreeMap;

use distacc_core::network::{FlowPlan, NodeSpec, TreeDocument};
use distacc_core::{DirectedEdge, NodeId, TreeNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree with `n` non-root nodes and weights in `[0.2, 3]`.
pub fn random_tree(seed: u64, n: usize, weighted_root: bool) -> TreeNetwork {
    TreeNetwork::random(n, (0.2, 3.0), weighted_root, &mut rng(seed)).unwrap()
}

/// Path `0 - 1 - ... - (n-1)` with unit weights everywhere.
pub fn weighted_line(n: usize) -> TreeNetwork {
    let nodes = (0..n)
        .map(|i| NodeSpec {
            id: i,
            weight: Some(1.0),
            parent: i.checked_sub(1),
        })
        .collect();
    TreeNetwork::from_document(&TreeDocument { root: 0, nodes }, 1000).unwrap()
}

/// Test-channel variances from first principles: the estimate a node sends
/// is its own data plus the descriptions it received, and a description
/// with distortion `d` of an estimate with variance `s` has variance `s − d`.
pub fn sigma_hat(plan: &FlowPlan, d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; plan.len()];
    for (k, l) in plan.links().iter().enumerate() {
        out[k] = l.upstream.iter().map(|&u| out[u] - d[u]).sum::<f64>() + l.sender_weight.powi(2);
    }
    out
}

/// Per-link distortions, each a random fraction in `frac` of the test-channel
/// variance available on the link.
pub fn random_feasible(plan: &FlowPlan, seed: u64, frac: (f64, f64)) -> Vec<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let mut s = vec![0.0; plan.len()];
    let mut d = vec![0.0; plan.len()];
    for (k, l) in plan.links().iter().enumerate() {
        s[k] = l.upstream.iter().map(|&u| s[u] - d[u]).sum::<f64>() + l.sender_weight.powi(2);
        d[k] = s[k] * r.random_range(frac.0..frac.1);
    }
    d
}

pub fn node_keyed(plan: &FlowPlan, d: &[f64]) -> BTreeMap<NodeId, f64> {
    plan.links().iter().zip(d).map(|(l, &x)| (l.edge.from, x)).collect()
}

pub fn edge_keyed(plan: &FlowPlan, d: &[f64]) -> BTreeMap<DirectedEdge, f64> {
    plan.scatter(d)
}

/// All nodes on the `from` side of `e`, by graph search.
pub fn side(net: &TreeNetwork, e: DirectedEdge) -> Vec<NodeId> {
    let mut seen = vec![e.from];
    let mut stack = vec![e.from];
    while let Some(u) = stack.pop() {
        for v in net.neighbors(u) {
            if v != e.to && !seen.contains(&v) {
                seen.push(v);
                stack.push(v);
            }
        }
    }
    seen.sort();
    seen
}
