//! Acceptance criteria, one line per criterion. Run with
//! `cargo test -p distacc-core --test acceptance`.

mod common;

use std::f64::consts::LOG2_E;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{edge_keyed, random_feasible, random_tree, weighted_line};
use distacc_core::allocation::{allocate_consensus, allocate_equal_incremental, solve_consensus_numeric};
use distacc_core::bounds::{
    equal_split_profile, gap_report, inner_bound_minimized, outer_bound_closed_form,
};
use distacc_core::infomeasures::{verify_smoothing_inequality, GaussianSpec};
use distacc_core::network::FlowPlan;
use distacc_core::simulator::{
    analytic_mmse_check, simulate_aggregation, simulate_consensus, AnalyticModel, SimulationConfig,
};
use distacc_core::{Mode, TreeNetwork};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn psi(w: f64, s: f64, x: f64) -> f64 {
    x / (2.0 * w * w) + LOG2_E / (2.0 * s) * (2.0 * x * (4.0 * s + x)).sqrt()
}

fn min_weight_sq(net: &TreeNetwork) -> f64 {
    net.nodes().filter_map(|v| net.weight(v)).map(|w| w * w).fold(f64::INFINITY, f64::min)
}

fn ac1_accumulation() -> Outcome {
    let mut worst_link: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    for seed in 0..200u64 {
        let n = 1 + (seed as usize % 11);
        let net = random_tree(1000 + seed, n, false);
        let plan = FlowPlan::aggregation(&net);
        let d = random_feasible(&plan, seed, (0.01, 0.99));
        let m = analytic_mmse_check(&net, &edge_keyed(&plan, &d), Mode::Aggregation).map_err(|e| e.to_string())?;
        for l in &m.links {
            worst_link = worst_link.max((l.rx - l.tx - l.inc).abs() / l.rx);
        }
        let sum: f64 = d.iter().sum();
        worst_total = worst_total.max((m.total - sum).abs() / m.total);
    }
    ensure(worst_link <= 1e-10 && worst_total <= 1e-10, || {
        format!("relative residuals {worst_link:e} / {worst_total:e}")
    })?;
    Ok(format!("200 trees, max rel residual link {worst_link:.1e}, total {worst_total:.1e}"))
}

fn ac2_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let n = 1 + (seed as usize % 12);
        let net = random_tree(2000 + seed, n, false);
        let d = 1e-2 * min_weight_sq(&net);
        let a = allocate_equal_incremental(&net, d).map_err(|e| e.to_string())?;
        let product: f64 = net.non_root_nodes().map(|v| (net.subtree_variance(v).unwrap() / (d / n as f64)).log2()).sum();
        let direct = 0.5 * product;
        let lib = inner_bound_minimized(&net, d).map_err(|e| e.to_string())?;
        worst = worst.max((a.sum_rate_bits - direct).abs()).max((a.sum_rate_bits - lib).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e} bits"))?;
    Ok(format!("100 trees, max deviation {worst:.1e} bits"))
}

fn ac3_line_gap() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 2..=8usize {
        let net = TreeNetwork::line(&vec![1.0; n]).unwrap();
        let asymptote = 0.5 * (1..=n).map(|k| k as f64).product::<f64>().log2();
        let mut errors = Vec::new();
        for d in [1e-2, 1e-4, 1e-6] {
            let p = equal_split_profile(&net, d).map_err(|e| e.to_string())?;
            let g = gap_report(&net, &p).map_err(|e| e.to_string())?.delta_r_bits;
            errors.push((g - asymptote).abs());
        }
        ensure(errors[2] <= 0.05, || format!("n={n}: |Δ_R − ½log₂n!| = {}", errors[2]))?;
        ensure(errors[0] > errors[1] && errors[1] > errors[2], || format!("n={n}: errors not decreasing {errors:?}"))?;
        worst = worst.max(errors[2]);
    }
    Ok(format!("n=2..8, max error at D=1e-6 {worst:.4} bits, monotone in D"))
}

fn ac4_sqrt_gap() -> Outcome {
    let net = random_tree(4, 5, false);
    if net.node_count() != 6 {
        return Err("fixture is not a 6-node tree".into());
    }
    let psi_sum = |d: f64| -> f64 {
        net.non_root_nodes()
            .map(|v| psi(net.weight(v).unwrap(), net.subtree_variance(v).unwrap(), d))
            .sum()
    };
    let bound = 0.5 * psi_sum(1e-2) / 1e-2f64.sqrt();
    let mut ratios = Vec::new();
    for k in 0..=24 {
        let d = 10f64.powf(-8.0 + 6.0 * k as f64 / 24.0);
        let gap = inner_bound_minimized(&net, d).map_err(|e| e.to_string())?
            - outer_bound_closed_form(&net, d).map_err(|e| e.to_string())?;
        let r = gap / d.sqrt();
        ensure(r >= 0.0 && r <= bound * (1.0 + 1e-9), || format!("D={d:e}: ratio {r} outside [0, {bound}]"))?;
        ratios.push(r);
    }
    // the ratio settles to a constant as D → 0
    let tail = &ratios[..5];
    let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(spread <= 0.01 * tail[0], || format!("ratio not settling: {tail:?}"))?;
    Ok(format!("gap/√D ∈ [{:.4}, {:.4}] ≤ {bound:.4}, limit ≈ {:.4}", ratios[0], ratios[24], ratios[0]))
}

fn ac5_cutset() -> Outcome {
    let mut smallest = f64::INFINITY;
    for seed in 0..100u64 {
        let n = 1 + (seed as usize % 12);
        let net = random_tree(5000 + seed, n, false);
        let min_var = net.non_root_nodes().map(|v| net.subtree_variance(v).unwrap()).fold(f64::INFINITY, f64::min);
        for scale in [1.0, 1e-2, 1e-4] {
            let d = 1e-3 * min_var * scale;
            let p = equal_split_profile(&net, d).map_err(|e| e.to_string())?;
            let g = gap_report(&net, &p).map_err(|e| e.to_string())?.delta_r_bits;
            ensure(g >= 0.0, || format!("tree {seed}, D={d:e}: Δ_R = {g}"))?;
            smallest = smallest.min(g);
        }
    }
    Ok(format!("100 trees × 3 targets, min Δ_R {smallest:.3e} ≥ 0"))
}

fn ac6_monte_carlo() -> Outcome {
    let net = random_tree(6, 7, false);
    let d = 0.07;
    let p = equal_split_profile(&net, d).map_err(|e| e.to_string())?;
    let r = simulate_aggregation(&net, &p.inc, SimulationConfig::new(1000, 1000, 2024)).map_err(|e| e.to_string())?;
    let ci = r.total_ci.ok_or("no CI")?;
    ensure(ci < 0.01 * d, || format!("CI half-width {ci} ≥ 1% of {d}"))?;
    ensure((r.empirical_total - d).abs() <= ci, || format!("empirical {} outside {d} ± {ci}", r.empirical_total))?;
    Ok(format!("7 sources, 10⁶ samples: {:.6} ± {ci:.6} vs {d}", r.empirical_total))
}

fn ac7_consensus() -> Outcome {
    let net = random_tree(7, 5, true);
    let d = 0.05 * min_weight_sq(&net);
    let alloc = allocate_consensus(&net, d).map_err(|e| e.to_string())?;
    let inc = alloc.links.iter().map(|l| (distacc_core::DirectedEdge::new(l.from, l.to), l.inc)).collect();
    let r = simulate_consensus(&net, &inc, SimulationConfig::new(1000, 400, 77)).map_err(|e| e.to_string())?;
    for v in net.nodes() {
        let tree: f64 = net.directed_tree(v).unwrap().iter().map(|e| inc[e]).sum();
        let s = r.node(v).ok_or("missing node")?;
        let ci = s.ci.ok_or("no CI")?;
        ensure((s.empirical - tree).abs() <= ci, || format!("node {v}: {} vs {tree} ± {ci}", s.empirical))?;
    }
    let mut worst: f64 = 0.0;
    for seed in 0..30u64 {
        let net = random_tree(7000 + seed, 1 + seed as usize % 10, true);
        let d = 1e-2 * min_weight_sq(&net);
        let kkt = allocate_consensus(&net, d).map_err(|e| e.to_string())?;
        let num = solve_consensus_numeric(&net, d).map_err(|e| e.to_string())?;
        worst = worst.max((kkt.sum_rate_bits - num.sum_rate_bits).abs());
    }
    ensure(worst <= 1e-6, || format!("KKT vs numeric {worst:e} bits"))?;
    Ok(format!("{} nodes within CI; KKT vs numeric max {worst:.1e} bits over 30 trees", net.node_count()))
}

fn ac8_smoothing() -> Outcome {
    let mut r = common::rng(8);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let n = r.random_range(1..=3usize);
        let dim = 2 * n;
        let a = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.5..1.5));
        let mean = DVector::from_fn(dim, |_, _| r.random_range(-2.0..2.0));
        let joint = GaussianSpec::new(mean, &a * a.transpose()).map_err(|e| e.to_string())?;
        let t = 10f64.powf(r.random_range(-2.0..2.0));
        let m = verify_smoothing_inequality(&joint, t).map_err(|e| e.to_string())?;
        worst = worst.min(m.margin);
    }
    ensure(worst >= -1e-9, || format!("min margin {worst:e}"))?;
    Ok(format!("1000 pairs, min margin {worst:.3e}"))
}

/// Covariance of `U_a − V_a` and `U_b − V_b` read off the joint covariance.
fn increment_covariance(m: &AnalyticModel, a: &str, b: &str) -> f64 {
    let idx = |name: String| m.labels.iter().position(|l| *l == name).unwrap();
    let c = &m.joint_covariance;
    let (ua, va) = (idx(format!("U[{a}]")), idx(format!("V[{a}]")));
    let (ub, vb) = (idx(format!("U[{b}]")), idx(format!("V[{b}]")));
    c[(ua, ub)] - c[(ua, vb)] - c[(va, ub)] + c[(va, vb)]
}

fn ac9_orthogonality() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut pairs = 0usize;
    for seed in 0..60u64 {
        let n = 1 + seed as usize % 11;
        let net = random_tree(9000 + seed, n, false);
        let plan = FlowPlan::aggregation(&net);
        let d = random_feasible(&plan, seed, (0.01, 0.99));
        let m = analytic_mmse_check(&net, &edge_keyed(&plan, &d), Mode::Aggregation).map_err(|e| e.to_string())?;
        let names: Vec<String> = plan.links().iter().map(|l| l.edge.to_string()).collect();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                worst = worst.max(increment_covariance(&m, &names[i], &names[j]).abs());
                pairs += 1;
            }
        }
    }
    for seed in 0..20u64 {
        let net = random_tree(9500 + seed, 1 + seed as usize % 7, true);
        let plan = FlowPlan::consensus(&net).unwrap();
        let d = random_feasible(&plan, seed, (0.01, 0.99));
        let m = analytic_mmse_check(&net, &edge_keyed(&plan, &d), Mode::Consensus).map_err(|e| e.to_string())?;
        for k in net.nodes() {
            let tree: Vec<String> = net.directed_tree(k).unwrap().iter().map(|e| e.to_string()).collect();
            for i in 0..tree.len() {
                for j in i + 1..tree.len() {
                    worst = worst.max(increment_covariance(&m, &tree[i], &tree[j]).abs());
                    pairs += 1;
                }
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max |cov| {worst:e}"))?;
    Ok(format!("{pairs} link pairs, max |cov| {worst:.1e}"))
}

fn ac10_reproducible() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let tree = dir.path().join("tree.json");
    std::fs::write(&tree, weighted_line(5).to_json()).map_err(|e| e.to_string())?;
    let tree = tree.to_str().unwrap();
    let run = |mode: &str| {
        Command::new(env!("CARGO_BIN_EXE_distacc"))
            .args(["simulate", "--tree", tree, "--D", "0.04", "--mode", mode, "--N", "2000", "--trials", "50", "--seed", "123"])
            .output()
            .map_err(|e| e.to_string())
    };
    for mode in ["agg", "consensus"] {
        let a = run(mode)?;
        let b = run(mode)?;
        ensure(a.status.success(), || String::from_utf8_lossy(&a.stderr).into_owned())?;
        ensure(a.stdout == b.stdout, || format!("{mode}: outputs differ"))?;
    }
    Ok("simulate (agg, consensus) twice with the same seed: byte-identical JSON".into())
}

fn main() {
    let criteria: [(&str, &str, Duration, fn() -> Outcome); 10] = [
        ("AC1", "distortion accumulation exactness", Duration::from_secs(10), ac1_accumulation),
        ("AC2", "closed-form consistency", Duration::from_secs(1), ac2_closed_form),
        ("AC3", "line-network gap asymptote", Duration::from_secs(1), ac3_line_gap),
        ("AC4", "O(√D) inner-outer gap", Duration::from_secs(1), ac4_sqrt_gap),
        ("AC5", "cut-set dominance", Duration::from_secs(1), ac5_cutset),
        ("AC6", "Monte-Carlo inner bound", Duration::from_secs(60), ac6_monte_carlo),
        ("AC7", "consensus accumulation and allocation", Duration::from_secs(60), ac7_consensus),
        ("AC8", "smoothing inequality", Duration::from_secs(5), ac8_smoothing),
        ("AC9", "orthogonality of increments", Duration::from_secs(5), ac9_orthogonality),
        ("AC10", "reproducibility", Duration::from_secs(60), ac10_reproducible),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({:.2}s)", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {why} ({:.2}s)", elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
