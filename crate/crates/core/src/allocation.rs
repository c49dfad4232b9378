//! Choosing incremental distortions, and hence per-link rates, for a target
//! total distortion.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::Serialize;

use crate::bounds::{
    self, consensus_derive, derive_distortions, psi_value, upstream_sums, ConsensusProfile,
    DistortionProfile,
};
use crate::error::{Error, Result};
use crate::network::{DirectedEdge, FlowPlan, NodeId, TreeNetwork};

/// Default objective-improvement tolerance of the penalized solver, in bits.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Pass cap of the penalized solver.
pub const MAX_PASSES: usize = 100_000;

/// Agreement required between the consensus closed form and the numerical
/// solver, in bits of sum rate.
pub const CONSENSUS_AGREEMENT_BITS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    EqualSplit,
    NumericPenalized,
    ConsensusKkt,
    ConsensusNumeric,
    /// Rates read off a caller-supplied profile.
    Profile,
}

/// A distortion profile of either mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Profile {
    Aggregation(DistortionProfile),
    Consensus(ConsensusProfile),
}

impl Profile {
    /// End-to-end distortion (sum over nodes in consensus mode).
    pub fn total(&self) -> f64 {
        match self {
            Profile::Aggregation(p) => p.total,
            Profile::Consensus(p) => p.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRate {
    pub from: NodeId,
    pub to: NodeId,
    pub inc: f64,
    pub rate_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateAllocation {
    pub method: Method,
    pub sum_rate_bits: f64,
    pub total_distortion: f64,
    pub links: Vec<LinkRate>,
    /// Penalized outer-bound objective at the returned point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_bits: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub profile: Profile,
}

impl RateAllocation {
    pub fn rate(&self, e: DirectedEdge) -> Option<f64> {
        self.links
            .iter()
            .find(|l| l.from == e.from && l.to == e.to)
            .map(|l| l.rate_bits)
    }

    pub fn rates(&self) -> BTreeMap<DirectedEdge, f64> {
        self.links
            .iter()
            .map(|l| (DirectedEdge::new(l.from, l.to), l.rate_bits))
            .collect()
    }
}

/// `½ log₂(σ²/inc)` per link, clipped at zero with a warning.
fn link_rates(plan: &FlowPlan, inc: &[f64], warnings: &mut Vec<String>) -> Vec<LinkRate> {
    plan.links()
        .iter()
        .zip(inc)
        .map(|(l, &x)| {
            let raw = 0.5 * (l.variance / x).log2();
            if raw < 0.0 {
                warnings.push(format!(
                    "link {}: incremental distortion {x} exceeds variance {}; rate clipped to 0",
                    l.edge, l.variance
                ));
            }
            LinkRate {
                from: l.edge.from,
                to: l.edge.to,
                inc: x,
                rate_bits: raw.max(0.0),
            }
        })
        .collect()
}

fn finish(
    method: Method,
    plan: &FlowPlan,
    inc: &[f64],
    profile: Profile,
    mut warnings: Vec<String>,
) -> RateAllocation {
    let links = link_rates(plan, inc, &mut warnings);
    RateAllocation {
        method,
        sum_rate_bits: links.iter().map(|l| l.rate_bits).sum(),
        total_distortion: profile.total(),
        links,
        objective_bits: None,
        converged: true,
        iterations: 0,
        warnings,
        profile,
    }
}

fn check_target(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Infeasible(format!(
            "target distortion must be positive and finite, got {d}"
        )))
    }
}

fn aggregation_profile(net: &TreeNetwork, plan: &FlowPlan, inc: &[f64]) -> Result<DistortionProfile> {
    derive_distortions(
        net,
        &plan.links().iter().zip(inc).map(|(l, &x)| (l.edge.from, x)).collect(),
    )
}

/// Reverse water-filling across links: `D/n` of incremental distortion on
/// every link.
pub fn allocate_equal_incremental(net: &TreeNetwork, d: f64) -> Result<RateAllocation> {
    check_target(d)?;
    let plan = FlowPlan::aggregation(net);
    let inc = vec![d / plan.len() as f64; plan.len()];
    // feasibility of the test-channel recursion
    bounds::inner_bound_minimized(net, d)?;
    let profile = aggregation_profile(net, &plan, &inc)?;
    Ok(finish(
        Method::EqualSplit,
        &plan,
        &inc,
        Profile::Aggregation(profile),
        Vec::new(),
    ))
}

/// Penalized outer-bound objective `½ Σ [log₂(σ²/inc) − ψ(tx)]` with `tx`
/// accumulated from `inc`.
pub(crate) fn penalized_objective(plan: &FlowPlan, inc: &[f64]) -> f64 {
    let tx = upstream_sums(plan, inc);
    plan.links()
        .iter()
        .enumerate()
        .map(|(k, l)| 0.5 * ((l.variance / inc[k]).log2() - psi_value(l.sender_weight, l.variance, tx[k])))
        .sum()
}

fn softmax_scaled(theta: &[f64], total: f64) -> Vec<f64> {
    let top = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = theta.iter().map(|t| (t - top).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| total * x / s).collect()
}

/// Golden-section minimization of `f` on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    if fa < fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Best-effort minimizer of the penalized outer-bound objective over
/// incremental distortions summing to `d`.
///
/// Coordinate descent on log-distortions starting from the equal split; each
/// coordinate step is a golden-section search and is kept only when it
/// lowers the objective, so the result is never worse than the equal split.
pub fn allocate_numeric_penalized(net: &TreeNetwork, d: f64, tol: f64) -> Result<RateAllocation> {
    check_target(d)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let plan = FlowPlan::aggregation(net);
    let n = plan.len();
    let mut theta = vec![-(n as f64).ln(); n];
    let mut best = penalized_objective(&plan, &softmax_scaled(&theta, d));
    let mut passes = 0;
    let mut converged = n == 1;
    while !converged && passes < MAX_PASSES {
        passes += 1;
        let start = best;
        for i in 0..n {
            let eval = |t: f64| {
                let mut trial = theta.clone();
                trial[i] = t;
                penalized_objective(&plan, &softmax_scaled(&trial, d))
            };
            let (t, value) = golden_section(eval, theta[i] - 8.0, theta[i] + 8.0, 90);
            if value < best {
                theta[i] = t;
                best = value;
            }
        }
        // renormalize onto the simplex: θ = ln(inc / D)
        theta = softmax_scaled(&theta, 1.0).iter().map(|x| x.ln()).collect();
        converged = start - best < tol;
    }
    let inc = if n == 1 { vec![d] } else { softmax_scaled(&theta, d) };
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("no convergence within {MAX_PASSES} passes; best iterate returned"));
    }
    let profile = aggregation_profile(net, &plan, &inc)?;
    let mut out = finish(
        Method::NumericPenalized,
        &plan,
        &inc,
        Profile::Aggregation(profile),
        warnings,
    );
    out.objective_bits = Some(penalized_objective(&plan, &inc));
    out.converged = converged;
    out.iterations = passes;
    Ok(out)
}

fn multiplicities(plan: &FlowPlan, net: &TreeNetwork) -> Vec<f64> {
    plan.links()
        .iter()
        .map(|l| (net.node_count() - l.carried_nodes) as f64)
        .collect()
}

fn consensus_profile(net: &TreeNetwork, plan: &FlowPlan, inc: &[f64]) -> Result<ConsensusProfile> {
    consensus_derive(net, &plan.scatter(inc))
}

/// Closed-form solution of
/// `min ½ ΣΣ log₂(σ²_e / inc_e)  s.t.  Σ_k Σ_{e ∈ T_k} inc_e ≤ D`.
///
/// Edge `e` appears in `m_e` directed trees, so the constraint reads
/// `Σ_e m_e inc_e ≤ D` and stationarity makes `m_e inc_e` the same on every
/// edge: `inc_e = D / (E m_e)` with `E = 2(n − 1)` directed edges. The result
/// is checked against [`solve_consensus_numeric`].
pub fn allocate_consensus(net: &TreeNetwork, d: f64) -> Result<RateAllocation> {
    check_target(d)?;
    let plan = FlowPlan::consensus(net)?;
    let m = multiplicities(&plan, net);
    let edges = plan.len() as f64;
    let inc: Vec<f64> = m.iter().map(|&mult| d / (edges * mult)).collect();
    let profile = consensus_profile(net, &plan, &inc)?;
    let out = finish(
        Method::ConsensusKkt,
        &plan,
        &inc,
        Profile::Consensus(profile),
        Vec::new(),
    );

    let numeric = solve_consensus_numeric(net, d)?;
    let gap = (numeric.sum_rate_bits - out.sum_rate_bits).abs();
    if gap > CONSENSUS_AGREEMENT_BITS {
        return Err(Error::Consistency(format!(
            "closed-form and numerical consensus allocations differ by {gap:e} bits"
        )));
    }
    Ok(out)
}

/// Numerical solution of the consensus rate-allocation program by a
/// feasible-start equality-constrained Newton method with backtracking.
///
/// The objective strictly decreases in every `inc_e`, so the constraint is
/// active at the optimum and is imposed as an equality.
pub fn solve_consensus_numeric(net: &TreeNetwork, d: f64) -> Result<RateAllocation> {
    check_target(d)?;
    let plan = FlowPlan::consensus(net)?;
    let m = multiplicities(&plan, net);
    let variances: Vec<f64> = plan.links().iter().map(|l| l.variance).collect();
    let objective = |x: &[f64]| -> f64 {
        variances
            .iter()
            .zip(x)
            .map(|(s, xe)| 0.5 * (s / xe).log2())
            .sum()
    };

    let total_m: f64 = m.iter().sum();
    let mut x = vec![d / total_m; plan.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 200 {
        iterations += 1;
        // ∇f_e = −1/(2 ln2 x_e), ∇²f = diag(1/(2 ln2 x_e²))
        let grad: Vec<f64> = x.iter().map(|xe| -1.0 / (2.0 * LN_2 * xe)).collect();
        let hinv: Vec<f64> = x.iter().map(|xe| 2.0 * LN_2 * xe * xe).collect();
        let num: f64 = (0..x.len()).map(|e| m[e] * hinv[e] * grad[e]).sum();
        let den: f64 = (0..x.len()).map(|e| m[e] * hinv[e] * m[e]).sum();
        let nu = -num / den;
        let step: Vec<f64> = (0..x.len()).map(|e| -hinv[e] * (grad[e] + nu * m[e])).collect();
        let decrement: f64 = step.iter().zip(&hinv).map(|(s, h)| s * s / h).sum();
        if decrement / 2.0 < 1e-24 {
            converged = true;
            break;
        }
        let f0 = objective(&x);
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        while x.iter().zip(&step).any(|(xe, s)| xe + t * s <= 0.0) {
            t *= 0.5;
        }
        loop {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(xe, s)| xe + t * s).collect();
            if objective(&trial) <= f0 + 0.25 * t * slope || t < 1e-12 {
                x = trial;
                break;
            }
            t *= 0.5;
        }
    }
    let mut warnings = Vec::new();
    if !converged {
        warnings.push("Newton iteration cap reached".to_string());
    }
    let profile = consensus_profile(net, &plan, &x)?;
    let mut out = finish(
        Method::ConsensusNumeric,
        &plan,
        &x,
        Profile::Consensus(profile),
        warnings,
    );
    out.converged = converged;
    out.iterations = iterations;
    Ok(out)
}

/// The uniform split `D / (2(n − 1))` on every directed edge, reported next
/// to the multiplicity-weighted optimum for comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformSplitComparison {
    pub inc: f64,
    pub sum_rate_bits: f64,
    /// `Σ_k Σ_{e ∈ T_k} inc`, the sum distortion this split actually yields.
    pub sum_distortion: f64,
}

pub fn consensus_uniform_split(net: &TreeNetwork, d: f64) -> Result<UniformSplitComparison> {
    check_target(d)?;
    let plan = FlowPlan::consensus(net)?;
    let inc = d / plan.len() as f64;
    let m = multiplicities(&plan, net);
    Ok(UniformSplitComparison {
        inc,
        sum_rate_bits: plan.links().iter().map(|l| 0.5 * (l.variance / inc).log2()).sum(),
        sum_distortion: m.iter().map(|mult| mult * inc).sum(),
    })
}

/// Per-link achievable rates `½ log₂(σ²/inc)` for a given profile.
pub fn rates_for_profile(net: &TreeNetwork, profile: &Profile) -> Result<RateAllocation> {
    match profile {
        Profile::Aggregation(p) => {
            let plan = FlowPlan::aggregation(net);
            let inc: Vec<f64> = plan
                .links()
                .iter()
                .map(|l| p.inc.get(&l.edge.from).copied().ok_or(Error::MissingEntry(l.edge)))
                .collect::<Result<_>>()?;
            Ok(finish(Method::Profile, &plan, &inc, profile.clone(), Vec::new()))
        }
        Profile::Consensus(p) => {
            let plan = FlowPlan::consensus(net)?;
            let inc = plan.gather(&p.inc)?;
            Ok(finish(Method::Profile, &plan, &inc, profile.clone(), Vec::new()))
        }
    }
}
