//! Distortion accumulation and rate bounds for aggregation and consensus.
//!
//! Every quantity is evaluated over a [`FlowPlan`]: a link carries the
//! partial sum of the nodes behind it, its transmit-side distortion is the
//! sum of all incremental distortions upstream, and the receive side adds
//! the link's own increment.
//!
//! Bounds are reported raw. They may go negative once distortions approach
//! the partial-sum variances; [`BoundsReport::effective`] holds the values
//! clipped at zero.

use std::collections::BTreeMap;
use std::f64::consts::LOG2_E;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{DirectedEdge, FlowPlan, Mode, NodeId, TreeNetwork};

/// Relative slack allowed when a distortion parameter equals the test-channel
/// variance up to round-off.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// Incremental, transmit-side and receive-side distortions per link of an
/// aggregation network, keyed by the transmitting node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionProfile {
    pub inc: BTreeMap<NodeId, f64>,
    pub tx: BTreeMap<NodeId, f64>,
    pub rx: BTreeMap<NodeId, f64>,
    /// End-to-end MMSE distortion at the sink.
    pub total: f64,
}

/// Incremental, transmit-side and receive-side distortions per directed
/// edge of a consensus network, with the resulting distortion at each node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusProfile {
    pub inc: BTreeMap<DirectedEdge, f64>,
    pub tx: BTreeMap<DirectedEdge, f64>,
    pub rx: BTreeMap<DirectedEdge, f64>,
    pub per_root: BTreeMap<NodeId, f64>,
    /// Sum distortion over all nodes.
    pub total: f64,
}

/// Plan-aligned distortion vectors.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinkProfile {
    pub inc: Vec<f64>,
    pub tx: Vec<f64>,
    pub rx: Vec<f64>,
}

impl LinkProfile {
    pub fn derive(plan: &FlowPlan, inc: Vec<f64>) -> Self {
        let tx = upstream_sums(plan, &inc);
        let rx = tx.iter().zip(&inc).map(|(t, i)| t + i).collect();
        LinkProfile { inc, tx, rx }
    }
}

/// For each link, the sum of `values` over every link strictly upstream of
/// it (transitively).
pub(crate) fn upstream_sums(plan: &FlowPlan, values: &[f64]) -> Vec<f64> {
    let mut below = vec![0.0; plan.len()];
    for (k, link) in plan.links().iter().enumerate() {
        below[k] = link.upstream.iter().map(|&u| below[u] + values[u]).sum();
    }
    below
}

fn check_positive(edge: DirectedEdge, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "link {edge}: distortion must be positive and finite, got {x}"
        )))
    }
}

pub(crate) fn gather_checked(plan: &FlowPlan, values: &BTreeMap<DirectedEdge, f64>) -> Result<Vec<f64>> {
    if let Some(extra) = values.keys().find(|e| plan.position(**e).is_none()) {
        return Err(Error::InvalidArgument(format!(
            "link {extra} is not part of the network"
        )));
    }
    let out = plan.gather(values)?;
    for (link, &x) in plan.links().iter().zip(&out) {
        check_positive(link.edge, x)?;
    }
    Ok(out)
}

pub(crate) fn gather_nodes(plan: &FlowPlan, net: &TreeNetwork, values: &BTreeMap<NodeId, f64>) -> Result<Vec<f64>> {
    if let Some(&bad) = values.keys().find(|&&v| !net.contains(v) || v == net.root()) {
        return Err(Error::InvalidArgument(format!(
            "node {bad} owns no link toward the sink"
        )));
    }
    plan.links()
        .iter()
        .map(|l| {
            let x = *values.get(&l.edge.from).ok_or(Error::MissingEntry(l.edge))?;
            check_positive(l.edge, x)?;
            Ok(x)
        })
        .collect()
}

fn by_sender(plan: &FlowPlan, values: &[f64]) -> BTreeMap<NodeId, f64> {
    plan.links()
        .iter()
        .zip(values)
        .map(|(l, &x)| (l.edge.from, x))
        .collect()
}

/// The outer-bound penalty
/// `ψ(x) = x/(2w²) + (log₂e / (2σ²))·√(2x(4σ² + x))` for a link whose sender
/// has weight `weight` and whose partial sum has variance `variance`.
pub fn psi_value(weight: f64, variance: f64, x: f64) -> f64 {
    x / (2.0 * weight * weight) + LOG2_E / (2.0 * variance) * (2.0 * x * (4.0 * variance + x)).sqrt()
}

/// `ψᵢ(x)` for the aggregation link owned by node `i`.
pub fn psi(net: &TreeNetwork, i: NodeId, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("ψ needs x ≥ 0, got {x}")));
    }
    let weight = net
        .weight(i)
        .filter(|_| i != net.root())
        .ok_or_else(|| Error::InvalidArgument(format!("node {i} owns no link")))?;
    Ok(psi_value(weight, net.subtree_variance(i)?, x))
}

pub fn derive_distortions(net: &TreeNetwork, inc: &BTreeMap<NodeId, f64>) -> Result<DistortionProfile> {
    let plan = FlowPlan::aggregation(net);
    let lp = LinkProfile::derive(&plan, gather_nodes(&plan, net, inc)?);
    Ok(aggregation_profile(&plan, &lp))
}

fn aggregation_profile(plan: &FlowPlan, lp: &LinkProfile) -> DistortionProfile {
    DistortionProfile {
        inc: by_sender(plan, &lp.inc),
        tx: by_sender(plan, &lp.tx),
        rx: by_sender(plan, &lp.rx),
        total: lp.inc.iter().sum(),
    }
}

fn profile_vectors(plan: &FlowPlan, profile: &DistortionProfile) -> Result<LinkProfile> {
    let pick = |m: &BTreeMap<NodeId, f64>| -> Result<Vec<f64>> {
        plan.links()
            .iter()
            .map(|l| m.get(&l.edge.from).copied().ok_or(Error::MissingEntry(l.edge)))
            .collect()
    };
    Ok(LinkProfile {
        inc: pick(&profile.inc)?,
        tx: pick(&profile.tx)?,
        rx: pick(&profile.rx)?,
    })
}

fn consensus_vectors(plan: &FlowPlan, profile: &ConsensusProfile) -> Result<LinkProfile> {
    Ok(LinkProfile {
        inc: plan.gather(&profile.inc)?,
        tx: plan.gather(&profile.tx)?,
        rx: plan.gather(&profile.rx)?,
    })
}

/// Incremental-distortion outer bound with per-link terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterBound<K: Ord> {
    pub total_bits: f64,
    pub per_link: BTreeMap<K, f64>,
}

fn outer_terms(plan: &FlowPlan, lp: &LinkProfile) -> Vec<f64> {
    plan.links()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            0.5 * ((l.variance / lp.inc[k]).log2() - psi_value(l.sender_weight, l.variance, lp.tx[k]))
        })
        .collect()
}

fn cutset_terms(plan: &FlowPlan, lp: &LinkProfile) -> Vec<f64> {
    plan.links()
        .iter()
        .zip(&lp.rx)
        .map(|(l, rx)| 0.5 * (l.variance / rx).log2())
        .collect()
}

pub fn outer_bound_incremental(net: &TreeNetwork, profile: &DistortionProfile) -> Result<OuterBound<NodeId>> {
    let plan = FlowPlan::aggregation(net);
    let terms = outer_terms(&plan, &profile_vectors(&plan, profile)?);
    Ok(OuterBound {
        total_bits: terms.iter().sum(),
        per_link: by_sender(&plan, &terms),
    })
}

fn check_total(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Infeasible(format!(
            "total distortion must be positive and finite, got {d}"
        )))
    }
}

/// `½ Σ log₂ σ²_{Sᵢ} − (n/2) log₂(D/n)`, the equal-split rate.
fn equal_split_rate(plan: &FlowPlan, d: f64) -> f64 {
    let n = plan.len() as f64;
    0.5 * (plan.links().iter().map(|l| l.variance.log2()).sum::<f64>() - n * (d / n).log2())
}

/// Scheme-independent lower bound `½ log₂(∏σ²/(D/n)ⁿ) − ½ Σ ψᵢ(D)`.
pub fn outer_bound_closed_form(net: &TreeNetwork, d: f64) -> Result<f64> {
    check_total(d)?;
    let plan = FlowPlan::aggregation(net);
    let penalty: f64 = plan
        .links()
        .iter()
        .map(|l| psi_value(l.sender_weight, l.variance, d))
        .sum();
    Ok(equal_split_rate(&plan, d) - 0.5 * penalty)
}

/// Cut-set lower bound `½ Σ log₂(σ²_{Sᵢ}/D^Rx_i)`.
pub fn cutset_bound(net: &TreeNetwork, profile: &DistortionProfile) -> Result<f64> {
    let plan = FlowPlan::aggregation(net);
    Ok(cutset_terms(&plan, &profile_vectors(&plan, profile)?).iter().sum())
}

/// Variances `σ̂²` of the test-channel estimates, built from the senders'
/// weights and the upstream descriptions:
/// `σ̂²_k = Σ_{u upstream} (σ̂²_u − d_u) + w_k²`.
///
/// Fails when some `d_k` exceeds `σ̂²_k`. Returned distortions are clamped to
/// `σ̂²` where they exceed it by round-off only.
pub(crate) fn test_channel_variances(plan: &FlowPlan, d: &mut [f64]) -> Result<Vec<f64>> {
    let mut sigma_hat = vec![0.0; plan.len()];
    for (k, link) in plan.links().iter().enumerate() {
        let s = link
            .upstream
            .iter()
            .map(|&u| sigma_hat[u] - d[u])
            .sum::<f64>()
            + link.sender_weight * link.sender_weight;
        if d[k] > s * (1.0 + FEASIBILITY_SLACK) {
            return Err(Error::Infeasible(format!(
                "link {}: distortion {} exceeds test-channel variance {}",
                link.edge, d[k], s
            )));
        }
        d[k] = d[k].min(s);
        if s > link.variance * (1.0 + FEASIBILITY_SLACK) {
            return Err(Error::Consistency(format!(
                "link {}: test-channel variance {} exceeds partial-sum variance {}",
                link.edge, s, link.variance
            )));
        }
        sigma_hat[k] = s;
    }
    Ok(sigma_hat)
}

/// Achievable rate and distortion of the Gaussian test-channel scheme in the
/// long-blocklength limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerBound<K: Ord> {
    pub rate_bits: f64,
    pub distortion: f64,
    /// `½ log₂(σ²/d)` per link.
    pub per_link_rate_bits: BTreeMap<K, f64>,
    /// Test-channel estimate variances `σ̂²` per link.
    pub estimate_variance: BTreeMap<K, f64>,
}

fn inner_terms(plan: &FlowPlan, d: &[f64]) -> Vec<f64> {
    plan.links()
        .iter()
        .zip(d)
        .map(|(l, &x)| 0.5 * (l.variance / x).log2())
        .collect()
}

pub fn inner_bound(net: &TreeNetwork, d: &BTreeMap<NodeId, f64>) -> Result<InnerBound<NodeId>> {
    let plan = FlowPlan::aggregation(net);
    let mut dv = gather_nodes(&plan, net, d)?;
    let sigma_hat = test_channel_variances(&plan, &mut dv)?;
    let terms = inner_terms(&plan, &dv);
    Ok(InnerBound {
        rate_bits: terms.iter().sum(),
        distortion: dv.iter().sum(),
        per_link_rate_bits: by_sender(&plan, &terms),
        estimate_variance: by_sender(&plan, &sigma_hat),
    })
}

/// Equal-split inner bound `½ log₂(∏σ²_{Sᵢ}/(D/n)ⁿ)`.
pub fn inner_bound_minimized(net: &TreeNetwork, d: f64) -> Result<f64> {
    check_total(d)?;
    let plan = FlowPlan::aggregation(net);
    let mut split = vec![d / plan.len() as f64; plan.len()];
    test_channel_variances(&plan, &mut split)?;
    Ok(equal_split_rate(&plan, d))
}

/// Difference between the incremental-distortion and cut-set bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport<K: Ord> {
    pub delta_r_bits: f64,
    /// `½ log₂(D^Rx/D^Inc) − ½ ψ(D^Tx)` per link.
    pub per_link: BTreeMap<K, f64>,
}

fn gap_terms(plan: &FlowPlan, lp: &LinkProfile) -> Vec<f64> {
    plan.links()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            0.5 * (lp.rx[k] / lp.inc[k]).log2() - 0.5 * psi_value(l.sender_weight, l.variance, lp.tx[k])
        })
        .collect()
}

pub fn gap_report(net: &TreeNetwork, profile: &DistortionProfile) -> Result<GapReport<NodeId>> {
    let plan = FlowPlan::aggregation(net);
    let terms = gap_terms(&plan, &profile_vectors(&plan, profile)?);
    Ok(GapReport {
        delta_r_bits: terms.iter().sum(),
        per_link: by_sender(&plan, &terms),
    })
}

/// `½ log₂(n!)`, the small-distortion gap on an `n`-link line.
pub fn line_gap_asymptote(n: usize) -> f64 {
    0.5 * (2..=n).map(|k| (k as f64).log2()).sum::<f64>()
}

pub fn consensus_derive(net: &TreeNetwork, inc: &BTreeMap<DirectedEdge, f64>) -> Result<ConsensusProfile> {
    let plan = FlowPlan::consensus(net)?;
    let lp = LinkProfile::derive(&plan, gather_checked(&plan, inc)?);
    Ok(consensus_profile(net, &plan, &lp))
}

fn consensus_profile(net: &TreeNetwork, plan: &FlowPlan, lp: &LinkProfile) -> ConsensusProfile {
    // Everything arriving at k over its incident edges is exactly the edge
    // set of the directed tree toward k.
    let per_root: BTreeMap<NodeId, f64> = net
        .nodes()
        .map(|k| (k, plan.incoming(k).iter().map(|&e| lp.rx[e]).sum()))
        .collect();
    ConsensusProfile {
        inc: plan.scatter(&lp.inc),
        tx: plan.scatter(&lp.tx),
        rx: plan.scatter(&lp.rx),
        total: per_root.values().sum(),
        per_root,
    }
}

pub fn consensus_outer(net: &TreeNetwork, profile: &ConsensusProfile) -> Result<OuterBound<DirectedEdge>> {
    let plan = FlowPlan::consensus(net)?;
    let terms = outer_terms(&plan, &consensus_vectors(&plan, profile)?);
    Ok(OuterBound {
        total_bits: terms.iter().sum(),
        per_link: plan.scatter(&terms),
    })
}

/// Per-directed-edge analog of the cut-set bound, `½ ΣΣ log₂(σ²/D^Rx)`.
pub fn consensus_cutset(net: &TreeNetwork, profile: &ConsensusProfile) -> Result<f64> {
    let plan = FlowPlan::consensus(net)?;
    Ok(cutset_terms(&plan, &consensus_vectors(&plan, profile)?).iter().sum())
}

pub fn consensus_gap(net: &TreeNetwork, profile: &ConsensusProfile) -> Result<GapReport<DirectedEdge>> {
    let plan = FlowPlan::consensus(net)?;
    let terms = gap_terms(&plan, &consensus_vectors(&plan, profile)?);
    Ok(GapReport {
        delta_r_bits: terms.iter().sum(),
        per_link: plan.scatter(&terms),
    })
}

/// Consensus inner bound. The distortion is the sum over nodes of the
/// distortions along each directed tree, `Σ_k Σ_{e ∈ T_k} d_e`.
pub fn consensus_inner(net: &TreeNetwork, d: &BTreeMap<DirectedEdge, f64>) -> Result<InnerBound<DirectedEdge>> {
    let plan = FlowPlan::consensus(net)?;
    let mut dv = gather_checked(&plan, d)?;
    let sigma_hat = test_channel_variances(&plan, &mut dv)?;
    let terms = inner_terms(&plan, &dv);
    let distortion = plan
        .links()
        .iter()
        .zip(&dv)
        .map(|(l, &x)| (net.node_count() - l.carried_nodes) as f64 * x)
        .sum();
    Ok(InnerBound {
        rate_bits: terms.iter().sum(),
        distortion,
        per_link_rate_bits: plan.scatter(&terms),
        estimate_variance: plan.scatter(&sigma_hat),
    })
}

/// Order-level consensus comparator `(n/2)·log₂(1/(n^{3/2} D))`, clipped at
/// zero. Its constants are illustrative only.
pub fn classical_consensus_comparator(n: usize, d: f64) -> f64 {
    let n = n as f64;
    (0.5 * n * (1.0 / (n.powf(1.5) * d)).log2()).max(0.0)
}

/// Bounds clipped at zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveBounds {
    pub outer_incremental_bits: f64,
    pub cutset_bits: f64,
    pub inner_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkBounds {
    pub link: String,
    pub from: NodeId,
    pub to: NodeId,
    pub inc: f64,
    pub tx: f64,
    pub rx: f64,
    /// Achievable rate `½ log₂(σ²/D^Inc)`.
    pub rate_bits: f64,
    pub outer_incremental_bits: f64,
    pub cutset_bits: f64,
    pub delta_r_bits: f64,
}

/// Every bound evaluated for one network and one distortion profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub mode: Mode,
    pub total_distortion: f64,
    pub outer_incremental_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_closed_form_bits: Option<f64>,
    pub cutset_bits: f64,
    pub inner_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_minimized_bits: Option<f64>,
    pub gap_inner_outer_bits: f64,
    pub delta_r_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_consensus_comparator_bits: Option<f64>,
    pub effective: EffectiveBounds,
    pub per_link: Vec<LinkBounds>,
    pub warnings: Vec<String>,
}

fn assemble_report(plan: &FlowPlan, lp: &LinkProfile, total: f64) -> BoundsReport {
    let outer = outer_terms(plan, lp);
    let cut = cutset_terms(plan, lp);
    let inner = inner_terms(plan, &lp.inc);
    let mut warnings = Vec::new();
    let per_link = plan
        .links()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            if lp.inc[k] >= l.variance {
                warnings.push(format!(
                    "link {}: incremental distortion {} is not below the partial-sum variance {}",
                    l.edge, lp.inc[k], l.variance
                ));
            }
            LinkBounds {
                link: l.edge.to_string(),
                from: l.edge.from,
                to: l.edge.to,
                inc: lp.inc[k],
                tx: lp.tx[k],
                rx: lp.rx[k],
                rate_bits: inner[k],
                outer_incremental_bits: outer[k],
                cutset_bits: cut[k],
                delta_r_bits: outer[k] - cut[k],
            }
        })
        .collect();
    let mut scratch = lp.inc.clone();
    if let Err(e) = test_channel_variances(plan, &mut scratch) {
        warnings.push(format!("test-channel scheme not realizable: {e}"));
    }
    let outer_incremental_bits: f64 = outer.iter().sum();
    let cutset_bits: f64 = cut.iter().sum();
    let inner_bits: f64 = inner.iter().sum();
    BoundsReport {
        mode: plan.mode(),
        total_distortion: total,
        outer_incremental_bits,
        outer_closed_form_bits: None,
        cutset_bits,
        inner_bits,
        inner_minimized_bits: None,
        gap_inner_outer_bits: inner_bits - outer_incremental_bits,
        delta_r_bits: outer_incremental_bits - cutset_bits,
        classical_consensus_comparator_bits: None,
        effective: EffectiveBounds {
            outer_incremental_bits: outer_incremental_bits.max(0.0),
            cutset_bits: cutset_bits.max(0.0),
            inner_bits: inner_bits.max(0.0),
        },
        per_link,
        warnings,
    }
}

/// Evaluates all aggregation bounds for `profile`; the closed forms use the
/// profile's total distortion.
pub fn bounds_report(net: &TreeNetwork, profile: &DistortionProfile) -> Result<BoundsReport> {
    let plan = FlowPlan::aggregation(net);
    let lp = profile_vectors(&plan, profile)?;
    let mut report = assemble_report(&plan, &lp, profile.total);
    report.outer_closed_form_bits = Some(outer_bound_closed_form(net, profile.total)?);
    match inner_bound_minimized(net, profile.total) {
        Ok(r) => report.inner_minimized_bits = Some(r),
        Err(e) => report.warnings.push(format!("equal split unavailable: {e}")),
    }
    Ok(report)
}

pub fn consensus_bounds_report(net: &TreeNetwork, profile: &ConsensusProfile) -> Result<BoundsReport> {
    let plan = FlowPlan::consensus(net)?;
    let lp = consensus_vectors(&plan, profile)?;
    let mut report = assemble_report(&plan, &lp, profile.total);
    report.classical_consensus_comparator_bits =
        Some(classical_consensus_comparator(net.node_count(), profile.total));
    Ok(report)
}

/// Aggregation profile with `D/n` on every link.
pub fn equal_split_profile(net: &TreeNetwork, d: f64) -> Result<DistortionProfile> {
    check_total(d)?;
    let share = d / net.edge_count() as f64;
    derive_distortions(net, &net.non_root_nodes().map(|v| (v, share)).collect())
}
