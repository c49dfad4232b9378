//! Numerical validation: an exact linear-Gaussian oracle for the test-channel
//! scheme and a Monte-Carlo simulator of the scheme and of a dithered scalar
//! quantizer baseline.
//!
//! The oracle represents every scalar of the scheme as a coefficient vector
//! over independent unit-variance primitives (one data variable per node and
//! one noise variable per link), so covariances are dot products and MMSE
//! estimates follow from linear conditioning without sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{Profile, RateAllocation};
use crate::bounds::{
    consensus_derive, gather_checked, gather_nodes, test_channel_variances, upstream_sums,
    LinkProfile,
};
use crate::error::{Error, Result};
use crate::infomeasures::test_channel_law;
use crate::network::{DirectedEdge, FlowPlan, Mode, NodeId, TreeNetwork};

/// Tolerance of the oracle identities.
pub const ORACLE_TOL: f64 = 1e-10;
/// Clipping range of the dithered quantizer, in estimate standard deviations.
pub const DITHER_RANGE: f64 = 4.0;
/// Expected overload error `E[(|X| − L)²; |X| > L]` of a unit-variance
/// Gaussian clipped at `±L`, by composite Simpson integration.
fn overload_tail(l: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |x: f64| (x - l) * (x - l) * phi(x);
    let steps = 4000;
    let h = 16.0 / steps as f64;
    let mut acc = f(l) + f(l + 16.0);
    for i in 1..steps {
        acc += f(l + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * acc * h / 3.0
}

/// Sample count below which confidence intervals are flagged as unreliable.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    TestChannel,
    DitheredQuantizer,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "testchannel" | "test-channel" => Ok(Scheme::TestChannel),
            "dither" | "dithered-quantizer" => Ok(Scheme::DitheredQuantizer),
            _ => Err(Error::InvalidArgument(format!("unknown scheme {s:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::TestChannel => "test-channel",
            Scheme::DitheredQuantizer => "dithered-quantizer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub blocklength: usize,
    pub trials: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub mode: Mode,
}

impl SimulationConfig {
    pub fn new(blocklength: usize, trials: usize, seed: u64) -> Self {
        SimulationConfig {
            blocklength,
            trials,
            seed,
            scheme: Scheme::TestChannel,
            mode: Mode::Aggregation,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.blocklength == 0 || self.trials == 0 {
            return Err(Error::InvalidArgument(
                "blocklength and trials must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of comparing a mean against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkStats {
    pub from: NodeId,
    pub to: NodeId,
    /// Mean of `‖ŝ − r̂‖²/N`.
    pub empirical_inc: f64,
    pub inc_ci: Option<f64>,
    pub reference_inc: f64,
    /// Mean of `‖ŝ‖²/N`.
    pub estimate_variance: f64,
    pub estimate_variance_ci: Option<f64>,
    pub reference_estimate_variance: f64,
    /// Mean receive-side distortion of the partial sum.
    pub empirical_rx: f64,
    pub rx_ci: Option<f64>,
    pub reference_rx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStats {
    pub node: NodeId,
    pub empirical: f64,
    pub ci: Option<f64>,
    pub reference: f64,
}

/// Monte-Carlo estimates with `3·stderr` half-widths; a half-width is
/// `None` when a single trial leaves the across-trial variance undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    /// Mean of `‖ŷ − y‖²/N`; summed over nodes in consensus mode.
    pub empirical_total: f64,
    pub total_ci: Option<f64>,
    pub reference_total: f64,
    /// Present only when the half-width is below 10% of the reference.
    pub verdict: Option<Verdict>,
    pub per_node: Vec<NodeStats>,
    pub links: Vec<LinkStats>,
    /// Quantizer overloads over all links, samples and trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturations: Option<u64>,
    pub warnings: Vec<String>,
}

impl SimulationResult {
    pub fn per_link_incremental(&self) -> BTreeMap<DirectedEdge, f64> {
        self.links
            .iter()
            .map(|l| (DirectedEdge::new(l.from, l.to), l.empirical_inc))
            .collect()
    }

    pub fn per_link_estimate_variance(&self) -> BTreeMap<DirectedEdge, f64> {
        self.links
            .iter()
            .map(|l| (DirectedEdge::new(l.from, l.to), l.estimate_variance))
            .collect()
    }

    pub fn link(&self, e: DirectedEdge) -> Option<&LinkStats> {
        self.links.iter().find(|l| l.from == e.from && l.to == e.to)
    }

    pub fn node(&self, v: NodeId) -> Option<&NodeStats> {
        self.per_node.iter().find(|n| n.node == v)
    }
}

// ---------------------------------------------------------------------------
// Analytic oracle

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkAnalytic {
    pub from: NodeId,
    pub to: NodeId,
    pub d: f64,
    pub tx: f64,
    pub rx: f64,
    pub inc: f64,
    /// Transmit-side distortion predicted by summing upstream increments.
    pub expected_tx: f64,
    /// `D^Rx − D^Tx − D^Inc`.
    pub pythagoras_residual: f64,
}

/// Exact second-order description of the test-channel scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticModel {
    pub mode: Mode,
    /// Names of the stacked variables indexing `joint_covariance`.
    pub labels: Vec<String>,
    #[serde(skip)]
    pub joint_covariance: DMatrix<f64>,
    pub links: Vec<LinkAnalytic>,
    /// MMSE distortion of the computed sum at each sink.
    pub per_root: BTreeMap<NodeId, f64>,
    pub total: f64,
    pub expected_total: f64,
    pub min_eigenvalue: f64,
    /// Largest deviation of the receive-side regression row from the
    /// indicator of the link's description.
    pub max_gain_row_deviation: f64,
    /// Largest covariance between incremental errors of distinct links of
    /// one computation tree.
    pub max_cross_covariance: f64,
}

type Coeffs = DVector<f64>;

/// MMSE estimate of `target` from `obs` as a coefficient vector, together
/// with the regression weights.
fn condition(target: &Coeffs, obs: &[&Coeffs]) -> Result<(Coeffs, DVector<f64>)> {
    let p = target.len();
    if obs.is_empty() {
        return Ok((DVector::zeros(p), DVector::zeros(0)));
    }
    let o = DMatrix::from_fn(obs.len(), p, |r, c| obs[r][c]);
    let gram = &o * o.transpose();
    let cross = &o * target;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let pinv = gram
        .pseudo_inverse(1e-12 * scale)
        .map_err(|e| Error::Consistency(format!("pseudo-inverse failed: {e}")))?;
    let beta = pinv * cross;
    Ok((o.transpose() * &beta, beta))
}

fn sq(v: &Coeffs) -> f64 {
    v.dot(v)
}

fn check(what: &str, residual: f64, scale: f64) -> Result<()> {
    if residual.abs() <= ORACLE_TOL * scale.max(f64::MIN_POSITIVE) && residual.is_finite() {
        Ok(())
    } else {
        Err(Error::Consistency(format!(
            "{what}: residual {residual:e} exceeds tolerance at scale {scale:e}"
        )))
    }
}

/// Builds the exact joint Gaussian law of the test-channel scheme for the
/// per-link distortions `d` and verifies the accumulation identities.
///
/// In aggregation mode `d` is keyed by the links `i -> parent(i)`.
pub fn analytic_mmse_check(
    net: &TreeNetwork,
    d: &BTreeMap<DirectedEdge, f64>,
    mode: Mode,
) -> Result<AnalyticModel> {
    let plan = FlowPlan::new(net, mode)?;
    let mut dv = gather_checked(&plan, d)?;
    let sigma_hat = test_channel_variances(&plan, &mut dv)?;
    let expected = LinkProfile::derive(&plan, dv.clone());

    let m = net.node_count();
    let p = m + plan.len();
    let data = |v: NodeId| -> Coeffs {
        let mut c = DVector::zeros(p);
        c[v.0] = net.weight(v).unwrap_or(0.0);
        c
    };

    // sums S, transmit estimates U and descriptions V per link
    let mut sums: Vec<Coeffs> = Vec::with_capacity(plan.len());
    let mut est: Vec<Coeffs> = Vec::with_capacity(plan.len());
    let mut desc: Vec<Coeffs> = Vec::with_capacity(plan.len());
    for (k, link) in plan.links().iter().enumerate() {
        let own = data(link.edge.from);
        let mut s = own.clone();
        let mut u = own;
        for &j in &link.upstream {
            s += &sums[j];
            u += &desc[j];
        }
        let law = test_channel_law(sigma_hat[k], dv[k])?;
        let mut v = &u * law.gain;
        v[m + k] = law.conditional_variance.sqrt();
        sums.push(s);
        est.push(u);
        desc.push(v);
    }

    let mut labels = Vec::new();
    let mut rows: Vec<&Coeffs> = Vec::new();
    let data_rows: Vec<(NodeId, Coeffs)> = net
        .nodes()
        .filter(|&v| net.weight(v).is_some())
        .map(|v| {
            let mut c = DVector::zeros(p);
            c[v.0] = 1.0;
            (v, c)
        })
        .collect();
    for (v, c) in &data_rows {
        labels.push(format!("x{v}"));
        rows.push(c);
    }
    for (k, link) in plan.links().iter().enumerate() {
        labels.push(format!("V[{}]", link.edge));
        rows.push(&desc[k]);
    }
    for (k, link) in plan.links().iter().enumerate() {
        labels.push(format!("U[{}]", link.edge));
        rows.push(&est[k]);
    }
    let a = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
    let joint_covariance = &a * a.transpose();
    let cov_scale = joint_covariance.diagonal().max().max(1.0);
    let min_eigenvalue = joint_covariance.clone().symmetric_eigenvalues().min();
    if min_eigenvalue < -ORACLE_TOL * cov_scale {
        return Err(Error::Consistency(format!(
            "joint covariance not PSD: eigenvalue {min_eigenvalue:e}"
        )));
    }

    let receiver_obs = |v: NodeId| -> (Vec<&Coeffs>, Vec<usize>) {
        let mut obs = Vec::new();
        if let Some((_, c)) = data_rows.iter().find(|(u, _)| *u == v) {
            obs.push(c);
        }
        let incoming = plan.incoming(v).to_vec();
        let offset = obs.len();
        obs.extend(incoming.iter().map(|&j| &desc[j]));
        (obs, incoming.iter().enumerate().map(|(i, _)| offset + i).collect())
    };

    let mut links = Vec::with_capacity(plan.len());
    let mut increments: Vec<Coeffs> = Vec::with_capacity(plan.len());
    let mut max_gain_row_deviation: f64 = 0.0;
    for (k, link) in plan.links().iter().enumerate() {
        let s = &sums[k];
        let own = data_rows
            .iter()
            .find(|(u, _)| *u == link.edge.from)
            .map(|(_, c)| c)
            .expect("senders are weighted");
        let mut tx_obs = vec![own];
        tx_obs.extend(link.upstream.iter().map(|&j| &desc[j]));
        let (tx_est, _) = condition(s, &tx_obs)?;
        let (rx_obs, slots) = receiver_obs(link.edge.to);
        let (rx_est, beta) = condition(s, &rx_obs)?;

        let tx = sq(&(s - &tx_est));
        let rx = sq(&(s - &rx_est));
        let inc_vec = &tx_est - &rx_est;
        let inc = sq(&inc_vec);
        let residual = rx - tx - inc;

        check(&format!("link {} Pythagoras", link.edge), residual, rx)?;
        check(&format!("link {} incremental distortion", link.edge), inc - dv[k], rx)?;
        check(&format!("link {} transmit distortion", link.edge), tx - expected.tx[k], rx)?;

        if sq(&desc[k]) > 1e-12 * sigma_hat[k] {
            let own_slot = plan.incoming(link.edge.to).iter().position(|&j| j == k).unwrap();
            for (i, b) in beta.iter().enumerate() {
                let target = if i == slots[own_slot] { 1.0 } else { 0.0 };
                max_gain_row_deviation = max_gain_row_deviation.max((b - target).abs());
            }
        }

        links.push(LinkAnalytic {
            from: link.edge.from,
            to: link.edge.to,
            d: dv[k],
            tx,
            rx,
            inc,
            expected_tx: expected.tx[k],
            pythagoras_residual: residual,
        });
        increments.push(inc_vec);
    }
    if max_gain_row_deviation > ORACLE_TOL {
        return Err(Error::Consistency(format!(
            "receive-side estimate deviates from the description by {max_gain_row_deviation:e}"
        )));
    }

    // increments are orthogonal along any one computation tree; in consensus
    // mode links leaving the same node serve different trees and share data
    let trees: Vec<Vec<usize>> = match mode {
        Mode::Aggregation => vec![(0..plan.len()).collect()],
        Mode::Consensus => net
            .nodes()
            .map(|k| {
                Ok(net
                    .directed_tree(k)?
                    .into_iter()
                    .filter_map(|e| plan.position(e))
                    .collect())
            })
            .collect::<Result<_>>()?,
    };
    let mut max_cross_covariance: f64 = 0.0;
    for tree in &trees {
        for (i, &a) in tree.iter().enumerate() {
            for &b in &tree[i + 1..] {
                max_cross_covariance = max_cross_covariance.max(increments[a].dot(&increments[b]).abs());
            }
        }
    }
    if max_cross_covariance > ORACLE_TOL {
        return Err(Error::Consistency(format!(
            "incremental errors correlated: {max_cross_covariance:e}"
        )));
    }

    let mut per_root = BTreeMap::new();
    let expected_total;
    match mode {
        Mode::Aggregation => {
            let root = net.root();
            let mut y = DVector::zeros(p);
            for &j in plan.incoming(root) {
                y += &sums[j];
            }
            let (obs, _) = receiver_obs(root);
            let (y_est, _) = condition(&y, &obs)?;
            per_root.insert(root, sq(&(y - y_est)));
            expected_total = dv.iter().sum();
        }
        Mode::Consensus => {
            let mut y = DVector::zeros(p);
            for v in net.nodes() {
                y += data(v);
            }
            for v in net.nodes() {
                let (obs, _) = receiver_obs(v);
                let (y_est, _) = condition(&y, &obs)?;
                per_root.insert(v, sq(&(&y - y_est)));
            }
            let reference = consensus_derive(net, &plan.scatter(&dv))?;
            for (v, &got) in &per_root {
                let want = reference.per_root[v];
                check(&format!("node {v} distortion"), got - want, want)?;
            }
            expected_total = reference.total;
        }
    }
    let total: f64 = per_root.values().sum();
    check("total distortion", total - expected_total, expected_total)?;

    Ok(AnalyticModel {
        mode,
        labels,
        joint_covariance,
        links,
        per_root,
        total,
        expected_total,
        min_eigenvalue,
        max_gain_row_deviation,
        max_cross_covariance,
    })
}

// ---------------------------------------------------------------------------
// Monte-Carlo

const ROLE_DATA: u64 = 0;
const ROLE_NOISE: u64 = 1;
const ROLE_DITHER: u64 = 2;

/// Independent stream for one `(seed, trial, role, link)` key; results do not
/// depend on the order in which streams are drawn.
fn stream(seed: u64, trial: u64, role: u64, from: NodeId, to: NodeId) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let id = (role << 48) | ((from.0 as u64 & 0xFF_FFFF) << 24) | (to.0 as u64 & 0xFF_FFFF);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy)]
enum Coder {
    TestChannel { gain: f64, noise_sd: f64 },
    /// `step == None` sends nothing.
    Dither { step: Option<f64>, clip: f64 },
}

impl Coder {
    fn encode(&self, u: &[f64], rng: &mut ChaCha8Rng, saturations: &mut u64) -> Vec<f64> {
        match *self {
            Coder::TestChannel { gain, noise_sd } => u
                .iter()
                .map(|&x| gain * x + noise_sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Coder::Dither { step: None, .. } => vec![0.0; u.len()],
            Coder::Dither { step: Some(step), clip } => u
                .iter()
                .map(|&x| {
                    let dither = (rng.random::<f64>() - 0.5) * step;
                    let mut z = x + dither;
                    if z.abs() > clip {
                        *saturations += 1;
                        z = z.signum() * clip;
                    }
                    step * (z / step).round() - dither
                })
                .collect(),
        }
    }
}

struct Setup {
    mode: Mode,
    plan: FlowPlan,
    weights: Vec<Option<f64>>,
    coders: Vec<Coder>,
    reference_inc: Vec<f64>,
    reference_estimate_variance: Vec<f64>,
    reference_rx: Vec<f64>,
}

/// Per-trial statistics: totals per sink, then `(inc, estimate variance, rx)`
/// per link.
struct Trial {
    sinks: Vec<f64>,
    links: Vec<[f64; 3]>,
    saturations: u64,
}

fn mean_sq(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.map(|x| x * x).sum::<f64>() / n as f64
}

impl Setup {
    fn sinks(&self, net: &TreeNetwork) -> Vec<NodeId> {
        match self.mode {
            Mode::Aggregation => vec![net.root()],
            Mode::Consensus => net.nodes().collect(),
        }
    }

    fn run_trial(&self, sinks: &[NodeId], cfg: &SimulationConfig, trial: u64) -> Trial {
        let n = cfg.blocklength;
        let data: Vec<Option<Vec<f64>>> = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w.map(|_| {
                    let mut rng = stream(cfg.seed, trial, ROLE_DATA, NodeId(i), NodeId(i));
                    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                })
            })
            .collect();

        let mut desc: Vec<Vec<f64>> = Vec::with_capacity(self.plan.len());
        // receive-side error of the partial sum, `s − v`
        let mut err: Vec<Vec<f64>> = Vec::with_capacity(self.plan.len());
        let mut links = Vec::with_capacity(self.plan.len());
        let mut saturations = 0;
        for (k, link) in self.plan.links().iter().enumerate() {
            let w = link.sender_weight;
            let x = data[link.edge.from.0].as_ref().expect("senders are weighted");
            let mut u: Vec<f64> = x.iter().map(|xi| w * xi).collect();
            let mut tx_err = vec![0.0; n];
            for &j in &link.upstream {
                for t in 0..n {
                    u[t] += desc[j][t];
                    tx_err[t] += err[j][t];
                }
            }
            let role = match self.coders[k] {
                Coder::TestChannel { .. } => ROLE_NOISE,
                Coder::Dither { .. } => ROLE_DITHER,
            };
            let mut rng = stream(cfg.seed, trial, role, link.edge.from, link.edge.to);
            let v = self.coders[k].encode(&u, &mut rng, &mut saturations);
            let rx_err: Vec<f64> = (0..n).map(|t| tx_err[t] + u[t] - v[t]).collect();
            links.push([
                mean_sq((0..n).map(|t| u[t] - v[t]), n),
                mean_sq(u.iter().copied(), n),
                mean_sq(rx_err.iter().copied(), n),
            ]);
            desc.push(v);
            err.push(rx_err);
        }

        let sinks = sinks
            .iter()
            .map(|&v| {
                let incoming = self.plan.incoming(v);
                mean_sq((0..n).map(|t| incoming.iter().map(|&j| err[j][t]).sum::<f64>()), n)
            })
            .collect();
        Trial {
            sinks,
            links,
            saturations,
        }
    }
}

/// Mean and `3·stderr` half-width across trials.
fn summarize(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(3.0 * (var / n).sqrt()))
}

fn run(net: &TreeNetwork, setup: Setup, cfg: SimulationConfig) -> SimulationResult {
    let sinks = setup.sinks(net);
    let trials: Vec<Trial> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| setup.run_trial(&sinks, &cfg, t))
        .collect();

    let mut warnings = Vec::new();
    if cfg.blocklength.saturating_mul(cfg.trials) < MIN_SAMPLES {
        warnings.push(format!(
            "only {} samples; confidence intervals are unreliable below {MIN_SAMPLES}",
            cfg.blocklength * cfg.trials
        ));
    }

    let links = setup
        .plan
        .links()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let column = |c: usize| summarize(&trials.iter().map(|t| t.links[k][c]).collect::<Vec<_>>());
            let (inc, inc_ci) = column(0);
            let (var, var_ci) = column(1);
            let (rx, rx_ci) = column(2);
            LinkStats {
                from: l.edge.from,
                to: l.edge.to,
                empirical_inc: inc,
                inc_ci,
                reference_inc: setup.reference_inc[k],
                estimate_variance: var,
                estimate_variance_ci: var_ci,
                reference_estimate_variance: setup.reference_estimate_variance[k],
                empirical_rx: rx,
                rx_ci,
                reference_rx: setup.reference_rx[k],
            }
        })
        .collect();

    let per_node: Vec<NodeStats> = sinks
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (empirical, ci) = summarize(&trials.iter().map(|t| t.sinks[i]).collect::<Vec<_>>());
            NodeStats {
                node: v,
                empirical,
                ci,
                reference: setup.plan.incoming(v).iter().map(|&j| setup.reference_rx[j]).sum(),
            }
        })
        .collect();

    let (empirical_total, total_ci) =
        summarize(&trials.iter().map(|t| t.sinks.iter().sum()).collect::<Vec<f64>>());
    let reference_total: f64 = per_node.iter().map(|n| n.reference).sum();
    let verdict = total_ci.filter(|&ci| ci < 0.1 * reference_total).map(|ci| {
        if (empirical_total - reference_total).abs() <= ci {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    });
    let saturations = match cfg.scheme {
        Scheme::DitheredQuantizer => Some(trials.iter().map(|t| t.saturations).sum()),
        Scheme::TestChannel => None,
    };

    SimulationResult {
        config: cfg,
        empirical_total,
        total_ci,
        reference_total,
        verdict,
        per_node,
        links,
        saturations,
        warnings,
    }
}

fn test_channel_setup(net: &TreeNetwork, plan: FlowPlan, mut d: Vec<f64>) -> Result<Setup> {
    let sigma_hat = test_channel_variances(&plan, &mut d)?;
    let coders = sigma_hat
        .iter()
        .zip(&d)
        .map(|(&s, &x)| {
            let law = test_channel_law(s, x)?;
            Ok(Coder::TestChannel {
                gain: law.gain,
                noise_sd: law.conditional_variance.sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    let profile = LinkProfile::derive(&plan, d);
    Ok(Setup {
        mode: plan.mode(),
        weights: net.nodes().map(|v| net.weight(v)).collect(),
        coders,
        reference_inc: profile.inc,
        reference_estimate_variance: sigma_hat,
        reference_rx: profile.rx,
        plan,
    })
}

/// Monte-Carlo run of the aggregation test-channel scheme with per-node
/// distortions `d` (node `i` owning link `i -> parent(i)`).
pub fn simulate_aggregation(
    net: &TreeNetwork,
    d: &BTreeMap<NodeId, f64>,
    cfg: SimulationConfig,
) -> Result<SimulationResult> {
    cfg.validate()?;
    let plan = FlowPlan::aggregation(net);
    let dv = gather_nodes(&plan, net, d)?;
    let setup = test_channel_setup(net, plan, dv)?;
    Ok(run(
        net,
        setup,
        cfg.with_mode(Mode::Aggregation).with_scheme(Scheme::TestChannel),
    ))
}

/// Monte-Carlo run of the consensus test-channel scheme with per-edge
/// distortions `d`.
pub fn simulate_consensus(
    net: &TreeNetwork,
    d: &BTreeMap<DirectedEdge, f64>,
    cfg: SimulationConfig,
) -> Result<SimulationResult> {
    cfg.validate()?;
    let plan = FlowPlan::consensus(net)?;
    let dv = gather_checked(&plan, d)?;
    let setup = test_channel_setup(net, plan, dv)?;
    Ok(run(
        net,
        setup,
        cfg.with_mode(Mode::Consensus).with_scheme(Scheme::TestChannel),
    ))
}

fn allocation_plan(net: &TreeNetwork, rates: &RateAllocation) -> Result<(FlowPlan, Vec<f64>)> {
    let plan = match rates.profile {
        Profile::Aggregation(_) => FlowPlan::aggregation(net),
        Profile::Consensus(_) => FlowPlan::consensus(net)?,
    };
    let r = plan.gather(&rates.rates())?;
    if let Some((l, x)) = plan.links().iter().zip(&r).find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("link {}: rate {x} is not a nonnegative number", l.edge)));
    }
    Ok((plan, r))
}

/// Monte-Carlo run of a subtractive-dither uniform scalar quantizer at the
/// given per-link rates.
///
/// A link at rate `R` quantizes its estimate with step `2·L·σ̂/2^R`, clipping
/// at `±L·σ̂` with `L = 4`; at `R = 0` it sends nothing. The reference
/// incremental distortion is `Δ²/12` plus the overload error of a Gaussian
/// estimate (or `σ̂²` at zero rate), with estimate variances accumulated
/// accordingly.
pub fn simulate_dithered_baseline(
    net: &TreeNetwork,
    rates: &RateAllocation,
    cfg: SimulationConfig,
) -> Result<SimulationResult> {
    cfg.validate()?;
    let (plan, r) = allocation_plan(net, rates)?;
    let n = plan.len();
    let mut sigma_hat = vec![0.0; n];
    let mut desc_var = vec![0.0; n];
    let mut coders = Vec::with_capacity(n);
    let mut reference_inc = vec![0.0; n];
    let mut reference_rx = vec![0.0; n];
    let tail = overload_tail(DITHER_RANGE);
    for (k, link) in plan.links().iter().enumerate() {
        let s: f64 = link.upstream.iter().map(|&u| desc_var[u]).sum::<f64>()
            + link.sender_weight * link.sender_weight;
        let tx: f64 = link.upstream.iter().map(|&u| reference_rx[u]).sum();
        sigma_hat[k] = s;
        let clip = DITHER_RANGE * s.sqrt();
        if r[k] > 0.0 {
            let step = 2.0 * clip / 2f64.powf(r[k]);
            coders.push(Coder::Dither { step: Some(step), clip });
            reference_inc[k] = step * step / 12.0 + tail * s;
            desc_var[k] = s + reference_inc[k];
            reference_rx[k] = tx + reference_inc[k];
        } else {
            coders.push(Coder::Dither { step: None, clip });
            reference_inc[k] = s;
            reference_rx[k] = link.variance;
        }
    }
    let setup = Setup {
        mode: plan.mode(),
        weights: net.nodes().map(|v| net.weight(v)).collect(),
        coders,
        reference_inc,
        reference_estimate_variance: sigma_hat,
        reference_rx,
        plan,
    };
    let mode = setup.mode;
    Ok(run(
        net,
        setup,
        cfg.with_mode(mode).with_scheme(Scheme::DitheredQuantizer),
    ))
}

/// Per-link distortions `d = σ̂²·2^{−2R}` the test-channel scheme attains at
/// the given rates, and the resulting end-to-end (or summed) distortion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReference {
    pub inc: BTreeMap<DirectedEdge, f64>,
    pub total: f64,
}

pub fn test_channel_distortion_at_rates(net: &TreeNetwork, rates: &RateAllocation) -> Result<RateReference> {
    let (plan, r) = allocation_plan(net, rates)?;
    let mut sigma_hat = vec![0.0; plan.len()];
    let mut d = vec![0.0; plan.len()];
    for (k, link) in plan.links().iter().enumerate() {
        sigma_hat[k] = link.upstream.iter().map(|&u| sigma_hat[u] - d[u]).sum::<f64>()
            + link.sender_weight * link.sender_weight;
        d[k] = sigma_hat[k] * 2f64.powf(-2.0 * r[k]);
    }
    let rx: Vec<f64> = upstream_sums(&plan, &d).iter().zip(&d).map(|(t, x)| t + x).collect();
    let total = match plan.mode() {
        Mode::Aggregation => d.iter().sum(),
        Mode::Consensus => net
            .nodes()
            .map(|v| plan.incoming(v).iter().map(|&j| rx[j]).sum::<f64>())
            .sum(),
    };
    Ok(RateReference {
        inc: plan.scatter(&d),
        total,
    })
}
