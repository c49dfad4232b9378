//! Rooted weighted tree networks and the structural quantities derived from
//! them: subtrees and their partial-sum variances, directed trees toward an
//! arbitrary root, oriented subtrees and edge multiplicities.
//!
//! Node ids are dense integers `0..m`. In aggregation mode the root is the
//! sink and carries no weight; in consensus mode every node, the root
//! included, carries a weight and computes the weighted sum.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of nodes accepted by the parser.
pub const DEFAULT_MAX_NODES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i)
    }
}

/// An ordered pair of adjacent nodes; information flows `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub from: NodeId,
    pub to: NodeId,
}

impl DirectedEdge {
    pub fn new(from: impl Into<NodeId>, to: impl Into<NodeId>) -> Self {
        DirectedEdge {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn reversed(self) -> Self {
        DirectedEdge {
            from: self.to,
            to: self.from,
        }
    }
}

impl fmt::Display for DirectedEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

impl FromStr for DirectedEdge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| Error::InvalidArgument(format!("expected `from->to`, got `{s}`")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad node id `{t}` in `{s}`")))
        };
        Ok(DirectedEdge::new(parse(a)?, parse(b)?))
    }
}

/// Which computation the network performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Weighted sum computed at the root (sink) only.
    Aggregation,
    /// Weighted sum computed at every node.
    Consensus,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agg" | "aggregation" => Ok(Mode::Aggregation),
            "consensus" => Ok(Mode::Consensus),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

/// A node set together with the per-entry variance of its partial sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtreeStats {
    pub members: BTreeSet<NodeId>,
    pub variance: f64,
}

/// One entry of the tree document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

/// Serialized form of a [`TreeNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub root: usize,
    pub nodes: Vec<NodeSpec>,
}

/// A validated rooted tree of weighted Gaussian sources.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNetwork {
    root: NodeId,
    weights: Vec<Option<f64>>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    post_order: Vec<NodeId>,
    subtree_size: Vec<usize>,
    subtree_variance: Vec<f64>,
    total_variance: f64,
}

impl TreeNetwork {
    /// Validates a tree document, rejecting cycles, disconnected nodes,
    /// duplicate or non-dense ids and zero or non-finite weights.
    pub fn from_document(doc: &TreeDocument, max_nodes: usize) -> Result<Self> {
        let root = NodeId(doc.root);
        let mut specs: BTreeMap<usize, &NodeSpec> = BTreeMap::new();
        for spec in &doc.nodes {
            if specs.insert(spec.id, spec).is_some() {
                return Err(Error::invalid_node(NodeId(spec.id), "duplicate id"));
            }
        }
        let mut ids: BTreeSet<usize> = specs.keys().copied().collect();
        ids.insert(doc.root);
        let m = ids.len();
        if m > max_nodes {
            return Err(Error::InvalidArgument(format!(
                "network has {m} nodes, limit is {max_nodes}"
            )));
        }
        if m < 2 {
            return Err(Error::Malformed(
                "network needs at least one node besides the root".into(),
            ));
        }
        if let Some(missing) = (0..m).find(|i| !ids.contains(i)) {
            return Err(Error::Malformed(format!(
                "node ids must be dense in 0..{m}; id {missing} is missing"
            )));
        }

        let mut weights = vec![None; m];
        let mut parent = vec![None; m];
        for (&id, spec) in &specs {
            let node = NodeId(id);
            if let Some(w) = spec.weight {
                if !w.is_finite() {
                    return Err(Error::invalid_node(node, "weight is not finite"));
                }
                if w == 0.0 {
                    return Err(Error::invalid_node(node, "weight is zero"));
                }
                weights[id] = Some(w);
            }
            if node == root {
                if spec.parent.is_some() {
                    return Err(Error::invalid_node(node, "root cannot have a parent"));
                }
                continue;
            }
            let p = spec
                .parent
                .ok_or_else(|| Error::invalid_node(node, "disconnected: no parent given"))?;
            if p >= m {
                return Err(Error::invalid_node(
                    node,
                    format!("disconnected: parent {p} does not exist"),
                ));
            }
            if p == id {
                return Err(Error::invalid_node(node, "cycle detected: node is its own parent"));
            }
            if spec.weight.is_none() {
                return Err(Error::invalid_node(node, "missing weight"));
            }
            parent[id] = Some(NodeId(p));
        }

        // Every non-root node has a parent, so a node fails to reach the root
        // exactly when its parent chain enters a cycle.
        let mut reaches_root = vec![false; m];
        reaches_root[root.0] = true;
        for start in 0..m {
            let mut path = Vec::new();
            let mut on_path = BTreeSet::new();
            let mut cur = start;
            while !reaches_root[cur] {
                if !on_path.insert(cur) {
                    return Err(Error::invalid_node(
                        NodeId(cur),
                        "cycle detected in parent map",
                    ));
                }
                path.push(cur);
                cur = parent[cur].expect("non-root node has a parent").0;
            }
            for v in path {
                reaches_root[v] = true;
            }
        }

        Ok(Self::assemble(root, weights, parent))
    }

    fn assemble(root: NodeId, weights: Vec<Option<f64>>, parent: Vec<Option<NodeId>>) -> Self {
        let m = weights.len();
        let mut children = vec![Vec::new(); m];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.0].push(NodeId(i));
            }
        }
        // ids are visited in ascending order, so children are already sorted

        let mut post_order = Vec::with_capacity(m);
        let mut stack = vec![(root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                post_order.push(v);
            } else {
                stack.push((v, true));
                for &c in children[v.0].iter().rev() {
                    stack.push((c, false));
                }
            }
        }

        let mut subtree_size = vec![0usize; m];
        let mut subtree_variance = vec![0.0; m];
        for &v in &post_order {
            let w = weights[v.0].unwrap_or(0.0);
            subtree_size[v.0] = 1 + children[v.0].iter().map(|c| subtree_size[c.0]).sum::<usize>();
            subtree_variance[v.0] =
                w * w + children[v.0].iter().map(|c| subtree_variance[c.0]).sum::<f64>();
        }
        let total_variance = subtree_variance[root.0];
        TreeNetwork {
            root,
            weights,
            parent,
            children,
            post_order,
            subtree_size,
            subtree_variance,
            total_variance,
        }
    }

    /// Line network `v0 <- v1 <- ... <- vn` rooted at the sink `v0`, where
    /// `weights[i - 1]` is the weight of `vi`.
    pub fn line(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("line needs n >= 1".into()));
        }
        let nodes = weights
            .iter()
            .enumerate()
            .map(|(k, &w)| NodeSpec {
                id: k + 1,
                weight: Some(w),
                parent: Some(k),
            })
            .collect();
        Self::from_document(&TreeDocument { root: 0, nodes }, usize::MAX)
    }

    /// Star rooted at its center `0` with one leaf per entry of `leaf_weights`.
    pub fn star(center_weight: Option<f64>, leaf_weights: &[f64]) -> Result<Self> {
        let mut nodes: Vec<NodeSpec> = leaf_weights
            .iter()
            .enumerate()
            .map(|(k, &w)| NodeSpec {
                id: k + 1,
                weight: Some(w),
                parent: Some(0),
            })
            .collect();
        if center_weight.is_some() {
            nodes.insert(
                0,
                NodeSpec {
                    id: 0,
                    weight: center_weight,
                    parent: None,
                },
            );
        }
        Self::from_document(&TreeDocument { root: 0, nodes }, usize::MAX)
    }

    /// Random recursive tree on `n + 1` nodes: node `i` attaches to a
    /// uniformly chosen earlier node. Weights are uniform in `weight_range`.
    /// With `weighted_root` the root also receives a weight (consensus use).
    pub fn random<R: Rng + ?Sized>(
        n: usize,
        weight_range: (f64, f64),
        weighted_root: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (lo, hi) = weight_range;
        if n == 0 || !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(
                "random tree needs n >= 1 and a positive weight range".into(),
            ));
        }
        let draw = |rng: &mut R| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut nodes = Vec::with_capacity(n + 1);
        if weighted_root {
            nodes.push(NodeSpec {
                id: 0,
                weight: Some(draw(rng)),
                parent: None,
            });
        }
        for i in 1..=n {
            let parent = rng.random_range(0..i);
            nodes.push(NodeSpec {
                id: i,
                weight: Some(draw(rng)),
                parent: Some(parent),
            });
        }
        Self::from_document(&TreeDocument { root: 0, nodes }, usize::MAX)
    }

    pub fn to_document(&self) -> TreeDocument {
        let nodes = (0..self.node_count())
            .filter(|&i| NodeId(i) != self.root || self.weights[i].is_some())
            .map(|i| NodeSpec {
                id: i,
                weight: self.weights[i],
                parent: self.parent[i].map(|p| p.0),
            })
            .collect();
        TreeDocument {
            root: self.root.0,
            nodes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("tree document serializes")
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Number of nodes, the root included.
    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Number of undirected edges (one per non-root node).
    pub fn edge_count(&self) -> usize {
        self.node_count() - 1
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).map(NodeId)
    }

    /// Non-root nodes in ascending order; each owns the link to its parent.
    pub fn non_root_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |&v| v != self.root)
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.0 < self.node_count()
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::UnknownNode(v))
        }
    }

    pub fn weight(&self, v: NodeId) -> Option<f64> {
        self.weights.get(v.0).copied().flatten()
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent.get(v.0).copied().flatten()
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v.0]
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.children[v.0].is_empty()
    }

    /// Neighbors of `v` in ascending id order.
    pub fn neighbors(&self, v: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.children[v.0].clone();
        if let Some(p) = self.parent(v) {
            out.push(p);
        }
        out.sort_unstable();
        out
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.contains(a)
            && self.contains(b)
            && (self.parent(a) == Some(b) || self.parent(b) == Some(a))
    }

    /// Nodes ordered so that every node follows all of its descendants.
    pub fn post_order(&self) -> &[NodeId] {
        &self.post_order
    }

    /// Sum of squared weights over all nodes (the root counts as zero when
    /// it carries no weight).
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Fails unless every node, the root included, carries a weight.
    pub fn require_all_weighted(&self) -> Result<()> {
        match self.nodes().find(|&v| self.weight(v).is_none()) {
            Some(v) => Err(Error::invalid_node(
                v,
                "consensus requires a weight on every node",
            )),
            None => Ok(()),
        }
    }

    pub fn subtree_variance(&self, v: NodeId) -> Result<f64> {
        self.check(v)?;
        Ok(self.subtree_variance[v.0])
    }

    pub fn subtree_size(&self, v: NodeId) -> Result<usize> {
        self.check(v)?;
        Ok(self.subtree_size[v.0])
    }

    /// The node together with all its descendants.
    pub fn subtree_stats(&self, v: NodeId) -> Result<SubtreeStats> {
        self.check(v)?;
        let mut members = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            members.insert(u);
            stack.extend_from_slice(&self.children[u.0]);
        }
        Ok(SubtreeStats {
            members,
            variance: self.subtree_variance[v.0],
        })
    }

    fn check_edge(&self, e: DirectedEdge) -> Result<()> {
        self.check(e.from)?;
        self.check(e.to)?;
        if self.is_adjacent(e.from, e.to) {
            Ok(())
        } else {
            Err(Error::NotAdjacent {
                from: e.from,
                to: e.to,
            })
        }
    }

    /// Edges of the tree oriented toward `k`, sorted by source node.
    pub fn directed_tree(&self, k: NodeId) -> Result<Vec<DirectedEdge>> {
        self.check(k)?;
        let mut seen = vec![false; self.node_count()];
        let mut edges = Vec::with_capacity(self.edge_count());
        let mut queue = VecDeque::from([k]);
        seen[k.0] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v.0] {
                    seen[v.0] = true;
                    edges.push(DirectedEdge::new(v, u));
                    queue.push_back(v);
                }
            }
        }
        edges.sort_unstable();
        Ok(edges)
    }

    /// Size and partial-sum variance of the component containing `e.from`
    /// once the edge is removed.
    pub(crate) fn oriented_size_variance(&self, e: DirectedEdge) -> Result<(usize, f64)> {
        self.check_edge(e)?;
        if self.parent(e.from) == Some(e.to) {
            Ok((self.subtree_size[e.from.0], self.subtree_variance[e.from.0]))
        } else {
            Ok((
                self.node_count() - self.subtree_size[e.to.0],
                self.total_variance - self.subtree_variance[e.to.0],
            ))
        }
    }

    /// Stats of the oriented subtree: `e.from` and its descendants when
    /// `e.to` is taken as its parent.
    pub fn oriented_subtree_stats(&self, e: DirectedEdge) -> Result<SubtreeStats> {
        let (_, variance) = self.oriented_size_variance(e)?;
        let mut members = BTreeSet::from([e.from]);
        let mut stack = vec![e.from];
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !(u == e.from && v == e.to) && members.insert(v) {
                    stack.push(v);
                }
            }
        }
        Ok(SubtreeStats { members, variance })
    }

    /// Number of roots `k` whose directed tree contains `e`, i.e. the number
    /// of nodes on the `to` side of the edge.
    pub fn edge_multiplicity(&self, e: DirectedEdge) -> Result<usize> {
        let (from_side, _) = self.oriented_size_variance(e)?;
        Ok(self.node_count() - from_side)
    }
}

/// Parses a tree JSON document with the default node limit.
pub fn parse_tree(text: &str) -> Result<TreeNetwork> {
    parse_tree_with_limit(text, DEFAULT_MAX_NODES)
}

pub fn parse_tree_with_limit(text: &str, max_nodes: usize) -> Result<TreeNetwork> {
    let doc: TreeDocument =
        serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    TreeNetwork::from_document(&doc, max_nodes)
}

/// One link of a [`FlowPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub edge: DirectedEdge,
    /// Weight of the transmitting node.
    pub sender_weight: f64,
    /// Variance of the partial sum carried across the link.
    pub variance: f64,
    /// Number of nodes whose data the link carries.
    pub carried_nodes: usize,
    /// Indices of the links whose descriptions the sender combines.
    pub upstream: Vec<usize>,
}

/// The set of links active in a computation, in an order where every link
/// comes after all its upstream links.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPlan {
    mode: Mode,
    links: Vec<Link>,
    index: BTreeMap<DirectedEdge, usize>,
    incoming: Vec<Vec<usize>>,
}

impl FlowPlan {
    pub fn new(net: &TreeNetwork, mode: Mode) -> Result<Self> {
        match mode {
            Mode::Aggregation => Ok(Self::aggregation(net)),
            Mode::Consensus => Self::consensus(net),
        }
    }

    /// Links `i -> parent(i)` toward the sink.
    pub fn aggregation(net: &TreeNetwork) -> Self {
        let edges: Vec<DirectedEdge> = net
            .post_order()
            .iter()
            .filter(|&&v| v != net.root())
            .map(|&v| DirectedEdge::new(v, net.parent(v).expect("non-root has parent")))
            .collect();
        Self::build(net, Mode::Aggregation, edges, |e| {
            net.children(e.from)
                .iter()
                .map(|&c| DirectedEdge::new(c, e.from))
                .collect()
        })
    }

    /// All `2(m - 1)` directed edges; requires every node to be weighted.
    pub fn consensus(net: &TreeNetwork) -> Result<Self> {
        net.require_all_weighted()?;
        let mut edges: Vec<(usize, DirectedEdge)> = Vec::with_capacity(2 * net.edge_count());
        for v in net.non_root_nodes() {
            let p = net.parent(v).expect("non-root has parent");
            for e in [DirectedEdge::new(v, p), DirectedEdge::new(p, v)] {
                edges.push((net.oriented_size_variance(e)?.0, e));
            }
        }
        edges.sort_unstable();
        let edges = edges.into_iter().map(|(_, e)| e).collect();
        Ok(Self::build(net, Mode::Consensus, edges, |e| {
            net.neighbors(e.from)
                .into_iter()
                .filter(|&k| k != e.to)
                .map(|k| DirectedEdge::new(k, e.from))
                .collect()
        }))
    }

    fn build(
        net: &TreeNetwork,
        mode: Mode,
        edges: Vec<DirectedEdge>,
        upstream_of: impl Fn(DirectedEdge) -> Vec<DirectedEdge>,
    ) -> Self {
        let index: BTreeMap<DirectedEdge, usize> =
            edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let mut incoming = vec![Vec::new(); net.node_count()];
        let links = edges
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                incoming[e.to.0].push(k);
                let (carried_nodes, variance) =
                    net.oriented_size_variance(e).expect("plan edges are adjacent");
                let upstream = upstream_of(e).into_iter().map(|u| index[&u]).collect();
                Link {
                    edge: e,
                    sender_weight: net.weight(e.from).expect("senders are weighted"),
                    variance,
                    carried_nodes,
                    upstream,
                }
            })
            .collect();
        FlowPlan {
            mode,
            links,
            index,
            incoming,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn position(&self, e: DirectedEdge) -> Option<usize> {
        self.index.get(&e).copied()
    }

    /// Indices of the links arriving at `v`.
    pub fn incoming(&self, v: NodeId) -> &[usize] {
        &self.incoming[v.0]
    }

    /// Looks up one value per link from `values`, failing on the first
    /// missing link.
    pub fn gather(&self, values: &BTreeMap<DirectedEdge, f64>) -> Result<Vec<f64>> {
        self.links
            .iter()
            .map(|l| {
                values
                    .get(&l.edge)
                    .copied()
                    .ok_or(Error::MissingEntry(l.edge))
            })
            .collect()
    }

    /// Inverse of [`FlowPlan::gather`].
    pub fn scatter(&self, values: &[f64]) -> BTreeMap<DirectedEdge, f64> {
        self.links
            .iter()
            .zip(values)
            .map(|(l, &v)| (l.edge, v))
            .collect()
    }
}

/// Converts a per-node map (aggregation, node `i` owning link
/// `i -> parent(i)`) to a per-link map.
pub fn node_map_to_links(
    net: &TreeNetwork,
    values: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<DirectedEdge, f64>> {
    let mut out = BTreeMap::new();
    for (&v, &x) in values {
        net.check(v)?;
        let p = net
            .parent(v)
            .ok_or_else(|| Error::invalid_node(v, "the sink owns no link"))?;
        out.insert(DirectedEdge::new(v, p), x);
    }
    Ok(out)
}
