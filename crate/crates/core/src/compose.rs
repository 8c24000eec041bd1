//! Composition budgets.
//!
//! A protocol that calls subprotocols is described by its call tree. Each
//! node carries the advantage `ε` with which it realizes its ideal
//! functionality given ideal children; the whole protocol then realizes
//! its ideal version with advantage at most the sum over all nodes,
//! obtained by replacing nodes by their ideal versions one at a time from
//! the leaves upward.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComposeError {
    #[error("eps of `{id}` must be finite and non-negative, got {eps}")]
    BadEps { id: String, eps: f64 },
    #[error("duplicate node id `{0}`")]
    Duplicate(String),
    #[error("node `{child}` refers to unknown node `{parent}`")]
    UnknownNode { child: String, parent: String },
    #[error("node `{0}` has more than one parent; shared subprotocols must be unfolded into a tree first")]
    SharedChild(String),
    #[error("dependency cycle through `{0}`")]
    Cycle(String),
    #[error("expected exactly one root, found {0}")]
    RootCount(usize),
    #[error("tree has no nodes")]
    Empty,
    #[error("invalid replacement schedule: {0}")]
    Schedule(String),
    #[error("number of rounds must be at least 1, got {0}")]
    Rounds(u64),
    #[error("tree total {tree} differs from closed form {closed}")]
    ClosedForm { tree: f64, closed: f64 },
}

pub type Result<T> = std::result::Result<T, ComposeError>;

fn check_eps(id: &str, eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(ComposeError::BadEps { id: id.to_string(), eps })
    }
}

/// Advantage of a protocol that calls one subroutine, given the advantages
/// of the caller (with an ideal subroutine) and of the subroutine.
pub fn compose_pair(eps_parent: f64, eps_sub: f64) -> Result<f64> {
    check_eps("parent", eps_parent)?;
    check_eps("subroutine", eps_sub)?;
    Ok(eps_parent + eps_sub)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub name: String,
    pub eps: f64,
    pub children: Vec<String>,
}

/// One entry of the scenario-file form of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    pub eps: f64,
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub nodes: Vec<NodeSpec>,
}

/// Rooted call tree with per-node advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeSpec", into = "TreeSpec")]
pub struct CompositionTree {
    nodes: BTreeMap<String, Node>,
    root: String,
}

impl TryFrom<TreeSpec> for CompositionTree {
    type Error = ComposeError;

    fn try_from(spec: TreeSpec) -> Result<Self> {
        Self::from_parents(&spec.nodes)
    }
}

impl From<CompositionTree> for TreeSpec {
    fn from(tree: CompositionTree) -> Self {
        let mut parent = BTreeMap::new();
        for (id, node) in &tree.nodes {
            for c in &node.children {
                parent.insert(c.clone(), id.clone());
            }
        }
        let nodes = tree
            .preorder()
            .into_iter()
            .map(|id| {
                let node = &tree.nodes[&id];
                NodeSpec {
                    name: (node.name != id).then(|| node.name.clone()),
                    eps: node.eps,
                    parent: parent.get(&id).cloned(),
                    id,
                }
            })
            .collect();
        TreeSpec { nodes }
    }
}

impl CompositionTree {
    /// Builds a tree from a node list where every node but the root names
    /// its parent. Children keep the order in which they are listed.
    pub fn from_parents(specs: &[NodeSpec]) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for s in specs {
            check_eps(&s.id, s.eps)?;
            let node = Node { name: s.name.clone().unwrap_or_else(|| s.id.clone()), eps: s.eps, children: Vec::new() };
            if nodes.insert(s.id.clone(), node).is_some() {
                return Err(ComposeError::Duplicate(s.id.clone()));
            }
        }
        let mut roots = Vec::new();
        for s in specs {
            match &s.parent {
                None => roots.push(s.id.clone()),
                Some(p) => match nodes.get_mut(p) {
                    Some(parent) => parent.children.push(s.id.clone()),
                    None => return Err(ComposeError::UnknownNode { child: s.id.clone(), parent: p.clone() }),
                },
            }
        }
        Self::finish(nodes, roots)
    }

    /// Builds a tree from explicit child lists.
    pub fn from_children(nodes: BTreeMap<String, Node>) -> Result<Self> {
        let mut has_parent = BTreeSet::new();
        for (id, node) in &nodes {
            check_eps(id, node.eps)?;
            for c in &node.children {
                if !nodes.contains_key(c) {
                    return Err(ComposeError::UnknownNode { child: c.clone(), parent: id.clone() });
                }
                if !has_parent.insert(c.clone()) {
                    return Err(ComposeError::SharedChild(c.clone()));
                }
            }
        }
        let roots = nodes.keys().filter(|id| !has_parent.contains(*id)).cloned().collect();
        Self::finish(nodes, roots)
    }

    fn finish(nodes: BTreeMap<String, Node>, roots: Vec<String>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(ComposeError::Empty);
        }
        // Every node has at most one parent here, so a missing root or a
        // node unreachable from the root means a cycle.
        if roots.len() != 1 {
            if roots.is_empty() {
                let any = nodes.keys().next().cloned().unwrap_or_default();
                return Err(ComposeError::Cycle(any));
            }
            return Err(ComposeError::RootCount(roots.len()));
        }
        let mut seen = BTreeSet::new();
        for node in nodes.values() {
            for c in &node.children {
                if !seen.insert(c) {
                    return Err(ComposeError::SharedChild(c.clone()));
                }
            }
        }
        let tree = Self { nodes, root: roots[0].clone() };
        let reached = tree.preorder();
        if reached.len() != tree.nodes.len() {
            let reached: BTreeSet<_> = reached.into_iter().collect();
            let stray = tree.nodes.keys().find(|id| !reached.contains(*id)).cloned().unwrap_or_default();
            return Err(ComposeError::Cycle(stray));
        }
        Ok(tree)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids, root first, children in their listed order.
    pub fn preorder(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root.clone()];
        while let Some(id) = stack.pop() {
            if let Some(node) = self.nodes.get(&id) {
                stack.extend(node.children.iter().rev().cloned());
            }
            out.push(id);
        }
        out
    }

    /// Leaves first: every node after all of its descendants.
    pub fn replacement_schedule(&self) -> Vec<String> {
        let mut out = self.preorder();
        out.reverse();
        out
    }

    /// Accumulated advantage of replacing nodes by their ideal versions in
    /// the given order. A node may only be replaced once all of its
    /// children are ideal, and every node must be replaced exactly once.
    pub fn replacement_total(&self, order: &[String]) -> Result<f64> {
        let mut ideal = BTreeSet::new();
        let mut total = 0.0;
        for id in order {
            let node = self.nodes.get(id).ok_or_else(|| ComposeError::Schedule(format!("unknown node `{id}`")))?;
            if let Some(c) = node.children.iter().find(|c| !ideal.contains(*c)) {
                return Err(ComposeError::Schedule(format!("`{id}` replaced before its child `{c}`")));
            }
            if !ideal.insert(id.clone()) {
                return Err(ComposeError::Schedule(format!("`{id}` replaced twice")));
            }
            total = compose_pair(total, node.eps)?;
        }
        if ideal.len() != self.nodes.len() {
            return Err(ComposeError::Schedule(format!("{} of {} nodes replaced", ideal.len(), self.nodes.len())));
        }
        Ok(total)
    }

    /// Total advantage of the whole protocol.
    pub fn total(&self) -> f64 {
        self.nodes.values().map(|n| n.eps).sum()
    }
}

/// Sum of the advantages over all nodes of `tree`.
pub fn tree_total(tree: &CompositionTree) -> f64 {
    tree.total()
}

/// `t` rounds of key distribution, each authenticated with a key from the
/// previous round, the first one with an initially shared key.
///
/// The tree is the chain `κ_t → α_t → κ_{t-1} → … → α_1 → κ_0` where `κ_0`
/// is an ideal leaf.
pub fn repeated_qkd(t: u64, eps_kappa: f64, eps_alpha: f64) -> Result<(f64, CompositionTree)> {
    if t < 1 {
        return Err(ComposeError::Rounds(t));
    }
    check_eps("kappa", eps_kappa)?;
    check_eps("alpha", eps_alpha)?;
    let mut specs = Vec::with_capacity(2 * t as usize + 1);
    let mut parent: Option<String> = None;
    for round in (1..=t).rev() {
        for (kind, eps) in [("kappa", eps_kappa), ("alpha", eps_alpha)] {
            let id = format!("{kind}_{round}");
            specs.push(NodeSpec { id: id.clone(), name: Some(kind.to_string()), eps, parent: parent.take() });
            parent = Some(id);
        }
    }
    specs.push(NodeSpec { id: "kappa_0".into(), name: Some("initial_key".into()), eps: 0.0, parent });
    let tree = CompositionTree::from_parents(&specs)?;
    let total = tree.replacement_total(&tree.replacement_schedule())?;
    let closed = t as f64 * compose_pair(eps_kappa, eps_alpha)?;
    if (total - closed).abs() > 4.0 * f64::EPSILON * closed.max(f64::MIN_POSITIVE) * t as f64 {
        return Err(ComposeError::ClosedForm { tree: total, closed });
    }
    Ok((total, tree))
}
