//! Search tree storage and the numeric policies that drive it: UCB, softmax selection,
//! score levels and backpropagation.
//!
//! Statistics convention: the root starts with zero visits and gains exactly one per
//! completed iteration. A child created during simulation starts with one visit and its
//! own mapped score, so every expanded child has a defined UCB on the next pass.

mod levels;
mod policy;

use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{ActionCommand, ObservationDigest};
use crate::Scalar;

pub use levels::{map_score, mean_score, validate_level_config, LevelConfig};
pub use policy::{sample_index, softmax_probabilities, ucb_score, SelectionPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("no expanded children")]
    NoExpandedChildren,
    #[error("subtree exhausted")]
    SubtreeExhausted,
    #[error("node has zero visits; simulation must assign the first visit")]
    ZeroVisits,
    #[error("raw score {0} outside [0, 10]")]
    ScoreOutOfRange(i64),
    #[error("expansion produced no scorable children")]
    NoScores,
    #[error("invalid level configuration: {0}")]
    LevelConfig(String),
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(String),
    #[error("duplicate action {0:?} under one parent")]
    DuplicateAction(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Unexpanded,
    Expanded,
    TerminalCrash,
    Exhausted,
}

impl NodeStatus {
    pub fn is_selectable(self) -> bool {
        matches!(self, NodeStatus::Unexpanded | NodeStatus::Expanded)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchEdge {
    pub action: ActionCommand,
    pub child: NodeId,
    pub post_digest: ObservationDigest,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchNode<S> {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub visit_count: u64,
    pub total_score: S,
    pub status: NodeStatus,
    pub children: Vec<SearchEdge>,
}

impl<S: Scalar> SearchNode<S> {
    pub fn mean_value(&self) -> Option<S> {
        (self.visit_count > 0).then(|| self.total_score / S::count(self.visit_count))
    }
}

/// Arena-backed Monte Carlo tree; node ids index into the arena.
#[derive(Debug, Clone, Serialize)]
pub struct SearchTree<S> {
    nodes: Vec<SearchNode<S>>,
    root_digest: ObservationDigest,
}

impl<S: Scalar> SearchTree<S> {
    pub fn new(root_digest: ObservationDigest) -> Self {
        let root = SearchNode {
            id: NodeId(0),
            parent: None,
            depth: 0,
            visit_count: 0,
            total_score: S::zero(),
            status: NodeStatus::Unexpanded,
            children: Vec::new(),
        };
        SearchTree { nodes: vec![root], root_digest }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn root_digest(&self) -> ObservationDigest {
        self.root_digest
    }

    pub fn node(&self, id: NodeId) -> &SearchNode<S> {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SearchNode<S>> {
        self.nodes.iter()
    }

    /// Edges from the root down to `id`.
    pub fn edges_to(&self, id: NodeId) -> Vec<&SearchEdge> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.node(cur).parent {
            let edge = self.node(parent).children.iter().find(|e| e.child == cur).expect("child linked from its parent");
            out.push(edge);
            cur = parent;
        }
        out.reverse();
        out
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(parent) = self.node(cur).parent {
            out.push(parent);
            cur = parent;
        }
        out.reverse();
        out
    }

    /// Adds a freshly simulated child holding one visit and its mapped score.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        action: ActionCommand,
        post_digest: ObservationDigest,
        mapped: u32,
        status: NodeStatus,
    ) -> Result<NodeId, TreeError> {
        let key = action.normalized_key();
        if self.node(parent).children.iter().any(|e| e.action.normalized_key() == key) {
            return Err(TreeError::DuplicateAction(action.to_line()));
        }
        if !matches!(self.node(parent).status, NodeStatus::Unexpanded | NodeStatus::Expanded) {
            return Err(TreeError::Contract(format!("cannot add children to a {:?} node", self.node(parent).status)));
        }
        let id = NodeId(self.nodes.len());
        let depth = self.node(parent).depth + 1;
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            depth,
            visit_count: 1,
            total_score: S::count(mapped as u64),
            status,
            children: Vec::new(),
        });
        let p = &mut self.nodes[parent.0];
        p.children.push(SearchEdge { action, child: id, post_digest });
        p.status = NodeStatus::Expanded;
        Ok(id)
    }

    /// Marks `id` exhausted, then every ancestor left with no selectable child.
    pub fn mark_exhausted(&mut self, id: NodeId) {
        if self.nodes[id.0].status != NodeStatus::TerminalCrash {
            self.nodes[id.0].status = NodeStatus::Exhausted;
        }
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            let dead = self.node(p).children.iter().all(|e| !self.node(e.child).status.is_selectable());
            if !dead || self.node(p).status != NodeStatus::Expanded {
                break;
            }
            self.nodes[p.0].status = NodeStatus::Exhausted;
            cur = self.node(p).parent;
        }
    }

    pub fn ucb(&self, child: NodeId, parent_visits: u64, c: S) -> Result<S, TreeError> {
        let n = self.node(child);
        ucb_score(n.total_score, n.visit_count, parent_visits, c)
    }

    /// Selection probabilities over the selectable children of `parent`, as
    /// `(edge index, probability)` pairs.
    pub fn selection_distribution(
        &self,
        parent: NodeId,
        policy: &SelectionPolicy,
    ) -> Result<Vec<(usize, S)>, TreeError> {
        let p = self.node(parent);
        if p.status != NodeStatus::Expanded {
            return Err(TreeError::Contract(format!("selection from a {:?} node", p.status)));
        }
        let eligible: Vec<usize> =
            (0..p.children.len()).filter(|&i| self.node(p.children[i].child).status.is_selectable()).collect();
        if eligible.is_empty() {
            return Err(TreeError::SubtreeExhausted);
        }
        let c = S::lit(policy.exploration);
        let ucbs = eligible
            .iter()
            .map(|&i| self.ucb(p.children[i].child, p.visit_count.max(1), c))
            .collect::<Result<Vec<S>, _>>()?;
        let probs = softmax_probabilities(&ucbs, S::lit(policy.temperature))?;
        Ok(eligible.into_iter().zip(probs).collect())
    }

    /// Samples one selectable child edge of `parent` by softmax over UCB.
    pub fn sample_child<R: Rng + ?Sized>(
        &self,
        parent: NodeId,
        policy: &SelectionPolicy,
        rng: &mut R,
    ) -> Result<&SearchEdge, TreeError> {
        let dist = self.selection_distribution(parent, policy)?;
        let probs: Vec<S> = dist.iter().map(|(_, p)| *p).collect();
        let pick = dist[sample_index(&probs, rng)].0;
        Ok(&self.node(parent).children[pick])
    }

    /// Adds the mean of `mapped` to every node on `path` and one visit to each.
    pub fn backpropagate(&mut self, path: &[NodeId], mapped: &[u32]) -> Result<S, TreeError> {
        let m: S = mean_score(mapped)?;
        self.backpropagate_value(path, m)?;
        Ok(m)
    }

    pub fn backpropagate_value(&mut self, path: &[NodeId], value: S) -> Result<(), TreeError> {
        self.check_path(path)?;
        for id in path {
            let n = &mut self.nodes[id.0];
            n.visit_count += 1;
            n.total_score = n.total_score + value;
        }
        Ok(())
    }

    fn check_path(&self, path: &[NodeId]) -> Result<(), TreeError> {
        match path.first() {
            None => return Err(TreeError::Contract("empty backpropagation path".into())),
            Some(&first) if first != self.root() => {
                return Err(TreeError::Contract("backpropagation path must start at the root".into()))
            }
            _ => {}
        }
        for w in path.windows(2) {
            if w[1].0 >= self.nodes.len() || self.node(w[1]).parent != Some(w[0]) {
                return Err(TreeError::Contract(format!("{:?} is not a child of {:?}", w[1], w[0])));
            }
        }
        Ok(())
    }

    /// Structural invariant violations, empty when the tree is consistent.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            let unexpanded = n.status == NodeStatus::Unexpanded;
            let childless_live = n.children.is_empty()
                && !matches!(n.status, NodeStatus::TerminalCrash | NodeStatus::Exhausted);
            if unexpanded != childless_live {
                out.push(format!("{:?}: status {:?} with {} children", n.id, n.status, n.children.len()));
            }
            if n.total_score < S::zero() {
                out.push(format!("{:?}: negative total {}", n.id, n.total_score));
            }
            if n.id != self.root() && n.visit_count == 0 {
                out.push(format!("{:?}: simulated node without a visit", n.id));
            }
            let mut keys = HashSet::new();
            for e in &n.children {
                if !keys.insert(e.action.normalized_key()) {
                    out.push(format!("{:?}: duplicate edge {}", n.id, e.action));
                }
                let c = self.node(e.child);
                if c.visit_count > n.visit_count {
                    out.push(format!("{:?}: child {:?} has more visits than its parent", n.id, c.id));
                }
            }
        }
        out
    }
}
