//! Workflow DAG and completed-set bitsets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest workflow the bitset representation can hold.
pub const MAX_NODES: usize = 64;

/// A set of subtasks, one bit per dense node index.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeSet(u64);

impl NodeSet {
    pub const EMPTY: NodeSet = NodeSet(0);

    pub const fn from_bits(bits: u64) -> Self {
        NodeSet(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    /// All nodes `0..n`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_NODES);
        if n == MAX_NODES {
            NodeSet(u64::MAX)
        } else {
            NodeSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(v: usize) -> Self {
        NodeSet(1u64 << v)
    }

    pub fn from_nodes<I: IntoIterator<Item = usize>>(nodes: I) -> Self {
        nodes.into_iter().fold(NodeSet::EMPTY, |s, v| s.with(v))
    }

    #[inline]
    pub fn contains(self, v: usize) -> bool {
        v < MAX_NODES && self.0 & (1u64 << v) != 0
    }

    #[inline]
    pub fn with(self, v: usize) -> Self {
        NodeSet(self.0 | (1u64 << v))
    }

    #[inline]
    pub fn union(self, other: NodeSet) -> Self {
        NodeSet(self.0 | other.0)
    }

    #[inline]
    pub fn intersection(self, other: NodeSet) -> Self {
        NodeSet(self.0 & other.0)
    }

    #[inline]
    pub fn difference(self, other: NodeSet) -> Self {
        NodeSet(self.0 & !other.0)
    }

    #[inline]
    pub fn is_subset(self, other: NodeSet) -> bool {
        self.0 & !other.0 == 0
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Node indices in increasing order.
    pub fn iter(self) -> NodeSetIter {
        NodeSetIter(self.0)
    }
}

impl fmt::Debug for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeSet::from_nodes(iter)
    }
}

impl Serialize for NodeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for NodeSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nodes = Vec::<usize>::deserialize(d)?;
        if let Some(&bad) = nodes.iter().find(|&&v| v >= MAX_NODES) {
            return Err(serde::de::Error::custom(format!("node index {bad} out of range")));
        }
        Ok(NodeSet::from_nodes(nodes))
    }
}

pub struct NodeSetIter(u64);

impl Iterator for NodeSetIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let v = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(v)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for NodeSetIter {}

/// Subtask dependency graph. An edge `(u, v)` means `v` can only be
/// attempted once `u` has completed.
///
/// Construction never fails so that malformed graphs can be reported by
/// [`crate::validate`]; edges referencing unknown nodes are kept in
/// [`edges`](Self::edges) but ignored when computing predecessors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkflowGraph {
    names: Vec<Option<String>>,
    edges: Vec<(usize, usize)>,
    preds: Vec<NodeSet>,
}

impl WorkflowGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Self {
        Self::with_names(vec![None; n], edges)
    }

    pub fn with_names(names: Vec<Option<String>>, edges: Vec<(usize, usize)>) -> Self {
        let n = names.len();
        let mut preds = vec![NodeSet::EMPTY; n];
        for &(u, v) in &edges {
            if u < n && v < n && u < MAX_NODES {
                preds[v] = preds[v].with(u);
            }
        }
        WorkflowGraph { names, edges, preds }
    }

    /// Chain `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Self {
        Self::new(n, (1..n).map(|v| (v - 1, v)).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, v: usize) -> Option<&str> {
        self.names.get(v).and_then(|n| n.as_deref())
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn preds(&self, v: usize) -> NodeSet {
        self.preds[v]
    }

    pub fn all_nodes(&self) -> NodeSet {
        NodeSet::full(self.len().min(MAX_NODES))
    }

    /// Ready set without argument checks; `completed` must only contain
    /// nodes of this graph.
    #[inline]
    pub fn ready_nodes(&self, completed: NodeSet) -> NodeSet {
        let mut ready = 0u64;
        let mut pending = self.all_nodes().difference(completed).bits();
        while pending != 0 {
            let v = pending.trailing_zeros() as usize;
            pending &= pending - 1;
            if self.preds[v].is_subset(completed) {
                ready |= 1u64 << v;
            }
        }
        NodeSet(ready)
    }

    /// Nodes not yet completed whose predecessors have all completed.
    pub fn ready_set(&self, completed: NodeSet) -> Result<NodeSet> {
        if !completed.is_subset(self.all_nodes()) {
            let bad: Vec<usize> = completed.difference(self.all_nodes()).iter().collect();
            return Err(Error::Input(format!("unknown node(s) in completed set: {bad:?}")));
        }
        Ok(self.ready_nodes(completed))
    }

    /// Kahn's algorithm; `None` when the (in-range) edges contain a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut done = NodeSet::EMPTY;
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let ready = self.ready_nodes(done);
            if ready.is_empty() {
                return None;
            }
            order.extend(ready.iter());
            done = done.union(ready);
        }
        Some(order)
    }

    /// Nodes that cannot be scheduled because they lie on or behind a cycle.
    pub(crate) fn blocked_nodes(&self) -> NodeSet {
        let mut done = NodeSet::EMPTY;
        loop {
            let ready = self.ready_nodes(done);
            if ready.is_empty() {
                return self.all_nodes().difference(done);
            }
            done = done.union(ready);
        }
    }
}
