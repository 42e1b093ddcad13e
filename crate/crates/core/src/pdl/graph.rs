//! Precondition graph compiled from node declarations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::document::PdlDocument;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("precondition cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
}

/// Nodes and their precondition sets. An edge `n -> p` means `p` must have
/// executed before `n` is accessible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accessibility {
    pub accessible: BTreeSet<String>,
    /// Blocked node -> its unmet preconditions.
    pub blocked: BTreeMap<String, BTreeSet<String>>,
}

impl DependencyGraph {
    /// Builds a graph from explicit edges. Precondition names that are not
    /// listed in `nodes` are reported as unknown.
    pub fn from_edges<I, S>(nodes: I, edges: &[(S, S)]) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let nodes: BTreeSet<String> = nodes.into_iter().map(|s| s.as_ref().to_string()).collect();
        let mut g = DependencyGraph {
            edges: nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect(),
            nodes,
        };
        for (from, to) in edges {
            let (from, to) = (from.as_ref(), to.as_ref());
            for n in [from, to] {
                if !g.nodes.contains(n) {
                    return Err(GraphError::UnknownNode(n.to_string()));
                }
            }
            g.edges.get_mut(from).expect("present").insert(to.to_string());
        }
        if let Some(cycle) = g.find_cycle() {
            return Err(GraphError::Cycle(cycle));
        }
        Ok(g)
    }

    pub fn preconditions(&self, node: &str) -> Option<&BTreeSet<String>> {
        self.edges.get(node)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }

    /// Returns one cycle (closed, first node repeated at the end) if any.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = self.nodes.iter().map(|n| (n.as_str(), Mark::New)).collect();
        for root in &self.nodes {
            if marks[root.as_str()] != Mark::New {
                continue;
            }
            // iterative DFS with an explicit path
            let mut stack: Vec<(&str, Vec<&str>)> = Vec::new();
            let succ = |n: &str| -> Vec<&str> {
                self.edges
                    .get(n)
                    .map(|s| s.iter().map(String::as_str).collect())
                    .unwrap_or_default()
            };
            marks.insert(root, Mark::Active);
            stack.push((root.as_str(), succ(root)));
            while let Some((node, pending)) = stack.last_mut() {
                let node = *node;
                if let Some(next) = pending.pop() {
                    match marks.get(next).copied().unwrap_or(Mark::Done) {
                        Mark::New => {
                            marks.insert(next, Mark::Active);
                            let s = succ(next);
                            stack.push((next, s));
                        }
                        Mark::Active => {
                            let start = stack.iter().position(|(n, _)| *n == next).expect("on stack");
                            let mut cycle: Vec<String> = stack[start..].iter().map(|(n, _)| n.to_string()).collect();
                            cycle.push(next.to_string());
                            return Some(cycle);
                        }
                        Mark::Done => {}
                    }
                } else {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
        None
    }

    /// Splits the nodes into those whose preconditions are all in
    /// `executed` and those still blocked.
    pub fn accessible_nodes<S: AsRef<str>>(&self, executed: &[S]) -> Result<Accessibility, GraphError> {
        let done: BTreeSet<&str> = executed.iter().map(AsRef::as_ref).collect();
        if let Some(unknown) = done.iter().find(|n| !self.nodes.contains(**n)) {
            return Err(GraphError::UnknownNode(unknown.to_string()));
        }
        let mut out = Accessibility::default();
        for node in &self.nodes {
            let unmet: BTreeSet<String> = self
                .edges
                .get(node)
                .into_iter()
                .flatten()
                .filter(|p| !done.contains(p.as_str()))
                .cloned()
                .collect();
            if unmet.is_empty() {
                out.accessible.insert(node.clone());
            } else {
                out.blocked.insert(node.clone(), unmet);
            }
        }
        Ok(out)
    }

    /// Kahn's algorithm; among ready nodes the lexicographically smallest
    /// goes first.
    pub fn topological_order(&self) -> Result<Vec<String>, GraphError> {
        let mut remaining: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .map(|n| (n.as_str(), self.edges.get(n).map_or(0, BTreeSet::len)))
            .collect();
        let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (n, pres) in &self.edges {
            for p in pres {
                dependents.entry(p.as_str()).or_default().push(n.as_str());
            }
        }
        let mut ready: BTreeSet<&str> = remaining.iter().filter(|(_, c)| **c == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            for d in dependents.get(n).into_iter().flatten() {
                let c = remaining.get_mut(d).expect("known node");
                *c -= 1;
                if *c == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(GraphError::Cycle(self.find_cycle().unwrap_or_default()));
        }
        Ok(order)
    }
}

/// One graph node per declared node; edges are exactly the precondition lists.
pub fn build_dependency_graph(doc: &PdlDocument) -> Result<DependencyGraph, GraphError> {
    let names: Vec<&str> = doc.nodes().map(|n| n.name.as_str()).collect();
    let edges: Vec<(&str, &str)> = doc
        .nodes()
        .flat_map(|n| n.preconditions.iter().map(move |p| (n.name.as_str(), p.as_str())))
        .collect();
    DependencyGraph::from_edges(names, &edges)
}
