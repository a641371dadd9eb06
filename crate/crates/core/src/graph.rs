//! DAGs as parent-set arrays: `parents[v]` is the set of parents of `v`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bits::{self, VarSet};
use crate::error::{Error, Result};

/// Topological order (parents first), or `None` if the graph has a cycle.
pub fn topological_order(parents: &[VarSet]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut placed: VarSet = 0;
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let ready = (0..n).find(|&v| !bits::contains(placed, v) && parents[v] & !placed == 0)?;
        placed |= bits::singleton(ready);
        order.push(ready);
    }
    Some(order)
}

pub fn is_acyclic(parents: &[VarSet]) -> bool {
    topological_order(parents).is_some()
}

/// `children[v]` for every node.
pub fn children(parents: &[VarSet]) -> Vec<VarSet> {
    let mut out = vec![0; parents.len()];
    for (v, &pa) in parents.iter().enumerate() {
        for p in bits::members(pa) {
            out[p] |= bits::singleton(v);
        }
    }
    out
}

/// Nodes reachable from `from` by a directed path of length at least one.
pub fn descendants(parents: &[VarSet], from: usize) -> VarSet {
    let kids = children(parents);
    let mut seen: VarSet = 0;
    let mut frontier = kids[from];
    while frontier != 0 {
        let v = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        if !bits::contains(seen, v) {
            seen |= bits::singleton(v);
            frontier |= kids[v] & !seen;
        }
    }
    seen
}

/// Unordered adjacent pairs `(min, max)`.
pub fn skeleton(parents: &[VarSet]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (v, &pa) in parents.iter().enumerate() {
        for p in bits::members(pa) {
            out.insert((p.min(v), p.max(v)));
        }
    }
    out
}

/// Colliders `a → c ← b` with `a < b` non-adjacent, as `(a, c, b)`.
pub fn v_structures(parents: &[VarSet]) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for (c, &pa) in parents.iter().enumerate() {
        let ps: Vec<usize> = bits::members(pa).collect();
        for (i, &a) in ps.iter().enumerate() {
            for &b in &ps[i + 1..] {
                if !bits::contains(parents[a], b) && !bits::contains(parents[b], a) {
                    out.insert((a, c, b));
                }
            }
        }
    }
    out
}

/// Parents, children and co-parents of `u`.
pub fn markov_blanket(parents: &[VarSet], u: usize) -> VarSet {
    let kids = children(parents);
    let mut mb = parents[u] | kids[u];
    for c in bits::members(kids[u]) {
        mb |= parents[c];
    }
    mb & !bits::singleton(u)
}

/// Lexicographic order over the parents array; the canonical tie-break for graphs.
pub fn canonical_cmp(a: &[VarSet], b: &[VarSet]) -> std::cmp::Ordering {
    a.cmp(b)
}

/// Graphviz rendering with variable names as node labels.
pub fn to_dot(parents: &[VarSet], names: &[String], title: &str) -> String {
    let mut out = format!("digraph \"{}\" {{\n", title.replace('"', "\\\""));
    for name in names {
        out.push_str(&format!("  \"{}\";\n", name.replace('"', "\\\"")));
    }
    for (v, &pa) in parents.iter().enumerate() {
        for p in bits::members(pa) {
            out.push_str(&format!(
                "  \"{}\" -> \"{}\";\n",
                names[p].replace('"', "\\\""),
                names[v].replace('"', "\\\"")
            ));
        }
    }
    out.push_str("}\n");
    out
}

/// A structural hypothesis evaluated as an indicator on a DAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    /// `u → v`.
    DirectedEdge { u: usize, v: usize },
    /// `u → v` or `v → u`.
    Adjacency { u: usize, v: usize },
    /// A directed path from `u` to `v`.
    DirectedPath { u: usize, v: usize },
    /// `v` is a parent, child or co-parent of `u`.
    MarkovBlanket { u: usize, v: usize },
}

impl Feature {
    pub fn endpoints(&self) -> (usize, usize) {
        match *self {
            Feature::DirectedEdge { u, v }
            | Feature::Adjacency { u, v }
            | Feature::DirectedPath { u, v }
            | Feature::MarkovBlanket { u, v } => (u, v),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Feature::DirectedEdge { .. } => "directed_edge",
            Feature::Adjacency { .. } => "adjacency",
            Feature::DirectedPath { .. } => "directed_path",
            Feature::MarkovBlanket { .. } => "markov_blanket",
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let (u, v) = self.endpoints();
        if u >= n || v >= n {
            return Err(Error::contract(format!(
                "feature {self} references a variable outside 0..{n}"
            )));
        }
        if u == v {
            return Err(Error::contract(format!(
                "feature {self} has identical endpoints"
            )));
        }
        Ok(())
    }

    pub fn holds(&self, parents: &[VarSet]) -> bool {
        match *self {
            Feature::DirectedEdge { u, v } => bits::contains(parents[v], u),
            Feature::Adjacency { u, v } => {
                bits::contains(parents[v], u) || bits::contains(parents[u], v)
            }
            Feature::DirectedPath { u, v } => bits::contains(descendants(parents, u), v),
            Feature::MarkovBlanket { u, v } => bits::contains(markov_blanket(parents, u), v),
        }
    }

    /// Every directed edge `u → v`, `u ≠ v`.
    pub fn all_directed_edges(n: usize) -> Vec<Feature> {
        (0..n)
            .flat_map(|u| {
                (0..n)
                    .filter(move |&v| v != u)
                    .map(move |v| Feature::DirectedEdge { u, v })
            })
            .collect()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Feature::DirectedEdge { .. } => "edge",
            Feature::Adjacency { .. } => "adj",
            Feature::DirectedPath { .. } => "path",
            Feature::MarkovBlanket { .. } => "mb",
        };
        let (u, v) = self.endpoints();
        write!(f, "{tag}:{u}:{v}")
    }
}

/// Parses `edge:U:V`, `adj:U:V`, `path:U:V` or `mb:U:V`.
impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Validation(format!("cannot parse feature '{s}'; expected KIND:U:V"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let u = parts[1].parse().map_err(|_| bad())?;
        let v = parts[2].parse().map_err(|_| bad())?;
        match parts[0] {
            "edge" | "directed_edge" => Ok(Feature::DirectedEdge { u, v }),
            "adj" | "adjacency" => Ok(Feature::Adjacency { u, v }),
            "path" | "directed_path" => Ok(Feature::DirectedPath { u, v }),
            "mb" | "markov_blanket" => Ok(Feature::MarkovBlanket { u, v }),
            _ => Err(bad()),
        }
    }
}
