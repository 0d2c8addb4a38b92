//! Directed acyclic graphs and the moralization algorithm for reading
//! conditional independence: restrict to the ancestral graph of the involved
//! nodes, marry co-parents and drop directions, delete the conditioning set,
//! and test connectivity.

use crate::error::{Error, Result};
use crate::sim::Scheme;
use std::collections::{HashMap, VecDeque};
use std::fmt;

/// A DAG over string-labeled nodes. Acyclicity is checked on construction.
#[derive(Debug, Clone)]
pub struct Dag {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let names: Vec<String> = nodes.iter().map(|n| n.as_ref().to_string()).collect();
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node `{name}`")));
            }
        }
        let mut parents = vec![Vec::new(); names.len()];
        let mut children = vec![Vec::new(); names.len()];
        for (from, to) in edges {
            let f = *index
                .get(from.as_ref())
                .ok_or_else(|| Error::UnknownNode(from.as_ref().to_string()))?;
            let t = *index
                .get(to.as_ref())
                .ok_or_else(|| Error::UnknownNode(to.as_ref().to_string()))?;
            if !children[f].contains(&t) {
                children[f].push(t);
                parents[t].push(f);
            }
        }
        let dag = Self { names, index, parents, children };
        if dag.has_cycle() {
            return Err(Error::Cyclic);
        }
        Ok(dag)
    }

    /// Parse the one-edge-per-line text format `parent -> child`. Lines that
    /// are empty or start with `#` are skipped; isolated nodes may be
    /// declared by a line holding just the node name.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes: Vec<String> = Vec::new();
        let mut edges: Vec<(String, String)> = Vec::new();
        let push_node = |nodes: &mut Vec<String>, name: &str| {
            if !nodes.iter().any(|n| n == name) {
                nodes.push(name.to_string());
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once("->") {
                Some((from, to)) => {
                    let from = from.trim();
                    let to = to.trim();
                    if from.is_empty() || to.is_empty() {
                        return Err(Error::config(
                            format!("line {}", lineno + 1),
                            "expected `parent -> child`",
                        ));
                    }
                    push_node(&mut nodes, from);
                    push_node(&mut nodes, to);
                    edges.push((from.to_string(), to.to_string()));
                }
                None => push_node(&mut nodes, line),
            }
        }
        Dag::new(&nodes, &edges)
    }

    fn has_cycle(&self) -> bool {
        let n = self.names.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        seen != n
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (self.index.get(from), self.index.get(to)) {
            (Some(&f), Some(&t)) => self.children[f].contains(&t),
            _ => false,
        }
    }

    fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index
                    .get(n.as_ref())
                    .copied()
                    .ok_or_else(|| Error::UnknownNode(n.as_ref().to_string()))
            })
            .collect()
    }

    /// The induced subgraph on `subset` and all of its ancestors.
    pub fn ancestral_graph<S: AsRef<str>>(&self, subset: &[S]) -> Result<Dag> {
        let seeds = self.resolve(subset)?;
        let mut keep = vec![false; self.names.len()];
        let mut stack = seeds;
        while let Some(v) = stack.pop() {
            if keep[v] {
                continue;
            }
            keep[v] = true;
            stack.extend(self.parents[v].iter().copied());
        }
        let nodes: Vec<String> = self
            .names
            .iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(_, n)| n.clone())
            .collect();
        let mut edges = Vec::new();
        for (v, childs) in self.children.iter().enumerate() {
            if !keep[v] {
                continue;
            }
            for &c in childs {
                if keep[c] {
                    edges.push((self.names[v].clone(), self.names[c].clone()));
                }
            }
        }
        Dag::new(&nodes, &edges)
    }

    /// Moralize: connect every pair of co-parents, then drop directions.
    pub fn moralize(&self) -> UndirectedGraph {
        let n = self.names.len();
        let mut adj = vec![Vec::new(); n];
        let connect = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        };
        for v in 0..n {
            for &p in &self.parents[v] {
                connect(&mut adj, p, v);
            }
            for (i, &p) in self.parents[v].iter().enumerate() {
                for &q in &self.parents[v][i + 1..] {
                    connect(&mut adj, p, q);
                }
            }
        }
        UndirectedGraph { names: self.names.clone(), index: self.index.clone(), adj }
    }

    /// The moralization test for conditional independence of the node sets
    /// `a` and `b` given `c`: true when no path connects `a` to `b` after
    /// taking the ancestral graph of `a + b + c`, moralizing, and deleting
    /// `c`. The sets must be disjoint.
    pub fn conditionally_independent<S: AsRef<str>>(&self, a: &[S], b: &[S], c: &[S]) -> Result<bool> {
        let ia = self.resolve(a)?;
        let ib = self.resolve(b)?;
        let ic = self.resolve(c)?;
        for &x in &ia {
            if ib.contains(&x) || ic.contains(&x) {
                return Err(Error::OverlappingSets(self.names[x].clone()));
            }
        }
        for &x in &ib {
            if ic.contains(&x) {
                return Err(Error::OverlappingSets(self.names[x].clone()));
            }
        }

        let involved: Vec<&str> = a
            .iter()
            .map(AsRef::as_ref)
            .chain(b.iter().map(AsRef::as_ref))
            .chain(c.iter().map(AsRef::as_ref))
            .collect();
        let ancestral = self.ancestral_graph(&involved)?;
        let moral = ancestral.moralize();
        let blocked: Vec<&str> = c.iter().map(AsRef::as_ref).collect();
        let from: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
        let to: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
        Ok(!moral.connects(&from, &to, &blocked)?)
    }

    /// The dependence graph of a scheme over `trials` time points: nodes
    /// `S1..ST` and `Y1..YT`, plus `alpha` for the random-effect schemes.
    /// Every scheme has `St -> Yt`; adaptive schemes add `S(t-1) -> St` and
    /// `Y(t-1) -> St`; random-effect schemes add `alpha -> Yt`.
    pub fn scheme_dag(scheme: Scheme, trials: usize) -> Dag {
        let mut nodes: Vec<String> = Vec::new();
        for t in 1..=trials {
            nodes.push(format!("S{t}"));
            nodes.push(format!("Y{t}"));
        }
        if scheme.has_random_effect() {
            nodes.push("alpha".into());
        }
        let mut edges = Vec::new();
        for t in 1..=trials {
            edges.push((format!("S{t}"), format!("Y{t}")));
            if scheme.is_adaptive() && t >= 2 {
                edges.push((format!("S{}", t - 1), format!("S{t}")));
                edges.push((format!("Y{}", t - 1), format!("S{t}")));
            }
            if scheme.has_random_effect() {
                edges.push(("alpha".into(), format!("Y{t}")));
            }
        }
        Dag::new(&nodes, &edges).expect("scheme graphs are acyclic")
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (v, childs) in self.children.iter().enumerate() {
            if childs.is_empty() && self.parents[v].is_empty() {
                writeln!(f, "{}", self.names[v])?;
            }
            for &c in childs {
                writeln!(f, "{} -> {}", self.names[v], self.names[c])?;
            }
        }
        Ok(())
    }
}

/// An undirected graph produced by moralization.
#[derive(Debug, Clone)]
pub struct UndirectedGraph {
    names: Vec<String>,
    index: HashMap<String, usize>,
    adj: Vec<Vec<usize>>,
}

impl UndirectedGraph {
    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&x), Some(&y)) => self.adj[x].contains(&y),
            _ => false,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Breadth-first connectivity from `from` to `to` avoiding `blocked`.
    pub fn connects(&self, from: &[&str], to: &[&str], blocked: &[&str]) -> Result<bool> {
        let resolve = |names: &[&str]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| self.index.get(*n).copied().ok_or_else(|| Error::UnknownNode(n.to_string())))
                .collect()
        };
        let from = resolve(from)?;
        let to = resolve(to)?;
        let blocked = resolve(blocked)?;
        let mut banned = vec![false; self.names.len()];
        for &b in &blocked {
            banned[b] = true;
        }
        let mut target = vec![false; self.names.len()];
        for &t in &to {
            if !banned[t] {
                target[t] = true;
            }
        }
        let mut seen = vec![false; self.names.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in &from {
            if !banned[s] && !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            if target[v] {
                return Ok(true);
            }
            for &w in &self.adj[v] {
                if !banned[w] && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        Ok(false)
    }
}

/// A parsed conditional-independence query `A | B | C` with comma-separated
/// node lists; `C` may be empty. A trailing `?` is ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndependenceQuery {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub given: Vec<String>,
}

impl IndependenceQuery {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim().trim_end_matches('?').trim();
        let parts: Vec<&str> = text.split('|').collect();
        if parts.len() != 2 && parts.len() != 3 {
            return Err(Error::invalid(
                "query must have the form `A | B | C` (C may be empty or omitted)",
            ));
        }
        let split = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        let a = split(parts[0]);
        let b = split(parts[1]);
        let given = if parts.len() == 3 { split(parts[2]) } else { Vec::new() };
        if a.is_empty() || b.is_empty() {
            return Err(Error::invalid("both sides of the query need at least one node"));
        }
        Ok(Self { a, b, given })
    }

    pub fn evaluate(&self, dag: &Dag) -> Result<bool> {
        dag.conditionally_independent(&self.a, &self.b, &self.given)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_cycles_and_unknown_nodes() {
        assert!(matches!(
            Dag::new(&["a", "b"], &[("a", "b"), ("b", "a")]),
            Err(Error::Cyclic)
        ));
        assert!(matches!(Dag::new(&["a"], &[("a", "z")]), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn ancestral_graph_examples() {
        let chain = Dag::new(&["a", "b", "c"], &[("a", "b"), ("b", "c")]).unwrap();
        let all = chain.ancestral_graph(&["a", "b", "c"]).unwrap();
        assert_eq!(all.node_count(), 3);
        assert_eq!(all.edge_count(), 2);
        let from_c = chain.ancestral_graph(&["c"]).unwrap();
        assert_eq!(from_c.node_count(), 3, "ancestors of the chain tail are the whole chain");
        let from_a = chain.ancestral_graph(&["a"]).unwrap();
        assert_eq!(from_a.node_count(), 1);
    }

    #[test]
    fn collider_marriage() {
        let collider = Dag::new(&["a", "b", "c"], &[("a", "c"), ("b", "c")]).unwrap();
        let moral = collider.moralize();
        assert!(moral.has_edge("a", "b"), "co-parents must be married");
        assert!(moral.has_edge("a", "c") && moral.has_edge("b", "c"));
        assert_eq!(moral.edge_count(), 3);

        let edgeless = Dag::new(&["a", "b"], &[]).unwrap();
        assert_eq!(edgeless.moralize().edge_count(), 0);
    }

    #[test]
    fn scheme_graph_shapes() {
        let ud = Dag::scheme_dag(Scheme::Ud, 3);
        assert_eq!(ud.node_count(), 6);
        assert_eq!(ud.edge_count(), 7);
        let fd = Dag::scheme_dag(Scheme::Fd, 3);
        assert_eq!(fd.node_count(), 6);
        assert_eq!(fd.edge_count(), 3);
        let udr = Dag::scheme_dag(Scheme::UdR, 3);
        assert_eq!(udr.node_count(), 7);
        assert_eq!(udr.edge_count(), 10);
        let fdr = Dag::scheme_dag(Scheme::FdR, 3);
        assert_eq!(fdr.node_count(), 7);
        assert_eq!(fdr.edge_count(), 6);
    }

    #[test]
    fn window_ancestral_graph_drops_future() {
        let udr = Dag::scheme_dag(Scheme::UdR, 3);
        let window = udr.ancestral_graph(&["Y2", "Y1", "S2", "S1", "alpha"]).unwrap();
        assert_eq!(window.node_count(), 5);
        assert!(!window.contains("Y3") && !window.contains("S3"));
        assert!(window.has_edge("S1", "S2") && window.has_edge("Y1", "S2"));
    }

    #[test]
    fn moral_scheme_graph_gains_alpha_intensity_edges() {
        // Marrying the parents of each response connects the effect to every
        // intensity node.
        let udr = Dag::scheme_dag(Scheme::UdR, 3);
        let moral = udr.moralize();
        for t in 1..=3 {
            assert!(moral.has_edge("alpha", &format!("S{t}")));
        }
    }

    #[test]
    fn updown_response_screening() {
        let ud = Dag::scheme_dag(Scheme::Ud, 5);
        let independent = ud
            .conditionally_independent(&["Y3"], &["Y1", "Y2", "S1", "S2"], &["S3"])
            .unwrap();
        assert!(independent);
        let dependent = ud
            .conditionally_independent(&["Y3"], &["Y1", "Y2", "S1", "S2"], &[] as &[&str])
            .unwrap();
        assert!(!dependent);
    }

    #[test]
    fn updown_effect_screening() {
        let udr = Dag::scheme_dag(Scheme::UdR, 5);
        assert!(udr
            .conditionally_independent(&["S3"], &["alpha"], &["Y1", "Y2", "S1", "S2"])
            .unwrap());
        assert!(!udr
            .conditionally_independent(&["S3"], &["alpha"], &[] as &[&str])
            .unwrap());
        // The worked moralization example: responses screened off by the
        // current intensity and the effect.
        assert!(udr
            .conditionally_independent(&["Y3"], &["Y1", "Y2", "S1", "S2"], &["S3", "alpha"])
            .unwrap());
    }

    #[test]
    fn symmetry_and_overlap() {
        let udr = Dag::scheme_dag(Scheme::UdR, 5);
        let ab = udr
            .conditionally_independent(&["S3"], &["alpha"], &["Y1", "Y2", "S1", "S2"])
            .unwrap();
        let ba = udr
            .conditionally_independent(&["alpha"], &["S3"], &["Y1", "Y2", "S1", "S2"])
            .unwrap();
        assert_eq!(ab, ba);
        assert!(matches!(
            udr.conditionally_independent(&["S3"], &["S3"], &[] as &[&str]),
            Err(Error::OverlappingSets(_))
        ));
    }

    #[test]
    fn fd_pairwise_independence() {
        let fd = Dag::scheme_dag(Scheme::Fd, 4);
        for t in 1..=4 {
            for u in 1..=4 {
                if t == u {
                    continue;
                }
                assert!(fd
                    .conditionally_independent(&[format!("Y{t}")], &[format!("Y{u}")], &[] as &[String])
                    .unwrap());
            }
        }
        let fdr = Dag::scheme_dag(Scheme::FdR, 4);
        assert!(!fdr
            .conditionally_independent(&["Y1"], &["Y2"], &[] as &[&str])
            .unwrap());
        assert!(fdr
            .conditionally_independent(&["Y1"], &["Y2"], &["alpha", "S1", "S2"])
            .unwrap());
    }

    #[test]
    fn parse_and_display_round_trip() {
        let text = "S1 -> Y1\nS1 -> S2\nY1 -> S2\nS2 -> Y2\nlonely\n";
        let dag = Dag::parse(text).unwrap();
        assert_eq!(dag.node_count(), 5);
        assert_eq!(dag.edge_count(), 4);
        assert!(dag.contains("lonely"));
        let reparsed = Dag::parse(&dag.to_string()).unwrap();
        assert_eq!(reparsed.node_count(), dag.node_count());
        assert_eq!(reparsed.edge_count(), dag.edge_count());
    }

    #[test]
    fn query_parsing() {
        let q = IndependenceQuery::parse("Y3 | Y1,Y2,S1,S2 | S3 ?").unwrap();
        assert_eq!(q.a, vec!["Y3"]);
        assert_eq!(q.b, vec!["Y1", "Y2", "S1", "S2"]);
        assert_eq!(q.given, vec!["S3"]);
        let q = IndependenceQuery::parse("S3 | alpha").unwrap();
        assert!(q.given.is_empty());
        assert!(IndependenceQuery::parse("Y1").is_err());
        assert!(IndependenceQuery::parse(" | Y1 | ").is_err());
    }

    #[test]
    fn statements_stable_across_horizon() {
        for trials in [5, 20, 100] {
            let ud = Dag::scheme_dag(Scheme::Ud, trials);
            assert!(ud
                .conditionally_independent(&["Y3"], &["Y1", "Y2", "S1", "S2"], &["S3"])
                .unwrap());
            let udr = Dag::scheme_dag(Scheme::UdR, trials);
            assert!(udr
                .conditionally_independent(&["S3"], &["alpha"], &["Y1", "Y2", "S1", "S2"])
                .unwrap());
        }
    }
}
