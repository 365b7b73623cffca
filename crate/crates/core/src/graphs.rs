//! Colored graphs, non-conflict partitions and resource counts.
//!
//! A color class is split into subsets whose members pairwise share no
//! neighbor. Each subset costs one eight-group block of the graph test, so
//! the group count is `k + 8 * sum_i l_i` for `k` colors with `l_i` subsets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAPH_FORMAT: u32 = 1;
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSource {
    Supplied,
    Generator,
    Greedy,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    ColoringLength {
        expected: usize,
        found: usize,
    },
    VertexOutOfRange {
        vertex: usize,
    },
    SelfLoop {
        vertex: usize,
    },
    DuplicateEdge {
        u: usize,
        v: usize,
    },
    ImproperColoring {
        u: usize,
        v: usize,
        color: usize,
    },
    UnusedColor {
        color: usize,
    },
    MissingPartition {
        color: usize,
    },
    EmptySubset {
        color: usize,
        subset: usize,
    },
    WrongColor {
        vertex: usize,
        color: usize,
        listed_under: usize,
    },
    Uncovered {
        vertex: usize,
        color: usize,
    },
    CoveredTwice {
        vertex: usize,
    },
    Conflict {
        color: usize,
        subset: usize,
        a: usize,
        b: usize,
        common: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColoredGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    coloring: Vec<usize>,
    partitions: Vec<Vec<Vec<usize>>>,
    source: PartitionSource,
    adjacency: Vec<BTreeSet<usize>>,
}

impl ColoredGraph {
    /// Builds the graph without partitions; edges are normalized to `u < v`
    /// and sorted. Structural problems surface through [`Self::validate`].
    pub fn new(n: usize, edges: &[(usize, usize)], coloring: Vec<usize>) -> Self {
        let mut e: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        e.sort_unstable();
        let mut adjacency = vec![BTreeSet::new(); n];
        for &(u, v) in &e {
            if u < n && v < n && u != v {
                adjacency[u].insert(v);
                adjacency[v].insert(u);
            }
        }
        let k = coloring.iter().max().map_or(0, |m| m + 1);
        Self {
            n,
            edges: e,
            coloring,
            partitions: vec![Vec::new(); k],
            source: PartitionSource::Supplied,
            adjacency,
        }
    }

    pub fn with_partitions(
        mut self,
        partitions: Vec<Vec<Vec<usize>>>,
        source: PartitionSource,
    ) -> Self {
        self.partitions = partitions;
        self.source = source;
        self
    }

    /// Recomputes every color's partition with the given strategy.
    pub fn partitioned_by(self, strategy: &dyn PartitionStrategy) -> Result<Self> {
        let mut parts = Vec::with_capacity(self.num_colors());
        for color in 0..self.num_colors() {
            parts.push(strategy.partition(&self, color)?);
        }
        let source = strategy.source();
        Ok(self.with_partitions(parts, source))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coloring(&self) -> &[usize] {
        &self.coloring
    }

    pub fn color(&self, v: usize) -> usize {
        self.coloring[v]
    }

    pub fn num_colors(&self) -> usize {
        self.coloring.iter().max().map_or(0, |m| m + 1)
    }

    pub fn partitions(&self) -> &[Vec<Vec<usize>>] {
        &self.partitions
    }

    pub fn partition_source(&self) -> &PartitionSource {
        &self.source
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adjacency[v]
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].contains(&v)
    }

    pub fn color_class(&self, color: usize) -> Vec<usize> {
        (0..self.n).filter(|&v| self.coloring[v] == color).collect()
    }

    /// `l_i` for every color.
    pub fn subset_counts(&self) -> Vec<usize> {
        self.partitions.iter().map(Vec::len).collect()
    }

    /// `k + 8 * sum_i l_i`.
    pub fn group_count(&self) -> usize {
        group_count(&self.subset_counts())
    }

    pub fn common_neighbor(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .intersection(&self.adjacency[b])
            .next()
            .copied()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.coloring.len() != self.n {
            out.push(Violation::ColoringLength {
                expected: self.n,
                found: self.coloring.len(),
            });
            return out;
        }
        let mut seen = BTreeSet::new();
        for &(u, v) in &self.edges {
            if u >= self.n || v >= self.n {
                out.push(Violation::VertexOutOfRange { vertex: u.max(v) });
                continue;
            }
            if u == v {
                out.push(Violation::SelfLoop { vertex: u });
                continue;
            }
            if !seen.insert((u, v)) {
                out.push(Violation::DuplicateEdge { u, v });
            }
            if self.coloring[u] == self.coloring[v] {
                out.push(Violation::ImproperColoring {
                    u,
                    v,
                    color: self.coloring[u],
                });
            }
        }
        let k = self.num_colors();
        for color in 0..k {
            if !self.coloring.contains(&color) {
                out.push(Violation::UnusedColor { color });
            }
        }
        if self.partitions.len() < k {
            for color in self.partitions.len()..k {
                out.push(Violation::MissingPartition { color });
            }
        }
        let mut covered = vec![0usize; self.n];
        for (color, subsets) in self.partitions.iter().enumerate() {
            for (si, subset) in subsets.iter().enumerate() {
                if subset.is_empty() {
                    out.push(Violation::EmptySubset { color, subset: si });
                }
                for &v in subset {
                    if v >= self.n {
                        out.push(Violation::VertexOutOfRange { vertex: v });
                        continue;
                    }
                    covered[v] += 1;
                    if self.coloring[v] != color {
                        out.push(Violation::WrongColor {
                            vertex: v,
                            color: self.coloring[v],
                            listed_under: color,
                        });
                    }
                }
                for (x, &a) in subset.iter().enumerate() {
                    for &b in &subset[x + 1..] {
                        if a >= self.n || b >= self.n {
                            continue;
                        }
                        if let Some(common) = self.common_neighbor(a, b) {
                            out.push(Violation::Conflict {
                                color,
                                subset: si,
                                a,
                                b,
                                common,
                            });
                        }
                    }
                }
            }
        }
        for v in 0..self.n {
            match covered[v] {
                0 if self.coloring[v] < self.partitions.len() => out.push(Violation::Uncovered {
                    vertex: v,
                    color: self.coloring[v],
                }),
                0 | 1 => {}
                _ => out.push(Violation::CoveredTwice { vertex: v }),
            }
        }
        out
    }

    pub fn checked(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidGraph(
                serde_json::to_string(&v).unwrap_or_else(|_| format!("{v:?}")),
            ))
        }
    }

    /// Partner `j_a` for every `a` in a non-conflict subset.
    ///
    /// Candidates are tried in increasing index order; a partner may not be
    /// adjacent to an already chosen partner, since such an edge would survive
    /// the Z reduction and leave the pairs entangled with each other. The
    /// search backtracks and returns the lexicographically smallest choice.
    pub fn choose_partners(&self, subset: &[usize]) -> Result<Vec<usize>> {
        let mut chosen: Vec<usize> = Vec::with_capacity(subset.len());
        if self.assign_partners(subset, &mut chosen) {
            Ok(chosen)
        } else {
            Err(Error::InvalidGraph(format!(
                "no partner assignment for subset {subset:?} leaves the pairs disjoint"
            )))
        }
    }

    fn assign_partners(&self, subset: &[usize], chosen: &mut Vec<usize>) -> bool {
        let k = chosen.len();
        if k == subset.len() {
            return true;
        }
        let a = subset[k];
        for &j in &self.adjacency[a] {
            if subset.contains(&j) || chosen.contains(&j) {
                continue;
            }
            if chosen.iter().any(|&p| self.adjacent(p, j)) {
                continue;
            }
            if subset
                .iter()
                .enumerate()
                .any(|(x, &b)| x != k && self.adjacent(b, j))
            {
                continue;
            }
            chosen.push(j);
            if self.assign_partners(subset, chosen) {
                return true;
            }
            chosen.pop();
        }
        false
    }

    pub fn to_file(&self) -> GraphFile {
        let partitions = self
            .partitions
            .iter()
            .enumerate()
            .map(|(c, p)| (c.to_string(), p.clone()))
            .collect();
        GraphFile {
            format: GRAPH_FORMAT,
            n: self.n,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            coloring: self.coloring.clone(),
            partitions: Some(partitions),
        }
    }

    pub fn from_file(f: &GraphFile) -> Result<Self> {
        if f.format != GRAPH_FORMAT {
            return Err(Error::InvalidGraph(format!(
                "unsupported graph format {}",
                f.format
            )));
        }
        let edges: Vec<(usize, usize)> = f.edges.iter().map(|e| (e[0], e[1])).collect();
        let g = ColoredGraph::new(f.n, &edges, f.coloring.clone());
        match &f.partitions {
            Some(p) => {
                let k = g.num_colors();
                let mut parts = vec![Vec::new(); k];
                for (key, subsets) in p {
                    let color: usize = key.parse().map_err(|_| {
                        Error::InvalidGraph(format!("partition key `{key}` is not a color"))
                    })?;
                    if color >= k {
                        return Err(Error::InvalidGraph(format!(
                            "partition for unknown color {color}"
                        )));
                    }
                    parts[color] = subsets.clone();
                }
                Ok(g.with_partitions(parts, PartitionSource::Supplied))
            }
            None => g.partitioned_by(&Greedy),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let f: GraphFile = serde_json::from_str(&text)?;
        Self::from_file(&f)
    }
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub format: u32,
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub coloring: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<BTreeMap<String, Vec<Vec<usize>>>>,
}

pub fn group_count(subset_counts: &[usize]) -> usize {
    subset_counts.len() + 8 * subset_counts.iter().sum::<usize>()
}

/// A way of splitting one color class into non-conflict subsets.
pub trait PartitionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn source(&self) -> PartitionSource;

    fn partition(&self, graph: &ColoredGraph, color: usize) -> Result<Vec<Vec<usize>>>;
}

/// First-fit over vertices by decreasing degree, ties by index.
pub struct Greedy;

impl PartitionStrategy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn source(&self) -> PartitionSource {
        PartitionSource::Greedy
    }

    fn partition(&self, g: &ColoredGraph, color: usize) -> Result<Vec<Vec<usize>>> {
        let mut class = g.color_class(color);
        class.sort_by(|&a, &b| {
            g.neighbors(b)
                .len()
                .cmp(&g.neighbors(a).len())
                .then(a.cmp(&b))
        });
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        for v in class {
            match subsets
                .iter_mut()
                .find(|s| s.iter().all(|&u| g.common_neighbor(u, v).is_none()))
            {
                Some(s) => s.push(v),
                None => subsets.push(vec![v]),
            }
        }
        for s in &mut subsets {
            s.sort_unstable();
        }
        Ok(subsets)
    }
}

/// Minimum number of subsets by exhaustive search over set partitions.
pub struct Exhaustive;

impl PartitionStrategy for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn source(&self) -> PartitionSource {
        PartitionSource::Exhaustive
    }

    fn partition(&self, g: &ColoredGraph, color: usize) -> Result<Vec<Vec<usize>>> {
        let class = g.color_class(color);
        if class.len() > EXHAUSTIVE_LIMIT {
            return Err(Error::param(
                "partition",
                format!(
                    "exhaustive search limited to {EXHAUSTIVE_LIMIT} vertices per color, got {}",
                    class.len()
                ),
            ));
        }
        if class.is_empty() {
            return Ok(Vec::new());
        }
        for target in 1..=class.len() {
            let mut subsets: Vec<Vec<usize>> = Vec::new();
            if fill(g, &class, 0, target, &mut subsets) {
                return Ok(subsets);
            }
        }
        unreachable!("singletons always form a valid partition")
    }
}

fn fill(
    g: &ColoredGraph,
    class: &[usize],
    idx: usize,
    target: usize,
    subsets: &mut Vec<Vec<usize>>,
) -> bool {
    if idx == class.len() {
        return true;
    }
    let v = class[idx];
    for s in 0..subsets.len() {
        if subsets[s]
            .iter()
            .all(|&u| g.common_neighbor(u, v).is_none())
        {
            subsets[s].push(v);
            if fill(g, class, idx + 1, target, subsets) {
                return true;
            }
            subsets[s].pop();
        }
    }
    if subsets.len() < target {
        subsets.push(vec![v]);
        if fill(g, class, idx + 1, target, subsets) {
            return true;
        }
        subsets.pop();
    }
    false
}

pub struct PartitionRegistry {
    strategies: BTreeMap<&'static str, Box<dyn PartitionStrategy>>,
}

impl Default for PartitionRegistry {
    fn default() -> Self {
        let mut r = Self {
            strategies: BTreeMap::new(),
        };
        r.register(Box::new(Greedy));
        r.register(Box::new(Exhaustive));
        r
    }
}

impl PartitionRegistry {
    pub fn register(&mut self, s: Box<dyn PartitionStrategy>) {
        self.strategies.insert(s.name(), s);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn PartitionStrategy> {
        self.strategies
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "partition strategy",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

/// Greedy partition of one color class.
pub fn partition_non_conflict(graph: &ColoredGraph, color: usize) -> Vec<Vec<usize>> {
    Greedy.partition(graph, color).expect("greedy never fails")
}

/// Triangular lattice with `rows * cols` vertices, vertex `(r, c)` at index
/// `r * cols + c`, edges to the right, down and down-right neighbors.
///
/// Vertex `(r, c)` gets color `(r + c) mod 3`; within a color, vertices are
/// grouped by `r mod 3`, so same-subset vertices sit at least three rows or
/// columns apart and share no neighbor.
pub fn triangular_lattice(rows: usize, cols: usize) -> Result<ColoredGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::param("lattice", "rows and cols must be at least 1"));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((idx(r, c), idx(r + 1, c)));
                if c + 1 < cols {
                    edges.push((idx(r, c), idx(r + 1, c + 1)));
                }
            }
        }
    }
    let n = rows * cols;
    let coloring: Vec<usize> = (0..n).map(|v| (v / cols + v % cols) % 3).collect();
    let k = coloring.iter().max().map_or(0, |m| m + 1);
    let mut parts = vec![vec![Vec::new(); 3]; k];
    for v in 0..n {
        parts[coloring[v]][(v / cols) % 3].push(v);
    }
    for p in &mut parts {
        p.retain(|s| !s.is_empty());
    }
    Ok(ColoredGraph::new(n, &edges, coloring).with_partitions(parts, PartitionSource::Generator))
}

/// Path `0 - 1 - ... - (n-1)` colored alternately with two colors.
pub fn path_graph(n: usize) -> Result<ColoredGraph> {
    if n == 0 {
        return Err(Error::param("path", "n must be at least 1"));
    }
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
    let coloring = (0..n).map(|v| v % 2).collect();
    ColoredGraph::new(n, &edges, coloring).partitioned_by(&Greedy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vertex_is_valid() {
        let g = ColoredGraph::new(1, &[], vec![0])
            .with_partitions(vec![vec![vec![0]]], PartitionSource::Supplied);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn improper_coloring_reported() {
        let g = ColoredGraph::new(2, &[(0, 1)], vec![0, 0])
            .partitioned_by(&Greedy)
            .unwrap();
        assert!(g.validate().contains(&Violation::ImproperColoring {
            u: 0,
            v: 1,
            color: 0
        }));
    }

    #[test]
    fn path_endpoints_conflict() {
        // a - b - c with a, c sharing color 0
        let g = ColoredGraph::new(3, &[(0, 1), (1, 2)], vec![0, 1, 0]);
        assert_eq!(partition_non_conflict(&g, 0), vec![vec![0], vec![2]]);
        let joint = g.clone().with_partitions(
            vec![vec![vec![0, 2]], vec![vec![1]]],
            PartitionSource::Supplied,
        );
        assert!(matches!(
            joint.validate()[0],
            Violation::Conflict {
                a: 0,
                b: 2,
                common: 1,
                ..
            }
        ));
    }

    #[test]
    fn isolated_vertices_share_a_subset() {
        let g = ColoredGraph::new(4, &[], vec![0, 0, 0, 0]);
        assert_eq!(partition_non_conflict(&g, 0).len(), 1);
    }

    #[test]
    fn lattice_one_by_one() {
        let g = triangular_lattice(1, 1).unwrap();
        assert_eq!(g.n(), 1);
        assert!(g.edges().is_empty());
        assert!(g.validate().is_empty());
    }

    #[test]
    fn lattice_two_by_two_coloring() {
        let g = triangular_lattice(2, 2).unwrap();
        assert_eq!(g.edges().len(), 5);
        for &(u, v) in g.edges() {
            assert_ne!(g.color(u), g.color(v));
        }
        assert!(g.validate().is_empty());
    }

    #[test]
    fn lattice_subsets_bounded_by_three() {
        for (r, c) in [(3, 3), (4, 5), (6, 6), (7, 4)] {
            let g = triangular_lattice(r, c).unwrap();
            assert!(g.validate().is_empty(), "{r}x{c}: {:?}", g.validate());
            assert!(g.subset_counts().iter().all(|&l| l <= 3));
        }
    }

    #[test]
    fn group_count_formula() {
        assert_eq!(group_count(&[1, 1, 1]), 27);
        assert_eq!(group_count(&[3, 3, 3]), 75);
        assert_eq!(group_count(&[1, 2, 1, 1]), 44);
    }

    #[test]
    fn exhaustive_not_worse_than_greedy() {
        let g = triangular_lattice(4, 4).unwrap();
        for c in 0..3 {
            let e = Exhaustive.partition(&g, c).unwrap();
            let gr = Greedy.partition(&g, c).unwrap();
            assert!(e.len() <= gr.len());
        }
    }

    #[test]
    fn partners_are_disjoint_pairs() {
        let g = triangular_lattice(4, 4).unwrap();
        for color in 0..3 {
            for subset in &g.partitions()[color] {
                let p = g.choose_partners(subset).unwrap();
                for (x, &a) in p.iter().enumerate() {
                    assert!(g.adjacent(subset[x], a));
                    for &b in &p[x + 1..] {
                        assert!(!g.adjacent(a, b));
                    }
                }
            }
        }
    }

    #[test]
    fn single_vertex_has_no_partner() {
        let g = ColoredGraph::new(1, &[], vec![0]);
        assert!(g.choose_partners(&[0]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let g = triangular_lattice(3, 3).unwrap();
        let text = serde_json::to_string(&g.to_file()).unwrap();
        let back = ColoredGraph::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.partitions(), g.partitions());
    }
}
