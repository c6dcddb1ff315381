//! Leiden community detection on the concept graph: queue-based local
//! moving, refinement within communities, and aggregation, repeated until
//! the weighted-modularity objective stops improving.
//!
//! Determinism: node processing order, tie-breaking (lowest community id
//! wins), and restarts all derive from the caller's seed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConceptGraph, KgError};

const GAIN_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-12;
const MAX_OUTER_ITERATIONS: usize = 100;

/// A community assignment over graph nodes with its objective value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub community_of: BTreeMap<String, usize>,
    pub quality: f64,
    pub resolution: f64,
    pub seed: u64,
}

impl Partition {
    /// Number of communities.
    pub fn community_count(&self) -> usize {
        self.community_of.values().collect::<BTreeSet<_>>().len()
    }

    /// Members of each community, keyed by community id.
    pub fn communities(&self) -> BTreeMap<usize, Vec<String>> {
        let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (node, &c) in &self.community_of {
            out.entry(c).or_default().push(node.clone());
        }
        out
    }

    /// Cover + disjointness (every graph node assigned exactly once) and
    /// per-community connectivity.
    pub fn validate(&self, graph: &ConceptGraph) -> Result<(), String> {
        if self.community_of.len() != graph.node_count() {
            return Err(format!(
                "partition covers {} nodes, graph has {}",
                self.community_of.len(),
                graph.node_count()
            ));
        }
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (name, &c) in &self.community_of {
            match graph.node_id(name) {
                Some(id) => members.entry(c).or_default().push(id),
                None => return Err(format!("partition names unknown node '{name}'")),
            }
        }
        for (c, nodes) in &members {
            if !is_connected(graph, nodes) {
                return Err(format!("community {c} is not internally connected"));
            }
        }
        Ok(())
    }
}

fn is_connected(graph: &ConceptGraph, nodes: &[usize]) -> bool {
    if nodes.len() <= 1 {
        return true;
    }
    let set: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut frontier = vec![nodes[0]];
    seen.insert(nodes[0]);
    while let Some(v) = frontier.pop() {
        for (u, _) in graph.neighbors(v) {
            if set.contains(&u) && seen.insert(u) {
                frontier.push(u);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Weighted modularity at the given resolution for an explicit
/// assignment. An edgeless graph has modularity 0 by convention.
pub fn modularity(
    graph: &ConceptGraph,
    community_of: &BTreeMap<String, usize>,
    resolution: f64,
) -> f64 {
    let membership: Vec<usize> = graph
        .nodes()
        .iter()
        .map(|name| *community_of.get(name).expect("assignment covers all nodes"))
        .collect();
    modularity_membership(graph, &membership, resolution)
}

fn modularity_membership(graph: &ConceptGraph, membership: &[usize], resolution: f64) -> f64 {
    let m2: f64 = (0..graph.node_count()).map(|v| graph.degree(v)).sum();
    if m2 == 0.0 {
        return 0.0;
    }
    let n_comms = membership.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut internal = vec![0.0; n_comms]; // 2x internal edge weight
    let mut tot = vec![0.0; n_comms];
    for v in 0..graph.node_count() {
        tot[membership[v]] += graph.degree(v);
        for (u, w) in graph.neighbors(v) {
            if membership[u] == membership[v] {
                internal[membership[v]] += w;
            }
        }
    }
    (0..n_comms)
        .map(|c| internal[c] / m2 - resolution * (tot[c] / m2) * (tot[c] / m2))
        .sum()
}

/// Working graph for the aggregation hierarchy. `self_weight[v]` carries
/// twice the internal edge weight collapsed into `v`.
#[derive(Clone)]
struct WorkGraph {
    adjacency: Vec<BTreeMap<usize, f64>>,
    self_weight: Vec<f64>,
    degree: Vec<f64>,
    m2: f64,
}

impl WorkGraph {
    fn from_concept_graph(graph: &ConceptGraph) -> Self {
        let n = graph.node_count();
        let adjacency: Vec<BTreeMap<usize, f64>> =
            (0..n).map(|v| graph.neighbors(v).collect()).collect();
        let self_weight = vec![0.0; n];
        let degree: Vec<f64> = adjacency.iter().map(|a| a.values().sum()).collect();
        let m2 = degree.iter().sum();
        WorkGraph { adjacency, self_weight, degree, m2 }
    }

    fn len(&self) -> usize {
        self.adjacency.len()
    }
}

/// Three-phase Leiden with seeded restarts; the best-quality run wins.
/// Every returned community is internally connected.
pub fn leiden_partition(
    graph: &ConceptGraph,
    resolution: f64,
    seed: u64,
    restarts: usize,
) -> Result<Partition, KgError> {
    if graph.is_empty() {
        return Err(KgError::EmptyGraph);
    }
    let work = WorkGraph::from_concept_graph(graph);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts.max(1) {
        let membership = run_once(&work, resolution, seed.wrapping_add(r as u64));
        let membership = split_disconnected(graph, membership);
        let q = modularity_membership(graph, &membership, resolution);
        if best.as_ref().map_or(true, |(_, bq)| q > *bq + TIE_TOL) {
            best = Some((membership, q));
        }
    }
    let (membership, quality) = best.expect("at least one restart ran");
    let membership = renumber(&membership);
    let community_of: BTreeMap<String, usize> = graph
        .nodes()
        .iter()
        .cloned()
        .zip(membership.iter().copied())
        .collect();
    let partition = Partition { community_of, quality, resolution, seed };
    partition.validate(graph).map_err(KgError::InvalidPartition)?;
    Ok(partition)
}

/// One full Leiden run over the aggregation hierarchy; returns the
/// membership of the original nodes.
fn run_once(original: &WorkGraph, resolution: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n0 = original.len();
    let mut graph = original.clone();
    // level node -> original nodes
    let mut groups: Vec<Vec<usize>> = (0..n0).map(|v| vec![v]).collect();
    // membership per level node
    let mut partition: Vec<usize> = (0..graph.len()).collect();
    let mut last_quality = f64::NEG_INFINITY;

    for iteration in 0..MAX_OUTER_ITERATIONS {
        local_move(&graph, &mut partition, resolution, &mut rng);
        let quality = level_quality(&graph, &partition, resolution);
        log::debug!("leiden iteration {iteration}: quality {quality:.12}");
        debug_assert!(
            quality + GAIN_TOL >= last_quality,
            "quality decreased: {last_quality} -> {quality}"
        );
        if quality - last_quality <= GAIN_TOL {
            break;
        }
        last_quality = quality;

        let n_comms = partition.iter().collect::<BTreeSet<_>>().len();
        if n_comms == graph.len() {
            break; // every community is a single node; aggregation is identity
        }

        let refined = refine(&graph, &partition, resolution, &mut rng);
        let (agg, node_to_agg) = aggregate(&graph, &refined);

        let mut new_groups: Vec<Vec<usize>> = vec![Vec::new(); agg.len()];
        let mut new_partition = vec![usize::MAX; agg.len()];
        for v in 0..graph.len() {
            let a = node_to_agg[v];
            new_groups[a].extend(&groups[v]);
            new_partition[a] = partition[v]; // refined communities never straddle partition communities
        }
        groups = new_groups;
        partition = compact(&new_partition);
        graph = agg;
    }

    let mut membership = vec![0usize; n0];
    for (level_node, members) in groups.iter().enumerate() {
        for &orig in members {
            membership[orig] = partition[level_node];
        }
    }
    compact(&membership)
}

fn level_quality(graph: &WorkGraph, partition: &[usize], resolution: f64) -> f64 {
    if graph.m2 == 0.0 {
        return 0.0;
    }
    let n_comms = partition.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut internal = vec![0.0; n_comms];
    let mut tot = vec![0.0; n_comms];
    for v in 0..graph.len() {
        let c = partition[v];
        tot[c] += graph.degree[v];
        internal[c] += graph.self_weight[v];
        for (&u, &w) in &graph.adjacency[v] {
            if partition[u] == c {
                internal[c] += w;
            }
        }
    }
    (0..n_comms)
        .map(|c| internal[c] / graph.m2 - resolution * (tot[c] / graph.m2) * (tot[c] / graph.m2))
        .sum()
}

/// Queue-based local moving. Each node moves to the community with the
/// highest gain (lowest id on ties); movers re-enqueue their neighbors.
fn local_move(graph: &WorkGraph, partition: &mut [usize], resolution: f64, rng: &mut ChaCha8Rng) {
    let n = graph.len();
    if graph.m2 == 0.0 {
        return;
    }
    let mut comm_tot = vec![0.0; n];
    let mut comm_size = vec![0usize; n];
    for v in 0..n {
        comm_tot[partition[v]] += graph.degree[v];
        comm_size[partition[v]] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let old = partition[v];
        let k_v = graph.degree[v];

        let mut link_to: BTreeMap<usize, f64> = BTreeMap::new();
        for (&u, &w) in &graph.adjacency[v] {
            if u != v {
                *link_to.entry(partition[u]).or_insert(0.0) += w;
            }
        }
        // Evaluate with v removed from its community.
        comm_tot[old] -= k_v;
        comm_size[old] -= 1;

        let gain = |c: usize| -> f64 {
            let w = link_to.get(&c).copied().unwrap_or(0.0);
            w - resolution * k_v * comm_tot[c] / graph.m2
        };

        let mut best_comm = old;
        let mut best_gain = gain(old);
        let mut consider = |c: usize, g: f64, best_comm: &mut usize, best_gain: &mut f64| {
            if g > *best_gain + TIE_TOL || (g >= *best_gain - TIE_TOL && c < *best_comm) {
                *best_comm = c;
                *best_gain = g;
            }
        };
        for &c in link_to.keys() {
            if c != old {
                let g = gain(c);
                consider(c, g, &mut best_comm, &mut best_gain);
            }
        }
        // A fresh empty community has gain 0.
        if best_gain < -TIE_TOL {
            if let Some(free) = (0..n).find(|&c| comm_size[c] == 0) {
                consider(free, 0.0, &mut best_comm, &mut best_gain);
            }
        }

        comm_tot[best_comm] += k_v;
        comm_size[best_comm] += 1;
        if best_comm != old {
            partition[v] = best_comm;
            for (&u, _) in &graph.adjacency[v] {
                if u != v && partition[u] != best_comm && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
}

/// Refinement: inside each community, grow well-connected refined
/// sub-communities from singletons by greedy positive-gain merges.
fn refine(
    graph: &WorkGraph,
    partition: &[usize],
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = graph.len();
    let mut refined: Vec<usize> = (0..n).collect();
    if graph.m2 == 0.0 {
        return refined;
    }
    let mut comm_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        comm_members.entry(partition[v]).or_default().push(v);
    }
    let mut refined_tot: Vec<f64> = graph.degree.clone();
    let mut refined_size = vec![1usize; n];

    for members in comm_members.values() {
        if members.len() <= 1 {
            continue;
        }
        let member_set: BTreeSet<usize> = members.iter().copied().collect();
        let comm_degree: f64 = members.iter().map(|&v| graph.degree[v]).sum();

        // Connectivity of a node to the rest of its community.
        let external = |v: usize| -> f64 {
            graph.adjacency[v]
                .iter()
                .filter(|(&u, _)| u != v && member_set.contains(&u))
                .map(|(_, &w)| w)
                .sum()
        };

        let mut order = members.clone();
        order.shuffle(rng);
        for v in order {
            if refined_size[refined[v]] != 1 || refined[v] != v {
                continue; // only still-singleton nodes merge
            }
            let k_v = graph.degree[v];
            // Well-connected node condition.
            if external(v) < resolution * k_v * (comm_degree - k_v) / graph.m2 {
                continue;
            }
            let mut link_to: BTreeMap<usize, f64> = BTreeMap::new();
            for (&u, &w) in &graph.adjacency[v] {
                if u != v && member_set.contains(&u) {
                    *link_to.entry(refined[u]).or_insert(0.0) += w;
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for (&c, &w) in &link_to {
                if c == refined[v] {
                    continue;
                }
                // Candidate refined community must itself be well connected.
                let c_external: f64 = member_set
                    .iter()
                    .filter(|&&u| refined[u] == c)
                    .map(|&u| {
                        graph.adjacency[u]
                            .iter()
                            .filter(|(&x, _)| member_set.contains(&x) && refined[x] != c)
                            .map(|(_, &wx)| wx)
                            .sum::<f64>()
                    })
                    .sum();
                if c_external < resolution * refined_tot[c] * (comm_degree - refined_tot[c]) / graph.m2
                {
                    continue;
                }
                let g = w - resolution * k_v * refined_tot[c] / graph.m2;
                if g > TIE_TOL
                    && best.map_or(true, |(bc, bg)| g > bg + TIE_TOL || (g >= bg - TIE_TOL && c < bc))
                {
                    best = Some((c, g));
                }
            }
            if let Some((target, _)) = best {
                refined_tot[target] += k_v;
                refined_size[target] += 1;
                refined_tot[v] -= k_v;
                refined_size[v] -= 1;
                refined[v] = target;
            }
        }
    }
    refined
}

/// Collapse refined communities into aggregate nodes, folding internal
/// weight into `self_weight`.
fn aggregate(graph: &WorkGraph, refined: &[usize]) -> (WorkGraph, Vec<usize>) {
    let compacted = compact(refined);
    let n_agg = compacted.iter().max().map(|&m| m + 1).unwrap_or(0);

    let mut adjacency: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_agg];
    let mut self_weight = vec![0.0; n_agg];
    for v in 0..graph.len() {
        let a = compacted[v];
        self_weight[a] += graph.self_weight[v];
        for (&u, &w) in &graph.adjacency[v] {
            if u == v {
                continue;
            }
            let b = compacted[u];
            if a == b {
                self_weight[a] += w; // both directions visited: sums to 2x internal
            } else {
                *adjacency[a].entry(b).or_insert(0.0) += w;
            }
        }
    }
    let degree: Vec<f64> =
        (0..n_agg).map(|a| adjacency[a].values().sum::<f64>() + self_weight[a]).collect();
    let m2 = degree.iter().sum();
    (WorkGraph { adjacency, self_weight, degree, m2 }, compacted)
}

/// Renumber communities compactly in order of first appearance.
fn compact(membership: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut next = 0;
    membership
        .iter()
        .map(|&c| {
            *map.entry(c).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

fn renumber(membership: &[usize]) -> Vec<usize> {
    compact(membership)
}

/// Split any community that is not internally connected into its
/// connected components; this strictly improves modularity.
fn split_disconnected(graph: &ConceptGraph, membership: Vec<usize>) -> Vec<usize> {
    let n = graph.node_count();
    let mut out = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut comm_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &c) in membership.iter().enumerate() {
        comm_members.entry(c).or_default().push(v);
    }
    for members in comm_members.values() {
        let set: BTreeSet<usize> = members.iter().copied().collect();
        let mut unvisited: BTreeSet<usize> = set.clone();
        while let Some(&start) = unvisited.iter().next() {
            let mut frontier = vec![start];
            unvisited.remove(&start);
            out[start] = next;
            while let Some(v) = frontier.pop() {
                for (u, _) in graph.neighbors(v) {
                    if set.contains(&u) && unvisited.remove(&u) {
                        out[u] = next;
                        frontier.push(u);
                    }
                }
            }
            next += 1;
        }
    }
    out
}
