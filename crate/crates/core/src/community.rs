//! Weighted modularity and a multi-level Louvain optimizer.
//!
//! Modularity of an assignment `c` on a graph with edge weights `W`, weighted
//! degrees `k` and total edge weight `m` is
//!
//! ```text
//! Q = 1/(2m) * sum_{a,b} [ W_ab - k_a k_b / (2m) ] * [c_a == c_b]
//! ```
//!
//! with the sum over ordered pairs, `a == b` included (`W_aa = 0` on a
//! similarity graph). The optimizer alternates local moving of single nodes
//! with aggregation of communities into super-nodes until nothing improves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::parallel;
use crate::simgraph::SimilarityGraph;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityError {
    #[error("modularity is undefined on a graph without edges")]
    UndefinedModularity,
    #[error("assignment covers {found} nodes but the graph has {expected}")]
    AssignmentLength { expected: usize, found: usize },
    #[error("node {0} is out of range")]
    NodeOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainConfig {
    /// A move must improve modularity by more than this to be taken.
    pub gain_epsilon: f64,
    /// Local-moving sweeps per level.
    pub max_sweeps: usize,
    /// Aggregation levels.
    pub max_levels: usize,
    /// Worker threads for the local-moving phase; 0 = all cores, 1 = sequential.
    pub threads: usize,
    /// Independent runs with derived seeds; the highest-modularity one wins.
    /// Zero behaves like one.
    pub restarts: usize,
    /// Graphs with at most this many nodes get a vertex-moving refinement
    /// that can escape single-move local optima; 0 disables it.
    pub refine_max_nodes: usize,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            gain_epsilon: 1e-9,
            max_sweeps: 100,
            max_levels: 50,
            threads: 1,
            restarts: 4,
            refine_max_nodes: 500,
        }
    }
}

/// Graphs smaller than this always use the sequential local-moving phase.
const PARALLEL_MIN_NODES: usize = 1024;

/// Node-to-community assignment with dense ids and cached modularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignment: Vec<usize>,
    community_count: usize,
    modularity: f64,
}

impl Partition {
    /// Renumbers `raw` densely in order of first appearance and caches its
    /// modularity on `g`.
    pub fn from_assignment(g: &SimilarityGraph, raw: &[usize]) -> Result<Self, CommunityError> {
        let (assignment, community_count) = renumber(raw);
        let modularity = modularity(g, &assignment)?;
        Ok(Self {
            assignment,
            community_count,
            modularity,
        })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn community_count(&self) -> usize {
        self.community_count
    }

    pub fn modularity(&self) -> f64 {
        self.modularity
    }

    /// Members of each community, in community-id order; members ascend.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

/// Dense renumbering by first appearance. Returns the new ids and their count.
pub fn renumber(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = raw
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn check_len(n: usize, assignment: &[usize]) -> Result<(), CommunityError> {
    if assignment.len() == n {
        Ok(())
    } else {
        Err(CommunityError::AssignmentLength {
            expected: n,
            found: assignment.len(),
        })
    }
}

/// Modularity of `assignment` on `g`. Community ids may be arbitrary.
pub fn modularity(g: &SimilarityGraph, assignment: &[usize]) -> Result<f64, CommunityError> {
    check_len(g.node_count(), assignment)?;
    let m = g.total_weight();
    if m <= 0.0 {
        return Err(CommunityError::UndefinedModularity);
    }
    let (dense, count) = renumber(assignment);
    let mut internal = vec![0.0; count];
    let mut total = vec![0.0; count];
    for a in 0..g.node_count() {
        let c = dense[a];
        total[c] += g.degree(a);
        internal[c] += g
            .neighbors(a)
            .filter(|&(b, _)| dense[b] == c)
            .map(|(_, w)| w)
            .sum::<f64>();
    }
    // `internal` counts each intra-community edge twice, matching the
    // ordered-pair sum.
    Ok(internal
        .iter()
        .zip(&total)
        .map(|(&i, &k)| i / (2.0 * m) - (k / (2.0 * m)).powi(2))
        .sum())
}

/// Modularity change for inserting an isolated node of degree `k_node` into
/// a community with total degree `k_comm`, sharing `k_link` edge weight.
#[inline]
fn insertion_gain(k_link: f64, k_comm: f64, k_node: f64, m: f64) -> f64 {
    k_link / m - k_comm * k_node / (2.0 * m * m)
}

/// Modularity change from moving `node` into community `target` (which may
/// be an unused id, meaning a new singleton).
pub fn move_gain(
    g: &SimilarityGraph,
    assignment: &[usize],
    node: usize,
    target: usize,
) -> Result<f64, CommunityError> {
    check_len(g.node_count(), assignment)?;
    if node >= g.node_count() {
        return Err(CommunityError::NodeOutOfRange(node));
    }
    let m = g.total_weight();
    if m <= 0.0 {
        return Err(CommunityError::UndefinedModularity);
    }
    let own = assignment[node];
    if own == target {
        return Ok(0.0);
    }
    let k = g.degree(node);
    let (mut k_own, mut k_target) = (0.0, 0.0);
    for (b, w) in g.neighbors(node) {
        if assignment[b] == own {
            k_own += w;
        } else if assignment[b] == target {
            k_target += w;
        }
    }
    let (mut tot_own, mut tot_target) = (0.0, 0.0);
    for (a, &c) in assignment.iter().enumerate() {
        if a == node {
            continue;
        }
        if c == own {
            tot_own += g.degree(a);
        } else if c == target {
            tot_target += g.degree(a);
        }
    }
    Ok(insertion_gain(k_target, tot_target, k, m) - insertion_gain(k_own, tot_own, k, m))
}

/// Undirected weighted graph that may carry self-loops; the working
/// representation for every aggregation level.
///
/// A self-loop of weight `s` contributes `s` to `m` and `2s` to the node's
/// degree, which makes aggregation modularity-preserving.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    self_loops: Vec<f64>,
    degrees: Vec<f64>,
    total_weight: f64,
}

impl WeightedGraph {
    pub fn from_similarity(g: &SimilarityGraph) -> Self {
        let n = g.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for a in 0..n {
            for (b, w) in g.neighbors(a) {
                neighbors.push(b as u32);
                weights.push(w);
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            weights,
            self_loops: vec![0.0; n],
            degrees: g.degrees().to_vec(),
            total_weight: g.total_weight(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn degree(&self, a: usize) -> f64 {
        self.degrees[a]
    }

    pub fn self_loop(&self, a: usize) -> f64 {
        self.self_loops[a]
    }

    /// Neighbors of `a` other than itself.
    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[a]..self.offsets[a + 1];
        self.neighbors[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&b, &w)| (b as usize, w))
    }

    /// Collapses each community of `assignment` (dense ids `0..count`) into
    /// one node. Intra-community weight becomes self-loop mass.
    pub fn aggregate(&self, assignment: &[usize], count: usize) -> WeightedGraph {
        let mut self_loops = vec![0.0; count];
        let mut degrees = vec![0.0; count];
        let mut links: Vec<(u32, u32, f64)> = Vec::new();
        for a in 0..self.node_count() {
            let ca = assignment[a];
            self_loops[ca] += self.self_loops[a];
            degrees[ca] += self.degrees[a];
            for (b, w) in self.neighbors(a) {
                let cb = assignment[b];
                if ca == cb {
                    if b > a {
                        self_loops[ca] += w;
                    }
                } else {
                    links.push((ca as u32, cb as u32, w));
                }
            }
        }
        links.sort_by_key(|&(x, y, _)| (x, y));
        let mut offsets = vec![0; count + 1];
        let mut neighbors = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        for (x, y, w) in links {
            if last == Some((x, y)) {
                *weights.last_mut().expect("non-empty") += w;
            } else {
                neighbors.push(y);
                weights.push(w);
                offsets[x as usize + 1] += 1;
                last = Some((x, y));
            }
        }
        for i in 0..count {
            offsets[i + 1] += offsets[i];
        }
        WeightedGraph {
            offsets,
            neighbors,
            weights,
            self_loops,
            degrees,
            total_weight: self.total_weight,
        }
    }

    pub fn modularity(&self, assignment: &[usize]) -> Result<f64, CommunityError> {
        check_len(self.node_count(), assignment)?;
        let m = self.total_weight;
        if m <= 0.0 {
            return Err(CommunityError::UndefinedModularity);
        }
        let (dense, count) = renumber(assignment);
        let mut internal = vec![0.0; count];
        let mut total = vec![0.0; count];
        for a in 0..self.node_count() {
            let c = dense[a];
            total[c] += self.degrees[a];
            internal[c] += 2.0 * self.self_loops[a];
            internal[c] += self
                .neighbors(a)
                .filter(|&(b, _)| dense[b] == c)
                .map(|(_, w)| w)
                .sum::<f64>();
        }
        Ok(internal
            .iter()
            .zip(&total)
            .map(|(&i, &k)| i / (2.0 * m) - (k / (2.0 * m)).powi(2))
            .sum())
    }
}

/// Per-node scratch for accumulating edge weight into neighboring communities.
struct Scratch {
    link: Vec<f64>,
    touched: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            link: vec![f64::NAN; n],
            touched: Vec::new(),
        }
    }

    fn gather(&mut self, g: &WeightedGraph, node: usize, community: &[usize]) {
        for &c in &self.touched {
            self.link[c] = f64::NAN;
        }
        self.touched.clear();
        for (b, w) in g.neighbors(node) {
            let c = community[b];
            if self.link[c].is_nan() {
                self.link[c] = 0.0;
                self.touched.push(c);
            }
            self.link[c] += w;
        }
    }

    fn link(&self, c: usize) -> f64 {
        let w = self.link[c];
        if w.is_nan() {
            0.0
        } else {
            w
        }
    }
}

/// Best community for `node` given community totals that still include it.
/// Returns the target and its gain over staying; ties go to the smallest id.
fn best_move(
    g: &WeightedGraph,
    node: usize,
    community: &[usize],
    totals: &[f64],
    scratch: &Scratch,
) -> (usize, f64) {
    let m = g.total_weight;
    let k = g.degrees[node];
    let own = community[node];
    let stay = insertion_gain(scratch.link(own), totals[own] - k, k, m);
    let mut best = own;
    let mut best_gain = f64::NEG_INFINITY;
    for &c in &scratch.touched {
        if c == own {
            continue;
        }
        let gain = insertion_gain(scratch.link(c), totals[c], k, m);
        if gain > best_gain || (gain == best_gain && c < best) {
            best = c;
            best_gain = gain;
        }
    }
    if best == own {
        (own, 0.0)
    } else {
        (best, best_gain - stay)
    }
}

struct LocalMover<'a> {
    g: &'a WeightedGraph,
    config: &'a LouvainConfig,
    community: Vec<usize>,
    totals: Vec<f64>,
    scratch: Scratch,
}

impl<'a> LocalMover<'a> {
    fn new(g: &'a WeightedGraph, community: Vec<usize>, config: &'a LouvainConfig) -> Self {
        let slots = community
            .iter()
            .max()
            .map_or(0, |&c| c + 1)
            .max(g.node_count());
        let mut totals = vec![0.0; slots];
        for (a, &c) in community.iter().enumerate() {
            totals[c] += g.degrees[a];
        }
        Self {
            g,
            config,
            community,
            totals,
            scratch: Scratch::new(slots),
        }
    }

    fn apply(&mut self, node: usize, target: usize) {
        let k = self.g.degrees[node];
        self.totals[self.community[node]] -= k;
        self.totals[target] += k;
        self.community[node] = target;
    }

    /// One sequential sweep in `order`; returns the number of moves.
    fn sequential_sweep(&mut self, order: &[usize]) -> usize {
        let mut moves = 0;
        for &node in order {
            self.scratch.gather(self.g, node, &self.community);
            let (target, gain) =
                best_move(self.g, node, &self.community, &self.totals, &self.scratch);
            if target != self.community[node] && gain > self.config.gain_epsilon {
                self.apply(node, target);
                moves += 1;
            }
        }
        moves
    }

    /// Proposals are computed in parallel against the state at the start of
    /// the sweep, then re-checked and committed one by one in `order`.
    fn parallel_sweep(&mut self, order: &[usize], threads: usize) -> usize {
        let g = self.g;
        let eps = self.config.gain_epsilon;
        let chunk = order.len().div_ceil(threads).max(1);
        let (community, totals) = (&self.community, &self.totals);
        let proposals: Vec<Option<usize>> = parallel::install(threads, || {
            order
                .par_chunks(chunk)
                .flat_map_iter(|nodes| {
                    let mut scratch = Scratch::new(totals.len());
                    nodes
                        .iter()
                        .map(|&node| {
                            scratch.gather(g, node, community);
                            let (target, gain) = best_move(g, node, community, totals, &scratch);
                            (target != community[node] && gain > eps).then_some(target)
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        });

        let m = g.total_weight;
        let mut moves = 0;
        for (&node, proposal) in order.iter().zip(proposals) {
            let Some(target) = proposal else { continue };
            let own = self.community[node];
            if target == own {
                continue;
            }
            self.scratch.gather(g, node, &self.community);
            let k = g.degrees[node];
            let gain = insertion_gain(self.scratch.link(target), self.totals[target], k, m)
                - insertion_gain(self.scratch.link(own), self.totals[own] - k, k, m);
            if gain > eps {
                self.apply(node, target);
                moves += 1;
            }
        }
        moves
    }

    /// Sweeps until no node moves or the sweep limit is reached. Returns
    /// whether anything moved.
    fn run(&mut self, rng: &mut ChaCha8Rng, threads: usize) -> bool {
        let n = self.g.node_count();
        let mut order: Vec<usize> = (0..n).collect();
        let mut moved = false;
        let mut sweeps = 0;
        if threads > 1 && n >= PARALLEL_MIN_NODES {
            while sweeps < self.config.max_sweeps {
                order.shuffle(rng);
                sweeps += 1;
                let moves = self.parallel_sweep(&order, threads);
                moved |= moves > 0;
                if moves == 0 {
                    break;
                }
            }
        }
        // Sequential sweeps, which also reconcile anything the parallel
        // schedule left behind.
        while sweeps < self.config.max_sweeps {
            order.shuffle(rng);
            sweeps += 1;
            let moves = self.sequential_sweep(&order);
            moved |= moves > 0;
            if moves == 0 {
                break;
            }
        }
        moved
    }
}

/// Multi-level Louvain modularity maximization.
///
/// The result is a local maximum under single-node moves on `g` (up to
/// `gain_epsilon` and the sweep limit) and is deterministic for a fixed
/// `seed` and configuration.
pub fn louvain(
    g: &SimilarityGraph,
    seed: u64,
    config: &LouvainConfig,
) -> Result<Partition, CommunityError> {
    if g.total_weight() <= 0.0 {
        return Err(CommunityError::UndefinedModularity);
    }
    let base = WeightedGraph::from_similarity(g);
    let mut best = Partition::from_assignment(g, &single_run(&base, seed, config))?;
    for r in 1..config.restarts {
        let candidate =
            Partition::from_assignment(g, &single_run(&base, restart_seed(seed, r), config))?;
        if candidate.modularity > best.modularity {
            best = candidate;
        }
    }
    Ok(best)
}

fn restart_seed(seed: u64, run: usize) -> u64 {
    let mut z = (seed ^ (run as u64).rotate_left(32)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn single_run(base: &WeightedGraph, seed: u64, config: &LouvainConfig) -> Vec<usize> {
    let threads = parallel::resolve_threads(config.threads);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..base.node_count()).collect();
    let mut levels = 0;

    loop {
        // Coarse phase: aggregate the current membership and keep moving
        // super-nodes until a level produces no move.
        let (dense, count) = renumber(&membership);
        membership = dense;
        let mut level = base.aggregate(&membership, count);
        while levels < config.max_levels {
            levels += 1;
            let mut mover = LocalMover::new(&level, (0..level.node_count()).collect(), config);
            if !mover.run(&mut rng, threads) {
                break;
            }
            let (comm, count) = renumber(&mover.community);
            for x in membership.iter_mut() {
                *x = comm[*x];
            }
            level = level.aggregate(&comm, count);
        }

        // Refinement on the original graph so that no single node can still
        // improve modularity by moving.
        let mut mover = LocalMover::new(base, membership, config);
        let moved = mover.run(&mut rng, threads);
        membership = mover.community;
        if !moved || levels >= config.max_levels {
            break;
        }
    }
    if base.node_count() <= config.refine_max_nodes {
        membership = refine(base, &membership, config);
    }
    membership
}

/// Kernighan-Lin style passes: repeatedly move the unlocked node with the
/// best gain, even when negative, lock it, and keep the best prefix of the
/// move sequence. Stops after a pass that finds no improvement.
fn refine(g: &WeightedGraph, membership: &[usize], config: &LouvainConfig) -> Vec<usize> {
    let n = g.node_count();
    let m = g.total_weight;
    let eps = config.gain_epsilon;
    let (mut community, _) = renumber(membership);
    let mut totals = vec![0.0; n];
    let mut sizes = vec![0usize; n];
    for (a, &c) in community.iter().enumerate() {
        totals[c] += g.degrees[a];
        sizes[c] += 1;
    }
    let shift =
        |community: &mut [usize], totals: &mut [f64], sizes: &mut [usize], v: usize, to: usize| {
            let from = community[v];
            totals[from] -= g.degrees[v];
            sizes[from] -= 1;
            totals[to] += g.degrees[v];
            sizes[to] += 1;
            community[v] = to;
        };
    let mut scratch = Scratch::new(n);

    for _ in 0..config.max_sweeps {
        let mut locked = vec![false; n];
        let mut log: Vec<(usize, usize)> = Vec::new();
        let (mut cumulative, mut best, mut best_len) = (0.0, 0.0, 0);
        loop {
            let empty = sizes.iter().position(|&s| s == 0);
            let mut pick: Option<(f64, usize, usize)> = None;
            for v in (0..n).filter(|&v| !locked[v]) {
                scratch.gather(g, v, &community);
                let k = g.degrees[v];
                let own = community[v];
                let stay = insertion_gain(scratch.link(own), totals[own] - k, k, m);
                let isolate = empty.filter(|_| sizes[own] > 1).map(|e| (e, 0.0));
                let targets = scratch
                    .touched
                    .iter()
                    .map(|&c| (c, scratch.link(c)))
                    .chain(isolate);
                for (c, link) in targets {
                    if c == own {
                        continue;
                    }
                    let gain = insertion_gain(link, totals[c], k, m) - stay;
                    if pick.is_none_or(|(g, _, _)| gain > g) {
                        pick = Some((gain, v, c));
                    }
                }
            }
            let Some((gain, v, to)) = pick else { break };
            log.push((v, community[v]));
            shift(&mut community, &mut totals, &mut sizes, v, to);
            locked[v] = true;
            cumulative += gain;
            if cumulative > best + eps {
                best = cumulative;
                best_len = log.len();
            }
        }
        for &(v, from) in log[best_len..].iter().rev() {
            shift(&mut community, &mut totals, &mut sizes, v, from);
        }
        if best_len == 0 {
            break;
        }
    }
    community
}
