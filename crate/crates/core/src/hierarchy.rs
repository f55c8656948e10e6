//! Recursive community splitting into a cluster tree.
//!
//! Starting from the whole graph, each tree node runs Louvain on its induced
//! subgraph. If the resulting modularity is below the threshold the node is a
//! leaf. Otherwise every detected community becomes a child: communities
//! larger than `max_size` are split again, the rest are leaves, and
//! communities smaller than `min_community_size` are moved to the
//! non-community bucket together with nodes that have no edges at all.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::de::Deserializer;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{louvain, CommunityError, LouvainConfig};
use crate::parallel;
use crate::simgraph::SimilarityGraph;

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("mod_threshold must lie in [0, 1), got {0}")]
    ModThreshold(f64),
    #[error("max_size must be at least 1")]
    MaxSize,
    #[error("min_community_size must be at least 1")]
    MinCommunitySize,
    #[error(transparent)]
    Community(#[from] CommunityError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub mod_threshold: f64,
    pub max_size: usize,
    /// Communities with fewer members go to the non-community bucket.
    pub min_community_size: usize,
    pub seed: u64,
    pub louvain: LouvainConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            mod_threshold: 0.3,
            max_size: 500,
            min_community_size: 2,
            seed: 0,
            louvain: LouvainConfig::default(),
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), HierarchyError> {
        if !(0.0..1.0).contains(&self.mod_threshold) {
            return Err(HierarchyError::ModThreshold(self.mod_threshold));
        }
        if self.max_size == 0 {
            return Err(HierarchyError::MaxSize);
        }
        if self.min_community_size == 0 {
            return Err(HierarchyError::MinCommunitySize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonCommunityReason {
    /// No edge survived thresholding.
    Isolated,
    /// Member of a detected community below the minimum size.
    SingletonCommunity,
}

impl fmt::Display for NonCommunityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Isolated => "isolated",
            Self::SingletonCommunity => "singleton_community",
        })
    }
}

/// Items that belong to no cluster, sorted by corpus index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NonCommunityBucket {
    entries: Vec<(usize, NonCommunityReason)>,
}

impl NonCommunityBucket {
    fn from_entries(mut entries: Vec<(usize, NonCommunityReason)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    pub fn entries(&self) -> &[(usize, NonCommunityReason)] {
        &self.entries
    }

    pub fn reason(&self, item: usize) -> Option<NonCommunityReason> {
        self.entries
            .binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|pos| self.entries[pos].1)
    }
}

/// Why a leaf was not split further.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    /// A community no larger than `max_size`.
    SizeGate,
    /// The node's own split scored below the modularity threshold (or found
    /// a single community); it may exceed `max_size`.
    ModularityStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Corpus indices in this subtree, ascending.
    pub members: Vec<usize>,
    /// Modularity of the split that produced `children`.
    pub split_modularity: Option<f64>,
    /// Set for leaves only.
    pub leaf_kind: Option<LeafKind>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Hierarchy of clusters. Node ids are positions in depth-first pre-order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterTree {
    nodes: Vec<TreeNode>,
}

impl ClusterTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> Option<&TreeNode> {
        self.nodes.first()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaves in depth-first, child order.
    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> + '_ {
        // Pre-order numbering makes id order the depth-first order.
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Longest root-to-leaf path, in edges. Zero for a single node or an
    /// empty tree.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            if let Some(p) = node.parent {
                depth[node.id] = depth[p] + 1;
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Checks structural invariants against a corpus of `n_items` items.
    pub fn validate(
        &self,
        n_items: usize,
        bucket: &NonCommunityBucket,
        mod_threshold: f64,
    ) -> Result<(), String> {
        for (pos, node) in self.nodes.iter().enumerate() {
            if node.id != pos {
                return Err(format!("node at position {pos} has id {}", node.id));
            }
            if (pos == 0) != node.parent.is_none() {
                return Err(format!("node {pos} has an unexpected parent link"));
            }
            if node.members.is_empty() || node.members.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("node {pos} members are empty or unsorted"));
            }
            if node.is_leaf() {
                continue;
            }
            match node.split_modularity {
                Some(q) if q >= mod_threshold => {}
                other => {
                    return Err(format!(
                        "internal node {pos} has split modularity {other:?}"
                    ))
                }
            }
            let mut union = Vec::new();
            for &c in &node.children {
                if c >= self.nodes.len() || self.nodes[c].parent != Some(pos) {
                    return Err(format!("child {c} of node {pos} does not point back"));
                }
                union.extend_from_slice(&self.nodes[c].members);
            }
            union.sort_unstable();
            if union != node.members {
                return Err(format!(
                    "node {pos} members differ from the union of its children"
                ));
            }
        }
        let mut seen = vec![false; n_items];
        let leaf_items = self.leaves().flat_map(|l| l.members.iter().copied());
        for item in leaf_items.chain(bucket.members()) {
            match seen.get_mut(item) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(format!("item {item} appears twice")),
                None => return Err(format!("item {item} is out of range")),
            }
        }
        match seen.iter().position(|s| !s) {
            Some(item) => Err(format!(
                "item {item} is neither in a leaf nor in the bucket"
            )),
            None => Ok(()),
        }
    }
}

/// The leaves of `tree` as member lists, in depth-first order.
pub fn flat_clusters(tree: &ClusterTree) -> Vec<Vec<usize>> {
    tree.leaves().map(|l| l.members.clone()).collect()
}

/// Derives the seed for the `index`-th child of a node seeded with `parent`.
pub fn child_seed(parent: u64, index: usize) -> u64 {
    splitmix64(parent ^ splitmix64(index as u64 + 1))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Subtree {
    members: Vec<usize>,
    split_modularity: Option<f64>,
    leaf_kind: Option<LeafKind>,
    children: Vec<Subtree>,
}

type BucketEntries = Vec<(usize, NonCommunityReason)>;

fn leaf(members: Vec<usize>, kind: LeafKind) -> Subtree {
    Subtree {
        members,
        split_modularity: None,
        leaf_kind: Some(kind),
        children: Vec::new(),
    }
}

fn grow(
    g: &SimilarityGraph,
    members: Vec<usize>,
    seed: u64,
    cfg: &ClusterConfig,
) -> Result<(Option<Subtree>, BucketEntries), HierarchyError> {
    let sub = g.induced_subgraph(&members);
    if sub.total_weight() <= 0.0 {
        return Ok((Some(leaf(members, LeafKind::ModularityStop)), Vec::new()));
    }
    let partition = louvain(&sub, seed, &cfg.louvain)?;
    let q = partition.modularity();
    if q < cfg.mod_threshold || partition.community_count() < 2 {
        return Ok((Some(leaf(members, LeafKind::ModularityStop)), Vec::new()));
    }

    let mut bucket = Vec::new();
    let mut pending = Vec::new();
    for (index, local) in partition.communities().into_iter().enumerate() {
        let community: Vec<usize> = local.into_iter().map(|i| members[i]).collect();
        if community.len() < cfg.min_community_size {
            bucket.extend(
                community
                    .into_iter()
                    .map(|i| (i, NonCommunityReason::SingletonCommunity)),
            );
        } else {
            pending.push((index, community));
        }
    }

    let build = |(index, community): (usize, Vec<usize>)| {
        if community.len() > cfg.max_size {
            grow(g, community, child_seed(seed, index), cfg)
        } else {
            Ok((Some(leaf(community, LeafKind::SizeGate)), Vec::new()))
        }
    };
    let results: Vec<_> = if parallel::resolve_threads(cfg.louvain.threads) > 1 {
        parallel::install(cfg.louvain.threads, || {
            pending.into_par_iter().map(build).collect()
        })
    } else {
        pending.into_iter().map(build).collect()
    };

    let mut children = Vec::new();
    for result in results {
        let (child, child_bucket) = result?;
        bucket.extend(child_bucket);
        children.extend(child);
    }
    if children.is_empty() {
        return Ok((None, bucket));
    }
    let mut members: Vec<usize> = children
        .iter()
        .flat_map(|c| c.members.iter().copied())
        .collect();
    members.sort_unstable();
    Ok((
        Some(Subtree {
            members,
            split_modularity: Some(q),
            leaf_kind: None,
            children,
        }),
        bucket,
    ))
}

fn flatten(subtree: Subtree, parent: Option<usize>, nodes: &mut Vec<TreeNode>) -> usize {
    let id = nodes.len();
    nodes.push(TreeNode {
        id,
        parent,
        children: Vec::new(),
        members: subtree.members,
        split_modularity: subtree.split_modularity,
        leaf_kind: subtree.leaf_kind,
    });
    for child in subtree.children {
        let child_id = flatten(child, Some(id), nodes);
        nodes[id].children.push(child_id);
    }
    id
}

/// Clusters the graph recursively. Isolated nodes go straight to the
/// bucket; when every node is isolated the tree is empty.
pub fn vec2gc_cluster(
    g: &SimilarityGraph,
    cfg: &ClusterConfig,
) -> Result<(ClusterTree, NonCommunityBucket), HierarchyError> {
    cfg.validate()?;
    let (connected, isolated): (Vec<usize>, Vec<usize>) =
        (0..g.node_count()).partition(|&a| g.neighbors(a).len() > 0);
    let mut bucket: BucketEntries = isolated
        .into_iter()
        .map(|i| (i, NonCommunityReason::Isolated))
        .collect();

    let mut nodes = Vec::new();
    if !connected.is_empty() {
        let (root, root_bucket) = grow(g, connected, cfg.seed, cfg)?;
        bucket.extend(root_bucket);
        if let Some(root) = root {
            flatten(root, None, &mut nodes);
        }
    }
    Ok((
        ClusterTree { nodes },
        NonCommunityBucket::from_entries(bucket),
    ))
}

/// Serialized form of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub theta: f64,
    pub mod_threshold: f64,
    pub max_size: usize,
    pub seed: u64,
    pub nodes: Vec<NodeDocument>,
    pub non_community: BucketDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub members: Vec<String>,
    pub split_modularity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketDocument {
    pub members: Vec<String>,
    /// Keyed by item id, in `members` order.
    #[serde(serialize_with = "ordered_reasons", deserialize_with = "reasons_map")]
    pub reasons: Vec<(String, NonCommunityReason)>,
}

fn ordered_reasons<S: Serializer>(
    reasons: &[(String, NonCommunityReason)],
    s: S,
) -> Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(Some(reasons.len()))?;
    for (id, reason) in reasons {
        map.serialize_entry(id, reason)?;
    }
    map.end()
}

fn reasons_map<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<Vec<(String, NonCommunityReason)>, D::Error> {
    let map = BTreeMap::<String, NonCommunityReason>::deserialize(d)?;
    Ok(map.into_iter().collect())
}

impl TreeDocument {
    pub fn new(
        tree: &ClusterTree,
        bucket: &NonCommunityBucket,
        ids: &[String],
        theta: f64,
        cfg: &ClusterConfig,
    ) -> Self {
        let names = |items: &[usize]| items.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| NodeDocument {
                id: n.id,
                parent: n.parent,
                children: n.children.clone(),
                members: names(&n.members),
                split_modularity: n.split_modularity,
            })
            .collect();
        let bucket_members: Vec<usize> = bucket.members().collect();
        Self {
            theta,
            mod_threshold: cfg.mod_threshold,
            max_size: cfg.max_size,
            seed: cfg.seed,
            nodes,
            non_community: BucketDocument {
                members: names(&bucket_members),
                reasons: bucket
                    .entries()
                    .iter()
                    .map(|&(i, r)| (ids[i].clone(), r))
                    .collect(),
            },
        }
    }

    /// Member id lists of the leaves, in depth-first order.
    pub fn leaf_members(&self) -> Vec<Vec<String>> {
        self.nodes
            .iter()
            .filter(|n| n.children.is_empty())
            .map(|n| n.members.clone())
            .collect()
    }

    /// Reorders `reasons` to follow `members`, as after a round trip.
    pub fn normalize(&mut self) {
        let order: std::collections::HashMap<&str, usize> = self
            .non_community
            .members
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut reasons = std::mem::take(&mut self.non_community.reasons);
        reasons.sort_by_key(|(id, _)| order.get(id.as_str()).copied().unwrap_or(usize::MAX));
        self.non_community.reasons = reasons;
    }
}
