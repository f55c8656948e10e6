//! Clustering of term and document embeddings through community detection.
//!
//! The pipeline turns an [`EmbeddingSet`] into a thresholded cosine-similarity
//! graph ([`simgraph`]), splits it recursively with Louvain modularity
//! optimization ([`community`], [`hierarchy`]) and scores the resulting
//! clusters by purity against gold labels ([`eval`]).
//!
//! ```no_run
//! use std::path::Path;
//! use vec2gc::{build_graph, flat_clusters, load_embeddings, vec2gc_cluster, ClusterConfig, Format};
//!
//! let emb = load_embeddings(Path::new("docs.jsonl"), Format::Jsonl)?;
//! let graph = build_graph(&emb, 0.7, 0)?;
//! let (tree, noise) = vec2gc_cluster(&graph, &ClusterConfig { seed: 42, ..Default::default() })?;
//! println!("{} clusters, {} noise items", flat_clusters(&tree).len(), noise.len());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod cli;
pub mod community;
pub mod embedding_io;
pub mod eval;
pub mod hierarchy;
mod parallel;
pub mod simgraph;

pub use community::{louvain, modularity, CommunityError, LouvainConfig, Partition};
pub use embedding_io::{
    load_embeddings, load_labels, read_embeddings, read_labels, EmbeddingError, EmbeddingSet,
    Format, Labels,
};
pub use eval::{cluster_purity, kmedoids, purity_report, EvalError, PurityReport};
pub use hierarchy::{
    flat_clusters, vec2gc_cluster, ClusterConfig, ClusterTree, HierarchyError, LeafKind,
    NonCommunityBucket, NonCommunityReason, TreeDocument,
};
pub use simgraph::{build_graph, cosine_similarity, edge_weight, GraphError, SimilarityGraph};
