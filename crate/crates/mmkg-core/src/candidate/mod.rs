//! Alignment candidate generation for visual entities.
//!
//! The centerpiece is a spectral pipeline: score pairwise affinities
//! between context-pool entities (embedding cosine × LLM-assessed
//! relation weight), embed the pool through the smallest eigenvectors of
//! the graph Laplacian, density-cluster the rows, and hand back the
//! cluster(s) closest to the visual entity. Six simpler strategies are
//! available for comparison, all behind the same [`generate_candidates`]
//! entry point.

mod affinity;
mod dbscan;
mod leiden;
mod pool;
mod select;
mod spectral;
mod strategies;

pub use affinity::{build_affinity, laplacian, parse_weight, relation_weights, AffinityMatrix};
pub use dbscan::{cluster_rows, default_eps, ClusterPartition};
pub use leiden::leiden_communities;
pub use pool::{context_entity_pool, embedding_text, ContextPool};
pub use select::{
    cluster_scores, select_clusters, select_clusters_knn, SelectMode, DEFAULT_SCORE_DELTA,
};
pub use spectral::{choose_m, smallest_eigenvectors, SpectralEmbedding};
pub use strategies::{
    generate_candidates, kmeans_clusters, personalized_pagerank, CandidateParams, Strategy,
};
