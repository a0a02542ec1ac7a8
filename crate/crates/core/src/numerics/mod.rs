//! Seeded numerical engines: dense linear algebra, PCA, k-means++ and
//! spectral clustering.

pub mod kmeans;
pub mod linalg;
pub mod pca;
pub mod spectral;
pub mod stats;

pub use kmeans::{kmeans_pp, ClusterAssignment, KMeans};
pub use linalg::{symmetric_eigen, Matrix, SymmetricEigen};
pub use pca::{pca_fit, PcaModel};
pub use spectral::{spectral_cluster, spectral_cluster_affinity};
pub use stats::{average_ranks, pearson, spearman};
