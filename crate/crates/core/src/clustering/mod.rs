//! Clustering with associative memories: training through rolled-out
//! dynamics, assignment, evaluation metrics and a k-means baseline.

mod dataset;
mod kmeans;
pub mod metrics;
mod train;

pub use dataset::{blobs, nearest, random_blobs, Dataset};
pub use kmeans::{kmeans, kmeans_plus_plus, lloyd, KMeansResult};
pub use metrics::MetricReport;
pub use train::{
    assign_hard, assign_nearest, assign_soft, quantization_error, rollout_loss_and_grad, rollout_loss_on_tape,
    train_clam, train_clam_elbo, Assignment, ElboTrainReport, Init, TrainConfig, TrainReport,
};
