pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod dataflow;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod tokenize;
pub mod train;
pub mod visualize;

pub use config::TrainingConfig;
pub use error::{Error, Result};
pub use scalar::{MetricScalar, Scalar};

pub type Metrics = eval::MetricsReport<f64>;
pub type ExactMetrics = eval::MetricsReport<num_rational::Ratio<i64>>;
pub type Projection = contrastive::ProjectionHead<f32>;
pub type Classifier = classify::ClassifierHead<f32>;
pub type Embeddings = visualize::EmbeddingDump<f32>;
