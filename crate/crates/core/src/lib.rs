//! Aggregation of convolutional feature tensors into compact image
//! descriptors with cross-dimensional (spatial and channel) weighting, plus
//! the retrieval machinery around it: PCA whitening, exhaustive search,
//! average query expansion and mAP evaluation.
//!
//! The usual flow is
//!
//! 1. read `.crowt` tensors ([`crowt`]),
//! 2. aggregate them with [`aggregation::run_pipeline`] under a
//!    [`PipelineConfig`] preset,
//! 3. fit a [`WhiteningModel`] on a disjoint set and re-run with it,
//! 4. index the final descriptors and evaluate with [`evaluator::evaluate`].

pub mod aggregation;
pub mod config;
pub mod crowd;
pub mod crowt;
pub mod error;
pub mod evaluator;
pub mod norm;
pub mod search;
pub mod synthetic;
pub mod tensor;
pub mod weighting;
pub mod whitening;

pub use aggregation::{
    pnorm, run_pipeline, sum_aggregate, weight_tensor, ChannelScheme, Descriptor, PipelineConfig,
    SourceLayer, SpatialScheme, Stage,
};
pub use error::{CrowError, Result};
pub use evaluator::{average_precision, evaluate, EvalReport, GroundTruth};
pub use norm::NormOrder;
pub use search::{build_index, query, query_expand, Index, RankedList};
pub use tensor::{local_pool, FeatureTensor, PoolKind, PoolingSpec};
pub use weighting::{
    centering_prior, channel_sparsities, channel_weights, spatial_weights, uniform_channel,
    uniform_spatial, ChannelWeights, SpatialNormSpec, SpatialWeightMap,
};
pub use whitening::{apply_whitening, finalize, fit_whitening, WhiteningModel, WhiteningParams};
