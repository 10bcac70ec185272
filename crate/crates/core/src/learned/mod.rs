//! Learned recovery: per-bin patch statistics, a linear featurizer, optional
//! multi-head attention across patches, and a zero-order-hold state-space
//! model per patch, trained with SI-SNR plus a multi-scale Mel loss.

mod attention;
mod features;
mod loss;
mod model;
mod serialize;
mod ssm;
mod train;

pub use attention::{spatial_aggregate, AttentionParams};
pub use features::{extract_patch_features, featurize, patch_statistics, patch_statistics_with, PatchFeatures, PatchStats, STAT_DIM};
pub use loss::{
    loss_sisnr, loss_spec, loss_spec_with, loss_total, sisnr_loss_grad, spec_loss_grad, total_loss_grad, LossBreakdown,
    SpecLossConfig, DEFAULT_BETA, LOG_FLOOR, SISNR_EPS,
};
pub use model::{forward_patches, forward_stats, loss_and_grad, model_forward, ModelConfig, ModelParams};
pub use serialize::{decode_model, encode_model, MODEL_MAGIC};
pub use ssm::{expm, ssm_discretize, ssm_forward, ssm_scan, SSMParams, SsmOutput};
pub use train::{
    auto_regions, load_samples, prepare_sample, smoothed_endpoints, train, train_with, write_loss_log, LossRecord,
    SampleConfig, TrainConfig, TrainOutcome, TrainSample, LOSS_LOG_HEADER,
};
