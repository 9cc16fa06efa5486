//! Library crate for the unfair-ToS sentence pipeline: corpus handling,
//! a small trainable text encoder, layer-wise embedding pooling, minority
//! oversampling, an RBF-kernel SVC, cross-validated model selection, and
//! report aggregation.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod pooling;
pub mod resample;
pub mod seed;
pub mod selection;
pub mod svc;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{
    synthesize_corpus, train_test_split, Category, Corpus, CorpusFormat, LabeledSentence,
    SplitSpec, StratifyOn, Tags,
};
pub use encoder::{
    encode, finetune_base, finetune_base_traced, gradient_check, gradient_check_detailed,
    gradient_check_with_head, init_encoder, parse_head_spec, pretrain_mlm, pretrain_mlm_traced,
    tokenize, EncoderConfig, EncoderModel, FineTuneConfig, FinetuneTrace, HeadLayer, HeadParams,
    HeadSpec, LayerTensor, PretrainTrace, Vocabulary,
};
pub use error::{Error, Result};
pub use pooling::{
    load_external_embeddings, pool, pool_corpus, write_embeddings, PooledVector, PoolingMode,
};
pub use resample::{nearest_neighbors, smote, synthesize_point, Origin, SampleSet, SmoteConfig};
pub use seed::derive_seed;
pub use selection::{
    aggregate_reports, attach_test_metrics, compute_metrics, evaluate_fold, grid_search,
    grid_search_audited, render_binary_table, stratified_kfold, AggregateTable, AuditLog,
    ClassMetrics, Confusion, ExperimentReport, FitEvent, FitStage, GridOutcome, GridSpec, GroupBy,
    MetricSet, PipelineSpec, Provenance, Scoring, Stat,
};
pub use svc::{
    apply_scaler, fit_scaler, rbf_kernel, resolve_gamma, train_svc, train_svc_detailed, GammaSpec,
    Prediction, ScalerStats, SvcHyperparams, SvcModel,
};
