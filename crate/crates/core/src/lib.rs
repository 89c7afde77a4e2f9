//! Any-resolution image tiling and the bookkeeping around it: grid
//! selection, token layouts, tile-local box coordinates, data-mixture
//! sampling, benchmark score aggregation and corpus-level statistics.

pub mod coords;
pub mod corpus;
pub mod layout;
pub mod mixture;
pub mod scoring;
pub mod strategy;
pub mod tiler;

pub use coords::{box_iou, CoordError, Frame, NormBox, NormPoint, Quantizer, Visibility};
pub use corpus::{
    corpus_stats, corpus_stats_sharded, read_manifest, synth_corpus, write_manifest, CorpusError,
    ManifestReader, RecordManifest, StatsConfig, StatsReport,
};
pub use layout::{
    assemble, frame_plan, plan_record, token_budget, FramePlan, LayoutError, TokenLayout,
};
pub use mixture::{
    empirical_report, plan_batches, resolve_weights, BatchPlan, MixtureError, MixtureSpec,
};
pub use scoring::{
    score_report, Benchmark, Category, MetricSet, ScoreError, ScoreReport, ScoringConfig,
};
pub use strategy::{DynamicGrid, GridStrategy, SingleFrame, StaticGrid, StrategyRegistry};
pub use tiler::{
    candidate_grids, effective_resolution, plan_for_grid, select_grid, Branch, GridSpec,
    IndicatorMode, OverviewPosition, SplitConfig, TileError, TilePlan,
};
