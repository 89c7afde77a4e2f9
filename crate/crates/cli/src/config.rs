//! Optional TOML settings file. Any key present here wins over the
//! corresponding command-line flag.
//!
//! ```toml
//! seed = 7
//! strategy = "dynamic"
//! shards = 8
//!
//! [split]
//! encoder_edge = 672
//! min_tiles = 4
//! max_tiles = 9
//! indicator_mode = "seps"
//!
//! [scoring]
//! refcoco_splits = 5
//! ```

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use anyres::tiler::{IndicatorMode, OverviewPosition, SplitConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub shards: Option<usize>,
    #[serde(default)]
    pub split: SplitOverrides,
    #[serde(default)]
    pub scoring: ScoringOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitOverrides {
    pub encoder_edge: Option<u32>,
    pub min_tiles: Option<u32>,
    pub max_tiles: Option<u32>,
    pub tokens_per_tile: Option<u32>,
    pub indicator_mode: Option<IndicatorMode>,
    pub overview_position: Option<OverviewPosition>,
    pub multi_image_split_threshold: Option<u32>,
    pub indicator_tokens: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringOverrides {
    pub refcoco_splits: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply_split(&self, cfg: &mut SplitConfig) {
        let s = &self.split;
        macro_rules! take {
            ($($field:ident),*) => {$( if let Some(v) = s.$field { cfg.$field = v; } )*};
        }
        take!(
            encoder_edge,
            min_tiles,
            max_tiles,
            tokens_per_tile,
            indicator_mode,
            overview_position,
            multi_image_split_threshold,
            indicator_tokens
        );
    }
}
