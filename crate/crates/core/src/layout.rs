//! Token-sequence layout for one training record.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strategy::{GridStrategy, SingleFrame};
use crate::tiler::{IndicatorMode, OverviewPosition, SplitConfig, TileError, TilePlan};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("no images to lay out")]
    Empty,
    #[error("image {image}: plan uses {plan_edge}px/{plan_tokens} tokens per tile, config uses {cfg_edge}px/{cfg_tokens}")]
    InconsistentPlan {
        image: usize,
        plan_edge: u32,
        plan_tokens: u32,
        cfg_edge: u32,
        cfg_tokens: u32,
    },
    #[error("frame plan needs at least one source frame and one sample (got {source_frames}, {samples})")]
    InvalidFrameCount { source_frames: u64, samples: u64 },
    #[error(transparent)]
    Tile(#[from] TileError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    TileTokens,
    OverviewTokens,
    Indicator,
}

/// One run of tokens. `row`/`col` are one-based; the overview uses `(0, 0)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub image: usize,
    pub row: u32,
    pub col: u32,
    pub tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub segments: Vec<Segment>,
    pub total_tokens: u64,
    pub images: usize,
}

impl TokenLayout {
    pub fn indicator_texts(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| s.text.as_deref())
            .collect()
    }
}

/// Where indicator text goes around tile and overview runs.
///
/// Implementations only decide the text; [`assemble`] decides run order.
pub trait IndicatorStyle: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Indicator emitted right before tile `(row, col)` of image `image`.
    fn before_tile(&self, image: usize, row: u32, col: u32) -> Option<String>;

    /// Indicator emitted right before the overview run of image `image`.
    fn before_overview(&self, image: usize) -> Option<String>;
}

#[derive(Debug)]
pub struct NoIndicators;

impl IndicatorStyle for NoIndicators {
    fn name(&self) -> &'static str {
        "none"
    }

    fn before_tile(&self, _: usize, _: u32, _: u32) -> Option<String> {
        None
    }

    fn before_overview(&self, _: usize) -> Option<String> {
        None
    }
}

/// `(k,i,j)` tuples; `(k,0,0)` marks the overview.
#[derive(Debug)]
pub struct IndexIndicators;

impl IndicatorStyle for IndexIndicators {
    fn name(&self) -> &'static str {
        "index"
    }

    fn before_tile(&self, image: usize, row: u32, col: u32) -> Option<String> {
        Some(format!("({image},{row},{col})"))
    }

    fn before_overview(&self, image: usize) -> Option<String> {
        Some(format!("({image},0,0)"))
    }
}

/// `,` between columns, `<n>` between rows, `:` before the overview.
#[derive(Debug)]
pub struct SeparatorIndicators;

impl IndicatorStyle for SeparatorIndicators {
    fn name(&self) -> &'static str {
        "seps"
    }

    fn before_tile(&self, _: usize, row: u32, col: u32) -> Option<String> {
        match (row, col) {
            (1, 1) => None,
            (_, 1) => Some("<n>".to_string()),
            _ => Some(",".to_string()),
        }
    }

    fn before_overview(&self, _: usize) -> Option<String> {
        Some(":".to_string())
    }
}

static NONE: NoIndicators = NoIndicators;
static INDEX: IndexIndicators = IndexIndicators;
static SEPS: SeparatorIndicators = SeparatorIndicators;

impl IndicatorMode {
    pub fn style(self) -> &'static dyn IndicatorStyle {
        match self {
            IndicatorMode::None => &NONE,
            IndicatorMode::Index => &INDEX,
            IndicatorMode::Seps => &SEPS,
        }
    }
}

/// Lays out the token runs of one record's images in order.
///
/// Images with grid `(1,1)` contribute a single tile run and no indicators.
pub fn assemble(plans: &[TilePlan], cfg: &SplitConfig) -> Result<TokenLayout, LayoutError> {
    assemble_with(plans, cfg, cfg.indicator_mode.style())
}

pub fn assemble_with(
    plans: &[TilePlan],
    cfg: &SplitConfig,
    style: &dyn IndicatorStyle,
) -> Result<TokenLayout, LayoutError> {
    if plans.is_empty() {
        return Err(LayoutError::Empty);
    }
    let mut segments = Vec::new();
    for (k, plan) in plans.iter().enumerate() {
        if plan.tokens_per_tile != cfg.tokens_per_tile || plan.tile_edge != cfg.encoder_edge {
            return Err(LayoutError::InconsistentPlan {
                image: k,
                plan_edge: plan.tile_edge,
                plan_tokens: plan.tokens_per_tile,
                cfg_edge: cfg.encoder_edge,
                cfg_tokens: cfg.tokens_per_tile,
            });
        }
        emit_image(k, plan, cfg, style, &mut segments);
    }
    let total_tokens = segments.iter().map(|s| s.tokens as u64).sum();
    Ok(TokenLayout {
        segments,
        total_tokens,
        images: plans.len(),
    })
}

fn emit_image(
    k: usize,
    plan: &TilePlan,
    cfg: &SplitConfig,
    style: &dyn IndicatorStyle,
    out: &mut Vec<Segment>,
) {
    let marked = !plan.grid.is_single();
    let indicator = |text: String, row: u32, col: u32| Segment {
        kind: SegmentKind::Indicator,
        image: k,
        row,
        col,
        tokens: cfg.indicator_tokens,
        text: Some(text),
    };
    let overview = |out: &mut Vec<Segment>| {
        if !plan.include_overview {
            return;
        }
        if let Some(t) = style.before_overview(k) {
            out.push(indicator(t, 0, 0));
        }
        out.push(Segment {
            kind: SegmentKind::OverviewTokens,
            image: k,
            row: 0,
            col: 0,
            tokens: plan.tokens_per_tile,
            text: None,
        });
    };

    if cfg.overview_position == OverviewPosition::Before {
        overview(out);
    }
    for row in 1..=plan.grid.rows {
        for col in 1..=plan.grid.cols {
            if marked {
                if let Some(t) = style.before_tile(k, row, col) {
                    out.push(indicator(t, row, col));
                }
            }
            out.push(Segment {
                kind: SegmentKind::TileTokens,
                image: k,
                row,
                col,
                tokens: plan.tokens_per_tile,
                text: None,
            });
        }
    }
    if cfg.overview_position == OverviewPosition::After {
        overview(out);
    }
}

/// Whether an image in a record of `image_count` images gets split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitDecision {
    Split,
    Single,
}

pub fn multi_image_policy(image_count: usize, cfg: &SplitConfig) -> Vec<SplitDecision> {
    let decision = if (image_count as u64) < cfg.multi_image_split_threshold as u64 {
        SplitDecision::Split
    } else {
        SplitDecision::Single
    };
    vec![decision; image_count]
}

/// Plans every image of a record, applying the multi-image policy.
/// `images` holds `(width, height)` pairs.
pub fn plan_record(
    images: &[(u32, u32)],
    strategy: &dyn GridStrategy,
    cfg: &SplitConfig,
) -> Result<Vec<TilePlan>, TileError> {
    multi_image_policy(images.len(), cfg)
        .into_iter()
        .zip(images)
        .map(|(decision, &(w, h))| match decision {
            SplitDecision::Split => strategy.plan(h, w, cfg),
            SplitDecision::Single => SingleFrame.plan(h, w, cfg),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub tile_runs: u64,
    pub overview_runs: u64,
    pub indicators: u64,
    pub image_tokens: u64,
    pub indicator_tokens: u64,
    pub total_tokens: u64,
}

pub fn token_budget(layout: &TokenLayout) -> TokenBudget {
    let mut b = TokenBudget::default();
    for s in &layout.segments {
        let t = s.tokens as u64;
        match s.kind {
            SegmentKind::TileTokens => {
                b.tile_runs += 1;
                b.image_tokens += t;
            }
            SegmentKind::OverviewTokens => {
                b.overview_runs += 1;
                b.image_tokens += t;
            }
            SegmentKind::Indicator => {
                b.indicators += 1;
                b.indicator_tokens += t;
            }
        }
    }
    b.total_tokens = b.image_tokens + b.indicator_tokens;
    b
}

/// Uniformly sampled video frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub source_frames: u64,
    pub sampled: Vec<u64>,
    pub tokens_per_frame: u32,
}

impl FramePlan {
    pub fn total_tokens(&self) -> u64 {
        self.sampled.len() as u64 * self.tokens_per_frame as u64
    }
}

pub const DEFAULT_VIDEO_FRAMES: u64 = 24;
pub const DEFAULT_TOKENS_PER_FRAME: u32 = 144;

/// `indices[i] = floor(i·M/N)`. Short videos repeat frames.
pub fn frame_plan(source_frames: u64, samples: u64) -> Result<FramePlan, LayoutError> {
    if source_frames == 0 || samples == 0 {
        return Err(LayoutError::InvalidFrameCount {
            source_frames,
            samples,
        });
    }
    let sampled = (0..samples)
        .map(|i| (i as u128 * source_frames as u128 / samples as u128) as u64)
        .collect();
    Ok(FramePlan {
        source_frames,
        sampled,
        tokens_per_frame: DEFAULT_TOKENS_PER_FRAME,
    })
}

/// Frames go in as unsplit images, one run each.
pub fn video_layout(frames: &FramePlan) -> TokenLayout {
    let segments: Vec<Segment> = (0..frames.sampled.len())
        .map(|k| Segment {
            kind: SegmentKind::TileTokens,
            image: k,
            row: 1,
            col: 1,
            tokens: frames.tokens_per_frame,
            text: None,
        })
        .collect();
    TokenLayout {
        total_tokens: frames.total_tokens(),
        images: segments.len(),
        segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::StaticGrid;
    use crate::tiler::{plan_for_grid, GridSpec};

    fn cfg(mode: IndicatorMode, pos: OverviewPosition) -> SplitConfig {
        SplitConfig {
            indicator_mode: mode,
            overview_position: pos,
            ..SplitConfig::default()
        }
    }

    fn plan(rows: u32, cols: u32, c: &SplitConfig) -> TilePlan {
        plan_for_grid(1344, 1344, GridSpec { rows, cols }, c).unwrap()
    }

    #[test]
    fn static_two_by_two_is_720_tokens() {
        let c = cfg(IndicatorMode::None, OverviewPosition::After);
        let l = assemble(&[plan(2, 2, &c)], &c).unwrap();
        assert_eq!(l.segments.len(), 5);
        assert_eq!(l.total_tokens, 720);
        let b = token_budget(&l);
        assert_eq!(
            (b.image_tokens, b.indicator_tokens, b.total_tokens),
            (720, 0, 720)
        );
    }

    #[test]
    fn three_by_three_is_1440_image_tokens() {
        let c = cfg(IndicatorMode::None, OverviewPosition::After);
        let b = token_budget(&assemble(&[plan(3, 3, &c)], &c).unwrap());
        assert_eq!(b.image_tokens, 1440);
    }

    #[test]
    fn single_grid_has_no_overview_or_indicators() {
        for mode in [
            IndicatorMode::None,
            IndicatorMode::Index,
            IndicatorMode::Seps,
        ] {
            for pos in [OverviewPosition::Before, OverviewPosition::After] {
                let c = cfg(mode, pos);
                let l = assemble(&[plan(1, 1, &c)], &c).unwrap();
                assert_eq!(l.segments.len(), 1);
                assert_eq!(l.total_tokens, 144);
                assert_eq!(l.segments[0].kind, SegmentKind::TileTokens);
            }
        }
    }

    #[test]
    fn index_indicators_follow_row_major_then_overview() {
        let c = cfg(IndicatorMode::Index, OverviewPosition::After);
        let l = assemble(&[plan(2, 2, &c)], &c).unwrap();
        assert_eq!(
            l.indicator_texts(),
            vec!["(0,1,1)", "(0,1,2)", "(0,2,1)", "(0,2,2)", "(0,0,0)"]
        );
        // every indicator directly precedes its run
        for pair in l.segments.chunks(2) {
            assert_eq!(pair[0].kind, SegmentKind::Indicator);
            assert_ne!(pair[1].kind, SegmentKind::Indicator);
            assert_eq!((pair[0].row, pair[0].col), (pair[1].row, pair[1].col));
        }
    }

    #[test]
    fn index_tuples_carry_image_number() {
        let c = cfg(IndicatorMode::Index, OverviewPosition::Before);
        let l = assemble(&[plan(1, 2, &c), plan(2, 1, &c)], &c).unwrap();
        assert_eq!(
            l.indicator_texts(),
            vec!["(0,0,0)", "(0,1,1)", "(0,1,2)", "(1,0,0)", "(1,1,1)", "(1,2,1)"]
        );
    }

    #[test]
    fn separators_recover_grid_structure() {
        let c = cfg(IndicatorMode::Seps, OverviewPosition::After);
        let l = assemble(&[plan(2, 2, &c)], &c).unwrap();
        assert_eq!(l.indicator_texts(), vec![",", "<n>", ",", ":"]);
        assert_eq!(token_budget(&l).indicator_tokens, 4);
        let before = cfg(IndicatorMode::Seps, OverviewPosition::Before);
        let l = assemble(&[plan(2, 3, &before)], &before).unwrap();
        assert_eq!(l.indicator_texts(), vec![":", ",", ",", "<n>", ",", ","]);
        assert_eq!(l.segments[1].kind, SegmentKind::OverviewTokens);
    }

    #[test]
    fn indicator_cost_is_configurable() {
        let c = SplitConfig {
            indicator_tokens: 3,
            ..cfg(IndicatorMode::Index, OverviewPosition::After)
        };
        let b = token_budget(&assemble(&[plan(2, 2, &c)], &c).unwrap());
        assert_eq!(b.indicator_tokens, 15);
        assert_eq!(b.total_tokens, 735);
    }

    #[test]
    fn rejects_inconsistent_plans() {
        let c = SplitConfig::default();
        let other = SplitConfig {
            tokens_per_tile: 81,
            ..c.clone()
        };
        let err = assemble(&[plan(2, 2, &c), plan(2, 2, &other)], &c).unwrap_err();
        assert!(matches!(
            err,
            LayoutError::InconsistentPlan { image: 1, .. }
        ));
        assert_eq!(assemble(&[], &c).unwrap_err(), LayoutError::Empty);
    }

    #[test]
    fn multi_image_threshold() {
        let c = SplitConfig::default();
        assert_eq!(multi_image_policy(1, &c), vec![SplitDecision::Split]);
        assert_eq!(multi_image_policy(2, &c), vec![SplitDecision::Split; 2]);
        assert_eq!(multi_image_policy(3, &c), vec![SplitDecision::Single; 3]);
    }

    #[test]
    fn unsplit_images_cost_one_tile_each() {
        let c = SplitConfig::default();
        let s = StaticGrid::default();
        let plans = plan_record(&[(2000, 1500), (640, 480), (300, 3000)], &s, &c).unwrap();
        let l = assemble(&plans, &c).unwrap();
        assert_eq!(token_budget(&l).image_tokens, 3 * 144);
        let plans = plan_record(&[(2000, 1500), (640, 480)], &s, &c).unwrap();
        assert!(plans.iter().all(|p| p.total_subimages == 5));
    }

    #[test]
    fn frame_sampling() {
        let p = frame_plan(48, 24).unwrap();
        assert_eq!(p.sampled, (0..24).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(
            frame_plan(24, 24).unwrap().sampled,
            (0..24).collect::<Vec<_>>()
        );
        let short = frame_plan(10, 24).unwrap();
        assert_eq!(short.sampled.len(), 24);
        let mut seen = short.sampled.clone();
        seen.dedup();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(frame_plan(0, 24).is_err());
        assert!(frame_plan(10, 0).is_err());
    }

    #[test]
    fn video_is_flat_runs() {
        let l = video_layout(&frame_plan(300, 24).unwrap());
        assert_eq!(l.images, 24);
        assert_eq!(l.total_tokens, 24 * 144);
    }
}
