//! Grid enumeration and grid selection for any-resolution tiling.
//!
//! An input image of `h × w` pixels is longer-side resized onto a canvas of
//! `rows·r × cols·r` pixels (top-left anchored, padded bottom/right) and cut
//! into `r × r` tiles. Selection has two branches:
//!
//! * **cover**: some grid holds the image without shrinking it. Among those,
//!   pick the grid with the least padding area `rows·cols·r² − s²·h·w`.
//! * **downscale**: no grid covers the image. Pick the grid with the largest
//!   scale `s`, i.e. the smallest resolution loss `h·w·(1 − s²)`.
//!
//! All comparisons are done on exact integer fractions.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on `max_tiles`; keeps the exact objective arithmetic in `i128`.
pub const MAX_TILES_LIMIT: u32 = 4096;
/// Upper bound on the encoder edge `r`.
pub const MAX_ENCODER_EDGE: u32 = 65_536;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TileError {
    #[error(
        "invalid grid range: min {min}, max {max} (need 1 <= min <= max <= {MAX_TILES_LIMIT})"
    )]
    InvalidRange { min: u32, max: u32 },
    #[error("invalid image dimensions {h}x{w}: both sides must be positive")]
    InvalidDimensions { h: u32, w: u32 },
    #[error("invalid split config: {0}")]
    InvalidConfig(String),
    #[error("invalid grid `{0}`: expected ROWSxCOLS with positive integers")]
    InvalidGrid(String),
    #[error("unknown grid strategy `{0}`")]
    UnknownStrategy(String),
}

/// A `rows × cols` tile grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
}

impl GridSpec {
    pub fn new(rows: u32, cols: u32) -> Result<Self, TileError> {
        if rows == 0 || cols == 0 {
            return Err(TileError::InvalidGrid(format!("{rows}x{cols}")));
        }
        Ok(Self { rows, cols })
    }

    pub const fn single() -> Self {
        Self { rows: 1, cols: 1 }
    }

    pub fn tile_count(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
        }
    }

    pub fn is_single(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridSpec {
    type Err = TileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TileError::InvalidGrid(s.to_string());
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        GridSpec::new(rows, cols).map_err(|_| bad())
    }
}

/// How tile positions are marked in the token sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorMode {
    None,
    #[default]
    Index,
    Seps,
}

impl FromStr for IndicatorMode {
    type Err = TileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "index" => Ok(Self::Index),
            "seps" => Ok(Self::Seps),
            _ => Err(TileError::InvalidConfig(format!(
                "unknown indicator mode `{s}`"
            ))),
        }
    }
}

impl fmt::Display for IndicatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Index => "index",
            Self::Seps => "seps",
        })
    }
}

/// Where the overview image goes relative to an image's tiles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverviewPosition {
    Before,
    #[default]
    After,
}

impl FromStr for OverviewPosition {
    type Err = TileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "before" => Ok(Self::Before),
            "after" => Ok(Self::After),
            _ => Err(TileError::InvalidConfig(format!(
                "unknown overview position `{s}`"
            ))),
        }
    }
}

impl fmt::Display for OverviewPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Before => "before",
            Self::After => "after",
        })
    }
}

/// Tiling and layout parameters.
///
/// The default is the final training recipe: 672 px encoder, grids with 4 to
/// 9 tiles, 144 tokens per sub-image, index indicators, overview after the
/// tiles, splitting only for records with fewer than 3 images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Encoder input edge `r` in pixels.
    pub encoder_edge: u32,
    pub min_tiles: u32,
    pub max_tiles: u32,
    pub tokens_per_tile: u32,
    pub indicator_mode: IndicatorMode,
    pub overview_position: OverviewPosition,
    pub multi_image_split_threshold: u32,
    /// Token cost of one indicator (an index tuple or one separator symbol).
    pub indicator_tokens: u32,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            encoder_edge: 672,
            min_tiles: 4,
            max_tiles: 9,
            tokens_per_tile: 144,
            indicator_mode: IndicatorMode::Index,
            overview_position: OverviewPosition::After,
            multi_image_split_threshold: 3,
            indicator_tokens: 1,
        }
    }
}

impl SplitConfig {
    pub fn new(encoder_edge: u32, min_tiles: u32, max_tiles: u32) -> Result<Self, TileError> {
        let cfg = Self {
            encoder_edge,
            min_tiles,
            max_tiles,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TileError> {
        check_range(self.min_tiles, self.max_tiles)?;
        if self.encoder_edge == 0 || self.encoder_edge > MAX_ENCODER_EDGE {
            return Err(TileError::InvalidConfig(format!(
                "encoder edge must be in 1..={MAX_ENCODER_EDGE}, got {}",
                self.encoder_edge
            )));
        }
        if self.tokens_per_tile == 0 {
            return Err(TileError::InvalidConfig(
                "tokens_per_tile must be positive".into(),
            ));
        }
        if self.multi_image_split_threshold == 0 {
            return Err(TileError::InvalidConfig(
                "multi_image_split_threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Same config with a different grid range, e.g. to train at (4,4) and
    /// run inference at (4,9).
    pub fn override_grid_range(&self, min_tiles: u32, max_tiles: u32) -> Result<Self, TileError> {
        check_range(min_tiles, max_tiles)?;
        Ok(Self {
            min_tiles,
            max_tiles,
            ..self.clone()
        })
    }
}

fn check_range(min: u32, max: u32) -> Result<(), TileError> {
    if min < 1 || min > max || max > MAX_TILES_LIMIT {
        return Err(TileError::InvalidRange { min, max });
    }
    Ok(())
}

/// Every grid with `min <= rows·cols <= max`, ordered by `(tile_count, rows, cols)`.
pub fn candidate_grids(min: u32, max: u32) -> Result<Vec<GridSpec>, TileError> {
    check_range(min, max)?;
    let mut grids = Vec::new();
    for count in min..=max {
        for rows in 1..=count {
            if count % rows == 0 {
                grids.push(GridSpec {
                    rows,
                    cols: count / rows,
                });
            }
        }
    }
    Ok(grids)
}

/// Exact positive scale factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scale {
    pub num: u64,
    pub den: u64,
}

impl Scale {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn at_least_one(&self) -> bool {
        self.num >= self.den
    }
}

impl PartialOrd for Scale {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scale {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Cover,
    Downscale,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cover => "cover",
            Self::Downscale => "downscale",
        })
    }
}

/// Resized content size and the bottom/right padding up to the grid canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizePlan {
    pub scale: Scale,
    pub resized_h: u32,
    pub resized_w: u32,
    pub pad_bottom: u32,
    pub pad_right: u32,
}

/// Pixel rectangle on the padded canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl TileRect {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub source_h: u32,
    pub source_w: u32,
    pub grid: GridSpec,
    pub branch: Branch,
    pub resize: ResizePlan,
    /// Row-major tile rectangles, each `tile_edge × tile_edge`.
    pub tiles: Vec<TileRect>,
    pub include_overview: bool,
    pub total_subimages: u32,
    pub tile_edge: u32,
    pub tokens_per_tile: u32,
}

impl TilePlan {
    pub fn tile_count(&self) -> u32 {
        self.grid.tile_count()
    }

    pub fn canvas_h(&self) -> u32 {
        self.grid.rows * self.tile_edge
    }

    pub fn canvas_w(&self) -> u32 {
        self.grid.cols * self.tile_edge
    }

    /// Padding area on the canvas, from the rounded resize.
    pub fn padding_area(&self) -> u64 {
        self.canvas_h() as u64 * self.canvas_w() as u64
            - self.resize.resized_h as u64 * self.resize.resized_w as u64
    }

    /// Real-valued objective of the plan's branch: padding area for cover,
    /// resolution loss `h·w·(1 − s²)` for downscale.
    pub fn objective(&self) -> f64 {
        grid_fit(self.source_h, self.source_w, self.grid, self.tile_edge).objective_value()
    }

    /// Image tokens this image contributes, overview included.
    pub fn image_tokens(&self) -> u64 {
        self.total_subimages as u64 * self.tokens_per_tile as u64
    }
}

/// Geometry of one image against one grid, with exact objective terms.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GridFit {
    pub grid: GridSpec,
    pub scale: Scale,
    /// Source side not limiting the scale.
    other: u64,
    source_area: u64,
    canvas_area: u64,
}

impl GridFit {
    pub fn covers(&self) -> bool {
        self.scale.at_least_one()
    }

    /// `canvas_area − s²·h·w` as an exact fraction `(num, den)`.
    ///
    /// With `s = p/q` where `q` is the limiting source side and `o` the other
    /// side, `s²·h·w = p²·o/q`.
    pub fn padding(&self) -> (i128, i128) {
        let p = self.scale.num as i128;
        let q = self.scale.den as i128;
        let num = self.canvas_area as i128 * q - p * p * self.other as i128;
        (num, q)
    }

    /// `h·w − s²·h·w` as an exact fraction.
    pub fn resolution_loss(&self) -> (i128, i128) {
        let p = self.scale.num as i128;
        let q = self.scale.den as i128;
        (self.source_area as i128 * q - p * p * self.other as i128, q)
    }

    pub fn objective_value(&self) -> f64 {
        let (n, d) = if self.covers() {
            self.padding()
        } else {
            self.resolution_loss()
        };
        n as f64 / d as f64
    }

    /// `max(x, 1/x)` with `x = (cols/rows) / (w/h)`, as `(big, small)`.
    fn aspect_distance(&self, h: u32, w: u32) -> (u128, u128) {
        let a = self.grid.cols as u128 * h as u128;
        let b = self.grid.rows as u128 * w as u128;
        if a >= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

pub(crate) fn grid_fit(h: u32, w: u32, grid: GridSpec, edge: u32) -> GridFit {
    let canvas_h = grid.rows as u64 * edge as u64;
    let canvas_w = grid.cols as u64 * edge as u64;
    // s = min(canvas_h / h, canvas_w / w)
    let (scale, other) = if canvas_h as u128 * w as u128 <= canvas_w as u128 * h as u128 {
        (
            Scale {
                num: canvas_h,
                den: h as u64,
            },
            w as u64,
        )
    } else {
        (
            Scale {
                num: canvas_w,
                den: w as u64,
            },
            h as u64,
        )
    };
    GridFit {
        grid,
        scale,
        other,
        source_area: h as u64 * w as u64,
        canvas_area: canvas_h * canvas_w,
    }
}

fn cmp_frac(a: (i128, i128), b: (i128, i128)) -> Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

fn cmp_aspect(a: (u128, u128), b: (u128, u128)) -> Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

/// Round `num / den` half away from zero (operands nonnegative).
fn round_div(num: u128, den: u128) -> u128 {
    (2 * num + den) / (2 * den)
}

fn check_dims(h: u32, w: u32) -> Result<(), TileError> {
    if h == 0 || w == 0 {
        return Err(TileError::InvalidDimensions { h, w });
    }
    Ok(())
}

/// Builds the full plan for a known grid.
pub fn plan_for_grid(
    h: u32,
    w: u32,
    grid: GridSpec,
    cfg: &SplitConfig,
) -> Result<TilePlan, TileError> {
    check_dims(h, w)?;
    cfg.validate()?;
    if grid.rows == 0 || grid.cols == 0 {
        return Err(TileError::InvalidGrid(grid.to_string()));
    }
    Ok(build_plan(
        h,
        w,
        &grid_fit(h, w, grid, cfg.encoder_edge),
        cfg,
    ))
}

fn build_plan(h: u32, w: u32, fit: &GridFit, cfg: &SplitConfig) -> TilePlan {
    let edge = cfg.encoder_edge;
    let grid = fit.grid;
    let canvas_h = grid.rows * edge;
    let canvas_w = grid.cols * edge;
    let s = fit.scale;
    let rh = round_div(s.num as u128 * h as u128, s.den as u128) as u32;
    let rw = round_div(s.num as u128 * w as u128, s.den as u128) as u32;
    let resized_h = rh.clamp(1, canvas_h);
    let resized_w = rw.clamp(1, canvas_w);

    let mut tiles = Vec::with_capacity(grid.tile_count() as usize);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            tiles.push(TileRect {
                x: col * edge,
                y: row * edge,
                width: edge,
                height: edge,
            });
        }
    }
    let include_overview = !grid.is_single();
    TilePlan {
        source_h: h,
        source_w: w,
        grid,
        branch: if fit.covers() {
            Branch::Cover
        } else {
            Branch::Downscale
        },
        resize: ResizePlan {
            scale: s,
            resized_h,
            resized_w,
            pad_bottom: canvas_h - resized_h,
            pad_right: canvas_w - resized_w,
        },
        tiles,
        include_overview,
        total_subimages: grid.tile_count() + include_overview as u32,
        tile_edge: edge,
        tokens_per_tile: cfg.tokens_per_tile,
    }
}

/// Chooses the grid for an `h × w` image over `cfg`'s grid range.
///
/// Ties are broken by fewer tiles, then by closeness of the grid aspect to
/// the image aspect in log space, then by enumeration order.
pub fn select_grid(h: u32, w: u32, cfg: &SplitConfig) -> Result<TilePlan, TileError> {
    check_dims(h, w)?;
    cfg.validate()?;
    let grids = candidate_grids(cfg.min_tiles, cfg.max_tiles)?;
    let fits: Vec<GridFit> = grids
        .iter()
        .map(|&g| grid_fit(h, w, g, cfg.encoder_edge))
        .collect();
    let any_cover = fits.iter().any(GridFit::covers);

    let tie_break = |a: &GridFit, b: &GridFit| {
        a.grid
            .tile_count()
            .cmp(&b.grid.tile_count())
            .then_with(|| cmp_aspect(a.aspect_distance(h, w), b.aspect_distance(h, w)))
    };

    let mut best: Option<&GridFit> = None;
    for fit in fits.iter().filter(|f| !any_cover || f.covers()) {
        let better = match best {
            None => true,
            Some(cur) => {
                let primary = if any_cover {
                    cmp_frac(fit.padding(), cur.padding())
                } else {
                    cur.scale.cmp(&fit.scale)
                };
                // strict: equal keys keep the earlier grid
                primary.then_with(|| tie_break(fit, cur)) == Ordering::Less
            }
        };
        if better {
            best = Some(fit);
        }
    }
    let best = best.expect("candidate set is never empty for a valid range");
    Ok(build_plan(h, w, best, cfg))
}

/// Pixel area handed to the encoder across tiles (overview excluded), in MP.
pub fn effective_resolution(plan: &TilePlan) -> f64 {
    plan.tile_count() as f64 * (plan.tile_edge as f64).powi(2) / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(r: u32, min: u32, max: u32) -> SplitConfig {
        SplitConfig::new(r, min, max).unwrap()
    }

    #[test]
    fn enumerates_products_of_four() {
        let g = candidate_grids(4, 4).unwrap();
        assert_eq!(
            g,
            vec![
                GridSpec { rows: 1, cols: 4 },
                GridSpec { rows: 2, cols: 2 },
                GridSpec { rows: 4, cols: 1 }
            ]
        );
        assert_eq!(candidate_grids(1, 1).unwrap(), vec![GridSpec::single()]);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(matches!(
            candidate_grids(5, 4),
            Err(TileError::InvalidRange { .. })
        ));
        assert!(matches!(
            candidate_grids(0, 4),
            Err(TileError::InvalidRange { .. })
        ));
        assert!(SplitConfig::new(672, 3, 2).is_err());
        assert!(SplitConfig::new(0, 1, 2).is_err());
    }

    #[test]
    fn native_resolution_is_identity() {
        let p = select_grid(672, 672, &cfg(672, 1, 9)).unwrap();
        assert_eq!(p.grid, GridSpec::single());
        assert_eq!(p.branch, Branch::Cover);
        assert_eq!(p.resize.scale.value(), 1.0);
        assert_eq!(p.padding_area(), 0);
        assert!(!p.include_overview);
        assert_eq!(p.total_subimages, 1);
    }

    #[test]
    fn square_ceiling_uses_three_by_three() {
        let p = select_grid(2016, 2016, &cfg(672, 4, 9)).unwrap();
        assert_eq!(p.grid, GridSpec { rows: 3, cols: 3 });
        assert_eq!(p.branch, Branch::Cover);
        assert_eq!(p.padding_area(), 0);
        assert_eq!(p.total_subimages, 10);
    }

    #[test]
    fn tall_image_prefers_four_rows() {
        let p = select_grid(1000, 300, &cfg(672, 4, 9)).unwrap();
        assert_eq!(p.grid, GridSpec { rows: 4, cols: 1 });
        assert_eq!(p.resize.scale.value(), 2.24);
        assert_eq!(p.objective(), 301_056.0);
        assert_eq!((p.resize.resized_h, p.resize.resized_w), (2240, 672));
        assert_eq!((p.canvas_h(), p.canvas_w()), (2688, 672));
    }

    #[test]
    fn oversized_image_downscales() {
        let p = select_grid(5000, 5000, &cfg(672, 4, 9)).unwrap();
        assert_eq!(p.branch, Branch::Downscale);
        assert_eq!(p.grid, GridSpec { rows: 3, cols: 3 });
        assert_eq!(
            p.resize.scale,
            Scale {
                num: 2016,
                den: 5000
            }
        );
        assert!(p.resize.scale.value() < 1.0);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let c = cfg(672, 4, 9);
        assert!(matches!(
            select_grid(0, 5, &c),
            Err(TileError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            select_grid(5, 0, &c),
            Err(TileError::InvalidDimensions { .. })
        ));
    }

    #[test]
    fn one_pixel_image_scales_up() {
        let p = select_grid(1, 1, &cfg(672, 1, 9)).unwrap();
        assert_eq!(p.grid, GridSpec::single());
        assert_eq!(p.resize.scale, Scale { num: 672, den: 1 });
        assert_eq!(p.padding_area(), 0);
    }

    #[test]
    fn tiles_partition_canvas() {
        let p = select_grid(900, 2500, &cfg(336, 4, 9)).unwrap();
        assert_eq!(p.tiles.len() as u32, p.tile_count());
        let area: u64 = p.tiles.iter().map(TileRect::area).sum();
        assert_eq!(area, p.canvas_h() as u64 * p.canvas_w() as u64);
        assert_eq!(
            p.tiles[0],
            TileRect {
                x: 0,
                y: 0,
                width: 336,
                height: 336
            }
        );
    }

    #[test]
    fn effective_resolution_matches_reported_figures() {
        let c672 = cfg(672, 1, 9);
        let c378 = cfg(378, 1, 9);
        let p22 = plan_for_grid(1344, 1344, GridSpec { rows: 2, cols: 2 }, &c672).unwrap();
        let p33 = plan_for_grid(2016, 2016, GridSpec { rows: 3, cols: 3 }, &c672).unwrap();
        let p33s = plan_for_grid(1134, 1134, GridSpec { rows: 3, cols: 3 }, &c378).unwrap();
        assert!((effective_resolution(&p22) - 1.806_336).abs() < 1e-12);
        assert!((effective_resolution(&p33) - 4.064_256).abs() < 1e-12);
        assert!((effective_resolution(&p33s) - 1.285_956).abs() < 1e-12);
        assert_eq!(format!("{:.1}", effective_resolution(&p22)), "1.8");
        assert_eq!(format!("{:.1}", effective_resolution(&p33)), "4.1");
        assert_eq!(format!("{:.1}", effective_resolution(&p33s)), "1.3");
    }

    #[test]
    fn grid_range_override() {
        let train = cfg(672, 4, 4);
        let infer = train.override_grid_range(4, 9).unwrap();
        assert_eq!((infer.min_tiles, infer.max_tiles), (4, 9));
        assert_eq!(infer.encoder_edge, train.encoder_edge);
        let same = cfg(672, 4, 9).override_grid_range(4, 9).unwrap();
        assert_eq!(same, cfg(672, 4, 9));
        let wide = train.override_grid_range(1, 9).unwrap();
        assert_eq!((wide.min_tiles, wide.max_tiles), (1, 9));
        assert!(train.override_grid_range(9, 4).is_err());
    }

    #[test]
    fn grid_spec_parses() {
        assert_eq!(
            "2x3".parse::<GridSpec>().unwrap(),
            GridSpec { rows: 2, cols: 3 }
        );
        assert!("0x3".parse::<GridSpec>().is_err());
        assert!("2by3".parse::<GridSpec>().is_err());
    }
}
