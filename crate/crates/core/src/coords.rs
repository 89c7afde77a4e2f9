//! Quantized referring/grounding coordinates and their tile-local frames.
//!
//! Coordinates are integer bins in `[0, Q)` over the original image. A bin
//! `x` covers the half-open span `[x, x+1)`, so a box `(x1, y1, x2, y2)`
//! covers `[x1, x2+1) × [y1, y2+1)`.
//!
//! A tile-local frame spans the *content* part of a tile: the tile rectangle
//! intersected with the resized image, excluding bottom/right padding. For
//! grid `(1,1)` the local frame therefore coincides with the global one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiler::TilePlan;

pub const DEFAULT_BINS: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoordError {
    #[error("malformed coordinate text `{0}`")]
    Parse(String),
    #[error("coordinate {value} outside [0, {bins})")]
    Range { value: i64, bins: u32 },
    #[error("inverted corners: ({x1},{y1}) is not above-left of ({x2},{y2})")]
    Order { x1: u32, y1: u32, x2: u32, y2: u32 },
    #[error("tile {tile} does not exist in a plan with {tiles} tiles")]
    InvalidTile { tile: usize, tiles: usize },
    #[error("tile {0} holds only padding")]
    PaddingTile(usize),
    #[error("coordinate frames differ: {0} vs {1}")]
    FrameMismatch(Frame, Frame),
    #[error("expected a {expected} coordinate, got {got}")]
    WrongFrame { expected: &'static str, got: Frame },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    Global,
    /// Row-major tile index within a plan.
    Tile(usize),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Global => f.write_str("global"),
            Frame::Tile(i) => write!(f, "tile {i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: u32,
    pub y: u32,
    #[serde(default)]
    pub frame: Frame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
    #[serde(default)]
    pub frame: Frame,
}

impl NormBox {
    pub fn global(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self {
            x1,
            y1,
            x2,
            y2,
            frame: Frame::Global,
        }
    }

    pub fn in_frame(self, frame: Frame) -> Self {
        Self { frame, ..self }
    }

    /// Cells covered, with inclusive integer extents.
    pub fn area(&self) -> u64 {
        (self.x2 - self.x1 + 1) as u64 * (self.y2 - self.y1 + 1) as u64
    }

    fn corners(&self) -> [u32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Canonical `<x1,y1,x2,y2>`.
impl fmt::Display for NormBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{},{}>", self.x1, self.y1, self.x2, self.y2)
    }
}

impl fmt::Display for NormPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.x, self.y)
    }
}

impl FromStr for NormBox {
    type Err = CoordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quantizer::default().parse_box(s)
    }
}

impl FromStr for NormPoint {
    type Err = CoordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quantizer::default().parse_point(s)
    }
}

/// Box/point/tile visibility after mapping into a tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Contained,
    Clipped,
    Outside,
}

/// Coordinate codec and frame converter for a fixed bin count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quantizer {
    pub bins: u32,
}

impl Default for Quantizer {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS }
    }
}

/// Content span of one tile along one axis, in canvas pixels.
#[derive(Clone, Copy, Debug)]
struct Span {
    start: u64,
    len: u64,
    /// Resized content length on this axis.
    content: u64,
}

fn content_spans(plan: &TilePlan, tile: usize) -> Result<(Span, Span), CoordError> {
    let rect = plan.tiles.get(tile).ok_or(CoordError::InvalidTile {
        tile,
        tiles: plan.tiles.len(),
    })?;
    let axis = |start: u32, size: u32, content: u32| {
        let end = (start + size).min(content);
        Span {
            start: start as u64,
            len: end.saturating_sub(start) as u64,
            content: content as u64,
        }
    };
    let xs = axis(rect.x, rect.width, plan.resize.resized_w);
    let ys = axis(rect.y, rect.height, plan.resize.resized_h);
    if xs.len == 0 || ys.len == 0 {
        return Err(CoordError::PaddingTile(tile));
    }
    Ok((xs, ys))
}

fn ceil_div(n: u64, d: u64) -> u64 {
    n.div_ceil(d)
}

impl Quantizer {
    pub fn new(bins: u32) -> Self {
        assert!(bins > 0, "bin count must be positive");
        Self { bins }
    }

    fn check(&self, v: u32) -> Result<u32, CoordError> {
        if v >= self.bins {
            return Err(CoordError::Range {
                value: v as i64,
                bins: self.bins,
            });
        }
        Ok(v)
    }

    pub fn validate_box(&self, b: &NormBox) -> Result<(), CoordError> {
        for c in b.corners() {
            self.check(c)?;
        }
        if b.x1 > b.x2 || b.y1 > b.y2 {
            return Err(CoordError::Order {
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
            });
        }
        Ok(())
    }

    pub fn encode_box(&self, b: &NormBox) -> String {
        b.to_string()
    }

    fn parse_fields<const N: usize>(&self, text: &str) -> Result<[u32; N], CoordError> {
        let bad = || CoordError::Parse(text.to_string());
        let inner = text
            .trim()
            .strip_prefix('<')
            .and_then(|t| t.strip_suffix('>'))
            .ok_or_else(bad)?;
        let mut out = [0u32; N];
        let mut parts = inner.split(',');
        for slot in out.iter_mut() {
            let field = parts.next().ok_or_else(bad)?.trim();
            let value: i64 = field.parse().map_err(|_| bad())?;
            if value < 0 || value >= self.bins as i64 {
                return Err(CoordError::Range {
                    value,
                    bins: self.bins,
                });
            }
            *slot = value as u32;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(out)
    }

    /// Accepts `<x1,y1,x2,y2>` with optional whitespace around fields.
    pub fn parse_box(&self, text: &str) -> Result<NormBox, CoordError> {
        let [x1, y1, x2, y2] = self.parse_fields::<4>(text)?;
        let b = NormBox::global(x1, y1, x2, y2);
        self.validate_box(&b)?;
        Ok(b)
    }

    pub fn parse_point(&self, text: &str) -> Result<NormPoint, CoordError> {
        let [x, y] = self.parse_fields::<2>(text)?;
        Ok(NormPoint {
            x,
            y,
            frame: Frame::Global,
        })
    }

    /// Maps one axis `[lo, hi+1)` of global bins into a tile span.
    /// Returns local `(lo, hi)` plus whether it was clipped, or `None` when disjoint.
    fn axis_to_local(&self, lo: u32, hi: u32, span: Span) -> Option<(u32, u32, bool)> {
        let q = self.bins as u64;
        // canvas position of a global bin edge e is e·content/q; scale everything by q
        let left = lo as u64 * span.content;
        let right = (hi as u64 + 1) * span.content;
        let t0 = span.start * q;
        let t1 = (span.start + span.len) * q;
        if right <= t0 || left >= t1 {
            return None;
        }
        let clipped = left < t0 || right > t1;
        let l = left.max(t0) - t0;
        let r = right.min(t1) - t0;
        // local bin edge = (canvas − start)·q/len
        let local_lo = l / span.len;
        let local_hi = ceil_div(r, span.len) - 1;
        Some((
            local_lo as u32,
            (local_hi as u32).min(self.bins - 1),
            clipped,
        ))
    }

    fn axis_to_global(&self, lo: u32, hi: u32, span: Span) -> (u32, u32) {
        let q = self.bins as u64;
        let left = span.start * q + lo as u64 * span.len;
        let right = span.start * q + (hi as u64 + 1) * span.len;
        let g_lo = left / span.content;
        let g_hi = ceil_div(right, span.content).saturating_sub(1);
        let max = self.bins as u64 - 1;
        (g_lo.min(max) as u32, g_hi.min(max) as u32)
    }

    /// Global box to tile frame. Partially visible boxes are clipped to the
    /// tile's content; disjoint boxes come back as `Outside` with the
    /// input box unchanged.
    pub fn global_to_local(
        &self,
        b: &NormBox,
        plan: &TilePlan,
        tile: usize,
    ) -> Result<(NormBox, Visibility), CoordError> {
        if b.frame != Frame::Global {
            return Err(CoordError::WrongFrame {
                expected: "global",
                got: b.frame,
            });
        }
        self.validate_box(b)?;
        let (xs, ys) = content_spans(plan, tile)?;
        match (
            self.axis_to_local(b.x1, b.x2, xs),
            self.axis_to_local(b.y1, b.y2, ys),
        ) {
            (Some((x1, x2, cx)), Some((y1, y2, cy))) => {
                let vis = if cx || cy {
                    Visibility::Clipped
                } else {
                    Visibility::Contained
                };
                Ok((
                    NormBox {
                        x1,
                        y1,
                        x2,
                        y2,
                        frame: Frame::Tile(tile),
                    },
                    vis,
                ))
            }
            _ => Ok((*b, Visibility::Outside)),
        }
    }

    /// Tile-frame box back to global coordinates, clamped to `[0, Q)`.
    pub fn local_to_global(
        &self,
        b: &NormBox,
        plan: &TilePlan,
        tile: usize,
    ) -> Result<NormBox, CoordError> {
        match b.frame {
            Frame::Tile(t) if t == tile => {}
            other => {
                return Err(CoordError::WrongFrame {
                    expected: "tile",
                    got: other,
                })
            }
        }
        self.validate_box(b)?;
        let (xs, ys) = content_spans(plan, tile)?;
        let (x1, x2) = self.axis_to_global(b.x1, b.x2, xs);
        let (y1, y2) = self.axis_to_global(b.y1, b.y2, ys);
        Ok(NormBox::global(x1, y1, x2, y2))
    }

    /// Every tile the box touches, with its local box.
    pub fn split_box(
        &self,
        b: &NormBox,
        plan: &TilePlan,
    ) -> Result<Vec<(NormBox, Visibility)>, CoordError> {
        let mut out = Vec::new();
        for tile in 0..plan.tiles.len() {
            match self.global_to_local(b, plan, tile) {
                Ok((local, vis)) if vis != Visibility::Outside => out.push((local, vis)),
                Ok(_) | Err(CoordError::PaddingTile(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Finds the tile holding a global point's bin centre and maps it there.
    pub fn point_to_local(&self, p: &NormPoint, plan: &TilePlan) -> Result<NormPoint, CoordError> {
        if p.frame != Frame::Global {
            return Err(CoordError::WrongFrame {
                expected: "global",
                got: p.frame,
            });
        }
        self.check(p.x)?;
        self.check(p.y)?;
        let q = self.bins as u64;
        let edge = plan.tile_edge as u64;
        // doubled canvas coordinate of the bin centre, scaled by q
        let cx = (2 * p.x as u64 + 1) * plan.resize.resized_w as u64;
        let cy = (2 * p.y as u64 + 1) * plan.resize.resized_h as u64;
        let col = (cx / (2 * q * edge)) as usize;
        let row = (cy / (2 * q * edge)) as usize;
        let tile = row * plan.grid.cols as usize + col;
        let (xs, ys) = content_spans(plan, tile)?;
        let local = |c: u64, s: Span| ((c - 2 * s.start * q) / (2 * s.len)).min(q - 1) as u32;
        Ok(NormPoint {
            x: local(cx, xs),
            y: local(cy, ys),
            frame: Frame::Tile(tile),
        })
    }

    pub fn point_to_global(&self, p: &NormPoint, plan: &TilePlan) -> Result<NormPoint, CoordError> {
        let tile = match p.frame {
            Frame::Tile(t) => t,
            other => {
                return Err(CoordError::WrongFrame {
                    expected: "tile",
                    got: other,
                })
            }
        };
        self.check(p.x)?;
        self.check(p.y)?;
        let (xs, ys) = content_spans(plan, tile)?;
        let q = self.bins as u64;
        let global = |v: u32, s: Span| {
            (((2 * v as u64 + 1) * s.len + 2 * s.start * q) / (2 * s.content)).min(q - 1) as u32
        };
        Ok(NormPoint {
            x: global(p.x, xs),
            y: global(p.y, ys),
            frame: Frame::Global,
        })
    }
}

pub fn encode_box(b: &NormBox) -> String {
    b.to_string()
}

pub fn parse_box(text: &str) -> Result<NormBox, CoordError> {
    Quantizer::default().parse_box(text)
}

pub fn global_to_local(
    b: &NormBox,
    plan: &TilePlan,
    tile: usize,
) -> Result<(NormBox, Visibility), CoordError> {
    Quantizer::default().global_to_local(b, plan, tile)
}

pub fn local_to_global(b: &NormBox, plan: &TilePlan, tile: usize) -> Result<NormBox, CoordError> {
    Quantizer::default().local_to_global(b, plan, tile)
}

/// IoU with inclusive integer extents.
pub fn box_iou(a: &NormBox, b: &NormBox) -> Result<f64, CoordError> {
    if a.frame != b.frame {
        return Err(CoordError::FrameMismatch(a.frame, b.frame));
    }
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    if ix1 > ix2 || iy1 > iy2 {
        return Ok(0.0);
    }
    let inter = (ix2 - ix1 + 1) as u64 * (iy2 - iy1 + 1) as u64;
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}
