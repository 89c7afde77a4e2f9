//! Named grid-selection strategies.
//!
//! A strategy is chosen from a spec string of the form `name[:args]`:
//!
//! | spec            | behaviour                                           |
//! |-----------------|-----------------------------------------------------|
//! | `dynamic`       | objective-driven selection over the config's range  |
//! | `dynamic:4:9`   | same, with an explicit `(min, max)` range           |
//! | `static:2x2`    | every image uses the fixed grid (default `2x2`)     |
//! | `single`        | one longer-side-resized frame, no overview          |

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::tiler::{plan_for_grid, select_grid, GridSpec, SplitConfig, TileError, TilePlan};

pub trait GridStrategy: fmt::Debug + Send + Sync {
    /// Registry name.
    fn name(&self) -> &'static str;

    /// Canonical spec string that rebuilds this strategy.
    fn label(&self) -> String;

    fn plan(&self, h: u32, w: u32, cfg: &SplitConfig) -> Result<TilePlan, TileError>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DynamicGrid {
    /// Overrides the config's grid range when set.
    pub range: Option<(u32, u32)>,
}

impl GridStrategy for DynamicGrid {
    fn name(&self) -> &'static str {
        "dynamic"
    }

    fn label(&self) -> String {
        match self.range {
            Some((min, max)) => format!("dynamic:{min}:{max}"),
            None => "dynamic".to_string(),
        }
    }

    fn plan(&self, h: u32, w: u32, cfg: &SplitConfig) -> Result<TilePlan, TileError> {
        match self.range {
            Some((min, max)) => select_grid(h, w, &cfg.override_grid_range(min, max)?),
            None => select_grid(h, w, cfg),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticGrid {
    pub grid: GridSpec,
}

impl Default for StaticGrid {
    fn default() -> Self {
        Self {
            grid: GridSpec { rows: 2, cols: 2 },
        }
    }
}

impl GridStrategy for StaticGrid {
    fn name(&self) -> &'static str {
        "static"
    }

    fn label(&self) -> String {
        format!("static:{}", self.grid)
    }

    fn plan(&self, h: u32, w: u32, cfg: &SplitConfig) -> Result<TilePlan, TileError> {
        plan_for_grid(h, w, self.grid, cfg)
    }
}

/// Grid `(1,1)`: used for records whose splitting is disabled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SingleFrame;

impl GridStrategy for SingleFrame {
    fn name(&self) -> &'static str {
        "single"
    }

    fn label(&self) -> String {
        "single".to_string()
    }

    fn plan(&self, h: u32, w: u32, cfg: &SplitConfig) -> Result<TilePlan, TileError> {
        plan_for_grid(h, w, GridSpec::single(), cfg)
    }
}

pub type StrategyCtor = fn(Option<&str>) -> Result<Arc<dyn GridStrategy>, TileError>;

#[derive(Clone)]
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, StrategyCtor>,
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn build_dynamic(args: Option<&str>) -> Result<Arc<dyn GridStrategy>, TileError> {
    let range = match args {
        None => None,
        Some(a) => Some(parse_range(a)?),
    };
    Ok(Arc::new(DynamicGrid { range }))
}

fn build_static(args: Option<&str>) -> Result<Arc<dyn GridStrategy>, TileError> {
    let grid = match args {
        None => StaticGrid::default().grid,
        Some(a) => a.parse()?,
    };
    Ok(Arc::new(StaticGrid { grid }))
}

fn build_single(args: Option<&str>) -> Result<Arc<dyn GridStrategy>, TileError> {
    match args {
        None => Ok(Arc::new(SingleFrame)),
        Some(a) => Err(TileError::InvalidConfig(format!(
            "`single` takes no arguments, got `{a}`"
        ))),
    }
}

/// Parses `MIN:MAX` into a validated grid range.
pub fn parse_range(s: &str) -> Result<(u32, u32), TileError> {
    let bad = || TileError::InvalidConfig(format!("invalid grid range `{s}`, expected MIN:MAX"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let min: u32 = a.trim().parse().map_err(|_| bad())?;
    let max: u32 = b.trim().parse().map_err(|_| bad())?;
    crate::tiler::candidate_grids(min, max)?;
    Ok((min, max))
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("dynamic", build_dynamic);
        reg.register("static", build_static);
        reg.register("single", build_single);
        reg
    }

    pub fn register(&mut self, name: &'static str, ctor: StrategyCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, spec: &str) -> Result<Arc<dyn GridStrategy>, TileError> {
        let spec = spec.trim();
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let ctor = self
            .entries
            .get(name.to_ascii_lowercase().as_str())
            .ok_or_else(|| TileError::UnknownStrategy(spec.to_string()))?;
        ctor(args)
    }
}
