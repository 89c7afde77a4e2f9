//! Record manifests, synthetic corpora and corpus-level tiling statistics.
//!
//! Manifests are newline-delimited JSON. The first line may be a schema
//! header; every other line is one record:
//!
//! ```text
//! {"schema":"anyres.manifest","version":1}
//! {"id":"r0","category":"text-rich","images":[[1280,720]]}
//! {"id":"r1","category":"refer-ground","images":[[640,480]],"boxes":[{"image":0,"box":"<10,20,300,400>"}]}
//! ```
//!
//! `images` holds `[width, height]` pairs.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coords::{NormBox, Quantizer};
use crate::layout::plan_record;
use crate::strategy::GridStrategy;
use crate::tiler::{Branch, SplitConfig, TileError};

pub const SCHEMA_NAME: &str = "anyres.manifest";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest I/O: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("unknown corpus preset `{0}`")]
    UnknownPreset(String),
    #[error("record `{record}`: {source}")]
    Tile { record: String, source: TileError },
    #[error("no split configurations given")]
    NoConfigs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub image: usize,
    #[serde(rename = "box", with = "box_text")]
    pub bbox: NormBox,
}

mod box_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::coords::NormBox;

    pub fn serialize<S: Serializer>(b: &NormBox, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(b)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NormBox, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordManifest {
    pub id: String,
    pub category: String,
    /// `(width, height)` per image.
    pub images: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxAnnotation>,
}

impl RecordManifest {
    pub fn validate(&self) -> Result<(), String> {
        if self.images.is_empty() {
            return Err(format!("record `{}` has no images", self.id));
        }
        if let Some((w, h)) = self.images.iter().find(|(w, h)| *w == 0 || *h == 0) {
            return Err(format!("record `{}` has a {w}x{h} image", self.id));
        }
        let q = Quantizer::default();
        for b in &self.boxes {
            if b.image >= self.images.len() {
                return Err(format!(
                    "record `{}`: box refers to image {} of {}",
                    self.id,
                    b.image,
                    self.images.len()
                ));
            }
            q.validate_box(&b.bbox)
                .map_err(|e| format!("record `{}`: {e}", self.id))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
    version: u32,
}

/// Streaming manifest reader.
///
/// In the default lenient mode malformed lines are collected as diagnostics
/// and skipped. In strict mode the first malformed line is yielded as an
/// error and iteration stops.
pub struct ManifestReader<R> {
    reader: R,
    line: usize,
    strict: bool,
    done: bool,
    buf: String,
    diagnostics: Vec<CorpusError>,
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            line: 0,
            strict: false,
            done: false,
            buf: String::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn diagnostics(&self) -> &[CorpusError] {
        &self.diagnostics
    }

    pub fn into_diagnostics(self) -> Vec<CorpusError> {
        self.diagnostics
    }

    fn parse_line(&self, text: &str) -> Result<Option<RecordManifest>, CorpusError> {
        let schema_err = |message: String| CorpusError::Schema {
            line: self.line,
            message,
        };
        if self.line == 1 {
            if let Ok(h) = serde_json::from_str::<SchemaHeader>(text) {
                if h.schema != SCHEMA_NAME || h.version != SCHEMA_VERSION {
                    return Err(schema_err(format!(
                        "unsupported schema {} v{} (expected {SCHEMA_NAME} v{SCHEMA_VERSION})",
                        h.schema, h.version
                    )));
                }
                return Ok(None);
            }
        }
        let rec: RecordManifest =
            serde_json::from_str(text).map_err(|e| schema_err(e.to_string()))?;
        rec.validate().map_err(schema_err)?;
        Ok(Some(rec))
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<RecordManifest, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line += 1;
                    let text = self.buf.trim();
                    if text.is_empty() {
                        continue;
                    }
                    match self.parse_line(text) {
                        Ok(Some(rec)) => return Some(Ok(rec)),
                        Ok(None) => {}
                        Err(e) if self.strict => {
                            self.done = true;
                            return Some(Err(e));
                        }
                        Err(e) => self.diagnostics.push(e),
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}

#[derive(Debug, Default)]
pub struct ManifestRead {
    pub records: Vec<RecordManifest>,
    pub diagnostics: Vec<CorpusError>,
}

/// Reads a whole manifest leniently.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<ManifestRead, CorpusError> {
    let mut it = ManifestReader::new(reader);
    let records = it.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(ManifestRead {
        records,
        diagnostics: it.into_diagnostics(),
    })
}

/// Writes the schema header followed by one canonical line per record.
pub fn write_manifest<W: Write>(mut out: W, records: &[RecordManifest]) -> Result<(), CorpusError> {
    let header = SchemaHeader {
        schema: SCHEMA_NAME.into(),
        version: SCHEMA_VERSION,
    };
    serde_json::to_writer(&mut out, &header).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// A family of image sizes: log-normal long side, log-uniform aspect ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCluster {
    pub name: String,
    pub weight: f64,
    /// Median of the longer side, in pixels.
    pub median_long_side: f64,
    /// Log-space standard deviation of the longer side.
    pub sigma: f64,
    /// Range of long/short side ratios.
    pub aspect_min: f64,
    pub aspect_max: f64,
    /// Probability that the longer side is the height.
    pub portrait: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub clusters: Vec<ResolutionCluster>,
    pub min_side: u32,
    pub max_side: u32,
    /// `(image count, weight)` choices per record.
    pub images_per_record: Vec<(usize, f64)>,
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidDistribution(m));
        if self.clusters.is_empty() {
            return bad("no resolution clusters".into());
        }
        if self.min_side == 0 || self.min_side > self.max_side {
            return bad(format!(
                "side bounds {}..={} are invalid",
                self.min_side, self.max_side
            ));
        }
        for c in &self.clusters {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return bad(format!("cluster `{}` weight {}", c.name, c.weight));
            }
            if !(c.median_long_side.is_finite()
                && c.median_long_side > 0.0
                && c.sigma.is_finite()
                && c.sigma >= 0.0)
            {
                return bad(format!("cluster `{}` long-side parameters", c.name));
            }
            if !(c.aspect_min >= 1.0 && c.aspect_min <= c.aspect_max && c.aspect_max.is_finite()) {
                return bad(format!(
                    "cluster `{}` aspect range {}..{}",
                    c.name, c.aspect_min, c.aspect_max
                ));
            }
            if !(0.0..=1.0).contains(&c.portrait) {
                return bad(format!(
                    "cluster `{}` portrait probability {}",
                    c.name, c.portrait
                ));
            }
        }
        if self.clusters.iter().all(|c| c.weight == 0.0) {
            return bad("all cluster weights are zero".into());
        }
        if self.images_per_record.is_empty()
            || self
                .images_per_record
                .iter()
                .any(|(n, w)| *n == 0 || !(w.is_finite() && *w >= 0.0))
            || self.images_per_record.iter().all(|(_, w)| *w == 0.0)
        {
            return bad("images_per_record needs positive counts and a positive weight".into());
        }
        Ok(())
    }
}

/// Built-in synthetic size distributions.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 5] = [
        "web-mix",
        "documents",
        "screenshots",
        "interleaved",
        "square-672",
    ];

    fn cluster(
        name: &str,
        weight: f64,
        median: f64,
        sigma: f64,
        aspect: (f64, f64),
        portrait: f64,
    ) -> ResolutionCluster {
        ResolutionCluster {
            name: name.into(),
            weight,
            median_long_side: median,
            sigma,
            aspect_min: aspect.0,
            aspect_max: aspect.1,
            portrait,
        }
    }

    /// Single-image mix dominated by near-square photos and charts, with
    /// smaller shares of document pages, screenshots and long banners.
    pub fn web_mix() -> DistributionSpec {
        DistributionSpec {
            clusters: vec![
                cluster("photo", 0.55, 640.0, 0.3, (1.0, 1.3), 0.3),
                cluster("chart", 0.15, 520.0, 0.3, (1.0, 1.5), 0.2),
                cluster("document", 0.12, 1100.0, 0.25, (1.3, 1.45), 0.9),
                cluster("screenshot", 0.13, 1200.0, 0.25, (1.6, 1.8), 0.3),
                cluster("banner", 0.05, 2400.0, 0.3, (3.5, 4.5), 0.5),
            ],
            min_side: 32,
            max_side: 8000,
            images_per_record: vec![(1, 1.0)],
        }
    }

    pub fn documents() -> DistributionSpec {
        DistributionSpec {
            clusters: vec![
                cluster("page", 1.0, 2000.0, 0.3, (1.25, 1.5), 0.95),
                cluster("long", 0.2, 4000.0, 0.3, (2.0, 6.0), 0.9),
            ],
            min_side: 64,
            max_side: 8000,
            images_per_record: vec![(1, 1.0)],
        }
    }

    pub fn screenshots() -> DistributionSpec {
        DistributionSpec {
            clusters: vec![
                cluster("desktop", 0.5, 1920.0, 0.2, (1.6, 1.8), 0.0),
                cluster("mobile", 0.5, 2300.0, 0.15, (2.0, 2.3), 1.0),
            ],
            min_side: 64,
            max_side: 8000,
            images_per_record: vec![(1, 1.0)],
        }
    }

    /// Web-style sizes, with 1 to 6 images per record.
    pub fn interleaved() -> DistributionSpec {
        DistributionSpec {
            images_per_record: vec![(1, 0.5), (2, 0.2), (3, 0.15), (4, 0.1), (6, 0.05)],
            ..web_mix()
        }
    }

    pub fn square_672() -> DistributionSpec {
        DistributionSpec {
            clusters: vec![cluster("square", 1.0, 672.0, 0.0, (1.0, 1.0), 0.0)],
            min_side: 672,
            max_side: 672,
            images_per_record: vec![(1, 1.0)],
        }
    }

    pub fn by_name(name: &str) -> Result<DistributionSpec, CorpusError> {
        match name {
            "web-mix" => Ok(web_mix()),
            "documents" => Ok(documents()),
            "screenshots" => Ok(screenshots()),
            "interleaved" => Ok(interleaved()),
            "square-672" => Ok(square_672()),
            other => Err(CorpusError::UnknownPreset(other.to_string())),
        }
    }
}

/// Deterministic synthetic corpus; record `i` gets id `syn-{i}` and the
/// generating cluster as its category.
pub fn synth_corpus(
    dist: &DistributionSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<RecordManifest>, CorpusError> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_pick = WeightedIndex::new(dist.clusters.iter().map(|c| c.weight))
        .map_err(|e| CorpusError::InvalidDistribution(e.to_string()))?;
    let count_pick = WeightedIndex::new(dist.images_per_record.iter().map(|(_, w)| *w))
        .map_err(|e| CorpusError::InvalidDistribution(e.to_string()))?;
    let long_sides: Vec<LogNormal<f64>> = dist
        .clusters
        .iter()
        .map(|c| LogNormal::new(c.median_long_side.ln(), c.sigma))
        .collect::<Result<_, _>>()
        .map_err(|e| CorpusError::InvalidDistribution(e.to_string()))?;
    let clamp = |v: f64| (v.round() as u32).clamp(dist.min_side, dist.max_side);

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let n = dist.images_per_record[count_pick.sample(&mut rng)].0;
        let mut images = Vec::with_capacity(n);
        let mut category = String::new();
        for _ in 0..n {
            let ci = cluster_pick.sample(&mut rng);
            let c = &dist.clusters[ci];
            if category.is_empty() {
                category = c.name.clone();
            }
            let long = long_sides[ci].sample(&mut rng);
            let aspect = if c.aspect_max > c.aspect_min {
                (rng.gen_range(c.aspect_min.ln()..c.aspect_max.ln())).exp()
            } else {
                c.aspect_min
            };
            let (long, short) = (clamp(long), clamp(long / aspect));
            let portrait = rng.gen_bool(c.portrait);
            images.push(if portrait {
                (short, long)
            } else {
                (long, short)
            });
        }
        records.push(RecordManifest {
            id: format!("syn-{i}"),
            category,
            images,
            boxes: Vec::new(),
        });
    }
    Ok(records)
}

/// A labelled tiling setup for corpus statistics.
#[derive(Clone, Debug)]
pub struct StatsConfig {
    pub label: String,
    pub strategy: Arc<dyn GridStrategy>,
    pub split: SplitConfig,
}

impl StatsConfig {
    pub fn new(strategy: Arc<dyn GridStrategy>, split: SplitConfig) -> Self {
        Self {
            label: strategy.label(),
            strategy,
            split,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub cover: u64,
    pub downscale: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub label: String,
    pub record_count: u64,
    pub image_count: u64,
    /// Records whose images were not split because of their image count.
    pub unsplit_records: u64,
    pub total_subimages: u64,
    pub total_image_tokens: u64,
    pub grid_histogram: BTreeMap<String, u64>,
    pub branch_histogram: BranchCounts,
    /// Records by their total sub-image count.
    pub subimages_per_record: BTreeMap<u32, u64>,
}

impl StatsReport {
    fn empty(label: &str) -> Self {
        Self {
            label: label.to_string(),
            ..Self::default()
        }
    }

    /// Commutative, associative merge of two partial reports.
    pub fn merge(mut self, other: StatsReport) -> StatsReport {
        self.record_count += other.record_count;
        self.image_count += other.image_count;
        self.unsplit_records += other.unsplit_records;
        self.total_subimages += other.total_subimages;
        self.total_image_tokens += other.total_image_tokens;
        self.branch_histogram.cover += other.branch_histogram.cover;
        self.branch_histogram.downscale += other.branch_histogram.downscale;
        for (k, v) in other.grid_histogram {
            *self.grid_histogram.entry(k).or_default() += v;
        }
        for (k, v) in other.subimages_per_record {
            *self.subimages_per_record.entry(k).or_default() += v;
        }
        self
    }

    fn add(&mut self, record: &RecordManifest, cfg: &StatsConfig) -> Result<(), CorpusError> {
        let plans =
            plan_record(&record.images, cfg.strategy.as_ref(), &cfg.split).map_err(|source| {
                CorpusError::Tile {
                    record: record.id.clone(),
                    source,
                }
            })?;
        self.record_count += 1;
        self.image_count += plans.len() as u64;
        if record.images.len() as u64 >= cfg.split.multi_image_split_threshold as u64 {
            self.unsplit_records += 1;
        }
        let mut per_record = 0u32;
        for p in &plans {
            per_record += p.total_subimages;
            self.total_image_tokens += p.image_tokens();
            *self.grid_histogram.entry(p.grid.to_string()).or_default() += 1;
            match p.branch {
                Branch::Cover => self.branch_histogram.cover += 1,
                Branch::Downscale => self.branch_histogram.downscale += 1,
            }
        }
        self.total_subimages += per_record as u64;
        *self.subimages_per_record.entry(per_record).or_default() += 1;
        Ok(())
    }

    pub fn mean_subimages(&self) -> f64 {
        if self.record_count == 0 {
            0.0
        } else {
            self.total_subimages as f64 / self.record_count as f64
        }
    }
}

pub fn corpus_stats(
    records: &[RecordManifest],
    configs: &[StatsConfig],
) -> Result<Vec<StatsReport>, CorpusError> {
    corpus_stats_sharded(records, configs, 1)
}

/// Splits the records into `shards` contiguous chunks processed in parallel
/// and merges them; totals do not depend on the shard count.
pub fn corpus_stats_sharded(
    records: &[RecordManifest],
    configs: &[StatsConfig],
    shards: usize,
) -> Result<Vec<StatsReport>, CorpusError> {
    if configs.is_empty() {
        return Err(CorpusError::NoConfigs);
    }
    let chunk = records.len().div_ceil(shards.max(1)).max(1);
    configs
        .iter()
        .map(|cfg| {
            cfg.split.validate().map_err(|source| CorpusError::Tile {
                record: String::new(),
                source,
            })?;
            records
                .par_chunks(chunk)
                .map(|part| {
                    let mut r = StatsReport::empty(&cfg.label);
                    for rec in part {
                        r.add(rec, cfg)?;
                    }
                    Ok(r)
                })
                .try_reduce(|| StatsReport::empty(&cfg.label), |a, b| Ok(a.merge(b)))
        })
        .collect()
}
