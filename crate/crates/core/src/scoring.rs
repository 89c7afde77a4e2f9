//! Benchmark normalization, category averages and MMBase.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("{benchmark}: {reason}")]
    OutOfRange {
        benchmark: Benchmark,
        reason: String,
    },
    #[error("{category} average is missing: {}", missing.iter().map(|b| b.id()).collect::<Vec<_>>().join(", "))]
    MissingBenchmarks {
        category: Category,
        missing: Vec<Benchmark>,
    },
    #[error("metrics file: {0}")]
    Format(String),
}

macro_rules! benchmarks {
    ($($variant:ident => $id:literal),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Benchmark { $($variant),* }

        impl Benchmark {
            pub const ALL: &'static [Benchmark] = &[$(Benchmark::$variant),*];

            pub fn id(self) -> &'static str {
                match self { $(Benchmark::$variant => $id),* }
            }
        }
    };
}

benchmarks! {
    Mme => "mme",
    SeedImg => "seed-img",
    Pope => "pope",
    LlavaW => "llava-w",
    MmVet => "mm-vet",
    RealWorldQa => "realworldqa",
    Wtq => "wtq",
    TabFact => "tabfact",
    OcrBench => "ocrbench",
    ChartQa => "chartqa",
    TextVqa => "textvqa",
    DocVqa => "docvqa",
    InfoVqa => "infovqa",
    Ai2d => "ai2d",
    ScienceQa => "scienceqa",
    MathVista => "mathvista",
    Mmmu => "mmmu",
    Flickr30k => "flickr30k",
    RefCoco => "refcoco",
    Lvis => "lvis",
    FerretBench => "ferret-bench",
    QBench2 => "qbench2",
    Mantis => "mantis",
    Nlvr2 => "nlvr2",
    Blink => "blink",
    MvBench => "mvbench",
    MuirBench => "muirbench",
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Benchmark {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Benchmark::ALL
            .iter()
            .copied()
            .find(|b| b.id().replace('-', "") == key)
            .or(match key.as_str() {
                "seedbench" | "seed" => Some(Benchmark::SeedImg),
                "llavawild" | "llavabench" => Some(Benchmark::LlavaW),
                "lvisref" => Some(Benchmark::Lvis),
                "qbench" => Some(Benchmark::QBench2),
                _ => None,
            })
            .ok_or_else(|| ScoreError::UnknownBenchmark(s.to_string()))
    }
}

impl Serialize for Benchmark {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Benchmark {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    General,
    TextRich,
    Knowledge,
    ReferGround,
    MultiImage,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::General,
        Category::TextRich,
        Category::Knowledge,
        Category::ReferGround,
        Category::MultiImage,
    ];

    pub fn members(self) -> &'static [Benchmark] {
        use Benchmark::*;
        match self {
            Category::General => &[Mme, SeedImg, Pope, LlavaW, MmVet, RealWorldQa],
            Category::TextRich => &[Wtq, TabFact, OcrBench, ChartQa, TextVqa, DocVqa, InfoVqa],
            Category::Knowledge => &[Ai2d, ScienceQa, MathVista, Mmmu],
            Category::ReferGround => &[Flickr30k, RefCoco, Lvis],
            Category::MultiImage => &[QBench2, Mantis, Nlvr2, Blink, MvBench],
        }
    }

    /// Reported alongside the category but never averaged into it.
    pub fn excluded(self) -> &'static [Benchmark] {
        match self {
            Category::ReferGround => &[Benchmark::FerretBench],
            Category::MultiImage => &[Benchmark::MuirBench],
            _ => &[],
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Category::General => "general",
            Category::TextRich => "text-rich",
            Category::Knowledge => "knowledge",
            Category::ReferGround => "refer-ground",
            Category::MultiImage => "multi-image",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A raw benchmark value: a single number or a tuple of parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Scalar(f64),
    Parts(Vec<f64>),
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Scalar(v)
    }
}

impl<const N: usize> From<[f64; N]> for MetricValue {
    fn from(v: [f64; N]) -> Self {
        MetricValue::Parts(v.to_vec())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricSet {
    pub values: BTreeMap<Benchmark, MetricValue>,
}

impl MetricSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, b: Benchmark, v: impl Into<MetricValue>) -> &mut Self {
        self.values.insert(b, v.into());
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let raw: BTreeMap<String, MetricValue> =
            serde_json::from_str(text).map_err(|e| ScoreError::Format(e.to_string()))?;
        let mut set = MetricSet::new();
        for (k, v) in raw {
            set.values.insert(k.parse()?, v);
        }
        Ok(set)
    }
}

/// Knobs for benchmarks whose composition is a convention.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Number of RefCOCO split values expected when a list is given
    /// (RefCOCO A/B, RefCOCO+ A/B, RefCOCOg).
    pub refcoco_splits: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { refcoco_splits: 5 }
    }
}

fn percent(b: Benchmark, v: f64, max: f64) -> Result<f64, ScoreError> {
    if !v.is_finite() || v < 0.0 || v > max {
        return Err(ScoreError::OutOfRange {
            benchmark: b,
            reason: format!("value {v} outside [0, {max}]"),
        });
    }
    Ok(v)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn normalize_metric(b: Benchmark, raw: &MetricValue) -> Result<f64, ScoreError> {
    normalize_metric_with(b, raw, &ScoringConfig::default())
}

/// Raw value to a percentage.
///
/// * MME: `(perception + cognition) / 2800 · 100`; a scalar is taken as the sum.
/// * OCRBench: `score / 1000 · 100`.
/// * ChartQA: mean of the human and augmented parts.
/// * RefCOCO: mean of the split values; LVIS: mean of box and point.
/// * Everything else passes through.
pub fn normalize_metric_with(
    b: Benchmark,
    raw: &MetricValue,
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    let arity = |n: usize| -> Result<&[f64], ScoreError> {
        match raw {
            MetricValue::Parts(p) if p.len() == n => Ok(p),
            MetricValue::Parts(p) => Err(ScoreError::OutOfRange {
                benchmark: b,
                reason: format!("expected {n} values, got {}", p.len()),
            }),
            MetricValue::Scalar(_) => unreachable!(),
        }
    };
    let scalar_only = || -> Result<f64, ScoreError> {
        match raw {
            MetricValue::Scalar(v) => Ok(*v),
            MetricValue::Parts(_) => Err(ScoreError::OutOfRange {
                benchmark: b,
                reason: "expected a single value".into(),
            }),
        }
    };
    match b {
        Benchmark::Mme => match raw {
            MetricValue::Scalar(sum) => Ok(percent(b, *sum, 2800.0)? / 2800.0 * 100.0),
            MetricValue::Parts(_) => {
                let p = arity(2)?;
                let perception = percent(b, p[0], 2000.0)?;
                let cognition = percent(b, p[1], 800.0)?;
                Ok((perception + cognition) / 2800.0 * 100.0)
            }
        },
        Benchmark::OcrBench => Ok(percent(b, scalar_only()?, 1000.0)? / 1000.0 * 100.0),
        Benchmark::ChartQa | Benchmark::Lvis | Benchmark::RefCoco => {
            let n = if b == Benchmark::RefCoco {
                cfg.refcoco_splits
            } else {
                2
            };
            match raw {
                MetricValue::Scalar(v) => percent(b, *v, 100.0),
                MetricValue::Parts(_) => {
                    let parts = arity(n)?;
                    for &v in parts {
                        percent(b, v, 100.0)?;
                    }
                    Ok(mean(parts))
                }
            }
        }
        // judge-assisted relative scores can exceed 100
        Benchmark::LlavaW | Benchmark::FerretBench => percent(b, scalar_only()?, f64::MAX),
        _ => percent(b, scalar_only()?, 100.0),
    }
}

pub fn category_average(category: Category, metrics: &MetricSet) -> Result<f64, ScoreError> {
    category_average_with(category, metrics, &ScoringConfig::default())
}

/// Mean of the category's normalized member metrics. Every member must be present.
pub fn category_average_with(
    category: Category,
    metrics: &MetricSet,
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    let members = category.members();
    let missing: Vec<Benchmark> = members
        .iter()
        .copied()
        .filter(|b| !metrics.values.contains_key(b))
        .collect();
    if !missing.is_empty() {
        return Err(ScoreError::MissingBenchmarks { category, missing });
    }
    let values = members
        .iter()
        .map(|b| normalize_metric_with(*b, &metrics.values[b], cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&values))
}

pub fn mmbase_from(general: f64, text_rich: f64, knowledge: f64) -> f64 {
    (general + text_rich + knowledge) / 3.0
}

/// Mean of the general, text-rich and knowledge averages.
pub fn mmbase(metrics: &MetricSet) -> Result<f64, ScoreError> {
    Ok(mmbase_from(
        category_average(Category::General, metrics)?,
        category_average(Category::TextRich, metrics)?,
        category_average(Category::Knowledge, metrics)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub general: f64,
    pub text_rich: f64,
    pub knowledge: f64,
    pub refer_ground: f64,
    pub multi_image: f64,
    pub mmbase: f64,
    /// Present but excluded from every average.
    pub excluded: Vec<Benchmark>,
    /// Normalized value of every benchmark present.
    pub normalized: BTreeMap<Benchmark, f64>,
}

impl ScoreReport {
    pub fn category(&self, c: Category) -> f64 {
        match c {
            Category::General => self.general,
            Category::TextRich => self.text_rich,
            Category::Knowledge => self.knowledge,
            Category::ReferGround => self.refer_ground,
            Category::MultiImage => self.multi_image,
        }
    }
}

/// Full report; fails listing every missing benchmark across all categories.
pub fn score_report(metrics: &MetricSet, cfg: &ScoringConfig) -> Result<ScoreReport, ScoreError> {
    let missing: Vec<Benchmark> = Category::ALL
        .iter()
        .flat_map(|c| c.members())
        .copied()
        .filter(|b| !metrics.values.contains_key(b))
        .collect();
    if !missing.is_empty() {
        let category = Category::ALL
            .into_iter()
            .find(|c| c.members().contains(&missing[0]))
            .expect("every member belongs to a category");
        return Err(ScoreError::MissingBenchmarks { category, missing });
    }
    let avg = |c| category_average_with(c, metrics, cfg);
    let (general, text_rich, knowledge) = (
        avg(Category::General)?,
        avg(Category::TextRich)?,
        avg(Category::Knowledge)?,
    );
    let normalized = metrics
        .values
        .iter()
        .map(|(b, v)| normalize_metric_with(*b, v, cfg).map(|x| (*b, x)))
        .collect::<Result<_, _>>()?;
    Ok(ScoreReport {
        general,
        text_rich,
        knowledge,
        refer_ground: avg(Category::ReferGround)?,
        multi_image: avg(Category::MultiImage)?,
        mmbase: mmbase_from(general, text_rich, knowledge),
        excluded: Category::ALL
            .iter()
            .flat_map(|c| c.excluded())
            .copied()
            .filter(|b| metrics.values.contains_key(b))
            .collect(),
        normalized,
    })
}
