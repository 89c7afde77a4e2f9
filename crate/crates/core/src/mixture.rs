//! Hierarchical data-mixture weights and seeded batch planning.
//!
//! A mixture has top-level groups (e.g. single-image / multi-image /
//! text-only) whose weights sum to one. Inside a group every category has one
//! of three weight forms:
//!
//! * `size_proportional`: mass equal to its record count;
//! * `ratio_to_reference { alpha, reference }`: `alpha` times the mass of
//!   another category in the same group (chains allowed, cycles rejected);
//! * `explicit_fraction(f)`: a fixed share `f` of the group.
//!
//! Explicit fractions are taken as-is; the remaining `1 − Σf` of the group
//! is shared by the other categories in proportion to their masses. A group
//! made only of explicit fractions is normalized by their sum.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("top-level weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("cyclic ratio reference through `{0}`")]
    CyclicReference(String),
    #[error("group `{group}` references unknown category `{reference}`")]
    UnknownReference { group: String, reference: String },
    #[error("group `{0}` has zero total mass")]
    ZeroMass(String),
    #[error("category `{0}` has no records")]
    EmptyCategory(String),
    #[error("unknown mixture preset `{0}`")]
    UnknownPreset(String),
    #[error("mixture config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    ExplicitFraction(f64),
    SizeProportional,
    RatioToReference { alpha: f64, reference: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub records: u64,
    pub weight: WeightForm,
}

impl CategorySpec {
    pub fn sized(name: &str, records: u64) -> Self {
        Self {
            name: name.into(),
            records,
            weight: WeightForm::SizeProportional,
        }
    }

    pub fn fraction(name: &str, records: u64, f: f64) -> Self {
        Self {
            name: name.into(),
            records,
            weight: WeightForm::ExplicitFraction(f),
        }
    }

    pub fn ratio(name: &str, records: u64, alpha: f64, reference: &str) -> Self {
        Self {
            name: name.into(),
            records,
            weight: WeightForm::RatioToReference {
                alpha,
                reference: reference.into(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub weight: f64,
    #[serde(rename = "category")]
    pub categories: Vec<CategorySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "group")]
    pub groups: Vec<GroupSpec>,
}

impl MixtureSpec {
    pub fn from_toml(text: &str) -> Result<Self, MixtureError> {
        toml::from_str(text).map_err(|e| MixtureError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mixture spec is always representable as TOML")
    }
}

/// A category's resolved sampling probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCategory {
    pub group: String,
    pub name: String,
    pub records: u64,
    pub probability: f64,
}

impl ResolvedCategory {
    pub fn key(&self) -> String {
        format!("{}/{}", self.group, self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedWeights {
    pub categories: Vec<ResolvedCategory>,
}

impl ResolvedWeights {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.categories
            .iter()
            .find(|c| c.key() == key)
            .map(|c| c.probability)
    }

    pub fn group_total(&self, group: &str) -> f64 {
        self.categories
            .iter()
            .filter(|c| c.group == group)
            .map(|c| c.probability)
            .sum()
    }
}

fn check_spec(spec: &MixtureSpec) -> Result<(), MixtureError> {
    if spec.groups.is_empty() {
        return Err(MixtureError::Invalid("no groups".into()));
    }
    let mut total = 0.0;
    let mut names = std::collections::HashSet::new();
    for g in &spec.groups {
        if !g.weight.is_finite() || g.weight < 0.0 {
            return Err(MixtureError::Invalid(format!(
                "group `{}` has weight {}",
                g.name, g.weight
            )));
        }
        if !names.insert(g.name.as_str()) {
            return Err(MixtureError::Invalid(format!(
                "duplicate group `{}`",
                g.name
            )));
        }
        if g.categories.is_empty() {
            return Err(MixtureError::Invalid(format!(
                "group `{}` has no categories",
                g.name
            )));
        }
        let mut cats = std::collections::HashSet::new();
        for c in &g.categories {
            if !cats.insert(c.name.as_str()) {
                return Err(MixtureError::Invalid(format!(
                    "duplicate category `{}/{}`",
                    g.name, c.name
                )));
            }
            if c.records == 0 {
                return Err(MixtureError::EmptyCategory(format!(
                    "{}/{}",
                    g.name, c.name
                )));
            }
            match &c.weight {
                WeightForm::ExplicitFraction(f) if !(*f > 0.0 && *f <= 1.0) => {
                    return Err(MixtureError::Invalid(format!(
                        "`{}/{}`: explicit fraction {f} outside (0, 1]",
                        g.name, c.name
                    )))
                }
                WeightForm::RatioToReference { alpha, .. }
                    if !(alpha.is_finite() && *alpha >= 0.0) =>
                {
                    return Err(MixtureError::Invalid(format!(
                        "`{}/{}`: alpha {alpha} must be finite and nonnegative",
                        g.name, c.name
                    )))
                }
                _ => {}
            }
        }
        total += g.weight;
    }
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(MixtureError::WeightSum(total));
    }
    Ok(())
}

/// Raw (unnormalized) mass of every non-explicit category in a group.
fn group_masses(group: &GroupSpec) -> Result<Vec<Option<f64>>, MixtureError> {
    let index: HashMap<&str, usize> = group
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Todo,
        Visiting,
        Done(f64),
    }
    let mut state = vec![State::Todo; group.categories.len()];

    fn visit(
        i: usize,
        group: &GroupSpec,
        index: &HashMap<&str, usize>,
        state: &mut [State],
    ) -> Result<f64, MixtureError> {
        match state[i] {
            State::Done(m) => return Ok(m),
            State::Visiting => {
                return Err(MixtureError::CyclicReference(
                    group.categories[i].name.clone(),
                ))
            }
            State::Todo => {}
        }
        state[i] = State::Visiting;
        let cat = &group.categories[i];
        let mass = match &cat.weight {
            WeightForm::SizeProportional => cat.records as f64,
            WeightForm::RatioToReference { alpha, reference } => {
                let j = *index.get(reference.as_str()).ok_or_else(|| {
                    MixtureError::UnknownReference {
                        group: group.name.clone(),
                        reference: reference.clone(),
                    }
                })?;
                if matches!(group.categories[j].weight, WeightForm::ExplicitFraction(_)) {
                    return Err(MixtureError::Invalid(format!(
                        "`{}/{}` references explicit-fraction category `{reference}`",
                        group.name, cat.name
                    )));
                }
                alpha * visit(j, group, index, state)?
            }
            WeightForm::ExplicitFraction(_) => unreachable!("explicit fractions carry no mass"),
        };
        state[i] = State::Done(mass);
        Ok(mass)
    }

    group
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| match c.weight {
            WeightForm::ExplicitFraction(_) => Ok(None),
            _ => visit(i, group, &index, &mut state).map(Some),
        })
        .collect()
}

/// Per-category sampling probabilities, in declaration order.
pub fn resolve_weights(spec: &MixtureSpec) -> Result<ResolvedWeights, MixtureError> {
    check_spec(spec)?;
    let mut categories = Vec::new();
    for group in &spec.groups {
        let masses = group_masses(group)?;
        let explicit: f64 = group
            .categories
            .iter()
            .filter_map(|c| match c.weight {
                WeightForm::ExplicitFraction(f) => Some(f),
                _ => None,
            })
            .sum();
        let mass_total: f64 = masses.iter().flatten().sum();

        // share of the group given to mass-based categories, and the divisor
        // applied to explicit fractions
        let (mass_share, explicit_div) = if mass_total > 0.0 && explicit > 0.0 {
            if explicit >= 1.0 {
                return Err(MixtureError::Invalid(format!(
                    "group `{}`: explicit fractions sum to {explicit}, leaving nothing for other categories",
                    group.name
                )));
            }
            (1.0 - explicit, 1.0)
        } else if mass_total > 0.0 {
            (1.0, 1.0)
        } else if explicit > 0.0 {
            (0.0, explicit)
        } else {
            return Err(MixtureError::ZeroMass(group.name.clone()));
        };

        for (cat, mass) in group.categories.iter().zip(&masses) {
            let within = match (&cat.weight, mass) {
                (WeightForm::ExplicitFraction(f), _) => f / explicit_div,
                (_, Some(m)) => mass_share * m / mass_total,
                (_, None) => unreachable!(),
            };
            categories.push(ResolvedCategory {
                group: group.name.clone(),
                name: cat.name.clone(),
                records: cat.records,
                probability: within * group.weight,
            });
        }
    }
    Ok(ResolvedWeights { categories })
}

/// One sampled record: category position in the resolved weights and record index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub category: u32,
    pub record: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub weights: ResolvedWeights,
    pub batches: Vec<Vec<Assignment>>,
    pub realized_counts: Vec<u64>,
}

impl BatchPlan {
    pub fn total_assignments(&self) -> u64 {
        self.realized_counts.iter().sum()
    }

    /// Per-category counts of one batch.
    pub fn batch_counts(&self, batch: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.weights.categories.len()];
        for a in &self.batches[batch] {
            counts[a.category as usize] += 1;
        }
        counts
    }
}

/// Sparse Fisher-Yates over `0..n`: every index is drawn once per epoch,
/// and a fresh permutation starts when the epoch runs out.
#[derive(Debug)]
struct PermutationStream {
    n: u64,
    drawn: u64,
    swaps: HashMap<u64, u64>,
    rng: ChaCha8Rng,
}

impl PermutationStream {
    fn new(n: u64, rng: ChaCha8Rng) -> Self {
        Self {
            n,
            drawn: 0,
            swaps: HashMap::new(),
            rng,
        }
    }

    fn next(&mut self) -> u64 {
        if self.drawn == self.n {
            self.drawn = 0;
            self.swaps.clear();
        }
        let i = self.drawn;
        let j = self.rng.gen_range(i..self.n);
        let at_i = *self.swaps.get(&i).unwrap_or(&i);
        let at_j = *self.swaps.get(&j).unwrap_or(&j);
        self.swaps.insert(j, at_i);
        self.swaps.remove(&i);
        self.drawn += 1;
        at_j
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-batch category counts: floors of `p·batch`, with the leftover seats
/// handed out by systematic sampling over the fractional remainders, so
/// every count is the floor or ceiling of its expectation and long-run
/// counts are unbiased.
fn allocate(probs: &[f64], batch: usize, rng: &mut ChaCha8Rng, out: &mut [u64]) {
    let b = batch as f64;
    let mut remainders = vec![0.0; probs.len()];
    let mut assigned = 0u64;
    for (i, &p) in probs.iter().enumerate() {
        let expected = p * b;
        let floor = (expected + 1e-9).floor();
        out[i] = floor as u64;
        remainders[i] = (expected - floor).max(0.0);
        assigned += out[i];
    }
    let mut seats = (batch as u64).saturating_sub(assigned);
    if seats == 0 {
        return;
    }
    let total: f64 = remainders.iter().sum();
    if total > 0.0 {
        let scale = seats as f64 / total;
        let u: f64 = rng.gen();
        let mut point = u;
        let mut cum = 0.0;
        for (i, r) in remainders.iter_mut().enumerate() {
            let next = cum + *r * scale;
            if point < next && seats > 0 {
                out[i] += 1;
                seats -= 1;
                point += 1.0;
                *r = 0.0;
            }
            cum = next;
        }
    }
    // floating-point leftovers go to the largest remaining remainders
    while seats > 0 {
        let i = remainders
            .iter()
            .enumerate()
            .filter(|(i, _)| probs[*i] > 0.0)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("at least one category has positive probability");
        out[i] += 1;
        remainders[i] = -1.0;
        seats -= 1;
    }
}

/// Deterministic batch plan for `spec.seed`.
pub fn plan_batches(
    spec: &MixtureSpec,
    batch_size: usize,
    num_batches: usize,
) -> Result<BatchPlan, MixtureError> {
    let weights = resolve_weights(spec)?;
    if batch_size == 0 {
        return Err(MixtureError::Invalid("batch size must be positive".into()));
    }
    let probs: Vec<f64> = weights.categories.iter().map(|c| c.probability).collect();
    let mut alloc_rng = stream_rng(spec.seed, 0);
    let mut streams: Vec<PermutationStream> = weights
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| PermutationStream::new(c.records, stream_rng(spec.seed, i as u64 + 1)))
        .collect();

    let mut realized = vec![0u64; probs.len()];
    let mut counts = vec![0u64; probs.len()];
    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        allocate(&probs, batch_size, &mut alloc_rng, &mut counts);
        let mut batch = Vec::with_capacity(batch_size);
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                batch.push(Assignment {
                    category: c as u32,
                    record: streams[c].next(),
                });
            }
            realized[c] += n;
        }
        batch.shuffle(&mut alloc_rng);
        batches.push(batch);
    }
    Ok(BatchPlan {
        batch_size,
        seed: spec.seed,
        weights,
        batches,
        realized_counts: realized,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryObservation {
    pub category: String,
    pub expected_fraction: f64,
    pub observed_count: u64,
    pub observed_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub total: u64,
    pub categories: Vec<CategoryObservation>,
    /// Observed fraction per top-level group.
    pub groups: BTreeMap<String, f64>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
}

pub fn empirical_report(plan: &BatchPlan) -> Result<EmpiricalReport, MixtureError> {
    let total = plan.total_assignments();
    if total == 0 {
        return Err(MixtureError::Invalid("empty batch plan".into()));
    }
    let mut categories = Vec::new();
    let mut groups: BTreeMap<String, f64> = BTreeMap::new();
    let mut chi = 0.0;
    let mut live = 0usize;
    for (cat, &count) in plan.weights.categories.iter().zip(&plan.realized_counts) {
        let observed = count as f64 / total as f64;
        let expected = cat.probability * total as f64;
        if expected > 0.0 {
            chi += (count as f64 - expected).powi(2) / expected;
            live += 1;
        }
        *groups.entry(cat.group.clone()).or_default() += observed;
        categories.push(CategoryObservation {
            category: cat.key(),
            expected_fraction: cat.probability,
            observed_count: count,
            observed_fraction: observed,
        });
    }
    Ok(EmpiricalReport {
        total,
        categories,
        groups,
        chi_square: chi,
        degrees_of_freedom: live.saturating_sub(1),
    })
}

/// Built-in mixtures.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 4] = ["mm15-sft", "mm15-sft-alpha", "mm15-cpt", "mm15-pt"];

    pub const DEFAULT_SEED: u64 = 1234;

    /// Final SFT mixture: 80% single-image, 10% multi-image, 10% text-only,
    /// with the single-image share split into fixed sub-fractions of the
    /// whole mixture.
    pub fn sft() -> MixtureSpec {
        MixtureSpec {
            seed: DEFAULT_SEED,
            groups: vec![
                GroupSpec {
                    name: "single-image".into(),
                    weight: 0.8,
                    categories: vec![
                        CategorySpec::fraction("text-rich", 2_400_000, 0.372),
                        CategorySpec::fraction("refer-ground", 1_100_000, 0.225),
                        CategorySpec::fraction("general", 1_700_000, 0.113),
                        CategorySpec::fraction("math", 400_000, 0.056),
                        CategorySpec::fraction("code", 300_000, 0.023),
                        CategorySpec::fraction("science", 25_000, 0.011),
                    ],
                },
                GroupSpec {
                    name: "multi-image".into(),
                    weight: 0.1,
                    categories: vec![CategorySpec::sized("multi-image", 1_000_000)],
                },
                GroupSpec {
                    name: "text-only".into(),
                    weight: 0.1,
                    categories: vec![CategorySpec::sized("text-only", 1_000_000)],
                },
            ],
        }
    }

    /// Single-image SFT mixture written with per-category ratios to the
    /// general category (science 0.1, math 0.5, code 0.2, refer&ground 2.0).
    pub fn sft_alpha() -> MixtureSpec {
        MixtureSpec {
            seed: DEFAULT_SEED,
            groups: vec![GroupSpec {
                name: "single-image".into(),
                weight: 1.0,
                categories: vec![
                    CategorySpec::sized("general", 1_700_000),
                    CategorySpec::sized("text-rich", 2_400_000),
                    CategorySpec::ratio("science", 25_000, 0.1, "general"),
                    CategorySpec::ratio("math", 400_000, 0.5, "general"),
                    CategorySpec::ratio("code", 300_000, 0.2, "general"),
                    CategorySpec::ratio("refer-ground", 1_100_000, 2.0, "general"),
                ],
            }],
        }
    }

    /// Continual pre-training: four OCR datasets sampled equally.
    pub fn cpt() -> MixtureSpec {
        MixtureSpec {
            seed: DEFAULT_SEED,
            groups: vec![GroupSpec {
                name: "ocr".into(),
                weight: 1.0,
                categories: ["pdfa", "idl", "rendered-text", "docstruct-4m"]
                    .iter()
                    .map(|n| CategorySpec::fraction(n, 11_250_000, 0.25))
                    .collect(),
            }],
        }
    }

    /// Pre-training: captions 50, interleaved 10, text-only 40.
    pub fn pt() -> MixtureSpec {
        let group = |name: &str, weight: f64, records: u64| GroupSpec {
            name: name.into(),
            weight,
            categories: vec![CategorySpec::sized(name, records)],
        };
        MixtureSpec {
            seed: DEFAULT_SEED,
            groups: vec![
                group("image-caption", 0.5, 2_000_000_000),
                group("interleaved", 0.1, 600_000_000),
                group("text-only", 0.4, 1_000_000_000),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<MixtureSpec, MixtureError> {
        match name {
            "mm15-sft" => Ok(sft()),
            "mm15-sft-alpha" => Ok(sft_alpha()),
            "mm15-cpt" => Ok(cpt()),
            "mm15-pt" => Ok(pt()),
            other => Err(MixtureError::UnknownPreset(other.to_string())),
        }
    }
}
