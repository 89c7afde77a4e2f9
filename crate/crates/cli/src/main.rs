mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use anyres::corpus::{self, RecordManifest, StatsConfig, StatsReport};
use anyres::layout::{self, DEFAULT_TOKENS_PER_FRAME, DEFAULT_VIDEO_FRAMES};
use anyres::mixture::{self, BatchPlan, MixtureSpec};
use anyres::scoring::{self, Category, MetricSet, ScoringConfig};
use anyres::strategy::{parse_range, GridStrategy, StrategyRegistry};
use anyres::tiler::{IndicatorMode, OverviewPosition, SplitConfig, TilePlan};

use config::FileConfig;

const BUILTIN_METRICS: &[(&str, &str)] = &[("mm15-3b", include_str!("../data/mm15-3b.json"))];

#[derive(Parser, Debug)]
#[command(
    name = "anyres",
    version,
    about = "Any-resolution tiling planner and training-data bookkeeping"
)]
struct Cli {
    /// TOML settings file; its values override command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan the tile grid for one image or every image in a manifest.
    Tile(TileArgs),
    /// Corpus-level sub-image and token totals for one or more strategies.
    Stats(StatsArgs),
    /// Sample a batch plan from a data mixture and report realized fractions.
    Mix(MixArgs),
    /// Normalize benchmark metrics and compute category averages.
    Score(ScoreArgs),
    /// Uniform video frame sampling.
    Frames(FramesArgs),
    /// Write a synthetic manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScoreFormat {
    Json,
    Tsv,
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    /// Encoder input edge in pixels.
    #[arg(long, default_value_t = 672)]
    r: u32,
    /// Allowed tile counts.
    #[arg(long, value_name = "MIN:MAX", default_value = "4:9", value_parser = parse_range)]
    grid: (u32, u32),
    /// Tokens per sub-image.
    #[arg(long, default_value_t = 144)]
    tokens: u32,
    #[arg(long, default_value_t = IndicatorMode::Index)]
    indicator: IndicatorMode,
    /// Tokens per position indicator.
    #[arg(long, default_value_t = 1)]
    indicator_tokens: u32,
    #[arg(long, default_value_t = OverviewPosition::After)]
    overview: OverviewPosition,
    /// Records with at least this many images are not split.
    #[arg(long, default_value_t = 3)]
    split_threshold: u32,
}

#[derive(Args, Debug)]
struct TileArgs {
    #[arg(long, requires = "w", conflicts_with = "manifest")]
    h: Option<u32>,
    #[arg(long, requires = "h")]
    w: Option<u32>,
    /// NDJSON manifest; one output line per record.
    #[arg(long, required_unless_present = "h")]
    manifest: Option<PathBuf>,
    /// Strategy spec: dynamic, dynamic:MIN:MAX, static:RxC or single.
    #[arg(long, default_value = "dynamic")]
    strategy: String,
    #[command(flatten)]
    split: SplitArgs,
    /// Treat malformed manifest lines as fatal.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long, conflicts_with = "preset")]
    manifest: Option<PathBuf>,
    /// Synthetic corpus preset used when no manifest is given.
    #[arg(long, default_value = "web-mix")]
    preset: String,
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    #[arg(long, env = "ANYRES_SEED", default_value_t = mixture::presets::DEFAULT_SEED)]
    seed: u64,
    /// Strategies to compare; the first is the baseline for ratios.
    #[arg(long, num_args = 1.., default_values_t = vec!["static:2x2".to_string(), "dynamic".to_string()])]
    compare: Vec<String>,
    #[arg(long, default_value_t = 1)]
    shards: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct MixArgs {
    /// Built-in mixture: mm15-sft, mm15-sft-alpha, mm15-cpt or mm15-pt.
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    preset: Option<String>,
    /// Mixture TOML file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1000)]
    batches: usize,
    /// Overrides the mixture's own seed.
    #[arg(long, env = "ANYRES_SEED")]
    seed: Option<u64>,
    /// Write the full batch plan as NDJSON.
    #[arg(long, value_name = "FILE")]
    plan_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// JSON object of benchmark name to raw value.
    #[arg(long, required_unless_present = "builtin", conflicts_with = "builtin")]
    metrics: Option<PathBuf>,
    /// Shipped metrics set (mm15-3b).
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long, default_value_t = 5)]
    refcoco_splits: usize,
    #[arg(long, value_enum, default_value_t = ScoreFormat::Json)]
    format: ScoreFormat,
}

#[derive(Args, Debug)]
struct FramesArgs {
    /// Frames in the source video.
    #[arg(long)]
    total: u64,
    /// Frames to sample.
    #[arg(long, default_value_t = DEFAULT_VIDEO_FRAMES)]
    n: u64,
    #[arg(long, default_value_t = DEFAULT_TOKENS_PER_FRAME)]
    tokens: u32,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "web-mix")]
    preset: String,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, env = "ANYRES_SEED", default_value_t = mixture::presets::DEFAULT_SEED)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit code 1: bad invocation. Exit code 2: the inputs themselves are bad.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Res<T = ()> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Res {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(usage)?,
        None => FileConfig::default(),
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cli.command {
        Command::Tile(a) => cmd_tile(a, &file, &mut out)?,
        Command::Stats(a) => cmd_stats(a, &file, &mut out)?,
        Command::Mix(a) => cmd_mix(a, &file, &mut out)?,
        Command::Score(a) => cmd_score(a, &file, &mut out)?,
        Command::Frames(a) => cmd_frames(a, &mut out)?,
        Command::Synth(a) => cmd_synth(a, &file, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn split_config(a: &SplitArgs, file: &FileConfig) -> Res<SplitConfig> {
    let mut cfg = SplitConfig {
        encoder_edge: a.r,
        min_tiles: a.grid.0,
        max_tiles: a.grid.1,
        tokens_per_tile: a.tokens,
        indicator_mode: a.indicator,
        overview_position: a.overview,
        multi_image_split_threshold: a.split_threshold,
        indicator_tokens: a.indicator_tokens,
    };
    file.apply_split(&mut cfg);
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn build_strategy(spec: &str) -> Res<std::sync::Arc<dyn GridStrategy>> {
    StrategyRegistry::builtin().build(spec).map_err(usage)
}

fn require_file(path: &Path) -> Res {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow!("{} is not a readable file", path.display())))
    }
}

fn load_manifest(path: &Path, strict: bool) -> Res<Vec<RecordManifest>> {
    let reader =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut it = corpus::ManifestReader::new(reader).strict(strict);
    let records = it.by_ref().collect::<Result<Vec<_>, _>>().map_err(data)?;
    for d in it.diagnostics() {
        eprintln!("warning: {}: skipped {d}", path.display());
    }
    Ok(records)
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Res {
    serde_json::to_writer(&mut *out, value).map_err(|e| data(anyhow!(e)))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn plan_json(image: usize, p: &TilePlan) -> serde_json::Value {
    json!({
        "image": image,
        "h": p.source_h,
        "w": p.source_w,
        "grid": p.grid.to_string(),
        "branch": p.branch,
        "scale": p.resize.scale.value(),
        "resized": [p.resize.resized_h, p.resize.resized_w],
        "canvas": [p.canvas_h(), p.canvas_w()],
        "padding_area": p.padding_area(),
        "tiles": p.tiles.iter().map(|t| [t.x, t.y, t.width, t.height]).collect::<Vec<_>>(),
        "overview": p.include_overview,
        "subimages": p.total_subimages,
        "image_tokens": p.image_tokens(),
    })
}

fn cmd_tile<W: Write>(a: TileArgs, file: &FileConfig, out: &mut W) -> Res {
    let cfg = split_config(&a.split, file)?;
    let strategy = build_strategy(file.strategy.as_deref().unwrap_or(&a.strategy))?;
    let records = match (&a.manifest, a.h, a.w) {
        (Some(path), _, _) => {
            require_file(path)?;
            load_manifest(path, a.strict)?
        }
        (None, Some(h), Some(w)) => {
            vec![RecordManifest {
                id: "input".into(),
                category: String::new(),
                images: vec![(w, h)],
                boxes: vec![],
            }]
        }
        _ => return Err(usage(anyhow!("give --h and --w, or --manifest"))),
    };
    if a.format == Format::Table {
        writeln!(
            out,
            "{:<16} {:>5} {:>6} {:>6} {:>6} {:>9} {:>9} {:>6}",
            "record", "image", "h", "w", "grid", "branch", "subimages", "tokens"
        )?;
    }
    for rec in &records {
        let plans = layout::plan_record(&rec.images, strategy.as_ref(), &cfg)
            .map_err(|e| data(anyhow!("record `{}`: {e}", rec.id)))?;
        let tokens = layout::token_budget(&layout::assemble(&plans, &cfg).map_err(data)?);
        match a.format {
            Format::Json if a.manifest.is_none() => {
                let mut v = plan_json(0, &plans[0]);
                v["indicator_tokens"] = json!(tokens.indicator_tokens);
                v["total_tokens"] = json!(tokens.total_tokens);
                write_line(out, &v)?;
            }
            Format::Json => write_line(
                out,
                &json!({
                    "id": rec.id,
                    "category": rec.category,
                    "images": plans.iter().enumerate().map(|(i, p)| plan_json(i, p)).collect::<Vec<_>>(),
                    "image_tokens": tokens.image_tokens,
                    "indicator_tokens": tokens.indicator_tokens,
                    "total_tokens": tokens.total_tokens,
                }),
            )?,
            Format::Table => {
                for (i, p) in plans.iter().enumerate() {
                    writeln!(
                        out,
                        "{:<16} {:>5} {:>6} {:>6} {:>6} {:>9} {:>9} {:>6}",
                        rec.id,
                        i,
                        p.source_h,
                        p.source_w,
                        p.grid.to_string(),
                        format!("{:?}", p.branch).to_lowercase(),
                        p.total_subimages,
                        p.image_tokens()
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn ratio(a: &StatsReport, b: &StatsReport) -> Option<f64> {
    (a.total_subimages > 0).then(|| b.total_subimages as f64 / a.total_subimages as f64)
}

fn cmd_stats<W: Write>(a: StatsArgs, file: &FileConfig, out: &mut W) -> Res {
    let cfg = split_config(&a.split, file)?;
    let configs = a
        .compare
        .iter()
        .map(|spec| Ok(StatsConfig::new(build_strategy(spec)?, cfg.clone())))
        .collect::<Res<Vec<_>>>()?;
    let shards = file.shards.unwrap_or(a.shards);
    if shards == 0 {
        return Err(usage(anyhow!("--shards must be at least 1")));
    }
    let records = match &a.manifest {
        Some(path) => {
            require_file(path)?;
            load_manifest(path, a.strict)?
        }
        None => {
            let dist = corpus::presets::by_name(&a.preset).map_err(usage)?;
            corpus::synth_corpus(&dist, a.count, file.seed.unwrap_or(a.seed)).map_err(data)?
        }
    };
    let reports = corpus::corpus_stats_sharded(&records, &configs, shards).map_err(data)?;
    let base = &reports[0];
    match a.format {
        Format::Json => {
            for r in &reports {
                write_line(out, r)?;
            }
            for r in &reports[1..] {
                write_line(
                    out,
                    &json!({"baseline": base.label, "label": r.label, "ratio": ratio(base, r)}),
                )?;
            }
        }
        Format::Table => {
            writeln!(
                out,
                "{:<16} {:>10} {:>12} {:>14} {:>8} {:>8}",
                "strategy", "records", "subimages", "image_tokens", "mean", "ratio"
            )?;
            for r in &reports {
                let ratio = ratio(base, r).map_or("-".to_string(), |x| format!("{x:.4}"));
                writeln!(
                    out,
                    "{:<16} {:>10} {:>12} {:>14} {:>8.3} {:>8}",
                    r.label,
                    r.record_count,
                    r.total_subimages,
                    r.total_image_tokens,
                    r.mean_subimages(),
                    ratio
                )?;
            }
        }
    }
    Ok(())
}

fn write_plan(path: &Path, plan: &BatchPlan) -> Res {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_line(
        &mut w,
        &json!({"batch_size": plan.batch_size, "seed": plan.seed, "categories": plan.weights.categories}),
    )?;
    for (i, batch) in plan.batches.iter().enumerate() {
        let items: Vec<[u64; 2]> = batch
            .iter()
            .map(|a| [a.category as u64, a.record])
            .collect();
        write_line(&mut w, &json!({"batch": i, "items": items}))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_mix<W: Write>(a: MixArgs, file: &FileConfig, out: &mut W) -> Res {
    let mut spec = match (&a.preset, &a.spec) {
        (Some(name), _) => mixture::presets::by_name(name).map_err(usage)?,
        (None, Some(path)) => {
            require_file(path)?;
            let text = std::fs::read_to_string(path)?;
            MixtureSpec::from_toml(&text).map_err(data)?
        }
        (None, None) => return Err(usage(anyhow!("give --preset or --spec"))),
    };
    if let Some(seed) = file.seed.or(a.seed) {
        spec.seed = seed;
    }
    if a.batch == 0 || a.batches == 0 {
        return Err(usage(anyhow!("--batch and --batches must be positive")));
    }
    let plan = mixture::plan_batches(&spec, a.batch, a.batches).map_err(data)?;
    let report = mixture::empirical_report(&plan).map_err(data)?;
    if let Some(path) = &a.plan_out {
        write_plan(path, &plan)?;
    }
    match a.format {
        Format::Json => write_line(out, &report)?,
        Format::Table => {
            writeln!(
                out,
                "{:<32} {:>10} {:>10} {:>12}",
                "category", "expected", "observed", "count"
            )?;
            for c in &report.categories {
                writeln!(
                    out,
                    "{:<32} {:>10.6} {:>10.6} {:>12}",
                    c.category, c.expected_fraction, c.observed_fraction, c.observed_count
                )?;
            }
            for (g, f) in &report.groups {
                writeln!(out, "{:<32} {:>10} {:>10.6}", format!("group {g}"), "", f)?;
            }
            writeln!(
                out,
                "chi-square {:.4} on {} dof",
                report.chi_square, report.degrees_of_freedom
            )?;
        }
    }
    Ok(())
}

fn cmd_score<W: Write>(a: ScoreArgs, file: &FileConfig, out: &mut W) -> Res {
    let text = match (&a.metrics, &a.builtin) {
        (Some(path), _) => {
            require_file(path)?;
            std::fs::read_to_string(path)?
        }
        (None, Some(name)) => BUILTIN_METRICS
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| usage(anyhow!("unknown builtin metrics `{name}`")))?,
        (None, None) => return Err(usage(anyhow!("give --metrics or --builtin"))),
    };
    let cfg = ScoringConfig {
        refcoco_splits: file.scoring.refcoco_splits.unwrap_or(a.refcoco_splits),
    };
    let metrics = MetricSet::from_json(&text).map_err(data)?;
    let report = scoring::score_report(&metrics, &cfg).map_err(data)?;
    match a.format {
        ScoreFormat::Json => write_line(out, &report)?,
        ScoreFormat::Tsv => {
            writeln!(out, "kind\tname\tvalue")?;
            for c in Category::ALL {
                writeln!(out, "category\t{}\t{}", c.id(), report.category(c))?;
            }
            writeln!(out, "summary\tmmbase\t{}", report.mmbase)?;
            for (b, v) in &report.normalized {
                let kind = if report.excluded.contains(b) {
                    "excluded"
                } else {
                    "benchmark"
                };
                writeln!(out, "{kind}\t{b}\t{v}")?;
            }
        }
    }
    Ok(())
}

fn cmd_frames<W: Write>(a: FramesArgs, out: &mut W) -> Res {
    let mut plan = layout::frame_plan(a.total, a.n).map_err(usage)?;
    plan.tokens_per_frame = a.tokens;
    write_line(
        out,
        &json!({
            "source_frames": plan.source_frames,
            "sampled": plan.sampled,
            "tokens_per_frame": plan.tokens_per_frame,
            "total_tokens": plan.total_tokens(),
        }),
    )
}

fn cmd_synth<W: Write>(a: SynthArgs, file: &FileConfig, out: &mut W) -> Res {
    let dist = corpus::presets::by_name(&a.preset).map_err(usage)?;
    let records =
        corpus::synth_corpus(&dist, a.count, file.seed.unwrap_or(a.seed)).map_err(data)?;
    match &a.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            corpus::write_manifest(BufWriter::new(f), &records).map_err(data)?;
        }
        None => corpus::write_manifest(out, &records).map_err(data)?,
    }
    Ok(())
}
