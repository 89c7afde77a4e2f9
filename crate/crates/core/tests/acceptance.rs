//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! reports a PASS/FAIL line in normal `cargo test` output.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use anyres::coords::{NormBox, Quantizer, Visibility};
use anyres::corpus::{
    corpus_stats_sharded, presets as corpus_presets, synth_corpus, RecordManifest, StatsConfig,
};
use anyres::layout::{assemble, frame_plan, plan_record, token_budget};
use anyres::mixture::{empirical_report, plan_batches, presets, resolve_weights};
use anyres::scoring::{
    category_average, normalize_metric, score_report, Benchmark, Category, MetricSet, MetricValue,
    ScoringConfig,
};
use anyres::strategy::{GridStrategy, StrategyRegistry};
use anyres::tiler::{
    effective_resolution, plan_for_grid, select_grid, Branch, GridSpec, SplitConfig,
};
use common::{oracle_select, same_objective};

/// Dynamic (4,9) sub-image total for 100k web-mix records at the default seed.
const WEB_MIX_DYNAMIC_TOTAL: u64 = 579_562;
const WEB_MIX_SEED: u64 = 1234;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn strategy(spec: &str) -> std::sync::Arc<dyn GridStrategy> {
    StrategyRegistry::builtin().build(spec).unwrap()
}

fn grid_oracle() -> Check {
    let ranges = [(1, 4), (4, 4), (4, 9), (1, 9), (4, 16), (9, 9)];
    let edges = [336, 378, 672];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0u64;
    for _ in 0..10_000 {
        let h = rng.gen_range(1..=8000);
        let w = rng.gen_range(1..=8000);
        for &r in &edges {
            for &(min, max) in &ranges {
                let plan = select_grid(h, w, &SplitConfig::new(r, min, max).unwrap())
                    .map_err(|e| e.to_string())?;
                let o = oracle_select(h, w, r, min, max);
                ensure!(
                    (plan.grid.rows, plan.grid.cols) == (o.rows, o.cols),
                    "{h}x{w} r={r} ({min},{max}): got {} want {}x{}",
                    plan.grid,
                    o.rows,
                    o.cols
                );
                ensure!(
                    same_objective(plan.objective(), o.objective()),
                    "{h}x{w} r={r}: objective {} vs {}",
                    plan.objective(),
                    o.objective()
                );
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} selections agree with the brute-force scan"
    ))
}

fn resolution_ceiling() -> Check {
    let cfg = SplitConfig::new(672, 4, 9).unwrap();
    let p = select_grid(2016, 2016, &cfg).unwrap();
    ensure!(
        p.grid == GridSpec::new(3, 3).unwrap(),
        "2016x2016 picked {}",
        p.grid
    );
    ensure!(
        p.branch == Branch::Cover && p.padding_area() == 0,
        "2016x2016 not a zero-padding cover"
    );
    let p = select_grid(672, 6048, &cfg).unwrap();
    ensure!(
        p.grid == GridSpec::new(1, 9).unwrap(),
        "672x6048 picked {}",
        p.grid
    );
    ensure!(
        p.padding_area() == 0,
        "672x6048 padding {}",
        p.padding_area()
    );
    let p = select_grid(2017, 2017, &cfg).unwrap();
    ensure!(
        p.branch == Branch::Downscale,
        "2017x2017 stayed in the cover branch"
    );
    Ok("2016² → 3x3 cover, 672x6048 → 1x9, 2017² → downscale".into())
}

fn token_accounting() -> Check {
    let cfg = SplitConfig {
        indicator_mode: anyres::IndicatorMode::None,
        ..SplitConfig::default()
    };
    let mut totals = Vec::new();
    for spec in ["static:2x2", "static:3x3"] {
        let plans = plan_record(&[(1000, 800)], strategy(spec).as_ref(), &cfg).unwrap();
        totals.push(token_budget(&assemble(&plans, &cfg).unwrap()).total_tokens);
    }
    ensure!(totals == [720, 1440], "token totals {totals:?}");

    let mp = |r: u32, rows: u32, cols: u32| {
        let cfg = SplitConfig::new(r, 1, 9).unwrap();
        let p = plan_for_grid(1000, 1000, GridSpec::new(rows, cols).unwrap(), &cfg).unwrap();
        (effective_resolution(&p) * 10.0).round() / 10.0
    };
    let got = [mp(672, 2, 2), mp(672, 3, 3), mp(378, 3, 3)];
    ensure!(got == [1.8, 4.1, 1.3], "effective resolutions {got:?}");
    Ok("720 / 1440 tokens; 1.8 / 4.1 / 1.3 MP".into())
}

fn multi_image_policy() -> Check {
    let cfg = SplitConfig::default();
    let dynamic = strategy("dynamic");
    for n in 1..=8usize {
        let images = vec![(1920u32, 1080u32); n];
        let plans = plan_record(&images, dynamic.as_ref(), &cfg).unwrap();
        let tokens: u64 = plans.iter().map(|p| p.image_tokens()).sum();
        if n < 3 {
            ensure!(
                plans.iter().all(|p| p.grid.tile_count() >= 4),
                "{n}-image record was not split"
            );
        } else {
            ensure!(
                tokens == 144 * n as u64,
                "{n}-image record used {tokens} tokens"
            );
        }
    }
    Ok("1-2 images split; >=3 images get 144 tokens each".into())
}

fn efficiency() -> Check {
    let split = SplitConfig::default();
    let stat = StatsConfig::new(strategy("static:2x2"), split.clone());
    let dynm = StatsConfig::new(strategy("dynamic:4:9"), split);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let arbitrary: Vec<RecordManifest> = (0..100_000)
        .map(|i| RecordManifest {
            id: format!("a{i}"),
            category: "any".into(),
            images: vec![(rng.gen_range(1..=8000), rng.gen_range(1..=8000))],
            boxes: vec![],
        })
        .collect();
    let r = corpus_stats_sharded(&arbitrary, std::slice::from_ref(&stat), 8)
        .map_err(|e| e.to_string())?;
    ensure!(
        r[0].total_subimages == 500_000,
        "static total {}",
        r[0].total_subimages
    );

    let web = synth_corpus(&corpus_presets::web_mix(), 100_000, WEB_MIX_SEED).unwrap();
    ensure!(
        web == synth_corpus(&corpus_presets::web_mix(), 100_000, WEB_MIX_SEED).unwrap(),
        "synth not reproducible"
    );
    let configs = [stat, dynm];
    let base = corpus_stats_sharded(&web, &configs, 1).map_err(|e| e.to_string())?;
    for shards in [2, 8, 33] {
        ensure!(
            corpus_stats_sharded(&web, &configs, shards).unwrap() == base,
            "{shards} shards changed the totals"
        );
    }
    let (s, d) = (&base[0], &base[1]);
    ensure!(
        s.total_subimages == 500_000,
        "web-mix static total {}",
        s.total_subimages
    );
    ensure!(
        d.total_subimages == WEB_MIX_DYNAMIC_TOTAL,
        "web-mix dynamic total {}",
        d.total_subimages
    );
    let ratio = d.total_subimages as f64 / s.total_subimages as f64;
    ensure!((1.0..=1.25).contains(&ratio), "ratio {ratio}");
    let lo = *d.subimages_per_record.keys().next().unwrap();
    let hi = *d.subimages_per_record.keys().last().unwrap();
    ensure!(lo >= 1 && hi <= 10, "per-record sub-images span {lo}..{hi}");
    Ok(format!(
        "static 500000; web-mix dynamic {} (x{ratio:.4}), per record {lo}..{hi}",
        d.total_subimages
    ))
}

fn mixture_fidelity() -> Check {
    let plan = plan_batches(&presets::sft(), 256, 10_000).map_err(|e| e.to_string())?;
    let report = empirical_report(&plan).unwrap();
    for (group, want) in [
        ("single-image", 0.8),
        ("multi-image", 0.1),
        ("text-only", 0.1),
    ] {
        let got = report.groups[group];
        ensure!((got - want).abs() <= 0.005, "{group}: {got} vs {want}");
    }
    let subs = [
        ("text-rich", 0.372),
        ("refer-ground", 0.225),
        ("general", 0.113),
        ("math", 0.056),
        ("code", 0.023),
        ("science", 0.011),
    ];
    for (name, want) in subs {
        let key = format!("single-image/{name}");
        let c = report
            .categories
            .iter()
            .find(|c| c.category == key)
            .ok_or(format!("missing {key}"))?;
        ensure!(
            (c.observed_fraction - want).abs() <= 0.005,
            "{name}: {} vs {want}",
            c.observed_fraction
        );
    }

    let cpt = plan_batches(&presets::cpt(), 256, 100).unwrap();
    for b in 0..cpt.batches.len() {
        ensure!(
            cpt.batch_counts(b) == [64, 64, 64, 64],
            "cpt batch {b}: {:?}",
            cpt.batch_counts(b)
        );
    }

    let pt = resolve_weights(&presets::pt()).unwrap();
    let probs: Vec<f64> = pt.categories.iter().map(|c| c.probability).collect();
    ensure!(probs == [0.5, 0.1, 0.4], "pt resolved to {probs:?}");
    Ok(format!(
        "sft groups within 0.5% over {} samples; cpt 64x4; pt 0.5/0.1/0.4",
        report.total
    ))
}

fn coordinate_round_trip() -> Check {
    let q = Quantizer::default();
    let cfg = SplitConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut done = 0;
    let mut worst = 0;
    while done < 10_000 {
        let (h, w) = (rng.gen_range(1..=6000), rng.gen_range(1..=6000));
        let grid = GridSpec::new(rng.gen_range(1..=4), rng.gen_range(1..=4)).unwrap();
        let plan = plan_for_grid(h, w, grid, &cfg).unwrap();
        let x1 = rng.gen_range(0..1000);
        let y1 = rng.gen_range(0..1000);
        let b = NormBox::global(
            x1,
            y1,
            (x1 + rng.gen_range(0..120)).min(999),
            (y1 + rng.gen_range(0..120)).min(999),
        );
        for (tile, _) in plan.tiles.iter().enumerate() {
            let Ok((local, Visibility::Contained)) = q.global_to_local(&b, &plan, tile) else {
                continue;
            };
            let back = q
                .local_to_global(&local, &plan, tile)
                .map_err(|e| e.to_string())?;
            let err = [
                b.x1.abs_diff(back.x1),
                b.y1.abs_diff(back.y1),
                b.x2.abs_diff(back.x2),
                b.y2.abs_diff(back.y2),
            ]
            .into_iter()
            .max()
            .unwrap();
            ensure!(
                err <= 1,
                "{b} -> {local} -> {back} on {} ({h}x{w})",
                plan.grid
            );
            worst = worst.max(err);
            done += 1;
        }
    }
    for _ in 0..2000 {
        let (h, w) = (rng.gen_range(1..=8000), rng.gen_range(1..=8000));
        let plan = plan_for_grid(h, w, GridSpec::single(), &cfg).unwrap();
        let x1 = rng.gen_range(0..1000);
        let y1 = rng.gen_range(0..1000);
        let b = NormBox::global(x1, y1, rng.gen_range(x1..1000), rng.gen_range(y1..1000));
        let (local, _) = q.global_to_local(&b, &plan, 0).unwrap();
        ensure!(
            q.local_to_global(&local, &plan, 0).unwrap() == b,
            "1x1 not identity for {b}"
        );
        ensure!(
            (local.x1, local.y1, local.x2, local.y2) == (b.x1, b.y1, b.x2, b.y2),
            "1x1 local differs for {b}"
        );
    }
    Ok(format!(
        "10000 contained boxes, worst corner error {worst} bin; 1x1 identity"
    ))
}

fn scoring_arithmetic() -> Check {
    let mme = normalize_metric(Benchmark::Mme, &MetricValue::Parts(vec![1478.4, 319.6])).unwrap();
    ensure!((mme - 1798.0 / 28.0).abs() < 1e-9, "MME {mme}");
    ensure!(format!("{mme:.4}") == "64.2143", "MME rounds to {mme:.4}");
    let ocr = normalize_metric(Benchmark::OcrBench, &MetricValue::Scalar(657.0)).unwrap();
    ensure!((ocr - 65.7).abs() < 1e-9, "OCRBench {ocr}");

    for c in Category::ALL {
        for ex in [Benchmark::FerretBench, Benchmark::MuirBench] {
            ensure!(!c.members().contains(&ex), "{ex} counted in {}", c.id());
        }
    }
    let metrics = MetricSet::from_json(include_str!("../../cli/data/mm15-3b.json"))
        .map_err(|e| e.to_string())?;
    let cfg = ScoringConfig::default();
    let base = score_report(&metrics, &cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let mut m = metrics.clone();
        m.insert(Benchmark::FerretBench, rng.gen_range(0.0..200.0));
        m.insert(Benchmark::MuirBench, rng.gen_range(0.0..100.0));
        for c in Category::ALL {
            ensure!(
                category_average(c, &m).unwrap().to_bits() == base.category(c).to_bits(),
                "{} moved with excluded scores",
                c.id()
            );
        }
    }
    Ok(format!(
        "MME {mme:.4}%, OCRBench {ocr:.1}%, MMBase(3B) {:.2}",
        base.mmbase
    ))
}

fn frame_sampling() -> Check {
    let p = frame_plan(48, 24).unwrap();
    ensure!(
        p.sampled == (0..24).map(|i| 2 * i).collect::<Vec<_>>(),
        "M=48: {:?}",
        p.sampled
    );
    let p = frame_plan(24, 24).unwrap();
    ensure!(
        p.sampled == (0..24).collect::<Vec<_>>(),
        "M=24: {:?}",
        p.sampled
    );
    for m in 1..24 {
        let p = frame_plan(m, 24).unwrap();
        ensure!(
            (0..m).all(|f| p.sampled.contains(&f)),
            "M={m} misses frames: {:?}",
            p.sampled
        );
    }
    Ok("stride-2 for 48, identity for 24, full coverage below 24".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("grid-selection oracle equivalence", grid_oracle),
        ("resolution ceiling", resolution_ceiling),
        ("token accounting", token_accounting),
        ("multi-image policy", multi_image_policy),
        ("efficiency statistics", efficiency),
        ("mixture fidelity", mixture_fidelity),
        ("coordinate round trip", coordinate_round_trip),
        ("scoring arithmetic", scoring_arithmetic),
        ("frame sampling", frame_sampling),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
