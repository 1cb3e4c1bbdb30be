//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Set `SSDIFF_ACCEPTANCE_ONLY=1,2,9` to run a subset. The toy-scale
//! end-to-end runs keep their artifacts under the cargo target temp dir.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use ssdiff::cli::{self, Cli, FUSED_FILE, FUSED_KEY, LOG_FILE};
use ssdiff::data::{load_dataset, read_planes, RATIO};
use ssdiff::metrics;
use ssdiff::network::Variant;
use ssdiff::training::StepRecord;

use common::{ensure, Check};

/// Trailing window that stands for the "final" training loss.
const FINAL_WINDOW: usize = 50;
/// Iterations per variant in the ablation ordering check.
const ABLATION_ITERS: usize = 600;

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cli(args: &[&str]) -> Result<String, String> {
    let parsed = Cli::try_parse_from(std::iter::once("ssdiff").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    cli::run(&parsed).map_err(|e| e.to_string())
}

fn read_log(path: &Path) -> Result<Vec<StepRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines().map(|l| serde_json::from_str(l).map_err(|e| e.to_string())).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn within(limit: Duration, start: Instant, check: Check) -> Check {
    let took = start.elapsed();
    match check {
        Ok(d) if took <= limit => Ok(d),
        Ok(d) => Err(format!("{d}; took {took:.1?}, limit {limit:?}")),
        Err(d) => Err(d),
    }
}

/// Synth → train (2000 joint + 200 alternating iterations) → DDIM-100 sample
/// through the command-line entry point, then loss and quality checks.
fn toy_end_to_end() -> Check {
    let dir = work_dir("toy");
    let (cfg, out) = (toy_config(), dir.to_str().unwrap().to_string());
    let cfg = cfg.to_str().unwrap();
    let shared = ["--config", cfg, "--out", &out, "--data-root", &out];
    let with = |cmd: &[&str]| -> Vec<String> { cmd.iter().chain(shared.iter()).map(|s| s.to_string()).collect() };
    let run = |cmd: &[&str]| -> Result<String, String> {
        let args = with(cmd);
        cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    run(&["synth"])?;
    let t_train = Instant::now();
    run(&["train"])?;
    let train_secs = t_train.elapsed().as_secs_f64();
    let ckpt = dir.join(cli::CHECKPOINT_FILE);
    let t_sample = Instant::now();
    run(&["sample", "--checkpoint", ckpt.to_str().unwrap()])?;
    let sample_secs = t_sample.elapsed().as_secs_f64();

    let records = read_log(&dir.join(LOG_FILE))?;
    let first = records.first().ok_or("empty training log")?.loss;
    let last = cli::tail_mean(&records, FINAL_WINDOW);
    let ratio = last / first;

    let scenes = load_dataset(dir.join("train.h5"), 2047.0).map_err(|e| e.to_string())?;
    let fused = read_planes(dir.join(FUSED_FILE), FUSED_KEY, 2047.0).map_err(|e| e.to_string())?;
    let (mut sam_f, mut sam_l, mut erg_f, mut erg_l) = (vec![], vec![], vec![], vec![]);
    for (f, s) in fused.iter().zip(&scenes) {
        let gt = s.gt.as_ref().ok_or("scene without reference")?;
        let score = |p| -> Result<(f64, f64), String> {
            Ok((
                metrics::sam(p, gt).map_err(|e| e.to_string())?,
                metrics::ergas(p, gt, RATIO as f64).map_err(|e| e.to_string())?,
            ))
        };
        let (a, b) = score(f)?;
        let (c, d) = score(&s.lms)?;
        sam_f.push(a);
        erg_f.push(b);
        sam_l.push(c);
        erg_l.push(d);
    }
    let (sf, sl, ef, el) = (mean(&sam_f), mean(&sam_l), mean(&erg_f), mean(&erg_l));
    ensure(
        ratio <= 0.1 && sf < sl && ef < el,
        format!(
            "{} iters: loss step-1 {first:.5} → final(mean last {FINAL_WINDOW}) {last:.5} = {:.1}% (need ≤ 10%); \
             SAM {sf:.3} vs lms {sl:.3}; ERGAS {ef:.3} vs lms {el:.3}; train {train_secs:.0}s, sample {sample_secs:.0}s",
            records.len(),
            100.0 * ratio
        ),
    )
}

/// V3, V4 and V5 trained under one seed and budget; V5's trailing loss must
/// not exceed either.
fn ablation_ordering() -> Check {
    let dir = work_dir("ablation");
    let out = dir.to_str().unwrap().to_string();
    let cfg = toy_config();
    let iters = ABLATION_ITERS.to_string();
    let total = format!("train.total_iters={iters}");
    let start = format!("train.finetune_start={iters}");
    cli(&["synth", "--config", cfg.to_str().unwrap(), "--out", &out])?;
    let parsed = Cli::try_parse_from([
        "ssdiff", "ablate", "--config", cfg.to_str().unwrap(), "--out", &out, "--data-root", &out, "-O", &total, "-O", &start,
    ])
    .map_err(|e| e.to_string())?;
    let run_cfg = parsed.run_config().map_err(|e| e.to_string())?;
    let rows = cli::cmd_ablate(&run_cfg, &dir).map_err(|e| e.to_string())?;
    let loss = |v: Variant| rows.iter().find(|r| r.variant == v).map(|r| r.final_loss).ok_or(format!("{} missing", v.as_str()));
    let (v3, v4, v5) = (loss(Variant::V3)?, loss(Variant::V4)?, loss(Variant::V5)?);
    ensure(
        v5 <= v3 && v5 <= v4,
        format!(
            "{iters} iters, seed {}, mean of last {}: V3 {v3:.5}, V4 {v4:.5}, V5 {v5:.5}",
            run_cfg.train.seed, run_cfg.ablate.tail
        ),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("SSDIFF_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    type Criterion = (u32, &'static str, Box<dyn Fn() -> Check>);
    let minute = Duration::from_secs(60);
    let criteria: Vec<Criterion> = vec![
        (1, "metric identity on 20 scenes", Box::new(move || {
            let t = Instant::now();
            within(minute, t, common::check_metric_identity(20))
        })),
        (2, "metrics match direct-loop oracles, 50 seeds", Box::new(move || {
            let t = Instant::now();
            within(minute, t, common::check_metric_oracles(50))
        })),
        (3, "APFM projections vs per-row evaluation, 100 seeds", Box::new(|| common::check_apfm_projections(100))),
        (4, "L-BAF detach invariant, 10 batches per mask", Box::new(|| common::check_detach_invariant(10))),
        (5, "diffusion algebra over T=1000", Box::new(common::check_diffusion_algebra)),
        (6, "FMIM round trip, DC removal, Parseval", Box::new(common::check_fmim)),
        (7, "finite-difference gradient check (8×8, 4 bands, f64)", Box::new(common::check_gradients)),
        (8, "parameter budget V5 ≈ 1420K, V2 ≈ 654K (±5%)", Box::new(common::check_param_budget)),
        (9, "toy overfit end-to-end", Box::new(move || {
            let t = Instant::now();
            within(30 * minute, t, toy_end_to_end())
        })),
        (10, "ablation ordering V5 ≤ V3, V4", Box::new(ablation_ordering)),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match &result {
            Ok(d) => println!("PASS [{id:>2}] {name} ({secs:.1}s): {d}"),
            Err(d) => {
                println!("FAIL [{id:>2}] {name} ({secs:.1}s): {d}");
                failed.push(*id);
            }
        }
    }
    println!("acceptance: {}/{ran} passed", ran - failed.len());
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
