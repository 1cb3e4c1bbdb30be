//! Batch commands behind the `ssdiff` binary. Every command writes a
//! resolved `config.toml` into its output directory next to its artifacts.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use clap::{Parser, Subcommand};

use crate::config::{RunConfig, DATA_ROOT_ENV};
use crate::data::{load_dataset, read_planes, synth_full, synth_scene_with, write_dataset, write_planes, SceneSample};
use crate::error::{Error, Result};
use crate::figures::{error_map, rgb_preview, save_png};
use crate::image::ImagePlane;
use crate::metrics::{MetricsReport, ResolutionMode};
use crate::network::{Checkpoint, SsdiffNet, Variant};
use crate::sampling::sample_scenes;
use crate::training::{StepRecord, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const LOG_FILE: &str = "train_log.ndjson";
pub const FUSED_FILE: &str = "fused.h5";
pub const FUSED_KEY: &str = "fused";
pub const REPORT_FILE: &str = "metrics.txt";
pub const ABLATION_FILE: &str = "ablation.txt";

#[derive(Debug, Parser)]
#[command(name = "ssdiff", version, about = "Spatial-spectral diffusion pansharpening")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, training and sampling (overrides the file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted override applied after the file, e.g. train.lr=5e-4.
    #[arg(long = "override", short = 'O', value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory that relative dataset paths resolve against.
    #[arg(long, env = DATA_ROOT_ENV, global = true)]
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic reduced-resolution (and optionally full-resolution)
    /// containers.
    Synth,
    /// Train on `data.train`, fine-tuning with alternating branches at the end.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample fused images for `data.test` from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use the raw instead of the EMA weights.
        #[arg(long)]
        raw: bool,
    },
    /// Score fused images against `data.test` and draw figures.
    Eval {
        /// Container holding the `fused` array.
        #[arg(long)]
        fused: PathBuf,
    },
    /// Train each variant in `ablate.variants` under the same seed and budget.
    Ablate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
        }
    }
}

impl Cli {
    /// Resolves file, overrides, `--seed` and `--data-root` into one tree.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if cfg.data.root.is_empty() {
            if let Some(root) = &self.data_root {
                cfg.data.root = root.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(self.command.name()))
    }
}

/// Runs the parsed command; returns a short human-readable summary.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.run_config()?;
    let out = cli.out_dir();
    std::fs::create_dir_all(&out)?;
    cfg.write_snapshot(&out)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &out),
        Command::Train { resume } => cmd_train(&cfg, &out, resume.as_deref()),
        Command::Sample { checkpoint, raw } => cmd_sample(&cfg, &out, checkpoint, *raw),
        Command::Eval { fused } => cmd_eval(&cfg, &out, fused).map(|r| r.to_text()),
        Command::Ablate => cmd_ablate(&cfg, &out).map(|rows| format_ablation(&rows)),
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let s = &cfg.synth;
    let scenes = (0..s.scenes)
        .map(|i| synth_scene_with(s.seed.wrapping_add(i as u64), s.bands, s.size, &s.options))
        .collect::<Result<Vec<_>>>()?;
    let train = out.join("train.h5");
    write_dataset(&train, &scenes, cfg.data.norm_max)?;
    let mut msg = format!("wrote {} reduced scenes to {}", scenes.len(), train.display());
    if s.full_scenes > 0 {
        let full = (0..s.full_scenes)
            .map(|i| synth_full(s.seed.wrapping_add(1_000_000 + i as u64), s.bands, s.size, &s.options))
            .collect::<Result<Vec<_>>>()?;
        let path = out.join("full.h5");
        write_dataset(&path, &full, cfg.data.norm_max)?;
        msg.push_str(&format!("; {} full-resolution scenes to {}", full.len(), path.display()));
    }
    Ok(msg)
}

fn load(cfg: &RunConfig, name: &str) -> Result<Vec<SceneSample>> {
    let path = cfg.data.resolve(name);
    if !path.exists() {
        return Err(Error::Dataset {
            key: "path".into(),
            reason: format!("{} does not exist", path.display()),
        });
    }
    load_dataset(&path, cfg.data.norm_max)
}

fn append_log(path: &Path, fresh: bool) -> Result<BufWriter<File>> {
    let file = if fresh {
        File::create(path)?
    } else {
        OpenOptions::new().create(true).append(true).open(path)?
    };
    Ok(BufWriter::new(file))
}

/// Steps a trainer to completion, logging each record and checkpointing
/// periodically; a failure leaves the last written checkpoint in place.
fn drive(trainer: &mut Trainer, log: &mut dyn Write, checkpoint: &Path, label: &str) -> Result<Vec<StepRecord>> {
    let total = trainer.config().total_iters;
    let every = trainer.config().checkpoint_every;
    let start = Instant::now();
    let mut records = Vec::new();
    while trainer.iteration() < total {
        let rec = trainer.step()?;
        writeln!(log, "{}", serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?)?;
        if (every > 0 && rec.iter % every == 0) || rec.iter == total {
            log.flush()?;
            trainer.checkpoint()?.save(checkpoint)?;
        }
        if rec.iter % 100 == 0 || rec.iter == 1 || rec.iter == total {
            eprintln!(
                "[{label}] iter {}/{total} loss {:.6} lr {:.1e} {} ({:.0}s)",
                rec.iter,
                rec.loss,
                rec.lr,
                rec.phase,
                start.elapsed().as_secs_f64()
            );
        }
        records.push(rec);
    }
    log.flush()?;
    Ok(records)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<String> {
    let samples = load(cfg, &cfg.data.train)?;
    let device = Device::Cpu;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p, &device)?;
            if ck.network != cfg.network {
                eprintln!("note: resuming with the network configuration stored in {}", p.display());
            }
            Trainer::resume(&ck, &cfg.train, &samples, DType::F32, &device)?
        }
        None => Trainer::new(&cfg.network, &cfg.train, cfg.schedule.build()?, &samples, DType::F32, &device)?,
    };
    let mut log = append_log(&out.join(LOG_FILE), resume.is_none())?;
    let ck = out.join(CHECKPOINT_FILE);
    let records = drive(&mut trainer, &mut log, &ck, "train")?;
    let last = records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok(format!(
        "trained to iteration {} (last loss {last:.6}); checkpoint {}",
        trainer.iteration(),
        ck.display()
    ))
}

/// Builds a network from a checkpoint, with EMA weights unless `raw`.
pub fn net_from_checkpoint(ck: &Checkpoint, raw: bool, device: &Device) -> Result<SsdiffNet> {
    let net = SsdiffNet::new(&ck.network, 0, DType::F32, device)?;
    let weights = match (&ck.ema, raw) {
        (Some(ema), false) => ema,
        _ => &ck.params,
    };
    net.params().load(weights)?;
    Ok(net)
}

pub fn cmd_sample(cfg: &RunConfig, out: &Path, checkpoint: &Path, raw: bool) -> Result<String> {
    let device = Device::Cpu;
    let ck = Checkpoint::load(checkpoint, &device)?;
    let samples = load(cfg, &cfg.data.test)?;
    if let Some(s) = samples.first() {
        if s.bands() != ck.network.bands {
            return Err(Error::Dataset {
                key: "lms".into(),
                reason: format!("{} bands but the checkpoint expects {}", s.bands(), ck.network.bands),
            });
        }
    }
    let use_raw = raw || !cfg.sample.use_ema;
    let net = net_from_checkpoint(&ck, use_raw, &device)?;
    let fused = sample_scenes(&net, &ck.schedule, &samples, &cfg.sample)?;
    let path = out.join(FUSED_FILE);
    write_planes(&path, FUSED_KEY, &fused, cfg.data.norm_max)?;
    Ok(format!(
        "sampled {} scenes with {} weights, {} DDIM steps -> {}",
        fused.len(),
        if use_raw { "raw" } else { "EMA" },
        cfg.sample.steps,
        path.display()
    ))
}

/// Scores `fused` against the references and, if enabled, writes
/// `figures/{i}_fused.png`, `{i}_ref.png` and `{i}_error.png`.
pub fn evaluate(cfg: &RunConfig, fused: &[ImagePlane], refs: &[SceneSample], out: &Path) -> Result<MetricsReport> {
    if fused.len() != refs.len() {
        return Err(Error::Dataset {
            key: FUSED_KEY.into(),
            reason: format!("{} fused images for {} reference scenes", fused.len(), refs.len()),
        });
    }
    let mut report = MetricsReport::new(cfg.eval.mode);
    let fig_dir = out.join("figures");
    if cfg.eval.figures {
        std::fs::create_dir_all(&fig_dir)?;
    }
    for (i, (f, s)) in fused.iter().zip(refs).enumerate() {
        match cfg.eval.mode {
            ResolutionMode::Reduced => {
                let gt = s.gt.as_ref().ok_or_else(|| Error::Dataset {
                    key: "gt".into(),
                    reason: "reduced-resolution evaluation needs ground truth".into(),
                })?;
                report.push_reduced(f, gt)?;
                if cfg.eval.figures {
                    save_png(&rgb_preview(gt)?, fig_dir.join(format!("{i:03}_ref.png")))?;
                    save_png(&error_map(f, gt, 0.05)?, fig_dir.join(format!("{i:03}_error.png")))?;
                }
            }
            ResolutionMode::Full => {
                let profile = cfg.mtf_profile(s.bands());
                report.push_full(f, &s.ms, &s.pan, &profile, cfg.eval.d_lambda)?;
            }
        }
        if cfg.eval.figures {
            save_png(&rgb_preview(f)?, fig_dir.join(format!("{i:03}_fused.png")))?;
        }
    }
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, fused_path: &Path) -> Result<MetricsReport> {
    let fused = read_planes(fused_path, FUSED_KEY, cfg.data.norm_max)?;
    let refs = load(cfg, &cfg.data.test)?;
    let report = evaluate(cfg, &fused, &refs, out)?;
    report.write(out.join(REPORT_FILE))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub first_loss: f64,
    /// Mean loss over the trailing `ablate.tail` iterations.
    pub final_loss: f64,
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,params,first_loss,final_loss\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", r.variant.as_str(), r.params, r.first_loss, r.final_loss));
    }
    s
}

/// Mean of the last `tail` losses (all of them if fewer).
pub fn tail_mean(records: &[StepRecord], tail: usize) -> f64 {
    let k = tail.clamp(1, records.len().max(1));
    let slice = &records[records.len().saturating_sub(k)..];
    slice.iter().map(|r| r.loss).sum::<f64>() / slice.len().max(1) as f64
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let samples = load(cfg, &cfg.data.train)?;
    let sched = cfg.schedule.build()?;
    let mut rows = Vec::new();
    for &v in &cfg.ablate.variants {
        let dir = out.join(v.as_str());
        std::fs::create_dir_all(&dir)?;
        let mut net_cfg = cfg.network.clone();
        net_cfg.variant = v;
        let mut trainer = Trainer::new(&net_cfg, &cfg.train, sched.clone(), &samples, DType::F32, &Device::Cpu)?;
        let mut log = append_log(&dir.join(LOG_FILE), true)?;
        let records = drive(&mut trainer, &mut log, &dir.join(CHECKPOINT_FILE), v.as_str())?;
        rows.push(AblationRow {
            variant: v,
            params: trainer.net().param_count(),
            first_loss: records.first().map(|r| r.loss).unwrap_or(f64::NAN),
            final_loss: tail_mean(&records, cfg.ablate.tail),
        });
    }
    std::fs::write(out.join(ABLATION_FILE), format_ablation(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(loss: f64) -> StepRecord {
        StepRecord {
            iter: 0,
            loss,
            lr: 0.0,
            phase: "joint".into(),
        }
    }

    #[test]
    fn tail_mean_handles_short_runs() {
        let r: Vec<_> = [4.0, 2.0, 1.0, 3.0].into_iter().map(rec).collect();
        assert_eq!(tail_mean(&r, 2), 2.0);
        assert_eq!(tail_mean(&r, 10), 2.5);
        assert_eq!(tail_mean(&r, 0), 3.0);
    }

    #[test]
    fn parses_flags_and_overrides() {
        let cli = Cli::try_parse_from([
            "ssdiff", "train", "--seed", "7", "--out", "/tmp/o", "-O", "train.lr=0.01", "--override", "network.variant=V4",
        ])
        .unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.network.variant, Variant::V4);
        assert_eq!(cli.out_dir(), PathBuf::from("/tmp/o"));
        assert!(Cli::try_parse_from(["ssdiff", "bogus"]).is_err());
    }
}
