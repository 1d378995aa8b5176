//! Command-line orchestration for the anti-spoofing benchmark pipeline.
//!
//! Subcommands mirror the pipeline stages: synthesize desk-scale data,
//! split protocols between attacker and defender, train the three models,
//! enhance spoofed audio, score trials, compute EERs, and render reports.
//! Every invocation snapshots its effective configuration and seed into
//! the run directory so results can be reproduced from the manifest alone.

mod commands;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use spoofbench_core::config::{Profile, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "spoofbench",
    version,
    about = "Attacker/defender speech anti-spoofing benchmark"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Hyperparameter profile supplying defaults.
    #[arg(long, global = true, default_value = "toy")]
    profile: String,

    /// Config file of `section.key = value` lines; overrides the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Individual `section.key=value` overrides; strongest except for
    /// SPOOFBENCH_SEED.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Random seed (SPOOFBENCH_SEED in the environment beats this flag).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for artifacts and the config snapshot.
    #[arg(long, global = true, default_value = "runs/default")]
    run: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus: WAV files plus train/eval protocols.
    SynthData {
        /// Output directory (default: <run>/data).
        out_dir: Option<PathBuf>,
    },
    /// Split a protocol into attacker and defender sides.
    SplitData {
        /// disjoint | shared_defender_full
        #[arg(long, default_value = "disjoint")]
        scenario: String,
        protocol: PathBuf,
        /// Output directory (default: <run>/split).
        out_dir: Option<PathBuf>,
    },
    /// Train the speaker-embedding extractor on a protocol's bona fide
    /// utterances.
    TrainSpkemb {
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        /// Checkpoint path (default: <run>/checkpoints/extractor.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep the extractor trainable instead of freezing it on save.
        #[arg(long)]
        no_freeze: bool,
    },
    /// Train the enhancement model on attacker pairs against a frozen
    /// extractor.
    TrainEnhance {
        /// Attacker-side protocol (bona fide pool + spoofs to pair).
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        #[arg(long)]
        extractor: PathBuf,
        /// Checkpoint path (default: <run>/checkpoints/enhancer.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the anti-spoofing countermeasure.
    TrainAntispoof {
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        /// Development protocol for model selection by dev loss.
        #[arg(long)]
        dev_protocol: Option<PathBuf>,
        /// Checkpoint path (default: <run>/checkpoints/antispoof.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write enhanced audio for every spoofed trial (bona fide copied
    /// through untouched) plus a manifest.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        /// Output directory (default: <run>/enhanced).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score trials with a countermeasure checkpoint: one
    /// `utt_id<TAB>score` line per trial.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        /// Manifest from `enhance`; maps spoofed trials to enhanced files.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Enhancer checkpoint for in-memory enhancement of spoofed
        /// trials (float path, no requantization; alternative to
        /// --manifest).
        #[arg(long)]
        enhancer: Option<PathBuf>,
        /// Score file (default: <run>/scores/scores.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the equal error rate of a score file against a protocol.
    EvalEer {
        scores: PathBuf,
        protocol: PathBuf,
    },
    /// Render the EER table and figures from a directory of score files
    /// named `<antispoof>__<condition>.txt`.
    Report {
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        scores_dir: PathBuf,
        /// Report directory (default: <run>/report).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Pair of audio files `original.wav,enhanced.wav` to render as
        /// before/after spectrograms.
        #[arg(long)]
        spectrogram_pair: Option<String>,
    },
}

fn build_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let profile = Profile::parse(&global.profile)
        .with_context(|| format!("unknown profile \"{}\"", global.profile))?;
    let mut cfg = RunConfig::defaults(profile);
    if let Some(path) = &global.config {
        cfg.apply_file(path)
            .with_context(|| format!("loading {}", path.display()))?;
    }
    for kv in &global.sets {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects key=value, got \"{kv}\""))?;
        cfg.apply_kv(k.trim(), v.trim())?;
    }
    if let Some(seed) = global.seed {
        cfg.reseed(seed);
    }
    if let Ok(env_seed) = std::env::var("SPOOFBENCH_SEED") {
        let seed: u64 = env_seed
            .parse()
            .with_context(|| format!("SPOOFBENCH_SEED=\"{env_seed}\" is not an integer"))?;
        cfg.reseed(seed);
    }
    Ok(cfg)
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return std::process::ExitCode::from(1);
        }
    };
    let ctx = commands::RunContext::new(cli.global.run.clone(), cfg);
    let result = match cli.command {
        Command::SynthData { out_dir } => commands::synth_data(&ctx, out_dir),
        Command::SplitData {
            scenario,
            protocol,
            out_dir,
        } => commands::split_data(&ctx, &scenario, &protocol, out_dir),
        Command::TrainSpkemb {
            protocol,
            audio_dir,
            out,
            no_freeze,
        } => commands::train_spkemb(&ctx, &protocol, &audio_dir, out, no_freeze),
        Command::TrainEnhance {
            protocol,
            audio_dir,
            extractor,
            out,
        } => commands::train_enhance(&ctx, &protocol, &audio_dir, &extractor, out),
        Command::TrainAntispoof {
            protocol,
            audio_dir,
            dev_protocol,
            out,
        } => commands::train_antispoof_cmd(&ctx, &protocol, &audio_dir, dev_protocol, out),
        Command::Enhance {
            model,
            protocol,
            audio_dir,
            out_dir,
        } => commands::enhance_cmd(&ctx, &model, &protocol, &audio_dir, out_dir),
        Command::Score {
            model,
            protocol,
            audio_dir,
            manifest,
            enhancer,
            out,
        } => commands::score_cmd(&ctx, &model, &protocol, &audio_dir, manifest, enhancer, out),
        Command::EvalEer { scores, protocol } => commands::eval_eer(&ctx, &scores, &protocol),
        Command::Report {
            protocol,
            scores_dir,
            out_dir,
            spectrogram_pair,
        } => commands::report(&ctx, &protocol, &scores_dir, out_dir, spectrogram_pair),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(1)
        }
    }
}
