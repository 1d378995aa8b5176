//! Run configuration: reference-profile defaults (the published
//! hyperparameters) and a desk-scale toy profile, overridable from a
//! diff-friendly `section.key = value` text format and from CLI flags.

use crate::antispoof::AntispoofConfig;
use crate::audio::REFERENCE_TARGET_LEN;
use crate::enhancer::EnhancerConfig;
use crate::frontend::FrontendConfig;
use crate::spkembed::{AamConfig, LrSchedule};
use crate::synth::SynthConfig;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Toy,
    Reference,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "toy" => Some(Profile::Toy),
            "reference" => Some(Profile::Reference),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Toy => "toy",
            Profile::Reference => "reference",
        }
    }
}

/// Speaker-extractor training section (schedule + loss + batching).
#[derive(Debug, Clone)]
pub struct SpkEmbedSection {
    pub margin: f64,
    pub scale: f64,
    pub lr_peak: f64,
    pub warmup_frac: f64,
    pub constant_frac: f64,
    pub decay_frac: f64,
    pub total_iters: u64,
    pub batch: usize,
}

impl SpkEmbedSection {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.lr_peak,
            warmup_frac: self.warmup_frac,
            constant_frac: self.constant_frac,
            decay_frac: self.decay_frac,
            total_iters: self.total_iters,
        }
    }

    pub fn aam(&self, num_speakers: usize) -> AamConfig {
        AamConfig {
            margin: self.margin,
            scale: self.scale,
            num_speakers,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSection {
    pub cdf_bins: usize,
    pub spectrogram_frame: usize,
    pub spectrogram_hop: usize,
}

#[derive(Debug, Clone)]
pub struct AudioSection {
    pub target_length: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub audio: AudioSection,
    pub frontend: FrontendConfig,
    pub antispoof: AntispoofConfig,
    pub spkembed: SpkEmbedSection,
    pub enhancer: EnhancerConfig,
    pub eval: EvalSection,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let seed = 42;
        match profile {
            Profile::Reference => Self {
                profile,
                seed,
                audio: AudioSection {
                    target_length: REFERENCE_TARGET_LEN,
                },
                frontend: FrontendConfig::reference(),
                antispoof: AntispoofConfig::reference(seed),
                spkembed: SpkEmbedSection {
                    margin: 0.3,
                    scale: 15.0,
                    lr_peak: 1e-5,
                    warmup_frac: 0.10,
                    constant_frac: 0.40,
                    decay_frac: 0.50,
                    total_iters: 100_000,
                    batch: 32,
                },
                enhancer: EnhancerConfig::reference(seed),
                eval: EvalSection {
                    cdf_bins: 200,
                    spectrogram_frame: 512,
                    spectrogram_hop: 256,
                },
                synth: SynthConfig {
                    speakers: 8,
                    bona_per_speaker: 12,
                    spoofs_per_speaker: 12,
                    eval_bona_per_speaker: 4,
                    eval_spoofs_per_speaker: 4,
                    length: REFERENCE_TARGET_LEN,
                    seed,
                },
            },
            Profile::Toy => Self {
                profile,
                seed,
                audio: AudioSection {
                    target_length: 4000,
                },
                frontend: FrontendConfig::toy(),
                antispoof: AntispoofConfig::toy(seed),
                spkembed: SpkEmbedSection {
                    margin: 0.3,
                    scale: 15.0,
                    lr_peak: 2e-3,
                    warmup_frac: 0.10,
                    constant_frac: 0.40,
                    decay_frac: 0.50,
                    total_iters: 1500,
                    batch: 8,
                },
                enhancer: EnhancerConfig::toy(seed),
                eval: EvalSection {
                    cdf_bins: 200,
                    spectrogram_frame: 512,
                    spectrogram_hop: 256,
                },
                synth: SynthConfig::toy(seed),
            },
        }
    }

    /// Propagates the global seed into the per-model seed fields.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.antispoof.seed = seed;
        self.enhancer.seed = seed;
        self.synth.seed = seed;
    }

    /// Applies `section.key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: "expected `section.key = value`".into(),
            })?;
            self.apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    /// Applies one `section.key`/value override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value \"{value}\" for {key}")))
        }
        match key {
            "global.seed" => {
                let seed = parse(key, value)?;
                self.reseed(seed);
            }
            // Recorded in snapshots; selecting defaults happens before any
            // overrides (--profile), so this only relabels.
            "global.profile" => {
                self.profile = Profile::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown profile \"{value}\"")))?;
            }
            "audio.target_length" => self.audio.target_length = parse(key, value)?,
            "frontend.name" => self.frontend.name = value.to_string(),
            "frontend.embed_dim" => self.frontend.embed_dim = parse(key, value)?,
            "frontend.hop" => self.frontend.hop = parse(key, value)?,
            "frontend.window" => self.frontend.window = parse(key, value)?,
            "frontend.hidden_layers" => self.frontend.hidden_layers = parse(key, value)?,
            "antispoof.reduce_dim" => self.antispoof.reduce_dim = parse(key, value)?,
            "antispoof.pool" => self.antispoof.pool = parse(key, value)?,
            "antispoof.stage1_channels" => self.antispoof.stage1_channels = parse(key, value)?,
            "antispoof.stage1_blocks" => self.antispoof.stage1_blocks = parse(key, value)?,
            "antispoof.stage2_channels" => self.antispoof.stage2_channels = parse(key, value)?,
            "antispoof.stage2_blocks" => self.antispoof.stage2_blocks = parse(key, value)?,
            "antispoof.classes" => self.antispoof.classes = parse(key, value)?,
            "antispoof.lr" => self.antispoof.lr = parse(key, value)?,
            "antispoof.max_epochs" => self.antispoof.max_epochs = parse(key, value)?,
            "antispoof.batch" => self.antispoof.batch = parse(key, value)?,
            "antispoof.shuffle" => self.antispoof.shuffle = parse(key, value)?,
            "spkembed.margin" => self.spkembed.margin = parse(key, value)?,
            "spkembed.scale" => self.spkembed.scale = parse(key, value)?,
            "spkembed.lr_peak" => self.spkembed.lr_peak = parse(key, value)?,
            "spkembed.warmup_frac" => self.spkembed.warmup_frac = parse(key, value)?,
            "spkembed.constant_frac" => self.spkembed.constant_frac = parse(key, value)?,
            "spkembed.decay_frac" => self.spkembed.decay_frac = parse(key, value)?,
            "spkembed.total_iters" => self.spkembed.total_iters = parse(key, value)?,
            "spkembed.batch" => self.spkembed.batch = parse(key, value)?,
            "enhancer.encoder_filters" => self.enhancer.encoder_filters = parse(key, value)?,
            "enhancer.encoder_kernel" => self.enhancer.encoder_kernel = parse(key, value)?,
            "enhancer.encoder_stride" => self.enhancer.encoder_stride = parse(key, value)?,
            "enhancer.repeats" => self.enhancer.repeats = parse(key, value)?,
            "enhancer.blocks_per_repeat" => self.enhancer.blocks_per_repeat = parse(key, value)?,
            "enhancer.block_channels" => self.enhancer.block_channels = parse(key, value)?,
            "enhancer.lr" => self.enhancer.lr = parse(key, value)?,
            "enhancer.epochs" => self.enhancer.epochs = parse(key, value)?,
            "enhancer.batch" => self.enhancer.batch = parse(key, value)?,
            "enhancer.resample_pairs" => self.enhancer.resample_pairs = parse(key, value)?,
            "eval.cdf_bins" => self.eval.cdf_bins = parse(key, value)?,
            "eval.spectrogram_frame" => self.eval.spectrogram_frame = parse(key, value)?,
            "eval.spectrogram_hop" => self.eval.spectrogram_hop = parse(key, value)?,
            "synth.speakers" => self.synth.speakers = parse(key, value)?,
            "synth.bona_per_speaker" => self.synth.bona_per_speaker = parse(key, value)?,
            "synth.spoofs_per_speaker" => self.synth.spoofs_per_speaker = parse(key, value)?,
            "synth.eval_bona_per_speaker" => {
                self.synth.eval_bona_per_speaker = parse(key, value)?
            }
            "synth.eval_spoofs_per_speaker" => {
                self.synth.eval_spoofs_per_speaker = parse(key, value)?
            }
            "synth.length" => self.synth.length = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key \"{other}\""))),
        }
        Ok(())
    }

    /// Full snapshot in the same format `apply_file` reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "global.profile = {}", self.profile.as_str());
        let _ = writeln!(w, "global.seed = {}", self.seed);
        let _ = writeln!(w, "audio.target_length = {}", self.audio.target_length);
        let _ = writeln!(w, "frontend.name = {}", self.frontend.name);
        let _ = writeln!(w, "frontend.embed_dim = {}", self.frontend.embed_dim);
        let _ = writeln!(w, "frontend.hop = {}", self.frontend.hop);
        let _ = writeln!(w, "frontend.window = {}", self.frontend.window);
        let _ = writeln!(w, "frontend.hidden_layers = {}", self.frontend.hidden_layers);
        let _ = writeln!(w, "antispoof.reduce_dim = {}", self.antispoof.reduce_dim);
        let _ = writeln!(w, "antispoof.pool = {}", self.antispoof.pool);
        let _ = writeln!(w, "antispoof.stage1_channels = {}", self.antispoof.stage1_channels);
        let _ = writeln!(w, "antispoof.stage1_blocks = {}", self.antispoof.stage1_blocks);
        let _ = writeln!(w, "antispoof.stage2_channels = {}", self.antispoof.stage2_channels);
        let _ = writeln!(w, "antispoof.stage2_blocks = {}", self.antispoof.stage2_blocks);
        let _ = writeln!(w, "antispoof.classes = {}", self.antispoof.classes);
        let _ = writeln!(w, "antispoof.lr = {}", self.antispoof.lr);
        let _ = writeln!(w, "antispoof.max_epochs = {}", self.antispoof.max_epochs);
        let _ = writeln!(w, "antispoof.batch = {}", self.antispoof.batch);
        let _ = writeln!(w, "antispoof.shuffle = {}", self.antispoof.shuffle);
        let _ = writeln!(w, "spkembed.margin = {}", self.spkembed.margin);
        let _ = writeln!(w, "spkembed.scale = {}", self.spkembed.scale);
        let _ = writeln!(w, "spkembed.lr_peak = {}", self.spkembed.lr_peak);
        let _ = writeln!(w, "spkembed.warmup_frac = {}", self.spkembed.warmup_frac);
        let _ = writeln!(w, "spkembed.constant_frac = {}", self.spkembed.constant_frac);
        let _ = writeln!(w, "spkembed.decay_frac = {}", self.spkembed.decay_frac);
        let _ = writeln!(w, "spkembed.total_iters = {}", self.spkembed.total_iters);
        let _ = writeln!(w, "spkembed.batch = {}", self.spkembed.batch);
        let _ = writeln!(w, "enhancer.encoder_filters = {}", self.enhancer.encoder_filters);
        let _ = writeln!(w, "enhancer.encoder_kernel = {}", self.enhancer.encoder_kernel);
        let _ = writeln!(w, "enhancer.encoder_stride = {}", self.enhancer.encoder_stride);
        let _ = writeln!(w, "enhancer.repeats = {}", self.enhancer.repeats);
        let _ = writeln!(w, "enhancer.blocks_per_repeat = {}", self.enhancer.blocks_per_repeat);
        let _ = writeln!(w, "enhancer.block_channels = {}", self.enhancer.block_channels);
        let _ = writeln!(w, "enhancer.lr = {}", self.enhancer.lr);
        let _ = writeln!(w, "enhancer.epochs = {}", self.enhancer.epochs);
        let _ = writeln!(w, "enhancer.batch = {}", self.enhancer.batch);
        let _ = writeln!(w, "enhancer.resample_pairs = {}", self.enhancer.resample_pairs);
        let _ = writeln!(w, "eval.cdf_bins = {}", self.eval.cdf_bins);
        let _ = writeln!(w, "eval.spectrogram_frame = {}", self.eval.spectrogram_frame);
        let _ = writeln!(w, "eval.spectrogram_hop = {}", self.eval.spectrogram_hop);
        let _ = writeln!(w, "synth.speakers = {}", self.synth.speakers);
        let _ = writeln!(w, "synth.bona_per_speaker = {}", self.synth.bona_per_speaker);
        let _ = writeln!(w, "synth.spoofs_per_speaker = {}", self.synth.spoofs_per_speaker);
        let _ = writeln!(w, "synth.eval_bona_per_speaker = {}", self.synth.eval_bona_per_speaker);
        let _ = writeln!(w, "synth.eval_spoofs_per_speaker = {}", self.synth.eval_spoofs_per_speaker);
        let _ = writeln!(w, "synth.length = {}", self.synth.length);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults_carry_published_hyperparameters() {
        let cfg = RunConfig::defaults(Profile::Reference);
        assert_eq!(cfg.audio.target_length, 64_600);
        assert_eq!(cfg.frontend.embed_dim, 768);
        assert_eq!(cfg.antispoof.reduce_dim, 128);
        assert_eq!(cfg.antispoof.stage1_channels, 32);
        assert_eq!(cfg.antispoof.stage1_blocks, 2);
        assert_eq!(cfg.antispoof.stage2_channels, 64);
        assert_eq!(cfg.antispoof.stage2_blocks, 4);
        assert_eq!(cfg.antispoof.lr, 1e-6);
        assert_eq!(cfg.antispoof.max_epochs, 100);
        assert_eq!(cfg.antispoof.batch, 32);
        assert_eq!(cfg.spkembed.margin, 0.3);
        assert_eq!(cfg.spkembed.scale, 15.0);
        assert_eq!(cfg.spkembed.lr_peak, 1e-5);
        assert_eq!(cfg.spkembed.total_iters, 100_000);
        assert_eq!(cfg.enhancer.repeats, 3);
        assert_eq!(cfg.enhancer.blocks_per_repeat, 8);
        assert_eq!(cfg.enhancer.lr, 1e-5);
        assert_eq!(cfg.enhancer.epochs, 300);
        assert_eq!(cfg.enhancer.batch, 8);
    }

    #[test]
    fn snapshot_roundtrips_through_parser() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(Profile::Toy);
        cfg.reseed(123);
        cfg.antispoof.lr = 5e-4;
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, cfg.to_text()).unwrap();

        let mut back = RunConfig::defaults(Profile::Toy);
        back.apply_file(&path).unwrap();
        assert_eq!(back.seed, 123);
        assert_eq!(back.antispoof.lr, 5e-4);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn cli_style_override_beats_file() {
        let mut cfg = RunConfig::defaults(Profile::Toy);
        cfg.apply_kv("enhancer.epochs", "7").unwrap();
        assert_eq!(cfg.enhancer.epochs, 7);
        assert!(cfg.apply_kv("enhancer.nope", "1").is_err());
        assert!(cfg.apply_kv("enhancer.epochs", "x").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "# comment\n\nglobal.seed = 9 # trailing\n").unwrap();
        let mut cfg = RunConfig::defaults(Profile::Toy);
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.antispoof.seed, 9);
    }
}
