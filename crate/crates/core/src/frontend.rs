//! Pluggable frontend mapping a waveform to frame-level representations.
//!
//! One trainable architecture serves every profile: a strided 1-d
//! convolution (kernel = analysis window, stride = hop) followed by
//! frame-wise nonlinear layers. The reference configuration reproduces the
//! frame contract of the large pretrained speech encoders — 201 frames of
//! 768 dims from 64,600 samples — while the tiny profile keeps the whole
//! pipeline trainable on a CPU in minutes. Externally converted
//! checkpoints load through a named adapter registry that enforces the
//! same contract.

use crate::audio::Waveform;
use crate::checkpoint::{collect_state, restore_state, Container};
use crate::nn::conv::Conv1dSpec;
use crate::nn::init::{mix_seed, rng_from_seed};
use crate::nn::layers::{Conv1d, Cx, Linear};
use crate::nn::{ops, Tape, Tensor, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONTAINER_KIND: &str = "frontend";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub name: String,
    pub embed_dim: usize,
    /// Samples per frame step.
    pub hop: usize,
    /// Analysis window in samples.
    pub window: usize,
    /// Frame-wise nonlinear layers after the convolution.
    pub hidden_layers: usize,
}

impl FrontendConfig {
    /// Reference contract: 64,600 samples -> (201, 768).
    pub fn reference() -> Self {
        Self {
            name: "tiny".into(),
            embed_dim: 768,
            hop: 320,
            window: 400,
            hidden_layers: 2,
        }
    }

    /// Desk-scale profile used by the toy pipeline.
    pub fn toy() -> Self {
        Self {
            name: "tiny".into(),
            embed_dim: 16,
            hop: 100,
            window: 200,
            hidden_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hop == 0 || self.window == 0 {
            return Err(Error::Config(format!(
                "frontend dims must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Frames produced for an input of `len` samples:
    /// floor((len - window) / hop) + 1.
    pub fn frames_for(&self, len: usize) -> Result<usize> {
        if len < self.window {
            return Err(Error::InvalidInput(format!(
                "waveform of {len} samples is shorter than the {}-sample analysis window",
                self.window
            )));
        }
        Ok((len - self.window) / self.hop + 1)
    }
}

/// Frontend output: a (frames x embed_dim) real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRepresentation {
    values: Tensor,
}

impl FrameRepresentation {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || values.shape()[0] == 0 {
            return Err(Error::InvalidInput(format!(
                "frame representation must be (frames >= 1, dim), got {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::NumericDomain(
                "non-finite value in frame representation".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Column mean over the time axis; the utterance-level summary the
    /// speaker extractor pools to.
    pub fn mean_over_frames(&self) -> Vec<f64> {
        let (frames, dim) = (self.frames(), self.embed_dim());
        let mut out = vec![0.0; dim];
        for f in 0..frames {
            let row = &self.values.data()[f * dim..][..dim];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for v in out.iter_mut() {
            *v /= frames as f64;
        }
        out
    }
}

/// Trainable frontend: strided convolution + frame-wise tanh layers.
#[derive(Debug, Clone)]
pub struct Frontend {
    config: FrontendConfig,
    conv: Conv1d,
    hidden: Vec<Linear>,
}

impl Frontend {
    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    /// Differentiable batch forward: (B, L) waveforms -> (B, frames, dim).
    pub fn forward_batch(&self, cx: &mut Cx, x: Var) -> Var {
        let shape = cx.tape.value(x).shape().to_vec();
        assert_eq!(shape.len(), 2, "frontend expects (B, L)");
        let (bs, len) = (shape[0], shape[1]);
        let frames = self
            .config
            .frames_for(len)
            .expect("caller must validate waveform length");
        let x = ops::reshape(cx.tape, x, &[bs, 1, len]);
        let y = self.conv.forward(cx, x); // (B, D, F)
        let y = ops::transpose_12(cx.tape, y); // (B, F, D)
        let mut y = ops::reshape(cx.tape, y, &[bs * frames, self.config.embed_dim]);
        for layer in &self.hidden {
            y = layer.forward(cx, y);
            y = ops::tanh_op(cx.tape, y);
        }
        ops::reshape(cx.tape, y, &[bs, frames, self.config.embed_dim])
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.visit("conv", f);
        for (i, layer) in self.hidden.iter_mut().enumerate() {
            layer.visit(&format!("hidden{i}"), f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    pub fn to_container(&mut self) -> Result<Container> {
        let mut c = Container::new(CONTAINER_KIND, &self.config)?;
        collect_state(|f| self.visit_params(f), &mut c);
        Ok(c)
    }

    pub fn from_container(container: &Container) -> Result<Self> {
        if container.kind != CONTAINER_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a {CONTAINER_KIND} container, got {}",
                container.kind
            )));
        }
        let config: FrontendConfig = container.config_as()?;
        let mut model = build_tiny_frontend(&config, 0)?;
        restore_state(|f| model.visit_params(f), container)?;
        Ok(model)
    }
}

/// Builds the trainable reference frontend with seed-deterministic
/// initialization.
pub fn build_tiny_frontend(config: &FrontendConfig, seed: u64) -> Result<Frontend> {
    config.validate()?;
    let mut rng = rng_from_seed(mix_seed(seed, "frontend"));
    let conv = Conv1d::new(
        1,
        config.embed_dim,
        config.window,
        Conv1dSpec {
            stride: config.hop,
            ..Default::default()
        },
        &mut rng,
    );
    let hidden = (0..config.hidden_layers)
        .map(|_| Linear::new(config.embed_dim, config.embed_dim, &mut rng))
        .collect();
    Ok(Frontend {
        config: config.clone(),
        conv,
        hidden,
    })
}

/// Single-utterance inference wrapper around [`Frontend::forward_batch`].
pub fn frontend_forward(wav: &Waveform, frontend: &Frontend) -> Result<FrameRepresentation> {
    let frames = frontend.config.frames_for(wav.len())?;
    let mut tape = Tape::forward_only();
    let mut cx = Cx::new(&mut tape);
    let x = cx
        .tape
        .leaf(Tensor::new(&[1, wav.len()], wav.samples_f64()));
    let y = frontend.forward_batch(&mut cx, x);
    let out = tape.value(y);
    debug_assert_eq!(out.shape(), &[1, frames, frontend.config.embed_dim]);
    FrameRepresentation::new(out.reshaped(&[frames, frontend.config.embed_dim]))
}

/// Known external adapters and the contract each enforces on a checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct AdapterSpec {
    pub name: &'static str,
    pub embed_dim: usize,
    pub hop: usize,
    pub window: usize,
}

/// Registry of loadable frontends. The non-tiny entries accept weights
/// converted into the container format from the corresponding published
/// encoders; all enforce the 768-dim, 201-frame contract.
pub const ADAPTERS: &[AdapterSpec] = &[
    AdapterSpec {
        name: "wav2vec2-base",
        embed_dim: 768,
        hop: 320,
        window: 400,
    },
    AdapterSpec {
        name: "hubert-base",
        embed_dim: 768,
        hop: 320,
        window: 400,
    },
    AdapterSpec {
        name: "wavlm-base",
        embed_dim: 768,
        hop: 320,
        window: 400,
    },
    AdapterSpec {
        name: "wavlm-base-plus",
        embed_dim: 768,
        hop: 320,
        window: 400,
    },
];

/// Loads a named external frontend from a checkpoint, validating that the
/// checkpoint matches the adapter's shape contract. All parameters remain
/// trainable after loading.
pub fn load_external_frontend(name: &str, checkpoint: impl AsRef<Path>) -> Result<Frontend> {
    if name == "tiny" {
        // The reference trainable frontend is loaded by the same route,
        // without a fixed dimension contract.
        return Frontend::from_container(&Container::load(checkpoint)?);
    }
    let spec = ADAPTERS
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Adapter(format!("unknown frontend adapter \"{name}\"")))?;
    let container = Container::load(checkpoint)?;
    let model = Frontend::from_container(&container).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Adapter(format!("{name}: {msg}")),
        other => other,
    })?;
    let cfg = model.config();
    if cfg.name != spec.name {
        return Err(Error::Adapter(format!(
            "checkpoint is for \"{}\", adapter \"{name}\" requested",
            cfg.name
        )));
    }
    if cfg.embed_dim != spec.embed_dim || cfg.hop != spec.hop || cfg.window != spec.window {
        return Err(Error::Adapter(format!(
            "{name}: checkpoint shape contract (dim {}, hop {}, window {}) does not match \
             adapter (dim {}, hop {}, window {})",
            cfg.embed_dim, cfg.hop, cfg.window, spec.embed_dim, spec.hop, spec.window,
        )));
    }
    Ok(model)
}
