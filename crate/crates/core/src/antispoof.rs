//! Two-way spoofing countermeasure: frontend, frame-wise dimensionality
//! reduction, 3x3 max pooling, two residual stages, global average
//! pooling, and a 2-class head. Trained with cross entropy, frontend
//! included.
//!
//! Reference shapes for a 64,600-sample input (channels, frames, bins):
//! (1, 201, 768) -> (1, 201, 128) -> (1, 67, 42) -> (32, 67, 42)
//! -> (64, 67, 42) -> 64 -> 2. Every forward asserts them in debug
//! builds; `forward_traced` exposes them for conformance checks.

use crate::audio::Waveform;
use crate::checkpoint::{collect_state, restore_state, Container};
use crate::frontend::{Frontend, FrontendConfig};
use crate::metrics::Key;
use crate::nn::conv as nnconv;
use crate::nn::init::{mix_seed, rng_from_seed};
use crate::nn::layers::{BatchNorm2d, Conv2d, Cx, Linear};
use crate::nn::{ops, Adam, Tape, Tensor, Var};
use crate::train::{batch_waveforms, epoch_batches, TrainReport};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONTAINER_KIND: &str = "antispoof";

/// Class index layout of the 2-way head.
pub const CLASS_SPOOF: usize = 0;
pub const CLASS_BONAFIDE: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AntispoofConfig {
    pub reduce_dim: usize,
    /// Max-pool kernel and stride (square, no padding).
    pub pool: usize,
    pub stage1_channels: usize,
    pub stage1_blocks: usize,
    pub stage2_channels: usize,
    pub stage2_blocks: usize,
    pub classes: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Seeded shuffling of the training order; disable for fixed-order CI
    /// runs.
    pub shuffle: bool,
}

impl AntispoofConfig {
    /// Reference configuration.
    pub fn reference(seed: u64) -> Self {
        Self {
            reduce_dim: 128,
            pool: 3,
            stage1_channels: 32,
            stage1_blocks: 2,
            stage2_channels: 64,
            stage2_blocks: 4,
            classes: 2,
            lr: 1e-6,
            max_epochs: 100,
            batch: 32,
            seed,
            shuffle: true,
        }
    }

    /// Desk-scale configuration keeping the same layer rules.
    pub fn toy(seed: u64) -> Self {
        Self {
            reduce_dim: 12,
            pool: 3,
            stage1_channels: 4,
            stage1_blocks: 1,
            stage2_channels: 8,
            stage2_blocks: 1,
            classes: 2,
            lr: 2e-3,
            max_epochs: 12,
            batch: 8,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes != 2 {
            return Err(Error::Config(format!(
                "the countermeasure is a 2-way classifier, got {} classes",
                self.classes
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.reduce_dim < self.pool || self.pool == 0 {
            return Err(Error::Config(
                "reduce_dim must be at least the pool size".into(),
            ));
        }
        if self.stage1_blocks == 0 || self.stage2_blocks == 0 {
            return Err(Error::Config("stages need at least one block".into()));
        }
        Ok(())
    }

    /// Floor-division pooled extent: floor((n - pool) / pool) + 1.
    pub fn pooled(&self, n: usize) -> usize {
        (n - self.pool) / self.pool + 1
    }
}

/// Raw two-class scores; `bonafide` is the detection score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logits2 {
    pub spoof: f64,
    pub bonafide: f64,
}

impl Logits2 {
    fn from_row(row: &[f64]) -> Result<Self> {
        let out = Self {
            spoof: row[CLASS_SPOOF],
            bonafide: row[CLASS_BONAFIDE],
        };
        if !out.spoof.is_finite() || !out.bonafide.is_finite() {
            return Err(Error::NumericDomain("non-finite logits".into()));
        }
        Ok(out)
    }
}

/// Two 3x3 same-padding convolutions with batch-norm + SELU between them;
/// the shortcut is a 1x1 projection when the block changes channel count,
/// identity otherwise.
#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    bn: BatchNorm2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl ResBlock {
    fn new(cin: usize, cout: usize, rng: &mut crate::nn::init::Rng) -> Self {
        Self {
            conv1: Conv2d::new(cin, cout, (3, 3), (1, 1), rng),
            bn: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, (3, 3), (1, 1), rng),
            shortcut: (cin != cout).then(|| Conv2d::new(cin, cout, (1, 1), (0, 0), rng)),
        }
    }

    fn forward(&mut self, cx: &mut Cx, x: Var, train: bool) -> Var {
        let y = self.conv1.forward(cx, x);
        let y = self.bn.forward(cx, y, train);
        let y = ops::selu(cx.tape, y);
        let y = self.conv2.forward(cx, y);
        let short = match &self.shortcut {
            Some(proj) => proj.forward(cx, x),
            None => x,
        };
        ops::add(cx.tape, y, short)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn.visit(&format!("{prefix}.bn"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit(&format!("{prefix}.shortcut"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        visit_bn_buffers(&mut self.bn, prefix, f);
    }
}

fn visit_bn_buffers(bn: &mut BatchNorm2d, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
    let mut mean = Tensor::new(&[bn.running_mean.len()], bn.running_mean.clone());
    f(format!("{prefix}.running_mean"), &mut mean);
    bn.running_mean.copy_from_slice(mean.data());
    let mut var = Tensor::new(&[bn.running_var.len()], bn.running_var.clone());
    f(format!("{prefix}.running_var"), &mut var);
    bn.running_var.copy_from_slice(var.data());
}

/// Per-layer output shapes of one forward pass, in the single-utterance
/// (channels, frames, bins) convention.
pub type ShapeTrace = Vec<(&'static str, Vec<usize>)>;

#[derive(Debug, Clone)]
pub struct AntispoofModel {
    config: AntispoofConfig,
    frontend: Frontend,
    reduce: Linear,
    bn0: BatchNorm2d,
    stage1: Vec<ResBlock>,
    stage2: Vec<ResBlock>,
    head: Linear,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelConfig {
    frontend: FrontendConfig,
    backend: AntispoofConfig,
}

impl AntispoofModel {
    pub fn new(frontend: Frontend, config: AntispoofConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(mix_seed(config.seed, "antispoof-backend"));
        let reduce = Linear::new(frontend.config().embed_dim, config.reduce_dim, &mut rng);
        let bn0 = BatchNorm2d::new(1);
        let mut stage1 = Vec::new();
        for b in 0..config.stage1_blocks {
            let cin = if b == 0 { 1 } else { config.stage1_channels };
            stage1.push(ResBlock::new(cin, config.stage1_channels, &mut rng));
        }
        let mut stage2 = Vec::new();
        for b in 0..config.stage2_blocks {
            let cin = if b == 0 {
                config.stage1_channels
            } else {
                config.stage2_channels
            };
            stage2.push(ResBlock::new(cin, config.stage2_channels, &mut rng));
        }
        let head = Linear::new(config.stage2_channels, config.classes, &mut rng);
        Ok(Self {
            config,
            frontend,
            reduce,
            bn0,
            stage1,
            stage2,
            head,
        })
    }

    pub fn config(&self) -> &AntispoofConfig {
        &self.config
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    /// Zeroes the classification head; useful as a neutral starting point
    /// and in shape tests (any input then scores exactly (0, 0)).
    pub fn zero_head(&mut self) {
        self.head.weight = Tensor::zeros(self.head.weight.shape());
        self.head.bias = Tensor::zeros(self.head.bias.shape());
    }

    /// Differentiable batch forward: (B, L) -> (B, classes) logits.
    /// `spatial_hook` (test instrumentation) maps the stage-2 output value
    /// just before global pooling.
    fn forward_inner(
        &mut self,
        cx: &mut Cx,
        x: Var,
        train: bool,
        trace: Option<&mut ShapeTrace>,
        spatial_hook: Option<&dyn Fn(&Tensor) -> Tensor>,
    ) -> Var {
        let input_shape = cx.tape.value(x).shape().to_vec();
        let (bs, len) = (input_shape[0], input_shape[1]);
        let frames = self
            .frontend
            .config()
            .frames_for(len)
            .expect("caller must validate waveform length");
        let dim = self.frontend.config().embed_dim;

        let mut trace_sink = trace;
        let mut record = |name: &'static str, shape: Vec<usize>| {
            if let Some(t) = trace_sink.as_deref_mut() {
                t.push((name, shape));
            }
        };

        let rep = self.frontend.forward_batch(cx, x); // (B, F, D)
        check_shape(cx.tape, rep, &[bs, frames, dim], "frontend output");
        record("ssl_frontend", vec![1, frames, dim]);

        let flat = ops::reshape(cx.tape, rep, &[bs * frames, dim]);
        let red = self.reduce.forward(cx, flat); // (B*F, R)
        let red = ops::reshape(cx.tape, red, &[bs, 1, frames, self.config.reduce_dim]);
        check_shape(
            cx.tape,
            red,
            &[bs, 1, frames, self.config.reduce_dim],
            "dimensionality reduction",
        );
        record("reduce_fc", vec![1, frames, self.config.reduce_dim]);

        let pooled = nnconv::maxpool2d(cx.tape, red, self.config.pool, self.config.pool);
        let pf = self.config.pooled(frames);
        let pb = self.config.pooled(self.config.reduce_dim);
        check_shape(cx.tape, pooled, &[bs, 1, pf, pb], "max pool");
        record("max_pool", vec![1, pf, pb]);

        let y = self.bn0.forward(cx, pooled, train);
        let mut y = ops::selu(cx.tape, y);

        for block in &mut self.stage1 {
            y = block.forward(cx, y, train);
        }
        check_shape(
            cx.tape,
            y,
            &[bs, self.config.stage1_channels, pf, pb],
            "stage 1",
        );
        record("res_stage1", vec![self.config.stage1_channels, pf, pb]);

        for block in &mut self.stage2 {
            y = block.forward(cx, y, train);
        }
        check_shape(
            cx.tape,
            y,
            &[bs, self.config.stage2_channels, pf, pb],
            "stage 2",
        );
        record("res_stage2", vec![self.config.stage2_channels, pf, pb]);

        if let Some(hook) = spatial_hook {
            let mapped = hook(cx.tape.value(y));
            assert_eq!(
                mapped.shape(),
                cx.tape.value(y).shape(),
                "spatial hook must preserve shape"
            );
            y = cx.tape.leaf(mapped);
        }

        let gap = ops::global_avg_pool(cx.tape, y); // (B, C2)
        record("global_avg_pool", vec![self.config.stage2_channels]);

        let logits = self.head.forward(cx, gap);
        check_shape(cx.tape, logits, &[bs, self.config.classes], "head");
        record("classifier", vec![self.config.classes]);
        logits
    }

    pub fn forward_batch(&mut self, cx: &mut Cx, x: Var, train: bool) -> Var {
        self.forward_inner(cx, x, train, None, None)
    }

    /// Inference on one utterance with the per-layer shape trace.
    pub fn forward_traced(&mut self, wav: &Waveform) -> Result<(Logits2, ShapeTrace)> {
        self.forward_single(wav, None)
    }

    /// Inference with a spatial-permutation hook before global pooling;
    /// instrumentation for the pooling-invariance property.
    pub fn forward_hooked(
        &mut self,
        wav: &Waveform,
        hook: &dyn Fn(&Tensor) -> Tensor,
    ) -> Result<Logits2> {
        self.forward_single(wav, Some(hook)).map(|(l, _)| l)
    }

    fn forward_single(
        &mut self,
        wav: &Waveform,
        hook: Option<&dyn Fn(&Tensor) -> Tensor>,
    ) -> Result<(Logits2, ShapeTrace)> {
        self.frontend.config().frames_for(wav.len())?;
        let mut tape = Tape::forward_only();
        let mut cx = Cx::new(&mut tape);
        let x = cx
            .tape
            .leaf(Tensor::new(&[1, wav.len()], wav.samples_f64()));
        let mut trace = ShapeTrace::new();
        let logits = self.forward_inner(&mut cx, x, false, Some(&mut trace), hook);
        let row = tape.value(logits).data().to_vec();
        Ok((Logits2::from_row(&row)?, trace))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.frontend.visit_params(f);
        self.reduce.visit("reduce", f);
        self.bn0.visit("bn0", f);
        for (i, b) in self.stage1.iter_mut().enumerate() {
            b.visit(&format!("stage1.{i}"), f);
        }
        for (i, b) in self.stage2.iter_mut().enumerate() {
            b.visit(&format!("stage2.{i}"), f);
        }
        self.head.visit("head", f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        visit_bn_buffers(&mut self.bn0, "bn0", f);
        for (i, b) in self.stage1.iter_mut().enumerate() {
            b.visit_buffers(&format!("stage1.{i}.bn"), f);
        }
        for (i, b) in self.stage2.iter_mut().enumerate() {
            b.visit_buffers(&format!("stage2.{i}.bn"), f);
        }
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.visit_params(f);
        self.visit_buffers(f);
    }

    pub fn to_container(&mut self) -> Result<Container> {
        let config = ModelConfig {
            frontend: self.frontend.config().clone(),
            backend: self.config.clone(),
        };
        let mut c = Container::new(CONTAINER_KIND, &config)?;
        collect_state(|f| self.visit_state(f), &mut c);
        Ok(c)
    }

    pub fn from_container(container: &Container) -> Result<Self> {
        if container.kind != CONTAINER_KIND {
            return Err(Error::Checkpoint(format!(
                "expected an {CONTAINER_KIND} container, got {}",
                container.kind
            )));
        }
        let config: ModelConfig = container.config_as()?;
        let frontend = crate::frontend::build_tiny_frontend(&config.frontend, 0)?;
        let mut model = Self::new(frontend, config.backend)?;
        restore_state(|f| model.visit_state(f), container)?;
        Ok(model)
    }
}

/// Internal invariant check; a mismatch is a bug, so fail loudly.
fn check_shape(tape: &Tape, var: Var, expected: &[usize], location: &str) {
    let actual = tape.value(var).shape();
    assert_eq!(
        actual, expected,
        "shape invariant broken at {location}: expected {expected:?}, got {actual:?}"
    );
}

/// Inference forward returning both class logits.
pub fn antispoof_forward(wav: &Waveform, model: &mut AntispoofModel) -> Result<Logits2> {
    model.forward_traced(wav).map(|(l, _)| l)
}

/// The detection score: the raw bona fide-class logit, no softmax.
pub fn bonafide_score(wav: &Waveform, model: &mut AntispoofModel) -> Result<f64> {
    antispoof_forward(wav, model).map(|l| l.bonafide)
}

fn key_target(key: Key) -> usize {
    match key {
        Key::Spoof => CLASS_SPOOF,
        Key::Bonafide => CLASS_BONAFIDE,
    }
}

fn mean_eval_loss(model: &mut AntispoofModel, data: &[(Waveform, Key)]) -> Result<f64> {
    let mut total = 0.0;
    for (wav, key) in data {
        let mut tape = Tape::forward_only();
        let mut cx = Cx::new(&mut tape);
        let x = cx
            .tape
            .leaf(Tensor::new(&[1, wav.len()], wav.samples_f64()));
        let logits = model.forward_batch(&mut cx, x, false);
        let loss = ops::softmax_cross_entropy(&mut tape, logits, &[key_target(*key)]);
        total += tape.value(loss).item();
    }
    Ok(total / data.len() as f64)
}

/// Cross-entropy training of the full model (frontend included) with Adam
/// at a fixed learning rate. When a development set is given, the epoch
/// with the lowest dev loss wins and its parameters are restored at the
/// end.
pub fn train_antispoof(
    model: &mut AntispoofModel,
    dataset: &[(Waveform, Key)],
    dev: Option<&[(Waveform, Key)]>,
    config: &AntispoofConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let n_bona = dataset.iter().filter(|(_, k)| *k == Key::Bonafide).count();
    let n_spoof = dataset.len() - n_bona;
    if n_bona == 0 || n_spoof == 0 {
        return Err(Error::Config(format!(
            "training set must contain both classes ({n_bona} bona fide, {n_spoof} spoof)"
        )));
    }

    let mut shapes: Vec<Vec<usize>> = Vec::new();
    model.visit_params(&mut |_, t| shapes.push(t.shape().to_vec()));
    let mut adam = Adam::new(&shapes);
    let mut order_rng = rng_from_seed(mix_seed(config.seed, "antispoof-order"));

    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        dev_losses: dev.map(|_| Vec::new()),
        best_epoch: None,
        iterations: 0,
    };
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    for epoch in 0..config.max_epochs {
        let batches = epoch_batches(
            dataset.len(),
            config.batch,
            config.shuffle.then_some(&mut order_rng),
        );
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let wavs: Vec<&Waveform> = batch.iter().map(|&i| &dataset[i].0).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| key_target(dataset[i].1)).collect();
            let input = batch_waveforms(&wavs)?;

            let mut tape = Tape::new();
            let mut cx = Cx::new(&mut tape);
            let x = cx.tape.leaf(input);
            let logits = model.forward_batch(&mut cx, x, true);
            let loss = ops::softmax_cross_entropy(cx.tape, logits, &targets);
            let ids = cx.param_ids().to_vec();
            epoch_loss += tape.value(loss).item();
            let mut grads = tape.backward(loss);

            adam.begin_step();
            let mut i = 0;
            model.visit_params(&mut |_, t| {
                adam.update(i, t, grads.take(ids[i]).as_ref(), config.lr);
                i += 1;
            });
            debug_assert_eq!(i, ids.len());
            report.iterations += 1;
        }
        report.epoch_losses.push(epoch_loss / batches.len() as f64);

        if let Some(dev_data) = dev {
            let dev_loss = mean_eval_loss(model, dev_data)?;
            report.dev_losses.as_mut().unwrap().push(dev_loss);
            let improved = best.as_ref().map_or(true, |(l, _)| dev_loss < *l);
            if improved {
                let mut snapshot = Vec::new();
                model.visit_state(&mut |_, t| snapshot.push(t.clone()));
                best = Some((dev_loss, snapshot));
                report.best_epoch = Some(epoch);
            }
        }
    }

    if let Some((_, snapshot)) = best {
        let mut i = 0;
        model.visit_state(&mut |_, t| {
            *t = snapshot[i].clone();
            i += 1;
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use crate::frontend::build_tiny_frontend;
    use crate::nn::gradcheck::{finite_diff, max_rel_error};
    use rand::Rng;

    fn toy_frontend_cfg() -> FrontendConfig {
        FrontendConfig {
            name: "tiny".into(),
            embed_dim: 10,
            hop: 80,
            window: 160,
            hidden_layers: 1,
        }
    }

    fn toy_model(seed: u64) -> AntispoofModel {
        let fe = build_tiny_frontend(&toy_frontend_cfg(), seed).unwrap();
        AntispoofModel::new(fe, AntispoofConfig::toy(seed)).unwrap()
    }

    fn tone(freq: f64, n: usize) -> Waveform {
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin() as f32
                    * 0.4
            })
            .collect();
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn toy_dataset(n_per: usize, len: usize) -> Vec<(Waveform, Key)> {
        let mut out = Vec::new();
        for k in 0..n_per {
            out.push((tone(150.0 + 5.0 * k as f64, len), Key::Bonafide));
            out.push((tone(400.0 + 5.0 * k as f64, len), Key::Spoof));
        }
        out
    }

    #[test]
    fn toy_shape_trace_follows_floor_rules() {
        let mut model = toy_model(1);
        let wav = tone(200.0, 2000);
        let (_, trace) = model.forward_traced(&wav).unwrap();
        let cfg = model.config().clone();
        let frames = (2000 - 160) / 80 + 1; // 24
        let pf = cfg.pooled(frames);
        let pb = cfg.pooled(cfg.reduce_dim);
        let expected: ShapeTrace = vec![
            ("ssl_frontend", vec![1, frames, 10]),
            ("reduce_fc", vec![1, frames, cfg.reduce_dim]),
            ("max_pool", vec![1, pf, pb]),
            ("res_stage1", vec![cfg.stage1_channels, pf, pb]),
            ("res_stage2", vec![cfg.stage2_channels, pf, pb]),
            ("global_avg_pool", vec![cfg.stage2_channels]),
            ("classifier", vec![2]),
        ];
        assert_eq!(trace, expected);
    }

    #[test]
    fn zero_head_scores_zero_on_any_input() {
        let mut model = toy_model(2);
        model.zero_head();
        let logits = antispoof_forward(&tone(220.0, 1200), &mut model).unwrap();
        assert_eq!(logits, Logits2 { spoof: 0.0, bonafide: 0.0 });
        assert_eq!(bonafide_score(&tone(220.0, 1200), &mut model).unwrap(), 0.0);
    }

    #[test]
    fn bonafide_score_is_second_logit() {
        let mut model = toy_model(3);
        let wav = tone(321.0, 1500);
        let logits = antispoof_forward(&wav, &mut model).unwrap();
        let score = bonafide_score(&wav, &mut model).unwrap();
        assert_eq!(score, logits.bonafide);
    }

    #[test]
    fn pooling_is_spatial_permutation_invariant() {
        let mut model = toy_model(4);
        let wav = tone(250.0, 1600);
        let plain = antispoof_forward(&wav, &mut model).unwrap();
        // Reverse all spatial positions per channel: a permutation.
        let hook = |t: &Tensor| -> Tensor {
            let s = t.shape().to_vec();
            let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
            let mut out = t.clone();
            for plane in 0..b * c {
                let seg = &mut out.data_mut()[plane * h * w..][..h * w];
                seg.reverse();
            }
            out
        };
        let permuted = model.forward_hooked(&wav, &hook).unwrap();
        assert!((plain.spoof - permuted.spoof).abs() < 1e-12);
        assert!((plain.bonafide - permuted.bonafide).abs() < 1e-12);
    }

    #[test]
    fn training_descends_and_rejects_single_class() {
        let data = toy_dataset(6, 1200);
        let mut cfg = AntispoofConfig::toy(7);
        cfg.max_epochs = 10;
        let fe = build_tiny_frontend(&toy_frontend_cfg(), 7).unwrap();
        let mut model = AntispoofModel::new(fe, cfg.clone()).unwrap();
        let report = train_antispoof(&mut model, &data, None, &cfg).unwrap();
        assert!(
            report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap(),
            "losses: {:?}",
            report.epoch_losses
        );

        let single: Vec<(Waveform, Key)> = data
            .iter()
            .filter(|(_, k)| *k == Key::Bonafide)
            .cloned()
            .collect();
        let err = train_antispoof(&mut model, &single, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_lr_keeps_params_fixed() {
        let data = toy_dataset(2, 800);
        let mut cfg = AntispoofConfig::toy(8);
        cfg.lr = 0.0;
        cfg.max_epochs = 1;
        let fe = build_tiny_frontend(&toy_frontend_cfg(), 8).unwrap();
        let mut model = AntispoofModel::new(fe, cfg.clone()).unwrap();
        let mut before = Vec::new();
        model.visit_params(&mut |_, t| before.push(t.clone()));
        train_antispoof(&mut model, &data, None, &cfg).unwrap();
        let mut after = Vec::new();
        model.visit_params(&mut |_, t| after.push(t.clone()));
        assert_eq!(before, after);
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let data = toy_dataset(4, 1000);
        let mut cfg = AntispoofConfig::toy(9);
        cfg.max_epochs = 4;
        let mk = || {
            let fe = build_tiny_frontend(&toy_frontend_cfg(), 9).unwrap();
            AntispoofModel::new(fe, cfg.clone()).unwrap()
        };
        let mut m1 = mk();
        let r1 = train_antispoof(&mut m1, &data, None, &cfg).unwrap();
        let mut m2 = mk();
        let r2 = train_antispoof(&mut m2, &data, None, &cfg).unwrap();
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(
            m1.to_container().unwrap().to_bytes(),
            m2.to_container().unwrap().to_bytes()
        );
    }

    #[test]
    fn dev_selection_keeps_best_epoch() {
        let data = toy_dataset(4, 1000);
        let dev = toy_dataset(2, 1000);
        let mut cfg = AntispoofConfig::toy(10);
        cfg.max_epochs = 5;
        let fe = build_tiny_frontend(&toy_frontend_cfg(), 10).unwrap();
        let mut model = AntispoofModel::new(fe, cfg.clone()).unwrap();
        let report = train_antispoof(&mut model, &data, Some(&dev), &cfg).unwrap();
        let dev_losses = report.dev_losses.unwrap();
        let best = report.best_epoch.unwrap();
        let min = dev_losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(best, min);
        // Restored parameters reproduce the best epoch's dev loss.
        let restored = mean_eval_loss(&mut model, &dev).unwrap();
        assert!((restored - dev_losses[best]).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_scores() {
        let mut model = toy_model(11);
        let wav = tone(200.0, 1200);
        let before = bonafide_score(&wav, &mut model).unwrap();
        let bytes = model.to_container().unwrap().to_bytes();
        let mut back =
            AntispoofModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        let after = bonafide_score(&wav, &mut back).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn gradient_check_downsized_model() {
        // Whole-model gradient check through frontend, reduction, pooling,
        // batch norm, both residual stages, and the head.
        let fe_cfg = FrontendConfig {
            name: "tiny".into(),
            embed_dim: 6,
            hop: 20,
            window: 40,
            hidden_layers: 0,
        };
        let cfg = AntispoofConfig {
            reduce_dim: 6,
            pool: 3,
            stage1_channels: 2,
            stage1_blocks: 1,
            stage2_channels: 3,
            stage2_blocks: 1,
            classes: 2,
            lr: 1e-3,
            max_epochs: 1,
            batch: 2,
            seed: 12,
            shuffle: false,
        };
        let fe = build_tiny_frontend(&fe_cfg, 12).unwrap();
        let mut model = AntispoofModel::new(fe, cfg.clone()).unwrap();

        let mut rng = rng_from_seed(55);
        let len = 200;
        let input = Tensor::new(
            &[2, len],
            (0..2 * len).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        );
        let targets = [CLASS_BONAFIDE, CLASS_SPOOF];

        let mut params = Vec::new();
        model.visit_params(&mut |_, t| params.push(t.clone()));

        let mut tape = Tape::new();
        let mut cx = Cx::new(&mut tape);
        let x = cx.tape.leaf(input.clone());
        let logits = model.forward_batch(&mut cx, x, true);
        let loss = ops::softmax_cross_entropy(cx.tape, logits, &targets);
        let ids = cx.param_ids().to_vec();
        let grads = tape.backward(loss);

        let fe_cfg2 = fe_cfg.clone();
        let cfg2 = cfg.clone();
        let input2 = input.clone();
        let mut eval = |ps: &[Tensor]| {
            let fe = build_tiny_frontend(&fe_cfg2, 12).unwrap();
            let mut m = AntispoofModel::new(fe, cfg2.clone()).unwrap();
            let mut i = 0;
            m.visit_params(&mut |_, t| {
                *t = ps[i].clone();
                i += 1;
            });
            let mut t = Tape::forward_only();
            let mut cx = Cx::new(&mut t);
            let x = cx.tape.leaf(input2.clone());
            let logits = m.forward_batch(&mut cx, x, true);
            let loss = ops::softmax_cross_entropy(cx.tape, logits, &targets);
            t.value(loss).item()
        };
        let numeric = finite_diff(&mut eval, &params, 1e-5);
        for (i, num) in numeric.iter().enumerate() {
            let ana = grads
                .get(ids[i])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(params[i].shape()));
            let err = max_rel_error(&ana, num, 1e-7);
            assert!(err < 1e-3, "param {i}: rel err {err}");
        }
    }
}
