//! Speaker-embedding extractor: frontend plus temporal average pooling,
//! trained with additive-angular-margin softmax over speaker identities.
//!
//! No backend embedding layer sits after the pooling, so the embedding
//! dimensionality equals the frontend's. Once trained the extractor is
//! frozen and serves as the fixed target the enhancement model is
//! optimized against.

use crate::audio::Waveform;
use crate::checkpoint::{collect_state, restore_state, Container};
use crate::frontend::{frontend_forward, Frontend, FrontendConfig};
use crate::metrics::{compute_eer, Key, ScoreSet};
use crate::nn::init::{mix_seed, rng_from_seed, uniform_fan_in};
use crate::nn::layers::Cx;
use crate::nn::{ops, Adam, Tape, Tensor, Var};
use crate::train::{batch_waveforms, epoch_batches, TrainReport};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONTAINER_KIND: &str = "speaker_extractor";

/// Utterance-level speaker embedding: the time average of frontend frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(
                "speaker embedding must be nonempty and finite".into(),
            ));
        }
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; errors on a zero-norm operand.
    pub fn cosine(&self, other: &SpeakerEmbedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput(format!(
                "embedding dims differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let na = self.norm();
        let nb = other.norm();
        if na < 1e-300 || nb < 1e-300 {
            return Err(Error::NumericDomain("zero-norm embedding in cosine".into()));
        }
        let dot: f64 = self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(dot / (na * nb))
    }
}

/// Additive-angular-margin softmax hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AamConfig {
    /// Additive angle on the target class, radians.
    pub margin: f64,
    /// Logit scale on the hypersphere.
    pub scale: f64,
    pub num_speakers: usize,
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!(
                "margin must be in [0, pi/2), got {}",
                self.margin
            )));
        }
        if self.scale <= 0.0 {
            return Err(Error::Config(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.num_speakers < 2 {
            return Err(Error::Config("need at least 2 speakers".into()));
        }
        Ok(())
    }
}

/// Warmup / constant / linear-decay learning-rate schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_frac: f64,
    pub constant_frac: f64,
    pub decay_frac: f64,
    pub total_iters: u64,
}

impl LrSchedule {
    /// The reference schedule: 10% linear warmup from zero to `peak`, 40%
    /// constant, 50% linear decay back to zero.
    pub fn standard(peak: f64, total_iters: u64) -> Self {
        Self {
            peak,
            warmup_frac: 0.10,
            constant_frac: 0.40,
            decay_frac: 0.50,
            total_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.warmup_frac + self.constant_frac + self.decay_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "schedule fractions must sum to 1.0, got {sum}"
            )));
        }
        if self.warmup_frac < 0.0 || self.constant_frac < 0.0 || self.decay_frac < 0.0 {
            return Err(Error::Config("schedule fractions must be nonnegative".into()));
        }
        if self.peak <= 0.0 || self.total_iters == 0 {
            return Err(Error::Config(
                "schedule needs positive peak and total_iters".into(),
            ));
        }
        Ok(())
    }

    /// Piecewise-linear learning rate at (possibly fractional) iteration
    /// `iter`. lr(0) = 0, lr(total) = 0, max = peak.
    pub fn lr(&self, iter: f64) -> f64 {
        let total = self.total_iters as f64;
        let t = iter.clamp(0.0, total);
        let warm_end = self.warmup_frac * total;
        let const_end = (self.warmup_frac + self.constant_frac) * total;
        if t < warm_end {
            self.peak * t / warm_end
        } else if t <= const_end {
            self.peak
        } else {
            self.peak * (total - t) / (total - const_end)
        }
    }
}

/// Frontend + temporal average pooling. `frozen` is a hard latch: a frozen
/// extractor refuses further training and is what enhancement training
/// demands.
#[derive(Debug, Clone)]
pub struct SpeakerExtractor {
    frontend: Frontend,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtractorConfig {
    frontend: FrontendConfig,
    frozen: bool,
}

impl SpeakerExtractor {
    pub fn new(frontend: Frontend) -> Self {
        Self {
            frontend,
            frozen: false,
        }
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    pub fn embed_dim(&self) -> usize {
        self.frontend.config().embed_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Latches the extractor; training it afterwards is a contract error.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Differentiable batch embedding: (B, L) -> (B, D).
    pub fn forward_batch(&self, cx: &mut Cx, x: Var) -> Var {
        let frames = self.frontend.forward_batch(cx, x);
        ops::mean_axis1(cx.tape, frames)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.frontend.visit_params(f);
    }

    pub fn to_container(&mut self) -> Result<Container> {
        let config = ExtractorConfig {
            frontend: self.frontend.config().clone(),
            frozen: self.frozen,
        };
        let mut c = Container::new(CONTAINER_KIND, &config)?;
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
        let config: ExtractorConfig = container.config_as()?;
        let frontend = crate::frontend::build_tiny_frontend(&config.frontend, 0)?;
        let mut extractor = Self {
            frontend,
            frozen: config.frozen,
        };
        restore_state(|f| extractor.visit_params(f), container)?;
        Ok(extractor)
    }
}

/// Embeds one utterance: column mean of the frame representation.
pub fn extract_embedding(wav: &Waveform, extractor: &SpeakerExtractor) -> Result<SpeakerEmbedding> {
    let rep = frontend_forward(wav, extractor.frontend())?;
    SpeakerEmbedding::new(rep.mean_over_frames())
}

/// AAM-softmax loss graph over a batch: normalize both sides, take
/// cosines against every class weight, shift the target-class angle by the
/// margin, scale, and apply softmax cross-entropy.
pub fn aam_loss_graph(
    tape: &mut Tape,
    embeddings: Var,
    weights: Var,
    targets: &[usize],
    config: &AamConfig,
) -> Result<Var> {
    let e_norm = ops::normalize_rows(tape, embeddings)?;
    let w_norm = ops::normalize_rows(tape, weights)?;
    let cos = ops::matmul_nt(tape, e_norm, w_norm);
    let margined = ops::add_margin(tape, cos, targets, config.margin);
    let logits = ops::scale(tape, margined, config.scale);
    Ok(ops::softmax_cross_entropy(tape, logits, targets))
}

/// Scalar AAM-softmax loss for a single embedding against a class-weight
/// matrix. Errors on zero-norm embedding or weight rows.
pub fn aam_softmax_loss(
    embedding: &SpeakerEmbedding,
    speaker: usize,
    weights: &Tensor,
    config: &AamConfig,
) -> Result<f64> {
    config.validate()?;
    if speaker >= weights.shape()[0] {
        return Err(Error::InvalidInput(format!(
            "speaker index {speaker} out of range for {} classes",
            weights.shape()[0]
        )));
    }
    if weights.shape()[1] != embedding.dim() {
        return Err(Error::InvalidInput(format!(
            "weight dim {} != embedding dim {}",
            weights.shape()[1],
            embedding.dim()
        )));
    }
    let mut tape = Tape::forward_only();
    let e = tape.leaf(Tensor::new(&[1, embedding.dim()], embedding.vector().to_vec()));
    let w = tape.leaf(weights.clone());
    let loss = aam_loss_graph(&mut tape, e, w, &[speaker], config)?;
    Ok(tape.value(loss).item())
}

/// Extractor training options beyond the schedule and loss config.
#[derive(Debug, Clone, Copy)]
pub struct ExtractorTrainConfig {
    pub batch: usize,
    pub seed: u64,
}

/// Result of extractor training: the report plus the trained class-weight
/// matrix (kept for inspection; verification only needs the extractor).
#[derive(Debug)]
pub struct ExtractorTrainOutcome {
    pub report: TrainReport,
    pub class_weights: Tensor,
}

/// Trains the extractor (frontend fine-tuned jointly) and an AAM class
/// head with Adam under the piecewise-linear schedule.
pub fn train_extractor(
    extractor: &mut SpeakerExtractor,
    dataset: &[(Waveform, usize)],
    schedule: &LrSchedule,
    aam: &AamConfig,
    train: &ExtractorTrainConfig,
) -> Result<ExtractorTrainOutcome> {
    schedule.validate()?;
    aam.validate()?;
    if extractor.is_frozen() {
        return Err(Error::Contract("cannot train a frozen extractor".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut speakers: Vec<usize> = dataset.iter().map(|(_, s)| *s).collect();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.len() < 2 {
        return Err(Error::Config(format!(
            "extractor training needs >= 2 speakers, got {}",
            speakers.len()
        )));
    }
    if let Some(&max) = speakers.last() {
        if max >= aam.num_speakers {
            return Err(Error::Config(format!(
                "speaker index {max} out of range for {} classes",
                aam.num_speakers
            )));
        }
    }

    let dim = extractor.embed_dim();
    let mut head = uniform_fan_in(
        &[aam.num_speakers, dim],
        dim,
        &mut rng_from_seed(mix_seed(train.seed, "aam-head")),
    );

    let mut shapes: Vec<Vec<usize>> = Vec::new();
    extractor.visit_params(&mut |_, t| shapes.push(t.shape().to_vec()));
    shapes.push(head.shape().to_vec());
    let mut adam = Adam::new(&shapes);

    let mut order_rng = rng_from_seed(mix_seed(train.seed, "extractor-order"));
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        dev_losses: None,
        best_epoch: None,
        iterations: 0,
    };

    'outer: loop {
        let batches = epoch_batches(dataset.len(), train.batch, Some(&mut order_rng));
        let mut epoch_loss = 0.0;
        let mut epoch_batches_done = 0usize;
        for batch in batches {
            if report.iterations >= schedule.total_iters {
                break 'outer;
            }
            let wavs: Vec<&Waveform> = batch.iter().map(|&i| &dataset[i].0).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| dataset[i].1).collect();
            let input = batch_waveforms(&wavs)?;

            let mut tape = Tape::new();
            let mut cx = Cx::new(&mut tape);
            let x = cx.tape.leaf(input);
            let emb = extractor.forward_batch(&mut cx, x);
            let w = cx.param(&head);
            let loss = aam_loss_graph(cx.tape, emb, w, &targets, aam)?;
            let ids = cx.param_ids().to_vec();
            let loss_value = tape.value(loss).item();
            let mut grads = tape.backward(loss);

            let lr = schedule.lr(report.iterations as f64);
            adam.begin_step();
            let mut i = 0;
            extractor.visit_params(&mut |_, t| {
                adam.update(i, t, grads.take(ids[i]).as_ref(), lr);
                i += 1;
            });
            adam.update(i, &mut head, grads.take(ids[i]).as_ref(), lr);
            debug_assert_eq!(i + 1, ids.len());

            epoch_loss += loss_value;
            epoch_batches_done += 1;
            report.iterations += 1;
        }
        if epoch_batches_done > 0 {
            report
                .epoch_losses
                .push(epoch_loss / epoch_batches_done as f64);
        }
    }

    Ok(ExtractorTrainOutcome {
        report,
        class_weights: head,
    })
}

/// Scores verification trials by embedding cosine and reports the EER.
/// Same-speaker pairs are the target (bona fide) class.
pub fn verify_eer(
    extractor: &SpeakerExtractor,
    trials: &[(Waveform, Waveform, bool)],
) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::InvalidInput("empty trial list".into()));
    }
    let mut scores = ScoreSet::default();
    for (i, (a, b, same)) in trials.iter().enumerate() {
        let ea = extract_embedding(a, extractor)?;
        let eb = extract_embedding(b, extractor)?;
        let cos = ea.cosine(&eb)?;
        scores.push(
            format!("trial{i}"),
            cos,
            if *same { Key::Bonafide } else { Key::Spoof },
        );
    }
    compute_eer(&scores).map(|(eer, _)| eer)
}
