//! Time-domain spoofing enhancement: a masking temporal-convolutional
//! converter trained to pull the speaker embedding of a spoofed utterance
//! toward the embedding of a bona fide utterance of the target speaker,
//! against a frozen extractor.
//!
//! Architecture: strided 1-d conv encoder with ReLU, a TCN separator
//! (R repeats of X dilated depthwise blocks with residual and skip paths,
//! global layer norm throughout), a sigmoid mask on the encoder output,
//! and a transposed-conv overlap-add decoder back to one waveform.

use crate::audio::{align_length, read_audio, write_audio, AlignPolicy, Waveform};
use crate::checkpoint::{collect_state, restore_state, Container};
use crate::metrics::Key;
use crate::nn::conv::Conv1dSpec;
use crate::nn::init::{mix_seed, rng_from_seed};
use crate::nn::layers::{Conv1d, ConvTranspose1d, Cx, GlobalLayerNorm, PRelu};
use crate::nn::{ops, Adam, Tape, Tensor, Var};
use crate::proto::TrialRecord;
use crate::spkembed::{extract_embedding, SpeakerEmbedding, SpeakerExtractor};
use crate::train::{batch_waveforms, epoch_batches, TrainReport};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const CONTAINER_KIND: &str = "enhancer";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhancerConfig {
    pub encoder_filters: usize,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,
    /// Repeats of the dilated block stack.
    pub repeats: usize,
    /// Blocks per repeat; block b uses dilation 2^b.
    pub blocks_per_repeat: usize,
    pub block_channels: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Redraw the bona fide side of each pair every epoch (seeded).
    pub resample_pairs: bool,
}

impl EnhancerConfig {
    /// Reference configuration: three repeats of eight dilated blocks.
    pub fn reference(seed: u64) -> Self {
        Self {
            encoder_filters: 256,
            encoder_kernel: 16,
            encoder_stride: 8,
            repeats: 3,
            blocks_per_repeat: 8,
            block_channels: 512,
            lr: 1e-5,
            epochs: 300,
            batch: 8,
            seed,
            resample_pairs: true,
        }
    }

    pub fn toy(seed: u64) -> Self {
        Self {
            encoder_filters: 32,
            encoder_kernel: 16,
            encoder_stride: 8,
            repeats: 1,
            blocks_per_repeat: 4,
            block_channels: 16,
            lr: 3e-3,
            epochs: 60,
            batch: 8,
            seed,
            resample_pairs: true,
        }
    }

    /// Bottleneck and skip widths follow the usual 4:1 ratio to the block
    /// channels.
    pub fn bottleneck_channels(&self) -> usize {
        (self.block_channels / 4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_filters == 0
            || self.encoder_kernel == 0
            || self.encoder_stride == 0
            || self.repeats == 0
            || self.blocks_per_repeat == 0
            || self.block_channels == 0
        {
            return Err(Error::Config("enhancer dims must be positive".into()));
        }
        if self.encoder_stride > self.encoder_kernel {
            return Err(Error::Config(
                "encoder stride must not exceed the kernel".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// A spoofed utterance paired with a bona fide utterance of the speaker it
/// pretends to be. Both sides must share one aligned length.
#[derive(Debug, Clone)]
pub struct SpoofPair {
    pub spoof: Waveform,
    pub bonafide: Waveform,
    pub target_speaker: String,
}

impl SpoofPair {
    pub fn new(spoof: Waveform, bonafide: Waveform, target_speaker: String) -> Result<Self> {
        if spoof.len() != bonafide.len() {
            return Err(Error::InvalidInput(format!(
                "pair lengths differ: spoof {} vs bona fide {}",
                spoof.len(),
                bonafide.len()
            )));
        }
        Ok(Self {
            spoof,
            bonafide,
            target_speaker,
        })
    }
}

#[derive(Debug, Clone)]
struct TcnBlock {
    expand: Conv1d,
    prelu1: PRelu,
    norm1: GlobalLayerNorm,
    depthwise: Conv1d,
    prelu2: PRelu,
    norm2: GlobalLayerNorm,
    skip: Conv1d,
    residual: Conv1d,
}

impl TcnBlock {
    fn new(bottleneck: usize, hidden: usize, dilation: usize, rng: &mut crate::nn::init::Rng) -> Self {
        let pad = dilation; // same padding for kernel 3
        Self {
            expand: Conv1d::new(bottleneck, hidden, 1, Conv1dSpec::default(), rng),
            prelu1: PRelu::new(hidden),
            norm1: GlobalLayerNorm::new(hidden),
            depthwise: Conv1d::new(
                hidden,
                hidden,
                3,
                Conv1dSpec {
                    dilation,
                    groups: hidden,
                    pad_left: pad,
                    pad_right: pad,
                    ..Default::default()
                },
                rng,
            ),
            prelu2: PRelu::new(hidden),
            norm2: GlobalLayerNorm::new(hidden),
            skip: Conv1d::new(hidden, bottleneck, 1, Conv1dSpec::default(), rng),
            residual: Conv1d::new(hidden, bottleneck, 1, Conv1dSpec::default(), rng),
        }
    }

    /// Returns (skip contribution, residual-updated stream).
    fn forward(&self, cx: &mut Cx, y: Var) -> (Var, Var) {
        let u = self.expand.forward(cx, y);
        let u = self.prelu1.forward(cx, u);
        let u = self.norm1.forward(cx, u);
        let u = self.depthwise.forward(cx, u);
        let u = self.prelu2.forward(cx, u);
        let u = self.norm2.forward(cx, u);
        let skip = self.skip.forward(cx, u);
        let res = self.residual.forward(cx, u);
        let next = ops::add(cx.tape, y, res);
        (skip, next)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.expand.visit(&format!("{prefix}.expand"), f);
        self.prelu1.visit(&format!("{prefix}.prelu1"), f);
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.depthwise.visit(&format!("{prefix}.depthwise"), f);
        self.prelu2.visit(&format!("{prefix}.prelu2"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.skip.visit(&format!("{prefix}.skip"), f);
        self.residual.visit(&format!("{prefix}.residual"), f);
    }
}

#[derive(Debug, Clone)]
pub struct EnhancerModel {
    config: EnhancerConfig,
    encoder: Conv1d,
    input_norm: GlobalLayerNorm,
    bottleneck: Conv1d,
    blocks: Vec<TcnBlock>,
    mask_prelu: PRelu,
    mask_conv: Conv1d,
    decoder: ConvTranspose1d,
    /// Diagnostic variant: bypass the separator and apply an all-ones
    /// mask, turning the model into encoder/decoder passthrough. Not
    /// trainable.
    unit_mask: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelConfig {
    enhancer: EnhancerConfig,
    unit_mask: bool,
}

impl EnhancerModel {
    pub fn new(config: EnhancerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(mix_seed(config.seed, "enhancer"));
        let n = config.encoder_filters;
        let bc = config.bottleneck_channels();
        let encoder = Conv1d::new(
            1,
            n,
            config.encoder_kernel,
            Conv1dSpec {
                stride: config.encoder_stride,
                ..Default::default()
            },
            &mut rng,
        );
        let input_norm = GlobalLayerNorm::new(n);
        let bottleneck = Conv1d::new(n, bc, 1, Conv1dSpec::default(), &mut rng);
        let mut blocks = Vec::new();
        for _ in 0..config.repeats {
            for b in 0..config.blocks_per_repeat {
                blocks.push(TcnBlock::new(bc, config.block_channels, 1 << b, &mut rng));
            }
        }
        let mask_prelu = PRelu::new(bc);
        let mask_conv = Conv1d::new(bc, n, 1, Conv1dSpec::default(), &mut rng);
        let decoder = ConvTranspose1d::new(n, 1, config.encoder_kernel, config.encoder_stride, &mut rng);
        Ok(Self {
            config,
            encoder,
            input_norm,
            bottleneck,
            blocks,
            mask_prelu,
            mask_conv,
            decoder,
            unit_mask: false,
        })
    }

    /// Encoder/decoder passthrough for reconstruction checks: paired
    /// +/- delta filters around the ReLU so the decoder recovers the
    /// signed signal, stride equal to the kernel, and the mask forced to
    /// ones.
    pub fn identity_variant(kernel: usize, seed: u64) -> Result<Self> {
        let config = EnhancerConfig {
            encoder_filters: 2 * kernel,
            encoder_kernel: kernel,
            encoder_stride: kernel,
            repeats: 1,
            blocks_per_repeat: 1,
            block_channels: 2,
            lr: 0.0,
            epochs: 0,
            batch: 1,
            seed,
            resample_pairs: false,
        };
        let mut model = Self::new(config)?;
        model.unit_mask = true;
        model.set_identity_codec(1.0);
        Ok(model)
    }

    /// 50%-overlap variant of the identity codec: decoder taps scaled by
    /// 0.5 so doubly-covered samples reconstruct exactly (edges are
    /// covered once and halve).
    pub fn identity_variant_overlapping(kernel: usize, seed: u64) -> Result<Self> {
        let config = EnhancerConfig {
            encoder_filters: 2 * kernel,
            encoder_kernel: kernel,
            encoder_stride: kernel / 2,
            repeats: 1,
            blocks_per_repeat: 1,
            block_channels: 2,
            lr: 0.0,
            epochs: 0,
            batch: 1,
            seed,
            resample_pairs: false,
        };
        let mut model = Self::new(config)?;
        model.unit_mask = true;
        model.set_identity_codec(0.5);
        Ok(model)
    }

    fn set_identity_codec(&mut self, decoder_gain: f64) {
        let k = self.config.encoder_kernel;
        let mut enc = vec![0.0; 2 * k * k]; // (2K, 1, K)
        let mut dec = vec![0.0; 2 * k * k]; // (2K, 1, K)
        for i in 0..k {
            enc[(2 * i) * k + i] = 1.0;
            enc[(2 * i + 1) * k + i] = -1.0;
            dec[(2 * i) * k + i] = decoder_gain;
            dec[(2 * i + 1) * k + i] = -decoder_gain;
        }
        self.encoder.weight = Tensor::new(&[2 * k, 1, k], enc);
        self.encoder.bias = Tensor::zeros(&[2 * k]);
        self.decoder.weight = Tensor::new(&[2 * k, 1, k], dec);
        self.decoder.bias = Tensor::zeros(&[1]);
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.config
    }

    pub fn is_unit_mask(&self) -> bool {
        self.unit_mask
    }

    /// Zeroes every bias and shift so a zero input maps to a zero output;
    /// the neutral starting point used by linearity checks.
    pub fn zero_biases(&mut self) {
        self.visit_params(&mut |name, t| {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                *t = Tensor::zeros(t.shape());
            }
        });
    }

    /// Differentiable batch forward: (B, L) -> (B, L). The input is
    /// right-padded to a whole number of encoder frames and the output
    /// cropped back, so length is always preserved.
    pub fn forward_batch(&self, cx: &mut Cx, x: Var) -> Var {
        let shape = cx.tape.value(x).shape().to_vec();
        assert_eq!(shape.len(), 2, "enhancer expects (B, L)");
        let (bs, len) = (shape[0], shape[1]);
        let k = self.config.encoder_kernel;
        let s = self.config.encoder_stride;
        assert!(len >= k, "caller must validate minimum length");

        let frames = (len - k).div_ceil(s) + 1;
        let padded = (frames - 1) * s + k;

        let mut y = ops::reshape(cx.tape, x, &[bs, 1, len]);
        if padded > len {
            y = ops::pad1d(cx.tape, y, 0, padded - len);
        }
        let encoded = self.encoder.forward(cx, y); // (B, N, F)
        let encoded = ops::relu(cx.tape, encoded);

        let masked = if self.unit_mask {
            encoded
        } else {
            let mut stream = self.input_norm.forward(cx, encoded);
            stream = self.bottleneck.forward(cx, stream);
            let mut skip_sum: Option<Var> = None;
            for block in &self.blocks {
                let (skip, next) = block.forward(cx, stream);
                stream = next;
                skip_sum = Some(match skip_sum {
                    None => skip,
                    Some(acc) => ops::add(cx.tape, acc, skip),
                });
            }
            let m = self.mask_prelu.forward(cx, skip_sum.expect("at least one block"));
            let m = self.mask_conv.forward(cx, m);
            let m = ops::sigmoid(cx.tape, m);
            ops::mul(cx.tape, encoded, m)
        };

        let decoded = self.decoder.forward(cx, masked); // (B, 1, padded)
        let cropped = ops::crop1d(cx.tape, decoded, 0, len);
        ops::reshape(cx.tape, cropped, &[bs, len])
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit("encoder", f);
        self.input_norm.visit("input_norm", f);
        self.bottleneck.visit("bottleneck", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&format!("block{i}"), f);
        }
        self.mask_prelu.visit("mask_prelu", f);
        self.mask_conv.visit("mask_conv", f);
        self.decoder.visit("decoder", f);
    }

    pub fn to_container(&mut self) -> Result<Container> {
        let config = ModelConfig {
            enhancer: self.config.clone(),
            unit_mask: self.unit_mask,
        };
        let mut c = Container::new(CONTAINER_KIND, &config)?;
        collect_state(|f| self.visit_params(f), &mut c);
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
        let mut model = Self::new(config.enhancer)?;
        model.unit_mask = config.unit_mask;
        restore_state(|f| model.visit_params(f), container)?;
        Ok(model)
    }
}

/// Converts one waveform. Output length equals input length; finiteness is
/// validated on construction of the result.
pub fn enhance(wav: &Waveform, model: &EnhancerModel) -> Result<Waveform> {
    if wav.len() < model.config.encoder_kernel {
        return Err(Error::InvalidInput(format!(
            "waveform of {} samples is shorter than the {}-sample encoder kernel",
            wav.len(),
            model.config.encoder_kernel
        )));
    }
    let mut tape = Tape::forward_only();
    let mut cx = Cx::new(&mut tape);
    let x = cx
        .tape
        .leaf(Tensor::new(&[1, wav.len()], wav.samples_f64()));
    let y = model.forward_batch(&mut cx, x);
    let out = tape.value(y).data().iter().map(|&v| v as f32).collect();
    Waveform::new(out, wav.sample_rate())
}

/// The embedding-gap objective on raw embeddings: `1 - cos(a, b)`,
/// bounded in [0, 2]. Errors on zero-norm embeddings.
pub fn embedding_gap_loss(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    Ok(1.0 - a.cosine(b)?)
}

/// Embedding-gap loss between an enhanced utterance and a bona fide
/// reference, measured through a frozen extractor.
pub fn enhancement_loss(
    enh: &Waveform,
    bonafide: &Waveform,
    extractor: &SpeakerExtractor,
) -> Result<f64> {
    if !extractor.is_frozen() {
        return Err(Error::Contract(
            "enhancement loss is defined against a frozen extractor".into(),
        ));
    }
    let ea = extract_embedding(enh, extractor)?;
    let eb = extract_embedding(bonafide, extractor)?;
    embedding_gap_loss(&ea, &eb)
}

/// Trains the enhancement model on spoof/bona fide pairs against a frozen
/// extractor with Adam at a fixed learning rate. Only enhancer parameters
/// update; the extractor is immutable throughout.
///
/// With `config.resample_pairs`, the bona fide side of every pair is
/// redrawn each epoch (seeded) from the bona fide utterances available for
/// that target speaker within `pairs`.
pub fn train_enhancer(
    model: &mut EnhancerModel,
    pairs: &[SpoofPair],
    extractor: &SpeakerExtractor,
    config: &EnhancerConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if !extractor.is_frozen() {
        return Err(Error::Contract(
            "enhancement training requires a frozen extractor; freeze() it first \
             (training against a live extractor collapses to a trivial solution)"
                .into(),
        ));
    }
    if model.unit_mask {
        return Err(Error::Config(
            "the unit-mask reconstruction variant is not trainable".into(),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let len = pairs[0].spoof.len();
    if pairs.iter().any(|p| p.spoof.len() != len) {
        return Err(Error::InvalidInput(
            "all pairs must share one aligned length".into(),
        ));
    }

    // Bona fide embeddings never change (extractor frozen): compute once.
    let bona_embeddings: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| extract_embedding(&p.bonafide, extractor).map(|e| e.vector().to_vec()))
        .collect::<Result<_>>()?;
    // Bona fide pool per target speaker for epoch resampling.
    let mut pool_by_speaker: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        pool_by_speaker
            .entry(p.target_speaker.as_str())
            .or_default()
            .push(i);
    }

    let mut shapes: Vec<Vec<usize>> = Vec::new();
    model.visit_params(&mut |_, t| shapes.push(t.shape().to_vec()));
    let mut adam = Adam::new(&shapes);
    let mut order_rng = rng_from_seed(mix_seed(config.seed, "enh-order"));
    let mut pair_rng = rng_from_seed(mix_seed(config.seed, "enh-pairing"));

    let dim = extractor.embed_dim();
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        dev_losses: None,
        best_epoch: None,
        iterations: 0,
    };

    for _epoch in 0..config.epochs {
        // Index of the bona fide embedding used for each spoof this epoch.
        let assignment: Vec<usize> = if config.resample_pairs {
            pairs
                .iter()
                .map(|p| {
                    let pool = &pool_by_speaker[p.target_speaker.as_str()];
                    pool[pair_rng.gen_range(0..pool.len())]
                })
                .collect()
        } else {
            (0..pairs.len()).collect()
        };

        let batches = epoch_batches(pairs.len(), config.batch, Some(&mut order_rng));
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let wavs: Vec<&Waveform> = batch.iter().map(|&i| &pairs[i].spoof).collect();
            let input = batch_waveforms(&wavs)?;
            let mut target = Vec::with_capacity(batch.len() * dim);
            for &i in batch {
                target.extend_from_slice(&bona_embeddings[assignment[i]]);
            }

            let mut tape = Tape::new();
            let mut cx = Cx::new(&mut tape);
            let x = cx.tape.leaf(input);
            let enhanced = model.forward_batch(&mut cx, x);
            let e_enh =
                cx.frozen(|cx| extractor.forward_batch(cx, enhanced));
            let e_bona = cx.tape.leaf(Tensor::new(&[batch.len(), dim], target));
            let cos = ops::cosine_rows(cx.tape, e_enh, e_bona)?;
            let mean_cos = ops::mean_all(cx.tape, cos);
            let neg = ops::scale(cx.tape, mean_cos, -1.0);
            let loss = ops::add_scalar(cx.tape, neg, 1.0);
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
    }
    Ok(report)
}

/// How an utterance got into the enhanced output set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Enhanced,
    Passthrough,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::Enhanced => "enhanced",
            Disposition::Passthrough => "passthrough",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "enhanced" => Some(Disposition::Enhanced),
            "passthrough" => Some(Disposition::Passthrough),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub relative_path: String,
    pub disposition: Disposition,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.utt_id,
            self.relative_path,
            self.disposition.as_str()
        )
    }
}

#[derive(Debug)]
pub struct BatchEnhanceReport {
    pub entries: Vec<ManifestEntry>,
    /// Per-file failures; the batch keeps going past them.
    pub failures: Vec<String>,
    pub manifest_path: std::path::PathBuf,
}

/// Reads each trial's audio from `audio_dir` (`<utt_id>.wav`), writes
/// spoofed trials through the enhancement model (aligned per `policy`)
/// and copies bona fide trials untouched, then writes `manifest.txt`
/// mapping utterance ids to files. I/O failures are collected per file
/// and the batch continues.
pub fn batch_enhance(
    records: &[TrialRecord],
    audio_dir: impl AsRef<Path>,
    model: &EnhancerModel,
    policy: &AlignPolicy,
    out_dir: impl AsRef<Path>,
) -> Result<BatchEnhanceReport> {
    let audio_dir = audio_dir.as_ref();
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for record in records {
        let file = format!("{}.wav", record.utt_id);
        let src = audio_dir.join(&file);
        let dst = out_dir.join(&file);
        let result = match record.key {
            Key::Bonafide => std::fs::copy(&src, &dst)
                .map(|_| Disposition::Passthrough)
                .map_err(|e| Error::io(&src, e)),
            Key::Spoof => read_audio(&src)
                .and_then(|wav| align_length(&wav, policy))
                .and_then(|wav| enhance(&wav, model))
                .and_then(|enh| write_audio(&enh, &dst))
                .map(|()| Disposition::Enhanced),
        };
        match result {
            Ok(disposition) => entries.push(ManifestEntry {
                utt_id: record.utt_id.clone(),
                relative_path: file,
                disposition,
            }),
            Err(e) => failures.push(format!("{}: {e}", record.utt_id)),
        }
    }

    let manifest_path = out_dir.join("manifest.txt");
    let mut text = String::new();
    for e in &entries {
        text.push_str(&e.to_line());
        text.push('\n');
    }
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(BatchEnhanceReport {
        entries,
        failures,
        manifest_path,
    })
}

/// Parses a `batch_enhance` manifest back into entries.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        }
        let disposition = Disposition::parse(fields[2])
            .ok_or_else(|| parse_err(format!("unknown disposition \"{}\"", fields[2])))?;
        out.push(ManifestEntry {
            utt_id: fields[0].to_string(),
            relative_path: fields[1].to_string(),
            disposition,
        });
    }
    Ok(out)
}
