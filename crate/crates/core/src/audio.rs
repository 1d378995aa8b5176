//! Waveform representation, deterministic length alignment, and audio file I/O.
//!
//! Every model in the crate consumes fixed-rate mono audio. Inputs are
//! aligned to a fixed sample count by tiling short utterances end-to-end
//! and cropping long ones; files are 16 kHz mono 16-bit PCM WAV.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

/// The only sample rate the pipeline operates at.
pub const SAMPLE_RATE: u32 = 16_000;

/// Alignment target used by all reference-profile models (~4 s at 16 kHz).
pub const REFERENCE_TARGET_LEN: usize = 64_600;

/// Fixed-rate mono audio. Immutable after construction; samples are
/// dimensionless amplitudes nominally in [-1, 1] and always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, validating the type invariants: nonempty, 16 kHz,
    /// all samples finite.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidInput(format!(
                "sample rate must be {SAMPLE_RATE}, got {sample_rate}"
            )));
        }
        if let Some(idx) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {idx}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples widened to f64 for numeric work.
    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

/// Where the crop window starts when an utterance is longer than the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Seeded uniform crop start; used for training variety.
    RandomCrop,
    /// Crop from sample 0; used for evaluation so scores are reproducible.
    FixedStart,
}

/// Length-alignment policy: tile-then-crop to `target_length` samples.
#[derive(Debug, Clone, Copy)]
pub struct AlignPolicy {
    pub target_length: usize,
    pub mode: AlignMode,
    pub seed: u64,
}

impl AlignPolicy {
    pub fn fixed(target_length: usize) -> Self {
        Self {
            target_length,
            mode: AlignMode::FixedStart,
            seed: 0,
        }
    }

    pub fn random(target_length: usize, seed: u64) -> Self {
        Self {
            target_length,
            mode: AlignMode::RandomCrop,
            seed,
        }
    }
}

/// Aligns a waveform to `policy.target_length` samples.
///
/// Shorter inputs are tiled end-to-end until they cover the target and then
/// cropped; longer inputs are cropped to a contiguous window (start 0 for
/// [`AlignMode::FixedStart`], seeded-uniform start for
/// [`AlignMode::RandomCrop`]). Output samples are always a rearrangement or
/// subset of the input samples; nothing is synthesized.
pub fn align_length(wav: &Waveform, policy: &AlignPolicy) -> Result<Waveform> {
    if policy.target_length == 0 {
        return Err(Error::InvalidInput("target_length must be >= 1".into()));
    }
    let target = policy.target_length;
    let n = wav.len();

    if n == target {
        return Ok(wav.clone());
    }

    let samples = if n < target {
        // Tile the full utterance, then crop: output[i] == input[i mod n].
        let mut out = Vec::with_capacity(target);
        while out.len() < target {
            let remaining = target - out.len();
            let take = remaining.min(n);
            out.extend_from_slice(&wav.samples()[..take]);
        }
        out
    } else {
        let max_start = n - target;
        let start = match policy.mode {
            AlignMode::FixedStart => 0,
            AlignMode::RandomCrop => {
                let mut rng = ChaCha12Rng::seed_from_u64(policy.seed);
                rng.gen_range(0..=max_start)
            }
        };
        wav.samples()[start..start + target].to_vec()
    };

    Waveform::new(samples, wav.sample_rate())
}

/// Integer PCM to float convention: `sample / 32768`.
fn i16_to_f32(v: i16) -> f32 {
    f32::from(v) / 32768.0
}

/// Float to integer PCM: clip to [-1, 1 - 2^-15], then round to nearest.
fn f32_to_i16(v: f32) -> i16 {
    let clipped = v.clamp(-1.0, 1.0 - 1.0 / 32768.0);
    (clipped * 32768.0).round() as i16
}

/// Reads a mono 16 kHz 16-bit PCM WAV file.
///
/// Samples are scaled to [-1, 1] by dividing by 32768. Files with any other
/// channel count, bit depth, or sample rate are rejected with
/// [`Error::UnsupportedFormat`].
pub fn read_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected {SAMPLE_RATE} Hz, got {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected 16-bit integer PCM, got {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples =
        samples.map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    Waveform::new(samples.iter().copied().map(i16_to_f32).collect(), SAMPLE_RATE)
}

/// Writes a waveform as mono 16 kHz 16-bit PCM WAV.
///
/// Out-of-range amplitudes are clipped to the representable range, so
/// `read_audio(write_audio(w))` round-trips within 16-bit quantization
/// (max abs error <= 2^-15) for in-range inputs.
pub fn write_audio(wav: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })?;
    for &s in wav.samples() {
        writer
            .write_sample(f32_to_i16(s))
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(n: usize) -> Waveform {
        let samples = (0..n).map(|i| ((i % 97) as f32 - 48.0) / 64.0).collect();
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn rejects_invalid_waveforms() {
        assert!(matches!(
            Waveform::new(vec![], SAMPLE_RATE),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            Waveform::new(vec![0.0], 8000),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            Waveform::new(vec![f32::NAN], SAMPLE_RATE),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn align_already_at_target_is_identity() {
        let w = wave(64_600);
        for mode in [AlignMode::FixedStart, AlignMode::RandomCrop] {
            let policy = AlignPolicy {
                target_length: 64_600,
                mode,
                seed: 7,
            };
            assert_eq!(align_length(&w, &policy).unwrap(), w);
        }
    }

    #[test]
    fn align_tiles_half_length_input_exactly_twice() {
        // 2 x 32300 == 64600: output must be the input concatenated with itself.
        let w = wave(32_300);
        let out = align_length(&w, &AlignPolicy::fixed(64_600)).unwrap();
        assert_eq!(out.len(), 64_600);
        assert_eq!(&out.samples()[..32_300], w.samples());
        assert_eq!(&out.samples()[32_300..], w.samples());
    }

    #[test]
    fn align_crops_long_input_from_start() {
        let w = wave(100_000);
        let out = align_length(&w, &AlignPolicy::fixed(64_600)).unwrap();
        // Oracle: direct slice of the input.
        assert_eq!(out.samples(), &w.samples()[..64_600]);
    }

    #[test]
    fn tiling_is_periodic() {
        let w = wave(777);
        let out = align_length(&w, &AlignPolicy::fixed(64_600)).unwrap();
        for (i, &s) in out.samples().iter().enumerate() {
            assert_eq!(s, w.samples()[i % 777], "sample {i}");
        }
    }

    #[test]
    fn random_crop_is_seed_deterministic() {
        let w = wave(100_000);
        let policy = AlignPolicy::random(64_600, 1234);
        let a = align_length(&w, &policy).unwrap();
        let b = align_length(&w, &policy).unwrap();
        assert_eq!(a, b);
        let c = align_length(&w, &AlignPolicy::random(64_600, 1235)).unwrap();
        // A different seed is allowed to pick the same window but should not
        // in this configuration; guard against an accidentally ignored seed.
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_start_align_is_idempotent() {
        let w = wave(90_001);
        let policy = AlignPolicy::fixed(64_600);
        let once = align_length(&w, &policy).unwrap();
        let twice = align_length(&once, &policy).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn pcm_conversion_convention() {
        assert_eq!(i16_to_f32(32767), 32767.0 / 32768.0);
        assert_eq!(i16_to_f32(-32768), -1.0);
        assert_eq!(f32_to_i16(1.5), 32767); // saturates on write
        assert_eq!(f32_to_i16(-2.0), -32768);
        assert_eq!(f32_to_i16(0.0), 0);
    }

    #[test]
    fn wav_roundtrip_silence_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        let w = Waveform::new(vec![0.0; 16_000], SAMPLE_RATE).unwrap();
        write_audio(&w, &path).unwrap();
        let back = read_audio(&path).unwrap();
        assert_eq!(back.samples(), w.samples());
    }

    #[test]
    fn one_second_file_has_16000_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sec.wav");
        write_audio(&wave(16_000), &path).unwrap();
        assert_eq!(read_audio(&path).unwrap().len(), 16_000);
    }

    #[test]
    fn stereo_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            writer.write_sample(0i16).unwrap();
            writer.write_sample(0i16).unwrap();
        }
        writer.finalize().unwrap();
        assert!(matches!(
            read_audio(&path),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn wrong_rate_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("8k.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            writer.write_sample(0i16).unwrap();
        }
        writer.finalize().unwrap();
        assert!(matches!(
            read_audio(&path),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_audio("/nonexistent/nope.wav"),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn wav_roundtrip_within_quantization(samples in proptest::collection::vec(-1.0f32..1.0, 1..4000)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.wav");
            let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
            write_audio(&w, &path).unwrap();
            let back = read_audio(&path).unwrap();
            prop_assert_eq!(back.len(), w.len());
            for (a, b) in back.samples().iter().zip(w.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0 + f32::EPSILON);
            }
        }

        #[test]
        fn align_output_length_is_target(n in 1usize..5000, target in 1usize..5000, seed: u64) {
            let w = wave(n);
            let out = align_length(&w, &AlignPolicy::random(target, seed)).unwrap();
            prop_assert_eq!(out.len(), target);
        }
    }
}
