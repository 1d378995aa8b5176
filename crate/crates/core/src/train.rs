//! Shared training plumbing: reports, batching, and seeded epoch order.

use crate::audio::Waveform;
use crate::nn::Tensor;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Outcome of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    /// Mean development-set loss per epoch, when a dev set was supplied.
    pub dev_losses: Option<Vec<f64>>,
    /// Epoch whose parameters were kept (lowest dev loss), when model
    /// selection ran.
    pub best_epoch: Option<usize>,
    /// Total optimizer steps taken.
    pub iterations: u64,
}

/// Stacks equal-length waveforms into a (B, L) tensor.
pub fn batch_waveforms(wavs: &[&Waveform]) -> Result<Tensor> {
    if wavs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let len = wavs[0].len();
    if let Some(w) = wavs.iter().find(|w| w.len() != len) {
        return Err(Error::InvalidInput(format!(
            "batch mixes lengths {len} and {}; align inputs first",
            w.len()
        )));
    }
    let mut data = Vec::with_capacity(wavs.len() * len);
    for w in wavs {
        data.extend(w.samples().iter().map(|&s| s as f64));
    }
    Ok(Tensor::new(&[wavs.len(), len], data))
}

/// Deterministic epoch batching: indices 0..n shuffled with the given rng
/// (or left in order), chunked into batches of at most `batch` items.
pub fn epoch_batches(
    n: usize,
    batch: usize,
    rng: Option<&mut crate::nn::init::Rng>,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch.max(1))
        .map(|c| c.to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use crate::nn::init::rng_from_seed;

    #[test]
    fn batches_cover_all_indices_once() {
        let mut rng = rng_from_seed(4);
        let batches = epoch_batches(10, 3, Some(&mut rng));
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn mixed_lengths_rejected() {
        let a = Waveform::new(vec![0.0; 10], SAMPLE_RATE).unwrap();
        let b = Waveform::new(vec![0.0; 11], SAMPLE_RATE).unwrap();
        assert!(batch_waveforms(&[&a, &b]).is_err());
    }
}
