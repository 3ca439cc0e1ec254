//! Dense numerical kernel for phone-level language models: a row-major
//! matrix type, a multi-layer LSTM with exact reverse-mode gradients,
//! inverted dropout, a stable softmax and the AdamW update.

mod adamw;
mod checkpoint;
mod lstm;
mod matrix;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use lstm::{
    backward, lstm_forward, next_phone_logits, word_backward, word_forward, word_log_probs,
    ForwardCache, LstmParams, LstmShape, Segment, WordPass,
};
pub use matrix::{dot, Matrix};

use rand::Rng as _;

use crate::rng::Rng;

/// Inverted dropout in place. In training mode each unit is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`; the applied
/// multiplier per unit is returned so the backward pass can reuse it.
/// Evaluation mode and `rate == 0` leave `x` untouched and return `None`.
pub fn dropout(x: &mut [f64], rate: f64, rng: &mut Rng, training: bool) -> Option<Vec<f64>> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if !training || rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x
        .iter_mut()
        .map(|v| {
            let m = if rng.random::<f64>() < rate { 0.0 } else { keep };
            *v *= m;
            m
        })
        .collect();
    Some(mask)
}

/// Natural-log softmax, written into `out`.
pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax(logits, &mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}
