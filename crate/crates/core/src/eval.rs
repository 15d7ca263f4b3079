//! Held-out evaluation: teacher-forced loss and greedy-decode exact match,
//! stratified by the easy/hard sample label.

use crate::data::synthetic::SyntheticSample;
use crate::data::{build_batch, EncodedSample};
use crate::error::TrainError;
use crate::model::Model;
use crate::objectives::{loss_sft, ObjectiveConfig};
use crate::tensor::Graph;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean per-sample normalized cross-entropy (objective-independent).
    pub held_out_loss: f64,
    pub accuracy: f64,
    pub easy_accuracy: Option<f64>,
    pub hard_accuracy: Option<f64>,
    pub easy_count: usize,
    pub hard_count: usize,
    pub total: usize,
}

/// Greedy argmax continuation of `prompt`. Stops after `max_new` tokens or
/// at `stop` (which is not included in the return value). Ties break toward
/// the lowest token id.
pub fn greedy_decode(
    model: &Model,
    prompt: &[u32],
    max_new: usize,
    stop: Option<u32>,
) -> Result<Vec<u32>, TrainError> {
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        if context.len() > model.config.context_length {
            let cut = context.len() - model.config.context_length;
            context.drain(..cut);
        }
        let graph = Graph::new();
        let bound = model.bind(&graph, false)?;
        let logits = model.forward(&bound, &context, 1, context.len())?;
        let v = model.config.vocab_size;
        let last = &logits.data()[(context.len() - 1) * v..];
        let mut best = 0usize;
        for (i, &z) in last.iter().enumerate().skip(1) {
            if z > last[best] {
                best = i;
            }
        }
        let token = best as u32;
        if Some(token) == stop {
            break;
        }
        out.push(token);
        context.push(token);
    }
    Ok(out)
}

/// Teacher-forced mean per-sample normalized cross-entropy over `samples`.
pub fn held_out_loss(
    model: &Model,
    samples: &[EncodedSample],
    pad_id: u32,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let cfg = ObjectiveConfig::default();
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = build_batch(chunk, model.config.context_length, pad_id)?;
        let graph = Graph::new();
        let bound = model.bind(&graph, false)?;
        let (inputs, b, t) = batch.inputs();
        let logits = model.forward(&bound, &inputs, b, t)?;
        let breakdown = loss_sft(&logits, &batch, &cfg)?;
        for &per in &breakdown.per_sample {
            sum += per;
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Greedy-decode each prompt and compare with the reference response payload
/// (exact match, separator-terminated).
pub fn evaluate(
    model: &Model,
    samples: &[SyntheticSample],
    pad_id: u32,
    stop: u32,
    batch_size: usize,
) -> Result<EvalSummary, TrainError> {
    let encoded: Vec<EncodedSample> = samples.iter().map(|s| s.to_encoded()).collect();
    let held_out = held_out_loss(model, &encoded, pad_id, batch_size)?;

    let mut correct = [0usize; 2]; // [easy, hard]
    let mut count = [0usize; 2];
    for s in samples {
        let reference = s.response_payload();
        let decoded = greedy_decode(model, &s.prompt, reference.len() + 1, Some(stop))?;
        let idx = usize::from(s.hard);
        count[idx] += 1;
        if decoded == reference {
            correct[idx] += 1;
        }
    }
    let total = count[0] + count[1];
    let accuracy = (correct[0] + correct[1]) as f64 / total.max(1) as f64;
    let frac = |c: usize, n: usize| {
        if n > 0 {
            Some(c as f64 / n as f64)
        } else {
            None
        }
    };
    Ok(EvalSummary {
        held_out_loss: held_out,
        accuracy,
        easy_accuracy: frac(correct[0], count[0]),
        hard_accuracy: frac(correct[1], count[1]),
        easy_count: count[0],
        hard_count: count[1],
        total,
    })
}
