//! Training objectives: SFT, DFT, BFT and Focal losses, plus confidence
//! profiling and importance-weight diagnostics.
//!
//! All four losses share one aggregation core so the degeneration identities
//! hold exactly: per-sample masked token losses are (optionally) scaled by a
//! detached token weight, normalized by the sample's valid-token count, then
//! (optionally) scaled by a detached sample coefficient and averaged over the
//! batch.

use crate::data::TokenBatch;
use crate::error::ObjectiveError;
use crate::tensor::{sliding_window_means, AutoTensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Sft,
    Dft,
    Bft,
    Focal,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::Sft,
        ObjectiveKind::Dft,
        ObjectiveKind::Bft,
        ObjectiveKind::Focal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Sft => "sft",
            ObjectiveKind::Dft => "dft",
            ObjectiveKind::Bft => "bft",
            ObjectiveKind::Focal => "focal",
        }
    }
}

/// Which loss to train with and its knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Group-confidence window length (BFT only).
    pub window_g: usize,
    /// Small positive constant added to per-sample valid-token counts.
    pub epsilon: f64,
    /// BFT ablation: disable to drop the detached token weight.
    pub token_weighting: bool,
    /// BFT ablation: disable to drop the sample coefficient.
    pub sample_weighting: bool,
    /// Focusing exponent (Focal only).
    pub focal_gamma: f64,
    /// Slide confidence windows over every non-pad target position instead
    /// of response positions only.
    pub window_over_all_positions: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Sft,
            window_g: 256,
            epsilon: 1e-8,
            token_weighting: true,
            sample_weighting: true,
            focal_gamma: 2.0,
            window_over_all_positions: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.epsilon <= 0.0 {
            return Err(ObjectiveError::Contract("epsilon must be > 0".into()));
        }
        if self.window_g < 1 {
            return Err(ObjectiveError::Contract("window_g must be >= 1".into()));
        }
        if self.focal_gamma < 0.0 {
            return Err(ObjectiveError::Contract("focal_gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-token confidences, sliding-window group confidences, and the derived
/// per-sample coefficient for one batch. Every value is detached from
/// gradient flow by construction.
#[derive(Debug, Clone)]
pub struct ConfidenceProfile {
    /// B×T' confidence of the reference token (T' = target positions).
    pub token_confidence: Vec<f64>,
    /// Per-sample window means over the compacted valid positions.
    pub group_confidences: Vec<Vec<f64>>,
    /// Per-sample minimum group confidence; 1.0 for samples with no valid
    /// tokens (their coefficient is forced to 0 and they are flagged).
    pub min_group_confidence: Vec<f64>,
    /// Per-sample balance coefficient, 1 − min group confidence.
    pub sample_coefficient: Vec<f64>,
    /// Samples that had zero valid tokens.
    pub empty_samples: Vec<usize>,
}

/// One training-step loss with its observable pieces.
pub struct LossBreakdown {
    /// Differentiable scalar objective.
    pub loss: AutoTensor,
    /// Scalar value of `loss`.
    pub scalar: f64,
    /// Per-sample normalized loss (before the sample coefficient).
    pub per_sample: Vec<f64>,
    /// Per-sample coefficient actually applied (1.0 when disabled).
    pub sample_coefficient: Vec<f64>,
    /// B×T' per-token cross-entropy.
    pub token_loss: Vec<f64>,
    /// B×T' token weight actually applied (1.0 when disabled).
    pub token_weight: Vec<f64>,
    /// Max over valid tokens of the reciprocal target confidence.
    pub max_importance_weight: f64,
    /// Mean target confidence over valid tokens.
    pub mean_token_confidence: f64,
}

/// Observational per-token reciprocal-confidence report.
#[derive(Debug, Clone)]
pub struct ImportanceDiagnostics {
    /// (sample, position, weight) per valid token.
    pub per_token: Vec<(usize, usize, f64)>,
    pub batch_max: f64,
}

fn check_logits(logits: &AutoTensor, batch: &TokenBatch) -> Result<(usize, usize, usize), ObjectiveError> {
    let (b, t) = batch.target_dims();
    let shape = logits.shape();
    if shape.len() != 3 || shape[0] != b || shape[1] != t {
        return Err(ObjectiveError::Contract(format!(
            "logits shape {shape:?} does not match batch {b}x{t}"
        )));
    }
    Ok((b, t, shape[2]))
}

/// Per-position cross-entropy of the reference token: defined at every
/// target position, masked later.
pub fn token_losses(logits: &AutoTensor, batch: &TokenBatch) -> Result<AutoTensor, ObjectiveError> {
    check_logits(logits, batch)?;
    let probs = logits.softmax_rows()?;
    let conf = probs.gather_target(&batch.targets())?;
    Ok(conf.log()?.neg())
}

enum TokenWeighting {
    Plain,
    Confidence,
    FocalFactor(f64),
}

enum SampleWeighting {
    Uniform,
    Coefficient,
}

/// Confidence profile per Eq-style definitions: gather target confidences,
/// compact the sample's masked-in positions, slide a mean window, take the
/// minimum. Operates on detached values only.
pub fn confidence_profile(
    logits: &AutoTensor,
    batch: &TokenBatch,
    config: &ObjectiveConfig,
) -> Result<ConfidenceProfile, ObjectiveError> {
    let (b, t, _v) = check_logits(logits, batch)?;
    config.validate()?;
    let probs = logits.softmax_rows()?;
    let conf = probs.gather_target(&batch.targets())?.detach();
    let token_confidence = conf.data().to_vec();
    let mask = batch.target_mask();
    let window_mask: Vec<f64> = if config.window_over_all_positions {
        non_pad_target_mask(batch)
    } else {
        mask.clone()
    };

    let mut group_confidences = Vec::with_capacity(b);
    let mut min_group = Vec::with_capacity(b);
    let mut coefficient = Vec::with_capacity(b);
    let mut empty = Vec::new();
    for bi in 0..b {
        let row = &token_confidence[bi * t..(bi + 1) * t];
        let keep = &window_mask[bi * t..(bi + 1) * t];
        let compact: Vec<f64> = row
            .iter()
            .zip(keep)
            .filter(|(_, &m)| m == 1.0)
            .map(|(&c, _)| c)
            .collect();
        if compact.is_empty() {
            group_confidences.push(Vec::new());
            min_group.push(1.0);
            coefficient.push(0.0);
            empty.push(bi);
            continue;
        }
        let groups = sliding_window_means(&compact, config.window_g);
        let min = groups.iter().cloned().fold(f64::INFINITY, f64::min);
        group_confidences.push(groups);
        min_group.push(min);
        coefficient.push(1.0 - min);
    }
    Ok(ConfidenceProfile {
        token_confidence,
        group_confidences,
        min_group_confidence: min_group,
        sample_coefficient: coefficient,
        empty_samples: empty,
    })
}

fn non_pad_target_mask(batch: &TokenBatch) -> Vec<f64> {
    // A target position is "real" if its target token lies inside the
    // sample's unpadded sequence.
    let (b, t) = batch.target_dims();
    let mut out = vec![0.0; b * t];
    for bi in 0..b {
        for ti in 0..t {
            if ti + 1 < batch.lengths[bi] {
                out[bi * t + ti] = 1.0;
            }
        }
    }
    out
}

fn aggregate(
    logits: &AutoTensor,
    batch: &TokenBatch,
    epsilon: f64,
    token_mode: TokenWeighting,
    sample_mode: SampleWeighting,
    profile: Option<&ConfidenceProfile>,
) -> Result<LossBreakdown, ObjectiveError> {
    let (b, t, _v) = check_logits(logits, batch)?;
    if b == 0 {
        return Err(ObjectiveError::Contract("empty batch".into()));
    }
    let graph = logits.graph().clone();
    let probs = logits.softmax_rows()?;
    let conf = probs.gather_target(&batch.targets())?;
    let losses = conf.log()?.neg();

    let weighted = match token_mode {
        TokenWeighting::Plain => losses.clone(),
        TokenWeighting::Confidence => losses.mul(&conf.detach())?,
        TokenWeighting::FocalFactor(gamma) => {
            let factor = conf.neg().add_scalar(1.0).pow_scalar(gamma)?.detach();
            losses.mul(&factor)?
        }
    };

    let mask_vals = batch.target_mask();
    let mask = graph.constant(mask_vals.clone(), &[b, t])?;
    let masked = weighted.mul(&mask)?;
    let sums = masked.sum_axis(1)?;
    let denom_vals: Vec<f64> = batch
        .valid_counts
        .iter()
        .map(|&c| c as f64 + epsilon)
        .collect();
    let denom = graph.constant(denom_vals, &[b])?;
    let per_sample = sums.div(&denom)?;

    let (loss, coeff_vals) = match sample_mode {
        SampleWeighting::Uniform => (per_sample.mean_all(), vec![1.0; b]),
        SampleWeighting::Coefficient => {
            let coeff_vals = profile
                .expect("profile required for sample weighting")
                .sample_coefficient
                .clone();
            let coeff = graph.constant(coeff_vals.clone(), &[b])?;
            (per_sample.mul(&coeff)?.mean_all(), coeff_vals)
        }
    };
    let scalar = loss.item();
    if !scalar.is_finite() {
        return Err(ObjectiveError::Contract(format!(
            "non-finite loss {scalar}"
        )));
    }

    // Observational extras, all computed from detached values.
    let conf_vals = conf.data();
    let mut max_iw = 0.0f64;
    let mut conf_sum = 0.0f64;
    let mut valid = 0usize;
    for i in 0..conf_vals.len() {
        if mask_vals[i] == 1.0 {
            max_iw = max_iw.max(1.0 / conf_vals[i]);
            conf_sum += conf_vals[i];
            valid += 1;
        }
    }
    let token_weight = match token_mode {
        TokenWeighting::Plain => vec![1.0; conf_vals.len()],
        TokenWeighting::Confidence => conf_vals.to_vec(),
        TokenWeighting::FocalFactor(gamma) => {
            conf_vals.iter().map(|&p| (1.0 - p).powf(gamma)).collect()
        }
    };
    Ok(LossBreakdown {
        scalar,
        per_sample: per_sample.data().to_vec(),
        sample_coefficient: coeff_vals,
        token_loss: losses.data().to_vec(),
        token_weight,
        max_importance_weight: max_iw,
        mean_token_confidence: if valid > 0 {
            conf_sum / valid as f64
        } else {
            0.0
        },
        loss,
    })
}

/// Mean over samples of per-sample normalized masked cross-entropy.
pub fn loss_sft(
    logits: &AutoTensor,
    batch: &TokenBatch,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    aggregate(
        logits,
        batch,
        config.epsilon,
        TokenWeighting::Plain,
        SampleWeighting::Uniform,
        None,
    )
}

/// SFT with each token's loss scaled by its own detached prediction
/// probability.
pub fn loss_dft(
    logits: &AutoTensor,
    batch: &TokenBatch,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    aggregate(
        logits,
        batch,
        config.epsilon,
        TokenWeighting::Confidence,
        SampleWeighting::Uniform,
        None,
    )
}

/// Token- and sample-level weighted loss. Ablation switches in `config`
/// disable either level independently; with both disabled this is exactly
/// the SFT loss, and with sample weighting alone disabled it is exactly DFT.
pub fn loss_bft(
    logits: &AutoTensor,
    batch: &TokenBatch,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    let token_mode = if config.token_weighting {
        TokenWeighting::Confidence
    } else {
        TokenWeighting::Plain
    };
    if config.sample_weighting {
        let profile = confidence_profile(logits, batch, config)?;
        aggregate(
            logits,
            batch,
            config.epsilon,
            token_mode,
            SampleWeighting::Coefficient,
            Some(&profile),
        )
    } else {
        aggregate(
            logits,
            batch,
            config.epsilon,
            token_mode,
            SampleWeighting::Uniform,
            None,
        )
    }
}

/// Cross-entropy scaled by a detached `(1 - p)^gamma` modulating factor.
pub fn loss_focal(
    logits: &AutoTensor,
    batch: &TokenBatch,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    aggregate(
        logits,
        batch,
        config.epsilon,
        TokenWeighting::FocalFactor(config.focal_gamma),
        SampleWeighting::Uniform,
        None,
    )
}

/// Dispatch on the configured kind.
pub fn compute_loss(
    logits: &AutoTensor,
    batch: &TokenBatch,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    match config.kind {
        ObjectiveKind::Sft => loss_sft(logits, batch, config),
        ObjectiveKind::Dft => loss_dft(logits, batch, config),
        ObjectiveKind::Bft => loss_bft(logits, batch, config),
        ObjectiveKind::Focal => loss_focal(logits, batch, config),
    }
}

/// Reciprocal target-confidence per valid token plus the batch maximum.
/// Purely observational: never enters any gradient.
pub fn importance_diagnostics(
    logits: &AutoTensor,
    batch: &TokenBatch,
) -> Result<ImportanceDiagnostics, ObjectiveError> {
    let (b, t, _v) = check_logits(logits, batch)?;
    let probs = logits.softmax_rows()?;
    let conf = probs.gather_target(&batch.targets())?.detach();
    let mask = batch.target_mask();
    let mut per_token = Vec::new();
    let mut batch_max = 0.0f64;
    for bi in 0..b {
        for ti in 0..t {
            if mask[bi * t + ti] == 1.0 {
                let w = 1.0 / conf.data()[bi * t + ti];
                batch_max = batch_max.max(w);
                per_token.push((bi, ti, w));
            }
        }
    }
    Ok(ImportanceDiagnostics {
        per_token,
        batch_max,
    })
}

#[cfg(test)]
mod tests;
