//! Deterministic optimization loop: forward, objective, backward, clip, Adam
//! update, checkpointing, and per-step metrics/runtime capture.

pub mod adam;

pub use adam::{adam_step, clip_gradients, AdamConfig, AdamState};

use crate::checkpoint;
use crate::data::{build_batch, EncodedSample};
use crate::error::TrainError;
use crate::model::Model;
use crate::objectives::{compute_loss, ObjectiveConfig, ObjectiveKind};
use crate::tensor::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 8,
            total_steps: 100,
            warmup_steps: 10,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("betas must lie in [0, 1)".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.total_steps < 1 {
            return Err(TrainError::Config("total_steps must be >= 1".into()));
        }
        self.objective
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Linear warmup, then constant.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step + 1 >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// One training-step row. Wall time is captured here but serialized into the
/// separate timing stream so the metrics file stays bit-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_sample_coeff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_sample_coeff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sample_coeff: Option<f64>,
    pub mean_token_confidence: f64,
    pub max_importance_weight: f64,
    pub grad_norm: f64,
    pub lr: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub step: u64,
    pub wall_time_s: f64,
}

/// Deterministic epoch-shuffled sample stream: element `j` of the virtual
/// stream is `perm(j / n)[j % n]`, with one seeded permutation per epoch.
pub struct BatchOrder {
    seed: u64,
    n: usize,
    cached_epoch: Option<u64>,
    perm: Vec<usize>,
}

impl BatchOrder {
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            cached_epoch: None,
            perm: Vec::new(),
        }
    }

    fn index_at(&mut self, j: u64) -> usize {
        let epoch = j / self.n as u64;
        if self.cached_epoch != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            let mut rng =
                ChaCha20Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            perm.shuffle(&mut rng);
            self.perm = perm;
            self.cached_epoch = Some(epoch);
        }
        self.perm[(j % self.n as u64) as usize]
    }

    /// Sample indices for training step `s` with batch size `b`.
    pub fn batch_indices(&mut self, step: u64, b: usize) -> Vec<usize> {
        (0..b as u64)
            .map(|k| self.index_at(step * b as u64 + k))
            .collect()
    }
}

/// Run steps `start_step..total_steps`, invoking `on_step` after each update.
/// The callback sees the metrics record and the freshly updated model/state.
pub fn train<F>(
    model: &mut Model,
    dataset: &[EncodedSample],
    pad_id: u32,
    config: &TrainConfig,
    state: &mut AdamState,
    start_step: u64,
    mut on_step: F,
) -> Result<(), TrainError>
where
    F: FnMut(&MetricsRecord, &Model, &AdamState) -> Result<(), TrainError>,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    if state.step != start_step {
        return Err(TrainError::Config(format!(
            "optimizer state at step {} but training resumes at {start_step}",
            state.step
        )));
    }
    let mut order = BatchOrder::new(config.seed, dataset.len());
    let adam_cfg = config.adam();
    let is_bft = config.objective.kind == ObjectiveKind::Bft;

    for step in start_step..config.total_steps {
        let started = Instant::now();
        let indices = order.batch_indices(step, config.batch_size);
        let samples: Vec<EncodedSample> =
            indices.iter().map(|&i| dataset[i].clone()).collect();
        let batch = build_batch(&samples, model.config.context_length, pad_id)?;

        let graph = Graph::new();
        let bound = model.bind(&graph, true)?;
        let (inputs, b, t) = batch.inputs();
        let logits = model.forward(&bound, &inputs, b, t)?;
        let breakdown = compute_loss(&logits, &batch, &config.objective)?;
        if !breakdown.scalar.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                value: breakdown.scalar,
            });
        }
        let store = graph.backward(&breakdown.loss)?;
        let mut grads: Vec<Vec<f64>> = bound
            .tensors()
            .iter()
            .map(|tensor| {
                store
                    .grad(tensor)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tensor.numel()])
            })
            .collect();
        let grad_norm = clip_gradients(&mut grads, config.grad_clip);
        let lr = config.lr_at(step);
        adam_step(&mut model.params, &grads, state, &adam_cfg, lr)?;

        let coeffs = &breakdown.sample_coefficient;
        let (mean_s, min_s, max_s) = if is_bft {
            let mean = coeffs.iter().sum::<f64>() / coeffs.len() as f64;
            let min = coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = coeffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (Some(mean), Some(min), Some(max))
        } else {
            (None, None, None)
        };
        let record = MetricsRecord {
            step,
            loss: breakdown.scalar,
            mean_sample_coeff: mean_s,
            min_sample_coeff: min_s,
            max_sample_coeff: max_s,
            mean_token_confidence: breakdown.mean_token_confidence,
            max_importance_weight: breakdown.max_importance_weight,
            grad_norm,
            lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        on_step(&record, model, state)?;
    }
    Ok(())
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";
pub const OPTIM_FILE: &str = "optim.bin";

#[derive(Debug, Serialize)]
struct MetricsHeader<'a> {
    record: &'static str,
    schema_version: u32,
    model: &'a crate::model::ModelConfig,
    train: &'a TrainConfig,
}

pub struct RunResult {
    pub metrics: Vec<MetricsRecord>,
    pub timings: Vec<TimingRecord>,
}

fn write_run(
    run_dir: &Path,
    model: &mut Model,
    dataset: &[EncodedSample],
    pad_id: u32,
    config: &TrainConfig,
    state: &mut AdamState,
    start_step: u64,
) -> Result<RunResult, TrainError> {
    std::fs::create_dir_all(run_dir)?;
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(METRICS_FILE))?;
    let mut timing_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(TIMING_FILE))?;
    if start_step == 0 {
        let header = MetricsHeader {
            record: "header",
            schema_version: 1,
            model: &model.config,
            train: config,
        };
        writeln!(metrics_file, "{}", serde_json::to_string(&header).unwrap())?;
    }

    let mut metrics = Vec::new();
    let mut timings = Vec::new();
    let interval = config.checkpoint_interval;
    let total = config.total_steps;
    train(
        model,
        dataset,
        pad_id,
        config,
        state,
        start_step,
        |record, model_now, state_now| {
            writeln!(metrics_file, "{}", serde_json::to_string(record).unwrap())?;
            let timing = TimingRecord {
                step: record.step,
                wall_time_s: record.wall_time_s,
            };
            writeln!(timing_file, "{}", serde_json::to_string(&timing).unwrap())?;
            let last = record.step + 1 == total;
            if (interval > 0 && (record.step + 1) % interval == 0) || last {
                let tag = if last {
                    MODEL_FILE.to_string()
                } else {
                    format!("model_step{}.ckpt", record.step + 1)
                };
                checkpoint::save_model(&run_dir.join(tag), model_now)?;
                let opt_tag = if last {
                    OPTIM_FILE.to_string()
                } else {
                    format!("optim_step{}.bin", record.step + 1)
                };
                checkpoint::save_optim(
                    &run_dir.join(opt_tag),
                    &state_now.snapshot(&model_now.params),
                )?;
            }
            metrics.push(record.clone());
            timings.push(timing);
            Ok(())
        },
    )?;
    Ok(RunResult { metrics, timings })
}

/// Train from scratch into `run_dir`, writing the metrics and timing streams
/// plus final (and optional interval) checkpoints.
pub fn run_training(
    run_dir: &Path,
    model: &mut Model,
    dataset: &[EncodedSample],
    pad_id: u32,
    config: &TrainConfig,
) -> Result<RunResult, TrainError> {
    let mut state = AdamState::new(&model.params);
    write_run(run_dir, model, dataset, pad_id, config, &mut state, 0)
}

/// Continue a run from its latest final checkpoint up to
/// `config.total_steps`, appending to the existing streams.
pub fn resume_training(
    run_dir: &Path,
    dataset: &[EncodedSample],
    pad_id: u32,
    config: &TrainConfig,
) -> Result<(Model, RunResult), TrainError> {
    let mut model = checkpoint::load_model(&run_dir.join(MODEL_FILE))?;
    let snap = checkpoint::load_optim(&run_dir.join(OPTIM_FILE))?;
    let mut state = AdamState::restore(&snap, &model.params)?;
    let start = snap.step;
    let result = write_run(run_dir, &mut model, dataset, pad_id, config, &mut state, start)?;
    Ok((model, result))
}

#[derive(Debug, Clone, Serialize)]
pub struct OverheadReport {
    pub baseline_median_s: f64,
    pub candidate_median_s: f64,
    /// candidate / baseline
    pub ratio: f64,
    pub measured_steps: usize,
    pub warmup_steps: usize,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median per-step wall-time ratio between two objective configurations on
/// identical model/data/steps. The first `warmup` steps are discarded.
pub fn measure_overhead(
    model_config: crate::model::ModelConfig,
    dataset: &[EncodedSample],
    pad_id: u32,
    baseline: &TrainConfig,
    candidate: &TrainConfig,
    measured_steps: u64,
    warmup: u64,
) -> Result<OverheadReport, TrainError> {
    let total = measured_steps + warmup;
    let run = |cfg: &TrainConfig| -> Result<Vec<f64>, TrainError> {
        let mut cfg = cfg.clone();
        cfg.total_steps = total;
        let mut model = Model::init(model_config)?;
        let mut state = AdamState::new(&model.params);
        let mut times = Vec::with_capacity(total as usize);
        train(
            &mut model,
            dataset,
            pad_id,
            &cfg,
            &mut state,
            0,
            |record, _, _| {
                times.push(record.wall_time_s);
                Ok(())
            },
        )?;
        Ok(times.split_off(warmup as usize))
    };
    let mut base_times = run(baseline)?;
    let mut cand_times = run(candidate)?;
    let baseline_median_s = median(&mut base_times);
    let candidate_median_s = median(&mut cand_times);
    Ok(OverheadReport {
        baseline_median_s,
        candidate_median_s,
        ratio: candidate_median_s / baseline_median_s,
        measured_steps: measured_steps as usize,
        warmup_steps: warmup as usize,
    })
}
