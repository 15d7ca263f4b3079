//! Seeded synthetic task generators producing controllable easy/hard sample
//! mixtures in a compact per-task id space.
//!
//! Task ids: 0 = pad, 1 = begin-of-sequence, 2 = separator, 3.. = payload
//! alphabet. Copy/reverse/modular-sum draw payload lengths from the
//! configured range, with hard samples drawn from its upper half. Rare-key
//! recall uses `min_len` as the key length and `max_len` as the value
//! length: a minority of keys appear at most twice in training, and a
//! configurable fraction of easy occurrences carry one freshly corrupted
//! response token (unlearnable label noise on otherwise-confident samples).

use super::sharegpt::{Conversation, Role, Turn};
use super::EncodedSample;
use crate::error::DataError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub const TASK_PAD: u32 = 0;
pub const TASK_BOS: u32 = 1;
pub const TASK_SEP: u32 = 2;
pub const TASK_ALPHABET_START: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Reverse,
    ModularSum,
    RareKeyRecall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    /// Size of the task id space, including the three reserved ids.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Proportion of intentionally difficult samples.
    pub hard_fraction: f64,
    /// Rare-key only: probability that an easy occurrence carries one
    /// corrupted response token (fresh per occurrence, never repeated).
    #[serde(default)]
    pub noise_fraction: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.vocab_size < 8 {
            return Err(DataError::Spec(
                "vocab_size must be >= 8 (three reserved ids + alphabet)".into(),
            ));
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return Err(DataError::Spec(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(DataError::Spec("hard_fraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(DataError::Spec("noise_fraction must be in [0, 1]".into()));
        }
        if self.kind == TaskKind::RareKeyRecall && self.alphabet_size() < 12 {
            return Err(DataError::Spec(
                "rare-key recall needs an alphabet of at least 12 symbols".into(),
            ));
        }
        Ok(())
    }

    pub fn alphabet_size(&self) -> usize {
        self.vocab_size - TASK_ALPHABET_START as usize
    }
}

/// One generated sample: framed prompt and response in task id space.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
    pub hard: bool,
}

impl SyntheticSample {
    pub fn to_encoded(&self) -> EncodedSample {
        let mut e = EncodedSample::from_prompt_response(&self.prompt, &self.response);
        e.hard = self.hard;
        e
    }

    /// Payload of the response (separator stripped).
    pub fn response_payload(&self) -> &[u32] {
        match self.response.split_last() {
            Some((&TASK_SEP, payload)) => payload,
            _ => &self.response,
        }
    }
}

fn frame_prompt(payload: &[u32]) -> Vec<u32> {
    let mut p = Vec::with_capacity(payload.len() + 2);
    p.push(TASK_BOS);
    p.extend_from_slice(payload);
    p.push(TASK_SEP);
    p
}

fn frame_response(payload: &[u32]) -> Vec<u32> {
    let mut r = payload.to_vec();
    r.push(TASK_SEP);
    r
}

fn draw_payload(rng: &mut ChaCha20Rng, len: usize, alphabet: usize) -> Vec<u32> {
    (0..len)
        .map(|_| TASK_ALPHABET_START + rng.random_range(0..alphabet as u32))
        .collect()
}

fn hard_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Deterministic rare-key world: key/value alphabets, the key → value map,
/// and which keys are rare. The same spec always rebuilds the same world.
///
/// Common keys carry a learnable shortcut: each has a distinct leading
/// symbol, and the value is a function of that symbol alone. Rare keys are
/// exceptions: they reuse a common key's leading symbol with a different
/// trailing symbol, and their value differs from the shortcut value at every
/// position. Recalling them requires overriding the shortcut.
struct RareKeyWorld {
    common: Vec<(Vec<u32>, Vec<u32>)>,
    rare: Vec<(Vec<u32>, Vec<u32>)>,
    value_syms: Vec<u32>,
}

impl RareKeyWorld {
    /// The world is a deterministic function of (spec, n): eval queries must
    /// be built with the same `n` used for training generation.
    fn build(spec: &SyntheticTaskSpec, n: usize) -> Result<(Self, ChaCha20Rng), DataError> {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let alphabet = spec.alphabet_size() as u32;
        let key_sym_count = (alphabet * 2 / 3).max(4);
        let key_syms: Vec<u32> = (0..key_sym_count).map(|i| TASK_ALPHABET_START + i).collect();
        let value_syms: Vec<u32> = (key_sym_count..alphabet)
            .map(|i| TASK_ALPHABET_START + i)
            .collect();
        let key_len = spec.min_len;
        let value_len = spec.max_len;

        let hard_n = hard_count(n, spec.hard_fraction);
        let rare_count = hard_n.div_ceil(2).max(1);
        let easy_n = n - hard_n;
        let common_count = (easy_n / 16).clamp(2, 64);

        let key_space = (key_syms.len() as f64).powi(key_len as i32);
        let needed = (rare_count + common_count) as f64;
        if needed > key_space * 0.6 {
            return Err(DataError::Spec(format!(
                "rare-key recall needs {needed} distinct keys but the key space holds only {key_space};                  grow the alphabet or key length, or shrink the sample count"
            )));
        }

        let mut used = std::collections::HashSet::new();
        let mut draw_key = |rng: &mut ChaCha20Rng| -> Vec<u32> {
            loop {
                let key: Vec<u32> = (0..key_len)
                    .map(|_| key_syms[rng.random_range(0..key_syms.len())])
                    .collect();
                if used.insert(key.clone()) {
                    return key;
                }
            }
        };
        let draw_value = |rng: &mut ChaCha20Rng| -> Vec<u32> {
            (0..value_len)
                .map(|_| value_syms[rng.random_range(0..value_syms.len())])
                .collect()
        };
        let common: Vec<_> = (0..common_count)
            .map(|_| {
                let k = draw_key(&mut rng);
                let v = draw_value(&mut rng);
                (k, v)
            })
            .collect();
        let rare: Vec<_> = (0..rare_count)
            .map(|_| {
                let k = draw_key(&mut rng);
                let v = draw_value(&mut rng);
                (k, v)
            })
            .collect();
        Ok((
            Self {
                common,
                rare,
                value_syms,
            },
            rng,
        ))
    }
}

/// Generate `n` training samples. Deterministic in (spec, n).
pub fn gen_synthetic(spec: &SyntheticTaskSpec, n: usize) -> Result<Vec<SyntheticSample>, DataError> {
    spec.validate()?;
    match spec.kind {
        TaskKind::RareKeyRecall => gen_rare_key(spec, n),
        _ => gen_sequence_task(spec, n, spec.seed),
    }
}

/// Held-out evaluation samples. For rare-key recall, `n` must be the same
/// count passed to [`gen_synthetic`]: the result is one clean query per
/// distinct key of that world. For the sequence tasks it is a fresh draw of
/// `n` samples from a shifted seed.
pub fn gen_eval(spec: &SyntheticTaskSpec, n: usize) -> Result<Vec<SyntheticSample>, DataError> {
    spec.validate()?;
    match spec.kind {
        TaskKind::RareKeyRecall => {
            let (world, _) = RareKeyWorld::build(spec, n)?;
            let mut out = Vec::new();
            for (k, v) in &world.common {
                out.push(SyntheticSample {
                    prompt: frame_prompt(k),
                    response: frame_response(v),
                    hard: false,
                });
            }
            for (k, v) in &world.rare {
                out.push(SyntheticSample {
                    prompt: frame_prompt(k),
                    response: frame_response(v),
                    hard: true,
                });
            }
            Ok(out)
        }
        _ => gen_sequence_task(spec, n, spec.seed ^ 0xa5a5_5a5a_1234_fedc),
    }
}

fn gen_sequence_task(
    spec: &SyntheticTaskSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>, DataError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let alphabet = spec.alphabet_size();
    let mid = spec.min_len + (spec.max_len - spec.min_len) / 2;
    let hard_n = hard_count(n, spec.hard_fraction);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let hard = i < hard_n;
        let len = if hard {
            rng.random_range((mid + 1).min(spec.max_len)..=spec.max_len)
        } else {
            rng.random_range(spec.min_len..=mid)
        };
        let payload = draw_payload(&mut rng, len, alphabet);
        let response_payload = match spec.kind {
            TaskKind::Copy => payload.clone(),
            TaskKind::Reverse => payload.iter().rev().cloned().collect(),
            TaskKind::ModularSum => {
                let sum: u64 = payload
                    .iter()
                    .map(|&t| u64::from(t - TASK_ALPHABET_START))
                    .sum();
                vec![TASK_ALPHABET_START + (sum % alphabet as u64) as u32]
            }
            TaskKind::RareKeyRecall => unreachable!(),
        };
        out.push(SyntheticSample {
            prompt: frame_prompt(&payload),
            response: frame_response(&response_payload),
            hard,
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

fn gen_rare_key(spec: &SyntheticTaskSpec, n: usize) -> Result<Vec<SyntheticSample>, DataError> {
    let (world, mut rng) = RareKeyWorld::build(spec, n)?;
    let hard_n = hard_count(n, spec.hard_fraction);
    let easy_n = n - hard_n;

    // (key index, is_rare) occurrence list: common keys cycled, rare keys at
    // most twice each.
    let mut occurrences: Vec<(usize, bool)> = Vec::with_capacity(n);
    for i in 0..easy_n {
        occurrences.push((i % world.common.len(), false));
    }
    for i in 0..hard_n {
        occurrences.push(((i / 2) % world.rare.len(), true));
    }
    occurrences.shuffle(&mut rng);

    let mut out = Vec::with_capacity(n);
    for (idx, rare) in occurrences {
        let (key, value) = if rare {
            &world.rare[idx]
        } else {
            &world.common[idx]
        };
        let mut value = value.clone();
        if !rare && spec.noise_fraction > 0.0 && rng.random_range(0.0..1.0) < spec.noise_fraction {
            // Corrupt one response token with a different value symbol.
            let pos = rng.random_range(0..value.len());
            let original = value[pos];
            loop {
                let replacement = world.value_syms[rng.random_range(0..world.value_syms.len())];
                if replacement != original {
                    value[pos] = replacement;
                    break;
                }
            }
        }
        out.push(SyntheticSample {
            prompt: frame_prompt(key),
            response: frame_response(&value),
            hard: rare,
        });
    }
    Ok(out)
}

const RENDER_TABLE: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-";

fn render_payload(payload: &[u32]) -> String {
    payload
        .iter()
        .map(|&id| {
            let idx = (id - TASK_ALPHABET_START) as usize;
            RENDER_TABLE.get(idx).map(|&b| b as char).unwrap_or('?')
        })
        .collect()
}

/// Export samples in the conversation ingestion format (payloads rendered as
/// text, framing ids dropped).
pub fn to_conversations(samples: &[SyntheticSample]) -> Vec<Conversation> {
    samples
        .iter()
        .map(|s| {
            let prompt_payload: Vec<u32> = s
                .prompt
                .iter()
                .copied()
                .filter(|&t| t >= TASK_ALPHABET_START)
                .collect();
            Conversation {
                turns: vec![
                    Turn {
                        role: Role::Human,
                        text: render_payload(&prompt_payload),
                    },
                    Turn {
                        role: Role::Gpt,
                        text: render_payload(s.response_payload()),
                    },
                ],
            }
        })
        .collect()
}

/// FNV-1a over sample token streams; used by determinism checks.
pub fn sample_hash(samples: &[SyntheticSample]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for s in samples {
        for &t in s.prompt.iter().chain(&s.response) {
            mix(u64::from(t));
        }
        mix(u64::from(s.hard));
    }
    h
}
