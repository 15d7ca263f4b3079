//! Tiny decoder-only transformer producing per-token next-token logits.
//!
//! Pre-norm blocks, learned positional embeddings, GELU feed-forward of width
//! 4×embed-dim, no dropout, untied output projection. Initialization is a
//! deterministic function of (config, seed).

use crate::error::ModelError;
use crate::tensor::{causal_attention, AutoTensor, Graph};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub layer_count: usize,
    pub head_count: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0
            || self.embed_dim == 0
            || self.layer_count == 0
            || self.head_count == 0
        {
            return Err(ModelError::Config(
                "vocab_size, embed_dim, layer_count and head_count must be positive".into(),
            ));
        }
        if self.context_length < 2 {
            return Err(ModelError::Config("context_length must be >= 2".into()));
        }
        if self.embed_dim % self.head_count != 0 {
            return Err(ModelError::Config(format!(
                "embed_dim {} not divisible by head_count {}",
                self.embed_dim, self.head_count
            )));
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// All model parameters in a fixed, stable order.
#[derive(Debug, Clone)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub(crate) fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    /// FNV-1a over the parameter bit patterns; used for determinism checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for p in &self.params {
            for b in p.name.as_bytes() {
                mix(*b);
            }
            for v in &p.values {
                for b in v.to_le_bytes() {
                    mix(b);
                }
            }
        }
        h
    }
}

/// Parameters bound into a graph as leaves for one forward/backward pass.
pub struct BoundParams {
    tensors: Vec<AutoTensor>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> &AutoTensor {
        &self.tensors[self.index[name]]
    }

    /// Tensors in the same order as the owning [`ParamSet`].
    pub fn tensors(&self) -> &[AutoTensor] {
        &self.tensors
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn layer_param_specs(d: usize) -> Vec<(&'static str, Vec<usize>, ParamKind)> {
    vec![
        ("ln1.gain", vec![d], ParamKind::One),
        ("ln1.bias", vec![d], ParamKind::Zero),
        ("attn.wq", vec![d, d], ParamKind::Normal),
        ("attn.bq", vec![d], ParamKind::Zero),
        ("attn.wk", vec![d, d], ParamKind::Normal),
        ("attn.bk", vec![d], ParamKind::Zero),
        ("attn.wv", vec![d, d], ParamKind::Normal),
        ("attn.bv", vec![d], ParamKind::Zero),
        ("attn.wo", vec![d, d], ParamKind::Normal),
        ("attn.bo", vec![d], ParamKind::Zero),
        ("ln2.gain", vec![d], ParamKind::One),
        ("ln2.bias", vec![d], ParamKind::Zero),
        ("ffn.w1", vec![d, 4 * d], ParamKind::Normal),
        ("ffn.b1", vec![4 * d], ParamKind::Zero),
        ("ffn.w2", vec![4 * d, d], ParamKind::Normal),
        ("ffn.b2", vec![d], ParamKind::Zero),
    ]
}

#[derive(Clone, Copy)]
enum ParamKind {
    Normal,
    Zero,
    One,
}

impl Model {
    /// Seeded initialization: weight matrices and embeddings drawn from
    /// N(0, 0.02²), biases zero, norm gains one. Identical (config, seed)
    /// yields bitwise identical parameters.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let d = config.embed_dim;

        let mut params = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, kind: ParamKind, rng: &mut ChaCha20Rng| {
            let n: usize = shape.iter().product();
            let values = match kind {
                ParamKind::Normal => (0..n).map(|_| normal.sample(rng)).collect(),
                ParamKind::Zero => vec![0.0; n],
                ParamKind::One => vec![1.0; n],
            };
            params.push(Param { name, shape, values });
        };

        push(
            "tok_embedding".into(),
            vec![config.vocab_size, d],
            ParamKind::Normal,
            &mut rng,
        );
        push(
            "pos_embedding".into(),
            vec![config.context_length, d],
            ParamKind::Normal,
            &mut rng,
        );
        for layer in 0..config.layer_count {
            for (suffix, shape, kind) in layer_param_specs(d) {
                push(format!("layer{layer}.{suffix}"), shape, kind, &mut rng);
            }
        }
        push("final_norm.gain".into(), vec![d], ParamKind::One, &mut rng);
        push("final_norm.bias".into(), vec![d], ParamKind::Zero, &mut rng);
        push(
            "lm_head".into(),
            vec![d, config.vocab_size],
            ParamKind::Normal,
            &mut rng,
        );

        Ok(Self {
            config,
            params: ParamSet { params },
        })
    }

    /// Closed-form parameter count for this configuration.
    pub fn parameter_count(config: &ModelConfig) -> usize {
        let d = config.embed_dim;
        let per_layer = 12 * d * d + 13 * d;
        config.vocab_size * d
            + config.context_length * d
            + config.layer_count * per_layer
            + 2 * d
            + d * config.vocab_size
    }

    /// Insert every parameter into `graph` as a leaf.
    pub fn bind(&self, graph: &Graph, trainable: bool) -> Result<BoundParams, ModelError> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut index = HashMap::with_capacity(self.params.len());
        for (i, p) in self.params.params.iter().enumerate() {
            tensors.push(graph.leaf(p.values.clone(), &p.shape, trainable)?);
            index.insert(p.name.clone(), i);
        }
        Ok(BoundParams { tensors, index })
    }

    /// Logits of shape B×T×V for a `batch`×`seq` grid of token ids. Position
    /// t's logits depend only on tokens at positions <= t.
    pub fn forward(
        &self,
        bound: &BoundParams,
        tokens: &[u32],
        batch: usize,
        seq: usize,
    ) -> Result<AutoTensor, ModelError> {
        let cfg = &self.config;
        if seq > cfg.context_length {
            return Err(ModelError::SequenceTooLong {
                got: seq,
                max: cfg.context_length,
            });
        }
        if tokens.len() != batch * seq {
            return Err(ModelError::Config(format!(
                "token grid has {} entries, expected {batch}x{seq}",
                tokens.len()
            )));
        }
        let mut ids = Vec::with_capacity(tokens.len());
        for (pos, &id) in tokens.iter().enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(ModelError::TokenOutOfVocab {
                    b: pos / seq,
                    t: pos % seq,
                    id,
                    vocab: cfg.vocab_size,
                });
            }
            ids.push(id as usize);
        }
        let d = cfg.embed_dim;
        let flat = [batch * seq, d];
        let cube = [batch, seq, d];

        let tok = bound.get("tok_embedding").embedding_lookup(&ids)?;
        let pos_ids: Vec<usize> = (0..seq).collect();
        let pos = bound.get("pos_embedding").embedding_lookup(&pos_ids)?;
        let mut x = tok.reshape(&cube)?.add_broadcast(&pos)?;

        for layer in 0..cfg.layer_count {
            let name = |s: &str| format!("layer{layer}.{s}");
            let h = x
                .layer_norm(
                    bound.get(&name("ln1.gain")),
                    bound.get(&name("ln1.bias")),
                    LN_EPS,
                )?
                .reshape(&flat)?;
            let proj = |w: &str, b: &str| -> Result<AutoTensor, ModelError> {
                Ok(h.matmul(bound.get(&name(w)))?
                    .add_broadcast(bound.get(&name(b)))?
                    .reshape(&cube)?)
            };
            let q = proj("attn.wq", "attn.bq")?;
            let k = proj("attn.wk", "attn.bk")?;
            let v = proj("attn.wv", "attn.bv")?;
            let attn = causal_attention(&q, &k, &v, cfg.head_count)?;
            let o = attn
                .reshape(&flat)?
                .matmul(bound.get(&name("attn.wo")))?
                .add_broadcast(bound.get(&name("attn.bo")))?
                .reshape(&cube)?;
            x = x.add(&o)?;

            let h2 = x
                .layer_norm(
                    bound.get(&name("ln2.gain")),
                    bound.get(&name("ln2.bias")),
                    LN_EPS,
                )?
                .reshape(&flat)?;
            let f = h2
                .matmul(bound.get(&name("ffn.w1")))?
                .add_broadcast(bound.get(&name("ffn.b1")))?
                .gelu()
                .matmul(bound.get(&name("ffn.w2")))?
                .add_broadcast(bound.get(&name("ffn.b2")))?
                .reshape(&cube)?;
            x = x.add(&f)?;
        }

        let x = x.layer_norm(
            bound.get("final_norm.gain"),
            bound.get("final_norm.bias"),
            LN_EPS,
        )?;
        let logits = x
            .reshape(&flat)?
            .matmul(bound.get("lm_head"))?
            .reshape(&[batch, seq, cfg.vocab_size])?;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::central_difference;
    use rand::Rng;

    fn micro_config(seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            context_length: 8,
            embed_dim: 8,
            layer_count: 1,
            head_count: 2,
            seed,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Model::init(micro_config(7)).unwrap();
        let b = Model::init(micro_config(7)).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        let c = Model::init(micro_config(8)).unwrap();
        assert_ne!(a.params.checksum(), c.params.checksum());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = ModelConfig {
            vocab_size: 64,
            context_length: 32,
            embed_dim: 32,
            layer_count: 2,
            head_count: 2,
            seed: 1,
        };
        let model = Model::init(cfg).unwrap();
        // Independent hand count: embeddings, per-layer norms/attention/ffn,
        // final norm, untied head without bias.
        let d = 32usize;
        let per_layer = 2 * d        // ln1
            + 4 * d * d + 4 * d      // attention projections + biases
            + 2 * d                  // ln2
            + d * 4 * d + 4 * d      // ffn in
            + 4 * d * d + d; // ffn out
        let expect = 64 * d + 32 * d + 2 * per_layer + 2 * d + d * 64;
        assert_eq!(model.params.total_elements(), expect);
        assert_eq!(Model::parameter_count(&cfg), expect);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = micro_config(1);
        cfg.head_count = 3; // does not divide embed_dim 8
        assert!(Model::init(cfg).is_err());
        let mut cfg = micro_config(1);
        cfg.context_length = 1;
        assert!(Model::init(cfg).is_err());
    }

    #[test]
    fn forward_shape_contract() {
        let model = Model::init(micro_config(3)).unwrap();
        let g = Graph::new();
        let bound = model.bind(&g, false).unwrap();
        let tokens: Vec<u32> = vec![1, 2, 3, 4];
        let logits = model.forward(&bound, &tokens, 1, 4).unwrap();
        assert_eq!(logits.shape(), &[1, 4, 16]);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let model = Model::init(micro_config(3)).unwrap();
        let g = Graph::new();
        let bound = model.bind(&g, false).unwrap();
        let long: Vec<u32> = vec![0; 9];
        assert!(matches!(
            model.forward(&bound, &long, 1, 9).unwrap_err(),
            ModelError::SequenceTooLong { got: 9, max: 8 }
        ));
        let oov: Vec<u32> = vec![0, 99, 0];
        assert!(matches!(
            model.forward(&bound, &oov, 1, 3).unwrap_err(),
            ModelError::TokenOutOfVocab { t: 1, id: 99, .. }
        ));
    }

    #[test]
    fn causality_future_tokens_do_not_affect_past_logits() {
        let model = Model::init(micro_config(5)).unwrap();
        let run = |tokens: &[u32]| -> Vec<f64> {
            let g = Graph::new();
            let bound = model.bind(&g, false).unwrap();
            model
                .forward(&bound, tokens, 1, tokens.len())
                .unwrap()
                .data()
                .to_vec()
        };
        let base = run(&[3, 1, 4, 1, 5]);
        let perturbed = run(&[3, 1, 4, 9, 2]);
        // Positions 0..=2 read only tokens 0..=2: bitwise identical logits.
        assert_eq!(&base[..3 * 16], &perturbed[..3 * 16]);
        assert_ne!(&base[3 * 16..], &perturbed[3 * 16..]);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let model = Model::init(micro_config(6)).unwrap();
        let run = || -> Vec<u64> {
            let g = Graph::new();
            let bound = model.bind(&g, false).unwrap();
            model
                .forward(&bound, &[1, 2, 3], 1, 3)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fresh_model_cross_entropy_near_uniform() {
        let cfg = ModelConfig {
            vocab_size: 32,
            context_length: 16,
            embed_dim: 16,
            layer_count: 2,
            head_count: 2,
            seed: 11,
        };
        let model = Model::init(cfg).unwrap();
        let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let tokens: Vec<u32> = (0..4 * 16).map(|_| r.random_range(0..32)).collect();
        let targets: Vec<usize> = (0..4 * 16).map(|_| r.random_range(0..32)).collect();
        let g = Graph::new();
        let bound = model.bind(&g, false).unwrap();
        let logits = model.forward(&bound, &tokens, 4, 16).unwrap();
        let ce = logits
            .softmax_rows()
            .unwrap()
            .gather_target(&targets)
            .unwrap()
            .log()
            .unwrap()
            .neg()
            .mean_all()
            .item();
        let uniform = (32f64).ln();
        assert!(
            (ce - uniform).abs() / uniform < 0.10,
            "ce {ce} vs ln V {uniform}"
        );
    }

    #[test]
    fn micro_model_gradients_match_finite_differences() {
        // Full end-to-end check on a micro config (V=8, d=8, 1 layer).
        let cfg = ModelConfig {
            vocab_size: 8,
            context_length: 6,
            embed_dim: 8,
            layer_count: 1,
            head_count: 2,
            seed: 21,
        };
        let model = Model::init(cfg).unwrap();
        let tokens: Vec<u32> = vec![1, 5, 2, 7];
        let targets: Vec<usize> = vec![5, 2, 7, 0];

        let loss_for = |m: &Model| -> f64 {
            let g = Graph::new();
            let bound = m.bind(&g, true).unwrap();
            let logits = m.forward(&bound, &tokens, 1, 4).unwrap();
            logits
                .softmax_rows()
                .unwrap()
                .gather_target(&targets)
                .unwrap()
                .log()
                .unwrap()
                .neg()
                .mean_all()
                .item()
        };

        let g = Graph::new();
        let bound = model.bind(&g, true).unwrap();
        let logits = model.forward(&bound, &tokens, 1, 4).unwrap();
        let loss = logits
            .softmax_rows()
            .unwrap()
            .gather_target(&targets)
            .unwrap()
            .log()
            .unwrap()
            .neg()
            .mean_all();
        let store = g.backward(&loss).unwrap();

        for (pi, param) in model.params.iter().enumerate() {
            let analytic = store.grad(&bound.tensors()[pi]).unwrap().to_vec();
            let numeric = central_difference(
                |x| {
                    let mut probe = model.clone();
                    let p = probe.params.iter_mut().nth(pi).unwrap();
                    p.values = x.to_vec();
                    loss_for(&probe)
                },
                &param.values,
                1e-5,
            );
            for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
                let tol = 1e-6 + 1e-4 * a.abs().max(n.abs());
                assert!(
                    (a - n).abs() <= tol,
                    "param {} elem {i}: analytic {a} vs numeric {n}",
                    param.name
                );
            }
        }
    }
}
