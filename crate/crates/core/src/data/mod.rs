//! Tokenization, conversation ingestion with prompt masking, batching and
//! padding, and seeded synthetic task generators.

pub mod sharegpt;
pub mod synthetic;
pub mod tokenizer;

use crate::error::DataError;
use sharegpt::{Conversation, Role};
use tokenizer::{BOS_ID, SEP_ID};

/// One tokenized training sample. `mask` marks response-token positions
/// (1 = supervised target, 0 = prompt or padding), aligned with `tokens`.
#[derive(Debug, Clone)]
pub struct EncodedSample {
    pub tokens: Vec<u32>,
    pub mask: Vec<u8>,
    pub hard: bool,
}

impl EncodedSample {
    /// Prompt tokens followed by response tokens, mask 0s then 1s.
    pub fn from_prompt_response(prompt: &[u32], response: &[u32]) -> Self {
        let mut tokens = Vec::with_capacity(prompt.len() + response.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(response);
        let mut mask = vec![0u8; prompt.len()];
        mask.extend(std::iter::repeat(1u8).take(response.len()));
        Self {
            tokens,
            mask,
            hard: false,
        }
    }

    pub fn response_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Encode a conversation as BOS + turn tokens, each turn terminated by the
/// separator id. Every gpt turn (plus its terminating separator) is
/// masked-in; human turns and framing are masked-out.
pub fn encode_conversation(conv: &Conversation) -> EncodedSample {
    let mut tokens = vec![BOS_ID];
    let mut mask = vec![0u8];
    for turn in &conv.turns {
        let supervised = u8::from(turn.role == Role::Gpt);
        for id in tokenizer::tokenize(&turn.text) {
            tokens.push(id);
            mask.push(supervised);
        }
        tokens.push(SEP_ID);
        mask.push(supervised);
    }
    EncodedSample {
        tokens,
        mask,
        hard: false,
    }
}

/// Padded integer token grid with loss mask, the unit of training input.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    /// B×T token grid, row-major, right-padded.
    pub tokens: Vec<u32>,
    /// B×T mask: 1 on response-token positions, 0 on prompt and padding.
    pub mask: Vec<u8>,
    pub batch: usize,
    pub seq: usize,
    /// Per-sample count of supervised target positions.
    pub valid_counts: Vec<usize>,
    /// Per-sample unpadded sequence length.
    pub lengths: Vec<usize>,
    /// Hard/easy label per sample, carried through for stratified eval.
    pub hard: Vec<bool>,
}

impl TokenBatch {
    /// Model inputs: all positions except the last (which has no target).
    pub fn inputs(&self) -> (Vec<u32>, usize, usize) {
        let t_in = self.seq - 1;
        let mut out = Vec::with_capacity(self.batch * t_in);
        for b in 0..self.batch {
            out.extend_from_slice(&self.tokens[b * self.seq..b * self.seq + t_in]);
        }
        (out, self.batch, t_in)
    }

    /// Next-token-shifted targets aligned with [`Self::inputs`]: position t
    /// of the input grid predicts `tokens[t + 1]`.
    pub fn targets(&self) -> Vec<usize> {
        let t_in = self.seq - 1;
        let mut out = Vec::with_capacity(self.batch * t_in);
        for b in 0..self.batch {
            for t in 0..t_in {
                out.push(self.tokens[b * self.seq + t + 1] as usize);
            }
        }
        out
    }

    /// Loss mask aligned with [`Self::targets`].
    pub fn target_mask(&self) -> Vec<f64> {
        let t_in = self.seq - 1;
        let mut out = Vec::with_capacity(self.batch * t_in);
        for b in 0..self.batch {
            for t in 0..t_in {
                out.push(f64::from(self.mask[b * self.seq + t + 1]));
            }
        }
        out
    }

    pub fn target_dims(&self) -> (usize, usize) {
        (self.batch, self.seq - 1)
    }
}

/// Assemble samples into a padded batch. Overlong samples are truncated from
/// the left of the prompt only; a sample whose response cannot fit is
/// rejected.
pub fn build_batch(
    samples: &[EncodedSample],
    context_length: usize,
    pad_id: u32,
) -> Result<TokenBatch, DataError> {
    if samples.is_empty() {
        return Err(DataError::Spec("cannot build an empty batch".into()));
    }
    let mut rows: Vec<(Vec<u32>, Vec<u8>)> = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        if s.tokens.len() != s.mask.len() {
            return Err(DataError::SampleRejected {
                index,
                msg: "token/mask length mismatch".into(),
            });
        }
        if s.tokens.is_empty() {
            return Err(DataError::SampleRejected {
                index,
                msg: "empty sample".into(),
            });
        }
        let mut tokens = s.tokens.clone();
        let mut mask = s.mask.clone();
        if tokens.len() > context_length {
            let cut = tokens.len() - context_length;
            if mask[..cut].iter().any(|&m| m == 1) {
                return Err(DataError::SampleRejected {
                    index,
                    msg: format!(
                        "response does not fit in context {context_length}: left-truncating {cut} tokens would drop response tokens"
                    ),
                });
            }
            tokens.drain(..cut);
            mask.drain(..cut);
        }
        if mask[0] == 1 {
            return Err(DataError::SampleRejected {
                index,
                msg: "first position is a response token and has no preceding context".into(),
            });
        }
        rows.push((tokens, mask));
    }
    let seq = rows.iter().map(|(t, _)| t.len()).max().unwrap();
    let batch = rows.len();
    let mut tokens = Vec::with_capacity(batch * seq);
    let mut mask = Vec::with_capacity(batch * seq);
    let mut valid_counts = Vec::with_capacity(batch);
    let mut lengths = Vec::with_capacity(batch);
    for (t, m) in &rows {
        valid_counts.push(m.iter().filter(|&&x| x == 1).count());
        lengths.push(t.len());
        tokens.extend_from_slice(t);
        tokens.extend(std::iter::repeat(pad_id).take(seq - t.len()));
        mask.extend_from_slice(m);
        mask.extend(std::iter::repeat(0u8).take(seq - m.len()));
    }
    Ok(TokenBatch {
        tokens,
        mask,
        batch,
        seq,
        valid_counts,
        lengths,
        hard: samples.iter().map(|s| s.hard).collect(),
    })
}
