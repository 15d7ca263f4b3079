//! Byte-level tokenizer: each byte maps to one id in [0, 256), plus reserved
//! ids for begin-of-sequence, turn separator and padding. V = 259 unless a
//! synthetic task supplies its own id space.

pub const BOS_ID: u32 = 256;
pub const SEP_ID: u32 = 257;
pub const PAD_ID: u32 = 258;
pub const BYTE_VOCAB_SIZE: usize = 259;

pub fn tokenize(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

/// Inverse of [`tokenize`]; reserved ids are skipped.
pub fn detokenize(ids: &[u32]) -> String {
    let bytes: Vec<u8> = ids
        .iter()
        .filter(|&&id| id < 256)
        .map(|&id| id as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}
