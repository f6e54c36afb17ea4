//! Byte-level tokenizer: one id per byte plus four special tokens.

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const SEP: u32 = 258;
pub const PAD: u32 = 259;
pub const VOCAB_SIZE: usize = 260;

pub fn is_special(id: u32) -> bool {
    (BOS..=PAD).contains(&id)
}

pub fn tokenize(text: &[u8]) -> Vec<u32> {
    text.iter().map(|&b| u32::from(b)).collect()
}

/// Inverse of [`tokenize`]; special tokens carry no bytes and are dropped.
pub fn detokenize(ids: &[u32]) -> Vec<u8> {
    ids.iter()
        .filter(|&&id| id < 256)
        .map(|&id| id as u8)
        .collect()
}

pub fn token_name(id: u32) -> String {
    match id {
        BOS => "<bos>".into(),
        EOS => "<eos>".into(),
        SEP => "<sep>".into(),
        PAD => "<pad>".into(),
        b if b < 256 => (b as u8 as char).escape_default().to_string(),
        other => format!("<{other}>"),
    }
}
