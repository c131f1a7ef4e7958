/// Text to token-id mapping used when rendering prompts and scoring answers.
///
/// `encode` must be prefix-stable for the prompts this crate renders: the
/// encoding of `a + b` starts with the encoding of `a`. Scoring relies on it
/// to locate answer tokens.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;

    /// Token prepended to every rendered sequence, if any.
    fn bos(&self) -> Option<u32>;

    fn vocab_size(&self) -> usize;
}

/// Byte-level tokenizer: ids 0..=255 are raw UTF-8 bytes, followed by
/// the `BOS` and `EOS` specials.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const BOS: u32 = 256;
    pub const EOS: u32 = 257;
    pub const VOCAB_SIZE: usize = 258;

    pub fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .filter(|&&t| t < 256)
            .map(|&t| t as u8)
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    fn bos(&self) -> Option<u32> {
        Some(Self::BOS)
    }

    fn vocab_size(&self) -> usize {
        Self::VOCAB_SIZE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let t = ByteTokenizer;
        let ids = t.encode("Q: é?");
        assert_eq!(ids.len(), 6);
        assert_eq!(t.decode(&ids), "Q: é?");
    }
}
