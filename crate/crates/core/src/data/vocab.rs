use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;

use crate::error::{NatError, Result};

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const EPS: usize = 2;
pub const BOS: usize = 3;
pub const EOS: usize = 4;
/// Ids below this are reserved; content tokens start here.
pub const NUM_RESERVED: usize = 5;

const RESERVED_SYMBOLS: [&str; NUM_RESERVED] = ["<pad>", "<mask>", "<eps>", "<bos>", "<eos>"];

/// A sequence of token ids (source, target, proxy target or proxy input).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn new(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// All-`MASK` sequence of the given length.
    pub fn masks(len: usize) -> Self {
        Self(vec![MASK; len])
    }

    pub fn without_eps(&self) -> Self {
        Self(self.0.iter().copied().filter(|&t| t != EPS).collect())
    }

    pub fn is_content(&self) -> bool {
        self.0.iter().all(|&t| t >= NUM_RESERVED)
    }
}

impl Deref for TokenSeq {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Token symbols. Ids `0..NUM_RESERVED` are the reserved markers, the rest are content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<S: AsRef<str>>(content: &[S]) -> Result<Self> {
        let mut symbols: Vec<String> = RESERVED_SYMBOLS.iter().map(|s| s.to_string()).collect();
        let mut lookup = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            lookup.insert(s.clone(), i);
        }
        for s in content {
            let s = s.as_ref();
            if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '@' || c == '|') {
                return Err(NatError::Config(format!("bad token symbol {s:?}")));
            }
            if lookup.insert(s.to_string(), symbols.len()).is_some() {
                return Err(NatError::Config(format!("duplicate token symbol {s:?}")));
            }
            symbols.push(s.to_string());
        }
        Ok(Self { symbols, lookup })
    }

    /// `A`, `B`, ... for up to 26 content tokens, `w0`, `w1`, ... beyond that.
    pub fn with_content_size(n: usize) -> Self {
        let names: Vec<String> = if n <= 26 {
            (0..n)
                .map(|i| ((b'A' + i as u8) as char).to_string())
                .collect()
        } else {
            (0..n).map(|i| format!("w{i}")).collect()
        };
        Self::new(&names).expect("generated symbols are valid")
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn content_size(&self) -> usize {
        self.symbols.len() - NUM_RESERVED
    }

    pub fn content_ids(&self) -> std::ops::Range<usize> {
        NUM_RESERVED..self.symbols.len()
    }

    pub fn content_symbols(&self) -> &[String] {
        &self.symbols[NUM_RESERVED..]
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.lookup.get(symbol).copied()
    }

    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        text.split_whitespace()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| NatError::Config(format!("unknown token {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }

    pub fn decode(&self, seq: &[usize]) -> String {
        let parts: Vec<&str> = seq.iter().map(|&t| self.symbol(t)).collect();
        parts.join(" ")
    }

    pub fn display<'a>(&'a self, seq: &'a [usize]) -> impl fmt::Display + 'a {
        struct D<'a>(&'a Vocab, &'a [usize]);
        impl fmt::Display for D<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0.decode(self.1))
            }
        }
        D(self, seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_come_first() {
        let v = Vocab::with_content_size(4);
        assert_eq!(v.size(), 9);
        assert_eq!(v.symbol(MASK), "<mask>");
        assert_eq!(v.id("A"), Some(NUM_RESERVED));
        assert_eq!(v.encode("A D").unwrap().ids(), &[5, 8]);
        assert_eq!(v.decode(&[5, 8]), "A D");
    }

    #[test]
    fn large_vocab_uses_numbered_symbols() {
        let v = Vocab::with_content_size(40);
        assert_eq!(v.symbol(NUM_RESERVED + 39), "w39");
    }

    #[test]
    fn rejects_duplicates_and_whitespace() {
        assert!(Vocab::new(&["a", "a"]).is_err());
        assert!(Vocab::new(&["a b"]).is_err());
        assert!(Vocab::new(&["<mask>"]).is_err());
    }
}
