//! Corpora: enumerable multi-mode toys, Markov-chain corruption corpora, and
//! references drawn from the known generator.

mod generator;
mod io;
mod vocab;

pub use generator::{
    gen_synthetic, gen_two_mode, sample_references, CondEntry, EnumerableCond, GeneratorKind,
    GeneratorSpec, MarkovSpec, ModeSet, StyleSpec,
};
pub use io::{load_corpus, read_token_lines, save_corpus, write_token_lines};
pub use vocab::{TokenSeq, Vocab, BOS, EOS, EPS, MASK, NUM_RESERVED, PAD};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Source/target pairs plus the generator that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(TokenSeq, TokenSeq)>,
    /// Extra references keyed by pair index.
    pub refs: BTreeMap<usize, Vec<TokenSeq>>,
    pub spec: GeneratorSpec,
    pub seed: u64,
    /// Free-form provenance such as the distilling teacher and beam size.
    pub notes: BTreeMap<String, String>,
}

impl ParallelCorpus {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Self {
        Self {
            pairs: Vec::new(),
            refs: BTreeMap::new(),
            spec,
            seed,
            notes: BTreeMap::new(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.spec.vocab
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &TokenSeq> {
        self.pairs.iter().map(|(x, _)| x)
    }

    /// First `n` pairs and the rest, with references re-keyed.
    pub fn split_at(&self, n: usize) -> (ParallelCorpus, ParallelCorpus) {
        let n = n.min(self.pairs.len());
        let mut head = ParallelCorpus {
            pairs: self.pairs[..n].to_vec(),
            refs: BTreeMap::new(),
            spec: self.spec.clone(),
            seed: self.seed,
            notes: self.notes.clone(),
        };
        let mut tail = ParallelCorpus {
            pairs: self.pairs[n..].to_vec(),
            ..head.clone()
        };
        for (&i, r) in &self.refs {
            if i < n {
                head.refs.insert(i, r.clone());
            } else {
                tail.refs.insert(i - n, r.clone());
            }
        }
        (head, tail)
    }

    /// Draws `k` generator references for every pair.
    pub fn attach_references(&mut self, k: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, (x, _)) in self.pairs.iter().enumerate() {
            let refs = generator::sample_references_with(&self.spec, x, k, &mut rng)?;
            self.refs.insert(i, refs);
        }
        Ok(())
    }

    /// References of pair `i`, falling back to its own target.
    pub fn references(&self, i: usize) -> Vec<&TokenSeq> {
        match self.refs.get(&i) {
            Some(r) if !r.is_empty() => r.iter().collect(),
            _ => vec![&self.pairs[i].1],
        }
    }

    /// Same sources with the given targets (used for distilled corpora).
    pub fn with_targets(&self, targets: Vec<TokenSeq>) -> ParallelCorpus {
        assert_eq!(targets.len(), self.pairs.len());
        let pairs = self
            .pairs
            .iter()
            .zip(targets)
            .map(|((x, _), t)| (x.clone(), t))
            .collect();
        ParallelCorpus {
            pairs,
            ..self.clone()
        }
    }
}
