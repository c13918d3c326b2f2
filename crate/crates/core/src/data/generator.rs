use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParallelCorpus, TokenSeq, Vocab, NUM_RESERVED};
use crate::error::{invalid, NatError, Result};

const PROB_TOL: f64 = 1e-9;

/// Explicit target modes of one source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    pub source: TokenSeq,
    pub modes: Vec<(TokenSeq, f64)>,
}

/// Target Markov chain plus the corruption that turns a target into its source.
/// Chain states are content tokens, indexed from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovSpec {
    pub start: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub min_len: usize,
    pub max_len: usize,
    pub replace_rate: f64,
    pub drop_rate: f64,
}

/// Parameters of [`GeneratorSpec::styles`].
#[derive(Clone, Debug, PartialEq)]
pub struct StyleSpec {
    pub sources: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub styles: usize,
    /// Base style weights, one per style, summing to 1.
    pub weights: Vec<f64>,
    /// Share of each source's weights drawn at random instead of from `weights`.
    pub jitter: f64,
    /// Odd-numbered styles swap adjacent target words.
    pub reorder: bool,
    /// Each target word also depends on the previous source word.
    pub context: bool,
    pub seed: u64,
}

impl StyleSpec {
    fn validate(&self, content: usize) -> Result<()> {
        if self.styles == 0 || self.weights.len() != self.styles {
            return invalid("style weights must have one entry per style");
        }
        check_distribution(&self.weights, "style weights")?;
        if !(0.0..=1.0).contains(&self.jitter) {
            return invalid("jitter must lie in [0,1]");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return invalid("style length range must satisfy 1 <= min <= max");
        }
        let distinct = (content as f64).powi(self.max_len as i32);
        if content == 0 || (self.sources as f64) > distinct / 2.0 {
            return invalid("too many sources for the vocabulary and lengths");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorKind {
    TwoMode { sources: Vec<ModeSet> },
    MarkovCorruption(MarkovSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub vocab: Vocab,
    pub kind: GeneratorKind,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return invalid(format!("{what}: empty distribution"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return invalid(format!("{what}: negative or non-finite probability"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return invalid(format!("{what}: probabilities sum to {s}, not 1"));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn two_mode(vocab: Vocab, sources: Vec<ModeSet>) -> Result<Self> {
        let spec = Self {
            vocab,
            kind: GeneratorKind::TwoMode { sources },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn markov(vocab: Vocab, chain: MarkovSpec) -> Result<Self> {
        let spec = Self {
            vocab,
            kind: GeneratorKind::MarkovCorruption(chain),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The classic toy: one source, targets `A B` or `C D` with probability 1/2 each.
    pub fn two_mode_toy() -> Self {
        let vocab = Vocab::new(&["A", "B", "C", "D", "S"]).expect("valid symbols");
        let t = |s: &str| vocab.encode(s).unwrap();
        let set = ModeSet {
            source: t("S"),
            modes: vec![(t("A B"), 0.5), (t("C D"), 0.5)],
        };
        Self::two_mode(vocab.clone(), vec![set]).expect("valid toy")
    }

    /// Many-source multi-mode corpus: every source has `styles` whole-sentence
    /// translations, each a contextual word mapping of the source.
    pub fn styles(content: usize, spec: &StyleSpec) -> Result<Self> {
        spec.validate(content)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        // maps[s][prev][cur], `prev == content` marks the sentence start.
        let maps: Vec<Vec<Vec<usize>>> = (0..spec.styles)
            .map(|_| {
                (0..=content)
                    .map(|_| (0..content).map(|_| rng.gen_range(0..content)).collect())
                    .collect()
            })
            .collect();
        let mut sets = Vec::with_capacity(spec.sources);
        let mut seen = std::collections::HashSet::new();
        while sets.len() < spec.sources {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let x: Vec<usize> = (0..len).map(|_| rng.gen_range(0..content)).collect();
            if !seen.insert(x.clone()) {
                continue;
            }
            let noise: Vec<f64> = (0..spec.styles)
                .map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln())
                .collect();
            let nz: f64 = noise.iter().sum();
            let mut modes: Vec<(TokenSeq, f64)> = Vec::with_capacity(spec.styles);
            for (k, map) in maps.iter().enumerate() {
                let mut y: Vec<usize> = (0..len)
                    .map(|i| {
                        map[if i == 0 || !spec.context {
                            content
                        } else {
                            x[i - 1]
                        }][x[i]]
                    })
                    .collect();
                if spec.reorder && k % 2 == 1 {
                    for pair in y.chunks_mut(2) {
                        pair.reverse();
                    }
                }
                let w = (1.0 - spec.jitter) * spec.weights[k] + spec.jitter * noise[k] / nz;
                modes.push((
                    TokenSeq(y.into_iter().map(|t| t + NUM_RESERVED).collect()),
                    w,
                ));
            }
            sets.push(ModeSet {
                source: TokenSeq(x.into_iter().map(|t| t + NUM_RESERVED).collect()),
                modes,
            });
        }
        Self::two_mode(Vocab::with_content_size(content), sets)
    }

    pub fn validate(&self) -> Result<()> {
        let in_vocab = |s: &TokenSeq| {
            s.iter()
                .all(|&t| t >= NUM_RESERVED && t < self.vocab.size())
        };
        match &self.kind {
            GeneratorKind::TwoMode { sources } => {
                let mut seen = std::collections::HashSet::new();
                for set in sources {
                    if !in_vocab(&set.source) || set.modes.iter().any(|(m, _)| !in_vocab(m)) {
                        return invalid("mode sequence uses ids outside the content vocabulary");
                    }
                    if !seen.insert(&set.source) {
                        return invalid("duplicate source in mode list");
                    }
                    let probs: Vec<f64> = set.modes.iter().map(|m| m.1).collect();
                    check_distribution(&probs, "mode list")?;
                }
                Ok(())
            }
            GeneratorKind::MarkovCorruption(m) => {
                let c = self.vocab.content_size();
                if m.start.len() != c || m.transitions.len() != c {
                    return invalid(format!("markov chain must have {c} states"));
                }
                check_distribution(&m.start, "chain start")?;
                for (i, row) in m.transitions.iter().enumerate() {
                    if row.len() != c {
                        return invalid(format!("transition row {i} has wrong width"));
                    }
                    check_distribution(row, &format!("transition row {i}"))?;
                }
                if m.min_len == 0 || m.min_len > m.max_len {
                    return invalid("chain length range must satisfy 1 <= min <= max");
                }
                for (name, r) in [("replace_rate", m.replace_rate), ("drop_rate", m.drop_rate)] {
                    if !(0.0..=1.0).contains(&r) {
                        return invalid(format!("{name} must lie in [0,1]"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Exact conditional for a two-mode spec.
    pub fn enumerable(&self) -> Result<EnumerableCond> {
        match &self.kind {
            GeneratorKind::TwoMode { sources } => EnumerableCond::new(
                sources
                    .iter()
                    .map(|s| CondEntry {
                        source: s.source.clone(),
                        dist: s.modes.clone(),
                    })
                    .collect(),
            ),
            GeneratorKind::MarkovCorruption(_) => {
                invalid("markov corruption conditionals are not enumerated")
            }
        }
    }
}

impl MarkovSpec {
    /// Sparse random chain: each state moves to `branching` successors with
    /// Dirichlet-like random weights.
    pub fn random(
        states: usize,
        branching: usize,
        len: (usize, usize),
        replace_rate: f64,
        drop_rate: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branching = branching.clamp(1, states);
        let transitions = (0..states)
            .map(|_| {
                let mut row = vec![0.0; states];
                let mut picked = 0;
                while picked < branching {
                    let j = rng.gen_range(0..states);
                    if row[j] == 0.0 {
                        row[j] = -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln();
                        picked += 1;
                    }
                }
                let s: f64 = row.iter().sum();
                row.iter().map(|v| v / s).collect()
            })
            .collect();
        Self {
            start: vec![1.0 / states as f64; states],
            transitions,
            min_len: len.0,
            max_len: len.1,
            replace_rate,
            drop_rate,
        }
    }

    fn emission(&self, x: usize, y: usize, states: usize) -> f64 {
        let r = self.replace_rate;
        r / states as f64 + if x == y { 1.0 - r } else { 0.0 }
    }
}

/// One source's exactly enumerated target distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct CondEntry {
    pub source: TokenSeq,
    pub dist: Vec<(TokenSeq, f64)>,
}

/// Exactly enumerable P(Y|X); sources are weighted uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumerableCond {
    pub entries: Vec<CondEntry>,
}

impl EnumerableCond {
    /// Merges repeated sequences and checks normalisation.
    pub fn new(entries: Vec<CondEntry>) -> Result<Self> {
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let mut merged: BTreeMap<TokenSeq, f64> = BTreeMap::new();
            for (y, p) in e.dist {
                *merged.entry(y).or_insert(0.0) += p;
            }
            let probs: Vec<f64> = merged.values().copied().collect();
            check_distribution(&probs, "conditional distribution")?;
            out.push(CondEntry {
                source: e.source,
                dist: merged.into_iter().filter(|(_, p)| *p > 0.0).collect(),
            });
        }
        Ok(Self { entries: out })
    }

    pub fn get(&self, source: &TokenSeq) -> Option<&CondEntry> {
        self.entries.iter().find(|e| &e.source == source)
    }

    pub fn support_size(&self) -> usize {
        self.entries.iter().map(|e| e.dist.len()).sum()
    }

    /// Random toy: `sources` one-token sources, each with up to `max_modes`
    /// distinct targets of length 1..=`max_len` over `content` content tokens.
    pub fn random<R: Rng>(
        rng: &mut R,
        sources: usize,
        max_len: usize,
        content: usize,
        max_modes: usize,
    ) -> Result<Self> {
        if sources == 0 || max_len == 0 || content == 0 || max_modes == 0 {
            return invalid("random toy needs positive sizes");
        }
        if sources > content {
            return invalid("random toy needs a distinct content token per source");
        }
        let mut entries = Vec::with_capacity(sources);
        for s in 0..sources {
            let modes = rng.gen_range(1..=max_modes);
            let mut seen: BTreeMap<TokenSeq, f64> = BTreeMap::new();
            for _ in 0..modes {
                let len = rng.gen_range(1..=max_len);
                let y = TokenSeq(
                    (0..len)
                        .map(|_| NUM_RESERVED + rng.gen_range(0..content))
                        .collect(),
                );
                *seen.entry(y).or_insert(0.0) += rng.gen_range(0.05..1.0);
            }
            let z: f64 = seen.values().sum();
            entries.push(CondEntry {
                source: TokenSeq(vec![NUM_RESERVED + s]),
                dist: seen.into_iter().map(|(y, w)| (y, w / z)).collect(),
            });
        }
        Self::new(entries)
    }
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding leftovers land on the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Pairs drawn i.i.d.: a uniformly chosen source, then one of its modes.
pub fn gen_two_mode(
    spec: &GeneratorSpec,
    n_pairs: usize,
    seed: u64,
) -> Result<(ParallelCorpus, EnumerableCond)> {
    spec.validate()?;
    let GeneratorKind::TwoMode { sources } = &spec.kind else {
        return invalid("gen_two_mode needs a two_mode spec");
    };
    if sources.is_empty() && n_pairs > 0 {
        return invalid("two_mode spec has no sources");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = ParallelCorpus::new(spec.clone(), seed);
    for _ in 0..n_pairs {
        let set = &sources[rng.gen_range(0..sources.len())];
        let probs: Vec<f64> = set.modes.iter().map(|m| m.1).collect();
        let y = set.modes[sample_index(&probs, &mut rng)].0.clone();
        corpus.pairs.push((set.source.clone(), y));
    }
    Ok((corpus, spec.enumerable()?))
}

fn sample_chain<R: Rng>(m: &MarkovSpec, rng: &mut R) -> Vec<usize> {
    let len = rng.gen_range(m.min_len..=m.max_len);
    let mut y = Vec::with_capacity(len);
    let mut s = sample_index(&m.start, rng);
    y.push(s);
    while y.len() < len {
        s = sample_index(&m.transitions[s], rng);
        y.push(s);
    }
    y
}

/// Target from the chain; source is the target with random replacements and drops.
pub fn gen_synthetic(spec: &GeneratorSpec, n_pairs: usize, seed: u64) -> Result<ParallelCorpus> {
    spec.validate()?;
    let GeneratorKind::MarkovCorruption(m) = &spec.kind else {
        return invalid("gen_synthetic needs a markov_corruption spec");
    };
    let states = spec.vocab.content_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = ParallelCorpus::new(spec.clone(), seed);
    for _ in 0..n_pairs {
        let y = sample_chain(m, &mut rng);
        let mut x = Vec::with_capacity(y.len());
        for &t in &y {
            let tok = if rng.gen::<f64>() < m.replace_rate {
                rng.gen_range(0..states)
            } else {
                t
            };
            if rng.gen::<f64>() >= m.drop_rate {
                x.push(tok);
            }
        }
        let ids = |v: Vec<usize>| TokenSeq(v.into_iter().map(|s| s + NUM_RESERVED).collect());
        corpus.pairs.push((ids(x), ids(y)));
    }
    Ok(corpus)
}

/// `k` i.i.d. draws from the generator's true conditional given `x`.
pub fn sample_references(
    spec: &GeneratorSpec,
    x: &TokenSeq,
    k: usize,
    seed: u64,
) -> Result<Vec<TokenSeq>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_references_with(spec, x, k, &mut rng)
}

pub(crate) fn sample_references_with<R: Rng>(
    spec: &GeneratorSpec,
    x: &TokenSeq,
    k: usize,
    rng: &mut R,
) -> Result<Vec<TokenSeq>> {
    match &spec.kind {
        GeneratorKind::TwoMode { sources } => {
            let set = sources
                .iter()
                .find(|s| &s.source == x)
                .ok_or_else(|| NatError::Invalid("source not produced by this generator".into()))?;
            let probs: Vec<f64> = set.modes.iter().map(|m| m.1).collect();
            Ok((0..k)
                .map(|_| set.modes[sample_index(&probs, rng)].0.clone())
                .collect())
        }
        GeneratorKind::MarkovCorruption(m) => {
            let posterior = ChainPosterior::new(m, spec.vocab.content_size(), x)?;
            Ok((0..k).map(|_| posterior.sample(rng)).collect())
        }
    }
}

/// Exact posterior over clean targets given a corrupted source, by forward
/// filtering over (state, source tokens emitted) and backward sampling.
struct ChainPosterior<'a> {
    chain: &'a MarkovSpec,
    states: usize,
    x: Vec<usize>,
    /// `alpha[len][j]` is the forward table after target position `j`,
    /// flattened as `state * (n + 1) + emitted`.
    alpha: Vec<Vec<Vec<f64>>>,
    length_weight: Vec<f64>,
}

impl<'a> ChainPosterior<'a> {
    fn new(chain: &'a MarkovSpec, states: usize, x: &TokenSeq) -> Result<Self> {
        if x.iter()
            .any(|&t| t < NUM_RESERVED || t - NUM_RESERVED >= states)
        {
            return invalid("source uses ids outside the content vocabulary");
        }
        let x: Vec<usize> = x.iter().map(|&t| t - NUM_RESERVED).collect();
        let n = x.len();
        let w = n + 1;
        let d = chain.drop_rate;
        let mut table = vec![0.0; states * w];
        for v in 0..states {
            table[v * w] = chain.start[v] * d;
            if n > 0 {
                table[v * w + 1] = chain.start[v] * (1.0 - d) * chain.emission(x[0], v, states);
            }
        }
        let mut columns = vec![table];
        let mut alpha = vec![Vec::new(); chain.max_len + 1];
        let mut length_weight = vec![0.0; chain.max_len + 1];
        for len in 1..=chain.max_len {
            if len > 1 {
                let prev = columns.last().unwrap();
                let mut next = vec![0.0; states * w];
                for v in 0..states {
                    for k in 0..w {
                        let mut into = 0.0;
                        for u in 0..states {
                            let t = chain.transitions[u][v];
                            if t == 0.0 {
                                continue;
                            }
                            let mut a = prev[u * w + k] * d;
                            if k > 0 {
                                a += prev[u * w + k - 1]
                                    * (1.0 - d)
                                    * chain.emission(x[k - 1], v, states);
                            }
                            into += t * a;
                        }
                        next[v * w + k] = into;
                    }
                }
                columns.push(next);
            }
            if len >= chain.min_len {
                let last = columns.last().unwrap();
                length_weight[len] = (0..states).map(|v| last[v * w + n]).sum();
                alpha[len] = columns.clone();
            }
        }
        if length_weight.iter().all(|&p| p == 0.0) {
            return invalid("source has zero probability under the generator");
        }
        Ok(Self {
            chain,
            states,
            x,
            alpha,
            length_weight,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> TokenSeq {
        let (states, n, d) = (self.states, self.x.len(), self.chain.drop_rate);
        let w = n + 1;
        let len = sample_index(&self.length_weight, rng);
        let cols = &self.alpha[len];
        let last: Vec<f64> = (0..states).map(|v| cols[len - 1][v * w + n]).collect();
        let mut v = sample_index(&last, rng);
        let mut k = n;
        let mut y = vec![v; len];
        for j in (1..len).rev() {
            // Candidates: (previous state, emitted at j?) weighted by their share of alpha[j][v,k].
            let prev = &cols[j - 1];
            let mut weights = Vec::with_capacity(2 * states);
            for u in 0..states {
                let t = self.chain.transitions[u][v];
                weights.push(t * prev[u * w + k] * d);
                let keep = if k > 0 {
                    t * prev[u * w + k - 1]
                        * (1.0 - d)
                        * self.chain.emission(self.x[k - 1], v, states)
                } else {
                    0.0
                };
                weights.push(keep);
            }
            let c = sample_index(&weights, rng);
            v = c / 2;
            if c % 2 == 1 {
                k -= 1;
            }
            y[j - 1] = v;
        }
        TokenSeq(y.into_iter().map(|s| s + NUM_RESERVED).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_mode_list_repeats_its_target() {
        let v = Vocab::with_content_size(3);
        let t = |s: &str| v.encode(s).unwrap();
        let spec = GeneratorSpec::two_mode(
            v.clone(),
            vec![ModeSet {
                source: t("C"),
                modes: vec![(t("A B"), 1.0)],
            }],
        )
        .unwrap();
        let (c, _) = gen_two_mode(&spec, 50, 1).unwrap();
        assert!(c.pairs.iter().all(|(_, y)| *y == t("A B")));
        let refs = sample_references(&spec, &t("C"), 3, 0).unwrap();
        assert_eq!(refs, vec![t("A B"); 3]);
    }

    #[test]
    fn mode_probabilities_must_sum_to_one() {
        let v = Vocab::with_content_size(3);
        let t = |s: &str| v.encode(s).unwrap();
        let bad = GeneratorSpec::two_mode(
            v.clone(),
            vec![ModeSet {
                source: t("C"),
                modes: vec![(t("A"), 0.5), (t("B"), 0.4)],
            }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn unknown_source_is_rejected() {
        let spec = GeneratorSpec::two_mode_toy();
        let x = spec.vocab.encode("A").unwrap();
        assert!(sample_references(&spec, &x, 2, 0).is_err());
    }

    #[test]
    fn uncorrupted_source_equals_target() {
        let v = Vocab::with_content_size(6);
        let spec = GeneratorSpec::markov(v, MarkovSpec::random(6, 2, (2, 6), 0.0, 0.0, 3)).unwrap();
        let c = gen_synthetic(&spec, 200, 5).unwrap();
        assert!(c.pairs.iter().all(|(x, y)| x == y));
    }

    #[test]
    fn clean_source_posterior_is_the_source() {
        let v = Vocab::with_content_size(5);
        let spec = GeneratorSpec::markov(v, MarkovSpec::random(5, 2, (3, 5), 0.0, 0.0, 9)).unwrap();
        let c = gen_synthetic(&spec, 20, 1).unwrap();
        for (x, _) in &c.pairs {
            let refs = sample_references(&spec, x, 4, 2).unwrap();
            assert!(refs.iter().all(|r| r == x));
        }
    }

    /// Brute-force posterior for a tiny chain against the sampler's frequencies.
    #[test]
    fn chain_posterior_matches_enumeration() {
        let v = Vocab::with_content_size(3);
        let chain = MarkovSpec::random(3, 2, (2, 3), 0.5, 0.25, 4);
        let spec = GeneratorSpec::markov(v, chain.clone()).unwrap();
        let x = TokenSeq(vec![NUM_RESERVED, NUM_RESERVED + 2]);
        // enumerate all targets of length 2..=3 and all keep patterns
        let mut exact: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for len in 2..=3usize {
            for code in 0..3usize.pow(len as u32) {
                let y: Vec<usize> = (0..len).map(|i| code / 3usize.pow(i as u32) % 3).collect();
                let mut py = 0.5 * chain.start[y[0]];
                for i in 1..len {
                    py *= chain.transitions[y[i - 1]][y[i]];
                }
                let mut px = 0.0;
                for keep in 0..(1usize << len) {
                    let kept: Vec<usize> = (0..len).filter(|i| keep >> i & 1 == 1).collect();
                    if kept.len() != 2 {
                        continue;
                    }
                    let mut p = 1.0;
                    for i in 0..len {
                        p *= if keep >> i & 1 == 1 { 0.75 } else { 0.25 };
                    }
                    for (k, &i) in kept.iter().enumerate() {
                        p *= chain.emission(x[k] - NUM_RESERVED, y[i], 3);
                    }
                    px += p;
                }
                if py * px > 0.0 {
                    exact.insert(y.iter().map(|s| s + NUM_RESERVED).collect(), py * px);
                }
            }
        }
        let z: f64 = exact.values().sum();
        let draws = 40_000;
        let refs = sample_references(&spec, &x, draws, 11).unwrap();
        let mut freq: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for r in refs {
            *freq.entry(r.0).or_insert(0.0) += 1.0 / draws as f64;
        }
        for (y, p) in &exact {
            let f = freq.get(y).copied().unwrap_or(0.0);
            assert!(
                (f - p / z).abs() < 0.01,
                "{y:?}: sampled {f} exact {}",
                p / z
            );
        }
        assert!(freq.keys().all(|y| exact.contains_key(y)));
    }
}
