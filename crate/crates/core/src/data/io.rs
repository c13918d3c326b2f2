//! Corpus text format.
//!
//! ```text
//! #! natlab-corpus = 1
//! #! seed = 7
//! #! vocab = A B C D S
//! #! kind = two_mode
//! #! source = S
//! #! mode = A B @ 0.5
//! #! mode = C D @ 0.5
//! S<TAB>A B
//! ```
//!
//! Markov corpora use `kind = markov_corruption` followed by `length = MIN MAX`,
//! `replace_rate`, `drop_rate`, `start = p...` and one `transition = p...` line per
//! state. `note.KEY = VALUE` lines carry provenance. Extra references live in
//! `<path>.refs` as `INDEX<TAB>tokens` lines, in order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{GeneratorKind, GeneratorSpec, MarkovSpec, ModeSet, ParallelCorpus, TokenSeq, Vocab};
use crate::error::{NatError, Result};

const MAGIC: &str = "natlab-corpus";

fn refs_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".refs");
    PathBuf::from(s)
}

fn join_f64(v: &[f64]) -> String {
    v.iter()
        .map(|p| format!("{p:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn save_corpus(corpus: &ParallelCorpus, path: &Path) -> Result<()> {
    let vocab = corpus.vocab();
    let mut out = String::new();
    let mut header = |k: &str, v: &str| {
        out.push_str("#! ");
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    };
    header(MAGIC, "1");
    header("seed", &corpus.seed.to_string());
    header("vocab", &vocab.content_symbols().join(" "));
    match &corpus.spec.kind {
        GeneratorKind::TwoMode { sources } => {
            header("kind", "two_mode");
            for set in sources {
                header("source", &vocab.decode(&set.source));
                for (m, p) in &set.modes {
                    header("mode", &format!("{} @ {p:?}", vocab.decode(m)));
                }
            }
        }
        GeneratorKind::MarkovCorruption(m) => {
            header("kind", "markov_corruption");
            header("length", &format!("{} {}", m.min_len, m.max_len));
            header("replace_rate", &format!("{:?}", m.replace_rate));
            header("drop_rate", &format!("{:?}", m.drop_rate));
            header("start", &join_f64(&m.start));
            for row in &m.transitions {
                header("transition", &join_f64(row));
            }
        }
    }
    for (k, v) in &corpus.notes {
        header(&format!("note.{k}"), v);
    }
    for (x, y) in &corpus.pairs {
        out.push_str(&vocab.decode(x));
        out.push('\t');
        out.push_str(&vocab.decode(y));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| NatError::io(path, e))?;

    let rp = refs_path(path);
    if corpus.refs.is_empty() {
        if rp.exists() {
            fs::remove_file(&rp).map_err(|e| NatError::io(&rp, e))?;
        }
        return Ok(());
    }
    let mut refs = String::new();
    for (i, list) in &corpus.refs {
        for r in list {
            refs.push_str(&format!("{i}\t{}\n", vocab.decode(r)));
        }
    }
    fs::write(&rp, refs).map_err(|e| NatError::io(&rp, e))
}

struct HeaderParser<'a> {
    path: &'a Path,
}

impl HeaderParser<'_> {
    fn err<T>(&self, line: usize, msg: impl Into<String>) -> Result<T> {
        Err(NatError::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        })
    }

    fn f64s(&self, line: usize, v: &str) -> Result<Vec<f64>> {
        v.split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .or_else(|_| self.err(line, format!("bad number list {v:?}")))
    }

    fn seq(&self, vocab: Option<&Vocab>, line: usize, v: &str) -> Result<TokenSeq> {
        let Some(vocab) = vocab else {
            return self.err(line, "token sequence before vocab line");
        };
        vocab.encode(v).or_else(|e| self.err(line, e.to_string()))
    }
}

pub fn load_corpus(path: &Path) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
    let p = HeaderParser { path };
    let mut seed = None;
    let mut vocab: Option<Vocab> = None;
    let mut kind_name: Option<String> = None;
    let mut sources: Vec<ModeSet> = Vec::new();
    let mut chain = MarkovSpec {
        start: Vec::new(),
        transitions: Vec::new(),
        min_len: 0,
        max_len: 0,
        replace_rate: 0.0,
        drop_rate: 0.0,
    };
    let mut notes = BTreeMap::new();
    let mut raw_pairs = Vec::new();
    let mut magic = false;

    for (idx, line) in text.lines().enumerate() {
        let ln = idx + 1;
        if let Some(rest) = line.strip_prefix("#!") {
            let Some((k, v)) = rest.split_once('=') else {
                return p.err(ln, "header line without '='");
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                MAGIC => {
                    if v != "1" {
                        return p.err(ln, format!("unsupported format version {v}"));
                    }
                    magic = true;
                }
                "seed" => seed = Some(v.parse::<u64>().or_else(|_| p.err(ln, "bad seed"))?),
                "vocab" => {
                    let syms: Vec<&str> = v.split_whitespace().collect();
                    vocab = Some(Vocab::new(&syms).or_else(|e| p.err(ln, e.to_string()))?);
                }
                "kind" => kind_name = Some(v.to_string()),
                "source" => sources.push(ModeSet {
                    source: p.seq(vocab.as_ref(), ln, v)?,
                    modes: Vec::new(),
                }),
                "mode" => {
                    let Some((s, prob)) = v.rsplit_once('@') else {
                        return p.err(ln, "mode line needs 'tokens @ prob'");
                    };
                    let prob = prob
                        .trim()
                        .parse::<f64>()
                        .or_else(|_| p.err(ln, "bad mode probability"))?;
                    let seq = p.seq(vocab.as_ref(), ln, s)?;
                    match sources.last_mut() {
                        Some(set) => set.modes.push((seq, prob)),
                        None => return p.err(ln, "mode line before any source line"),
                    }
                }
                "length" => {
                    let v: Vec<usize> = v
                        .split_whitespace()
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()
                        .or_else(|_| p.err(ln, "bad length range"))?;
                    if v.len() != 2 {
                        return p.err(ln, "length needs MIN MAX");
                    }
                    chain.min_len = v[0];
                    chain.max_len = v[1];
                }
                "replace_rate" => {
                    chain.replace_rate = p.f64s(ln, v)?.first().copied().unwrap_or(-1.0)
                }
                "drop_rate" => chain.drop_rate = p.f64s(ln, v)?.first().copied().unwrap_or(-1.0),
                "start" => chain.start = p.f64s(ln, v)?,
                "transition" => chain.transitions.push(p.f64s(ln, v)?),
                _ => match k.strip_prefix("note.") {
                    Some(key) => {
                        notes.insert(key.to_string(), v.to_string());
                    }
                    None => return p.err(ln, format!("unknown header key {k:?}")),
                },
            }
            continue;
        }
        let Some((x, y)) = line.split_once('\t') else {
            return p.err(ln, "pair line needs a tab between source and target");
        };
        raw_pairs.push((ln, x.to_string(), y.to_string()));
    }

    if !magic {
        return p.err(1, "missing corpus header");
    }
    let Some(vocab) = vocab else {
        return p.err(1, "missing vocab header");
    };
    let kind = match kind_name.as_deref() {
        Some("two_mode") => GeneratorKind::TwoMode { sources },
        Some("markov_corruption") => GeneratorKind::MarkovCorruption(chain),
        Some(other) => return p.err(1, format!("unknown generator kind {other:?}")),
        None => return p.err(1, "missing kind header"),
    };
    let spec = GeneratorSpec {
        vocab: vocab.clone(),
        kind,
    };
    spec.validate().or_else(|e| p.err(1, e.to_string()))?;

    let mut corpus = ParallelCorpus::new(spec, seed.unwrap_or(0));
    corpus.notes = notes;
    for (ln, x, y) in raw_pairs {
        corpus
            .pairs
            .push((p.seq(Some(&vocab), ln, &x)?, p.seq(Some(&vocab), ln, &y)?));
    }

    let rp = refs_path(path);
    if rp.exists() {
        let text = fs::read_to_string(&rp).map_err(|e| NatError::io(&rp, e))?;
        let rparser = HeaderParser { path: &rp };
        for (idx, line) in text.lines().enumerate() {
            let ln = idx + 1;
            let Some((i, toks)) = line.split_once('\t') else {
                return rparser.err(ln, "reference line needs INDEX<TAB>tokens");
            };
            let i: usize = i
                .trim()
                .parse()
                .or_else(|_| rparser.err(ln, "bad pair index"))?;
            if i >= corpus.pairs.len() {
                return rparser.err(ln, format!("pair index {i} out of range"));
            }
            let seq = rparser.seq(Some(&vocab), ln, toks)?;
            corpus.refs.entry(i).or_default().push(seq);
        }
    }
    Ok(corpus)
}

/// One space-separated token line per sequence (decoder output format).
pub fn write_token_lines(vocab: &Vocab, seqs: &[TokenSeq], path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&vocab.decode(s));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| NatError::io(path, e))
}

pub fn read_token_lines(vocab: &Vocab, path: &Path) -> Result<Vec<TokenSeq>> {
    let text = fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
    let p = HeaderParser { path };
    text.lines()
        .enumerate()
        .map(|(i, l)| p.seq(Some(vocab), i + 1, l))
        .collect()
}
