use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NatError, Result};

/// One evaluation row. Entropic quantities are bits per target token; BLEU is in points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub config: String,
    pub seed: u64,
    pub step: usize,
    pub l_nat: f64,
    pub l_input: f64,
    pub l_target_hat: f64,
    pub l_mple: f64,
    pub bleu: f64,
    /// Estimated total correlation of the raw corpus, when measured.
    pub c_hat: Option<f64>,
}

impl MetricsRecord {
    pub fn new(
        config: &str,
        seed: u64,
        step: usize,
        l_nat: f64,
        l_input: f64,
        l_target_hat: f64,
        bleu: f64,
    ) -> Self {
        Self {
            config: config.to_string(),
            seed,
            step,
            l_nat,
            l_input,
            l_target_hat,
            l_mple: l_nat + l_input + l_target_hat,
            bleu,
            c_hat: None,
        }
    }
}

pub fn write_jsonl(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialise");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| NatError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| NatError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| NatError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)
            .map_err(|e| NatError::Invalid(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| NatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mple_is_the_sum_of_its_parts() {
        let r = MetricsRecord::new("kd", 1, 10, 0.7, 0.1, -0.15, 30.0);
        assert_eq!(r.l_mple, 0.7 + 0.1 + -0.15);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = std::env::temp_dir().join(format!("natlab-rec-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("m.jsonl");
        let mut r = MetricsRecord::new("raw", 3, 0, 1.0 / 3.0, 0.0, -0.1, 12.5);
        r.c_hat = Some(0.25);
        write_jsonl(&[r.clone()], &p).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), vec![r]);
        write_csv(&read_jsonl(&p).unwrap(), &dir.join("m.csv")).unwrap();
        fs::remove_dir_all(dir).unwrap();
    }
}
