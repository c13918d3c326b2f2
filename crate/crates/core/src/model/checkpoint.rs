//! Checkpoint directories: `manifest.txt` with `key = value` lines, plus one
//! little-endian f64 file per parameter (`<name>.bin`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use natlab_compute::{ParamStore, Tensor};

use super::at::AtModel;
use super::nat::NatModel;
use super::transformer::ModelDims;
use crate::error::{invalid, NatError, Result};

const MANIFEST: &str = "manifest.txt";

fn write_store(dir: &Path, header: &[(&str, String)], params: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NatError::io(dir, e))?;
    let mut manifest = String::new();
    for (k, v) in header {
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("param.{name} = {}\n", shape.join(",")));
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, bytes).map_err(|e| NatError::io(&path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| NatError::io(&path, e))
}

struct Loaded {
    header: BTreeMap<String, String>,
    params: ParamStore,
}

fn read_store(dir: &Path) -> Result<Loaded> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| NatError::io(&path, e))?;
    let mut header = BTreeMap::new();
    let mut params = ParamStore::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: &str| NatError::Parse {
            path: path.clone(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected key = value"))?;
        let (k, v) = (k.trim(), v.trim());
        if let Some(name) = k.strip_prefix("param.") {
            let shape: Vec<usize> = v
                .split(',')
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err("bad shape"))?;
            let bin = dir.join(format!("{name}.bin"));
            let bytes = fs::read(&bin).map_err(|e| NatError::io(&bin, e))?;
            if bytes.len() % 8 != 0 {
                return Err(parse_err(
                    "parameter file is not a whole number of f64 values",
                ));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|_| parse_err("parameter file does not match its shape"))?;
            params.insert(name, t);
        } else {
            header.insert(k.to_string(), v.to_string());
        }
    }
    Ok(Loaded { header, params })
}

fn get<T: std::str::FromStr>(h: &BTreeMap<String, String>, key: &str) -> Result<T> {
    h.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| NatError::Config(format!("checkpoint manifest lacks a valid `{key}`")))
}

fn dims_header(d: &ModelDims) -> Vec<(&'static str, String)> {
    vec![
        ("vocab", d.vocab.to_string()),
        ("d_model", d.d_model.to_string()),
        ("d_ff", d.d_ff.to_string()),
        ("heads", d.heads.to_string()),
        ("enc_layers", d.enc_layers.to_string()),
        ("dec_layers", d.dec_layers.to_string()),
        ("max_len", d.max_len.to_string()),
    ]
}

fn read_dims(h: &BTreeMap<String, String>) -> Result<ModelDims> {
    let d = ModelDims {
        vocab: get(h, "vocab")?,
        d_model: get(h, "d_model")?,
        d_ff: get(h, "d_ff")?,
        heads: get(h, "heads")?,
        enc_layers: get(h, "enc_layers")?,
        dec_layers: get(h, "dec_layers")?,
        max_len: get(h, "max_len")?,
    };
    d.validate()?;
    Ok(d)
}

/// Loaded parameters must match a freshly built model's names and shapes.
fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    if expected.len() != got.len() {
        return invalid("checkpoint parameter set does not match the model layout");
    }
    for (name, t) in expected.iter() {
        match got.by_name(name) {
            Some(g) if g.shape() == t.shape() => {}
            _ => return invalid(format!("checkpoint parameter {name} missing or misshapen")),
        }
    }
    Ok(())
}

fn reorder(expected: &ParamStore, got: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, _) in expected.iter() {
        out.insert(name, got.by_name(name).unwrap().clone());
    }
    out
}

impl AtModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut h = vec![("kind", "at".to_string())];
        h.extend(dims_header(&self.dims));
        h.push(("seed", self.seed.to_string()));
        h.push(("step", self.step.to_string()));
        write_store(dir, &h, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let l = read_store(dir)?;
        if l.header.get("kind").map(String::as_str) != Some("at") {
            return Err(NatError::Config(format!(
                "{} is not an autoregressive checkpoint",
                dir.display()
            )));
        }
        let dims = read_dims(&l.header)?;
        let mut m = AtModel::new(dims, get(&l.header, "seed")?)?;
        check_layout(&m.params, &l.params)?;
        m.params = reorder(&m.params, &l.params);
        m.step = get(&l.header, "step")?;
        Ok(m)
    }
}

impl NatModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut h = vec![("kind", "nat".to_string())];
        h.extend(dims_header(&self.dims));
        h.push(("copy", self.copy.to_string()));
        h.push(("seed", self.seed.to_string()));
        h.push(("step", self.step.to_string()));
        write_store(dir, &h, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let l = read_store(dir)?;
        if l.header.get("kind").map(String::as_str) != Some("nat") {
            return Err(NatError::Config(format!(
                "{} is not a parallel-decoder checkpoint",
                dir.display()
            )));
        }
        let dims = read_dims(&l.header)?;
        let mut m = NatModel::new(dims, get(&l.header, "copy")?, get(&l.header, "seed")?)?;
        check_layout(&m.params, &l.params)?;
        m.params = reorder(&m.params, &l.params);
        m.step = get(&l.header, "step")?;
        Ok(m)
    }
}

/// Kind recorded in a checkpoint manifest (`at` or `nat`).
pub fn checkpoint_kind(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| NatError::io(&path, e))?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "kind")
        .map(|(_, v)| v.trim().to_string())
        .ok_or_else(|| NatError::Config(format!("{} has no kind", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("natlab-ckpt-{}", std::process::id()));
        let mut m = NatModel::new(ModelDims::small(20), true, 5).unwrap();
        m.step = 42;
        m.params.get_mut(m.params.id("out.b").unwrap()).data_mut()[3] = f64::MIN_POSITIVE / 3.0;
        m.save(&dir).unwrap();
        let back = NatModel::load(&dir).unwrap();
        assert_eq!(back.step, 42);
        assert!(back.copy);
        for ((n1, a), (n2, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(checkpoint_kind(&dir).unwrap(), "nat");
        assert!(AtModel::load(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
