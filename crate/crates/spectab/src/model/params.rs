//! Named parameter tensors, initialization, AdamW, and checkpointing.
//!
//! Parameters are flat `f64` buffers with explicit shapes; the forward pass
//! views them as matrices. Checkpoints store one little-endian binary blob
//! plus a JSON manifest of (name, shape, offset) entries.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &self.data).expect("shape matches buffer")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of parameters; gradient buffers mirror the order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub params: Vec<Param>,
}

impl ParamSet {
    pub fn push_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.params.push(Param { name: name.into(), rows, cols, data });
    }

    pub fn push_normal<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) {
        use rand_distr::{Distribution, Normal};
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.params.push(Param { name: name.into(), rows, cols, data });
    }

    pub fn push_constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) {
        self.params.push(Param { name: name.into(), rows, cols, data: vec![value; rows * cols] });
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Zeroed gradient buffers matching the parameter shapes.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        for (p, s) in self.params.iter_mut().zip(snapshot.iter()) {
            p.data.copy_from_slice(s);
        }
    }
}

/// AdamW with decoupled weight decay.
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, param) in params.params.iter_mut().enumerate() {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..param.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.data[i] -= self.lr * self.weight_decay * param.data[i];
                param.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the binary blob, in f64 elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    /// Free-form metadata (model spec JSON, target statistics, ...).
    extra: serde_json::Value,
}

/// Writes `params` as `<path>` (binary f64 LE) + `<path>.manifest.json`.
pub fn save_checkpoint(params: &ParamSet, extra: serde_json::Value, path: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(params.params.len());
    let mut offset = 0usize;
    let mut blob: Vec<u8> = Vec::with_capacity(params.total_len() * 8);
    for p in &params.params {
        entries.push(ManifestEntry {
            name: p.name.clone(),
            rows: p.rows,
            cols: p.cols,
            offset,
        });
        for &x in &p.data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += p.len();
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&blob)?;
    file.flush()?;
    let manifest = Manifest { tensors: entries, extra };
    let mut manifest_path = path.as_os_str().to_os_string();
    manifest_path.push(".manifest.json");
    std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, serde_json::Value)> {
    let mut manifest_path = path.as_os_str().to_os_string();
    manifest_path.push(".manifest.json");
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let mut blob = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut blob)?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("binary blob length not a multiple of 8".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = ParamSet::default();
    for entry in &manifest.tensors {
        let len = entry.rows * entry.cols;
        let end = entry.offset + len;
        if end > values.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} extends past blob end",
                entry.name
            )));
        }
        params.params.push(Param {
            name: entry.name.clone(),
            rows: entry.rows,
            cols: entry.cols,
            data: values[entry.offset..end].to_vec(),
        });
    }
    Ok((params, manifest.extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut params = ParamSet::default();
        params.push_uniform("a.weight", 3, 4, 0.5, &mut rng);
        params.push_normal("b.pe", 2, 6, 0.02, &mut rng);
        params.push_constant("c.gamma", 1, 5, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&params, serde_json::json!({"note": 7}), &path).unwrap();
        let (back, extra) = load_checkpoint(&path).unwrap();
        assert_eq!(back.params.len(), 3);
        for (orig, loaded) in params.params.iter().zip(back.params.iter()) {
            assert_eq!(orig.name, loaded.name);
            assert_eq!(orig.rows, loaded.rows);
            assert_eq!(orig.data, loaded.data);
        }
        assert_eq!(extra["note"], 7);
    }

    #[test]
    fn adamw_decays_weights_without_gradient() {
        let mut params = ParamSet::default();
        params.push_constant("w", 1, 1, 1.0);
        let mut opt = AdamW::new(&params, 0.1, 0.5);
        let grads = vec![vec![0.0]];
        opt.step(&mut params, &grads);
        // Pure decay: 1 - lr*wd = 0.95 (no gradient signal).
        assert!((params.params[0].data[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn adamw_first_step_has_unit_scale() {
        let mut params = ParamSet::default();
        params.push_constant("w", 1, 1, 0.0);
        let mut opt = AdamW::new(&params, 0.01, 0.0);
        let grads = vec![vec![3.0]];
        opt.step(&mut params, &grads);
        // First Adam step moves by ~lr regardless of gradient magnitude.
        assert!((params.params[0].data[0] + 0.01).abs() < 1e-6);
    }
}
