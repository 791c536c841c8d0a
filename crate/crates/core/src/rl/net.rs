use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io;

/// Fully connected `in -> H -> H -> out` network with ReLU hidden layers.
/// Parameters live in one flat vector: `W1, b1, W2, b2, W3, b3`, weights
/// row-major with one row per output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub dims: [usize; 4],
    pub params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    x: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

fn layer_len(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *slot = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl QNet {
    pub fn param_count(dims: [usize; 4]) -> usize {
        layer_len(dims[0], dims[1]) + layer_len(dims[1], dims[2]) + layer_len(dims[2], dims[3])
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            params: vec![0.0; Self::param_count(dims)],
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let mut offset = 0;
        for l in 0..3 {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / n_in as f64).sqrt();
            for w in &mut net.params[offset..offset + n_in * n_out] {
                *w = rng.random_range(-bound..bound);
            }
            offset += layer_len(n_in, n_out);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[3]
    }

    /// `(W, b)` slices of layer `l`.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let mut offset = 0;
        for k in 0..l {
            offset += layer_len(self.dims[k], self.dims[k + 1]);
        }
        let nw = self.dims[l] * self.dims[l + 1];
        (
            &self.params[offset..offset + nw],
            &self.params[offset + nw..offset + nw + self.dims[l + 1]],
        )
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| layer_len(self.dims[k], self.dims[k + 1])).sum()
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        assert_eq!(x.len(), self.dims[0], "input has the wrong width");
        let [_, h1n, h2n, out_n] = self.dims;
        let mut z1 = vec![0.0; h1n];
        let (w, b) = self.layer(0);
        affine(w, b, x, &mut z1);
        let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let mut z2 = vec![0.0; h2n];
        let (w, b) = self.layer(1);
        affine(w, b, &h1, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
        let mut q = vec![0.0; out_n];
        let (w, b) = self.layer(2);
        affine(w, b, &h2, &mut q);
        (
            q,
            Cache {
                x: x.to_vec(),
                z1,
                h1,
                z2,
                h2,
            },
        )
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    /// Gradient of `Σ_j dq[j] · q_j` with respect to the parameters.
    pub fn backward(&self, cache: &Cache, dq: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let [n0, n1, n2, n3] = self.dims;
        // Layer 3.
        let off3 = self.layer_offset(2);
        let (w3, _) = self.layer(2);
        for o in 0..n3 {
            for i in 0..n2 {
                grad[off3 + o * n2 + i] = dq[o] * cache.h2[i];
            }
            grad[off3 + n3 * n2 + o] = dq[o];
        }
        let mut dz2 = vec![0.0; n2];
        for (i, d) in dz2.iter_mut().enumerate() {
            if cache.z2[i] > 0.0 {
                *d = (0..n3).map(|o| w3[o * n2 + i] * dq[o]).sum();
            }
        }
        // Layer 2.
        let off2 = self.layer_offset(1);
        let (w2, _) = self.layer(1);
        for o in 0..n2 {
            if dz2[o] != 0.0 {
                for i in 0..n1 {
                    grad[off2 + o * n1 + i] = dz2[o] * cache.h1[i];
                }
            }
            grad[off2 + n2 * n1 + o] = dz2[o];
        }
        let mut dz1 = vec![0.0; n1];
        for (i, d) in dz1.iter_mut().enumerate() {
            if cache.z1[i] > 0.0 {
                *d = (0..n2).map(|o| w2[o * n1 + i] * dz2[o]).sum();
            }
        }
        // Layer 1.
        for o in 0..n1 {
            if dz1[o] != 0.0 {
                for i in 0..n0 {
                    grad[o * n0 + i] = dz1[o] * cache.x[i];
                }
            }
            grad[n1 * n0 + o] = dz1[o];
        }
        grad
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json` (shape manifest).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<CheckpointManifest> {
        let bytes = self.to_bytes();
        let manifest = CheckpointManifest {
            dims: self.dims.to_vec(),
            len: self.params.len(),
            file: format!("{stem}.bin"),
            sha256: io::sha256_hex(&bytes),
        };
        io::write_bytes(&dir.join(&manifest.file), &bytes)?;
        io::write_json(&dir.join(format!("{stem}.json")), &manifest)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let manifest: CheckpointManifest = io::read_json(&dir.join(format!("{stem}.json")))?;
        let bytes = io::read_bytes(&dir.join(&manifest.file))?;
        ensure!(
            io::sha256_hex(&bytes) == manifest.sha256,
            Config,
            "checkpoint {} does not match its manifest hash",
            manifest.file
        );
        let dims: [usize; 4] = manifest
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| Error::Config("checkpoint must have four layer widths".into()))?;
        ensure!(
            bytes.len() == 8 * manifest.len && manifest.len == Self::param_count(dims),
            Config,
            "checkpoint size does not match its shape"
        );
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, params })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dims: Vec<usize>,
    pub len: usize,
    pub file: String,
    pub sha256: String,
}

/// `params ← params − η · grad`.
pub fn sgd_step(net: &mut QNet, grad: &[f64], eta: f64) {
    assert_eq!(grad.len(), net.params.len(), "gradient shape mismatch");
    for (p, g) in net.params.iter_mut().zip(grad) {
        *p -= eta * g;
    }
}
