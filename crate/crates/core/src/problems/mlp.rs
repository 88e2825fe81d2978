use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};
use crate::numkit::{DenseVector, RngStream};

/// Fully connected layer, `out = W x + b` with `W` stored row-major (`rows = outputs`).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols || bias.len() != rows {
            return Err(ZoError::InvalidArgument(format!(
                "layer shape {rows}x{cols} inconsistent with {} weights / {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Small MLP: `tanh` on hidden layers, identity on the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyMlp {
    layers: Vec<DenseLayer>,
}

/// On-disk form: a shape header followed by every tensor flattened row-major,
/// in order `W1, b1, W2, b2, ...`.
#[derive(Serialize, Deserialize)]
struct MlpFile {
    shapes: Vec<Vec<usize>>,
    values: Vec<f64>,
}

impl TinyMlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ZoError::InvalidArgument(
                "MLP needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(ZoError::InvalidArgument(format!(
                    "layer input {} does not match previous output {}",
                    pair[1].cols, pair[0].rows
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Gaussian weights with fan-in scaling `gain / sqrt(cols)`, biases `0.1 * N(0,1)`.
    pub fn seeded(sizes: &[usize], gain: f64, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(ZoError::InvalidArgument(
                "need input and output sizes".into(),
            ));
        }
        let mut rng = RngStream::new(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let scale = gain / (cols as f64).sqrt();
                let weights = (0..rows * cols)
                    .map(|_| scale * rng.next_normal())
                    .collect();
                let bias = (0..rows).map(|_| 0.1 * rng.next_normal()).collect();
                DenseLayer::new(rows, cols, weights, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(ZoError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k != last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.forward(x)?;
        Ok(argmax(&z))
    }

    pub fn to_json(&self) -> String {
        let mut shapes = Vec::new();
        let mut values = Vec::new();
        for l in &self.layers {
            shapes.push(vec![l.rows, l.cols]);
            shapes.push(vec![l.rows]);
            values.extend_from_slice(&l.weights);
            values.extend_from_slice(&l.bias);
        }
        serde_json::to_string_pretty(&MlpFile { shapes, values }).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MlpFile = serde_json::from_str(text)
            .map_err(|e| ZoError::InvalidArgument(format!("bad MLP file: {e}")))?;
        if file.shapes.len() % 2 != 0 {
            return Err(ZoError::InvalidArgument(
                "shape list must pair weights and biases".into(),
            ));
        }
        let mut offset = 0;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let end = offset + n;
            if end > file.values.len() {
                return Err(ZoError::InvalidArgument(
                    "MLP file has too few values".into(),
                ));
            }
            let out = file.values[offset..end].to_vec();
            offset = end;
            Ok(out)
        };
        let mut layers = Vec::new();
        for pair in file.shapes.chunks(2) {
            let (w, b) = (&pair[0], &pair[1]);
            if w.len() != 2 || b.len() != 1 || b[0] != w[0] {
                return Err(ZoError::InvalidArgument(format!(
                    "bad layer shapes {w:?} / {b:?}"
                )));
            }
            let weights = take(w[0] * w[1])?;
            let bias = take(b[0])?;
            layers.push(DenseLayer::new(w[0], w[1], weights, bias)?);
        }
        if offset != file.values.len() {
            return Err(ZoError::InvalidArgument(
                "MLP file has trailing values".into(),
            ));
        }
        Self::new(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ZoError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| ZoError::io(path, e))
    }
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Logits of `model` at `x`.
pub fn mlp_forward(model: &TinyMlp, x: &DenseVector) -> Result<DenseVector> {
    DenseVector::new(model.forward(x.as_slice())?)
}
