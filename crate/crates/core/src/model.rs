//! The classifier: a ReLU multilayer perceptron with a linear `C`-way head,
//! plus a binary checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! b"BAMCKPT1"
//! u32            number of layer dims L
//! u64 × L        layer dims (input, hidden..., classes)
//! u64            init seed
//! per layer:     weights (fan_in × fan_out, row-major f64) then bias (fan_out f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BAMCKPT1";

/// Default hidden widths for experiments: input → 64 → 32 → C.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

/// One affine layer; `weight` is `fan_in × fan_out`, `bias` is `1 × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Parameters θ of the feedforward classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    init_seed: u64,
}

impl ModelParams {
    /// Seeded initialization: weights ~ U(-1/√fan_in, 1/√fan_in), biases zero.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(layer_dims, seed, &mut rng)
    }

    /// Like [`ModelParams::init`] but draws from a caller-provided generator;
    /// `seed` is only recorded.
    pub fn init_with_rng(layer_dims: &[usize], seed: u64, rng: &mut impl Rng) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, values).expect("shape"),
                    bias: Matrix::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(ModelParams {
            layer_dims: layer_dims.to_vec(),
            layers,
            init_seed: seed,
        })
    }

    /// Builds a model from explicit layers, checking shape agreement.
    pub fn from_layers(layers: Vec<Layer>, init_seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        let mut dims = vec![layers[0].weight.rows()];
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rows() != *dims.last().unwrap() {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.weight.rows(),
                    dims.last().unwrap()
                )));
            }
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(Error::invalid(format!("layer {i} bias shape mismatch")));
            }
            dims.push(l.weight.cols());
        }
        validate_dims(&dims)?;
        Ok(ModelParams {
            layer_dims: dims,
            layers,
            init_seed,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Parameter matrices in canonical order: `W0, b0, W1, b1, ...`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Forward pass, returning `rows × C` logits.
    pub fn predict_logits(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight)?;
            z.add_row_broadcast(&layer.bias)?;
            if i < last {
                relu_in_place(&mut z);
            }
            h = z;
        }
        Ok(h)
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict_labels(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let logits = self.predict_logits(batch)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.init_seed.to_le_bytes());
        for m in self.params() {
            for v in m.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let malformed = |reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };

        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| malformed("missing magic"))? != CHECKPOINT_MAGIC {
            return Err(malformed("bad magic"));
        }
        let n_dims = cur.u32().ok_or_else(|| malformed("truncated header"))? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(malformed("implausible layer count"));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            let d = cur.u64().ok_or_else(|| malformed("truncated header"))?;
            if d == 0 || d > (1 << 24) {
                return Err(malformed("implausible layer width"));
            }
            dims.push(d as usize);
        }
        let seed = cur.u64().ok_or_else(|| malformed("truncated header"))?;

        let mut layers = Vec::with_capacity(n_dims - 1);
        for w in dims.windows(2) {
            let weight = cur
                .matrix(w[0], w[1])
                .ok_or_else(|| malformed("truncated payload"))?
                .map_err(|_| malformed("non-finite parameter"))?;
            let bias = cur
                .matrix(1, w[1])
                .ok_or_else(|| malformed("truncated payload"))?
                .map_err(|_| malformed("non-finite parameter"))?;
            layers.push(Layer { weight, bias });
        }
        if cur.pos != bytes.len() {
            return Err(malformed("trailing bytes after payload"));
        }
        ModelParams::from_layers(layers, seed)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn relu_in_place(m: &mut Matrix) {
    for v in m.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!(
            "model needs at least 2 layer dims, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("layer dims must be positive"));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Option<Result<Matrix>> {
        let raw = self.take(rows.checked_mul(cols)?.checked_mul(8)?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(Matrix::from_vec(rows, cols, values))
    }
}
