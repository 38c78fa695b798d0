use serde::{Deserialize, Serialize};

use super::matrix::{axpy, matmul_transposed, Matrix};
use super::ParamMut;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Fully connected layer, `y = x·Wᵀ + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LinearParams", into = "LinearParams")]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearParams {
    weight: Matrix,
    bias: Vec<f64>,
}

impl From<LinearParams> for LinearLayer {
    fn from(p: LinearParams) -> Self {
        LinearLayer::from_parts(p.weight, p.bias)
    }
}

impl From<LinearLayer> for LinearParams {
    fn from(l: LinearLayer) -> Self {
        LinearParams {
            weight: l.weight,
            bias: l.bias,
        }
    }
}

impl LinearLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        let weight = Matrix::from_vec(out_dim, in_dim, data).expect("finite init");
        Self::from_parts(weight, vec![0.0; out_dim])
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(weight.rows(), bias.len(), "bias length must match output width");
        let grad_weight = Matrix::zeros(weight.rows(), weight.cols());
        let grad_bias = vec![0.0; bias.len()];
        Self {
            weight,
            bias,
            grad_weight,
            grad_bias,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        matmul_transposed(input, &self.weight, &mut out);
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns `∂L/∂input`.
    pub fn backward(&mut self, input: &Matrix, grad_out: &Matrix) -> Matrix {
        debug_assert_eq!(grad_out.shape(), (input.rows(), self.out_dim()));
        let in_dim = self.in_dim();
        let mut grad_in = Matrix::zeros(input.rows(), in_dim);
        for b in 0..input.rows() {
            let x = input.row(b);
            let g = grad_out.row(b);
            let gi = grad_in.row_mut(b);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                self.grad_bias[o] += go;
                let w_row = &self.weight.as_slice()[o * in_dim..(o + 1) * in_dim];
                axpy(go, w_row, gi);
                let gw_row = &mut self.grad_weight.as_mut_slice()[o * in_dim..(o + 1) * in_dim];
                axpy(go, x, gw_row);
            }
        }
        grad_in
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub(crate) fn params(&mut self) -> [ParamMut<'_>; 2] {
        [
            ParamMut {
                value: self.weight.as_mut_slice(),
                grad: self.grad_weight.as_mut_slice(),
            },
            ParamMut {
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }
}

/// Parametric ReLU with one learnable slope shared by every unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PReluParams", into = "PReluParams")]
pub struct PRelu {
    pub slope: f64,
    pub grad_slope: f64,
}

#[derive(Serialize, Deserialize)]
struct PReluParams {
    slope: f64,
}

impl From<PReluParams> for PRelu {
    fn from(p: PReluParams) -> Self {
        PRelu::new(p.slope)
    }
}

impl From<PRelu> for PReluParams {
    fn from(p: PRelu) -> Self {
        PReluParams { slope: p.slope }
    }
}

impl PRelu {
    pub const DEFAULT_SLOPE: f64 = 0.25;

    pub fn new(slope: f64) -> Self {
        Self {
            slope,
            grad_slope: 0.0,
        }
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.slope * x
        }
    }

    pub fn forward(&self, input: &Matrix) -> Matrix {
        input.map(|x| self.apply(x))
    }

    pub fn backward(&mut self, input: &Matrix, grad_out: &Matrix) -> Matrix {
        let mut grad_in = grad_out.clone();
        let mut grad_slope = 0.0;
        for (gi, &x) in grad_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
            if x <= 0.0 {
                grad_slope += *gi * x;
                *gi *= self.slope;
            }
        }
        self.grad_slope += grad_slope;
        grad_in
    }

    pub fn zero_grad(&mut self) {
        self.grad_slope = 0.0;
    }

    pub(crate) fn param(&mut self) -> ParamMut<'_> {
        ParamMut {
            value: std::slice::from_mut(&mut self.slope),
            grad: std::slice::from_mut(&mut self.grad_slope),
        }
    }
}

impl Default for PRelu {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SLOPE)
    }
}

/// Token embedding table. Row 0 is the padding vector: it is zero on
/// construction and never receives gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingParams", into = "EmbeddingParams")]
pub struct EmbeddingTable {
    pub weight: Matrix,
    pub grad_weight: Matrix,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingParams {
    weight: Matrix,
}

impl TryFrom<EmbeddingParams> for EmbeddingTable {
    type Error = Error;

    fn try_from(p: EmbeddingParams) -> Result<Self> {
        EmbeddingTable::from_weight(p.weight)
    }
}

impl From<EmbeddingTable> for EmbeddingParams {
    fn from(e: EmbeddingTable) -> Self {
        EmbeddingParams { weight: e.weight }
    }
}

impl EmbeddingTable {
    pub const PAD: usize = 0;

    /// Normal(0, 0.01²) entries except the zero pad row.
    pub fn new(vocab_size: usize, dim: usize, rng: &mut SplitMix64) -> Self {
        let mut weight = Matrix::zeros(vocab_size, dim);
        for r in 1..vocab_size {
            for v in weight.row_mut(r) {
                *v = 0.01 * rng.normal();
            }
        }
        Self::from_weight(weight).expect("pad row is zero")
    }

    pub fn from_weight(weight: Matrix) -> Result<Self> {
        if weight.rows() == 0 {
            return Err(Error::Shape("embedding table needs at least the pad row".into()));
        }
        if weight.row(Self::PAD).iter().any(|&v| v != 0.0) {
            return Err(Error::Shape("embedding pad row must be zero".into()));
        }
        let grad_weight = Matrix::zeros(weight.rows(), weight.cols());
        Ok(Self {
            weight,
            grad_weight,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    /// Looks up a `(batch, positions)` index grid and returns the embeddings
    /// flattened per row: `out[b][s * dim + k] = weight[tokens[b][s]][k]`.
    pub fn forward(&self, tokens: &IndexMatrix) -> Result<Matrix> {
        let dim = self.dim();
        if let Some(&bad) = tokens.as_slice().iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                limit: self.vocab_size(),
            });
        }
        let mut out = Matrix::zeros(tokens.rows(), tokens.cols() * dim);
        for b in 0..tokens.rows() {
            let row = out.row_mut(b);
            for (s, &t) in tokens.row(b).iter().enumerate() {
                row[s * dim..(s + 1) * dim].copy_from_slice(self.weight.row(t));
            }
        }
        Ok(out)
    }

    /// Scatter-adds `grad_out` (same layout as [`forward`](Self::forward)'s
    /// output) into the table gradient, skipping the pad row.
    pub fn backward(&mut self, tokens: &IndexMatrix, grad_out: &Matrix) {
        let dim = self.dim();
        for b in 0..tokens.rows() {
            let g = grad_out.row(b);
            for (s, &t) in tokens.row(b).iter().enumerate() {
                if t == Self::PAD {
                    continue;
                }
                let dst = self.grad_weight.row_mut(t);
                for (d, v) in dst.iter_mut().zip(&g[s * dim..(s + 1) * dim]) {
                    *d += v;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
    }

    /// Trainable rows only; the pad row is left out so no optimizer can move it.
    pub(crate) fn param(&mut self) -> ParamMut<'_> {
        let dim = self.dim();
        ParamMut {
            value: &mut self.weight.as_mut_slice()[dim..],
            grad: &mut self.grad_weight.as_mut_slice()[dim..],
        }
    }
}

/// Dense row-major grid of token or category indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<usize>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} indices cannot fill a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, indices: &[usize]) -> IndexMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        IndexMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}
