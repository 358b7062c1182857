use crate::error::{Error, Result};
use crate::exec::Execution;

/// Dense row-major array of 64-bit floats.
///
/// Rank 0 and rank 1 tensors are viewed as a single row when used as a
/// matrix, so a length-`n` vector behaves like a `1 × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros_matrix(rows: usize, cols: usize) -> Self {
        Tensor::matrix(rows, cols, vec![0.0; rows * cols])
    }

    /// A `1 × n` matrix.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::matrix(1, n, data)
    }

    /// An `n × 1` matrix.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::matrix(n, 1, data)
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::matrix(1, 1, vec![x])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[n - 1],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `a (n×k) · b (k×m)`, parallel over output rows.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, exec: Execution) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let (k2, m) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul {n}x{k} · {k2}x{m}");
    let mut out = vec![0.0; n * m];
    if m == 0 {
        return Tensor::matrix(n, m, out);
    }
    let (ad, bd) = (a.data(), b.data());
    let rows_per_chunk = chunk_rows(n, k * m);
    exec.for_each_chunk(&mut out, rows_per_chunk * m, |ci, chunk| {
        let r0 = ci * rows_per_chunk;
        for (ri, orow) in chunk.chunks_mut(m).enumerate() {
            let arow = &ad[(r0 + ri) * k..(r0 + ri + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    });
    Tensor::matrix(n, m, out)
}

/// `g (n×m) · bᵀ` where `b` is `k×m`; gradient of a matmul w.r.t. its left input.
pub(crate) fn matmul_grad_left(g: &Tensor, b: &Tensor, exec: Execution) -> Vec<f64> {
    let (n, m) = (g.rows(), g.cols());
    let k = b.rows();
    let mut out = vec![0.0; n * k];
    if k == 0 {
        return out;
    }
    let (gd, bd) = (g.data(), b.data());
    let rows_per_chunk = chunk_rows(n, k * m);
    exec.for_each_chunk(&mut out, rows_per_chunk * k, |ci, chunk| {
        let r0 = ci * rows_per_chunk;
        for (ri, orow) in chunk.chunks_mut(k).enumerate() {
            let grow = &gd[(r0 + ri) * m..(r0 + ri + 1) * m];
            for (p, o) in orow.iter_mut().enumerate() {
                let brow = &bd[p * m..(p + 1) * m];
                *o = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
    });
    out
}

/// `aᵀ (k×n) · g (n×m)`; gradient of a matmul w.r.t. its right input.
pub(crate) fn matmul_grad_right(a: &Tensor, g: &Tensor, exec: Execution) -> Vec<f64> {
    let (n, k) = (a.rows(), a.cols());
    let m = g.cols();
    let mut out = vec![0.0; k * m];
    if m == 0 {
        return out;
    }
    let (ad, gd) = (a.data(), g.data());
    let rows_per_chunk = chunk_rows(k, n * m);
    exec.for_each_chunk(&mut out, rows_per_chunk * m, |ci, chunk| {
        let p0 = ci * rows_per_chunk;
        let width = chunk.len() / m;
        for i in 0..n {
            let grow = &gd[i * m..(i + 1) * m];
            for pi in 0..width {
                let av = ad[i * k + p0 + pi];
                if av == 0.0 {
                    continue;
                }
                let orow = &mut chunk[pi * m..(pi + 1) * m];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    });
    out
}

/// Rows per parallel work item, sized so each item does a few thousand flops.
fn chunk_rows(rows: usize, work_per_row: usize) -> usize {
    let target = 16_384usize;
    (target / work_per_row.max(1)).clamp(1, rows.max(1))
}
