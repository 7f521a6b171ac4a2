//! Dense row-major `f64` tensors and the forward kernels used by the
//! autodiff graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; numel],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
            grad: None,
        }
    }

    /// Row-major matrix from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// I.i.d. standard normal entries.
    pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: (0..numel).map(|_| rng.normal()).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "grad of length {} for tensor of {} values",
                grad.len(),
                self.values.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.values.clone())
    }

    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    fn zip(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            grad: None,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn silu(&self) -> Tensor {
        self.map(|v| v * sigmoid(v))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = as_matrix(self, "matmul lhs")?;
        let (k2, n) = as_matrix(other, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul: inner extents {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.values, false, &other.values, false, &mut out, false);
        Ok(Tensor {
            shape: vec![m, n],
            values: out,
            grad: None,
        })
    }

    /// Adds `bias` (length = last extent) to every row.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape.last().expect("non-empty shape");
        if bias.numel() != n {
            return Err(Error::Dimension(format!(
                "add_bias: bias of {} values for rows of width {n}",
                bias.numel()
            )));
        }
        let mut values = self.values.clone();
        for row in values.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias.values) {
                *v += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values,
            grad: None,
        })
    }

    /// Adds a per-channel offset to a `[N×C×H×W]` tensor. `offset` is either
    /// `[C]` (shared across the batch) or `[N×C]` (one row per sample).
    pub fn add_channel(&self, offset: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = as_nchw(self, "add_channel")?;
        let per_sample = channel_offset_layout(offset, n, c)?;
        let mut values = self.values.clone();
        for s in 0..n {
            for ch in 0..c {
                let o = offset.values[if per_sample { s * c + ch } else { ch }];
                let base = (s * c + ch) * h * w;
                for v in &mut values[base..base + h * w] {
                    *v += o;
                }
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values,
            grad: None,
        })
    }

    /// Cross-correlation of a `[C_in×H×W]` (or batched `[N×C_in×H×W]`) input
    /// with a `[C_out×C_in×kh×kw]` kernel.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let batched = self.shape.len() == 4;
        let geom = ConvGeom::new(self, kernel, stride, pad)?;
        let mut out = vec![0.0; geom.out_len()];
        conv2d_forward(&geom, &self.values, &kernel.values, &mut out);
        let shape = if batched {
            vec![geom.n, geom.c_out, geom.out_h, geom.out_w]
        } else {
            vec![geom.c_out, geom.out_h, geom.out_w]
        };
        Ok(Tensor {
            shape,
            values: out,
            grad: None,
        })
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&self, target: &Tensor) -> Result<f64> {
        self.same_shape(target, "mse")?;
        let ss: f64 = self
            .values
            .iter()
            .zip(&target.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(ss / self.numel() as f64)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::Dimension(format!("{what}: expected a matrix, got {s:?}"))),
    }
}

pub(crate) fn as_nchw(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        [c, h, w] => Ok((1, *c, *h, *w)),
        s => Err(Error::Dimension(format!(
            "{what}: expected [N×C×H×W] or [C×H×W], got {s:?}"
        ))),
    }
}

/// Returns true for a per-sample `[N×C]` offset, false for a shared `[C]` one.
pub(crate) fn channel_offset_layout(offset: &Tensor, n: usize, c: usize) -> Result<bool> {
    match offset.shape() {
        [cc] if *cc == c => Ok(false),
        [nn, cc] if *nn == n && *cc == c => Ok(true),
        s => Err(Error::Dimension(format!(
            "channel offset of shape {s:?} for N={n}, C={c}"
        ))),
    }
}

/// `c (+)= op(a) · op(b)` for row-major `a: [m×k]`, `b: [k×n]` (after the
/// optional transposes) and `c: [m×n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Stored layouts: a is [m×k] or, when transposed, [k×m]; likewise b.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays within
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (n, c_in, h, w) = as_nchw(input, "conv2d input")?;
        let [c_out, kc, kh, kw] = match kernel.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => {
                return Err(Error::Dimension(format!(
                    "conv2d kernel must be [C_out×C_in×kh×kw], got {s:?}"
                )))
            }
        };
        if kc != c_in {
            return Err(Error::Dimension(format!(
                "conv2d: kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d: stride must be positive".into()));
        }
        if pad >= kh.max(kw) {
            return Err(Error::Dimension(format!(
                "conv2d: padding {pad} must be smaller than the kernel extent"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Dimension(format!(
                "conv2d: {kh}×{kw} kernel does not fit padded {h}×{w} input (pad {pad})"
            )));
        }
        Ok(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn out_len(&self) -> usize {
        self.n * self.c_out * self.out_h * self.out_w
    }

    /// Input offset for output pixel `(oy, ox)` and kernel tap `(ky, kx)`,
    /// or `None` when the tap lands in the zero padding.
    #[inline]
    fn tap(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some(iy * self.w + ix)
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let plane = g.h * g.w;
    let out_plane = g.out_h * g.out_w;
    let ksz = g.kh * g.kw;
    for s in 0..g.n {
        for co in 0..g.c_out {
            let o_base = (s * g.c_out + co) * out_plane;
            for ci in 0..g.c_in {
                let i_base = (s * g.c_in + ci) * plane;
                let k_base = (co * g.c_in + ci) * ksz;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let kv = kernel[k_base + ky * g.kw + kx];
                        for oy in 0..g.out_h {
                            for ox in 0..g.out_w {
                                if let Some(off) = g.tap(oy, ox, ky, kx) {
                                    out[o_base + oy * g.out_w + ox] += kv * input[i_base + off];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input and/or kernel gradients of a convolution given the
/// output gradient.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    mut d_input: Option<&mut [f64]>,
    mut d_kernel: Option<&mut [f64]>,
) {
    let plane = g.h * g.w;
    let out_plane = g.out_h * g.out_w;
    let ksz = g.kh * g.kw;
    for s in 0..g.n {
        for co in 0..g.c_out {
            let o_base = (s * g.c_out + co) * out_plane;
            for ci in 0..g.c_in {
                let i_base = (s * g.c_in + ci) * plane;
                let k_base = (co * g.c_in + ci) * ksz;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let k_idx = k_base + ky * g.kw + kx;
                        let kv = kernel[k_idx];
                        let mut acc = 0.0;
                        for oy in 0..g.out_h {
                            for ox in 0..g.out_w {
                                if let Some(off) = g.tap(oy, ox, ky, kx) {
                                    let go = d_out[o_base + oy * g.out_w + ox];
                                    acc += go * input[i_base + off];
                                    if let Some(di) = d_input.as_deref_mut() {
                                        di[i_base + off] += go * kv;
                                    }
                                }
                            }
                        }
                        if let Some(dk) = d_kernel.as_deref_mut() {
                            dk[k_idx] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_numel() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn grad_length_checked() {
        let mut t = Tensor::zeros(&[3]);
        assert!(t.set_grad(vec![0.0; 2]).is_err());
        t.set_grad(vec![1.0; 3]).unwrap();
        assert_eq!(t.grad(), Some(&[1.0, 1.0, 1.0][..]));
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        assert_eq!(i2.matmul(&i2).unwrap(), i2);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[&[0.0], &[1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.values(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let mut rng = Rng::new(9);
        let (m, k, n) = (3, 5, 4);
        let a = Tensor::gaussian(&mut rng, &[m, k]);
        let b = Tensor::gaussian(&mut rng, &[k, n]);
        let naive = |i: usize, j: usize| -> f64 { (0..k).map(|p| a.values[i * k + p] * b.values[p * n + j]).sum() };
        // a stored transposed as [k×m]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a.values[i * k + p];
            }
        }
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b.values[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &at, true, &bt, true, &mut c, false);
        for i in 0..m {
            for j in 0..n {
                assert!((c[i * n + j] - naive(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Rng::new(1);
        let x = Tensor::gaussian(&mut rng, &[1, 3, 3]);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(x.conv2d(&k, 1, 0).unwrap().values(), x.values());
    }

    #[test]
    fn conv_summation() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.values(), &[9.0]);
    }

    #[test]
    fn conv_padding_preserves_shape() {
        let x = Tensor::full(&[2, 2, 5, 5], 1.0);
        let k = Tensor::full(&[3, 2, 3, 3], 1.0);
        let y = x.conv2d(&k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5, 5]);
        // corner sees a 2×2 window over 2 channels
        assert_eq!(y.values()[0], 8.0);
        // centre sees the full 3×3 window
        assert_eq!(y.values()[12], 18.0);
    }

    #[test]
    fn conv_invalid_configs() {
        let x = Tensor::zeros(&[1, 3, 3]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(x.conv2d(&k, 0, 0), Err(Error::Dimension(_))));
        assert!(matches!(x.conv2d(&k, 1, 3), Err(Error::Dimension(_))));
        let big = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(matches!(x.conv2d(&big, 1, 0), Err(Error::Dimension(_))));
        let wrong_c = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(matches!(x.conv2d(&wrong_c, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::new(vec![1], vec![2.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(a.mse(&b).unwrap(), 4.0);
        assert_eq!(a.mse(&a).unwrap(), 0.0);
        assert!(a.mse(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn elementwise_hand_values() {
        let a = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let b = Tensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().values(), &[3.0, 5.0, 8.0]);
        assert_eq!(a.mul(&b).unwrap().values(), &[-4.0, 0.0, 12.0]);
        assert_eq!(a.scale(0.5).values(), &[-0.5, 0.0, 1.0]);
        assert_eq!(a.relu().values(), &[0.0, 0.0, 2.0]);
        assert_eq!(a.silu().values()[1], 0.0);
        assert!((a.silu().values()[2] - 2.0 * sigmoid(2.0)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_determinism_and_moments() {
        let a = Tensor::gaussian(&mut Rng::new(0), &[100_000]);
        let b = Tensor::gaussian(&mut Rng::new(0), &[100_000]);
        assert_eq!(a, b);
        let c = Tensor::gaussian(&mut Rng::new(1), &[100_000]);
        assert_ne!(a, c);
        let n = a.numel() as f64;
        let mean = a.sum() / n;
        let var = a.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
