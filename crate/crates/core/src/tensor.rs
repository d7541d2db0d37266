//! Dense row-major `f64` tensors and the raw kernels the autograd graph is
//! built from.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Errors raised by tensor arithmetic and the autograd graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violated in {op}: {reason}")]
    Contract { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn contract(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        reason: reason.into(),
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(contract("Tensor::new", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(contract(
                "Tensor::new",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Values drawn uniformly from `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
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

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul(self, other)
    }
}

/// `C = A · B` with explicit strides; `c` is overwritten when `beta == 0`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * rsc as usize + (n - 1) * csc as usize + 1);
    if k > 0 {
        debug_assert!(a.len() >= (m - 1) * rsa as usize + (k - 1) * csa as usize + 1);
        debug_assert!(b.len() >= (k - 1) * rsb as usize + (n - 1) * csb as usize + 1);
    }
    // SAFETY: bounds asserted above; slices do not alias (`c` is borrowed mutably).
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
            rsc,
            csc,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(dim_err("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, k as isize, 1, &b.data, n as isize, 1, 0.0, &mut out, n as isize, 1);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Geometry of a 1D convolution over `[batch, channels, length]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub length: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn out_length(&self) -> usize {
        (self.length + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn cin_g(&self) -> usize {
        self.in_channels / self.groups
    }

    fn cout_g(&self) -> usize {
        self.out_channels / self.groups
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// Validates input `[B, C, L]` and weight `[Cout, Cin/g, K]` against each other.
    pub fn infer(
        x: &[usize],
        w: &[usize],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if x.len() != 3 || w.len() != 3 {
            return Err(dim_err("conv1d", x, w));
        }
        if groups == 0 || stride == 0 {
            return Err(contract("conv1d", "stride and groups must be positive"));
        }
        let (batch, in_channels, length) = (x[0], x[1], x[2]);
        let (out_channels, cin_g, kernel) = (w[0], w[1], w[2]);
        if in_channels % groups != 0 || out_channels % groups != 0 || cin_g * groups != in_channels {
            return Err(dim_err("conv1d", x, w));
        }
        if length + 2 * padding < kernel {
            return Err(contract(
                "conv1d",
                format!("padded length {} shorter than kernel {kernel}", length + 2 * padding),
            ));
        }
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            length,
            kernel,
            stride,
            padding,
            groups,
        })
    }
}

/// im2col for one group: rows are `(cin, k)` pairs, columns are `(b, l_out)`.
fn im2col(x: &[f64], g: &ConvGeometry, group: usize, col: &mut [f64]) {
    let (cin_g, k, lout, l) = (g.cin_g(), g.kernel, g.out_length(), g.length);
    let ncols = g.batch * lout;
    for ci in 0..cin_g {
        let c = group * cin_g + ci;
        for kk in 0..k {
            let row = &mut col[(ci * k + kk) * ncols..(ci * k + kk + 1) * ncols];
            for b in 0..g.batch {
                let xr = &x[(b * g.in_channels + c) * l..(b * g.in_channels + c + 1) * l];
                let dst = &mut row[b * lout..(b + 1) * lout];
                for (o, d) in dst.iter_mut().enumerate() {
                    let pos = (o * g.stride + kk) as isize - g.padding as isize;
                    *d = if pos >= 0 && (pos as usize) < l { xr[pos as usize] } else { 0.0 };
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeometry, group: usize, dx: &mut [f64]) {
    let (cin_g, k, lout, l) = (g.cin_g(), g.kernel, g.out_length(), g.length);
    let ncols = g.batch * lout;
    for ci in 0..cin_g {
        let c = group * cin_g + ci;
        for kk in 0..k {
            let row = &col[(ci * k + kk) * ncols..(ci * k + kk + 1) * ncols];
            for b in 0..g.batch {
                let xr = &mut dx[(b * g.in_channels + c) * l..(b * g.in_channels + c + 1) * l];
                for (o, &v) in row[b * lout..(b + 1) * lout].iter().enumerate() {
                    let pos = (o * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < l {
                        xr[pos as usize] += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. `w` is `[Cout, Cin/groups, K]`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: &ConvGeometry) -> Tensor {
    let lout = g.out_length();
    let mut y = vec![0.0; g.batch * g.out_channels * lout];
    if g.is_depthwise() {
        let mut padded = vec![0.0; g.length + 2 * g.padding];
        for b in 0..g.batch {
            for c in 0..g.out_channels {
                padded[g.padding..g.padding + g.length]
                    .copy_from_slice(&x.data[(b * g.in_channels + c) * g.length..][..g.length]);
                let wr = &w.data[c * g.kernel..(c + 1) * g.kernel];
                let yr = &mut y[(b * g.out_channels + c) * lout..][..lout];
                for (o, yv) in yr.iter_mut().enumerate() {
                    let win = &padded[o * g.stride..o * g.stride + g.kernel];
                    *yv = win.iter().zip(wr).map(|(a, b)| a * b).sum();
                }
            }
        }
    } else {
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let rows = cin_g * g.kernel;
        let ncols = g.batch * lout;
        let mut col = vec![0.0; rows * ncols];
        let mut out = vec![0.0; cout_g * ncols];
        for grp in 0..g.groups {
            im2col(&x.data, g, grp, &mut col);
            let wg = &w.data[grp * cout_g * rows..(grp + 1) * cout_g * rows];
            gemm(cout_g, rows, ncols, wg, rows as isize, 1, &col, ncols as isize, 1, 0.0, &mut out, ncols as isize, 1);
            for o in 0..cout_g {
                let c = grp * cout_g + o;
                for b in 0..g.batch {
                    y[(b * g.out_channels + c) * lout..][..lout]
                        .copy_from_slice(&out[o * ncols + b * lout..][..lout]);
                }
            }
        }
    }
    if let Some(bias) = bias {
        for b in 0..g.batch {
            for c in 0..g.out_channels {
                let bv = bias.data[c];
                for v in &mut y[(b * g.out_channels + c) * lout..][..lout] {
                    *v += bv;
                }
            }
        }
    }
    Tensor {
        shape: vec![g.batch, g.out_channels, lout],
        data: y,
    }
}

/// Gradients of [`conv1d_forward`] with respect to input, weight and bias.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    g: &ConvGeometry,
    want_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let lout = g.out_length();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.out_channels];
    for b in 0..g.batch {
        for (c, dbv) in db.iter_mut().enumerate() {
            *dbv += gy.data[(b * g.out_channels + c) * lout..][..lout].iter().sum::<f64>();
        }
    }
    let mut dx = if want_dx { Some(vec![0.0; x.len()]) } else { None };
    if g.is_depthwise() {
        let lp = g.length + 2 * g.padding;
        let mut padded = vec![0.0; lp];
        let mut dpad = vec![0.0; lp];
        for b in 0..g.batch {
            for c in 0..g.out_channels {
                let off = (b * g.in_channels + c) * g.length;
                padded[g.padding..g.padding + g.length].copy_from_slice(&x.data[off..off + g.length]);
                let wr = &w.data[c * g.kernel..(c + 1) * g.kernel];
                let gr = &gy.data[(b * g.out_channels + c) * lout..][..lout];
                let dwr = &mut dw[c * g.kernel..(c + 1) * g.kernel];
                for (o, &gv) in gr.iter().enumerate() {
                    let win = &padded[o * g.stride..o * g.stride + g.kernel];
                    for (d, &xv) in dwr.iter_mut().zip(win) {
                        *d += gv * xv;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    dpad.iter_mut().for_each(|v| *v = 0.0);
                    for (o, &gv) in gr.iter().enumerate() {
                        let win = &mut dpad[o * g.stride..o * g.stride + g.kernel];
                        for (d, &wv) in win.iter_mut().zip(wr) {
                            *d += gv * wv;
                        }
                    }
                    dx[off..off + g.length].copy_from_slice(&dpad[g.padding..g.padding + g.length]);
                }
            }
        }
    } else {
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let rows = cin_g * g.kernel;
        let ncols = g.batch * lout;
        let mut col = vec![0.0; rows * ncols];
        let mut gout = vec![0.0; cout_g * ncols];
        let mut dcol = vec![0.0; rows * ncols];
        for grp in 0..g.groups {
            for o in 0..cout_g {
                let c = grp * cout_g + o;
                for b in 0..g.batch {
                    gout[o * ncols + b * lout..][..lout]
                        .copy_from_slice(&gy.data[(b * g.out_channels + c) * lout..][..lout]);
                }
            }
            im2col(&x.data, g, grp, &mut col);
            // dW_g = G · colᵀ
            let dwg = &mut dw[grp * cout_g * rows..(grp + 1) * cout_g * rows];
            gemm(cout_g, ncols, rows, &gout, ncols as isize, 1, &col, 1, ncols as isize, 0.0, dwg, rows as isize, 1);
            if let Some(dx) = dx.as_mut() {
                // dcol = W_gᵀ · G
                let wg = &w.data[grp * cout_g * rows..(grp + 1) * cout_g * rows];
                gemm(rows, cout_g, ncols, wg, 1, rows as isize, &gout, ncols as isize, 1, 0.0, &mut dcol, ncols as isize, 1);
                col2im(&dcol, g, grp, dx);
            }
        }
    }
    (
        dx.map(|d| Tensor {
            shape: x.shape.clone(),
            data: d,
        }),
        Tensor {
            shape: w.shape.clone(),
            data: dw,
        },
        Tensor {
            shape: vec![g.out_channels],
            data: db,
        },
    )
}

/// Per-channel statistics over `(batch, length)` of a `[B, C, L]` tensor.
/// Returns `(mean, biased variance)`.
pub fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    let n = (b * l) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            s += x.data[(bi * c + ch) * l..][..l].iter().sum::<f64>();
        }
        let mu = s / n;
        let mut ss = 0.0;
        for bi in 0..b {
            ss += x.data[(bi * c + ch) * l..][..l]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / n;
    }
    (mean, var)
}

/// Applies `y = x * scale[c] + shift[c]` along the channel axis of `[B, C, L]`.
pub fn channel_affine(x: &Tensor, scale: &[f64], shift: &[f64]) -> Tensor {
    let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut y = x.data.clone();
    for bi in 0..b {
        for ch in 0..c {
            let (s, t) = (scale[ch], shift[ch]);
            for v in &mut y[(bi * c + ch) * l..][..l] {
                *v = *v * s + t;
            }
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: y,
    }
}

/// Max pooling with implicit `-inf` padding. Returns outputs and the flat
/// input index each output was taken from (lowest index on ties).
pub fn maxpool1d_forward(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<(Tensor, Vec<usize>)> {
    if x.shape.len() != 3 {
        return Err(contract("maxpool1d", format!("expected [B, C, L], got {:?}", x.shape)));
    }
    let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    if kernel == 0 || stride == 0 || kernel > l + 2 * padding {
        return Err(contract(
            "maxpool1d",
            format!("window {kernel} larger than padded length {}", l + 2 * padding),
        ));
    }
    if padding * 2 > kernel {
        return Err(contract("maxpool1d", "padding must be at most half the window"));
    }
    let lout = (l + 2 * padding - kernel) / stride + 1;
    let mut y = vec![0.0; b * c * lout];
    let mut arg = vec![0usize; b * c * lout];
    for row in 0..b * c {
        let xr = &x.data[row * l..(row + 1) * l];
        for o in 0..lout {
            let start = (o * stride) as isize - padding as isize;
            let mut best = f64::NEG_INFINITY;
            let mut best_i = usize::MAX;
            for kk in 0..kernel {
                let pos = start + kk as isize;
                if pos >= 0 && (pos as usize) < l && xr[pos as usize] > best {
                    best = xr[pos as usize];
                    best_i = pos as usize;
                }
            }
            if best_i == usize::MAX {
                // Every in-range value was NaN; keep the first in-range position.
                best_i = start.max(0) as usize;
                best = xr[best_i];
            }
            y[row * lout + o] = best;
            arg[row * lout + o] = row * l + best_i;
        }
    }
    Ok((
        Tensor {
            shape: vec![b, c, lout],
            data: y,
        },
        arg,
    ))
}
