//! Raw dense kernels shared by the forward and backward passes.

/// Row-major strided matrix view over a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c[m×n] = beta·c + a[m×k]·b[k×n]`, with `c` contiguous row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let last = |v: &View, rows: usize, cols: usize| {
        (rows as isize - 1) * v.row_stride + (cols as isize - 1) * v.col_stride
    };
    assert!(
        last(&a, m, k) < a.data.len() as isize,
        "gemm lhs out of bounds"
    );
    assert!(
        last(&b, k, n) < b.data.len() as isize,
        "gemm rhs out of bounds"
    );
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-length 1-D convolution over rows: `x[T×cin]`, `w[width×cin×cout]`.
/// Zero padding of `(width-1)/2` on the left, the remainder on the right.
pub(crate) fn conv1d_forward(
    x: &[f64],
    steps: usize,
    cin: usize,
    w: &[f64],
    width: usize,
    cout: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    for t in 0..steps {
        out[t * cout..(t + 1) * cout].copy_from_slice(bias);
    }
    let pad = (width - 1) / 2;
    for k in 0..width {
        let Some((dst, src, len)) = tap_range(steps, k, pad) else {
            continue;
        };
        gemm(
            len,
            cin,
            cout,
            View::new(&x[src * cin..], cin),
            View::new(&w[k * cin * cout..(k + 1) * cin * cout], cout),
            1.0,
            &mut out[dst * cout..],
        );
    }
}

/// For tap `k`, the output rows `[dst, dst+len)` read input rows `[src, src+len)`.
pub(crate) fn tap_range(steps: usize, k: usize, pad: usize) -> Option<(usize, usize, usize)> {
    let offset = k as isize - pad as isize;
    let dst = (-offset).max(0) as usize;
    let end = (steps as isize - offset).min(steps as isize);
    if end <= dst as isize {
        return None;
    }
    let len = end as usize - dst;
    Some((dst, (dst as isize + offset) as usize, len))
}

/// Standard normal CDF.
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
