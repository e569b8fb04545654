use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Scalar type the network runs in: `f64` for gradient checks, `f32` for training.
pub trait Real: Float + Send + Sync + Debug + Default + Sum + 'static {
    fn lit(v: f64) -> Self {
        Self::from(v).expect("literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// Panics if `data.len()` disagrees with `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor (or 1 for a vector).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from(v).unwrap()).collect(),
        }
    }
}

/// `out[n, o] += a[n, i] * b[i, o]`. Rows are processed four at a time so each
/// row of `b` is loaded once per block; every output still sums over `i` in
/// ascending order.
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize, i: usize, o: usize) {
    debug_assert_eq!(a.len(), n * i);
    debug_assert_eq!(b.len(), i * o);
    debug_assert_eq!(out.len(), n * o);
    let mut r = 0;
    while r + 4 <= n {
        let (o0, rest) = out[r * o..(r + 4) * o].split_at_mut(o);
        let (o1, rest) = rest.split_at_mut(o);
        let (o2, o3) = rest.split_at_mut(o);
        for k in 0..i {
            let (a0, a1, a2, a3) = (
                a[r * i + k],
                a[(r + 1) * i + k],
                a[(r + 2) * i + k],
                a[(r + 3) * i + k],
            );
            let brow = &b[k * o..(k + 1) * o];
            let rows = o0
                .iter_mut()
                .zip(o1.iter_mut())
                .zip(o2.iter_mut().zip(o3.iter_mut()));
            for (((y0, y1), (y2, y3)), &bv) in rows.zip(brow) {
                *y0 = *y0 + a0 * bv;
                *y1 = *y1 + a1 * bv;
                *y2 = *y2 + a2 * bv;
                *y3 = *y3 + a3 * bv;
            }
        }
        r += 4;
    }
    for r in r..n {
        let orow = &mut out[r * o..(r + 1) * o];
        let arow = &a[r * i..(r + 1) * i];
        for (k, &av) in arow.iter().enumerate() {
            let brow = &b[k * o..(k + 1) * o];
            for (y, &bv) in orow.iter_mut().zip(brow) {
                *y = *y + av * bv;
            }
        }
    }
}

/// `out[k, o] += a[n, k]^T * b[n, o]`.
pub(crate) fn matmul_at_b_acc<T: Real>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    n: usize,
    k: usize,
    o: usize,
) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * o);
    debug_assert_eq!(out.len(), k * o);
    for kk in 0..k {
        let orow = &mut out[kk * o..(kk + 1) * o];
        for r in 0..n {
            let av = a[r * k + kk];
            let brow = &b[r * o..(r + 1) * o];
            for (y, &bv) in orow.iter_mut().zip(brow) {
                *y = *y + av * bv;
            }
        }
    }
}

/// `out[n, i] += a[n, o] * b[i, o]^T`. Each dot product keeps eight partial
/// sums that are combined in a fixed order.
pub(crate) fn matmul_a_bt_acc<T: Real>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    n: usize,
    o: usize,
    i: usize,
) {
    debug_assert_eq!(a.len(), n * o);
    debug_assert_eq!(b.len(), i * o);
    debug_assert_eq!(out.len(), n * i);
    for (arow, orow) in a.chunks_exact(o).zip(out.chunks_exact_mut(i)) {
        for (brow, y) in b.chunks_exact(o).zip(orow.iter_mut()) {
            *y = *y + dot(arow, brow);
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    for (l, (&x, &y)) in ar.iter().zip(br).enumerate() {
        lanes[l] = lanes[l] + x * y;
    }
    let left = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    let right = (lanes[4] + lanes[5]) + (lanes[6] + lanes[7]);
    left + right
}

/// Transpose of a row-major `rows x cols` matrix.
pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
