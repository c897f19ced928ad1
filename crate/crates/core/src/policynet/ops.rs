//! Dense kernels on row-major slices.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point element type of parameters and activations.
pub trait Scalar:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    <T as NumCast>::from(x).expect("representable constant")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("finite scalar")
}

/// `out[n×m] = x[n×k] · w[k×m] + b[m]`.
pub fn matmul_bias<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![T::zero(); n * m];
    for (xr, or) in x.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        if let Some(b) = b {
            or.copy_from_slice(b);
        }
        for (&xv, wr) in xr.iter().zip(w.chunks_exact(m)) {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// `dx[n×k] = dy[n×m] · wᵀ`.
pub fn matmul_dx<T: Scalar>(dy: &[T], w: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); n * k];
    for (dyr, dxr) in dy.chunks_exact(m).zip(dx.chunks_exact_mut(k)) {
        for (d, wr) in dxr.iter_mut().zip(w.chunks_exact(m)) {
            *d = dot(dyr, wr);
        }
    }
    dx
}

/// `dw[k×m] += xᵀ · dy`, `db[m] += Σ_rows dy`.
pub fn matmul_dw<T: Scalar>(x: &[T], dy: &[T], dw: &mut [T], db: Option<&mut [T]>, k: usize, m: usize) {
    for (xr, dyr) in x.chunks_exact(k).zip(dy.chunks_exact(m)) {
        for (&xv, dwr) in xr.iter().zip(dw.chunks_exact_mut(m)) {
            if xv == T::zero() {
                continue;
            }
            for (d, &g) in dwr.iter_mut().zip(dyr) {
                *d += xv * g;
            }
        }
    }
    if let Some(db) = db {
        for dyr in dy.chunks_exact(m) {
            for (d, &g) in db.iter_mut().zip(dyr) {
                *d += g;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub fn add_assign<T: Scalar>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_A) * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = c::<T>(GELU_K);
    let a = c::<T>(GELU_A);
    let inner = k * (x + a * x * x * x);
    let th = inner.tanh();
    let half = c::<T>(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * k * (T::one() + c::<T>(3.0) * a * x * x)
}

/// In-place softmax over entries where `visible` is true; hidden entries are
/// set to exactly zero.
pub fn masked_softmax<T: Scalar>(logits: &mut [T], visible: &[bool]) {
    let mut max = T::neg_infinity();
    for (&l, &v) in logits.iter().zip(visible) {
        if v && l > max {
            max = l;
        }
    }
    let mut sum = T::zero();
    for (l, &v) in logits.iter_mut().zip(visible) {
        *l = if v { (*l - max).exp() } else { T::zero() };
        sum += *l;
    }
    let inv = T::one() / sum;
    for l in logits.iter_mut() {
        *l *= inv;
    }
}
