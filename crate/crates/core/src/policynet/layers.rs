//! Parameter layout and the differentiable building blocks of the network.
//!
//! Every layer stores offsets into one flat parameter vector; gradients use
//! the same layout. Backward passes accumulate into the gradient slice.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{c, matmul_bias, matmul_dw, matmul_dx, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.total;
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            init,
        };
        self.total += entry.len();
        self.entries.push(entry);
        offset
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn initialize<T: Scalar>(&self, rng: &mut impl Rng) -> Vec<T> {
        let mut out = vec![T::zero(); self.total];
        for e in &self.entries {
            let slot = &mut out[e.offset..e.offset + e.len()];
            match e.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(T::one()),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("valid std");
                    for v in slot {
                        *v = c(dist.sample(rng));
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub fn slice<T>(p: &[T], off: usize, len: usize) -> &[T] {
    &p[off..off + len]
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, output: usize, std: f64) -> Self {
        Self::with_init(layout, name, input, output, Init::Normal(std))
    }

    pub fn with_init(layout: &mut ParamLayout, name: &str, input: usize, output: usize, init: Init) -> Self {
        let w = layout.add(format!("{name}.weight"), &[input, output], init);
        let b = layout.add(format!("{name}.bias"), &[output], Init::Zeros);
        Linear { w, b, input, output }
    }

    pub fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        slice(p, self.w, self.input * self.output)
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> Vec<T> {
        let n = x.len() / self.input;
        matmul_bias(x, self.weight(p), Some(slice(p, self.b, self.output)), n, self.input, self.output)
    }

    /// Accumulates parameter gradients and returns `dL/dx` when requested.
    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T], need_dx: bool) -> Option<Vec<T>> {
        let n = x.len() / self.input;
        let (gw, gb) = split_pair(g, self.w, self.input * self.output, self.b, self.output);
        matmul_dw(x, dy, gw, Some(gb), self.input, self.output);
        need_dx.then(|| matmul_dx(dy, self.weight(p), n, self.input, self.output))
    }
}

/// Two disjoint mutable sub-slices of the gradient vector.
pub fn split_pair<T>(g: &mut [T], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [T], &mut [T]) {
    if a < b {
        let (lo, hi) = g.split_at_mut(b);
        (&mut lo[a..a + alen], &mut hi[..blen])
    } else {
        let (lo, hi) = g.split_at_mut(a);
        (&mut hi[..alen], &mut lo[b..b + blen])
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
    pub dim: usize,
}

/// Per-row statistics kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        let gamma = layout.add(format!("{name}.gamma"), &[dim], Init::Ones);
        let beta = layout.add(format!("{name}.beta"), &[dim], Init::Zeros);
        LayerNorm { gamma, beta, dim }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, NormCache<T>) {
        let d = self.dim;
        let gamma = slice(p, self.gamma, d);
        let beta = slice(p, self.beta, d);
        let n = x.len() / d;
        let inv_d = c::<T>(1.0 / d as f64);
        let mut y = vec![T::zero(); x.len()];
        let mut cache = NormCache {
            xhat: vec![T::zero(); x.len()],
            rstd: Vec::with_capacity(n),
        };
        for ((xr, yr), hr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(cache.xhat.chunks_exact_mut(d)) {
            let mean = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rstd = T::one() / (var + c(Self::EPS)).sqrt();
            for i in 0..d {
                let h = (xr[i] - mean) * rstd;
                hr[i] = h;
                yr[i] = h * gamma[i] + beta[i];
            }
            cache.rstd.push(rstd);
        }
        (y, cache)
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &NormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let gamma = slice(p, self.gamma, d);
        let inv_d = c::<T>(1.0 / d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        {
            let (gg, gb) = split_pair(g, self.gamma, d, self.beta, d);
            for (dyr, hr) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
                for i in 0..d {
                    gg[i] += dyr[i] * hr[i];
                    gb[i] += dyr[i];
                }
            }
        }
        for (((dyr, hr), dxr), &rstd) in dy
            .chunks_exact(d)
            .zip(cache.xhat.chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
            .zip(&cache.rstd)
        {
            let mut sum_dh = T::zero();
            let mut sum_dh_h = T::zero();
            for i in 0..d {
                let dh = dyr[i] * gamma[i];
                sum_dh += dh;
                sum_dh_h += dh * hr[i];
            }
            for i in 0..d {
                let dh = dyr[i] * gamma[i];
                dxr[i] = rstd * (dh - inv_d * sum_dh - hr[i] * inv_d * sum_dh_h);
            }
        }
        dx
    }
}

/// 3×3 convolution, stride 2, zero padding 1, channel-major `[C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: usize,
    pub b: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    const K: usize = 3;
    const STRIDE: usize = 2;

    pub fn new(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize) -> Self {
        let fan_in = (in_ch * Self::K * Self::K) as f64;
        let w = layout.add(
            format!("{name}.weight"),
            &[out_ch, in_ch, Self::K, Self::K],
            Init::Normal((2.0 / fan_in).sqrt()),
        );
        let b = layout.add(format!("{name}.bias"), &[out_ch], Init::Zeros);
        Conv2d { w, b, in_ch, out_ch }
    }

    pub fn out_size(h: usize) -> usize {
        (h + 1) / Self::STRIDE
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = (Self::out_size(h), Self::out_size(w));
        let kk = Self::K * Self::K;
        let weight = slice(p, self.w, self.out_ch * self.in_ch * kk);
        let bias = slice(p, self.b, self.out_ch);
        let mut out = vec![T::zero(); self.out_ch * ho * wo];
        for co in 0..self.out_ch {
            let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
            plane.fill(bias[co]);
            for ci in 0..self.in_ch {
                let src = &x[ci * h * w..(ci + 1) * h * w];
                let ker = &weight[(co * self.in_ch + ci) * kk..(co * self.in_ch + ci + 1) * kk];
                for oy in 0..ho {
                    for ky in 0..Self::K {
                        let iy = (oy * Self::STRIDE + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * wo..(oy + 1) * wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let mut s = T::zero();
                            for kx in 0..Self::K {
                                let ix = (ox * Self::STRIDE + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    s += ker[ky * Self::K + kx] * row[ix as usize];
                                }
                            }
                            *o += s;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        x: &[T],
        h: usize,
        w: usize,
        dy: &[T],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let (ho, wo) = (Self::out_size(h), Self::out_size(w));
        let kk = Self::K * Self::K;
        let weight = slice(p, self.w, self.out_ch * self.in_ch * kk);
        let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
        let (gw, gb) = split_pair(g, self.w, self.out_ch * self.in_ch * kk, self.b, self.out_ch);
        for co in 0..self.out_ch {
            let dplane = &dy[co * ho * wo..(co + 1) * ho * wo];
            gb[co] += dplane.iter().copied().sum::<T>();
            for ci in 0..self.in_ch {
                let src = &x[ci * h * w..(ci + 1) * h * w];
                let base = (co * self.in_ch + ci) * kk;
                for oy in 0..ho {
                    for ky in 0..Self::K {
                        let iy = (oy * Self::STRIDE + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..Self::K {
                            let wk = weight[base + ky * Self::K + kx];
                            let mut acc = T::zero();
                            for ox in 0..wo {
                                let ix = (ox * Self::STRIDE + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let gy = dplane[oy * wo + ox];
                                acc += gy * src[iy * w + ix as usize];
                                if let Some(dx) = dx.as_mut() {
                                    dx[ci * h * w + iy * w + ix as usize] += gy * wk;
                                }
                            }
                            gw[base + ky * Self::K + kx] += acc;
                        }
                    }
                }
            }
        }
        dx
    }
}
