//! Pre-norm transformer block with masked multi-head self-attention.

use super::layers::{LayerNorm, Linear, NormCache, ParamLayout};
use super::ops::{add_assign, c, dot, gelu, gelu_grad, masked_softmax, Scalar};
use super::AttentionMask;

#[derive(Clone, Debug)]
pub struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    dim: usize,
    heads: usize,
}

pub struct BlockCache<T> {
    x: Vec<T>,
    ln1: NormCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    /// `[heads, n, n]`, zero on masked entries.
    probs: Vec<T>,
    att: Vec<T>,
    ln2: NormCache<T>,
    h2: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    n: usize,
    heads: usize,
}

impl<T> BlockCache<T> {
    pub fn input(&self) -> &[T] {
        &self.x
    }
}

impl<T: Scalar> BlockCache<T> {
    pub fn mean_probs(&self) -> Vec<T> {
        let nn = self.n * self.n;
        let inv = c::<T>(1.0 / self.heads as f64);
        (0..nn)
            .map(|i| (0..self.heads).map(|h| self.probs[h * nn + i]).sum::<T>() * inv)
            .collect()
    }
}

impl Block {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, heads: usize, ff: usize) -> Self {
        let s = (1.0 / dim as f64).sqrt();
        Block {
            ln1: LayerNorm::new(layout, &format!("{name}.ln1"), dim),
            qkv: Linear::new(layout, &format!("{name}.attn.qkv"), dim, 3 * dim, s),
            proj: Linear::new(layout, &format!("{name}.attn.proj"), dim, dim, s * 0.5),
            ln2: LayerNorm::new(layout, &format!("{name}.ln2"), dim),
            ff1: Linear::new(layout, &format!("{name}.ff.fc0"), dim, ff, s),
            ff2: Linear::new(layout, &format!("{name}.ff.fc1"), ff, dim, (1.0 / ff as f64).sqrt() * 0.5),
            dim,
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: Vec<T>, mask: &AttentionMask) -> (Vec<T>, BlockCache<T>) {
        let d = self.dim;
        let n = x.len() / d;
        let dh = d / self.heads;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());

        let (h1, ln1) = self.ln1.forward(p, &x);
        let qkv = self.qkv.forward(p, &h1);
        let mut probs = vec![T::zero(); self.heads * n * n];
        let mut att = vec![T::zero(); n * d];
        for h in 0..self.heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for i in 0..n {
                let visible = mask.row(i);
                let q = &qkv[i * 3 * d + qo..i * 3 * d + qo + dh];
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                for (j, r) in row.iter_mut().enumerate() {
                    if visible[j] {
                        *r = dot(q, &qkv[j * 3 * d + ko..j * 3 * d + ko + dh]) * scale;
                    }
                }
                masked_softmax(row, visible);
                let out = &mut att[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..n {
                    if !visible[j] {
                        continue;
                    }
                    let w = row[j];
                    for (o, &v) in out.iter_mut().zip(&qkv[j * 3 * d + vo..j * 3 * d + vo + dh]) {
                        *o += w * v;
                    }
                }
            }
        }
        let o = self.proj.forward(p, &att);
        let mut x2 = x.clone();
        add_assign(&mut x2, &o);

        let (h2, ln2) = self.ln2.forward(p, &x2);
        let ff_pre = self.ff1.forward(p, &h2);
        let ff_act: Vec<T> = ff_pre.iter().map(|&u| gelu(u)).collect();
        let f = self.ff2.forward(p, &ff_act);
        let mut y = x2;
        add_assign(&mut y, &f);

        let cache = BlockCache {
            x,
            ln1,
            h1,
            qkv,
            probs,
            att,
            ln2,
            h2,
            ff_pre,
            ff_act,
            n,
            heads: self.heads,
        };
        (y, cache)
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &BlockCache<T>, dy: &[T], mask: &AttentionMask) -> Vec<T> {
        let d = self.dim;
        let n = cache.n;
        let dh = d / self.heads;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());

        // feed-forward branch
        let d_act = self.ff2.backward(p, g, &cache.ff_act, dy, true).expect("dx");
        let d_pre: Vec<T> = d_act.iter().zip(&cache.ff_pre).map(|(&a, &u)| a * gelu_grad(u)).collect();
        let d_h2 = self.ff1.backward(p, g, &cache.h2, &d_pre, true).expect("dx");
        let mut dx2 = self.ln2.backward(p, g, &cache.ln2, &d_h2);
        add_assign(&mut dx2, dy);

        // attention branch
        let d_att = self.proj.backward(p, g, &cache.att, &dx2, true).expect("dx");
        let qkv = &cache.qkv;
        let mut d_qkv = vec![T::zero(); n * 3 * d];
        let mut dp = vec![T::zero(); n];
        for h in 0..self.heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for i in 0..n {
                let visible = mask.row(i);
                let probs = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let da = &d_att[i * d + h * dh..i * d + (h + 1) * dh];
                let mut weighted = T::zero();
                for j in 0..n {
                    if !visible[j] {
                        dp[j] = T::zero();
                        continue;
                    }
                    let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                    dp[j] = dot(da, v);
                    weighted += probs[j] * dp[j];
                    let dv = &mut d_qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                    for (o, &a) in dv.iter_mut().zip(da) {
                        *o += probs[j] * a;
                    }
                }
                for j in 0..n {
                    if !visible[j] {
                        continue;
                    }
                    let ds = probs[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for t in 0..dh {
                        let kj = qkv[j * 3 * d + ko + t];
                        let qi = qkv[i * 3 * d + qo + t];
                        d_qkv[i * 3 * d + qo + t] += ds * kj;
                        d_qkv[j * 3 * d + ko + t] += ds * qi;
                    }
                }
            }
        }
        let d_h1 = self.qkv.backward(p, g, &cache.h1, &d_qkv, true).expect("dx");
        let mut dx = self.ln1.backward(p, g, &cache.ln1, &d_h1);
        add_assign(&mut dx, &dx2);
        dx
    }
}
