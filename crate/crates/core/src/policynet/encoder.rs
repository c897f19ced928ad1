//! Per-modality observation encoders, trained from scratch.

use super::layers::{Conv2d, Linear, ParamLayout};
use super::ops::{c, gelu, gelu_grad, Scalar};

/// Activations kept for the backward pass.
pub enum EncoderCache<T> {
    Conv {
        /// Input to each conv layer.
        inputs: Vec<Vec<T>>,
        /// Pre-activation output of each conv layer.
        pre: Vec<Vec<T>>,
        /// Spatial size of each conv input.
        sizes: Vec<(usize, usize)>,
        pooled: Vec<T>,
    },
    Mlp {
        input: Vec<T>,
        pre: Vec<T>,
        hidden: Vec<T>,
    },
}

/// Three stride-2 conv blocks, global average pool, linear projection.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    convs: Vec<Conv2d>,
    proj: Linear,
    size: [usize; 2],
}

impl ConvEncoder {
    pub fn new(layout: &mut ParamLayout, name: &str, in_ch: usize, size: [usize; 2], channels: [usize; 3], out: usize) -> Self {
        let mut convs = Vec::with_capacity(3);
        let mut prev = in_ch;
        for (i, &ch) in channels.iter().enumerate() {
            convs.push(Conv2d::new(layout, &format!("{name}.conv{i}"), prev, ch));
            prev = ch;
        }
        let proj = Linear::new(layout, &format!("{name}.proj"), prev, out, (1.0 / prev as f64).sqrt());
        ConvEncoder { convs, proj, size }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, EncoderCache<T>) {
        let (mut h, mut w) = (self.size[0], self.size[1]);
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut sizes = Vec::with_capacity(self.convs.len());
        let mut cur = x.to_vec();
        for conv in &self.convs {
            let y = conv.forward(p, &cur, h, w);
            sizes.push((h, w));
            inputs.push(cur);
            cur = y.iter().map(|&v| gelu(v)).collect();
            pre.push(y);
            h = Conv2d::out_size(h);
            w = Conv2d::out_size(w);
        }
        let ch = self.convs.last().expect("conv layers").out_ch;
        let area = h * w;
        let inv = c::<T>(1.0 / area as f64);
        let pooled: Vec<T> = cur.chunks_exact(area).map(|pl| pl.iter().copied().sum::<T>() * inv).collect();
        debug_assert_eq!(pooled.len(), ch);
        let out = self.proj.forward(p, &pooled);
        (
            out,
            EncoderCache::Conv {
                inputs,
                pre,
                sizes,
                pooled,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &EncoderCache<T>, dy: &[T]) {
        let EncoderCache::Conv { inputs, pre, sizes, pooled } = cache else {
            unreachable!("conv encoder cache")
        };
        let d_pooled = self.proj.backward(p, g, pooled, dy, true).expect("dx");
        let last = pre.last().expect("conv layers");
        let area = last.len() / d_pooled.len();
        let inv = c::<T>(1.0 / area as f64);
        let mut d_act: Vec<T> = d_pooled.iter().flat_map(|&d| std::iter::repeat_n(d * inv, area)).collect();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let d_pre: Vec<T> = d_act.iter().zip(&pre[i]).map(|(&d, &u)| d * gelu_grad(u)).collect();
            let (h, w) = sizes[i];
            match conv.backward(p, g, &inputs[i], h, w, &d_pre, i > 0) {
                Some(dx) => d_act = dx,
                None => break,
            }
        }
    }
}

/// Two-layer perceptron.
#[derive(Clone, Debug)]
pub struct MlpEncoder {
    l1: Linear,
    l2: Linear,
}

impl MlpEncoder {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, hidden: usize, out: usize) -> Self {
        MlpEncoder {
            l1: Linear::new(layout, &format!("{name}.fc0"), input, hidden, (2.0 / input as f64).sqrt()),
            l2: Linear::new(layout, &format!("{name}.fc1"), hidden, out, (1.0 / hidden as f64).sqrt()),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, EncoderCache<T>) {
        let pre = self.l1.forward(p, x);
        let hidden: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let out = self.l2.forward(p, &hidden);
        (
            out,
            EncoderCache::Mlp {
                input: x.to_vec(),
                pre,
                hidden,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &EncoderCache<T>, dy: &[T]) {
        let EncoderCache::Mlp { input, pre, hidden } = cache else {
            unreachable!("mlp encoder cache")
        };
        let dh = self.l2.backward(p, g, hidden, dy, true).expect("dx");
        let dpre: Vec<T> = dh.iter().zip(pre).map(|(&d, &u)| d * gelu_grad(u)).collect();
        self.l1.backward(p, g, input, &dpre, false);
    }
}
