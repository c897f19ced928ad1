//! The multimodal transformer velocity model.
//!
//! Each observation modality is encoded on its own into a 64-wide token whose
//! first five entries are a learned modality tag. The tokens are laid out as
//! `[observations…, time, actions…]` and passed through pre-norm transformer
//! blocks under a fixed attention mask:
//!
//! * observation and time tokens only see each other,
//! * action token `i` sees every observation token, the time token, and
//!   action tokens `j <= i`.
//!
//! A linear head on each action token yields a 6-vector (linear and angular
//! velocity, or noise / pose delta for the baseline objectives).

pub mod checkpoint;
mod encoder;
mod layers;
pub mod ops;
pub mod train;
mod trunk;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{ActionModel, ActionSequence, VelocitySequence};
pub use layers::{Init, ParamEntry, ParamLayout};
use layers::{slice, Linear};
use ops::{c, Scalar};

use encoder::{ConvEncoder, EncoderCache, MlpEncoder};
use trunk::{Block, BlockCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Tactile,
    Proprio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Tactile, Modality::Proprio];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Tactile => "tactile",
            Modality::Proprio => "proprio",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s.trim() {
            "vision" => Some(Modality::Vision),
            "tactile" | "touch" => Some(Modality::Tactile),
            "proprio" => Some(Modality::Proprio),
            _ => None,
        }
    }

    pub fn token_kind(self) -> TokenKind {
        match self {
            Modality::Vision => TokenKind::Vision,
            Modality::Tactile => TokenKind::Tactile,
            Modality::Proprio => TokenKind::Proprio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Vision,
    Tactile,
    Proprio,
    Action,
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub tag_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub horizon: usize,
    pub image_size: [usize; 2],
    pub tactile_size: [usize; 2],
    pub conv_channels: [usize; 3],
    pub proprio_dim: usize,
    pub proprio_hidden: usize,
    pub time_features: usize,
    /// Modalities with an encoder in this network.
    pub modalities: Vec<Modality>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 64,
            tag_dim: 5,
            layers: 4,
            heads: 4,
            ff_dim: 256,
            horizon: 16,
            image_size: [48, 48],
            tactile_size: [16, 16],
            conv_channels: [8, 16, 32],
            proprio_dim: 6,
            proprio_hidden: 64,
            time_features: 32,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

impl NetConfig {
    /// Two-layer, two-head variant used for gradient checks.
    pub fn reduced() -> Self {
        NetConfig {
            layers: 2,
            heads: 2,
            image_size: [12, 12],
            tactile_size: [8, 8],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim <= self.tag_dim {
            return Err(Error::invalid("latent_dim must exceed tag_dim"));
        }
        if self.heads == 0 || self.latent_dim % self.heads != 0 {
            return Err(Error::invalid("latent_dim must be divisible by heads"));
        }
        if self.horizon == 0 || self.layers == 0 {
            return Err(Error::invalid("horizon and layers must be positive"));
        }
        if self.modalities.is_empty() {
            return Err(Error::invalid("at least one modality is required"));
        }
        if self.time_features % 2 != 0 {
            return Err(Error::invalid("time_features must be even"));
        }
        Ok(())
    }

    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }
}

/// Per-pose input features of an action token: translation (3) plus the first
/// two rotation-matrix columns (6).
pub const ACTION_FEATURES: usize = 9;

/// Output width per action token.
pub const HEAD_OUT: usize = 6;

/// Preprocessed observation in network units. Missing fields are treated as
/// absent modalities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetInput<T> {
    /// `[H, W]` intensities.
    pub image: Option<Vec<T>>,
    /// `[2, H, W]` event channels.
    pub tactile: Option<Vec<T>>,
    pub proprio: Option<Vec<T>>,
}

impl<T: Scalar> NetInput<T> {
    pub fn get(&self, m: Modality) -> Option<&Vec<T>> {
        match m {
            Modality::Vision => self.image.as_ref(),
            Modality::Tactile => self.tactile.as_ref(),
            Modality::Proprio => self.proprio.as_ref(),
        }
    }

    pub fn without(&self, m: Modality) -> Self {
        let mut out = self.clone();
        match m {
            Modality::Vision => out.image = None,
            Modality::Tactile => out.tactile = None,
            Modality::Proprio => out.proprio = None,
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> NetInput<U> {
        let f = |v: &Option<Vec<T>>| v.as_ref().map(|v| v.iter().map(|&x| c::<U>(ops::to_f64(x))).collect());
        NetInput {
            image: f(&self.image),
            tactile: f(&self.tactile),
            proprio: f(&self.proprio),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token<T> {
    pub values: Vec<T>,
    pub kind: TokenKind,
}

/// Transformer input in layout order `[observations…, time, actions…]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet<T> {
    pub observations: Vec<Token<T>>,
    pub time: Token<T>,
    pub actions: Vec<Token<T>>,
}

impl<T: Scalar> TokenSet<T> {
    pub fn len(&self) -> usize {
        self.observations.len() + 1 + self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        self.iter().map(|t| t.kind).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Token<T>> {
        self.observations.iter().chain(std::iter::once(&self.time)).chain(&self.actions)
    }

    fn flat(&self) -> Vec<T> {
        self.iter().flat_map(|t| t.values.iter().copied()).collect()
    }
}

/// `allowed[q * n + k]` is true iff query token `q` may attend to key `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub n: usize,
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.n..(q + 1) * self.n]
    }
}

/// Mask for `n_obs` observation tokens, one time token and `horizon` actions.
pub fn build_attention_mask(n_obs: usize, horizon: usize) -> AttentionMask {
    let ctx = n_obs + 1;
    let n = ctx + horizon;
    let mut allowed = vec![false; n * n];
    for q in 0..n {
        let visible = if q < ctx { ctx } else { q + 1 };
        allowed[q * n..q * n + visible].fill(true);
    }
    AttentionMask { n, allowed }
}

/// Drops the tactile input with probability `p_mask`. Returns whether it was
/// dropped.
pub fn apply_modality_mask<T: Scalar>(input: &mut NetInput<T>, p_mask: f64, rng: &mut impl Rng) -> bool {
    let drop = rng.random::<f64>() < p_mask;
    if drop {
        input.tactile = None;
    }
    drop
}

/// Sinusoidal features of a scalar time in `[0, 1]`, frequencies spaced
/// geometrically from 1 to 200 rad per unit time.
pub fn time_features<T: Scalar>(t: f64, n: usize) -> Vec<T> {
    let half = n / 2;
    let freq = |i: usize| 200f64.powf(i as f64 / (half.max(2) - 1) as f64);
    let sines = (0..half).map(|i| c::<T>((freq(i) * t).sin()));
    let cosines = (0..half).map(|i| c::<T>((freq(i) * t).cos()));
    sines.chain(cosines).collect()
}

/// Action-token features for a (normalized) action sequence.
pub fn action_features<T: Scalar>(actions: &ActionSequence) -> Vec<T> {
    let mut out = Vec::with_capacity(actions.len() * ACTION_FEATURES);
    for p in &actions.poses {
        out.extend(p.translation.iter().map(|&v| c::<T>(v)));
        out.extend(p.rotation.six_d().iter().map(|&v| c::<T>(v)));
    }
    out
}

/// Network structure: parameter offsets for every layer. Parameter values
/// live in a separate flat vector so one net serves `f32` and `f64`.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub cfg: NetConfig,
    layout: ParamLayout,
    tags: usize,
    vision: Option<ConvEncoder>,
    tactile: Option<ConvEncoder>,
    proprio: Option<MlpEncoder>,
    time_embed: Linear,
    action_embed: Linear,
    action_pos: usize,
    blocks: Vec<Block>,
    final_norm: layers::LayerNorm,
    head: Linear,
}

/// Everything recorded by a training forward pass.
pub struct ForwardCache<T> {
    encoders: Vec<(Modality, EncoderCache<T>)>,
    time_features: Vec<T>,
    action_features: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    final_in: Vec<T>,
    final_norm: layers::NormCache<T>,
    final_out: Vec<T>,
    n_obs: usize,
}

impl<T> ForwardCache<T> {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Head-averaged attention probabilities `[n, n]` of one layer.
    pub fn mean_attention(&self, layer: usize) -> Option<Vec<T>>
    where
        T: Scalar,
    {
        self.blocks.get(layer).map(|b| b.mean_probs())
    }

    /// Input to each block plus the trunk output, `[n, d]` each.
    pub fn hidden_states(&self) -> Vec<&[T]> {
        self.blocks.iter().map(|b| b.input()).chain(std::iter::once(self.final_in.as_slice())).collect()
    }
}

impl PolicyNet {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let enc_out = d - cfg.tag_dim;
        let mut layout = ParamLayout::default();
        let tags = layout.add("modality_tags", &[Modality::ALL.len(), cfg.tag_dim], Init::Normal(0.5));
        let vision = cfg.has(Modality::Vision).then(|| {
            ConvEncoder::new(&mut layout, "vision", 1, cfg.image_size, cfg.conv_channels, enc_out)
        });
        let tactile = cfg.has(Modality::Tactile).then(|| {
            ConvEncoder::new(&mut layout, "tactile", 2, cfg.tactile_size, cfg.conv_channels, enc_out)
        });
        let proprio = cfg
            .has(Modality::Proprio)
            .then(|| MlpEncoder::new(&mut layout, "proprio", cfg.proprio_dim, cfg.proprio_hidden, enc_out));
        let time_embed = Linear::new(&mut layout, "time_embed", cfg.time_features, d, (1.0 / cfg.time_features as f64).sqrt());
        let action_embed = Linear::new(&mut layout, "action_embed", ACTION_FEATURES, d, (1.0 / ACTION_FEATURES as f64).sqrt());
        let action_pos = layout.add("action_pos", &[cfg.horizon, d], Init::Normal(0.1));
        let blocks = (0..cfg.layers)
            .map(|i| Block::new(&mut layout, &format!("block{i}"), d, cfg.heads, cfg.ff_dim))
            .collect();
        let final_norm = layers::LayerNorm::new(&mut layout, "final_norm", d);
        let head = Linear::new(&mut layout, "head", d, HEAD_OUT, 0.01);
        Ok(PolicyNet {
            cfg,
            layout,
            tags,
            vision,
            tactile,
            proprio,
            time_embed,
            action_embed,
            action_pos,
            blocks,
            final_norm,
            head,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn init_params<T: Scalar>(&self, rng: &mut impl Rng) -> Vec<T> {
        self.layout.initialize(rng)
    }

    /// Zeroes the output head so every prediction is exactly zero.
    pub fn zero_head<T: Scalar>(&self, params: &mut [T]) {
        let n = self.head.input * self.head.output;
        params[self.head.w..self.head.w + n].fill(T::zero());
        params[self.head.b..self.head.b + self.head.output].fill(T::zero());
    }

    fn check_shapes<T: Scalar>(&self, input: &NetInput<T>) -> Result<()> {
        let expect = |m: Modality| match m {
            Modality::Vision => self.cfg.image_size[0] * self.cfg.image_size[1],
            Modality::Tactile => 2 * self.cfg.tactile_size[0] * self.cfg.tactile_size[1],
            Modality::Proprio => self.cfg.proprio_dim,
        };
        for m in Modality::ALL {
            if let Some(v) = input.get(m) {
                if v.len() != expect(m) {
                    return Err(Error::invalid(format!(
                        "{} input has {} values, expected {}",
                        m.name(),
                        v.len(),
                        expect(m)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Modalities that produce a token for this input, in layout order.
    pub fn present_modalities<T: Scalar>(&self, input: &NetInput<T>, masked_tactile: bool) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|&m| self.cfg.has(m) && input.get(m).is_some())
            .filter(|&m| !(masked_tactile && m == Modality::Tactile))
            .collect()
    }

    fn encode_with_cache<T: Scalar>(
        &self,
        params: &[T],
        input: &NetInput<T>,
        masked_tactile: bool,
    ) -> Result<(Vec<Token<T>>, Vec<(Modality, EncoderCache<T>)>)> {
        self.check_shapes(input)?;
        let present = self.present_modalities(input, masked_tactile);
        if present.is_empty() {
            return Err(Error::invalid("observation has no usable modality"));
        }
        let tag_dim = self.cfg.tag_dim;
        let mut tokens = Vec::with_capacity(present.len());
        let mut caches = Vec::with_capacity(present.len());
        for m in present {
            let x = input.get(m).expect("present");
            let (enc, cache) = match m {
                Modality::Vision => self.vision.as_ref().expect("vision encoder").forward(params, x),
                Modality::Tactile => self.tactile.as_ref().expect("tactile encoder").forward(params, x),
                Modality::Proprio => self.proprio.as_ref().expect("proprio encoder").forward(params, x),
            };
            let mut values = slice(params, self.tags + m.index() * tag_dim, tag_dim).to_vec();
            values.extend(enc);
            tokens.push(Token {
                values,
                kind: m.token_kind(),
            });
            caches.push((m, cache));
        }
        Ok((tokens, caches))
    }

    /// Observation tokens for `input`; the tactile token is omitted when
    /// `masked_tactile` is set or the net has no tactile encoder.
    pub fn encode_observation<T: Scalar>(
        &self,
        params: &[T],
        input: &NetInput<T>,
        masked_tactile: bool,
    ) -> Result<Vec<Token<T>>> {
        Ok(self.encode_with_cache(params, input, masked_tactile)?.0)
    }

    pub fn time_token<T: Scalar>(&self, params: &[T], time: f64) -> Token<T> {
        let f = time_features::<T>(time, self.cfg.time_features);
        Token {
            values: self.time_embed.forward(params, &f),
            kind: TokenKind::Time,
        }
    }

    /// Action tokens from per-pose features `[horizon, 9]`.
    pub fn action_tokens<T: Scalar>(&self, params: &[T], features: &[T]) -> Result<Vec<Token<T>>> {
        let d = self.cfg.latent_dim;
        if features.len() != self.cfg.horizon * ACTION_FEATURES {
            return Err(Error::invalid(format!(
                "expected {} action features, got {}",
                self.cfg.horizon * ACTION_FEATURES,
                features.len()
            )));
        }
        let emb = self.action_embed.forward(params, features);
        let pos = slice(params, self.action_pos, self.cfg.horizon * d);
        Ok(emb
            .chunks_exact(d)
            .zip(pos.chunks_exact(d))
            .map(|(e, p)| Token {
                values: e.iter().zip(p).map(|(&a, &b)| a + b).collect(),
                kind: TokenKind::Action,
            })
            .collect())
    }

    pub fn token_set<T: Scalar>(
        &self,
        params: &[T],
        observations: Vec<Token<T>>,
        actions: &ActionSequence,
        time: f64,
    ) -> Result<TokenSet<T>> {
        let feats = action_features::<T>(actions);
        Ok(TokenSet {
            observations,
            time: self.time_token(params, time),
            actions: self.action_tokens(params, &feats)?,
        })
    }

    fn run_trunk<T: Scalar>(&self, params: &[T], x0: Vec<T>, n_obs: usize) -> Result<(Vec<BlockCache<T>>, Vec<T>)> {
        let d = self.cfg.latent_dim;
        let n = x0.len() / d;
        let mask = build_attention_mask(n_obs, n - n_obs - 1);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = x0;
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, cache) = block.forward(params, x, &mask);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(Some(i), "non-finite activation"));
            }
            caches.push(cache);
            x = y;
        }
        Ok((caches, x))
    }

    fn head_forward<T: Scalar>(&self, params: &[T], trunk_out: &[T], n_obs: usize) -> (Vec<T>, layers::NormCache<T>, Vec<T>) {
        let d = self.cfg.latent_dim;
        let actions = &trunk_out[(n_obs + 1) * d..];
        let (normed, cache) = self.final_norm.forward(params, actions);
        let out = self.head.forward(params, &normed);
        (out, cache, normed)
    }

    /// Runs the transformer on a token set; returns one 6-vector per action
    /// token, `[horizon, 6]` row-major.
    pub fn forward_tokens<T: Scalar>(&self, params: &[T], tokens: &TokenSet<T>) -> Result<Vec<T>> {
        Ok(self.forward_tokens_cached(params, tokens)?.0)
    }

    pub fn forward_tokens_cached<T: Scalar>(&self, params: &[T], tokens: &TokenSet<T>) -> Result<(Vec<T>, ForwardCache<T>)> {
        let n_obs = tokens.observations.len();
        let (blocks, trunk_out) = self.run_trunk(params, tokens.flat(), n_obs)?;
        let (out, final_norm, final_out) = self.head_forward(params, &trunk_out, n_obs);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(Some(self.blocks.len()), "non-finite head output"));
        }
        Ok((
            out,
            ForwardCache {
                encoders: Vec::new(),
                time_features: Vec::new(),
                action_features: Vec::new(),
                blocks,
                final_in: trunk_out,
                final_norm,
                final_out,
                n_obs,
            },
        ))
    }

    /// Full forward pass from raw inputs, keeping everything needed by
    /// [`PolicyNet::backward`].
    pub fn forward_train<T: Scalar>(
        &self,
        params: &[T],
        input: &NetInput<T>,
        action_feats: &[T],
        time: f64,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        let (obs, enc_caches) = self.encode_with_cache(params, input, false)?;
        let tf = time_features::<T>(time, self.cfg.time_features);
        let tokens = TokenSet {
            observations: obs,
            time: Token {
                values: self.time_embed.forward(params, &tf),
                kind: TokenKind::Time,
            },
            actions: self.action_tokens(params, action_feats)?,
        };
        let (out, mut cache) = self.forward_tokens_cached(params, &tokens)?;
        cache.encoders = enc_caches;
        cache.time_features = tf;
        cache.action_features = action_feats.to_vec();
        Ok((out, cache))
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/d(output)`.
    pub fn backward<T: Scalar>(&self, params: &[T], cache: &ForwardCache<T>, d_out: &[T], grads: &mut [T]) {
        let d = self.cfg.latent_dim;
        let n_obs = cache.n_obs;
        let d_normed = self
            .head
            .backward(params, grads, &cache.final_out, d_out, true)
            .expect("dx");
        let d_actions = self.final_norm.backward(params, grads, &cache.final_norm, &d_normed);
        let n = cache.final_in.len() / d;
        let mut dx = vec![T::zero(); n * d];
        dx[(n_obs + 1) * d..].copy_from_slice(&d_actions);

        let mask = build_attention_mask(n_obs, n - n_obs - 1);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = block.backward(params, grads, bc, &dx, &mask);
        }

        // observation tokens: tag entries then encoder output
        let tag_dim = self.cfg.tag_dim;
        for (i, (m, ec)) in cache.encoders.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let tag_off = self.tags + m.index() * tag_dim;
            for (g, &v) in grads[tag_off..tag_off + tag_dim].iter_mut().zip(&row[..tag_dim]) {
                *g += v;
            }
            let d_enc = &row[tag_dim..];
            match m {
                Modality::Vision => self.vision.as_ref().expect("vision").backward(params, grads, ec, d_enc),
                Modality::Tactile => self.tactile.as_ref().expect("tactile").backward(params, grads, ec, d_enc),
                Modality::Proprio => self.proprio.as_ref().expect("proprio").backward(params, grads, ec, d_enc),
            }
        }

        let time_row = &dx[n_obs * d..(n_obs + 1) * d];
        self.time_embed.backward(params, grads, &cache.time_features, time_row, false);

        let action_rows = &dx[(n_obs + 1) * d..];
        for (g, &v) in grads[self.action_pos..self.action_pos + action_rows.len()].iter_mut().zip(action_rows) {
            *g += v;
        }
        self.action_embed
            .backward(params, grads, &cache.action_features, action_rows, false);
    }

    /// Attention of one action-token query at `layer`, averaged over heads,
    /// over all `n` tokens (zero where masked).
    pub fn attention_weights<T: Scalar>(
        &self,
        params: &[T],
        tokens: &TokenSet<T>,
        query: usize,
        layer: usize,
    ) -> Result<Vec<f64>> {
        if query >= tokens.actions.len() {
            return Err(Error::invalid(format!("action index {query} out of range")));
        }
        if layer >= self.blocks.len() {
            return Err(Error::invalid(format!("layer {layer} out of range")));
        }
        let (_, cache) = self.forward_tokens_cached(params, tokens)?;
        let n = tokens.len();
        let probs = cache.mean_attention(layer).expect("layer exists");
        let q = tokens.observations.len() + 1 + query;
        Ok(probs[q * n..(q + 1) * n].iter().map(|&v| ops::to_f64(v)).collect())
    }
}

/// Attention mass grouped by input category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionGroups {
    /// Action tokens plus the time token.
    pub actions: f64,
    pub proprio: f64,
    pub tactile: f64,
    pub vision: f64,
}

impl AttentionGroups {
    pub fn from_weights(weights: &[f64], kinds: &[TokenKind]) -> Self {
        let mut g = AttentionGroups::default();
        for (&w, &k) in weights.iter().zip(kinds) {
            match k {
                TokenKind::Action | TokenKind::Time => g.actions += w,
                TokenKind::Proprio => g.proprio += w,
                TokenKind::Tactile => g.tactile += w,
                TokenKind::Vision => g.vision += w,
            }
        }
        g
    }

    pub fn total(&self) -> f64 {
        self.actions + self.proprio + self.tactile + self.vision
    }
}

/// Objective a network's output head is trained for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Flow,
    Bc,
    Ddpm,
}

impl Objective {
    pub fn parse(s: &str) -> Option<Objective> {
        match s.trim() {
            "flow" => Some(Objective::Flow),
            "bc" => Some(Objective::Bc),
            "ddpm" | "ddim" => Some(Objective::Ddpm),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Flow => "flow",
            Objective::Bc => "bc",
            Objective::Ddpm => "ddpm",
        }
    }
}

/// A frozen network plus parameters, conditioned on pre-encoded observation
/// tokens. Implements [`ActionModel`] for the flow and diffusion samplers.
pub struct Policy<'a, T> {
    pub net: &'a PolicyNet,
    pub params: &'a [T],
}

impl<T: Scalar> ActionModel for Policy<'_, T> {
    type Context = [Token<T>];

    fn predict(&self, obs: &[Token<T>], actions: &ActionSequence, time: f64) -> Result<VelocitySequence> {
        let tokens = self.net.token_set(self.params, obs.to_vec(), actions, time)?;
        let out = self.net.forward_tokens(self.params, &tokens)?;
        let flat: Vec<f64> = out.iter().map(|&v| ops::to_f64(v)).collect();
        Ok(VelocitySequence::from_flat(&flat))
    }
}
