//! The shared network: an optional trainable text lift followed by one
//! media-agnostic convolutional trunk, a dense feature layer (the common
//! representation) and a linear classification head.
//!
//! Everything is generic over [`Scalar`] so training runs in `f32` while
//! gradient checks can run the identical code in `f64`.

pub mod checkpoint;
pub mod layers;
mod params;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::params::{ParamBlock, ParameterSet};

use self::layers::*;
use crate::encoding::text::one_hot_like_table;
use crate::error::{Error, Result};
use crate::media::{EncodedSample, Media};

/// Floating-point element type usable by the network.
pub trait Scalar:
    Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 conversion")
}

/// One trunk layer. Convolutions are 3x3 with padding 1; pooling is 2x2 max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv { channels: usize },
    Relu,
    MaxPool,
    Dense { units: usize },
}

/// Geometry of the trainable text front end: a character embedding, two
/// width-3 1-D convolutions (the second one strided and producing `S`
/// channels), then a 3x3 convolution lifting the `S x S` map to `C_in`
/// channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextLiftConfig {
    pub max_len: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub hidden_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub feature_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub text: TextLiftConfig,
}

impl BackboneConfig {
    /// The small default network used at desk scale.
    pub fn desk(classes: usize, vocab_size: usize) -> Self {
        BackboneConfig {
            input_size: 32,
            input_channels: 3,
            layers: vec![
                LayerSpec::Conv { channels: 8 },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Conv { channels: 16 },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
            ],
            feature_dim: 32,
            classes,
            seed: 7,
            text: TextLiftConfig {
                max_len: 64,
                embed_dim: 16,
                vocab_size,
                hidden_channels: 32,
                stride: 2,
            },
        }
    }

    /// Stable 64-bit digest of the configuration.
    pub fn hash(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Conv { w: usize, b: usize, cin: usize, cout: usize, h: usize, wd: usize },
    Relu,
    MaxPool { c: usize, h: usize, wd: usize },
    Dense { w: usize, b: usize, out: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DenseOp {
    w: usize,
    b: usize,
    out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LiftOps {
    embed: usize,
    c1: (usize, usize),
    c2: (usize, usize),
    c3: (usize, usize),
}

/// Network input: a uniform grid, or text tokens that take the lift path.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, T> {
    Grid(&'a [T]),
    Text(&'a [Option<usize>]),
}

#[derive(Debug, Clone)]
struct TextTrace<T> {
    tokens: Vec<Option<usize>>,
    /// Embedded characters, `[embed_dim][max_len]`.
    chars: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    config_hash: u64,
    text: Option<TextTrace<T>>,
    /// `acts[i]` is the input of trunk op `i`; the last entry feeds the
    /// feature layer.
    acts: Vec<Vec<T>>,
    argmax: Vec<Option<Vec<u32>>>,
    feature: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn feature(&self) -> &[T] {
        &self.feature
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// The grid that entered the trunk (the lifted grid for text inputs).
    pub fn trunk_input(&self) -> &[T] {
        &self.acts[0]
    }

    /// ReLU on/off pattern and pooling winners. Two parameter settings with
    /// the same pattern lie in the same linear region of the network.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, a) in self.acts.iter().enumerate().skip(1) {
            if let Some(Some(arg)) = self.argmax.get(i - 1) {
                out.extend_from_slice(arg);
            }
            out.extend(a.iter().map(|v| u32::from(*v > T::zero())));
        }
        out
    }
}

/// Common-representation vector for one network input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub media: Media,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: BackboneConfig,
    config_hash: u64,
    trunk: Vec<Op>,
    feature: DenseOp,
    head: DenseOp,
    lift: LiftOps,
    params: ParameterSet<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network with seeded fan-in-scaled uniform weights
    /// (`U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`) and zero biases.
    pub fn new(config: BackboneConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::build(config, &mut |fan_in, n| {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| cast(rng.random_range(-bound..bound))).collect()
        })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(config: BackboneConfig) -> Result<Self> {
        let mut m = Self::build(config, &mut |_, n| vec![T::zero(); n])?;
        m.params.fill(T::zero());
        Ok(m)
    }

    fn build(config: BackboneConfig, init: &mut dyn FnMut(usize, usize) -> Vec<T>) -> Result<Self> {
        let cfg = &config;
        if cfg.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be at least 2".into()));
        }
        if cfg.classes < 2 {
            return Err(Error::Config("class count must be at least 2".into()));
        }
        if cfg.input_size == 0 || cfg.input_channels == 0 {
            return Err(Error::Config("input shape must be non-empty".into()));
        }
        let t = cfg.text;
        if t.max_len == 0 || t.embed_dim == 0 || t.vocab_size == 0 || t.hidden_channels == 0 || t.stride == 0 {
            return Err(Error::Config("text lift dimensions must be positive".into()));
        }
        let lifted = conv1d_out_len(t.max_len, t.stride);
        if lifted != cfg.input_size {
            return Err(Error::Shape(format!(
                "text lift produces length {lifted} from {} characters at stride {}, grid side is {}",
                t.max_len, t.stride, cfg.input_size
            )));
        }

        let mut params = ParameterSet::new();
        let mut add = |params: &mut ParameterSet<T>, name: String, shape: Vec<usize>, fan_in: usize, zero: bool| {
            let n = shape.iter().product();
            let data = if zero { vec![T::zero(); n] } else { init(fan_in, n) };
            params.push(name, shape, data)
        };

        let embed = params.push(
            "text.embed",
            vec![t.vocab_size, t.embed_dim],
            one_hot_like_table(t.vocab_size, t.embed_dim, cfg.seed ^ 0x5eed)
                .into_iter()
                .map(cast)
                .collect(),
        );
        let s = cfg.input_size;
        let c1 = (
            add(&mut params, "text.conv1.w".into(), vec![t.hidden_channels, t.embed_dim, 3], t.embed_dim * 3, false),
            add(&mut params, "text.conv1.b".into(), vec![t.hidden_channels], 1, true),
        );
        let c2 = (
            add(&mut params, "text.conv2.w".into(), vec![s, t.hidden_channels, 3], t.hidden_channels * 3, false),
            add(&mut params, "text.conv2.b".into(), vec![s], 1, true),
        );
        let c3 = (
            add(&mut params, "text.lift.w".into(), vec![cfg.input_channels, 1, 3, 3], 9, false),
            add(&mut params, "text.lift.b".into(), vec![cfg.input_channels], 1, true),
        );
        let lift = LiftOps { embed, c1, c2, c3 };

        // Walk the trunk, tracking the activation shape.
        let (mut c, mut h, mut w) = (cfg.input_channels, s, s);
        let mut flat: Option<usize> = None;
        let mut trunk = Vec::new();
        for (i, spec) in cfg.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Conv { channels } => {
                    if flat.is_some() {
                        return Err(Error::Shape(format!("layer {i}: convolution after a dense layer")));
                    }
                    if channels == 0 {
                        return Err(Error::Config(format!("layer {i}: zero conv channels")));
                    }
                    let wi = add(&mut params, format!("trunk.{i}.conv.w"), vec![channels, c, 3, 3], c * 9, false);
                    let bi = add(&mut params, format!("trunk.{i}.conv.b"), vec![channels], 1, true);
                    trunk.push(Op::Conv { w: wi, b: bi, cin: c, cout: channels, h, wd: w });
                    c = channels;
                }
                LayerSpec::Relu => trunk.push(Op::Relu),
                LayerSpec::MaxPool => {
                    if flat.is_some() {
                        return Err(Error::Shape(format!("layer {i}: pooling after a dense layer")));
                    }
                    if h % 2 != 0 || w % 2 != 0 || h < 2 {
                        return Err(Error::Shape(format!("layer {i}: cannot 2x2-pool a {h}x{w} map")));
                    }
                    trunk.push(Op::MaxPool { c, h, wd: w });
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {i}: zero dense units")));
                    }
                    let fan_in = flat.unwrap_or(c * h * w);
                    let wi = add(&mut params, format!("trunk.{i}.dense.w"), vec![units, fan_in], fan_in, false);
                    let bi = add(&mut params, format!("trunk.{i}.dense.b"), vec![units], 1, true);
                    trunk.push(Op::Dense { w: wi, b: bi, out: units });
                    flat = Some(units);
                }
            }
        }
        let fan_in = flat.unwrap_or(c * h * w);
        let d = cfg.feature_dim;
        let feature = DenseOp {
            w: add(&mut params, "feature.w".into(), vec![d, fan_in], fan_in, false),
            b: add(&mut params, "feature.b".into(), vec![d], 1, true),
            out: d,
        };
        let head = DenseOp {
            w: add(&mut params, "head.w".into(), vec![cfg.classes, d], d, false),
            b: add(&mut params, "head.b".into(), vec![cfg.classes], 1, true),
            out: cfg.classes,
        };
        let config_hash = config.hash();
        Ok(Model {
            config,
            config_hash,
            trunk,
            feature,
            head,
            lift,
            params,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    /// Replaces the parameters; the layout must match.
    pub fn set_params(&mut self, params: ParameterSet<T>) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::Shape("parameter layout does not match the model".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.config.input_size * self.config.input_size * self.config.input_channels
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            config_hash: self.config_hash,
            trunk: self.trunk.clone(),
            feature: self.feature,
            head: self.head,
            lift: self.lift,
            params: self.params.cast(),
        }
    }

    fn lift_forward(&self, tokens: &[Option<usize>]) -> Result<(TextTrace<T>, Vec<T>)> {
        let t = self.config.text;
        if tokens.len() > t.max_len {
            return Err(Error::Shape(format!(
                "{} tokens exceed the text length {}",
                tokens.len(),
                t.max_len
            )));
        }
        if let Some(bad) = tokens.iter().flatten().find(|&&i| i >= t.vocab_size) {
            return Err(Error::Shape(format!("token {bad} outside vocabulary of {}", t.vocab_size)));
        }
        let p = &self.params;
        let table = p.data(self.lift.embed);
        // [embed][len] layout for the 1-D convolutions.
        let mut chars = vec![T::zero(); t.embed_dim * t.max_len];
        for (pos, tok) in tokens.iter().enumerate() {
            if let Some(v) = tok {
                for e in 0..t.embed_dim {
                    chars[e * t.max_len + pos] = table[v * t.embed_dim + e];
                }
            }
        }
        let s = self.config.input_size;
        let (w1, b1) = self.lift.c1;
        let (w2, b2) = self.lift.c2;
        let (w3, b3) = self.lift.c3;
        let h1 = conv1d_forward(&chars, t.embed_dim, t.max_len, p.data(w1), p.data(b1), t.hidden_channels, 1);
        let h2 = conv1d_forward(&h1, t.hidden_channels, t.max_len, p.data(w2), p.data(b2), s, t.stride);
        let grid = conv2d_forward(&h2, 1, s, s, p.data(w3), p.data(b3), self.config.input_channels);
        let trace = TextTrace {
            tokens: tokens.to_vec(),
            chars,
            h1,
            h2,
        };
        Ok((trace, grid))
    }

    /// Lifts text tokens to the uniform grid.
    pub fn lift_text(&self, tokens: &[Option<usize>]) -> Result<Vec<T>> {
        self.lift_forward(tokens).map(|(_, g)| g)
    }

    pub fn forward(&self, input: Input<'_, T>) -> Result<Trace<T>> {
        let (text, grid) = match input {
            Input::Grid(g) => {
                if g.len() != self.grid_len() {
                    return Err(Error::Shape(format!(
                        "input has {} values, model expects {}x{}x{}",
                        g.len(),
                        self.config.input_size,
                        self.config.input_size,
                        self.config.input_channels
                    )));
                }
                (None, g.to_vec())
            }
            Input::Text(tokens) => {
                let (tt, g) = self.lift_forward(tokens)?;
                (Some(tt), g)
            }
        };
        let p = &self.params;
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        let mut argmax = Vec::with_capacity(self.trunk.len());
        acts.push(grid);
        for op in &self.trunk {
            let x = acts.last().unwrap();
            let (y, arg) = match *op {
                Op::Conv { w, b, cin, cout, h, wd } => {
                    (conv2d_forward(x, cin, h, wd, p.data(w), p.data(b), cout), None)
                }
                Op::Relu => (x.iter().map(|&v| v.max(T::zero())).collect(), None),
                Op::MaxPool { c, h, wd } => {
                    let (y, a) = maxpool_forward(x, c, h, wd);
                    (y, Some(a))
                }
                Op::Dense { w, b, out } => (dense_forward(x, p.data(w), p.data(b), out), None),
            };
            acts.push(y);
            argmax.push(arg);
        }
        let f = self.feature;
        let feature = dense_forward(acts.last().unwrap(), p.data(f.w), p.data(f.b), f.out);
        let hd = self.head;
        let logits = dense_forward(&feature, p.data(hd.w), p.data(hd.b), hd.out);
        Ok(Trace {
            config_hash: self.config_hash,
            text,
            acts,
            argmax,
            feature,
            logits,
        })
    }

    /// Accumulates into `grads` the parameter gradient of
    /// `<grad_feature, feature> + <grad_logits, logits>` and returns the
    /// gradient with respect to the trunk input grid.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_feature: &[T],
        grad_logits: &[T],
        grads: &mut ParameterSet<T>,
    ) -> Result<Vec<T>> {
        if trace.config_hash != self.config_hash || trace.acts.len() != self.trunk.len() + 1 {
            return Err(Error::Shape("trace was not produced by this model".into()));
        }
        if grad_feature.len() != self.feature.out || grad_logits.len() != self.head.out {
            return Err(Error::Shape("upstream gradient sizes do not match feature/logit sizes".into()));
        }
        if !grads.same_layout(&self.params) {
            return Err(Error::Shape("gradient buffer layout does not match the model".into()));
        }
        let p = &self.params;

        let hd = self.head;
        let mut g_feat = {
            let (gw, gb) = grads.pair_mut(hd.w, hd.b);
            dense_backward(&trace.feature, grad_logits, p.data(hd.w), gw, gb)
        };
        for (g, &u) in g_feat.iter_mut().zip(grad_feature) {
            *g += u;
        }
        let f = self.feature;
        let mut g = {
            let (gw, gb) = grads.pair_mut(f.w, f.b);
            dense_backward(trace.acts.last().unwrap(), &g_feat, p.data(f.w), gw, gb)
        };

        for (i, op) in self.trunk.iter().enumerate().rev() {
            let x = &trace.acts[i];
            g = match *op {
                Op::Conv { w, b, cin, cout, h, wd } => {
                    let mut gin = vec![T::zero(); x.len()];
                    let (gw, gb) = grads.pair_mut(w, b);
                    conv2d_backward(x, &g, cin, h, wd, p.data(w), cout, gw, gb, Some(&mut gin));
                    gin
                }
                Op::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect(),
                Op::MaxPool { .. } => {
                    let arg = trace.argmax[i].as_ref().expect("pool trace");
                    maxpool_backward(&g, arg, x.len())
                }
                Op::Dense { w, b, .. } => {
                    let (gw, gb) = grads.pair_mut(w, b);
                    dense_backward(x, &g, p.data(w), gw, gb)
                }
            };
        }

        if let Some(tt) = &trace.text {
            self.lift_backward(tt, &g, grads);
        }
        Ok(g)
    }

    fn lift_backward(&self, tt: &TextTrace<T>, grad_grid: &[T], grads: &mut ParameterSet<T>) {
        let t = self.config.text;
        let s = self.config.input_size;
        let p = &self.params;
        let (w1, b1) = self.lift.c1;
        let (w2, b2) = self.lift.c2;
        let (w3, b3) = self.lift.c3;

        let mut g_h2 = vec![T::zero(); tt.h2.len()];
        {
            let (gw, gb) = grads.pair_mut(w3, b3);
            conv2d_backward(&tt.h2, grad_grid, 1, s, s, p.data(w3), self.config.input_channels, gw, gb, Some(&mut g_h2));
        }
        let mut g_h1 = vec![T::zero(); tt.h1.len()];
        {
            let (gw, gb) = grads.pair_mut(w2, b2);
            conv1d_backward(&tt.h1, &g_h2, t.hidden_channels, t.max_len, p.data(w2), s, t.stride, gw, gb, &mut g_h1);
        }
        let mut g_chars = vec![T::zero(); tt.chars.len()];
        {
            let (gw, gb) = grads.pair_mut(w1, b1);
            conv1d_backward(&tt.chars, &g_h1, t.embed_dim, t.max_len, p.data(w1), t.hidden_channels, 1, gw, gb, &mut g_chars);
        }
        let g_table = grads.data_mut(self.lift.embed);
        for (pos, tok) in tt.tokens.iter().enumerate() {
            if let Some(v) = tok {
                for e in 0..t.embed_dim {
                    g_table[v * t.embed_dim + e] += g_chars[e * t.max_len + pos];
                }
            }
        }
    }
}

impl Model<f32> {
    /// Feature and logits for an encoded grid.
    pub fn forward_sample(&self, sample: &EncodedSample) -> Result<(FeatureVector, Vec<f32>)> {
        if sample.size != self.config.input_size || sample.channels != self.config.input_channels {
            return Err(Error::Shape(format!(
                "sample is {}x{}x{}, model expects {}x{}x{}",
                sample.size,
                sample.size,
                sample.channels,
                self.config.input_size,
                self.config.input_size,
                self.config.input_channels
            )));
        }
        let tr = self.forward(Input::Grid(&sample.data))?;
        Ok((
            FeatureVector {
                values: tr.feature,
                media: sample.media,
                label: sample.label,
            },
            tr.logits,
        ))
    }
}
