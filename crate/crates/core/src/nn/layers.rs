//! Layers shared by every architecture. Each layer holds parameter ids into
//! a [`ParamStore`] and reads the bound tape variables at forward time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, ParamId, ParamStore};
use crate::autodiff::{Result, Tensor, Var};

/// Affine map `x W + b` over the last axis, `W` stored as `d_in × d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.register(
            format!("{name}.weight"),
            Tensor::new(vec![d_in, d_out], w).expect("extent product"),
            true,
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[d_out]), true);
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(&p[self.weight])?.add(&p[self.bias])
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }
}

/// `ω₁ sin(z) + ω₂ cos(z)` with one learnable pair per instance.
#[derive(Clone, Debug)]
pub struct Wavelet {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl Wavelet {
    pub fn new(store: &mut ParamStore, name: &str) -> Self {
        Self {
            w1: store.register(format!("{name}.w1"), Tensor::scalar(1.0), true),
            w2: store.register(format!("{name}.w2"), Tensor::scalar(1.0), true),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        z.wavelet(&p[self.w1], &p[self.w2])
    }

    pub const PARAMS: usize = 2;
}

/// Scaled dot-product attention with `n_heads` heads over the last axis.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_model: usize, n_heads: usize) -> Self {
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), d_model, d_model),
            key: Linear::new(store, rng, &format!("{name}.key"), d_model, d_model),
            value: Linear::new(store, rng, &format!("{name}.value"), d_model, d_model),
            out: Linear::new(store, rng, &format!("{name}.out"), d_model, d_model),
            n_heads,
        }
    }

    /// Softmax attention weights `[B, k_q, k_m]`, one tensor per head.
    pub fn weights<'t>(&self, p: &Bound<'t>, queries: Var<'t>, memory: Var<'t>) -> Result<Vec<Var<'t>>> {
        let q = self.query.forward(p, queries)?;
        let k = self.key.forward(p, memory)?;
        self.head_weights(q, k)
    }

    fn head_weights<'t>(&self, q: Var<'t>, k: Var<'t>) -> Result<Vec<Var<'t>>> {
        let dh = self.query.d_out / self.n_heads;
        let last = q.shape().len() - 1;
        let scale = 1.0 / (dh as f64).sqrt();
        (0..self.n_heads)
            .map(|h| {
                let qh = q.slice(last, h * dh, (h + 1) * dh)?;
                let kh = k.slice(last, h * dh, (h + 1) * dh)?;
                qh.bmm(&kh, false, true)?.scale(scale).softmax()
            })
            .collect()
    }

    /// `queries` is `[B, k, d]`; keys and values both come from `memory`.
    pub fn forward<'t>(&self, p: &Bound<'t>, queries: Var<'t>, memory: Var<'t>) -> Result<Var<'t>> {
        let dh = self.query.d_out / self.n_heads;
        let q = self.query.forward(p, queries)?;
        let k = self.key.forward(p, memory)?;
        let v = self.value.forward(p, memory)?;
        let last = q.shape().len() - 1;
        let mut heads = Vec::with_capacity(self.n_heads);
        for (h, weights) in self.head_weights(q, k)?.into_iter().enumerate() {
            let vh = v.slice(last, h * dh, (h + 1) * dh)?;
            heads.push(weights.bmm(&vh, false, false)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            q.tape().concat(&heads, last)?
        };
        self.out.forward(p, merged)
    }

    pub fn param_count(d_model: usize) -> usize {
        4 * Linear::param_count(d_model, d_model)
    }
}

/// Three linear layers `d → d_ff → d_ff → d` with wavelets in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub layers: [Linear; 3],
    pub acts: [Wavelet; 2],
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_model: usize, d_ff: usize) -> Self {
        let l1 = Linear::new(store, rng, &format!("{name}.0"), d_model, d_ff);
        let a1 = Wavelet::new(store, &format!("{name}.act0"));
        let l2 = Linear::new(store, rng, &format!("{name}.1"), d_ff, d_ff);
        let a2 = Wavelet::new(store, &format!("{name}.act1"));
        let l3 = Linear::new(store, rng, &format!("{name}.2"), d_ff, d_model);
        Self {
            layers: [l1, l2, l3],
            acts: [a1, a2],
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.acts[0].forward(p, self.layers[0].forward(p, x)?)?;
        let h = self.acts[1].forward(p, self.layers[1].forward(p, h)?)?;
        self.layers[2].forward(p, h)
    }

    pub fn param_count(d_model: usize, d_ff: usize) -> usize {
        Linear::param_count(d_model, d_ff)
            + Linear::param_count(d_ff, d_ff)
            + Linear::param_count(d_ff, d_model)
            + 2 * Wavelet::PARAMS
    }
}

/// Wavelet, attention, residual, wavelet, feed-forward, residual.
///
/// With no memory the attention is self-attention over the activated input.
/// With memory (encoder output) queries come from the activated input and
/// keys/values from the memory.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub pre_attention: Wavelet,
    pub attention: MultiHeadAttention,
    pub pre_ffn: Wavelet,
    pub ffn: FeedForward,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        d_ff: usize,
        n_heads: usize,
    ) -> Self {
        Self {
            pre_attention: Wavelet::new(store, &format!("{name}.act_attn")),
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d_model, n_heads),
            pre_ffn: Wavelet::new(store, &format!("{name}.act_ffn")),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d_model, d_ff),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, h: Var<'t>, memory: Option<Var<'t>>) -> Result<Var<'t>> {
        let u = self.pre_attention.forward(p, h)?;
        let a = self.attention.forward(p, u, memory.unwrap_or(u))?;
        let s = h.add(&a)?;
        let v = self.pre_ffn.forward(p, s)?;
        let f = self.ffn.forward(p, v)?;
        s.add(&f)
    }

    pub fn param_count(d_model: usize, d_ff: usize) -> usize {
        2 * Wavelet::PARAMS + MultiHeadAttention::param_count(d_model) + FeedForward::param_count(d_model, d_ff)
    }
}

/// Linear layers with a wavelet between consecutive layers, widths given by `dims`.
#[derive(Clone, Debug)]
pub struct WaveletMlp {
    pub layers: Vec<Linear>,
    pub acts: Vec<Wavelet>,
}

impl WaveletMlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dims: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut acts = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            if i > 0 {
                acts.push(Wavelet::new(store, &format!("{name}.act{}", i - 1)));
            }
            layers.push(Linear::new(store, rng, &format!("{name}.{i}"), pair[0], pair[1]));
        }
        Self { layers, acts }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = self.layers[0].forward(p, x)?;
        for (act, layer) in self.acts.iter().zip(&self.layers[1..]) {
            h = layer.forward(p, act.forward(p, h)?)?;
        }
        Ok(h)
    }

    pub fn param_count(dims: &[usize]) -> usize {
        let linear: usize = dims.windows(2).map(|w| Linear::param_count(w[0], w[1])).sum();
        linear + dims.len().saturating_sub(2) * Wavelet::PARAMS
    }
}
