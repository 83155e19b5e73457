//! Network building blocks and the four model architectures.
//!
//! Parameters live in a [`ParamStore`] in registration order. A forward
//! pass first binds the store onto a tape ([`Model::bind`]), turning every
//! trainable parameter into a differentiable leaf and every frozen one
//! (the Fourier projection) into a constant.

mod checkpoint;
mod embedding;
pub mod layers;

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT};
pub use embedding::{FourierEmbedding, InputEmbedding, SpectralBranch};
use layers::{Linear, TransformerLayer, Wavelet, WaveletMlp};

/// Normalized inputs may overshoot `[0, 1]` by this much: the last elements
/// of a pseudo-sequence started near the end of the time domain step past it.
pub const NORMALIZED_SLACK: f64 = 0.01;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input has {0} sequence positions; need at least one")]
    EmptySequence(usize),
    #[error("expected input of shape [batch, k, {expected}], got {got:?}")]
    InputShape { expected: usize, got: Vec<usize> },
    #[error("normalized input component {value} at flat index {index} lies outside [0, 1]")]
    InputOutOfRange { index: usize, value: f64 },
    #[error("parameter `{0}` holds a non-finite value")]
    NonFiniteParameter(String),
    #[error("expected {expected} trainable values, got {got}")]
    ParameterLength { expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Plain coordinate MLP.
    Mlp,
    /// Encoder-decoder transformer with a linear spatio-temporal mixer.
    Pformer,
    /// Decoder-only transformer whose spectral branch is a single linear layer.
    DoPformer,
    /// Decoder-only transformer with Fourier feature embeddings.
    SPformer,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Mlp, Self::Pformer, Self::DoPformer, Self::SPformer];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::Pformer => "pformer",
            Self::DoPformer => "do_pformer",
            Self::SPformer => "s_pformer",
        }
    }

    /// Whether inputs are pseudo-sequences (`k > 1` is meaningful).
    pub fn is_sequence_model(self) -> bool {
        self != Self::Mlp
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NnError::InvalidConfig(format!("unknown architecture `{s}` (expected mlp, pformer, do_pformer or s_pformer)")))
    }
}

/// Architecture descriptor. `n_layers` is the number of transformer layers
/// for the sequence models and the number of linear layers for the MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub d_in: usize,
    pub d_out: usize,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_ff: usize,
    pub d_mapping: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub seed: u64,
    /// Seed of the Fourier projection; defaults to `seed`.
    #[serde(default)]
    pub fourier_seed: Option<u64>,
}

impl ModelConfig {
    /// Baseline widths: d_hidden 512, d_emb 32, d_ff 256, d_mapping 64, two
    /// heads, one transformer layer; the MLP uses four linear layers.
    pub fn baseline(architecture: Architecture) -> Self {
        Self {
            architecture,
            d_in: 2,
            d_out: 1,
            d_emb: 32,
            d_hidden: 512,
            d_ff: 256,
            d_mapping: 64,
            n_layers: if architecture == Architecture::Mlp { 4 } else { 1 },
            n_heads: 2,
            seed: 0,
            fourier_seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("d_in", self.d_in),
            ("d_out", self.d_out),
            ("d_emb", self.d_emb),
            ("d_hidden", self.d_hidden),
            ("d_ff", self.d_ff),
            ("d_mapping", self.d_mapping),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.d_emb % self.n_heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "d_emb ({}) must be divisible by n_heads ({})",
                self.d_emb, self.n_heads
            )));
        }
        Ok(())
    }

    fn head_dims(&self) -> [usize; 4] {
        [self.d_emb, self.d_hidden, self.d_hidden, self.d_out]
    }

    fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.d_in];
        dims.extend(std::iter::repeat(self.d_hidden).take(self.n_layers.saturating_sub(1)));
        dims.push(self.d_out);
        dims
    }
}

/// Index of a parameter in its store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn register(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        self.params.push(Param { name, value, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of learnable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Trainable values flattened in registration order.
    pub fn trainable_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for p in self.params.iter().filter(|p| p.trainable) {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn set_trainable_values(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.trainable_count();
        if values.len() != expected {
            return Err(NnError::ParameterLength {
                expected,
                got: values.len(),
            });
        }
        let mut offset = 0;
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// A [`ParamStore`] bound onto a tape.
#[derive(Clone, Debug)]
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
    trainable: Vec<bool>,
}

impl<'t> Bound<'t> {
    /// Differentiable leaves of the trainable parameters, in registration order.
    pub fn trainable(&self) -> Vec<Var<'t>> {
        self.vars
            .iter()
            .zip(&self.trainable)
            .filter(|(_, t)| **t)
            .map(|(v, _)| *v)
            .collect()
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;

    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

#[derive(Clone, Debug)]
enum Network {
    Mlp(WaveletMlp),
    DecoderOnly {
        embedding: InputEmbedding,
        layers: Vec<TransformerLayer>,
        final_act: Wavelet,
        head: WaveletMlp,
    },
    EncoderDecoder {
        mixer: Linear,
        encoder: Vec<TransformerLayer>,
        encoder_act: Wavelet,
        decoder: Vec<TransformerLayer>,
        decoder_act: Wavelet,
        head: WaveletMlp,
    },
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    network: Network,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let network = match c.architecture {
            Architecture::Mlp => Network::Mlp(WaveletMlp::new(&mut store, &mut rng, "mlp", &c.mlp_dims())),
            Architecture::SPformer | Architecture::DoPformer => {
                let spectral = if c.architecture == Architecture::SPformer {
                    let mut projection_rng = ChaCha8Rng::seed_from_u64(c.fourier_seed.unwrap_or(c.seed));
                    projection_rng.set_stream(1);
                    SpectralBranch::Fourier(FourierEmbedding::new(
                        &mut store,
                        &mut rng,
                        &mut projection_rng,
                        c.d_in,
                        c.d_mapping,
                        c.d_emb,
                    ))
                } else {
                    SpectralBranch::Linear(Linear::new(&mut store, &mut rng, "embedding.linear", c.d_in, c.d_emb))
                };
                let positional = Linear::new(&mut store, &mut rng, "embedding.positional", c.d_in, c.d_emb);
                let layers = (0..c.n_layers)
                    .map(|i| TransformerLayer::new(&mut store, &mut rng, &format!("decoder.{i}"), c.d_emb, c.d_ff, c.n_heads))
                    .collect();
                let final_act = Wavelet::new(&mut store, "decoder.act");
                let head = WaveletMlp::new(&mut store, &mut rng, "head", &c.head_dims());
                Network::DecoderOnly {
                    embedding: InputEmbedding { spectral, positional },
                    layers,
                    final_act,
                    head,
                }
            }
            Architecture::Pformer => {
                let mixer = Linear::new(&mut store, &mut rng, "mixer", c.d_in, c.d_emb);
                let encoder = (0..c.n_layers)
                    .map(|i| TransformerLayer::new(&mut store, &mut rng, &format!("encoder.{i}"), c.d_emb, c.d_ff, c.n_heads))
                    .collect();
                let encoder_act = Wavelet::new(&mut store, "encoder.act");
                let decoder = (0..c.n_layers)
                    .map(|i| TransformerLayer::new(&mut store, &mut rng, &format!("decoder.{i}"), c.d_emb, c.d_ff, c.n_heads))
                    .collect();
                let decoder_act = Wavelet::new(&mut store, "decoder.act");
                let head = WaveletMlp::new(&mut store, &mut rng, "head", &c.head_dims());
                Network::EncoderDecoder {
                    mixer,
                    encoder,
                    encoder_act,
                    decoder,
                    decoder_act,
                    head,
                }
            }
        };
        Ok(Self { config, store, network })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn trainable_values(&self) -> Vec<f64> {
        self.store.trainable_values()
    }

    pub fn set_trainable_values(&mut self, values: &[f64]) -> Result<()> {
        self.store.set_trainable_values(values)
    }

    /// Registers every parameter on `tape`: trainable ones as leaves, frozen ones as constants.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let params = self.store.params();
        Bound {
            vars: params
                .iter()
                .map(|p| {
                    if p.trainable {
                        tape.leaf(p.value.clone())
                    } else {
                        tape.constant(p.value.clone())
                    }
                })
                .collect(),
            trainable: params.iter().map(|p| p.trainable).collect(),
        }
    }

    fn check_input(&self, z: &Var<'_>) -> Result<()> {
        let shape = z.shape();
        if shape.len() != 3 || shape[2] != self.config.d_in {
            return Err(NnError::InputShape {
                expected: self.config.d_in,
                got: shape,
            });
        }
        if shape[1] == 0 {
            return Err(NnError::EmptySequence(0));
        }
        let value = z.value();
        if let Some((index, &v)) = value
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(-NORMALIZED_SLACK..=1.0 + NORMALIZED_SLACK).contains(*v))
        {
            return Err(NnError::InputOutOfRange { index, value: v });
        }
        if let Some(p) = self.store.params().iter().find(|p| !p.value.is_finite()) {
            return Err(NnError::NonFiniteParameter(p.name.clone()));
        }
        Ok(())
    }

    /// Input embedding `E(z̃)` of the decoder-only models, `[B, k, d_in] → [B, k, d_emb]`.
    pub fn embed<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.check_input(&z)?;
        match &self.network {
            Network::DecoderOnly { embedding, .. } => Ok(embedding.forward(p, z)?),
            _ => Err(NnError::InvalidConfig(format!(
                "{} has no input embedding",
                self.config.architecture
            ))),
        }
    }

    /// Maps normalized pseudo-sequences `[B, k, d_in]` to outputs `[B, k, d_out]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.check_input(&z)?;
        let out = match &self.network {
            Network::Mlp(mlp) => mlp.forward(p, z)?,
            Network::DecoderOnly {
                embedding,
                layers,
                final_act,
                head,
            } => {
                let mut h = embedding.forward(p, z)?;
                for layer in layers {
                    h = layer.forward(p, h, None)?;
                }
                head.forward(p, final_act.forward(p, h)?)?
            }
            Network::EncoderDecoder {
                mixer,
                encoder,
                encoder_act,
                decoder,
                decoder_act,
                head,
            } => {
                let src = mixer.forward(p, z)?;
                let mut e = src;
                for layer in encoder {
                    e = layer.forward(p, e, None)?;
                }
                let e = encoder_act.forward(p, e)?;
                let mut d = src;
                for layer in decoder {
                    d = layer.forward(p, d, Some(e))?;
                }
                head.forward(p, decoder_act.forward(p, d)?)?
            }
        };
        Ok(out)
    }
}

/// Learnable scalars of the model described by `config`; the frozen Fourier
/// projection is not counted.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let c = config;
    let layer = TransformerLayer::param_count(c.d_emb, c.d_ff);
    let head = WaveletMlp::param_count(&c.head_dims());
    match c.architecture {
        Architecture::Mlp => WaveletMlp::param_count(&c.mlp_dims()),
        Architecture::SPformer => {
            Linear::param_count(2 * c.d_mapping, c.d_emb)
                + Linear::param_count(c.d_in, c.d_emb)
                + c.n_layers * layer
                + Wavelet::PARAMS
                + head
        }
        Architecture::DoPformer => {
            2 * Linear::param_count(c.d_in, c.d_emb) + c.n_layers * layer + Wavelet::PARAMS + head
        }
        Architecture::Pformer => {
            Linear::param_count(c.d_in, c.d_emb) + 2 * (c.n_layers * layer + Wavelet::PARAMS) + head
        }
    }
}

/// Multiply-accumulate count of one forward pass over one pseudo-sequence
/// of length `k`.
///
/// A linear `d → m` layer costs `k·d·m`; each attention block adds its four
/// projections plus `2·k²·d_emb` for the score and value products; the
/// Fourier projection costs `k·d_in·d_mapping`. Elementwise work
/// (activations, softmax, bias adds) is not counted.
pub fn flop_estimate(config: &ModelConfig, k: usize) -> u64 {
    let c = config;
    let (k, e) = (k as u64, c.d_emb as u64);
    let lin = |d: usize, m: usize| k * d as u64 * m as u64;
    let attention = 4 * lin(c.d_emb, c.d_emb) + 2 * k * k * e;
    let ffn = lin(c.d_emb, c.d_ff) + lin(c.d_ff, c.d_ff) + lin(c.d_ff, c.d_emb);
    let layer = attention + ffn;
    let chain = |dims: &[usize]| dims.windows(2).map(|w| lin(w[0], w[1])).sum::<u64>();
    let head = chain(&c.head_dims());
    let n = c.n_layers as u64;
    match c.architecture {
        Architecture::Mlp => chain(&c.mlp_dims()),
        Architecture::SPformer => {
            lin(c.d_in, c.d_mapping) + lin(2 * c.d_mapping, c.d_emb) + lin(c.d_in, c.d_emb) + n * layer + head
        }
        Architecture::DoPformer => 2 * lin(c.d_in, c.d_emb) + n * layer + head,
        Architecture::Pformer => lin(c.d_in, c.d_emb) + 2 * n * layer + head,
    }
}
