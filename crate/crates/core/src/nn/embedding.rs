//! Input embeddings for the decoder-only models.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::Linear;
use super::{Bound, ParamId, ParamStore};
use crate::autodiff::{Result, Tensor, Var};

/// Random Fourier features followed by a learnable linear map:
/// `θ_f([sin(2π B z̃); cos(2π B z̃)])`.
///
/// `B` has entries drawn from `N(0, 1)` and is registered as a frozen
/// parameter, so it is saved with the model but never optimized.
#[derive(Clone, Debug)]
pub struct FourierEmbedding {
    /// `Bᵀ`, stored as `d_in × d_mapping`.
    pub projection: ParamId,
    pub mix: Linear,
    pub d_mapping: usize,
}

impl FourierEmbedding {
    pub fn new(
        store: &mut ParamStore,
        init_rng: &mut ChaCha8Rng,
        projection_rng: &mut ChaCha8Rng,
        d_in: usize,
        d_mapping: usize,
        d_emb: usize,
    ) -> Self {
        // sampled row by row as the d_mapping × d_in matrix B, then stored transposed
        let b: Vec<f64> = (0..d_mapping * d_in)
            .map(|_| StandardNormal.sample(projection_rng))
            .collect();
        let mut bt = vec![0.0; d_in * d_mapping];
        for r in 0..d_mapping {
            for c in 0..d_in {
                bt[c * d_mapping + r] = b[r * d_in + c];
            }
        }
        let projection = store.register(
            "embedding.fourier.projection".to_string(),
            Tensor::new(vec![d_in, d_mapping], bt).expect("extent product"),
            false,
        );
        let mix = Linear::new(store, init_rng, "embedding.fourier.mix", 2 * d_mapping, d_emb);
        Self {
            projection,
            mix,
            d_mapping,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let phase = z.matmul(&p[self.projection])?.scale(2.0 * PI);
        let last = phase.shape().len() - 1;
        let features = z.tape().concat(&[phase.sin(), phase.cos()], last)?;
        self.mix.forward(p, features)
    }
}

/// The input map `E(z̃)` of the decoder-only models: a spectral or plain
/// linear branch plus a linear positional branch.
#[derive(Clone, Debug)]
pub struct InputEmbedding {
    pub spectral: SpectralBranch,
    pub positional: Linear,
}

#[derive(Clone, Debug)]
pub enum SpectralBranch {
    Fourier(FourierEmbedding),
    /// Ablation: a single linear layer in place of the Fourier features.
    Linear(Linear),
}

impl InputEmbedding {
    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let spectral = match &self.spectral {
            SpectralBranch::Fourier(f) => f.forward(p, z)?,
            SpectralBranch::Linear(l) => l.forward(p, z)?,
        };
        spectral.add(&self.positional.forward(p, z)?)
    }
}
