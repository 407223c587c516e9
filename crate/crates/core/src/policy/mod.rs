//! Attention encoder-decoder policy for CVRP.

mod decoder;
mod encoder;
pub(crate) mod params;
mod rollout;

pub use decoder::{step_mask, DecodeState, Decoder, DecoderCache};
pub use encoder::{Embeddings, Encoder};
pub use params::{Attention, FeedForward, Linear, Norm};
pub use rollout::{DecodeMode, RolloutOutput};

use pomo_numerics::{ParamStore, Tape};
use rand::RngCore;

use crate::cvrp::Instance;
use crate::error::{param_err, Result};
use params::ParamSource;

/// Network dimensions shared by the encoder, decoder and auxiliary agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Decoder logits are squashed to `clip * tanh(.)`.
    pub logit_clip: f64,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            embed_dim: 128,
            encoder_layers: 6,
            heads: 8,
            ff_hidden: 512,
            logit_clip: 10.0,
        }
    }

    /// Reduced profile that trains on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            embed_dim: 32,
            encoder_layers: 3,
            heads: 4,
            ff_hidden: 64,
            logit_clip: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return param_err(
                "heads",
                format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads),
            );
        }
        if self.ff_hidden == 0 {
            return param_err("ff_hidden", "must be positive");
        }
        if !(self.logit_clip > 0.0) {
            return param_err("logit_clip", "must be positive");
        }
        Ok(())
    }
}

/// Encoder plus decoder, holding parameter handles into a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl PolicyModel {
    /// Registers freshly initialized `encoder.*` and `decoder.*` tensors.
    pub fn init(config: ModelConfig, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut src = ParamSource::Init { store, rng };
        Self::build(config, &mut src)
    }

    /// Binds to tensors already present in `store`, checking their shapes.
    pub fn bind(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        Self::build(config, &mut ParamSource::Bind(store))
    }

    fn build(config: ModelConfig, src: &mut ParamSource) -> Result<Self> {
        Ok(Self {
            config,
            encoder: Encoder::new(src, &config)?,
            decoder: Decoder::new(src, &config)?,
        })
    }

    pub fn encode(&self, tape: &mut Tape, inst: &Instance) -> Result<Embeddings> {
        self.encoder.forward(tape, inst)
    }
}
