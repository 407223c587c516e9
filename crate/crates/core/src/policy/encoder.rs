use pomo_numerics::{multi_head_attention, Tape, Tensor, Var};

use super::params::{Attention, FeedForward, Linear, Norm, ParamSource};
use super::ModelConfig;
use crate::cvrp::Instance;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Layer {
    attn: Attention,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

/// Maps an instance to node embeddings `[(N+1)×d]`, depot in row 0.
#[derive(Debug, Clone)]
pub struct Encoder {
    depot: Linear,
    customer: Linear,
    layers: Vec<Layer>,
    heads: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    pub nodes: Var,
    /// Mean over all node embeddings, `[1×d]`.
    pub graph: Var,
}

impl Encoder {
    pub(crate) fn new(src: &mut ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        let depot = Linear::new(src, "encoder.depot", 2, d)?;
        let customer = Linear::new(src, "encoder.customer", 3, d)?;
        let layers = (0..cfg.encoder_layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                Ok(Layer {
                    attn: Attention::new(src, &format!("{p}.attn"), d)?,
                    norm1: Norm::new(src, &format!("{p}.norm1"), d)?,
                    ff: FeedForward::new(src, &format!("{p}.ff"), d, cfg.ff_hidden)?,
                    norm2: Norm::new(src, &format!("{p}.norm2"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            depot,
            customer,
            layers,
            heads: cfg.heads,
        })
    }

    pub fn forward(&self, tape: &mut Tape, inst: &Instance) -> Result<Embeddings> {
        let n = inst.n();
        let depot_in = tape.constant(Tensor::matrix(1, 2, vec![inst.depot.x, inst.depot.y])?);
        let mut cust = Vec::with_capacity(3 * n);
        for (i, p) in inst.customers.iter().enumerate() {
            cust.extend([p.x, p.y, inst.demand_fraction(i + 1)]);
        }
        let cust_in = tape.constant(Tensor::matrix(n, 3, cust)?);
        let hd = self.depot.forward(tape, depot_in)?;
        let hc = self.customer.forward(tape, cust_in)?;
        let mut h = tape.concat_rows(&[hd, hc])?;
        for layer in &self.layers {
            let w = layer.attn.weights(tape);
            let a = multi_head_attention(tape, h, h, h, &w, self.heads, None)?;
            let r = tape.add(h, a)?;
            h = layer.norm1.forward(tape, r)?;
            let f = layer.ff.forward(tape, h)?;
            let r = tape.add(h, f)?;
            h = layer.norm2.forward(tape, r)?;
        }
        let graph = tape.mean_rows(h);
        Ok(Embeddings { nodes: h, graph })
    }
}
