use pomo_numerics::{ParamId, ParamStore, Tensor};
use rand::Rng;

use crate::error::{CoreError, Result};

pub(crate) enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Const(f64),
}

/// Either registers freshly initialized parameters or looks up existing
/// ones by name, so one layout definition serves both construction and
/// checkpoint binding.
pub(crate) enum ParamSource<'a> {
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut dyn rand::RngCore,
    },
    Bind(&'a ParamStore),
}

impl ParamSource<'_> {
    pub(crate) fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        match self {
            ParamSource::Init { store, rng } => {
                let numel: usize = shape.iter().product();
                let data: Vec<f64> = match init {
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect()
                    }
                    Init::Const(v) => vec![v; numel],
                };
                Ok(store.insert(name, Tensor::new(shape.to_vec(), data)?)?)
            }
            ParamSource::Bind(store) => {
                let id = store
                    .id(name)
                    .ok_or_else(|| CoreError::Checkpoint(format!("missing tensor {name}")))?;
                if store.get(id).shape() != shape {
                    return Err(CoreError::Checkpoint(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        store.get(id).shape()
                    )));
                }
                Ok(id)
            }
        }
    }
}

/// Weights and bias of an affine map `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn new(src: &mut ParamSource, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            weight: src.param(&format!("{name}.weight"), &[fan_in, fan_out], Init::FanIn(fan_in))?,
            bias: src.param(&format!("{name}.bias"), &[fan_out], Init::FanIn(fan_in))?,
        })
    }

    pub fn forward(&self, tape: &mut pomo_numerics::Tape, x: pomo_numerics::Var) -> Result<pomo_numerics::Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub(crate) fn new(src: &mut ParamSource, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: src.param(&format!("{name}.gain"), &[d], Init::Const(1.0))?,
            bias: src.param(&format!("{name}.bias"), &[d], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, tape: &mut pomo_numerics::Tape, x: pomo_numerics::Var) -> Result<pomo_numerics::Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Bias-free query/key/value/output projections of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl Attention {
    pub(crate) fn new(src: &mut ParamSource, name: &str, d: usize) -> Result<Self> {
        let mut w = |s: &str| src.param(&format!("{name}.{s}"), &[d, d], Init::FanIn(d));
        Ok(Self {
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            wo: w("wo")?,
        })
    }

    pub fn weights(&self, tape: &mut pomo_numerics::Tape) -> pomo_numerics::MhaWeights {
        pomo_numerics::MhaWeights {
            wq: tape.param(self.wq),
            wk: tape.param(self.wk),
            wv: tape.param(self.wv),
            wo: tape.param(self.wo),
        }
    }
}

/// `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub(crate) fn new(src: &mut ParamSource, name: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(src, &format!("{name}.up"), d, hidden)?,
            down: Linear::new(src, &format!("{name}.down"), hidden, d)?,
        })
    }

    pub fn forward(&self, tape: &mut pomo_numerics::Tape, x: pomo_numerics::Var) -> Result<pomo_numerics::Var> {
        let h = self.up.forward(tape, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, h)
    }
}
