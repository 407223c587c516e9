//! A policy, its optional auxiliary agent and the parameters they share.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pomo_numerics::{Checkpoint, ParamId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aux_agent::AuxAgent;
use crate::error::{param_err, CoreError, Result};
use crate::policy::{ModelConfig, PolicyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every customer starts one rollout.
    Pomo,
    /// An auxiliary agent picks the start customers.
    PomoPlus,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pomo => "pomo",
            Mode::PomoPlus => "pomo+",
        })
    }
}

impl FromStr for Mode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pomo" => Ok(Mode::Pomo),
            "pomo+" | "pomo-plus" | "pomoplus" => Ok(Mode::PomoPlus),
            _ => param_err("mode", format!("unknown mode {s:?}, expected pomo or pomo+")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub mode: Mode,
    pub store: ParamStore,
    pub policy: PolicyModel,
    pub aux: Option<AuxAgent>,
}

impl Model {
    /// Freshly initialized parameters; the same seed gives the same model.
    pub fn new(config: ModelConfig, mode: Mode, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let policy = PolicyModel::init(config, &mut store, &mut rng)?;
        let aux = match mode {
            Mode::Pomo => None,
            Mode::PomoPlus => Some(AuxAgent::init(&config, &mut store, &mut rng)?),
        };
        Ok(Self {
            config,
            mode,
            store,
            policy,
            aux,
        })
    }

    pub fn policy_params(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| !self.store.name(id).starts_with("aux.")).collect()
    }

    pub fn aux_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("aux.").collect()
    }

    /// Metadata describing the architecture, stored with every checkpoint.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let c = &self.config;
        [
            ("mode", self.mode.to_string()),
            ("embed_dim", c.embed_dim.to_string()),
            ("encoder_layers", c.encoder_layers.to_string()),
            ("heads", c.heads.to_string()),
            ("ff_hidden", c.ff_hidden.to_string()),
            ("logit_clip", c.logit_clip.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// `extra` entries are appended after the architecture metadata.
    pub fn to_checkpoint(&self, seed: u64, extra: &[(String, String)]) -> Checkpoint {
        let mut meta = self.metadata();
        meta.extend(extra.iter().cloned());
        Checkpoint::from_store(&self.store, seed, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |key: &str| {
            ck.meta(key)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing metadata key {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| CoreError::Checkpoint(format!("bad value for {key}")))
        };
        let mode: Mode = get("mode")?.parse()?;
        let config = ModelConfig {
            embed_dim: num("embed_dim")?,
            encoder_layers: num("encoder_layers")?,
            heads: num("heads")?,
            ff_hidden: num("ff_hidden")?,
            logit_clip: get("logit_clip")?
                .parse()
                .map_err(|_| CoreError::Checkpoint("bad value for logit_clip".into()))?,
        };
        let mut store = ParamStore::new();
        for (name, t) in &ck.tensors {
            store.insert(name.clone(), t.clone())?;
        }
        let policy = PolicyModel::bind(config, &store)?;
        let aux = match mode {
            Mode::Pomo => None,
            Mode::PomoPlus => Some(AuxAgent::bind(&config, &store)?),
        };
        let model = Self {
            config,
            mode,
            store,
            policy,
            aux,
        };
        // Every stored tensor must belong to this architecture.
        let reference = Model::new(config, mode, 0)?;
        if reference.store.len() != model.store.len() {
            return Err(CoreError::Checkpoint(format!(
                "{} tensors stored, architecture has {}",
                model.store.len(),
                reference.store.len()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, seed: u64, extra: &[(String, String)]) -> Result<()> {
        Ok(self.to_checkpoint(seed, extra).write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            encoder_layers: 1,
            heads: 2,
            ff_hidden: 16,
            logit_clip: 10.0,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        for mode in [Mode::Pomo, Mode::PomoPlus] {
            let m = Model::new(tiny(), mode, 3).unwrap();
            let ck = Checkpoint::from_bytes(&m.to_checkpoint(3, &[]).to_bytes()).unwrap();
            let back = Model::from_checkpoint(&ck).unwrap();
            assert_eq!(back.mode, mode);
            assert_eq!(back.config, m.config);
            for ((na, a), (nb, b)) in m.store.iter().zip(back.store.iter()) {
                assert_eq!(na, nb);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("POMO+".parse::<Mode>().unwrap(), Mode::PomoPlus);
        assert!("am".parse::<Mode>().is_err());
    }

    #[test]
    fn aux_params_are_separate() {
        let m = Model::new(tiny(), Mode::PomoPlus, 0).unwrap();
        let aux = m.aux_params();
        let pol = m.policy_params();
        assert!(!aux.is_empty() && !pol.is_empty());
        assert_eq!(aux.len() + pol.len(), m.store.len());
    }
}
