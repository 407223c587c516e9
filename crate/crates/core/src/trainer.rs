//! REINFORCE training with a shared multi-start baseline.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pomo_numerics::{Adam, GradStore, Tape};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aux_agent::{choose_k, sample_starts, start_entropy, SelectionMode};
use crate::cvrp::{generate_set, write_records, DemandDistribution, Instance};
use crate::error::{param_err, CoreError, Result};
use crate::model::{Mode, Model};
use crate::policy::{DecodeMode, ModelConfig};
use crate::seeding::derive_seed;

const STREAM_STEPS: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_VALIDATION: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub model: ModelConfig,
    pub n_customers: usize,
    pub demand: DemandDistribution,
    pub batch_size: usize,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub validation_size: usize,
    pub policy_lr: f64,
    pub weight_decay: f64,
    pub aux_lr: f64,
    /// Policy steps whose auxiliary gradients are averaged into one update.
    pub aux_accum_steps: usize,
    pub aux_temperature: f64,
    /// Distinct start nodes per instance; derived from `n_customers` when unset.
    pub aux_k: Option<usize>,
    pub seed: u64,
    /// Set by [`TrainConfig::desk`]; informational.
    pub desk_scale: bool,
    /// Where metrics, checkpoints and the config dump go; nothing is
    /// written when unset.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(n_customers: usize, mode: Mode) -> Self {
        Self {
            mode,
            model: ModelConfig::full(),
            n_customers,
            demand: DemandDistribution::IntegerUniform,
            batch_size: 64,
            epochs: 100,
            instances_per_epoch: 100_000,
            validation_size: 1000,
            policy_lr: 1e-4,
            weight_decay: 1e-6,
            aux_lr: 1e-4,
            aux_accum_steps: 100,
            aux_temperature: 1.0,
            aux_k: None,
            seed: 0,
            desk_scale: false,
            out_dir: None,
        }
    }

    /// Small model and epochs that finish in minutes on one CPU core.
    pub fn desk(n_customers: usize, mode: Mode) -> Self {
        Self {
            model: ModelConfig::desk(),
            batch_size: 16,
            epochs: 5,
            instances_per_epoch: 640,
            validation_size: 64,
            policy_lr: 1e-3,
            aux_lr: 1e-3,
            aux_accum_steps: 10,
            desk_scale: true,
            ..Self::new(n_customers, mode)
        }
    }

    pub fn k(&self) -> usize {
        self.aux_k.unwrap_or_else(|| choose_k(self.n_customers))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_customers == 0 {
            return param_err("n_customers", "must be positive");
        }
        if self.batch_size == 0 {
            return param_err("batch_size", "must be positive");
        }
        if self.instances_per_epoch == 0 {
            return param_err("instances_per_epoch", "must be positive");
        }
        if self.aux_accum_steps == 0 {
            return param_err("aux_accum_steps", "must be positive");
        }
        for (name, v) in [("policy_lr", self.policy_lr), ("aux_lr", self.aux_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return param_err(name, format!("must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return param_err("weight_decay", "must be non-negative");
        }
        if !(self.aux_temperature > 0.0) {
            return param_err("aux_temperature", "must be positive");
        }
        let k = self.k();
        if self.mode == Mode::PomoPlus && (k == 0 || self.n_customers % k != 0) {
            return param_err("aux_k", format!("{k} does not divide {}", self.n_customers));
        }
        Ok(())
    }

    /// Overrides one setting from its key/value form, as written by
    /// [`TrainConfig::entries`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| CoreError::Parameter { name: key, detail: format!("cannot parse {v:?}") })
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "n_customers" => self.n_customers = num("n_customers", value)?,
            "demand" => {
                self.demand = match value.trim() {
                    "integer" => DemandDistribution::IntegerUniform,
                    "continuous" => DemandDistribution::ContinuousUniform,
                    other => return param_err("demand", format!("unknown distribution {other:?}")),
                }
            }
            "embed_dim" => self.model.embed_dim = num("embed_dim", value)?,
            "encoder_layers" => self.model.encoder_layers = num("encoder_layers", value)?,
            "heads" => self.model.heads = num("heads", value)?,
            "ff_hidden" => self.model.ff_hidden = num("ff_hidden", value)?,
            "logit_clip" => self.model.logit_clip = num("logit_clip", value)?,
            "batch_size" => self.batch_size = num("batch_size", value)?,
            "epochs" => self.epochs = num("epochs", value)?,
            "instances_per_epoch" => self.instances_per_epoch = num("instances_per_epoch", value)?,
            "validation_size" => self.validation_size = num("validation_size", value)?,
            "policy_lr" => self.policy_lr = num("policy_lr", value)?,
            "weight_decay" => self.weight_decay = num("weight_decay", value)?,
            "aux.lr" => self.aux_lr = num("aux.lr", value)?,
            "aux.accum_steps" => self.aux_accum_steps = num("aux.accum_steps", value)?,
            "aux.temperature" => self.aux_temperature = num("aux.temperature", value)?,
            "aux.K_override" if value.trim().is_empty() => self.aux_k = None,
            "aux.K_override" => self.aux_k = Some(num("aux.K_override", value)?),
            "seed" => self.seed = num("seed", value)?,
            "desk_scale" => self.desk_scale = num("desk_scale", value)?,
            _ => return param_err("config", format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CoreError::Parse {
                line: i + 1,
                detail: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Key/value dump of every setting.
    pub fn entries(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let demand = match self.demand {
            DemandDistribution::IntegerUniform => "integer",
            DemandDistribution::ContinuousUniform => "continuous",
        };
        [
            ("mode", self.mode.to_string()),
            ("n_customers", self.n_customers.to_string()),
            ("demand", demand.to_string()),
            ("embed_dim", m.embed_dim.to_string()),
            ("encoder_layers", m.encoder_layers.to_string()),
            ("heads", m.heads.to_string()),
            ("ff_hidden", m.ff_hidden.to_string()),
            ("logit_clip", m.logit_clip.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("instances_per_epoch", self.instances_per_epoch.to_string()),
            ("validation_size", self.validation_size.to_string()),
            ("policy_lr", self.policy_lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("aux.lr", self.aux_lr.to_string()),
            ("aux.accum_steps", self.aux_accum_steps.to_string()),
            ("aux.temperature", self.aux_temperature.to_string()),
            ("aux.K_override", self.aux_k.map(|k| k.to_string()).unwrap_or_default()),
            ("seed", self.seed.to_string()),
            ("desk_scale", self.desk_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Diagnostics of one policy-gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub mean_reward: f64,
    /// Mean over instances of the best rollout reward.
    pub best_of_n_reward: f64,
    /// Per instance, per rollout.
    pub advantages: Vec<Vec<f64>>,
    pub log_probs: Vec<Vec<f64>>,
    pub starts: Vec<Vec<usize>>,
    /// Mean entropy of the start distribution (POMO+ only).
    pub aux_entropy: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub mean_reward: f64,
    pub best_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: u64,
    pub mean_reward: f64,
    pub best_of_n_reward: f64,
    pub validation: ValidationReport,
    pub aux_entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub initial_validation: ValidationReport,
    pub epochs: Vec<EpochMetrics>,
    pub aux_updates: u64,
}

struct InstanceOutcome {
    grads: GradStore,
    aux_grads: Option<GradStore>,
    loss: f64,
    rewards: Vec<f64>,
    advantages: Vec<f64>,
    log_probs: Vec<f64>,
    starts: Vec<usize>,
    entropy: Option<f64>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    policy_opt: Adam,
    aux_opt: Option<Adam>,
    aux_grads: Option<GradStore>,
    aux_pending: usize,
    aux_updates: u64,
    step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let model = Model::new(config.model, config.mode, config.seed)?;
        Self::with_model(config, model)
    }

    /// Continues from an existing model, which must match the configured
    /// mode and architecture.
    pub fn with_model(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        if model.mode != config.mode || model.config != config.model {
            return Err(CoreError::Checkpoint(format!(
                "model is {} {:?}, training expects {} {:?}",
                model.mode, model.config, config.mode, config.model
            )));
        }
        let policy_opt = Adam::new(&model.store, model.policy_params(), config.policy_lr, config.weight_decay);
        let (aux_opt, aux_grads) = match model.mode {
            Mode::Pomo => (None, None),
            Mode::PomoPlus => (
                Some(Adam::new(&model.store, model.aux_params(), config.aux_lr, config.weight_decay)),
                Some(model.store.zero_grads()),
            ),
        };
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_STEPS]));
        Ok(Self {
            config,
            model,
            policy_opt,
            aux_opt,
            aux_grads,
            aux_pending: 0,
            aux_updates: 0,
            step: 0,
            rng,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn aux_updates(&self) -> u64 {
        self.aux_updates
    }

    /// One REINFORCE update of the policy on `batch`. In POMO+ mode the
    /// auxiliary gradient is accumulated for [`Trainer::aux_update`].
    pub fn policy_gradient_step(&mut self, batch: &[Instance]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(CoreError::Contract("empty batch".into()));
        }
        let seeds: Vec<u64> = batch.iter().map(|_| self.rng.next_u64()).collect();
        let b = batch.len();
        let mut grads = self.model.store.zero_grads();
        let mut aux_total = self.aux_grads.as_ref().map(|_| self.model.store.zero_grads());
        let mut report = StepReport {
            step: self.step + 1,
            loss: 0.0,
            mean_reward: 0.0,
            best_of_n_reward: 0.0,
            advantages: Vec::with_capacity(b),
            log_probs: Vec::with_capacity(b),
            starts: Vec::with_capacity(b),
            aux_entropy: None,
            grad_norm: 0.0,
        };
        let mut entropy = 0.0;
        // Chunks bound memory; merging in instance order keeps the sums
        // independent of the thread count.
        let chunk = rayon::current_num_threads().max(1);
        let items: Vec<(&Instance, u64)> = batch.iter().zip(seeds).collect();
        for part in items.chunks(chunk) {
            let outcomes = part
                .par_iter()
                .map(|&(inst, seed)| self.instance_step(inst, seed, b))
                .collect::<Result<Vec<_>>>()?;
            for o in outcomes {
                grads.merge(&o.grads);
                if let (Some(total), Some(g)) = (aux_total.as_mut(), o.aux_grads.as_ref()) {
                    total.merge(g);
                }
                report.loss += o.loss;
                report.mean_reward += o.rewards.iter().sum::<f64>() / o.rewards.len() as f64;
                report.best_of_n_reward += o.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                entropy += o.entropy.unwrap_or(0.0);
                report.advantages.push(o.advantages);
                report.log_probs.push(o.log_probs);
                report.starts.push(o.starts);
            }
        }
        report.mean_reward /= b as f64;
        report.best_of_n_reward /= b as f64;
        report.grad_norm = grads.l2_norm();
        if self.model.aux.is_some() {
            report.aux_entropy = Some(entropy / b as f64);
        }
        let aux_finite = aux_total.as_ref().is_none_or(GradStore::is_finite);
        if !report.loss.is_finite() || !grads.is_finite() || !aux_finite {
            let dump = self.dump_batch(batch)?;
            return Err(CoreError::NonFinite(format!(
                "step {}: loss {}; batch written to {}",
                report.step,
                report.loss,
                dump.display()
            )));
        }
        self.policy_opt.step(&mut self.model.store, &grads);
        if let (Some(acc), Some(total)) = (self.aux_grads.as_mut(), aux_total) {
            acc.merge(&total);
            self.aux_pending += 1;
        }
        self.step += 1;
        Ok(report)
    }

    fn instance_step(&self, inst: &Instance, seed: u64, batch: usize) -> Result<InstanceOutcome> {
        let store = &self.model.store;
        let policy = &self.model.policy;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::with_params(store);
        let emb = policy.encode(&mut tape, inst)?;
        let mut aux_state = None;
        let starts: Vec<usize> = match &self.model.aux {
            None => (1..=inst.n()).collect(),
            Some(aux) => {
                let nodes = tape.value(emb.nodes).clone();
                let mut aux_tape = Tape::with_params(store);
                let logits = aux.score(&mut aux_tape, &nodes)?;
                let values = aux_tape.value(logits).data().to_vec();
                let k = self.config.aux_k.unwrap_or_else(|| choose_k(inst.n()));
                let sel = sample_starts(&values, k, SelectionMode::Train, self.config.aux_temperature, &mut rng)?;
                let starts = sel.expanded.clone();
                aux_state = Some((aux, aux_tape, logits, sel, start_entropy(&values)));
                starts
            }
        };
        let out = policy.rollout_multi(&mut tape, &emb, inst, &starts, DecodeMode::Sample, &mut rng)?;
        let rewards = out.rewards();
        let adv = advantages(&rewards)?;
        let scale = 1.0 / (batch * starts.len()) as f64;
        let weights: Vec<f64> = adv.iter().map(|a| -a * scale).collect();
        let lp = out.log_probs.expect("training tape tracks gradients");
        let loss = tape.weighted_sum(lp, &weights)?;
        let mut grads = store.zero_grads();
        tape.backward(loss, &mut grads)?;
        let mut entropy = None;
        let aux_grads = match aux_state {
            None => None,
            Some((aux, mut aux_tape, logits, sel, h)) => {
                let aux_loss = aux.reinforce_loss(&mut aux_tape, logits, &sel, &rewards, scale)?;
                let mut g = store.zero_grads();
                aux_tape.backward(aux_loss, &mut g)?;
                entropy = Some(h);
                Some(g)
            }
        };
        Ok(InstanceOutcome {
            grads,
            aux_grads,
            loss: tape.value(loss).data()[0],
            log_probs: out.trajectories.iter().map(|t| t.log_prob).collect(),
            rewards,
            advantages: adv,
            starts,
            entropy,
        })
    }

    /// Applies the averaged auxiliary gradient once `aux_accum_steps`
    /// policy steps have accumulated. Returns whether an update happened;
    /// always `false` in POMO mode.
    pub fn aux_update(&mut self) -> bool {
        let (Some(opt), Some(acc)) = (self.aux_opt.as_mut(), self.aux_grads.as_mut()) else {
            return false;
        };
        if self.aux_pending < self.config.aux_accum_steps {
            return false;
        }
        acc.scale(1.0 / self.aux_pending as f64);
        opt.step(&mut self.model.store, acc);
        acc.zero();
        self.aux_pending = 0;
        self.aux_updates += 1;
        true
    }

    /// Greedy decoding on held-out instances; POMO+ takes the top-K start
    /// nodes of the auxiliary agent.
    pub fn validate(&self, instances: &[Instance]) -> Result<ValidationReport> {
        if instances.is_empty() {
            return Ok(ValidationReport {
                mean_reward: f64::NAN,
                best_reward: f64::NAN,
            });
        }
        let per: Vec<(f64, f64)> = instances
            .par_iter()
            .map(|inst| {
                let rewards = greedy_rewards(&self.model, inst, self.config.aux_k)?;
                let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
                let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok((mean, best))
            })
            .collect::<Result<_>>()?;
        let m = instances.len() as f64;
        Ok(ValidationReport {
            mean_reward: per.iter().map(|p| p.0).sum::<f64>() / m,
            best_reward: per.iter().map(|p| p.1).sum::<f64>() / m,
        })
    }

    /// Runs every configured epoch, writing metrics and checkpoints when
    /// an output directory is set.
    pub fn fit(&mut self) -> Result<TrainOutcome> {
        self.fit_with(|_| {})
    }

    /// [`Trainer::fit`], handing every step report to `on_step`.
    pub fn fit_with(&mut self, mut on_step: impl FnMut(&StepReport)) -> Result<TrainOutcome> {
        let cfg = self.config.clone();
        let mut metrics_out = match &cfg.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                write_config(&dir.join("config.txt"), &cfg)?;
                Some(MetricsWriter::create(&dir.join("metrics.csv"))?)
            }
            None => None,
        };
        let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_VALIDATION]));
        let val = generate_set(cfg.n_customers, cfg.validation_size, cfg.demand, "val", &mut val_rng)?;
        let initial_validation = self.validate(&val)?;
        log::info!(
            "initial validation: mean {:.4}, best {:.4}",
            initial_validation.mean_reward,
            initial_validation.best_reward
        );
        let mut epochs = Vec::with_capacity(cfg.epochs);
        for epoch in 1..=cfg.epochs {
            let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_DATA, epoch as u64]));
            let data = generate_set(
                cfg.n_customers,
                cfg.instances_per_epoch,
                cfg.demand,
                &format!("e{epoch}"),
                &mut data_rng,
            )?;
            let (mut mean, mut best, mut ent, mut steps) = (0.0, 0.0, 0.0, 0u64);
            for batch in data.chunks(cfg.batch_size) {
                let r = self.policy_gradient_step(batch)?;
                self.aux_update();
                on_step(&r);
                mean += r.mean_reward;
                best += r.best_of_n_reward;
                ent += r.aux_entropy.unwrap_or(0.0);
                steps += 1;
            }
            let s = steps as f64;
            let m = EpochMetrics {
                epoch,
                steps: self.step,
                mean_reward: mean / s,
                best_of_n_reward: best / s,
                validation: self.validate(&val)?,
                aux_entropy: self.model.aux.as_ref().map(|_| ent / s),
            };
            log::info!(
                "epoch {epoch}: train mean {:.4}, best {:.4}, val mean {:.4}, val best {:.4}",
                m.mean_reward,
                m.best_of_n_reward,
                m.validation.mean_reward,
                m.validation.best_reward
            );
            if let (Some(dir), Some(w)) = (&cfg.out_dir, metrics_out.as_mut()) {
                w.row(&m)?;
                self.model
                    .save(&dir.join(format!("checkpoint_epoch{epoch}.bin")), cfg.seed, &cfg.entries())?;
            }
            epochs.push(m);
        }
        if let Some(dir) = &cfg.out_dir {
            self.model.save(&dir.join("checkpoint.bin"), cfg.seed, &cfg.entries())?;
        }
        Ok(TrainOutcome {
            initial_validation,
            epochs,
            aux_updates: self.aux_updates,
        })
    }

    fn dump_batch(&self, batch: &[Instance]) -> Result<PathBuf> {
        let dir = self.config.out_dir.clone().unwrap_or_else(std::env::temp_dir);
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("nonfinite_step{}.txt", self.step + 1));
        fs::write(&path, write_records(batch))?;
        Ok(path)
    }
}

/// Mean reward of one instance's rollouts, the baseline shared by all of
/// them.
pub fn shared_baseline(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(CoreError::Contract("baseline of zero rollouts".into()));
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Rewards minus the shared baseline.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let b = shared_baseline(rewards)?;
    Ok(rewards.iter().map(|r| r - b).collect())
}

/// Rewards of greedy rollouts: every customer as a start in POMO mode,
/// the agent's top-K starts otherwise.
pub fn greedy_rewards(model: &Model, inst: &Instance, aux_k: Option<usize>) -> Result<Vec<f64>> {
    let mut tape = Tape::inference(&model.store);
    let emb = model.policy.encode(&mut tape, inst)?;
    let starts: Vec<usize> = match &model.aux {
        None => (1..=inst.n()).collect(),
        Some(aux) => {
            let nodes = tape.value(emb.nodes).clone();
            let mut aux_tape = Tape::inference(&model.store);
            let logits = aux.score(&mut aux_tape, &nodes)?;
            let values = aux_tape.value(logits).data().to_vec();
            let k = aux_k.unwrap_or_else(|| choose_k(inst.n()));
            let mut unused = rand::rngs::mock::StepRng::new(0, 0);
            sample_starts(&values, k, SelectionMode::Greedy, 1.0, &mut unused)?.expanded
        }
    };
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let out = model
        .policy
        .rollout_multi(&mut tape, &emb, inst, &starts, DecodeMode::Greedy, &mut unused)?;
    Ok(out.rewards())
}

fn write_config(path: &Path, cfg: &TrainConfig) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (k, v) in cfg.entries() {
        writeln!(f, "{k}={v}")?;
    }
    Ok(())
}

pub const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "step",
    "mean_reward",
    "best_of_n_reward",
    "val_mean_reward",
    "val_best_reward",
    "aux_entropy",
];

struct MetricsWriter {
    w: csv::Writer<fs::File>,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(METRICS_HEADER).map_err(csv_err)?;
        w.flush()?;
        Ok(Self { w })
    }

    fn row(&mut self, m: &EpochMetrics) -> Result<()> {
        self.w
            .write_record([
                m.epoch.to_string(),
                m.steps.to_string(),
                m.mean_reward.to_string(),
                m.best_of_n_reward.to_string(),
                m.validation.mean_reward.to_string(),
                m.validation.best_reward.to_string(),
                m.aux_entropy.map(|e| e.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        self.w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Io(std::io::Error::other(e))
}
