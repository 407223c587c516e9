use pomo_numerics::{softmax_row, Mask, Tape, Tensor, Var};
use rand::Rng;

use super::decoder::{step_mask, DecodeState};
use super::encoder::Embeddings;
use super::PolicyModel;
use crate::cvrp::{validate_trajectory, walk_length, Instance, Trajectory, DEPOT};
use crate::error::{param_err, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Highest-probability action, lowest index on ties.
    Greedy,
    Sample,
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// One per rollout, with `reward = -cost` and the summed log-probability.
    pub trajectories: Vec<Trajectory>,
    /// Differentiable log-probabilities `[R]`, present when the tape
    /// tracks gradients.
    pub log_probs: Option<Var>,
}

impl RolloutOutput {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }
}

enum Driver<'a> {
    Starts { starts: &'a [usize], mode: DecodeMode },
    Forced(&'a [Vec<usize>]),
}

impl Driver<'_> {
    fn rollouts(&self) -> usize {
        match self {
            Driver::Starts { starts, .. } => starts.len(),
            Driver::Forced(t) => t.len(),
        }
    }
}

impl PolicyModel {
    /// Decodes one rollout per entry of `starts`, forcing that customer as
    /// the first action. The forced action still contributes its
    /// probability under the first-step distribution to the log-probability.
    /// The closing depot return has probability one and is not decoded.
    pub fn rollout_multi<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        emb: &Embeddings,
        inst: &Instance,
        starts: &[usize],
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<RolloutOutput> {
        if starts.is_empty() {
            return Err(CoreError::Contract("no start nodes".into()));
        }
        if let Some(&s) = starts.iter().find(|&&s| s == DEPOT || s > inst.n()) {
            return param_err("start_nodes", format!("{s} is not a customer index"));
        }
        self.run(tape, emb, inst, Driver::Starts { starts, mode }, rng)
    }

    /// Replays fixed action sequences and returns their log-probabilities
    /// under the current parameters.
    pub fn log_prob_of(
        &self,
        tape: &mut Tape,
        emb: &Embeddings,
        inst: &Instance,
        actions: &[Vec<usize>],
    ) -> Result<RolloutOutput> {
        if actions.is_empty() {
            return Err(CoreError::Contract("no trajectories to replay".into()));
        }
        let trimmed: Vec<Vec<usize>> = actions
            .iter()
            .map(|a| Trajectory::from_actions(a.clone()).actions)
            .collect();
        for t in &trimmed {
            validate_trajectory(inst, t).map_err(CoreError::InvalidTrajectory)?;
        }
        self.run(tape, emb, inst, Driver::Forced(&trimmed), &mut rand::rngs::mock::StepRng::new(0, 0))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        emb: &Embeddings,
        inst: &Instance,
        driver: Driver,
        rng: &mut R,
    ) -> Result<RolloutOutput> {
        let r = driver.rollouts();
        let n1 = inst.n() + 1;
        let cache = self.decoder.precompute(tape, emb)?;
        let grad = tape.grad_enabled();
        let mut states = vec![DecodeState::new(inst); r];
        let mut parts: Vec<Var> = Vec::new();
        let mut part_rows: Vec<usize> = Vec::new();
        let mut t = 0;
        loop {
            let active: Vec<usize> = (0..r).filter(|&i| !states[i].is_finished()).collect();
            if active.is_empty() {
                break;
            }
            let masks = active
                .iter()
                .map(|&i| step_mask(inst, &states[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut chosen: Vec<Option<usize>> = vec![None; active.len()];
            // Rows with a single feasible action have probability one and
            // skip the network.
            let mut net_rows = Vec::new();
            for (k, &i) in active.iter().enumerate() {
                let feasible = masks[k].iter().filter(|&&m| m).count();
                match &driver {
                    Driver::Forced(trajs) => {
                        let a = *trajs[i].get(t).ok_or_else(|| {
                            CoreError::Contract(format!("trajectory {i} ends before all customers are served"))
                        })?;
                        chosen[k] = Some(a);
                    }
                    Driver::Starts { starts, .. } if t == 0 => chosen[k] = Some(starts[i]),
                    Driver::Starts { .. } if feasible == 1 => {
                        chosen[k] = masks[k].iter().position(|&m| m);
                    }
                    Driver::Starts { .. } => {}
                }
                if feasible > 1 {
                    net_rows.push(k);
                }
            }
            if !net_rows.is_empty() {
                let mark = tape.mark();
                let st: Vec<&DecodeState> = net_rows.iter().map(|&k| &states[active[k]]).collect();
                let flat: Vec<bool> = net_rows.iter().flat_map(|&k| masks[k].iter().copied()).collect();
                let mask = Mask::per_row(net_rows.len(), flat);
                let logits = self.decoder.step_logits(tape, &cache, &st, &mask)?;
                let mut picks = Vec::with_capacity(net_rows.len());
                for (j, &k) in net_rows.iter().enumerate() {
                    let a = match chosen[k] {
                        Some(a) => a,
                        None => {
                            let row = &tape.value(logits).data()[j * n1..(j + 1) * n1];
                            let probs = softmax_row(row, Some(&masks[k]));
                            let mode = match driver {
                                Driver::Starts { mode, .. } => mode,
                                Driver::Forced(_) => unreachable!("forced rows are always chosen"),
                            };
                            select(&probs, mode, rng)
                        }
                    };
                    chosen[k] = Some(a);
                    picks.push(a);
                }
                let lp = tape.log_softmax_pick(logits, Some(&mask), &picks)?;
                for (j, &k) in net_rows.iter().enumerate() {
                    states[active[k]].log_prob += tape.value(lp).data()[j];
                }
                if grad {
                    parts.push(lp);
                    part_rows.extend(net_rows.iter().map(|&k| active[k]));
                } else {
                    tape.truncate(mark);
                }
            }
            for (k, &i) in active.iter().enumerate() {
                let a = chosen[k].expect("every active row has an action");
                states[i].apply(inst, a)?;
            }
            t += 1;
        }
        if let Driver::Forced(trajs) = &driver {
            if let Some(i) = (0..r).find(|&i| trajs[i].len() != states[i].actions.len()) {
                return Err(CoreError::Contract(format!("trajectory {i} continues after all customers are served")));
            }
        }
        let log_probs = if grad {
            Some(gather_log_probs(tape, &parts, &part_rows, r)?)
        } else {
            None
        };
        let trajectories = states
            .into_iter()
            .map(|s| {
                let reward = -walk_length(inst, &s.actions);
                Trajectory {
                    actions: s.actions,
                    log_prob: s.log_prob,
                    reward,
                }
            })
            .collect();
        Ok(RolloutOutput {
            trajectories,
            log_probs,
        })
    }
}

/// Sums per-step log-probabilities into one entry per rollout.
fn gather_log_probs(tape: &mut Tape, parts: &[Var], rows: &[usize], r: usize) -> Result<Var> {
    if parts.is_empty() {
        return Ok(tape.constant(Tensor::vector(vec![0.0; r])));
    }
    let cols = parts
        .iter()
        .map(|&p| {
            let len = tape.value(p).numel();
            tape.reshape(p, vec![len, 1])
        })
        .collect::<pomo_numerics::Result<Vec<_>>>()?;
    let all = tape.concat_rows(&cols)?;
    let flat = tape.reshape(all, vec![rows.len()])?;
    Ok(tape.scatter(flat, rows, r)?)
}

fn select<R: Rng + ?Sized>(probs: &[f64], mode: DecodeMode, rng: &mut R) -> usize {
    match mode {
        DecodeMode::Greedy => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
        DecodeMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    last = i;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        }
    }
}
