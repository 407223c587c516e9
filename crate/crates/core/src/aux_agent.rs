//! Auxiliary agent that scores customers as rollout start nodes.

use pomo_numerics::{gumbel_noise, multi_head_attention, softmax_row, GradStore, ParamStore, Tape, Tensor, Var};
use rand::{Rng, RngCore};

use crate::error::{param_err, CoreError, Result};
use crate::trainer::advantages;
use crate::policy::params::{Attention, FeedForward, Linear, Norm, ParamSource};
use crate::policy::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Top-K of Gumbel-perturbed logits.
    Train,
    /// Sequential softmax draws without replacement.
    Infer,
    /// Top-K of the raw logits.
    Greedy,
}

/// Start nodes chosen for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct StartSelection {
    pub k: usize,
    /// Distinct customers (1-based), in selection order.
    pub chosen: Vec<usize>,
    /// `ln softmax(logits)` of each chosen customer, without a
    /// without-replacement correction.
    pub log_probs: Vec<f64>,
    /// Each chosen node repeated `N/K` times, contiguously; one entry per
    /// rollout.
    pub expanded: Vec<usize>,
}

/// One attention block over frozen node embeddings followed by a two-layer
/// scoring head.
#[derive(Debug, Clone)]
pub struct AuxAgent {
    attn: Attention,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
    hidden: Linear,
    score: Linear,
    heads: usize,
}

impl AuxAgent {
    pub fn init(config: &ModelConfig, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        Self::build(config, &mut ParamSource::Init { store, rng })
    }

    pub fn bind(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        Self::build(config, &mut ParamSource::Bind(store))
    }

    fn build(cfg: &ModelConfig, src: &mut ParamSource) -> Result<Self> {
        let d = cfg.embed_dim;
        if d < 2 {
            return param_err("embed_dim", "auxiliary head needs at least 2 dimensions");
        }
        Ok(Self {
            attn: Attention::new(src, "aux.attn", d)?,
            norm1: Norm::new(src, "aux.norm1", d)?,
            ff: FeedForward::new(src, "aux.ff", d, cfg.ff_hidden)?,
            norm2: Norm::new(src, "aux.norm2", d)?,
            hidden: Linear::new(src, "aux.head.hidden", d, d / 2)?,
            score: Linear::new(src, "aux.head.score", d / 2, 1)?,
            heads: cfg.heads,
        })
    }

    /// Start logits `[N]`, one per customer. `embeddings` is `[(N+1)×d]`
    /// with the depot in row 0 and enters as a constant, so no gradient
    /// reaches the encoder.
    pub fn score(&self, tape: &mut Tape, embeddings: &Tensor) -> Result<Var> {
        let (rows, _) = embeddings.rows_cols();
        if rows < 2 {
            return Err(CoreError::Contract("embeddings hold no customer rows".into()));
        }
        let e = tape.constant(embeddings.clone());
        let w = self.attn.weights(tape);
        let a = multi_head_attention(tape, e, e, e, &w, self.heads, None)?;
        let r = tape.add(e, a)?;
        let h = self.norm1.forward(tape, r)?;
        let f = self.ff.forward(tape, h)?;
        let r = tape.add(h, f)?;
        let h = self.norm2.forward(tape, r)?;
        let idx: Vec<usize> = (1..rows).collect();
        let cust = tape.gather_rows(h, &idx)?;
        let z = self.hidden.forward(tape, cust)?;
        let z = tape.relu(z);
        let s = self.score.forward(tape, z)?;
        Ok(tape.reshape(s, vec![rows - 1])?)
    }

    /// REINFORCE surrogate whose gradient is
    /// `-(scale) Σ_i adv_i ∇ ln softmax(logits)[start_i]`, with `adv` the
    /// reward minus its mean over the instance's rollouts.
    pub fn reinforce_loss(
        &self,
        tape: &mut Tape,
        logits: Var,
        selection: &StartSelection,
        rewards: &[f64],
        scale: f64,
    ) -> Result<Var> {
        if rewards.len() != selection.expanded.len() {
            return Err(CoreError::Contract(format!(
                "{} rewards for {} rollouts",
                rewards.len(),
                selection.expanded.len()
            )));
        }
        let n = tape.value(logits).numel();
        let picks: Vec<usize> = selection.expanded.iter().map(|&s| s - 1).collect();
        let rows = tape.reshape(logits, vec![1, n])?;
        let rows = tape.gather_rows(rows, &vec![0; picks.len()])?;
        let lp = tape.log_softmax_pick(rows, None, &picks)?;
        let weights: Vec<f64> = advantages(rewards)?.iter().map(|a| -a * scale).collect();
        Ok(tape.weighted_sum(lp, &weights)?)
    }

    /// Gradient of [`AuxAgent::reinforce_loss`] with respect to the `aux.*`
    /// parameters, computed on a fresh tape.
    pub fn reinforce_grad(
        &self,
        store: &ParamStore,
        embeddings: &Tensor,
        selection: &StartSelection,
        rewards: &[f64],
        scale: f64,
    ) -> Result<GradStore> {
        let mut tape = Tape::with_params(store);
        let logits = self.score(&mut tape, embeddings)?;
        let loss = self.reinforce_loss(&mut tape, logits, selection, rewards, scale)?;
        let mut grads = store.zero_grads();
        tape.backward(loss, &mut grads)?;
        Ok(grads)
    }
}

/// Number of distinct start nodes for `n` customers: the divisor of `n`
/// closest to `0.2 n`, the smaller one on ties.
pub fn choose_k(n: usize) -> usize {
    let target = (0.2 * n as f64).round().max(1.0);
    (1..=n.max(1))
        .filter(|d| n % d == 0)
        .min_by(|a, b| {
            let da = (*a as f64 - target).abs();
            let db = (*b as f64 - target).abs();
            da.total_cmp(&db).then(a.cmp(b))
        })
        .unwrap_or(1)
}

/// Picks `k` distinct start customers from the logits and expands them to
/// `N` rollouts. `k` must divide `N`.
pub fn sample_starts<R: Rng + ?Sized>(
    logits: &[f64],
    k: usize,
    mode: SelectionMode,
    temperature: f64,
    rng: &mut R,
) -> Result<StartSelection> {
    let n = logits.len();
    if k == 0 || k > n || n % k != 0 {
        return param_err("k", format!("{k} does not divide {n} customers"));
    }
    if !(temperature > 0.0) {
        return param_err("temperature", format!("must be positive, got {temperature}"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("start logits".into()));
    }
    let chosen: Vec<usize> = match mode {
        SelectionMode::Train => {
            let noise = gumbel_noise(rng, n);
            let perturbed: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| (l + g) / temperature).collect();
            top_k(&perturbed, k)
        }
        SelectionMode::Greedy => top_k(logits, k),
        SelectionMode::Infer => {
            let mut allowed = vec![true; n];
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                let probs = softmax_row(logits, Some(&allowed));
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = None;
                for (i, &p) in probs.iter().enumerate() {
                    if allowed[i] {
                        acc += p;
                        pick = Some(i);
                        if u < acc {
                            break;
                        }
                    }
                }
                let i = pick.expect("at least one customer remains");
                allowed[i] = false;
                out.push(i);
            }
            out
        }
    }
    .into_iter()
    .map(|i| i + 1)
    .collect();
    let repeats = n / k;
    let expanded = chosen.iter().flat_map(|&c| std::iter::repeat(c).take(repeats)).collect();
    let probs = softmax_row(logits, None);
    let log_probs = chosen.iter().map(|&c| probs[c - 1].ln()).collect();
    Ok(StartSelection {
        k,
        chosen,
        log_probs,
        expanded,
    })
}

/// Indices of the `k` largest values, largest first, lower index on ties.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Shannon entropy of `softmax(logits)` in nats.
pub fn start_entropy(logits: &[f64]) -> f64 {
    softmax_row(logits, None)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_for_standard_sizes() {
        assert_eq!(choose_k(20), 4);
        assert_eq!(choose_k(50), 10);
        assert_eq!(choose_k(100), 20);
        assert_eq!(choose_k(1), 1);
        // 0.2*7 rounds to 1, the only proper choice for a prime
        assert_eq!(choose_k(7), 1);
        // target 2 for 12; 2 divides
        assert_eq!(choose_k(12), 2);
        // target 3 for 16: divisors 2 and 4 tie, take 2
        assert_eq!(choose_k(16), 2);
    }

    #[test]
    fn expansion_is_contiguous() {
        let logits = [0.0, 5.0, 1.0, 4.0, -1.0, 3.0];
        let sel = sample_starts(&logits, 3, SelectionMode::Greedy, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(sel.chosen, vec![2, 4, 6]);
        assert_eq!(sel.expanded, vec![2, 2, 4, 4, 6, 6]);
    }

    #[test]
    fn sampled_starts_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        for mode in [SelectionMode::Train, SelectionMode::Infer] {
            for _ in 0..200 {
                let sel = sample_starts(&logits, 4, mode, 1.0, &mut rng).unwrap();
                let mut c = sel.chosen.clone();
                c.sort();
                c.dedup();
                assert_eq!(c.len(), 4);
                assert!(c.iter().all(|&s| (1..=20).contains(&s)));
                assert_eq!(sel.expanded.len(), 20);
            }
        }
    }

    #[test]
    fn invalid_k_and_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = [0.0; 6];
        assert!(sample_starts(&l, 4, SelectionMode::Train, 1.0, &mut rng).is_err());
        assert!(sample_starts(&l, 0, SelectionMode::Train, 1.0, &mut rng).is_err());
        assert!(sample_starts(&l, 3, SelectionMode::Train, 0.0, &mut rng).is_err());
    }

    #[test]
    fn entropy_of_uniform_is_ln_n() {
        assert!((start_entropy(&[0.0; 8]) - 8f64.ln()).abs() < 1e-12);
    }
}
