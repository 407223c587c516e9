//! Finite-difference checks of the composed network losses.

use pomo_numerics::gradcheck::{check_params, random_tensor, GradCheck, FD_STEP};
use pomo_numerics::{NumericsError, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aux_agent::{sample_starts, AuxAgent, SelectionMode};
use crate::cvrp::generate_instance;
use crate::error::{CoreError, Result};
use crate::policy::{DecodeMode, ModelConfig, PolicyModel};

fn lift(e: CoreError) -> NumericsError {
    match e {
        CoreError::Numerics(n) => n,
        other => NumericsError::Contract {
            op: "composite",
            detail: other.to_string(),
        },
    }
}

/// Small configuration drawn from `seed`: `d = 8`, two heads, one or two
/// encoder layers and 2 to 5 customers.
pub fn small_config(seed: u64) -> (ModelConfig, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cfg = ModelConfig {
        embed_dim: 8,
        encoder_layers: rng.gen_range(1..=2),
        heads: 2,
        ff_hidden: 16,
        logit_clip: 10.0,
    };
    (cfg, rng.gen_range(2..=5))
}

/// Encoder embeddings, the policy REINFORCE surrogate over sampled
/// rollouts, and the auxiliary start-node loss, each checked against
/// central differences on every parameter.
pub fn composite_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let (cfg, n) = small_config(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = generate_instance(n, &mut rng)?;
    let mut store = ParamStore::new();
    let policy = PolicyModel::init(cfg, &mut store, &mut rng)?;
    let mut out = Vec::new();

    let (rows, d) = (n + 1, cfg.embed_dim);
    let w_nodes = random_tensor(&mut rng, &[rows * d]);
    let w_graph = random_tensor(&mut rng, &[d]);
    out.push(check_params(format!("encoder/seed{seed}"), &store, FD_STEP, |tape| {
        let emb = policy.encode(tape, &inst).map_err(lift)?;
        let a = tape.weighted_sum(emb.nodes, w_nodes.data())?;
        let b = tape.weighted_sum(emb.graph, w_graph.data())?;
        tape.add(a, b)
    })?);

    let starts: Vec<usize> = (1..=n).collect();
    let actions: Vec<Vec<usize>> = {
        let mut tape = Tape::inference(&store);
        let emb = policy.encode(&mut tape, &inst)?;
        policy
            .rollout_multi(&mut tape, &emb, &inst, &starts, DecodeMode::Sample, &mut rng)?
            .trajectories
            .into_iter()
            .map(|t| t.actions)
            .collect()
    };
    let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    out.push(check_params(format!("policy/seed{seed}"), &store, FD_STEP, |tape| {
        let emb = policy.encode(tape, &inst).map_err(lift)?;
        let lp = policy
            .log_prob_of(tape, &emb, &inst, &actions)
            .map_err(lift)?
            .log_probs
            .expect("gradient tape");
        tape.weighted_sum(lp, &adv)
    })?);

    let mut aux_store = ParamStore::new();
    let aux = AuxAgent::init(&cfg, &mut aux_store, &mut rng)?;
    let embeddings = random_tensor(&mut rng, &[rows, d]);
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let selection = sample_starts(&logits, n, SelectionMode::Train, 1.0, &mut rng)?;
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..-1.0)).collect();
    out.push(check_params(format!("aux/seed{seed}"), &aux_store, FD_STEP, |tape| {
        let l = aux.score(tape, &embeddings).map_err(lift)?;
        aux.reinforce_loss(tape, l, &selection, &rewards, 1.0 / n as f64)
            .map_err(lift)
    })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_configuration_passes() {
        for c in composite_suite(0).unwrap() {
            assert!(c.passed(), "{} max rel error {}", c.name, c.max_rel_error);
            assert!(c.entries > 0);
        }
    }
}
