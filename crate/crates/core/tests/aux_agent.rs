use pomo_core::aux_agent::{choose_k, sample_starts, AuxAgent, SelectionMode, StartSelection};
use pomo_core::cvrp::generate_instance;
use pomo_core::model::{Mode, Model};
use pomo_core::policy::ModelConfig;
use pomo_numerics::gradcheck::random_tensor;
use pomo_numerics::{softmax_row, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        encoder_layers: 1,
        heads: 2,
        ff_hidden: 16,
        logit_clip: 10.0,
    }
}

fn agent(seed: u64) -> (ParamStore, AuxAgent) {
    let mut store = ParamStore::new();
    let a = AuxAgent::init(&tiny(), &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, a)
}

#[test]
fn one_logit_per_customer_and_ties_for_twins() {
    let (store, a) = agent(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut e = random_tensor(&mut rng, &[6, 8]);
    let twin = e.row(2).to_vec();
    e.data_mut()[4 * 8..5 * 8].copy_from_slice(&twin);
    let mut tape = Tape::with_params(&store);
    let l = a.score(&mut tape, &e).unwrap();
    let v = tape.value(l).data();
    assert_eq!(v.len(), 5);
    assert!((v[1] - v[3]).abs() < 1e-12);
}

#[test]
fn k_equal_n_selects_everyone() {
    let logits = [0.3, -1.0, 2.0, 0.0, 0.5];
    let sel = sample_starts(&logits, 5, SelectionMode::Train, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut c = sel.chosen.clone();
    c.sort();
    assert_eq!(c, vec![1, 2, 3, 4, 5]);
    assert_eq!(sel.expanded.len(), 5);
}

#[test]
fn paper_sizes_repeat_each_start() {
    let logits: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
    let k = choose_k(20);
    let sel = sample_starts(&logits, k, SelectionMode::Infer, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(sel.k, 4);
    for c in &sel.chosen {
        assert_eq!(sel.expanded.iter().filter(|&&s| s == *c).count(), 5);
    }
    let probs = softmax_row(&logits, None);
    for (c, lp) in sel.chosen.iter().zip(&sel.log_probs) {
        assert!((lp - probs[c - 1].ln()).abs() < 1e-12);
    }
}

#[test]
fn k_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_starts(&[0.0; 4], 5, SelectionMode::Train, 1.0, &mut rng).is_err());
    assert!(sample_starts(&[0.0; 4], 3, SelectionMode::Infer, 1.0, &mut rng).is_err());
}

#[test]
fn gumbel_top_k_is_uniform_for_flat_logits() {
    let (n, k, draws) = (10usize, 2usize, 100_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        for c in sample_starts(&vec![0.0; n], k, SelectionMode::Train, 1.0, &mut rng).unwrap().chosen {
            counts[c - 1] += 1;
        }
    }
    let p = k as f64 / n as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{c}");
    }
}

#[test]
fn cold_gumbel_matches_top_k() {
    let logits = [0.1, 2.5, -0.3, 1.7, 0.9, 2.2];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let greedy = sample_starts(&logits, 3, SelectionMode::Greedy, 1.0, &mut rng).unwrap();
    assert_eq!(greedy.chosen, vec![2, 6, 4]);
    // temperature rescales all perturbed scores alike; once the logit gaps
    // dwarf the noise the draw is the plain top-K
    let scaled: Vec<f64> = logits.iter().map(|l| l * 1e6).collect();
    let cold = sample_starts(&scaled, 3, SelectionMode::Train, 1e-3, &mut rng).unwrap();
    assert_eq!(cold.chosen, greedy.chosen);
}

#[test]
fn advantages_from_the_shared_baseline() {
    let (store, a) = agent(1);
    let e = random_tensor(&mut ChaCha8Rng::seed_from_u64(2), &[4, 8]);
    let sel = StartSelection {
        k: 3,
        chosen: vec![1, 2, 3],
        log_probs: vec![0.0; 3],
        expanded: vec![1, 2, 3],
    };
    let flat = a.reinforce_grad(&store, &e, &sel, &[-5.0; 3], 1.0 / 3.0).unwrap();
    assert_eq!(flat.l2_norm(), 0.0);
    // rewards (-2,-4,-6) give advantages (2,0,-2): the loss is
    // -(1/3)(2 lp_1 - 2 lp_3)
    let mut tape = Tape::with_params(&store);
    let l = a.score(&mut tape, &e).unwrap();
    let loss = a.reinforce_loss(&mut tape, l, &sel, &[-2.0, -4.0, -6.0], 1.0 / 3.0).unwrap();
    let lp: Vec<f64> = softmax_row(tape.value(l).data(), None).iter().map(|p| p.ln()).collect();
    let expected = -(2.0 * lp[0] - 2.0 * lp[2]) / 3.0;
    assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
    assert!(a.reinforce_loss(&mut tape, l, &sel, &[-1.0; 2], 1.0).is_err());
}

#[test]
fn aux_loss_leaves_the_encoder_untouched() {
    let model = Model::new(tiny(), Mode::PomoPlus, 7).unwrap();
    let inst = generate_instance(6, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut tape = Tape::with_params(&model.store);
    let emb = model.policy.encode(&mut tape, &inst).unwrap();
    let nodes: Tensor = tape.value(emb.nodes).clone();
    let aux = model.aux.as_ref().unwrap();
    let logits: Vec<f64> = {
        let mut t = Tape::with_params(&model.store);
        let l = aux.score(&mut t, &nodes).unwrap();
        t.value(l).data().to_vec()
    };
    let sel = sample_starts(&logits, 2, SelectionMode::Train, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let g = aux.reinforce_grad(&model.store, &nodes, &sel, &[-1.0, -2.0, -3.0, -4.0, -5.0, -6.0], 1.0 / 6.0).unwrap();
    for id in model.policy_params() {
        assert!(g.is_zero(id), "{}", model.store.name(id));
    }
    assert!(model.aux_params().iter().any(|&id| !g.is_zero(id)));
}

proptest! {
    #[test]
    fn expansion_has_k_values_of_equal_multiplicity(seed in 0u64..1000, n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = choose_k(n);
        prop_assert_eq!(n % k, 0);
        let logits: Vec<f64> = random_tensor(&mut rng, &[n]).into_data();
        for mode in [SelectionMode::Train, SelectionMode::Infer, SelectionMode::Greedy] {
            let sel = sample_starts(&logits, k, mode, 1.0, &mut rng).unwrap();
            prop_assert_eq!(sel.expanded.len(), n);
            let mut distinct = sel.chosen.clone();
            distinct.sort();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), k);
            for c in &sel.chosen {
                prop_assert_eq!(sel.expanded.iter().filter(|&&s| s == *c).count(), n / k);
            }
        }
    }

    #[test]
    fn selection_probabilities_ignore_logit_shifts(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = random_tensor(&mut rng, &[8]).into_data();
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let a = sample_starts(&logits, 2, SelectionMode::Infer, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_starts(&shifted, 2, SelectionMode::Infer, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (x, y) in a.log_probs.iter().zip(&b.log_probs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
