//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use pomo_core::aux_agent::{sample_starts, SelectionMode};
use pomo_core::cvrp::{
    augment, brute_force_optimal, clarke_wright, generate_set, to_routes, validate_trajectory, walk_length,
    DemandDistribution, Instance, RouteSet, Trajectory, NUM_AUGMENTATIONS,
};
use pomo_core::cvrplib::{compute_gap, normalize, parse_instance, read_best_known, write_bucket_csv, write_gap_csv, Rounding};
use pomo_core::eval::{eval_cvrplib, infer, InferConfig};
use pomo_core::model::{Mode, Model};
use pomo_core::policy::{DecodeMode, ModelConfig};
use pomo_core::trainer::{TrainConfig, TrainOutcome, Trainer};
use pomo_numerics::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String), String>;

fn report(name: &str, verdict: Verdict, failures: &mut usize) {
    match verdict {
        Ok((true, detail)) => println!("PASS {name}: {detail}"),
        Ok((false, detail)) => {
            *failures += 1;
            println!("FAIL {name}: {detail}");
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL {name}: error: {e}");
        }
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_correctness() -> Verdict {
    let t0 = Instant::now();
    let (mut checks, mut worst, mut bad) = (0, 0.0f64, Vec::new());
    for seed in 0..20 {
        let mut all = pomo_numerics::gradcheck::primitive_suite(seed).map_err(err)?;
        all.extend(pomo_core::gradcheck::composite_suite(seed).map_err(err)?);
        for c in all {
            checks += 1;
            worst = worst.max(c.max_rel_error);
            if !c.passed() {
                bad.push(c.name);
            }
        }
    }
    let elapsed = t0.elapsed();
    let ok = bad.is_empty() && elapsed < Duration::from_secs(120);
    Ok((
        ok,
        format!(
            "{checks} checks on 20 seeds (d=8, N<=5), worst rel error {worst:.2e} (tol 1e-3), {} failed, {:.1}s (limit 120s)",
            bad.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn feasibility_fuzz() -> Verdict {
    let model = Model::new(ModelConfig::desk(), Mode::Pomo, 11).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut violations, mut rollouts) = (0, 0);
    for i in 0..1000 {
        let n = [5, 10, 20][i % 3];
        let inst = &generate_set(n, 1, DemandDistribution::IntegerUniform, "fz", &mut rng).map_err(err)?[0];
        let mut tape = Tape::inference(&model.store);
        let emb = model.policy.encode(&mut tape, inst).map_err(err)?;
        let starts: Vec<usize> = (1..=n).collect();
        let out = model
            .policy
            .rollout_multi(&mut tape, &emb, inst, &starts, DecodeMode::Sample, &mut rng)
            .map_err(err)?;
        for t in &out.trajectories {
            rollouts += 1;
            if validate_trajectory(inst, &t.actions).is_err() {
                violations += 1;
            }
        }
    }
    Ok((
        violations == 0,
        format!("1000 instances (N in 5/10/20), {rollouts} sampled rollouts, {violations} violations"),
    ))
}

struct Runs {
    pomo: Vec<(Trainer, TrainOutcome)>,
    plus: Vec<(Trainer, TrainOutcome)>,
    max_adv_sum: f64,
    steps_seen: usize,
    pomo_elapsed: Duration,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn trend_config(mode: Mode, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(10, mode);
    cfg.epochs = 10;
    cfg.instances_per_epoch = 2000;
    cfg.seed = seed;
    cfg
}

fn training_runs() -> Result<Runs, String> {
    let mut max_adv_sum = 0.0f64;
    let mut steps_seen = 0;
    let mut run = |mode: Mode, seed: u64| -> Result<(Trainer, TrainOutcome), String> {
        let mut t = Trainer::new(trend_config(mode, seed)).map_err(err)?;
        let out = t
            .fit_with(|r| {
                steps_seen += 1;
                for adv in &r.advantages {
                    max_adv_sum = max_adv_sum.max(adv.iter().sum::<f64>().abs());
                }
            })
            .map_err(err)?;
        Ok((t, out))
    };
    let t0 = Instant::now();
    let pomo = SEEDS.iter().map(|&s| run(Mode::Pomo, s)).collect::<Result<Vec<_>, _>>()?;
    let pomo_elapsed = t0.elapsed();
    let plus = SEEDS.iter().map(|&s| run(Mode::PomoPlus, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(Runs {
        pomo,
        plus,
        max_adv_sum,
        steps_seen,
        pomo_elapsed,
    })
}

fn baseline_identity(runs: &Runs) -> Verdict {
    Ok((
        runs.max_adv_sum <= 1e-6,
        format!(
            "{} training steps (POMO and POMO+), max |sum of advantages| per instance {:.2e} (tol 1e-6)",
            runs.steps_seen, runs.max_adv_sum
        ),
    ))
}

/// Exhaustive search over every feasible action sequence, independent of
/// the split-based brute force.
fn enumerate_optimum(inst: &Instance) -> Vec<usize> {
    fn dfs(
        inst: &Instance,
        cur: usize,
        load: f64,
        visited: &mut Vec<bool>,
        left: usize,
        cost: f64,
        path: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if left == 0 {
            let total = cost + inst.dist(cur, 0);
            if total < best.0 {
                *best = (total, path.clone());
            }
            return;
        }
        if cost >= best.0 {
            return;
        }
        if cur != 0 {
            path.push(0);
            dfs(inst, 0, 1.0, visited, left, cost + inst.dist(cur, 0), path, best);
            path.pop();
        }
        for c in 1..=inst.n() {
            if !visited[c] && inst.demand_fraction(c) <= load + 1e-9 {
                visited[c] = true;
                path.push(c);
                dfs(inst, c, load - inst.demand_fraction(c), visited, left - 1, cost + inst.dist(cur, c), path, best);
                path.pop();
                visited[c] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut visited = vec![false; inst.n() + 1];
    dfs(inst, 0, 1.0, &mut visited, inst.n(), 0.0, &mut Vec::new(), &mut best);
    best.1
}

/// Orientation- and order-independent form, so equal solutions give
/// bitwise-equal costs.
fn canonical(rs: &RouteSet) -> RouteSet {
    let mut routes: Vec<Vec<usize>> = rs
        .routes
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.first() > r.last() {
                r.reverse();
            }
            r
        })
        .collect();
    routes.sort();
    RouteSet { routes }
}

fn oracle_dominance(model: &Model) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let insts = generate_set(7, 200, DemandDistribution::IntegerUniform, "or", &mut rng).map_err(err)?;
    let (mut bf_above_cw, mut cw_above_model, mut mismatch, mut trajectories) = (0, 0, 0, 0);
    let mut worst_cw_excess = 0.0f64;
    for inst in &insts {
        let (bf_routes, bf) = brute_force_optimal(inst).map_err(err)?;
        let (_, cw) = clarke_wright(inst);
        if bf > cw + 1e-9 {
            bf_above_cw += 1;
        }
        let enum_best = to_routes(&Trajectory::from_actions(enumerate_optimum(inst))).map_err(err)?;
        if canonical(&enum_best).cost(inst) != canonical(&bf_routes).cost(inst) {
            mismatch += 1;
        }
        let mut tape = Tape::inference(&model.store);
        let emb = model.policy.encode(&mut tape, inst).map_err(err)?;
        let starts: Vec<usize> = (1..=7).collect();
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .policy
            .rollout_multi(&mut tape, &emb, inst, &starts, DecodeMode::Greedy, &mut unused)
            .map_err(err)?;
        for t in &out.trajectories {
            trajectories += 1;
            let c = walk_length(inst, &t.actions);
            if c < bf - 1e-9 {
                return Ok((false, format!("{}: model cost {c} below optimum {bf}", inst.id)));
            }
            if cw > c + 1e-9 {
                cw_above_model += 1;
                worst_cw_excess = worst_cw_excess.max((cw - c) / c * 100.0);
            }
        }
    }
    Ok((
        bf_above_cw == 0 && cw_above_model == 0 && mismatch == 0,
        format!(
            "200 N=7 instances: brute force > CW on {bf_above_cw}; brute force != enumerator on {mismatch}; \
             CW > model on {cw_above_model} of {trajectories} greedy trajectories of the trained seed-0 POMO model \
             (worst CW excess {worst_cw_excess:.2}%)"
        ),
    ))
}

fn pomo_plus_mechanics() -> Verdict {
    let mut cfg = TrainConfig::desk(20, Mode::PomoPlus);
    cfg.batch_size = 2;
    cfg.aux_accum_steps = 100;
    cfg.seed = 5;
    let k = cfg.k();
    let mut t = Trainer::new(cfg).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut bad_batches, mut update_steps, mut omega_drift) = (0, Vec::new(), 0);
    let snapshot = |t: &Trainer| -> Vec<Vec<f64>> {
        t.model.aux_params().iter().map(|&id| t.model.store.get(id).data().to_vec()).collect()
    };
    for step in 1..=200 {
        let batch = generate_set(20, 2, DemandDistribution::IntegerUniform, "m", &mut rng).map_err(err)?;
        let before = snapshot(&t);
        let r = t.policy_gradient_step(&batch).map_err(err)?;
        for starts in &r.starts {
            let mut distinct = starts.clone();
            distinct.sort();
            distinct.dedup();
            let ok = distinct.len() == 4 && distinct.iter().all(|d| starts.iter().filter(|&s| s == d).count() == 5);
            if !ok {
                bad_batches += 1;
            }
        }
        if t.aux_update() {
            update_steps.push(step);
        } else if snapshot(&t) != before {
            omega_drift += 1;
        }
    }
    // aux gradients on fresh instances must leave every policy slot at zero
    let aux = t.model.aux.as_ref().expect("pomo+ model");
    let mut nonzero_encoder = 0;
    for inst in generate_set(20, 10, DemandDistribution::IntegerUniform, "g", &mut rng).map_err(err)? {
        let mut tape = Tape::with_params(&t.model.store);
        let emb = t.model.policy.encode(&mut tape, &inst).map_err(err)?;
        let nodes = tape.value(emb.nodes).clone();
        let mut at = Tape::with_params(&t.model.store);
        let logits = aux.score(&mut at, &nodes).map_err(err)?;
        let values = at.value(logits).data().to_vec();
        let sel = sample_starts(&values, k, SelectionMode::Train, 1.0, &mut rng).map_err(err)?;
        let rewards: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
        let g = aux.reinforce_grad(&t.model.store, &nodes, &sel, &rewards, 1.0 / 20.0).map_err(err)?;
        nonzero_encoder += t
            .model
            .policy_params()
            .iter()
            .filter(|&&id| t.model.store.name(id).starts_with("encoder.") && !g.is_zero(id))
            .count();
    }
    let ok = k == 4 && bad_batches == 0 && update_steps == vec![100, 200] && omega_drift == 0 && nonzero_encoder == 0;
    Ok((
        ok,
        format!(
            "N=20, K={k}: {bad_batches} rollout sets without 4 starts x5; aux updates at steps {update_steps:?} of 200; \
             aux weights changed between updates {omega_drift} times; nonzero encoder gradient slots from aux loss: {nonzero_encoder}"
        ),
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn learning_trend(runs: &Runs) -> Verdict {
    let untrained: Vec<f64> = runs.pomo.iter().map(|(_, o)| -o.initial_validation.mean_reward).collect();
    let trained: Vec<f64> = runs
        .pomo
        .iter()
        .map(|(_, o)| -o.epochs.last().expect("epochs").validation.mean_reward)
        .collect();
    let improvement = (mean(&untrained) - mean(&trained)) / mean(&untrained) * 100.0;

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let held_out = generate_set(7, 100, DemandDistribution::IntegerUniform, "ho", &mut rng).map_err(err)?;
    let optimum: Vec<f64> = held_out
        .iter()
        .map(|i| brute_force_optimal(i).map(|(_, c)| c))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let cfg = InferConfig {
        decode: DecodeMode::Greedy,
        augment: true,
        ..Default::default()
    };
    let mut gaps = Vec::new();
    for (t, _) in &runs.pomo {
        let mut g = Vec::new();
        for (inst, opt) in held_out.iter().zip(&optimum) {
            let r = infer(&t.model, inst, &cfg).map_err(err)?;
            g.push((r.cost - opt) / opt * 100.0);
        }
        gaps.push(mean(&g));
    }
    let gap = mean(&gaps);
    let minutes = runs.pomo_elapsed.as_secs_f64() / 60.0;
    Ok((
        improvement >= 25.0 && gap <= 10.0 && minutes <= 30.0,
        format!(
            "N=10, d=32, 2000 instances x 10 epochs, 3 seeds: validation cost {:.4} -> {:.4} ({improvement:.1}% better, need >=25%); \
             greedy x8 gap to optimum on 100 N=7 instances {gap:.2}% (per seed {:?}, need <=10%); training {minutes:.1} min (limit 30)",
            mean(&untrained),
            mean(&trained),
            gaps.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>()
        ),
    ))
}

fn plus_vs_pomo(runs: &Runs) -> Verdict {
    let at = |o: &TrainOutcome, e: usize| o.epochs[e - 1].validation.mean_reward;
    let mut wins = 0;
    let mut lines = Vec::new();
    for ((_, p), (_, q)) in runs.pomo.iter().zip(&runs.plus) {
        if at(q, 5) >= at(p, 5) {
            wins += 1;
        }
        lines.push(format!("e5 {:.4} vs {:.4}, final {:.4} vs {:.4}", at(q, 5), at(p, 5), at(q, 10), at(p, 10)));
    }
    let final_wins = runs
        .pomo
        .iter()
        .zip(&runs.plus)
        .filter(|((_, p), (_, q))| at(q, 10) >= at(p, 10))
        .count();
    Ok((
        wins >= 2,
        format!(
            "POMO+ >= POMO validation reward at epoch 5 in {wins}/3 seeds (need 2); final epoch {final_wins}/3 (reported only); \
             POMO+ vs POMO per seed: [{}]",
            lines.join("; ")
        ),
    ))
}

fn augmentation_soundness(model: &Model) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let shard = generate_set(10, 100, DemandDistribution::IntegerUniform, "aug", &mut rng).map_err(err)?;
    let (mut worst_drift, mut worse) = (0.0f64, 0);
    let single_cfg = InferConfig {
        augment: false,
        seed: 3,
        ..Default::default()
    };
    let aug_cfg = InferConfig {
        augment: true,
        ..single_cfg.clone()
    };
    for inst in &shard {
        let single = infer(model, inst, &single_cfg).map_err(err)?;
        let base = walk_length(inst, &single.trajectory.actions);
        for k in 0..NUM_AUGMENTATIONS {
            let view = augment(inst, k).map_err(err)?;
            worst_drift = worst_drift.max((walk_length(&view, &single.trajectory.actions) - base).abs());
        }
        let best = infer(model, inst, &aug_cfg).map_err(err)?;
        if best.cost > single.cost {
            worse += 1;
        }
    }
    Ok((
        worst_drift <= 1e-6 && worse == 0,
        format!(
            "100 N=10 instances: max cost change under the 8 symmetries {worst_drift:.2e} (tol 1e-6); \
             best-of-8 worse than single inference on {worse}"
        ),
    ))
}

fn reproducibility() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for mode in [Mode::Pomo, Mode::PomoPlus] {
        let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
        for d in &dirs {
            let mut cfg = TrainConfig::desk(10, mode);
            cfg.epochs = 3;
            cfg.instances_per_epoch = 96;
            cfg.validation_size = 16;
            cfg.aux_accum_steps = 2;
            cfg.seed = 31;
            cfg.out_dir = Some(d.path().to_path_buf());
            Trainer::new(cfg).map_err(err)?.fit().map_err(err)?;
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
            .map_err(err)?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        names.sort();
        let mut differing = 0;
        for n in &names {
            let a = std::fs::read(dirs[0].path().join(n)).map_err(err)?;
            let b = std::fs::read(dirs[1].path().join(n)).map_err(err)?;
            if a != b {
                differing += 1;
            }
        }
        ok &= differing == 0 && names.len() >= 5;
        details.push(format!("{mode}: {} files compared, {differing} differ", names.len()));
    }
    Ok((ok, format!("two identical runs per mode: {}", details.join("; "))))
}

const FIXTURE: &str = "NAME : X-n6-k2
COMMENT : synthetic
TYPE : CVRP
DIMENSION : 7
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 20
NODE_COORD_SECTION
1 50 50
2 10 10
3 90 15
4 85 80
5 20 90
6 55 20
7 45 75
DEMAND_SECTION
1 0
2 7
3 5
4 9
5 6
6 8
7 4
DEPOT_SECTION
1
-1
EOF
";

fn cvrplib_pipeline(model: &Model) -> Verdict {
    let exact = compute_gap(110.0, 100.0).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let vrp = dir.path().join("X-n6-k2.vrp");
    std::fs::write(&vrp, FIXTURE).map_err(err)?;
    let lib = parse_instance(FIXTURE).map_err(err)?;
    let norm = normalize(&lib).map_err(err)?;
    let unit = norm.instance.in_unit_square();
    let best_known: BTreeMap<_, _> = read_best_known("name,cost,k\nX-n6-k2,300,2\n".as_bytes()).map_err(err)?;
    let cfg = InferConfig {
        decode: DecodeMode::Greedy,
        ..Default::default()
    };
    let rep = eval_cvrplib(model, &[vrp], &best_known, &cfg, Rounding::Exact).map_err(err)?;
    let r = &rep.reports[0];
    let gap = r.gap_percent.ok_or("missing gap")?;
    let recomputed = compute_gap(r.model_cost, 300.0).map_err(err)?;
    let populated: Vec<_> = rep.buckets.iter().filter(|b| b.count > 0).collect();
    let mut gap_csv = Vec::new();
    let mut bucket_csv = Vec::new();
    write_gap_csv(&mut gap_csv, &rep.reports).map_err(err)?;
    write_bucket_csv(&mut bucket_csv, &rep.buckets).map_err(err)?;
    let csv_rows = String::from_utf8_lossy(&gap_csv).lines().count() + String::from_utf8_lossy(&bucket_csv).lines().count();
    let ok = exact == 10.0
        && unit
        && gap == recomputed
        && populated.len() == 1
        && populated[0].mean_gap_percent == Some(gap)
        && rep.buckets.len() == 6
        && csv_rows == 2 + 7;
    Ok((
        ok,
        format!(
            "gap(110, 100) = {exact}% (need exactly 10.0); fixture cost {:.3} vs best 300 -> gap {gap:.3}% in bucket {}; \
             {} buckets, {csv_rows} CSV lines",
            r.model_cost,
            populated.first().map(|b| b.label.as_str()).unwrap_or("-"),
            rep.buckets.len()
        ),
    ))
}

fn main() {
    let t0 = Instant::now();
    let mut failures = 0;
    report("gradient correctness", gradient_correctness(), &mut failures);
    report("feasibility fuzz", feasibility_fuzz(), &mut failures);
    match training_runs() {
        Ok(runs) => {
            let model = &runs.pomo[0].0.model;
            report("baseline identity", baseline_identity(&runs), &mut failures);
            report("oracle dominance", oracle_dominance(model), &mut failures);
            report("pomo+ mechanics", pomo_plus_mechanics(), &mut failures);
            report("learning trend", learning_trend(&runs), &mut failures);
            report("pomo+ vs pomo trend", plus_vs_pomo(&runs), &mut failures);
            report("augmentation soundness", augmentation_soundness(model), &mut failures);
            report("reproducibility", reproducibility(), &mut failures);
            report("cvrplib pipeline", cvrplib_pipeline(model), &mut failures);
        }
        Err(e) => {
            failures += 1;
            println!("FAIL training runs: error: {e}");
        }
    }
    println!(
        "acceptance: {} failed, {:.0}s total",
        failures,
        t0.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
