//! Inference with optional dihedral augmentation, dataset evaluation and
//! the CVRPLIB gap pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pomo_numerics::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aux_agent::{choose_k, sample_starts, SelectionMode};
use crate::cvrp::{augment, validate_trajectory, walk_length, Instance, Trajectory, NUM_AUGMENTATIONS};
use crate::cvrplib::{bucket_reports, normalize, parse_instance, BestKnown, BucketSummary, GapReport, Rounding};
use crate::error::{param_err, CoreError, Result};
use crate::model::Model;
use crate::policy::DecodeMode;
use crate::seeding::{derive_seed, hash_str};

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub decode: DecodeMode,
    /// Solve all 8 symmetric copies and keep the best.
    pub augment: bool,
    /// Rollout sets per copy when sampling; greedy always uses one.
    pub samples: usize,
    pub seed: u64,
    pub aux_k: Option<usize>,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            decode: DecodeMode::Sample,
            augment: true,
            samples: 1,
            seed: 0,
            aux_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferResult {
    pub id: String,
    pub cost: f64,
    pub trajectory: Trajectory,
    /// Index of the symmetry that produced the best trajectory.
    pub augmentation: usize,
    pub elapsed: Duration,
}

/// Best trajectory over the (augmented) rollouts. Costs are measured on
/// the original instance; each copy draws from its own seeded stream, so
/// copy 0 reproduces a run without augmentation.
pub fn infer(model: &Model, inst: &Instance, cfg: &InferConfig) -> Result<InferResult> {
    if cfg.samples == 0 {
        return param_err("samples", "must be positive");
    }
    let t0 = Instant::now();
    let copies = if cfg.augment { NUM_AUGMENTATIONS } else { 1 };
    let rounds = match cfg.decode {
        DecodeMode::Greedy => 1,
        DecodeMode::Sample => cfg.samples,
    };
    let mut best: Option<(f64, Trajectory, usize)> = None;
    for k in 0..copies {
        let view = augment(inst, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[hash_str(&inst.id), k as u64]));
        let mut tape = Tape::inference(&model.store);
        let emb = model.policy.encode(&mut tape, &view)?;
        let mark = tape.mark();
        for _ in 0..rounds {
            let starts: Vec<usize> = match &model.aux {
                None => (1..=view.n()).collect(),
                Some(aux) => {
                    let nodes = tape.value(emb.nodes).clone();
                    let mut aux_tape = Tape::inference(&model.store);
                    let logits = aux.score(&mut aux_tape, &nodes)?;
                    let values = aux_tape.value(logits).data().to_vec();
                    let mode = match cfg.decode {
                        DecodeMode::Greedy => SelectionMode::Greedy,
                        DecodeMode::Sample => SelectionMode::Infer,
                    };
                    let k = cfg.aux_k.unwrap_or_else(|| choose_k(view.n()));
                    sample_starts(&values, k, mode, 1.0, &mut rng)?.expanded
                }
            };
            let out = model
                .policy
                .rollout_multi(&mut tape, &emb, &view, &starts, cfg.decode, &mut rng)?;
            tape.truncate(mark);
            for traj in out.trajectories {
                validate_trajectory(inst, &traj.actions).map_err(CoreError::InvalidTrajectory)?;
                let cost = walk_length(inst, &traj.actions);
                if best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, traj, k));
                }
            }
        }
    }
    let (cost, mut trajectory, augmentation) = best.expect("at least one rollout");
    trajectory.reward = -cost;
    Ok(InferResult {
        id: inst.id.clone(),
        cost,
        trajectory,
        augmentation,
        elapsed: t0.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    /// Sorted by instance id.
    pub results: Vec<InferResult>,
    pub mean_cost: f64,
}

pub fn eval_dataset(model: &Model, instances: &[Instance], cfg: &InferConfig) -> Result<DatasetReport> {
    if instances.is_empty() {
        return Err(CoreError::Contract("no instances to evaluate".into()));
    }
    let mut results = instances
        .par_iter()
        .map(|inst| infer(model, inst, cfg))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.id.cmp(&b.id));
    let mean_cost = results.iter().map(|r| r.cost).sum::<f64>() / results.len() as f64;
    Ok(DatasetReport { results, mean_cost })
}

pub fn write_results_csv<W: std::io::Write>(w: W, results: &[InferResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CoreError::Io(std::io::Error::other(e));
    w.write_record(["id", "cost", "augmentation", "start_node", "elapsed_ms"])
        .map_err(io)?;
    for r in results {
        w.write_record([
            r.id.clone(),
            r.cost.to_string(),
            r.augmentation.to_string(),
            r.trajectory.start_node().to_string(),
            format!("{:.3}", r.elapsed.as_secs_f64() * 1e3),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvrplibReport {
    pub reports: Vec<GapReport>,
    pub buckets: Vec<BucketSummary>,
}

/// Parses, normalizes and solves each `.vrp` file, then scores the
/// original-scale cost against the best-known table. Files that fail to
/// parse or normalize are skipped with a warning; it is an error when
/// nothing is left.
pub fn eval_cvrplib(
    model: &Model,
    files: &[PathBuf],
    best_known: &BTreeMap<String, BestKnown>,
    cfg: &InferConfig,
    rounding: Rounding,
) -> Result<CvrplibReport> {
    let mut reports = Vec::with_capacity(files.len());
    for path in files {
        let parsed = std::fs::read_to_string(path)
            .map_err(CoreError::from)
            .and_then(|text| parse_instance(&text))
            .and_then(|lib| normalize(&lib).map(|norm| (lib, norm)));
        let (lib, norm) = match parsed {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let res = infer(model, &norm.instance, cfg)?;
        let cost = norm.original_walk_cost(&lib, &res.trajectory.actions, rounding);
        let bk = best_known.get(&lib.name).map(|b| b.cost);
        if bk.is_none() {
            log::warn!("no best-known cost for {}", lib.name);
        }
        reports.push(GapReport::new(lib.name.clone(), lib.n_customers(), cost, bk)?);
    }
    if reports.is_empty() {
        return Err(CoreError::Contract(format!("none of {} files could be evaluated", files.len())));
    }
    let buckets = bucket_reports(&reports)?;
    Ok(CvrplibReport { reports, buckets })
}

/// `.vrp` files directly inside `dir`, sorted by name.
pub fn list_vrp_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("vrp")))
        .collect();
    files.sort();
    Ok(files)
}
