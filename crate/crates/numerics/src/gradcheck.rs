//! Central finite-difference checks of analytic gradients.
//!
//! The finite-difference side only ever evaluates forward values, so it is
//! an independent oracle for every backward rule on the tape.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::attention::{multi_head_attention, MhaWeights};
use crate::error::Result;
use crate::gumbel::gumbel_softmax_sample;
use crate::params::{GradStore, ParamStore};
use crate::tape::{Mask, Tape, Var};
use crate::tensor::Tensor;

pub const GRAD_TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor of 1e-6 on the magnitude, so gradients that
/// are both essentially zero compare on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central-difference gradient of the scalar function `f` at `x`.
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRAD_TOLERANCE
    }

    fn absorb(&mut self, analytic: &Tensor, numeric: &Tensor) {
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            self.max_rel_error = self.max_rel_error.max(relative_error(a, n));
            self.entries += 1;
        }
    }
}

/// Checks `∂loss/∂input` for every input of a function built on the tape.
pub fn check_inputs(
    name: impl Into<String>,
    inputs: &[Tensor],
    h: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.gradients(loss)?;
    let mut check = GradCheck {
        name: name.into(),
        max_rel_error: 0.0,
        entries: 0,
    };
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let numeric = finite_difference(input, h, |probe| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| t.constant(if j == k { probe.clone() } else { x.clone() }))
                .collect();
            let l = build(&mut t, &vs)?;
            Ok(t.value(l).data()[0])
        })?;
        check.absorb(&analytic, &numeric);
    }
    Ok(check)
}

/// Checks `∂loss/∂p` for every parameter of `store` under a loss built on a
/// tape bound to the store.
pub fn check_params(
    name: impl Into<String>,
    store: &ParamStore,
    h: f64,
    build: impl Fn(&mut Tape) -> Result<Var>,
) -> Result<GradCheck> {
    let mut grads: GradStore = store.zero_grads();
    {
        let mut tape = Tape::with_params(store);
        let loss = build(&mut tape)?;
        tape.backward(loss, &mut grads)?;
    }
    let mut check = GradCheck {
        name: name.into(),
        max_rel_error: 0.0,
        entries: 0,
    };
    let mut probe_store = store.clone();
    for id in store.ids() {
        let numeric = finite_difference(store.get(id), h, |probe| {
            // Direct write: the perturbation must not be rounded to f32.
            probe_store.get_mut(id).data_mut().copy_from_slice(probe.data());
            let mut t = Tape::with_params(&probe_store);
            let l = build(&mut t)?;
            Ok(t.value(l).data()[0])
        })?;
        probe_store.get_mut(id).data_mut().copy_from_slice(store.get(id).data());
        check.absorb(grads.get(id), &numeric);
    }
    Ok(check)
}

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("valid shape")
}

/// Entries bounded away from zero, for checks through kinks like ReLU.
fn away_from_zero<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    random_tensor(rng, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn random_mask<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mask {
    let mut allowed: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.7)).collect();
    for r in 0..rows {
        let c = rng.gen_range(0..cols);
        allowed[r * cols + c] = true;
    }
    Mask::per_row(rows, allowed)
}

/// Projects an output onto fixed random weights so every entry of the
/// output gradient is distinct.
fn probe_loss(tape: &mut Tape, out: Var, weights: &[f64]) -> Result<Var> {
    tape.weighted_sum(out, weights)
}

/// Finite-difference check of every primitive on one random configuration.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let m = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=4);
    let n = rng.gen_range(2..=5);
    let w_mn: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w_m: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut checks = Vec::new();

    let a = random_tensor(&mut rng, &[m, k]);
    let b = random_tensor(&mut rng, &[k, n]);
    checks.push(check_inputs("matmul", &[a.clone(), b], FD_STEP, |t, v| {
        let o = t.matmul(v[0], v[1])?;
        probe_loss(t, o, &w_mn)
    })?);
    let bt = random_tensor(&mut rng, &[n, k]);
    checks.push(check_inputs("matmul_bt", &[a, bt], FD_STEP, |t, v| {
        let o = t.matmul_bt(v[0], v[1])?;
        probe_loss(t, o, &w_mn)
    })?);

    let x = random_tensor(&mut rng, &[m, n]);
    let y = random_tensor(&mut rng, &[m, n]);
    let row = random_tensor(&mut rng, &[n]);
    checks.push(check_inputs("add/sub/mul", &[x.clone(), y], FD_STEP, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let p = t.mul(d, v[1])?;
        probe_loss(t, p, &w_mn)
    })?);
    checks.push(check_inputs("add_row/scale", &[x.clone(), row.clone()], FD_STEP, |t, v| {
        let o = t.add_row(v[0], v[1])?;
        let o = t.scale(o, -1.7);
        probe_loss(t, o, &w_mn)
    })?);
    let xr = away_from_zero(&mut rng, &[m, n]);
    checks.push(check_inputs("relu", &[xr], FD_STEP, |t, v| {
        let o = t.relu(v[0]);
        probe_loss(t, o, &w_mn)
    })?);
    checks.push(check_inputs("tanh", &[x.clone()], FD_STEP, |t, v| {
        let s = t.scale(v[0], 3.0);
        let o = t.tanh(s);
        probe_loss(t, o, &w_mn)
    })?);

    let mask = random_mask(&mut rng, m, n);
    checks.push(check_inputs("softmax", &[x.clone()], FD_STEP, |t, v| {
        let o = t.softmax(v[0], Some(&mask))?;
        probe_loss(t, o, &w_mn)
    })?);
    let picks: Vec<usize> = (0..m)
        .map(|r| (0..n).find(|&j| mask.row(r)[j]).expect("mask keeps one entry"))
        .collect();
    checks.push(check_inputs("log_softmax_pick", &[x.clone()], FD_STEP, |t, v| {
        let o = t.log_softmax_pick(v[0], Some(&mask), &picks)?;
        probe_loss(t, o, &w_m)
    })?);

    let gain = random_tensor(&mut rng, &[n]);
    checks.push(check_inputs("layer_norm", &[x.clone(), gain, row], FD_STEP, |t, v| {
        let o = t.layer_norm(v[0], v[1], v[2])?;
        probe_loss(t, o, &w_mn)
    })?);

    let z = random_tensor(&mut rng, &[m, k]);
    let idx: Vec<usize> = (0..m + 1).map(|_| rng.gen_range(0..m)).collect();
    let w_mix: Vec<f64> = (0..(m + 2) * (n + k)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    checks.push(check_inputs("shape ops", &[x.clone(), z], FD_STEP, |t, v| {
        let cat = t.concat_cols(&[v[0], v[1]])?;
        let g = t.gather_rows(cat, &idx)?;
        let mean = t.mean_rows(cat);
        let stacked = t.concat_rows(&[g, mean])?;
        let first = t.slice_cols(stacked, 0, n)?;
        let rest = t.slice_cols(stacked, n, k)?;
        let back = t.concat_cols(&[rest, first])?;
        let flat = t.reshape(back, vec![(m + 2) * (n + k)])?;
        probe_loss(t, flat, &w_mix)
    })?);

    let vec_in = random_tensor(&mut rng, &[m]);
    let positions: Vec<usize> = {
        let mut p: Vec<usize> = (0..m + 2).collect();
        for i in (1..p.len()).rev() {
            p.swap(i, rng.gen_range(0..=i));
        }
        p.truncate(m);
        p
    };
    let w_s: Vec<f64> = (0..m + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    checks.push(check_inputs("scatter/sum", &[vec_in], FD_STEP, |t, v| {
        let s = t.scatter(v[0], &positions, m + 2)?;
        let sq = t.mul(s, s)?;
        let l1 = probe_loss(t, sq, &w_s)?;
        let l2 = t.sum(s);
        t.add(l1, l2)
    })?);

    let heads = [1, 2][rng.gen_range(0..2)];
    let d = 2 * heads;
    let nq = rng.gen_range(1..=3);
    let nk = rng.gen_range(1..=4);
    let q = random_tensor(&mut rng, &[nq, d]);
    let kv = random_tensor(&mut rng, &[nk, d]);
    let ws: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut rng, &[d, d])).collect();
    let att_mask = random_mask(&mut rng, nq, nk);
    let w_att: Vec<f64> = (0..nq * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut inputs = vec![q, kv];
    inputs.extend(ws);
    checks.push(check_inputs("multi_head_attention", &inputs, FD_STEP, |t, v| {
        let w = MhaWeights {
            wq: v[2],
            wk: v[3],
            wv: v[4],
            wo: v[5],
        };
        let o = multi_head_attention(t, v[0], v[1], v[1], &w, heads, Some(&att_mask))?;
        probe_loss(t, o, &w_att)
    })?);

    let logits = random_tensor(&mut rng, &[n]);
    let gumbel_seed = rng.gen::<u64>();
    let temperature = rng.gen_range(0.5..2.0);
    let w_n: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    checks.push(check_inputs("gumbel_softmax", &[logits], FD_STEP, |t, v| {
        let mut g = StdRng::seed_from_u64(gumbel_seed);
        let o = gumbel_softmax_sample(t, v[0], temperature, &mut g)?;
        probe_loss(t, o, &w_n)
    })?);

    Ok(checks)
}
