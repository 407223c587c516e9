//! Scaled dot-product multi-head attention built from tape primitives.

use crate::error::{shape_err, Result};
use crate::tape::{Mask, Tape, Var};

/// Projection weights of one attention layer, all `[d×d]`, bias-free.
#[derive(Debug, Clone, Copy)]
pub struct MhaWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Splits the columns of `x: [n×d]` into `heads` contiguous blocks.
pub fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Vec<Var>> {
    let d = tape.value(x).rows_cols().1;
    if heads == 0 || d % heads != 0 {
        return shape_err("split_heads", format!("d={d} not divisible by {heads} heads"));
    }
    let dh = d / heads;
    (0..heads)
        .map(|h| tape.slice_cols(x, h * dh, dh))
        .collect()
}

/// Attention of projected queries `q: [m×d]` over per-head keys and
/// values (each `[n×d/h]`). Returns the concatenated heads `[m×d]`
/// without the output projection.
pub fn attend_heads(
    tape: &mut Tape,
    q: Var,
    k_heads: &[Var],
    v_heads: &[Var],
    mask: Option<&Mask>,
) -> Result<Var> {
    let heads = k_heads.len();
    if heads == 0 || v_heads.len() != heads {
        return shape_err("attend_heads", "mismatched key/value head counts");
    }
    let q_heads = split_heads(tape, q, heads)?;
    let dh = tape.value(q_heads[0]).rows_cols().1;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let scores = tape.matmul_bt(q_heads[h], k_heads[h])?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores, mask)?;
        outs.push(tape.matmul(weights, v_heads[h])?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Full multi-head attention: project, attend per head with scale
/// `1/sqrt(d/heads)`, concatenate, project out.
///
/// `mask` marks allowed keys, either shared `[n_k]` or per query
/// `[n_q×n_k]`; a query whose keys are all masked is an error.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    w: &MhaWeights,
    heads: usize,
    mask: Option<&Mask>,
) -> Result<Var> {
    let d = tape.value(q).rows_cols().1;
    if tape.value(k).rows_cols() != tape.value(v).rows_cols() || tape.value(k).rows_cols().1 != d {
        return shape_err(
            "multi_head_attention",
            format!("q {:?}, k {:?}, v {:?}", tape.shape(q), tape.shape(k), tape.shape(v)),
        );
    }
    let qp = tape.matmul(q, w.wq)?;
    let kp = tape.matmul(k, w.wk)?;
    let vp = tape.matmul(v, w.wv)?;
    let kh = split_heads(tape, kp, heads)?;
    let vh = split_heads(tape, vp, heads)?;
    let joined = attend_heads(tape, qp, &kh, &vh, mask)?;
    tape.matmul(joined, w.wo)
}
