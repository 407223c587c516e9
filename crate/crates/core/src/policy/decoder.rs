use pomo_numerics::{attend_heads, split_heads, Mask, ParamId, Tape, Tensor, Var};

use super::encoder::Embeddings;
use super::params::{Init, ParamSource};
use super::ModelConfig;
use crate::cvrp::{Instance, DEPOT, LOAD_EPS};
use crate::error::{CoreError, Result};

/// Partial solution of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    pub current: usize,
    /// Remaining load as a fraction of capacity.
    pub remaining: f64,
    visited: Vec<bool>,
    n_visited: usize,
    pub actions: Vec<usize>,
    pub log_prob: f64,
}

impl DecodeState {
    pub fn new(inst: &Instance) -> Self {
        Self {
            current: DEPOT,
            remaining: 1.0,
            visited: vec![false; inst.n() + 1],
            n_visited: 0,
            actions: Vec::with_capacity(2 * inst.n()),
            log_prob: 0.0,
        }
    }

    pub fn at_depot(&self) -> bool {
        self.current == DEPOT
    }

    pub fn is_visited(&self, node: usize) -> bool {
        self.visited[node]
    }

    /// All customers served; the closing depot return is implicit.
    pub fn is_finished(&self) -> bool {
        self.n_visited + 1 == self.visited.len()
    }

    /// Moves to `action`, which must be allowed by [`step_mask`].
    pub fn apply(&mut self, inst: &Instance, action: usize) -> Result<()> {
        let mask = step_mask(inst, self)?;
        if action >= mask.len() || !mask[action] {
            return Err(CoreError::Contract(format!(
                "action {action} is not feasible from node {}",
                self.current
            )));
        }
        if action == DEPOT {
            self.remaining = 1.0;
        } else {
            self.visited[action] = true;
            self.n_visited += 1;
            self.remaining -= inst.demand_fraction(action);
        }
        self.current = action;
        self.actions.push(action);
        Ok(())
    }
}

/// Feasible next nodes, indexed `0..=N`. A customer is feasible when
/// unvisited and its demand fits the remaining load; the depot is feasible
/// unless the vehicle already stands there.
pub fn step_mask(inst: &Instance, state: &DecodeState) -> Result<Vec<bool>> {
    if state.visited.len() != inst.n() + 1 {
        return Err(CoreError::Contract("state belongs to another instance".into()));
    }
    if state.is_finished() {
        return Err(CoreError::Contract("rollout already finished".into()));
    }
    let mut mask = vec![false; inst.n() + 1];
    mask[DEPOT] = state.current != DEPOT;
    for (c, m) in mask.iter_mut().enumerate().skip(1) {
        *m = !state.visited[c] && inst.demand_fraction(c) <= state.remaining + LOAD_EPS;
    }
    if !mask.contains(&true) {
        return Err(CoreError::Infeasible(format!(
            "no feasible action from node {} with remaining load {}",
            state.current, state.remaining
        )));
    }
    Ok(mask)
}

/// Autoregressive decoder: a context query glimpses over the node
/// embeddings, then a single-head compatibility against the nodes gives
/// clipped logits.
#[derive(Debug, Clone)]
pub struct Decoder {
    context: ParamId,
    glimpse_k: ParamId,
    glimpse_v: ParamId,
    glimpse_out: ParamId,
    logit_k: ParamId,
    heads: usize,
    clip: f64,
}

/// Per-instance projections reused by every decoding step.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    pub nodes: Var,
    pub graph: Var,
    k_heads: Vec<Var>,
    v_heads: Vec<Var>,
    logit_keys: Var,
}

impl Decoder {
    pub(crate) fn new(src: &mut ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        let ctx_in = 2 * d + 1;
        Ok(Self {
            context: src.param("decoder.context", &[ctx_in, d], Init::FanIn(ctx_in))?,
            glimpse_k: src.param("decoder.glimpse.wk", &[d, d], Init::FanIn(d))?,
            glimpse_v: src.param("decoder.glimpse.wv", &[d, d], Init::FanIn(d))?,
            glimpse_out: src.param("decoder.glimpse.wo", &[d, d], Init::FanIn(d))?,
            logit_k: src.param("decoder.logit_k", &[d, d], Init::FanIn(d))?,
            heads: cfg.heads,
            clip: cfg.logit_clip,
        })
    }

    pub fn precompute(&self, tape: &mut Tape, emb: &Embeddings) -> Result<DecoderCache> {
        let wk = tape.param(self.glimpse_k);
        let wv = tape.param(self.glimpse_v);
        let wl = tape.param(self.logit_k);
        let k = tape.matmul(emb.nodes, wk)?;
        let v = tape.matmul(emb.nodes, wv)?;
        Ok(DecoderCache {
            nodes: emb.nodes,
            graph: emb.graph,
            k_heads: split_heads(tape, k, self.heads)?,
            v_heads: split_heads(tape, v, self.heads)?,
            logit_keys: tape.matmul(emb.nodes, wl)?,
        })
    }

    /// Clipped logits `[A×(N+1)]` for a batch of states; `masks` holds one
    /// row per state and restricts the glimpse. Masked entries still carry
    /// a logit and must be excluded by the caller.
    pub fn step_logits(
        &self,
        tape: &mut Tape,
        cache: &DecoderCache,
        states: &[&DecodeState],
        masks: &Mask,
    ) -> Result<Var> {
        let a = states.len();
        let d = tape.value(cache.nodes).rows_cols().1;
        let graph = tape.gather_rows(cache.graph, &vec![0; a])?;
        let current: Vec<usize> = states.iter().map(|s| s.current).collect();
        let cur = tape.gather_rows(cache.nodes, &current)?;
        let load = tape.constant(Tensor::matrix(a, 1, states.iter().map(|s| s.remaining).collect())?);
        let ctx = tape.concat_cols(&[graph, cur, load])?;
        let wc = tape.param(self.context);
        let q = tape.matmul(ctx, wc)?;
        let glimpse = attend_heads(tape, q, &cache.k_heads, &cache.v_heads, Some(masks))?;
        let wo = tape.param(self.glimpse_out);
        let g = tape.matmul(glimpse, wo)?;
        let compat = tape.matmul_bt(g, cache.logit_keys)?;
        let compat = tape.scale(compat, 1.0 / (d as f64).sqrt());
        let t = tape.tanh(compat);
        Ok(tape.scale(t, self.clip))
    }

    /// Action distribution over `0..=N` for one state; infeasible entries
    /// get probability zero.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        cache: &DecoderCache,
        inst: &Instance,
        state: &DecodeState,
    ) -> Result<Vec<f64>> {
        let mask = step_mask(inst, state)?;
        let mark = tape.mark();
        let logits = self.step_logits(tape, cache, &[state], &Mask::shared(mask.clone()))?;
        let probs = pomo_numerics::softmax_row(tape.value(logits).data(), Some(&mask));
        if !tape.grad_enabled() {
            tape.truncate(mark);
        }
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvrp::Point;

    fn inst() -> Instance {
        let pts = vec![Point::new(0.1, 0.1), Point::new(0.9, 0.9), Point::new(0.5, 0.2)];
        Instance::new("t", Point::new(0.5, 0.5), pts, vec![4.0, 5.0, 3.0], 10.0).unwrap()
    }

    #[test]
    fn mask_follows_load_and_position() {
        let inst = inst();
        let mut s = DecodeState::new(&inst);
        assert_eq!(step_mask(&inst, &s).unwrap(), vec![false, true, true, true]);
        s.apply(&inst, 2).unwrap();
        // 0.5 left: customer 1 (0.4) and 3 (0.3) fit, depot allowed
        assert_eq!(step_mask(&inst, &s).unwrap(), vec![true, true, false, true]);
        s.apply(&inst, 1).unwrap();
        // 0.1 left: only the depot
        assert_eq!(step_mask(&inst, &s).unwrap(), vec![true, false, false, false]);
        assert!(s.apply(&inst, 3).is_err());
        s.apply(&inst, 0).unwrap();
        assert_eq!(step_mask(&inst, &s).unwrap(), vec![false, false, false, true]);
        s.apply(&inst, 3).unwrap();
        assert!(s.is_finished());
        assert!(step_mask(&inst, &s).is_err());
        assert_eq!(s.actions, vec![2, 1, 0, 3]);
    }

    #[test]
    fn exact_fit_is_feasible() {
        let pts = vec![Point::new(0.1, 0.1), Point::new(0.9, 0.9)];
        let inst = Instance::new("t", Point::new(0.5, 0.5), pts, vec![3.0, 7.0], 10.0).unwrap();
        let mut s = DecodeState::new(&inst);
        s.apply(&inst, 1).unwrap();
        assert!(step_mask(&inst, &s).unwrap()[2]);
    }
}
