use crate::params::{round_f32, GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adam with L2 weight decay folded into the gradient.
///
/// Only the parameters listed at construction are touched; updated values
/// are rounded back to `f32`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, lr: f64, weight_decay: f64) -> Self {
        let m = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect::<Vec<_>>();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            ids,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = round_f32(p[i] - self.lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("x", Tensor::vector(vec![3.0, -2.0])).unwrap();
        let mut adam = Adam::new(&store, vec![id], 0.1, 0.0);
        for _ in 0..500 {
            let mut grads = store.zero_grads();
            let g = store.get(id).map(|x| 2.0 * x);
            grads.accumulate(id, &g);
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn untracked_parameters_are_untouched() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::vector(vec![1.0])).unwrap();
        let b = store.insert("b", Tensor::vector(vec![1.0])).unwrap();
        let mut adam = Adam::new(&store, vec![a], 0.1, 0.0);
        let mut grads = store.zero_grads();
        grads.accumulate(a, &Tensor::vector(vec![1.0]));
        grads.accumulate(b, &Tensor::vector(vec![1.0]));
        adam.step(&mut store, &grads);
        assert_eq!(store.get(b).data(), &[1.0]);
        assert!(store.get(a).data()[0] < 1.0);
    }
}
