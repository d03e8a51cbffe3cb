use crate::{Float, ParamId, ParamStore, Tensor};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step<T: Float>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(*id);
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for parameter");
            let m = self.first[i].get_or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second[i].get_or_insert_with(|| vec![0.0; g.len()]);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gv = gv.as_f64();
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let update = (*mv / bc1) / ((*vv / bc2).sqrt() + self.eps);
                let x = pv.as_f64();
                *pv = T::cast_from(x - self.lr * (update + self.weight_decay * x));
            }
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_grad_norm<T: Float>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::cast_from(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}
