use crate::nn::ParamStore;
use crate::tensor::{Graph, Var};

/// Adam with bias correction, one state slot per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0f32; t.numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients the last backward pass left on `vars`
    /// (the graph handles `params` was bound to). Missing gradients count as
    /// zero.
    pub fn step(&mut self, params: &mut ParamStore<f32>, g: &Graph<f32>, vars: &[Var], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (k, ((_, p), &var)) in params.iter_mut().zip(vars).enumerate() {
            let Some(grad) = g.grad(var) else {
                // zero gradient still decays the moments
                self.m[k].iter_mut().for_each(|m| *m *= b1);
                self.v[k].iter_mut().for_each(|v| *v *= b2);
                for (w, (m, v)) in p.data_mut().iter_mut().zip(self.m[k].iter().zip(&self.v[k])) {
                    *w -= step * m / (v.sqrt() + eps);
                }
                continue;
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &gr), m), v) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                *w -= step * *m / (v.sqrt() + eps);
            }
        }
    }
}
