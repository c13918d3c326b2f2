use natlab_compute::{ParamStore, Tensor};

use crate::error::{invalid, Result};

/// Linear warmup to `peak`, then inverse square-root decay.
pub fn learning_rate(peak: f64, warmup: usize, step: usize) -> f64 {
    let s = step.max(1) as f64;
    if warmup == 0 {
        return peak;
    }
    let w = warmup as f64;
    peak * (s / w).min((w / s).sqrt())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, t)| vec![0.0; t.data().len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return invalid("gradient count does not match parameters");
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let g = grads[k].data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        assert_eq!(learning_rate(5e-4, 500, 500), 5e-4);
        assert!((learning_rate(5e-4, 500, 250) - 2.5e-4).abs() < 1e-15);
        assert!((learning_rate(5e-4, 500, 2000) - 2.5e-4).abs() < 1e-15);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("x", Tensor::vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let g: Vec<f64> = store.get(id).data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut store, &[Tensor::vector(g)], 0.01).unwrap();
        }
        assert!(store.get(id).data().iter().all(|x| x.abs() < 1e-2));
    }
}
