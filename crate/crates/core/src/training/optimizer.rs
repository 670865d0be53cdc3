use crate::params::ParamStore;

/// Adam with bias correction. Moment estimates are kept per named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamStore,
    v: ParamStore,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_moments(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient entry are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Ok(g) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).expect("moments mirror parameters");
            for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(name).expect("moments mirror parameters");
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = self.m.get(name).expect("present");
            let v = self.v.get(name).expect("present");
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                *pi -= lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut g = ParamStore::new();
        g.insert("a", Tensor::from_vec(&[3], vec![0.3, -7.0, 0.0]).unwrap());
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1);
        let a = p.get("a").unwrap().data();
        assert!((a[0] - 0.9).abs() < 1e-6);
        assert!((a[1] - -1.9).abs() < 1e-6);
        assert_eq!(a[2], 0.5);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::from_vec(&[2], vec![3.0, -4.0]).unwrap());
        let mut adam = Adam::new(&p);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().clone();
            let mut g = ParamStore::new();
            g.insert(
                "x",
                Tensor::from_vec(&[2], vec![2.0 * (x.data()[0] - 1.0), 2.0 * x.data()[1]]).unwrap(),
            );
            adam.step(&mut p, &g, 0.05);
        }
        let x = p.get("x").unwrap().data();
        assert!((x[0] - 1.0).abs() < 1e-3 && x[1].abs() < 1e-3, "{x:?}");
    }
}
