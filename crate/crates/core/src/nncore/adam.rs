use crate::error::{Error, Result};
use crate::nncore::mlp::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a flat view of a [`Parameters`] set.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn for_params<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        Self::new(params.num_params(), config)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let g = grads.to_flat();
        self.step_flat_with(params, &g)
    }

    /// Same as [`AdamState::step`] with the gradient already flattened.
    pub fn step_flat_with<P: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        g: &[f64],
    ) -> Result<()> {
        if g.len() != self.m.len() || params.num_params() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.num_params(),
                g.len()
            )));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.for_each_slice_mut(&mut |slice| {
            for p in slice {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                i += 1;
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn for_each_slice(&self, f: &mut dyn FnMut(&[f64])) {
            f(&self.0)
        }
        fn for_each_slice_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
            f(&mut self.0)
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Flat(vec![1.0, -2.0, 3.0]);
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        s.step(&mut p, &Flat(vec![0.0; 3])).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_magnitude() {
        // m̂ = g, v̂ = g², so Δp = −lr·1/(1 + ε).
        let mut p = Flat(vec![0.0]);
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        s.step(&mut p, &Flat(vec![1.0])).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-15);
        assert!((p.0[0] + 0.00099999999).abs() < 1e-14);
    }

    #[test]
    fn first_step_is_odd_in_gradient() {
        let g = vec![0.3, -1.7, 4.0];
        let mut a = Flat(vec![0.0; 3]);
        let mut b = Flat(vec![0.0; 3]);
        AdamState::for_params(&a, AdamConfig::default())
            .step(&mut a, &Flat(g.clone()))
            .unwrap();
        AdamState::for_params(&b, AdamConfig::default())
            .step(&mut b, &Flat(g.iter().map(|x| -x).collect()))
            .unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn step_counter_increments() {
        let mut p = Flat(vec![0.5; 2]);
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        for n in 1..=25 {
            s.step(&mut p, &Flat(vec![0.1, -0.2])).unwrap();
            assert_eq!(s.steps(), n);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = Flat(vec![0.0; 2]);
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        let err = s.step(&mut p, &Flat(vec![0.0, f64::INFINITY])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(s.steps(), 0);
        assert_eq!(p.0, vec![0.0; 2]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Flat(vec![3.0, -2.0]);
        let mut s = AdamState::for_params(
            &p,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..2000 {
            let g = Flat(p.0.iter().map(|x| 2.0 * x).collect());
            s.step(&mut p, &g).unwrap();
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-3));
    }
}
