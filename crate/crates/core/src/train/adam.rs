//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("learning rate and epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::from_parts(p.shape().to_vec(), vec![T::zero(); p.len()]))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam update of every parameter in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(theta: f64, grad: f64, state: &mut AdamState<f64>, cfg: &AdamConfig) -> f64 {
        let mut p = Tensor::scalar(theta);
        let g = Tensor::scalar(grad);
        adam_step(&mut [&mut p], &[&g], state, cfg).unwrap();
        p.data()[0]
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new([&Tensor::scalar(0.0f64)]);
        let after = step_scalar(0.0, 1.0, &mut st, &cfg);
        // m̂ = 1, v̂ = 1, Δ = −1e-3·1/(1 + 1e-8)
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((after - want).abs() < 1e-18);
        assert!((after + 9.99999995e-4).abs() < 1e-11);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]).unwrap();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut st, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_update_opposes_gradient_sign() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::zeros(&[4]).unwrap();
        let g = Tensor::new(vec![4], vec![3.0f64, -0.01, 1e-4, -7.0]).unwrap();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut st, &cfg).unwrap();
        for (d, gv) in p.data().iter().zip(g.data()) {
            assert!(d * gv < 0.0);
        }
    }

    #[test]
    fn descends_a_quadratic() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new([&Tensor::scalar(1.0f64)]);
        let theta = step_scalar(1.0, 2.0, &mut st, &cfg);
        assert!(theta * theta < 1.0);
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new([&Tensor::scalar(0.0f64)]);
        let mut theta = 0.3;
        for i in 0..20 {
            theta = step_scalar(theta, if i % 2 == 0 { -1.5 } else { 0.7 }, &mut st, &cfg);
            assert!(st.v[0].data()[0] >= 0.0);
        }
        assert_eq!(st.t, 20);
    }

    #[test]
    fn mismatched_shapes_fail() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::<f64>::zeros(&[2]).unwrap();
        let g = Tensor::zeros(&[3]).unwrap();
        let mut st = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
