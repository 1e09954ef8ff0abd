//! Bias-corrected Adam.

use crate::tensor::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("learning rate {} must be positive", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} = {b} must be in [0, 1)"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(format!("epsilon {} must be positive", self.epsilon));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| p.map(|_| T::zero())).collect::<Vec<_>>();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::invalid(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::shape(
                "adam_step",
                format!("gradient of shape {:?}", p.shape()),
                g.shape(),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one, eps) = (T::one(), T::lit(cfg.epsilon));
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::full(&[3], 1.0).unwrap()];
        let g = vec![Tensor::new(&[3], vec![0.5, -2.0, 1e-3]).unwrap()];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let d = p[0].data();
        assert!((d[0] - (1.0 - 0.002)).abs() < 1e-9);
        assert!((d[1] - (1.0 + 0.002)).abs() < 1e-9);
        assert!((d[2] - (1.0 - 0.002)).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f32>::from_fn(&[2, 2], |i| i as f32).unwrap()];
        let before = p.clone();
        let g = vec![Tensor::zeros(&[2, 2]).unwrap()];
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step(), 5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::<f32>::zeros(&[2]).unwrap()];
        let g = vec![Tensor::zeros(&[3]).unwrap()];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
    }
}
