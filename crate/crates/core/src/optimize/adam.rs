use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moment buffers and hyper-parameters for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidArgument(format!("Adam betas must lie in [0, 1), got {beta1}, {beta2}")));
        }
        if !(lr > 0.0 && eps > 0.0) {
            return Err(Error::InvalidArgument("Adam lr and eps must be positive".into()));
        }
        Ok(Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1, beta2, eps, lr })
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(params.len(), grads.len().min(state.m.len())));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(3, 1e-3, 0.93, 0.999, 1e-8).unwrap();
        let mut p = vec![0.5, -1.0, 2.0];
        adam_step(&mut s, &mut p, &[1.0, 1.0, 1.0]).unwrap();
        for (a, b) in p.iter().zip([0.5, -1.0, 2.0]) {
            // lr * 1 / (1 + eps)
            assert!((a - (b - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(2, 1e-2, 0.93, 0.999, 1e-8).unwrap();
        let mut p = vec![3.0, 4.0];
        for _ in 0..100 {
            adam_step(&mut s, &mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![3.0, 4.0]);
    }

    #[test]
    fn matches_scalar_oracle_on_quadratic() {
        // hand-rolled scalar Adam on f(x) = x², gradient 2x
        let (lr, b1, b2, eps) = (1e-3, 0.93, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut s = AdamState::new(1, lr, b1, b2, eps).unwrap();
        let mut p = vec![1.0];
        for _ in 0..10 {
            let g = [2.0 * p[0]];
            adam_step(&mut s, &mut p, &g).unwrap();
        }
        assert!((p[0] - x).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert!(matches!(adam_step(&mut s, &mut [0.0; 3], &[0.0; 3]), Err(Error::ShapeMismatch(..))));
        assert!(AdamState::new(1, 1e-3, 1.0, 0.999, 1e-8).is_err());
    }
}
