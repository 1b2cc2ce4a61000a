use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Increments `state.t` first, so
/// the first call uses `t = 1`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3);
        s.m = vec![0.5, -0.1, 0.2];
        s.v = vec![0.04, 0.01, 0.09];
        let before = p.clone();
        let (m0, v0) = (s.m.clone(), s.v.clone());
        // Moments decay toward zero; the update itself is non-zero while m is.
        adam_step(&mut p, &[0.0; 3], &mut s, 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        for i in 0..3 {
            assert!(s.m[i].abs() < m0[i].abs());
            assert!(s.v[i] < v0[i]);
        }
        let mut p = before.clone();
        let mut fresh = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut fresh, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_sign_sized() {
        let cfg = AdamConfig::default();
        let lr = 1e-3;
        let g = [0.3, -2.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, lr, &cfg).unwrap();
        for i in 0..3 {
            let expected = -lr * g[i] / (g[i].abs() + cfg.eps);
            assert!((p[i] - expected).abs() < 1e-15, "{} vs {expected}", p[i]);
            assert!((p[i] + lr * g[i].signum()).abs() < 1e-7);
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.0, f64::NAN], &mut s, 1e-3, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[0.0], &mut s, 1e-3, &AdamConfig::default()).is_err());
    }
}
