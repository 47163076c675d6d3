use serde::{Deserialize, Serialize};

use crate::{shape_err, KernelError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    names: Vec<String>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<S: Into<String>>(named_sizes: impl IntoIterator<Item = (S, usize)>) -> Self {
        let (names, sizes): (Vec<String>, Vec<usize>) =
            named_sizes.into_iter().map(|(n, s)| (n.into(), s)).unzip();
        Self {
            step: 0,
            names,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One bias-corrected Adam update applied in place.
///
/// All gradients are validated before any parameter is touched, so a
/// rejected step leaves both parameters and state unchanged.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(KernelError::Invalid(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(shape_err(
                "adam_step",
                format!("tensor `{}`: {} values vs {} grads", state.names[i], p.len(), g.len()),
            ));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(KernelError::NonFiniteGradient {
                tensor: state.names[i].clone(),
            });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((theta, gi), mi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Convenience owner of an [`AdamState`] and its config.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new<S: Into<String>>(config: AdamConfig, named_sizes: impl IntoIterator<Item = (S, usize)>) -> Self {
        Self {
            config,
            state: AdamState::new(named_sizes),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        adam_step(params, grads, &mut self.state, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut state = AdamState::new([("p", 2)]);
        let cfg = AdamConfig::with_lr(0.1);
        adam_step(&mut [&mut p], &[&[0.0, 0.0]], &mut state, &cfg).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        let mut state = AdamState::new([("p", 1)]);
        state.m[0] = vec![1.0];
        state.v[0] = vec![4.0];
        let mut q = Tensor::vector(vec![0.0]);
        adam_step(&mut [&mut q], &[&[0.0]], &mut state, &cfg).unwrap();
        assert!((state.m[0][0] - 0.9).abs() < 1e-15);
        assert!((state.v[0][0] - 4.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut p = Tensor::vector(vec![0.0]);
        let mut state = AdamState::new([("p", 1)]);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            adam_step(&mut [&mut p], &[&[3.0]], &mut state, &cfg).unwrap();
            last_step = prev - p.data()[0];
            prev = p.data()[0];
        }
        assert!((last_step - 0.01).abs() < 1e-6, "step {last_step}");
    }

    #[test]
    fn non_finite_gradient_names_tensor_and_changes_nothing() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![2.0]);
        let mut state = AdamState::new([("alpha", 1), ("beta", 1)]);
        let err = adam_step(&mut [&mut a, &mut b], &[&[1.0], &[f64::NAN]], &mut state, &cfg).unwrap_err();
        assert!(matches!(err, KernelError::NonFiniteGradient { ref tensor } if tensor == "beta"));
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut state = AdamState::new([("a", 1)]);
        assert!(adam_step(&mut [&mut a], &[&[1.0]], &mut state, &AdamConfig::with_lr(0.0)).is_err());
    }
}
