//! Adam with bias correction, and the halving learning-rate schedule.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::graph::{Graph, Real};
use crate::layers::{cast_from, ParamBinding, ParamKind, Stack};
use crate::{NeuralError, Result};

/// Initial learning rate of every training phase.
pub const INITIAL_LR: f64 = 0.002;

/// The learning rate halves every this many epochs.
pub const DECAY_EPOCHS: usize = 10;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `epoch` (0-based): `initial * 0.5^(epoch / 10)`.
pub fn lr_schedule(epoch: usize) -> f64 {
    INITIAL_LR * 0.5f64.powi((epoch / DECAY_EPOCHS) as i32)
}

/// One bias-corrected Adam update on a raw parameter array. Exposed for
/// direct use and testing; [`Adam`] drives it across a whole stack.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut ArrayD<f64>,
    grad: &ArrayD<f64>,
    m: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        });
}

/// Per-parameter first/second moment state for one stack.
pub struct Adam {
    states: HashMap<(usize, ParamKind), (ArrayD<f64>, ArrayD<f64>)>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Self { states: HashMap::new(), step: 0, beta1: BETA1, beta2: BETA2, eps: ADAM_EPS }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every bound parameter of `stack` using the
    /// gradients recorded in `graph`.
    ///
    /// A NaN gradient aborts with the parameter's name so divergence is
    /// diagnosable.
    pub fn step<T: Real>(
        &mut self,
        stack: &mut Stack,
        bindings: &[ParamBinding],
        graph: &Graph<T>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let step = self.step;
        for b in bindings {
            let grad = cast_from(graph.grad(b.var)?);
            if grad.iter().any(|v| v.is_nan()) {
                return Err(NeuralError::Training(format!(
                    "NaN gradient in {}[{}].{:?}",
                    stack.name, b.layer, b.kind
                )));
            }
            let param = stack.param_mut(b.layer, b.kind)?;
            if param.shape() != grad.shape() {
                return Err(NeuralError::shape(format!(
                    "gradient shape {:?} vs parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let (m, v) = self
                .states
                .entry((b.layer, b.kind))
                .or_insert_with(|| (ArrayD::zeros(grad.raw_dim()), ArrayD::zeros(grad.raw_dim())));
            adam_update(param, &grad, m, v, step, lr, self.beta1, self.beta2, self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn schedule_matches_halving_rule() {
        assert_eq!(lr_schedule(0), 0.002);
        assert_eq!(lr_schedule(9), 0.002);
        assert_eq!(lr_schedule(10), 0.001);
        assert_eq!(lr_schedule(25), 0.0005);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = ArrayD::from_elem(IxDyn(&[4]), 1.5);
        let g = ArrayD::zeros(IxDyn(&[4]));
        let mut m = ArrayD::zeros(IxDyn(&[4]));
        let mut v = ArrayD::zeros(IxDyn(&[4]));
        for t in 1..=10 {
            adam_update(&mut p, &g, &mut m, &mut v, t, 0.01, BETA1, BETA2, ADAM_EPS);
        }
        assert!(p.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        // With a constant gradient the bias-corrected ratio tends to 1,
        // so each step moves by about lr.
        let mut p = ArrayD::from_elem(IxDyn(&[1]), 0.0);
        let g = ArrayD::from_elem(IxDyn(&[1]), 3.7);
        let mut m = ArrayD::zeros(IxDyn(&[1]));
        let mut v = ArrayD::zeros(IxDyn(&[1]));
        let lr = 0.01;
        let mut last = p[[0]];
        let mut delta = 0.0;
        for t in 1..=200 {
            adam_update(&mut p, &g, &mut m, &mut v, t, lr, BETA1, BETA2, ADAM_EPS);
            delta = (p[[0]] - last).abs();
            last = p[[0]];
        }
        assert!((delta - lr).abs() < 1e-4, "step size {delta} should approach lr {lr}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimize 0.5*||x - c||^2 from the origin; 500 steps at lr 0.01
        // must land within 1e-3 of c = (1, 1).
        let c = [1.0, 1.0];
        let mut p = ArrayD::zeros(IxDyn(&[2]));
        let mut m = ArrayD::zeros(IxDyn(&[2]));
        let mut v = ArrayD::zeros(IxDyn(&[2]));
        for t in 1..=500 {
            let g = ArrayD::from_shape_vec(IxDyn(&[2]), vec![p[[0]] - c[0], p[[1]] - c[1]]).unwrap();
            adam_update(&mut p, &g, &mut m, &mut v, t, 0.01, BETA1, BETA2, ADAM_EPS);
        }
        let dist = ((p[[0]] - c[0]).powi(2) + (p[[1]] - c[1]).powi(2)).sqrt();
        assert!(dist < 1e-3, "distance to optimum {dist}");
    }
}
