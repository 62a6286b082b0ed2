//! Parameter updates and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::linalg::check_dims;
use crate::Result;

/// Added to the RMS denominator.
pub const RMS_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    RmsAdaptive,
}

/// `a ← ρa + (1−ρ)g²; θ ← θ − lr·g/(√a + 1e-8)`, element-wise.
pub fn rms_adaptive_update(
    param: &mut [f64],
    grad: &[f64],
    accumulator: &mut [f64],
    lr: f64,
    rms_decay: f64,
) -> Result<()> {
    check_dims(param.len(), grad.len())?;
    check_dims(param.len(), accumulator.len())?;
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(accumulator.iter_mut()) {
        *a = rms_decay * *a + (1.0 - rms_decay) * g * g;
        *p -= lr * g / (a.sqrt() + RMS_EPSILON);
    }
    Ok(())
}

pub fn sgd_update(param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_dims(param.len(), grad.len())?;
    for (p, &g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// One optimizer over a fixed sequence of parameter groups. Groups are
/// identified by position, so callers must present them in the same order
/// every step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    rms_decay: f64,
    state: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, rms_decay: f64) -> Self {
        Optimizer {
            kind,
            rms_decay,
            state: Vec::new(),
        }
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: impl IntoIterator<Item = &'a [f64]>,
        lr: f64,
    ) -> Result<()> {
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => sgd_update(p, g, lr)?,
                OptimizerKind::RmsAdaptive => {
                    if self.state.len() <= i {
                        self.state.push(vec![0.0; p.len()]);
                    }
                    rms_adaptive_update(p, g, &mut self.state[i], lr, self.rms_decay)?;
                }
            }
        }
        Ok(())
    }
}

/// `lr · decay^⌊step / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub decay_rate: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn at(&self, step: usize) -> f64 {
        let every = self.every.max(1);
        self.base * self.decay_rate.powi((step / every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut p = [1.0, -2.0];
        let mut a = [4.0, 1.0];
        rms_adaptive_update(&mut p, &[0.0, 0.0], &mut a, 0.1, 0.9).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert!((a[0] - 3.6).abs() < 1e-15 && (a[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn first_step_without_memory_is_signed_step() {
        let mut p = [0.0, 0.0];
        let mut a = [0.0, 0.0];
        let g = [3.0, -0.5];
        rms_adaptive_update(&mut p, &g, &mut a, 0.1, 0.0).unwrap();
        for i in 0..2 {
            let expected = -0.1 * g[i] / (g[i].abs() + RMS_EPSILON);
            assert!((p[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn three_step_scalar_trace() {
        // Hand-rolled oracle, written out step by step.
        let (lr, rho) = (0.05, 0.9);
        let grads = [0.4, -1.0, 0.25];
        let mut oracle_p = 1.0f64;
        let mut oracle_a = 0.0f64;
        for g in grads {
            oracle_a = rho * oracle_a + (1.0 - rho) * g * g;
            oracle_p -= lr * g / (oracle_a.sqrt() + 1e-8);
        }
        let mut p = [1.0];
        let mut a = [0.0];
        for g in grads {
            rms_adaptive_update(&mut p, &[g], &mut a, lr, rho).unwrap();
        }
        assert_eq!(p[0], oracle_p);
        assert_eq!(a[0], oracle_a);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(rms_adaptive_update(&mut [0.0], &[0.0, 1.0], &mut [0.0], 0.1, 0.9).is_err());
    }

    #[test]
    fn step_decay_schedule() {
        let s = StepDecay { base: 0.5, decay_rate: 0.94, every: 10 };
        assert_eq!(s.at(0), 0.5);
        assert_eq!(s.at(9), 0.5);
        assert_eq!(s.at(10), 0.5 * 0.94);
        assert_eq!(s.at(25), 0.5 * 0.94f64.powi(2));
    }
}
