use super::layers::Parameter;
use crate::error::{Error, Result};

/// SGD hyperparameters. Defaults follow the published training setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            clip_norm: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::invalid(format!(
                "clip norm must be non-negative, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Global L2 norm of the trainable parameters' gradients.
pub fn grad_norm<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> f64 {
    params
        .into_iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.grad.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// One SGD step with momentum and L2 weight decay:
/// `g' = s * g + wd * w; v = mu * v + g'; w -= lr * v`, where `s` shrinks
/// the global gradient norm to `clip_norm` when that is set and exceeded.
/// Frozen parameters are left untouched. All gradients are cleared.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, cfg: &OptimConfig) {
    let mut params: Vec<&mut Parameter> = params.into_iter().collect();
    let mut scale = 1.0;
    if cfg.clip_norm > 0.0 {
        let norm = grad_norm(params.iter().map(|p| &**p));
        if norm > cfg.clip_norm {
            scale = cfg.clip_norm / norm;
        }
    }
    for p in params.iter_mut() {
        if p.trainable {
            let (w, g, v) = (p.value.data_mut(), p.grad.data(), p.momentum.data_mut());
            for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                let g_eff = scale * gi + cfg.weight_decay * *wi;
                *vi = cfg.momentum * *vi + g_eff;
                *wi -= cfg.learning_rate * *vi;
            }
        }
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Tensor;

    fn scalar_param(w: f64, g: f64) -> Parameter {
        let mut p = Parameter::new("w", Tensor::full(&[1], w));
        p.grad = Tensor::full(&[1], g);
        p
    }

    fn cfg(lr: f64, momentum: f64, weight_decay: f64) -> OptimConfig {
        OptimConfig {
            learning_rate: lr,
            momentum,
            weight_decay,
            clip_norm: 0.0,
        }
    }

    #[test]
    fn plain_step() {
        let mut p = scalar_param(1.0, 0.5);
        sgd_step([&mut p], &cfg(0.1, 0.0, 0.0));
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn weight_decay_acts_as_gradient() {
        let mut p = scalar_param(1.0, 0.0);
        sgd_step([&mut p], &cfg(0.1, 0.0, 0.5));
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = scalar_param(1.0, 1.0);
        let c = cfg(0.1, 0.9, 0.0);
        sgd_step([&mut p], &c);
        p.grad = Tensor::full(&[1], 1.0);
        sgd_step([&mut p], &c);
        // v1 = 1, v2 = 0.9 + 1 = 1.9; w = 1 - 0.1 - 0.19
        assert!((p.value.data()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut p = scalar_param(1.0, 3.0);
        p.trainable = false;
        sgd_step([&mut p], &cfg(0.1, 0.9, 0.5));
        assert_eq!(p.value.data()[0].to_bits(), 1.0f64.to_bits());
        assert_eq!(p.momentum.data()[0], 0.0);
    }

    #[test]
    fn clipping_rescales_global_norm() {
        let mut a = scalar_param(0.0, 3.0);
        let mut b = scalar_param(0.0, 4.0);
        let c = OptimConfig {
            clip_norm: 1.0,
            ..cfg(1.0, 0.0, 0.0)
        };
        sgd_step([&mut a, &mut b], &c);
        assert!((a.value.data()[0] + 0.6).abs() < 1e-15);
        assert!((b.value.data()[0] + 0.8).abs() < 1e-15);

        let mut small = scalar_param(0.0, 0.5);
        sgd_step([&mut small], &c);
        assert_eq!(small.value.data()[0], -0.5);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        assert!(cfg(0.0, 0.9, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 0.5, -1.0).validate().is_err());
        assert!(OptimConfig {
            clip_norm: -1.0,
            ..OptimConfig::default()
        }
        .validate()
        .is_err());
    }
}
