//! Central finite-difference gradient checking.

use rand::Rng;

use super::layers::Parameter;
use crate::error::Result;

/// Outcome of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub loss: f64,
    /// Discrete state of every kink on the loss path (activation signs,
    /// selected hardest samples, clamp states). Finite differences whose
    /// two sides disagree with the base state straddle a kink and are
    /// excluded from the comparison.
    pub signature: Vec<u64>,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Self {
            loss,
            signature: Vec::new(),
        }
    }
}

/// A scalar objective over a set of parameters.
pub trait Objective {
    /// Evaluate the loss. With `backprop` set, accumulate analytic
    /// gradients into the parameters (which start zeroed).
    fn evaluate(&mut self, backprop: bool) -> Result<Probe>;
    fn num_params(&self) -> usize;
    fn param_mut(&mut self, index: usize) -> &mut Parameter;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped_kinks).sum()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error of one element. Elements whose gradient is more than a
/// thousand times smaller than the parameter's largest gradient are
/// measured against that floor instead of their own magnitude.
fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(1e-3 * scale)
        .max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Compare every trainable parameter element's analytic gradient with a
/// central difference of step `h`.
pub fn grad_check(obj: &mut impl Objective, h: f64) -> Result<GradCheckReport> {
    grad_check_with(obj, h, |_, len| (0..len).collect())
}

/// [`grad_check`] on at most `per_param` randomly chosen elements of each
/// parameter.
pub fn grad_check_sampled(
    obj: &mut impl Objective,
    h: f64,
    per_param: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    grad_check_with(obj, h, |_, len| {
        let mut idx = rand::seq::index::sample(rng, len, per_param.min(len)).into_vec();
        idx.sort_unstable();
        idx
    })
}

/// [`grad_check`] on the elements `select(param_index, len)` of each
/// parameter.
pub fn grad_check_with(
    obj: &mut impl Objective,
    h: f64,
    mut select: impl FnMut(usize, usize) -> Vec<usize>,
) -> Result<GradCheckReport> {
    for i in 0..obj.num_params() {
        obj.param_mut(i).zero_grad();
    }
    let base = obj.evaluate(true)?;
    let analytic: Vec<Vec<f64>> = (0..obj.num_params())
        .map(|i| obj.param_mut(i).grad.data().to_vec())
        .collect();

    let mut report = GradCheckReport { params: Vec::new() };
    for (i, grads) in analytic.iter().enumerate() {
        let p = obj.param_mut(i);
        if !p.trainable {
            continue;
        }
        let name = p.name.clone();
        let scale = grads.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut check = ParamCheck {
            name,
            max_rel_error: 0.0,
            checked: 0,
            skipped_kinks: 0,
        };
        for j in select(i, grads.len()) {
            let a = grads[j];
            let orig = obj.param_mut(i).value.data()[j];
            obj.param_mut(i).value.data_mut()[j] = orig + h;
            let plus = obj.evaluate(false);
            obj.param_mut(i).value.data_mut()[j] = orig - h;
            let minus = obj.evaluate(false);
            obj.param_mut(i).value.data_mut()[j] = orig;
            let (plus, minus) = (plus?, minus?);
            if plus.signature != base.signature || minus.signature != base.signature {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric, scale));
            check.checked += 1;
        }
        report.params.push(check);
    }
    for i in 0..obj.num_params() {
        obj.param_mut(i).zero_grad();
    }
    Ok(report)
}

/// Objective over free-standing parameters, driven by a closure. Handy for
/// checking single operations w.r.t. their inputs.
pub struct ClosureObjective<F> {
    pub params: Vec<Parameter>,
    pub f: F,
}

impl<F> Objective for ClosureObjective<F>
where
    F: FnMut(&mut [Parameter], bool) -> Result<Probe>,
{
    fn evaluate(&mut self, backprop: bool) -> Result<Probe> {
        (self.f)(&mut self.params, backprop)
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn param_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self.params[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Tensor;

    #[test]
    fn quadratic_passes() {
        let mut obj = ClosureObjective {
            params: vec![Parameter::new(
                "x",
                Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap(),
            )],
            f: |ps: &mut [Parameter], backprop: bool| {
                let x = ps[0].value.data().to_vec();
                if backprop {
                    for (g, v) in ps[0].grad.data_mut().iter_mut().zip(&x) {
                        *g += 3.0 * v * v;
                    }
                }
                Ok(Probe::smooth(x.iter().map(|v| v * v * v).sum()))
            },
        };
        let report = grad_check(&mut obj, DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-8), "{report:?}");
        assert_eq!(report.checked(), 3);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut obj = ClosureObjective {
            params: vec![Parameter::new("x", Tensor::full(&[2], 1.0))],
            f: |ps: &mut [Parameter], backprop: bool| {
                let s: f64 = ps[0].value.data().iter().map(|v| v * v).sum();
                if backprop {
                    ps[0].grad.data_mut().iter_mut().for_each(|g| *g += 1.0);
                }
                Ok(Probe::smooth(s))
            },
        };
        assert!(!grad_check(&mut obj, DEFAULT_STEP).unwrap().passes(1e-4));
    }

    #[test]
    fn sampling_limits_checked_elements() {
        use rand::SeedableRng;
        let mut obj = ClosureObjective {
            params: vec![Parameter::new("x", Tensor::full(&[10], 0.5))],
            f: |ps: &mut [Parameter], backprop: bool| {
                let s: f64 = ps[0].value.data().iter().map(|v| v * v).sum();
                if backprop {
                    let x = ps[0].value.data().to_vec();
                    ps[0]
                        .grad
                        .data_mut()
                        .iter_mut()
                        .zip(x)
                        .for_each(|(g, v)| *g += 2.0 * v);
                }
                Ok(Probe::smooth(s))
            },
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = grad_check_sampled(&mut obj, DEFAULT_STEP, 4, &mut rng).unwrap();
        assert_eq!(r.checked(), 4);
        assert!(r.passes(1e-8));
    }
}
