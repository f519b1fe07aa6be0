use super::network::{Gradients, Parameterized, Sequential};
use super::tensor::Tensor;
use crate::error::Result;

/// Floor on the denominator of the relative error so that gradients that are
/// zero analytically are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error inside each parameter tensor.
    pub per_parameter: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central differences of `loss` with respect to every parameter of `model`.
pub fn numeric_gradients<M, F>(model: &mut M, step: f64, mut loss: F) -> Gradients
where
    M: Parameterized,
    F: FnMut(&M) -> f64,
{
    let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
    let mut grads: Gradients = shapes.iter().map(|s| Tensor::zeros(s)).collect();
    for (k, grad) in grads.iter_mut().enumerate() {
        for e in 0..grad.len() {
            let original = model.parameters()[k].data()[e];
            model.parameters_mut()[k].data_mut()[e] = original + step;
            let plus = loss(model);
            model.parameters_mut()[k].data_mut()[e] = original - step;
            let minus = loss(model);
            model.parameters_mut()[k].data_mut()[e] = original;
            grad.data_mut()[e] = (plus - minus) / (2.0 * step);
        }
    }
    grads
}

pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor], tolerance: f64) -> GradCheckReport {
    let per_parameter: Vec<f64> = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            if a.shape() != n.shape() {
                return f64::INFINITY;
            }
            a.data()
                .iter()
                .zip(n.data())
                .map(|(&x, &y)| relative_error(x, y))
                .fold(0.0, f64::max)
        })
        .collect();
    let max_relative_error = if analytic.len() == numeric.len() {
        per_parameter.iter().copied().fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    GradCheckReport {
        per_parameter,
        max_relative_error,
        tolerance,
        passed: max_relative_error < tolerance,
    }
}

/// Backprop gradients of a network for `loss_fn(output) -> (loss, dloss/doutput)`.
pub fn analytic_gradients<F>(net: &Sequential, input: &Tensor, loss_fn: &F) -> Result<Gradients>
where
    F: Fn(&Tensor) -> (f64, Tensor),
{
    let trace = net.forward_trace(input)?;
    let (_, grad_out) = loss_fn(trace.output());
    let mut grads = net.zero_gradients();
    net.backward(&trace, &grad_out, &mut grads, false)?;
    Ok(grads)
}

/// Compares backprop against central differences with the default step `h = 1e-5`.
pub fn grad_check<F>(net: &Sequential, input: &Tensor, loss_fn: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> (f64, Tensor),
{
    let analytic = analytic_gradients(net, input, &loss_fn)?;
    let mut probe = net.clone();
    let numeric = numeric_gradients(&mut probe, DEFAULT_STEP, |n: &Sequential| {
        let out = n.forward(input).expect("shape already validated");
        loss_fn(&out).0
    });
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
