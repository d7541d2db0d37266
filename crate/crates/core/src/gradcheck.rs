//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates the forward pass on constant inputs, so it
//! never touches the backward rules it is checking.

use crate::autograd::{Graph, Var};
use crate::tensor::{Result, Tensor};

/// Per-input comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-8)` per input.
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares `∂f/∂inputs` from [`Graph::backward`] with central differences of
/// step `h`. `f` must build a scalar (`[1]`) loss from the given vars.
pub fn check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| v.grad()).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.value().item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        numeric.push(grad);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            diff / norm(a).max(norm(n)).max(1e-8)
        })
        .collect();
    Ok(GradReport {
        analytic,
        numeric,
        rel_errors,
    })
}
