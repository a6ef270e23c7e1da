//! Finite-difference check of analytic gradients, in double precision.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest relative error over every checked element.
    pub max_rel_error: f64,
    /// Per input; `None` for inputs that do not require a gradient.
    pub per_input: Vec<Option<f64>>,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|, |n|)`: absolute error for small gradients,
/// relative error for large ones.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(TensorError::Usage(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Compares the gradients of the scalar function `f` at `inputs` against
/// central differences with step `eps`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&g, &vars)?;
        g.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| {
                t.requires_grad()
                    .then(|| v.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            })
            .collect()
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, grads) in analytic.iter().enumerate() {
        let Some(grads) = grads else {
            per_input.push(None);
            continue;
        };
        let mut worst = 0f64;
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = evaluate(&f, &work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = evaluate(&f, &work)?;
            work[k].data_mut()[i] = orig;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * eps)));
        }
        per_input.push(Some(worst));
    }
    let max_rel_error = per_input.iter().flatten().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        max_rel_error,
        per_input,
        passed: max_rel_error <= tol,
    })
}
