//! Finite-difference verification of analytic gradients (64-bit only).

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so that gradients which
    /// are zero analytically compare on an absolute scale.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements_per_input: Option<usize>,
    /// Skip elements whose central-difference stencil crosses a relu kink,
    /// where the function is not differentiable.
    pub skip_kinks: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_elements_per_input: None,
            skip_kinks: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Elements left out because a relu changed state inside the stencil.
    pub skipped: usize,
    /// `(input, element)` with the largest relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| graph.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut graph, &vars)?;
    if graph.value(out).len() != 1 {
        return Err(Error::Dimension("grad_check: function must return a scalar".into()));
    }
    Ok((graph, vars, out))
}

/// Compares the gradient of the scalar built by `f` with respect to each of
/// `inputs` against central differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (graph, vars, out) = evaluate(&f, inputs)?;
    let grads = graph.backward(out)?;
    let pattern = graph.relu_pattern();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect();
    drop(graph);

    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.len();
        let count = options.max_elements_per_input.map_or(n, |m| m.min(n));
        for k in 0..count {
            let ei = if count == n { k } else { k * n / count };
            let orig = input.data()[ei];
            probe[ti].data_mut()[ei] = orig + options.step;
            let plus = evaluate(&f, &probe)?;
            let fp = plus.0.value(plus.2).item();
            probe[ti].data_mut()[ei] = orig - options.step;
            let minus = evaluate(&f, &probe)?;
            let fm = minus.0.value(minus.2).item();
            probe[ti].data_mut()[ei] = orig;
            if options.skip_kinks && (plus.0.relu_pattern() != pattern || minus.0.relu_pattern() != pattern) {
                report.skipped += 1;
                continue;
            }

            let numeric = (fp - fm) / (2.0 * options.step);
            let a = analytic[ti][ei];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(options.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((ti, ei));
            }
        }
    }
    Ok(report)
}
