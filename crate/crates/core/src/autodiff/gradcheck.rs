//! Central finite-difference verification of reverse-mode gradients,
//! always evaluated in 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Result, Var};
use super::tensor::Tensor;

/// Outcome of a multi-block check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Worst relative error per input block.
    pub per_block: Vec<f64>,
    /// `(block, component, error)` of the worst offender overall.
    pub worst: (usize, usize, f64),
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.worst.2
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Max over components of `|analytic - central difference| / max(1, |central difference|)`
/// for a scalar-valued `f` of one tensor.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let report = gradcheck_blocks(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps, None)?;
    Ok(report.max_error())
}

/// Checks the gradient of `f` with respect to each tensor in `inputs`.
///
/// With `subsample = Some((k, seed))` only `k` randomly chosen components
/// per block are perturbed, which keeps checks of large parameter blocks
/// affordable.
pub fn gradcheck_blocks<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    subsample: Option<(usize, u64)>,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    drop(g);

    let mut rng = subsample.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_block = Vec::with_capacity(inputs.len());
    let mut worst = (0, 0, 0.0);
    for block in 0..inputs.len() {
        let n = inputs[block].len();
        let components: Vec<usize> = match (&mut rng, subsample) {
            (Some(rng), Some((k, _))) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut block_worst: f64 = 0.0;
        for c in components {
            let orig = work[block].data()[c];
            work[block].data_mut()[c] = orig + eps;
            let plus = eval(&work)?;
            work[block].data_mut()[c] = orig - eps;
            let minus = eval(&work)?;
            work[block].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let e = rel_err(analytic[block].data()[c], numeric);
            block_worst = block_worst.max(e);
            if e > worst.2 {
                worst = (block, c, e);
            }
        }
        per_block.push(block_worst);
    }
    Ok(GradcheckReport { per_block, worst })
}
