use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Graph, Result, Tensor, Var};

/// Above this many parameter elements, a fixed random subsample is checked.
const MAX_CHECKED: usize = 10_000;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn evaluate<F>(build: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Analytic gradients of the scalar built by `build` over `params`.
pub fn analytic_gradients<F>(params: &[Tensor], build: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    Ok(vars.into_iter().map(|v| grads.take(v)).collect())
}

/// Maximum relative error between `analytic` and central differences of the
/// graph produced by `build`.
pub fn compare_gradients<F>(params: &[Tensor], analytic: &[Tensor], eps: f64, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + Sync,
{
    let positions: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    let chosen: Vec<(usize, usize)> = if positions.len() > MAX_CHECKED {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut idx = index::sample(&mut rng, positions.len(), MAX_CHECKED).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| positions[i]).collect()
    } else {
        positions
    };

    let errors: Vec<f64> = chosen
        .par_iter()
        .map(|&(pi, ei)| {
            let mut shifted = params.to_vec();
            let orig = params[pi].data()[ei];
            shifted[pi].data_mut()[ei] = orig + eps;
            let up = evaluate(build, &shifted)?;
            shifted[pi].data_mut()[ei] = orig - eps;
            let down = evaluate(build, &shifted)?;
            let numeric = (up - down) / (2.0 * eps);
            Ok(relative_error(analytic[pi].data()[ei], numeric))
        })
        .collect::<Result<_>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// Checks reverse-mode gradients of `build` against central differences with
/// step `eps`; returns the maximum relative error.
pub fn check_gradients<F>(params: &[Tensor], eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + Sync,
{
    let analytic = analytic_gradients(params, &build)?;
    compare_gradients(params, &analytic, eps, &build)
}
