use rand::Rng;

use crate::numerics::{uniform, Graph, NumericsError, ParamStore, Tensor, Var};

/// Gaussian range encoder parameters: `K` means evenly spaced over
/// `[0, N)`, `sigma = N / K` (stored as log), range embeddings `[K, M]`.
pub fn init_gre<R: Rng>(store: &mut ParamStore, prefix: &str, n: usize, m: usize, k: usize, rng: &mut R) -> Result<(), NumericsError> {
    let mu = (0..k).map(|j| j as f64 * n as f64 / k as f64).collect();
    let log_sigma = vec![(n as f64 / k as f64).ln(); k];
    store.add_param(&format!("{prefix}.mu"), Tensor::vector(mu))?;
    store.add_param(&format!("{prefix}.log_sigma"), Tensor::vector(log_sigma))?;
    store.add_param(&format!("{prefix}.range"), uniform(rng, &[k, m], 0.1))?;
    Ok(())
}

/// Positional encoding `G = P̂ · B` of shape `[N, M]`, where row `n` of `P̂`
/// holds the normalized pdf values of the `K` Gaussians at position `n`.
///
/// Returns `(G, P̂)`.
pub fn gaussian_range_encode(g: &mut Graph, store: &ParamStore, prefix: &str, n: usize) -> Result<(Var, Var), NumericsError> {
    let mu = g.param(store, &format!("{prefix}.mu"))?;
    let log_sigma = g.param(store, &format!("{prefix}.log_sigma"))?;
    let range = g.param(store, &format!("{prefix}.range"))?;
    let weights = g.gaussian_weights(mu, log_sigma, n)?;
    let enc = g.matmul(weights, range)?;
    Ok((enc, weights))
}
