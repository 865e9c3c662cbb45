//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! the reverse pass it validates.

use super::{Graph, Mode, NumericsError, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_RTOL: f64 = 1e-4;
pub const DEFAULT_ATOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, atol / rtol)`.
    pub max_rel_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub rtol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.rtol
    }
}

/// Compares analytic gradients of a scalar built by `build` against central
/// differences for every element of every input.
///
/// `build` receives one leaf per input (all with `requires_grad`) and must
/// return a scalar. Each evaluation uses a fresh graph with the same `mode`
/// and `seed`, so dropout masks repeat across evaluations.
pub fn check<F>(
    inputs: &[Tensor],
    mode: Mode,
    seed: u64,
    step: f64,
    rtol: f64,
    atol: f64,
    build: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |ts: &[Tensor]| -> Result<f64, NumericsError> {
        let mut g = Graph::new(mode, seed);
        let vars = ts
            .iter()
            .map(|t| g.leaf(t.clone().with_grad(true)))
            .collect::<Result<Vec<_>, _>>()?;
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(mode, seed);
    let vars = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad(true)))
        .collect::<Result<Vec<_>, _>>()?;
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let floor = atol / rtol;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        rtol,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for e in 0..inputs[i].len() {
            let orig = inputs[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// [`check`] with the default step and tolerances.
pub fn check_default<F>(inputs: &[Tensor], mode: Mode, build: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    check(inputs, mode, 7, DEFAULT_STEP, DEFAULT_RTOL, DEFAULT_ATOL, build)
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights, so
/// gradient checks exercise every output element with a distinct weight.
pub fn weighted_sum(g: &mut Graph, v: Var) -> Result<Var, NumericsError> {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662).fract() - 0.5).collect();
    let wv = g.input(Tensor::new(shape, w)?)?;
    let p = g.mul(v, wv)?;
    g.sum(p)
}

/// Finite-difference check of every trainable parameter in `store` against
/// the gradients of the scalar returned by `forward`.
pub fn check_params<F>(
    store: &super::ParamStore,
    mode: Mode,
    seed: u64,
    rtol: f64,
    atol: f64,
    forward: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &super::ParamStore) -> Result<Var, NumericsError>,
{
    let eval = |s: &super::ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new(mode, seed);
        let out = forward(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new(mode, seed);
    let out = forward(&mut g, store)?;
    let grads = g.backward(out)?;

    let floor = atol / rtol;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        rtol,
    };
    let mut work = store.clone();
    for (pi, entry) in store.entries().iter().enumerate().filter(|(_, e)| e.trainable) {
        let analytic = grads
            .param(&entry.name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(entry.tensor.shape()));
        for e in 0..entry.tensor.len() {
            let orig = entry.tensor.data()[e];
            work.get_mut(&entry.name).expect("same names").data_mut()[e] = orig + DEFAULT_STEP;
            let plus = eval(&work)?;
            work.get_mut(&entry.name).expect("same names").data_mut()[e] = orig - DEFAULT_STEP;
            let minus = eval(&work)?;
            work.get_mut(&entry.name).expect("same names").data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * DEFAULT_STEP);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
