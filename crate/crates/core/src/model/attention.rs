use rand::Rng;

use crate::numerics::{glorot_uniform, Graph, NumericsError, ParamStore, Tensor, Var};

const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

/// Scale applied to the Glorot bound of the query and key projections.
/// Inputs scaled to [0, 10] (the IMU channels) otherwise start with
/// saturated attention rows.
pub const QUERY_KEY_INIT_GAIN: f64 = 0.1;

pub fn init_attention<R: Rng>(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut R) -> Result<(), NumericsError> {
    for p in PROJECTIONS {
        let mut w = glorot_uniform(rng, &[d_model, d_model], d_model, d_model);
        if p == "q" || p == "k" {
            w.data_mut().iter_mut().for_each(|v| *v *= QUERY_KEY_INIT_GAIN);
        }
        store.add_param(&format!("{prefix}.w{p}"), w)?;
        store.add_param(&format!("{prefix}.b{p}"), Tensor::zeros(&[d_model]))?;
    }
    Ok(())
}

pub struct AttentionOutput {
    /// `[B, L, D]`
    pub output: Var,
    /// Attention distributions `[B, heads, L, L]`; rows sum to 1.
    pub weights: Var,
}

/// Scaled dot-product self-attention over the `L` axis of `x: [B, L, D]`
/// with `heads` heads of width `D / heads` and an output projection.
pub fn multi_head_self_attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    heads: usize,
) -> Result<AttentionOutput, NumericsError> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || heads == 0 || !shape[2].is_multiple_of(heads) {
        return Err(NumericsError::ShapeMismatch {
            op: "multi_head_self_attention",
            detail: format!("{heads} heads for input {shape:?}"),
        });
    }
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;
    let proj = |g: &mut Graph, p: &str| -> Result<Var, NumericsError> {
        let w = g.param(store, &format!("{prefix}.w{p}"))?;
        let bias = g.param(store, &format!("{prefix}.b{p}"))?;
        let y = g.affine(x, w, bias)?;
        let y = g.reshape(y, &[b, l, heads, dh])?;
        g.permute(y, &[0, 2, 1, 3])
    };
    let q = proj(g, "q")?;
    let k = proj(g, "k")?;
    let v = proj(g, "v")?;

    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = g.softmax(scores, 3)?;
    let ctx = g.matmul(weights, v)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, l, d])?;

    let wo = g.param(store, &format!("{prefix}.wo"))?;
    let bo = g.param(store, &format!("{prefix}.bo"))?;
    let output = g.affine(ctx, wo, bo)?;
    Ok(AttentionOutput { output, weights })
}
