use rand::Rng;

use super::block::{dual_attention_block, init_block};
use super::gre::{gaussian_range_encode, init_gre};
use super::{ModelError, StdatConfig};
use crate::numerics::{glorot_uniform, Graph, ParamStore, Tensor, Var};

pub fn init_stdat<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &StdatConfig, rng: &mut R) -> Result<(), ModelError> {
    cfg.validate()?;
    init_gre(store, &format!("{prefix}.gre"), cfg.seq_len, cfg.channels, cfg.gaussians, rng)?;
    for i in 0..cfg.blocks {
        init_block(store, &format!("{prefix}.block{i}"), cfg, rng)?;
    }
    let flat = cfg.seq_len * cfg.channels;
    store.add_param(
        &format!("{prefix}.fnn.w1"),
        glorot_uniform(rng, &[flat, cfg.hidden], flat, cfg.hidden),
    )?;
    store.add_param(&format!("{prefix}.fnn.b1"), Tensor::zeros(&[cfg.hidden]))?;
    store.add_param(
        &format!("{prefix}.fnn.w2"),
        glorot_uniform(rng, &[cfg.hidden, cfg.embed_dim], cfg.hidden, cfg.embed_dim),
    )?;
    store.add_param(&format!("{prefix}.fnn.b2"), Tensor::zeros(&[cfg.embed_dim]))?;
    Ok(())
}

/// Range-biased input, stacked dual attention blocks, then
/// flatten → affine → ReLU → affine. `x: [B, N, M]` → `[B, embed_dim]`.
pub fn stdat_forward(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, cfg: &StdatConfig) -> Result<Var, ModelError> {
    let s = g.shape(x);
    if s.len() != 3 || s[1] != cfg.seq_len || s[2] != cfg.channels {
        return Err(ModelError::InputShape {
            tower: prefix.to_string(),
            got: s.to_vec(),
            n: cfg.seq_len,
            m: cfg.channels,
        });
    }
    let (enc, _) = gaussian_range_encode(g, store, &format!("{prefix}.gre"), cfg.seq_len)?;
    let mut h = g.add(x, enc)?;
    for i in 0..cfg.blocks {
        h = dual_attention_block(g, store, &format!("{prefix}.block{i}"), h, cfg)?.output;
    }
    let flat = g.flatten(h)?;
    let (w1, b1) = (
        g.param(store, &format!("{prefix}.fnn.w1"))?,
        g.param(store, &format!("{prefix}.fnn.b1"))?,
    );
    let hidden = g.affine(flat, w1, b1)?;
    let hidden = g.relu(hidden)?;
    let (w2, b2) = (
        g.param(store, &format!("{prefix}.fnn.w2"))?,
        g.param(store, &format!("{prefix}.fnn.b2"))?,
    );
    Ok(g.affine(hidden, w2, b2)?)
}
