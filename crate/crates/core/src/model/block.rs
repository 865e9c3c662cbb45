use rand::Rng;

use super::attention::{init_attention, multi_head_self_attention};
use super::StdatConfig;
use crate::numerics::{glorot_uniform, Graph, NumericsError, ParamStore, RunningStats, Tensor, Var};

/// Kernel sizes of the parallel multi-scale convolution branches.
pub const M2D_KERNELS: [usize; 3] = [1, 3, 5];

pub fn init_block<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &StdatConfig, rng: &mut R) -> Result<(), NumericsError> {
    init_attention(store, &format!("{prefix}.tmha"), cfg.channels, rng)?;
    init_attention(store, &format!("{prefix}.cmha"), cfg.seq_len, rng)?;
    for ln in ["ln1", "ln2"] {
        store.add_param(&format!("{prefix}.{ln}.gain"), Tensor::filled(&[cfg.channels], 1.0))?;
        store.add_param(&format!("{prefix}.{ln}.bias"), Tensor::zeros(&[cfg.channels]))?;
    }
    for k in M2D_KERNELS {
        store.add_param(&format!("{prefix}.conv{k}.w"), glorot_uniform(rng, &[1, 1, k, k], k * k, k * k))?;
        store.add_param(&format!("{prefix}.conv{k}.b"), Tensor::zeros(&[1]))?;
        store.add_param(&format!("{prefix}.bn{k}.gain"), Tensor::filled(&[1], 1.0))?;
        store.add_param(&format!("{prefix}.bn{k}.bias"), Tensor::zeros(&[1]))?;
        store.add_buffer(&format!("{prefix}.bn{k}.running_mean"), Tensor::zeros(&[1]))?;
        store.add_buffer(&format!("{prefix}.bn{k}.running_var"), Tensor::filled(&[1], 1.0))?;
    }
    Ok(())
}

/// Output of one block plus the attention maps it produced.
pub struct BlockOutput {
    pub output: Var,
    pub temporal_weights: Var,
    pub channel_weights: Var,
}

/// Temporal and channel attention summed, add & norm, multi-scale
/// convolution, add & norm. Preserves the `[B, N, M]` shape.
pub fn dual_attention_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    cfg: &StdatConfig,
) -> Result<BlockOutput, NumericsError> {
    let (b, n, m) = (g.shape(x)[0], cfg.seq_len, cfg.channels);

    let temporal = multi_head_self_attention(g, store, &format!("{prefix}.tmha"), x, cfg.temporal_heads)?;
    let xt = g.transpose(x)?;
    let channel = multi_head_self_attention(g, store, &format!("{prefix}.cmha"), xt, cfg.channel_heads)?;
    let vc = g.transpose(channel.output)?;
    let v = g.add(temporal.output, vc)?;

    let res = g.add(v, x)?;
    let (gain1, bias1) = (
        g.param(store, &format!("{prefix}.ln1.gain"))?,
        g.param(store, &format!("{prefix}.ln1.bias"))?,
    );
    let vbar = g.layer_norm(res, gain1, bias1)?;

    let img = g.reshape(vbar, &[b, 1, n, m])?;
    let mut conv_sum: Option<Var> = None;
    for k in M2D_KERNELS {
        let w = g.param(store, &format!("{prefix}.conv{k}.w"))?;
        let bias = g.param(store, &format!("{prefix}.conv{k}.b"))?;
        let c = g.conv2d(img, w, bias)?;
        let bn = format!("{prefix}.bn{k}");
        let (bg, bb) = (g.param(store, &format!("{bn}.gain"))?, g.param(store, &format!("{bn}.bias"))?);
        let running = RunningStats {
            mean: store.require(&format!("{bn}.running_mean"))?,
            var: store.require(&format!("{bn}.running_var"))?,
        };
        let c = g.batch_norm(c, bg, bb, running, &bn)?;
        let c = g.dropout(c, cfg.dropout)?;
        let c = g.relu(c)?;
        conv_sum = Some(match conv_sum {
            None => c,
            Some(acc) => g.add(acc, c)?,
        });
    }
    let conv = g.reshape(conv_sum.expect("three branches"), &[b, n, m])?;
    let res2 = g.add(conv, vbar)?;
    let (gain2, bias2) = (
        g.param(store, &format!("{prefix}.ln2.gain"))?,
        g.param(store, &format!("{prefix}.ln2.bias"))?,
    );
    let output = g.layer_norm(res2, gain2, bias2)?;
    Ok(BlockOutput {
        output,
        temporal_weights: temporal.weights,
        channel_weights: channel.weights,
    })
}
