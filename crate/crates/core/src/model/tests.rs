use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::gradcheck::{check_params, weighted_sum, DEFAULT_ATOL, DEFAULT_RTOL};
use crate::numerics::{uniform, Graph, Mode, ParamStore, Tensor};

fn tiny(n: usize, m: usize) -> StdatConfig {
    StdatConfig {
        seq_len: n,
        channels: m,
        gaussians: 2,
        blocks: 1,
        temporal_heads: 3,
        channel_heads: 2,
        hidden: 8,
        embed_dim: 64,
        dropout: 0.1,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn gre_single_gaussian_rows_equal_range_embedding() {
    let mut store = ParamStore::new();
    init_gre(&mut store, "g", 7, 4, 1, &mut rng(0)).unwrap();
    let mut g = Graph::new(Mode::Eval, 0);
    let (enc, w) = gaussian_range_encode(&mut g, &store, "g", 7).unwrap();
    assert!(g.value(w).data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    let b = store.get("g.range").unwrap().data().to_vec();
    for row in g.value(enc).rows() {
        assert_eq!(row, &b[..]);
    }
}

#[test]
fn gre_symmetric_pair_splits_center_evenly() {
    let mut store = ParamStore::new();
    init_gre(&mut store, "g", 5, 2, 2, &mut rng(0)).unwrap();
    store.set("g.mu", Tensor::vector(vec![1.0, 3.0])).unwrap();
    store.set("g.log_sigma", Tensor::vector(vec![0.4, 0.4])).unwrap();
    let mut g = Graph::new(Mode::Eval, 0);
    let (_, w) = gaussian_range_encode(&mut g, &store, "g", 5).unwrap();
    let center = g.value(w).row(2);
    assert!((center[0] - 0.5).abs() < 1e-15 && (center[1] - 0.5).abs() < 1e-15);
}

#[test]
fn gre_defaults_and_init() {
    assert_eq!(DEFAULT_GAUSSIANS, 20);
    let mut store = ParamStore::new();
    init_gre(&mut store, "g", 50, 10, 20, &mut rng(1)).unwrap();
    assert_eq!(store.get("g.mu").unwrap().data()[1], 2.5);
    assert!((store.get("g.log_sigma").unwrap().data()[0] - 2.5f64.ln()).abs() < 1e-15);
    assert!(store.get("g.range").unwrap().data().iter().all(|v| v.abs() <= 0.1));
}

#[test]
fn gre_weights_are_distributions_for_any_parameters() {
    let mut r = rng(2);
    for _ in 0..50 {
        let mut store = ParamStore::new();
        init_gre(&mut store, "g", 30, 3, 5, &mut r).unwrap();
        store.set("g.mu", uniform(&mut r, &[5], 60.0)).unwrap();
        store.set("g.log_sigma", uniform(&mut r, &[5], 6.0)).unwrap();
        let mut g = Graph::new(Mode::Eval, 0);
        let (_, w) = gaussian_range_encode(&mut g, &store, "g", 30).unwrap();
        for row in g.value(w).rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

fn attention_store(d: usize) -> ParamStore {
    let mut store = ParamStore::new();
    init_attention(&mut store, "a", d, &mut rng(3)).unwrap();
    store
}

#[test]
fn zero_query_key_gives_uniform_attention() {
    let d = 4;
    let mut store = attention_store(d);
    for p in ["wq", "wk"] {
        store.set(&format!("a.{p}"), Tensor::zeros(&[d, d])).unwrap();
    }
    for p in ["wv", "wo"] {
        store.set(&format!("a.{p}"), Tensor::identity(d)).unwrap();
    }
    let x = uniform(&mut rng(4), &[2, 5, d], 1.0);
    let mut g = Graph::new(Mode::Eval, 0);
    let xv = g.input(x.clone()).unwrap();
    let out = multi_head_self_attention(&mut g, &store, "a", xv, 2).unwrap();
    let y = g.value(out.output);
    for b in 0..2 {
        for j in 0..d {
            let mean: f64 = (0..5).map(|i| x.data()[(b * 5 + i) * d + j]).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((y.data()[(b * 5 + i) * d + j] - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let store = attention_store(6);
    let x = uniform(&mut rng(5), &[3, 7, 6], 2.0);
    let mut g = Graph::new(Mode::Eval, 0);
    let xv = g.input(x).unwrap();
    let out = multi_head_self_attention(&mut g, &store, "a", xv, 3).unwrap();
    assert_eq!(g.shape(out.weights), &[3, 3, 7, 7]);
    for row in g.value(out.weights).rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn single_row_attention_is_value_then_output_projection() {
    let d = 4;
    let mut store = attention_store(d);
    let mut r = rng(6);
    for p in ["bv", "bo"] {
        store.set(&format!("a.{p}"), uniform(&mut r, &[d], 1.0)).unwrap();
    }
    let x = uniform(&mut r, &[1, 1, d], 1.0);
    let mut g = Graph::new(Mode::Eval, 0);
    let xv = g.input(x.clone()).unwrap();
    let out = multi_head_self_attention(&mut g, &store, "a", xv, 2).unwrap();
    // By hand: v = x Wv + bv, y = v Wo + bo.
    let mat = |name: &str| store.get(name).unwrap().data().to_vec();
    let (wv, bv, wo, bo) = (mat("a.wv"), mat("a.bv"), mat("a.wo"), mat("a.bo"));
    let v: Vec<f64> = (0..d)
        .map(|j| bv[j] + (0..d).map(|i| x.data()[i] * wv[i * d + j]).sum::<f64>())
        .collect();
    let want: Vec<f64> = (0..d).map(|j| bo[j] + (0..d).map(|i| v[i] * wo[i * d + j]).sum::<f64>()).collect();
    for (a, b) in g.value(out.output).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_heads_must_divide_width() {
    let store = attention_store(6);
    let mut g = Graph::new(Mode::Eval, 0);
    let xv = g.input(Tensor::zeros(&[1, 2, 6])).unwrap();
    assert!(multi_head_self_attention(&mut g, &store, "a", xv, 4).is_err());
}

#[test]
fn preset_head_and_block_counts() {
    let a = StdatConfig::keystroke_aalto(50);
    assert_eq!((a.blocks, a.temporal_heads, a.channel_heads), (6, 5, 10));
    let h = StdatConfig::keystroke_hmog(50);
    assert_eq!((h.blocks, h.temporal_heads, h.channel_heads), (5, 5, 10));
    let u = StdatConfig::keystroke_humidb(50);
    assert_eq!((u.blocks, u.channels, u.temporal_heads, u.channel_heads), (5, 3, 3, 10));
    let i = StdatConfig::imu(36);
    assert_eq!((i.seq_len, i.blocks, i.temporal_heads, i.channel_heads), (100, 5, 6, 10));
    for c in [a, h, u, i, StdatConfig::imu(12), StdatConfig::imu(24)] {
        c.validate().unwrap();
        assert_eq!(c.embed_dim, 64);
        assert_eq!(c.gaussians, 20);
    }
    let mut bad = StdatConfig::keystroke_aalto(50);
    bad.temporal_heads = 3;
    assert!(bad.validate().is_err());
    bad = StdatConfig::keystroke_aalto(40);
    assert!(bad.validate().is_ok());
    bad = StdatConfig::keystroke_aalto(45);
    assert!(bad.validate().is_err());
}

#[test]
fn block_preserves_shape_for_dataset_configs() {
    for cfg in [
        StdatConfig::keystroke_aalto(50),
        StdatConfig::keystroke_humidb(50),
        StdatConfig::imu(36),
    ] {
        let mut store = ParamStore::new();
        init_block(&mut store, "b", &cfg, &mut rng(7)).unwrap();
        let mut g = Graph::new(Mode::Train, 0);
        let x = g.input(uniform(&mut rng(8), &[2, cfg.seq_len, cfg.channels], 1.0)).unwrap();
        let out = dual_attention_block(&mut g, &store, "b", x, &cfg).unwrap();
        assert_eq!(g.shape(out.output), &[2, cfg.seq_len, cfg.channels]);
    }
}

#[test]
fn zeroed_block_reduces_to_double_layer_norm() {
    let cfg = tiny(6, 3);
    let mut store = ParamStore::new();
    init_block(&mut store, "b", &cfg, &mut rng(9)).unwrap();
    let names: Vec<String> = store
        .entries()
        .iter()
        .filter(|e| e.name.contains("mha.w") || e.name.contains(".w") && e.name.contains("conv"))
        .map(|e| e.name.clone())
        .collect();
    for n in names {
        let shape = store.get(&n).unwrap().shape().to_vec();
        store.set(&n, Tensor::zeros(&shape)).unwrap();
    }
    let x = uniform(&mut rng(10), &[2, 6, 3], 1.0);
    let mut g = Graph::new(Mode::Train, 0);
    let xv = g.input(x.clone()).unwrap();
    let out = dual_attention_block(&mut g, &store, "b", xv, &cfg).unwrap();

    // Hand trace: attention outputs 0, conv branches 0 → BN(0) = 0 → ReLU 0.
    let ln = |rows: &[f64]| -> Vec<f64> {
        rows.chunks(3)
            .flat_map(|r| {
                let mean = r.iter().sum::<f64>() / 3.0;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
                r.iter().map(move |v| (v - mean) / (var + 1e-5).sqrt()).collect::<Vec<_>>()
            })
            .collect()
    };
    let want = ln(&ln(x.data()));
    for (a, b) in g.value(out.output).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn stdat_embedding_is_64_wide_and_deterministic() {
    let cfg = StdatConfig {
        blocks: 2,
        ..StdatConfig::keystroke_aalto(10)
    };
    let mut store = ParamStore::new();
    init_stdat(&mut store, "s", &cfg, &mut rng(11)).unwrap();
    let x = uniform(&mut rng(12), &[3, 10, 10], 1.0);
    let run = || {
        let mut g = Graph::new(Mode::Eval, 0);
        let xv = g.input(x.clone()).unwrap();
        let e = stdat_forward(&mut g, &store, "s", xv, &cfg).unwrap();
        g.value(e).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.shape(), &[3, 64]);
    assert_eq!(a.data(), b.data());

    let mut g = Graph::new(Mode::Eval, 0);
    let bad = g.input(Tensor::zeros(&[1, 9, 10])).unwrap();
    assert!(matches!(
        stdat_forward(&mut g, &store, "s", bad, &cfg),
        Err(ModelError::InputShape { .. })
    ));
}

#[test]
fn stdat_gradients_match_finite_differences() {
    let cfg = tiny(6, 3);
    let mut store = ParamStore::new();
    init_stdat(&mut store, "s", &cfg, &mut rng(13)).unwrap();
    let x = uniform(&mut rng(14), &[3, 6, 3], 1.0);
    let report = check_params(&store, Mode::Train, 5, DEFAULT_RTOL, DEFAULT_ATOL, |g, s| {
        let xv = g.input(x.clone())?;
        let e = stdat_forward(g, s, "s", xv, &cfg).map_err(|e| match e {
            ModelError::Numerics(n) => n,
            other => panic!("{other}"),
        })?;
        weighted_sum(g, e)
    })
    .unwrap();
    assert!(report.passed(), "max rel {:.3e} at {:?}", report.max_rel_error, report.worst);
    assert!(report.checked > 700);
}

#[test]
fn permuting_rows_changes_embedding() {
    let cfg = StdatConfig {
        blocks: 1,
        ..StdatConfig::keystroke_aalto(10)
    };
    let mut store = ParamStore::new();
    init_stdat(&mut store, "s", &cfg, &mut rng(15)).unwrap();
    let x = uniform(&mut rng(16), &[1, 10, 10], 1.0);
    let mut rows: Vec<Vec<f64>> = x.data().chunks(10).map(<[f64]>::to_vec).collect();
    rows.reverse();
    let xr = Tensor::new(vec![1, 10, 10], rows.concat()).unwrap();
    let embed = |t: &Tensor| {
        let mut g = Graph::new(Mode::Eval, 0);
        let v = g.input(t.clone()).unwrap();
        let e = stdat_forward(&mut g, &store, "s", v, &cfg).unwrap();
        g.value(e).clone()
    };
    assert!(embed(&x).max_abs_diff(&embed(&xr)) > 1e-6);
}

fn input(n: usize, m: usize, imu_m: Option<usize>, seed: u64) -> ModelInput {
    let mut r = rng(seed);
    ModelInput {
        keystroke: uniform(&mut r, &[n, m], 1.0),
        imu: imu_m.map(|c| uniform(&mut r, &[100, c], 1.0)),
    }
}

fn small_ks() -> StdatConfig {
    StdatConfig {
        blocks: 1,
        hidden: 16,
        ..StdatConfig::keystroke_hmog(10)
    }
}

fn small_imu(m: usize) -> StdatConfig {
    StdatConfig {
        blocks: 1,
        hidden: 16,
        ..StdatConfig::imu(m)
    }
}

#[test]
fn keystroke_only_model_equals_its_tower() {
    let model = BehaveFormer::new(BehaveFormerConfig::keystroke_only(small_ks()), 1).unwrap();
    let inp = input(10, 10, None, 2);
    let e = model.embed(std::slice::from_ref(&inp)).unwrap();
    let mut g = Graph::new(Mode::Eval, 0);
    let x = g.input(inp.keystroke.reshaped(&[1, 10, 10]).unwrap()).unwrap();
    let t = stdat_forward(&mut g, &model.params, "keystroke", x, &model.config.keystroke).unwrap();
    assert_eq!(e[0], g.value(t).data());
}

#[test]
fn dual_model_fuses_128_inputs() {
    let model = BehaveFormer::new(BehaveFormerConfig::dual(small_ks(), small_imu(12)), 1).unwrap();
    assert_eq!(model.params.get("fusion.w").unwrap().shape(), &[128, 64]);
    let inputs: Vec<ModelInput> = (0..3).map(|s| input(10, 10, Some(12), s)).collect();
    let e = model.embed(&inputs).unwrap();
    assert_eq!(e.len(), 3);
    assert!(e.iter().all(|r| r.len() == 64));
}

#[test]
fn modality_mismatch_is_an_error() {
    let ks = BehaveFormer::new(BehaveFormerConfig::keystroke_only(small_ks()), 1).unwrap();
    let dual = BehaveFormer::new(BehaveFormerConfig::dual(small_ks(), small_imu(12)), 1).unwrap();
    assert!(dual.embed(&[input(10, 10, None, 1)]).is_err());
    let mut g = Graph::new(Mode::Eval, 0);
    let xk = g.input(Tensor::zeros(&[1, 10, 10])).unwrap();
    let xi = g.input(Tensor::zeros(&[1, 100, 12])).unwrap();
    assert!(matches!(ks.forward(&mut g, xk, Some(xi)), Err(ModelError::Modality(_))));
}

#[test]
fn fusion_present_iff_imu_tower() {
    let ks = BehaveFormer::new(BehaveFormerConfig::keystroke_only(small_ks()), 1).unwrap();
    assert!(ks.params.get("fusion.w").is_none());
    assert!(ks.shape_table().iter().all(|(n, _)| n.starts_with("keystroke.")));
}

#[test]
fn from_params_checks_shape_table() {
    let ks = BehaveFormer::new(BehaveFormerConfig::keystroke_only(small_ks()), 1).unwrap();
    assert!(BehaveFormer::from_params(ks.config.clone(), ks.params.clone()).is_ok());
    let mut humidb = small_ks();
    humidb.channels = 3;
    humidb.temporal_heads = 3;
    assert!(BehaveFormer::from_params(BehaveFormerConfig::keystroke_only(humidb), ks.params).is_err());
}
