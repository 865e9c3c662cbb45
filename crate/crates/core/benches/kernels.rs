//! Throughput of the data-parallel kernels.
//!
//! Each benchmark runs under the build's default scheduling (`rayon` or
//! `sequential`, depending on the `parallel` feature). In a `rayon` build the
//! same work is also timed inside a one-thread pool, which is the sequential
//! baseline without recompiling. Compare the two builds directly with
//!
//! ```text
//! cargo bench -p behaveformer --bench kernels -- --save-baseline rayon
//! cargo bench -p behaveformer --bench kernels --no-default-features -- --baseline rayon
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use behaveformer::evaluation::run_protocol;
use behaveformer::model::{BehaveFormer, BehaveFormerConfig, ModelInput, StdatConfig};
use behaveformer::numerics::kernels::{conv2d, matmul, ConvGeom};
use behaveformer::numerics::{uniform, Tensor};
use behaveformer::parallel;

fn mode() -> &'static str {
    if parallel::enabled() {
        "rayon"
    } else {
        "sequential"
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, 1.0)
}

/// Runs `f` under the default scheduler and, in a rayon build, in a
/// single-thread pool as well.
fn compare<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_function(BenchmarkId::from_parameter(mode()), |b| b.iter(&f));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::from_parameter("one-thread"), |b| b.iter(|| pool.install(&f)));
    }
    g.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let (batch, m, k, n) = (64, 50, 64, 64);
    let a = random(&[batch, m, k], 1);
    let w = random(&[k, n], 2);
    compare(c, "matmul_64x50x64x64", || {
        black_box(matmul(a.data(), w.data(), batch, m, k, n, true));
    });
}

fn bench_conv(c: &mut Criterion) {
    let geom = ConvGeom {
        batch: 32,
        c_in: 1,
        c_out: 4,
        height: 50,
        width: 10,
        kernel: 5,
    };
    let x = random(&[geom.batch, 1, geom.height, geom.width], 3);
    let w = random(&[geom.c_out, 1, 5, 5], 4);
    let bias = vec![0.0; geom.c_out];
    compare(c, "conv2d_k5", || {
        black_box(conv2d(x.data(), w.data(), &bias, geom));
    });
}

fn bench_embed(c: &mut Criterion) {
    let mut cfg = BehaveFormerConfig::keystroke_only(StdatConfig::keystroke_aalto(50));
    cfg.keystroke.blocks = 1;
    let model = BehaveFormer::new(cfg, 0).unwrap();
    let inputs: Vec<ModelInput> = (0..32)
        .map(|i| ModelInput {
            keystroke: random(&[50, 10], 10 + i),
            imu: None,
        })
        .collect();
    compare(c, "embed_32_windows", || {
        black_box(model.embed(&inputs).unwrap());
    });
}

fn bench_protocol(c: &mut Criterion) {
    let users = 40;
    let per_user = 20;
    let embeddings: Vec<Vec<f64>> = (0..users * per_user)
        .map(|i| random(&[64], 100 + i as u64).data().to_vec())
        .collect();
    let labels: Vec<String> = (0..users * per_user).map(|i| format!("u{}", i / per_user)).collect();
    let sessions = vec!["s".to_string(); labels.len()];
    let times: Vec<f64> = (0..labels.len()).map(|i| (i % per_user) as f64).collect();
    compare(c, "protocol_40_users", || {
        black_box(run_protocol(&embeddings, &labels, &sessions, &times, 5).unwrap());
    });
}

criterion_group!(benches, bench_matmul, bench_conv, bench_embed, bench_protocol);
criterion_main!(benches);
