//! Slice-level kernels behind the graph primitives.
//!
//! Matrices are row-major. Batched variants loop over a leading batch
//! dimension; rows of the output are distributed by [`crate::parallel`].

use crate::parallel;

/// `out[m×n] = a[m×k] · b[k×n]` for each of `batch` problems.
///
/// `b_shared` means `b` is a single `k×n` matrix used for every batch item.
pub fn matmul(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize, b_shared: bool) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    parallel::for_each_chunk(&mut out, n, |row, dst| {
        let bi = row / m;
        let a_row = &a[row * k..(row + 1) * k];
        let b_mat = if b_shared { b } else { &b[bi * k * n..(bi + 1) * k * n] };
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b_mat[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(b_row) {
                *d += av * bv;
            }
        }
    });
    out
}

/// `out[m×k] = g[m×n] · b[k×n]ᵀ` for each batch item (gradient w.r.t. the left operand).
pub fn matmul_nt(g: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize, b_shared: bool) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * k];
    parallel::for_each_chunk(&mut out, k, |row, dst| {
        let bi = row / m;
        let g_row = &g[row * n..(row + 1) * n];
        let b_mat = if b_shared { b } else { &b[bi * k * n..(bi + 1) * k * n] };
        for (p, d) in dst.iter_mut().enumerate() {
            let b_row = &b_mat[p * n..(p + 1) * n];
            *d = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `out[k×n] = a[m×k]ᵀ · g[m×n]` per batch item (gradient w.r.t. the right operand).
///
/// When `shared` is set the per-item products are summed into one `k×n` result.
pub fn matmul_tn(a: &[f64], g: &[f64], batch: usize, m: usize, k: usize, n: usize, shared: bool) -> Vec<f64> {
    let per_item = |bi: usize, dst: &mut [f64]| {
        let a_mat = &a[bi * m * k..(bi + 1) * m * k];
        let g_mat = &g[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let g_row = &g_mat[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a_mat[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let d_row = &mut dst[p * n..(p + 1) * n];
                for (d, &gv) in d_row.iter_mut().zip(g_row) {
                    *d += av * gv;
                }
            }
        }
    };
    if shared {
        // Row p of the result only reads column p of `a`, so rows are independent.
        let mut out = vec![0.0; k * n];
        parallel::for_each_chunk(&mut out, n, |p, dst| {
            for bi in 0..batch {
                let a_mat = &a[bi * m * k..(bi + 1) * m * k];
                let g_mat = &g[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    let av = a_mat[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (d, &gv) in dst.iter_mut().zip(&g_mat[i * n..(i + 1) * n]) {
                        *d += av * gv;
                    }
                }
            }
        });
        out
    } else {
        let mut out = vec![0.0; batch * k * n];
        parallel::for_each_chunk(&mut out, k * n, |bi, dst| per_item(bi, dst));
        out
    }
}

/// Geometry of a same-padded, stride-1 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Same-padded convolution (cross-correlation, as in common DL frameworks).
/// `x: [B, Cin, H, W]`, `w: [Cout, Cin, k, k]`, `bias: [Cout]`.
pub fn conv2d(x: &[f64], w: &[f64], bias: &[f64], g: ConvGeom) -> Vec<f64> {
    let plane = g.plane();
    let (h, wd, k, pad) = (g.height as isize, g.width as isize, g.kernel, g.pad());
    let mut out = vec![0.0; g.batch * g.c_out * plane];
    parallel::for_each_chunk(&mut out, plane, |idx, dst| {
        let (b, co) = (idx / g.c_out, idx % g.c_out);
        dst.fill(bias[co]);
        for ci in 0..g.c_in {
            let src = &x[(b * g.c_in + ci) * plane..(b * g.c_in + ci + 1) * plane];
            let ker = &w[(co * g.c_in + ci) * k * k..(co * g.c_in + ci + 1) * k * k];
            for (ki, kr) in ker.chunks(k).enumerate() {
                let di = ki as isize - pad;
                for (kj, &kv) in kr.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let dj = kj as isize - pad;
                    for i in 0..h {
                        let si = i + di;
                        if si < 0 || si >= h {
                            continue;
                        }
                        let j0 = (-dj).max(0);
                        let j1 = (wd - dj).min(wd);
                        let drow = &mut dst[(i * wd) as usize..((i + 1) * wd) as usize];
                        let srow = &src[(si * wd) as usize..((si + 1) * wd) as usize];
                        for j in j0..j1 {
                            drow[j as usize] += kv * srow[(j + dj) as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias.
pub fn conv2d_backward(x: &[f64], w: &[f64], grad: &[f64], g: ConvGeom) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = g.plane();
    let (h, wd, k, pad) = (g.height as isize, g.width as isize, g.kernel, g.pad());

    let mut dx = vec![0.0; x.len()];
    parallel::for_each_chunk(&mut dx, plane, |idx, dst| {
        let (b, ci) = (idx / g.c_in, idx % g.c_in);
        for co in 0..g.c_out {
            let gsrc = &grad[(b * g.c_out + co) * plane..(b * g.c_out + co + 1) * plane];
            let ker = &w[(co * g.c_in + ci) * k * k..(co * g.c_in + ci + 1) * k * k];
            for (ki, kr) in ker.chunks(k).enumerate() {
                let di = ki as isize - pad;
                for (kj, &kv) in kr.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let dj = kj as isize - pad;
                    // out[i][j] += kv * x[i+di][j+dj]  =>  dx[si][sj] += kv * g[si-di][sj-dj]
                    for i in 0..h {
                        let si = i + di;
                        if si < 0 || si >= h {
                            continue;
                        }
                        let j0 = (-dj).max(0);
                        let j1 = (wd - dj).min(wd);
                        for j in j0..j1 {
                            dst[(si * wd + j + dj) as usize] += kv * gsrc[(i * wd + j) as usize];
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; w.len()];
    parallel::for_each_chunk(&mut dw, k * k, |idx, dst| {
        let (co, ci) = (idx / g.c_in, idx % g.c_in);
        for b in 0..g.batch {
            let src = &x[(b * g.c_in + ci) * plane..(b * g.c_in + ci + 1) * plane];
            let gsrc = &grad[(b * g.c_out + co) * plane..(b * g.c_out + co + 1) * plane];
            for ki in 0..k {
                let di = ki as isize - pad;
                for kj in 0..k {
                    let dj = kj as isize - pad;
                    let mut acc = 0.0;
                    for i in 0..h {
                        let si = i + di;
                        if si < 0 || si >= h {
                            continue;
                        }
                        let j0 = (-dj).max(0);
                        let j1 = (wd - dj).min(wd);
                        for j in j0..j1 {
                            acc += gsrc[(i * wd + j) as usize] * src[(si * wd + j + dj) as usize];
                        }
                    }
                    dst[ki * k + kj] += acc;
                }
            }
        }
    });

    let mut db = vec![0.0; g.c_out];
    for b in 0..g.batch {
        for (co, d) in db.iter_mut().enumerate() {
            *d += grad[(b * g.c_out + co) * plane..(b * g.c_out + co + 1) * plane].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

/// Splits `shape` around `axis` into `(outer, extent, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Naive DFT magnitude, used as an oracle in tests.
#[cfg(test)]
pub fn dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a: Vec<f64> = (0..2 * 3 * 4).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..4 * 5).map(|v| (v as f64 * 0.11).cos()).collect();
        let got = matmul(&a, &b, 2, 3, 4, 5, true);
        for bi in 0..2 {
            let want = naive(&a[bi * 12..(bi + 1) * 12], &b, 3, 4, 5);
            for (g, w) in got[bi * 15..(bi + 1) * 15].iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_center_cell_is_neighbourhood_sum() {
        // 4x4 input, 3x3 all-ones kernel: interior output = 3x3 neighbourhood sum.
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let w = vec![1.0; 9];
        let geom = ConvGeom {
            batch: 1,
            c_in: 1,
            c_out: 1,
            height: 4,
            width: 4,
            kernel: 3,
        };
        let y = conv2d(&x, &w, &[0.0], geom);
        // cell (1,1): rows 0..3, cols 0..3 -> 0+1+2+4+5+6+8+9+10 = 45
        assert_eq!(y[5], 45.0);
        // cell (2,2): 5+6+7+9+10+11+13+14+15 = 90
        assert_eq!(y[10], 90.0);
        // corner (0,0) sees only 0,1,4,5
        assert_eq!(y[0], 10.0);
    }
}
