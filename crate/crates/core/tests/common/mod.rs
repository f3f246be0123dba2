//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use rand::Rng;

/// Random labelled tree on `n` vertices: each vertex after the first hangs
/// off a uniformly chosen earlier vertex, then labels are shuffled.
pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut labels: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }
    (1..n).map(|v| (labels[rng.gen_range(0..v)], labels[v])).collect()
}

/// All-pairs shortest path lengths by Floyd–Warshall.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    const INF: usize = usize::MAX / 4;
    let mut d = vec![INF; n * n];
    for i in 0..n {
        d[i * n + i] = 0;
    }
    for &(a, b) in edges {
        d[a * n + b] = 1;
        d[b * n + a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d
}

/// Scalar-loop attention `z_i = Σ_j softmax_j(q_i·k_j / √d) v_j`.
pub fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut z = vec![0.0; n * d];
    for i in 0..n {
        let mut e = vec![0.0; n];
        for j in 0..n {
            let mut dot = 0.0;
            for c in 0..d {
                dot += q[i * d + c] * k[j * d + c];
            }
            e[j] = dot / (d as f64).sqrt();
        }
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in e.iter_mut() {
            *x = (*x - m).exp();
            total += *x;
        }
        for j in 0..n {
            for c in 0..d {
                z[i * d + c] += e[j] / total * v[j * d + c];
            }
        }
    }
    z
}

/// Apply `s·R·p + t` to every joint of a sample-major `[.., 3]` pose.
pub fn similarity(pose: &[f64], s: f64, r: &[[f64; 3]; 3], t: [f64; 3]) -> Vec<f64> {
    pose.chunks(3)
        .flat_map(|p| {
            (0..3).map(move |i| s * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + t[i])
        })
        .collect()
}

/// Rotation from Euler angles about z, y, x.
pub fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
    mat(mat(rz, ry), rx)
}

fn mat(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Fraction of errors strictly below the threshold, by counting.
pub fn pck_oracle(errors: &[f64], threshold: f64) -> f64 {
    let mut hits = 0usize;
    for &e in errors {
        if e < threshold {
            hits += 1;
        }
    }
    hits as f64 / errors.len() as f64
}

/// Mean of PCK over thresholds 5, 10, ..., 150 mm.
pub fn auc_oracle(errors: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    let mut t = 5;
    while t <= 150 {
        total += pck_oracle(errors, t as f64);
        count += 1;
        t += 5;
    }
    total / count as f64
}
