//! Naive reference implementations. These are written directly from the
//! formulas with explicit index loops and do not call into the library's
//! computational paths.

#![allow(dead_code)]

use std::collections::BTreeSet;

use crow_core::{FeatureTensor, NormOrder};

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1e-300);
    a == b || (a - b).abs() / scale <= tol || (a - b).abs() <= tol * 1e-12
}

fn at(t: &FeatureTensor, k: usize, i: usize, j: usize) -> f32 {
    t.data()[k * t.width() * t.height() + i * t.height() + j]
}

/// Quadruple-loop pooling; returns `(out_w, out_h, values)`.
pub fn pool(
    t: &FeatureTensor,
    w: usize,
    h: usize,
    s: usize,
    max: bool,
) -> (usize, usize, Vec<f64>) {
    let ow = (t.width() - w) / s + 1;
    let oh = (t.height() - h) / s + 1;
    let mut out = vec![0.0; t.channels() * ow * oh];
    for k in 0..t.channels() {
        for oi in 0..ow {
            for oj in 0..oh {
                let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
                for di in 0..w {
                    for dj in 0..h {
                        let v = at(t, k, oi * s + di, oj * s + dj) as f64;
                        if max {
                            if v > acc {
                                acc = v;
                            }
                        } else {
                            acc += v;
                        }
                    }
                }
                out[(k * ow + oi) * oh + oj] = acc;
            }
        }
    }
    (ow, oh, out)
}

fn norm_of(values: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::L1 => {
            let mut s = 0.0;
            for v in values {
                s += v.abs();
            }
            s
        }
        NormOrder::L2 => {
            let mut s = 0.0;
            for v in values {
                s += v.abs().powf(2.0);
            }
            s.powf(0.5)
        }
        NormOrder::Inf => {
            let mut m = 0.0f64;
            for v in values {
                if v.abs() > m {
                    m = v.abs();
                }
            }
            m
        }
        NormOrder::Half => {
            let mut s = 0.0;
            for v in values {
                s += v.abs().powf(0.5);
            }
            s.powf(2.0)
        }
    }
}

/// Spatial weight map, `i`-major.
pub fn spatial(t: &FeatureTensor, order: NormOrder, b: f64) -> Vec<f64> {
    let mut summed = vec![0.0; t.width() * t.height()];
    for i in 0..t.width() {
        for j in 0..t.height() {
            let mut s = 0.0;
            for k in 0..t.channels() {
                s += at(t, k, i, j) as f64;
            }
            summed[i * t.height() + j] = s;
        }
    }
    let denom = norm_of(&summed, order);
    summed
        .iter()
        .map(|&s| {
            if denom == 0.0 {
                0.0
            } else {
                (s / denom).powf(1.0 / b)
            }
        })
        .collect()
}

pub fn occupancy(t: &FeatureTensor) -> Vec<f64> {
    let mut q = Vec::new();
    for k in 0..t.channels() {
        let mut count = 0usize;
        for i in 0..t.width() {
            for j in 0..t.height() {
                if at(t, k, i, j) > 1e-12 {
                    count += 1;
                }
            }
        }
        q.push(count as f64 / (t.width() * t.height()) as f64);
    }
    q
}

pub fn idf_weights(t: &FeatureTensor, eps: f64) -> Vec<f64> {
    let q = occupancy(t);
    let k = q.len() as f64;
    let mut total = 0.0;
    for v in &q {
        total += v;
    }
    q.iter()
        .map(|qk| ((k * eps + total) / (eps + qk)).ln())
        .collect()
}

/// Weighted tensor, rounded to f32 as stored.
pub fn weighted(t: &FeatureTensor, alpha: &[f64], beta: &[f64]) -> Vec<f32> {
    let mut out = vec![0.0f32; t.data().len()];
    for k in 0..t.channels() {
        for i in 0..t.width() {
            for j in 0..t.height() {
                let x = at(t, k, i, j) as f64;
                out[(k * t.width() + i) * t.height() + j] =
                    (alpha[i * t.height() + j] * beta[k] * x) as f32;
            }
        }
    }
    out
}

pub fn channel_sums(t: &FeatureTensor) -> Vec<f64> {
    let mut f = Vec::new();
    for k in 0..t.channels() {
        let mut s = 0.0;
        for i in 0..t.width() {
            for j in 0..t.height() {
                s += at(t, k, i, j) as f64;
            }
        }
        f.push(s);
    }
    f
}

pub fn gaussian(width: usize, height: usize, frac: f64) -> Vec<f64> {
    let sigma = frac * width.min(height) as f64;
    let g = |d: f64| (-(d * d) / (2.0 * sigma * sigma)).exp();
    let mut out = Vec::new();
    for i in 0..width {
        for j in 0..height {
            out.push(
                g(i as f64 - (width - 1) as f64 / 2.0) * g(j as f64 - (height - 1) as f64 / 2.0),
            );
        }
    }
    out
}

/// Average precision from the positions of positives in the junk-free
/// ranking: each hit at rank r (1-based, i-th positive) contributes
/// `(prec(r-1) + i/r) / 2 / P` with `prec(0) = 1`.
pub fn ap_oracle(ranking: &[String], good: &BTreeSet<String>, junk: &BTreeSet<String>) -> f64 {
    let filtered: Vec<&String> = ranking.iter().filter(|id| !junk.contains(*id)).collect();
    let p = good.len() as f64;
    let mut total = 0.0;
    let mut found = 0.0;
    for (pos, id) in filtered.iter().enumerate() {
        if good.contains(*id) {
            let r = (pos + 1) as f64;
            let prev = if pos == 0 { 1.0 } else { found / (r - 1.0) };
            found += 1.0;
            total += (prev + found / r) / 2.0;
        }
    }
    total / p
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major).
/// Returns eigenvalues and eigenvectors (as rows), sorted by descending
/// eigenvalue.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|i| (a[i * n + i], (0..n).map(|k| v[k * n + i]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = pairs.into_iter().map(|p| p.1).collect();
    (values, vectors)
}

/// Sample covariance with the N-1 denominator, row-major.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let k = rows[0].len();
    let mut mean = vec![0.0; k];
    for r in rows {
        for c in 0..k {
            mean[c] += r[c] / n as f64;
        }
    }
    let mut cov = vec![0.0; k * k];
    for r in rows {
        for a in 0..k {
            for b in 0..k {
                cov[a * k + b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n as f64 - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Full ranking by brute force: sort (score desc, insertion asc).
pub fn brute_ranking(vectors: &[Vec<f64>], q: &[f64]) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut s = 0.0;
            for d in 0..v.len() {
                s += v[d] * q[d];
            }
            (i, s)
        })
        .collect();
    // insertion sort keeps it obviously stable
    for a in 1..scored.len() {
        let mut b = a;
        while b > 0 && scored[b - 1].1 < scored[b].1 {
            scored.swap(b - 1, b);
            b -= 1;
        }
    }
    scored.into_iter().map(|(i, _)| i).collect()
}

pub fn unit_vector(values: Vec<f64>) -> Vec<f64> {
    let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.into_iter().map(|v| v / n).collect()
}
