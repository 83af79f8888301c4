//! Reference computations used as test oracles. Each one is written from the
//! defining formulas, without calling into the library's numerical routines.

#![allow(dead_code)]

pub mod checks;

use infotuple::{ItemId, Triplet};
use nalgebra::DMatrix;

/// Triplet probability straight from its definition.
pub fn triplet_prob_ref(d2_closer: f64, d2_farther: f64, mu: f64) -> f64 {
    (d2_farther + mu) / (d2_closer + d2_farther + 2.0 * mu)
}

/// Summed triplet log-loss of a raw matrix, with `D²_ab = K_aa − K_ab − K_ba + K_bb`.
pub fn raw_loss(k: &DMatrix<f64>, triplets: &[Triplet], mu: f64) -> f64 {
    let d2 = |a: ItemId, b: ItemId| k[(a.0, a.0)] - k[(a.0, b.0)] - k[(b.0, a.0)] + k[(b.0, b.0)];
    triplets
        .iter()
        .map(|t| -triplet_prob_ref(d2(t.head, t.closer), d2(t.head, t.farther), mu).ln())
        .sum()
}

/// Central finite difference of [`raw_loss`] in entry `(i, j)` alone.
pub fn fd_entry(
    k: &DMatrix<f64>,
    triplets: &[Triplet],
    mu: f64,
    i: usize,
    j: usize,
    h: f64,
) -> f64 {
    let mut plus = k.clone();
    plus[(i, j)] += h;
    let mut minus = k.clone();
    minus[(i, j)] -= h;
    (raw_loss(&plus, triplets, mu) - raw_loss(&minus, triplets, mu)) / (2.0 * h)
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns eigenvalues and eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Positive part of a symmetric matrix through [`jacobi_eigen`].
fn psd_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = jacobi_eigen(a);
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (i, &l) in vals.iter().enumerate() {
        if l > 0.0 {
            let v = vecs.column(i);
            out += v * v.transpose() * l;
        }
    }
    out
}

/// Nearest unit-diagonal PSD matrix by exact cyclic coordinate minimization of
/// the dual `θ(u) = ½‖(G + Diag u)₊‖² − Σu`. Each coordinate's partial
/// derivative `((G + Diag u)₊)_ii − 1` is nondecreasing in `u_i`, so every
/// coordinate step is a bisection on its sign.
pub fn projection_oracle(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let at = |u: &[f64]| {
        let mut m = g.clone();
        for i in 0..n {
            m[(i, i)] += u[i];
        }
        psd_part(&m)
    };
    let mut u = vec![0.0; n];
    for _sweep in 0..20_000 {
        let x = at(&u);
        if (0..n).all(|i| (x[(i, i)] - 1.0).abs() < 1e-13) {
            return x;
        }
        for i in 0..n {
            let partial = |ui: f64, u: &mut Vec<f64>| {
                let old = u[i];
                u[i] = ui;
                let v = at(u)[(i, i)] - 1.0;
                u[i] = old;
                v
            };
            let (mut lo, mut hi) = (u[i] - 1.0, u[i] + 1.0);
            while partial(lo, &mut u) > 0.0 {
                lo -= 2.0 * (hi - lo);
            }
            while partial(hi, &mut u) < 0.0 {
                hi += 2.0 * (hi - lo);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if partial(mid, &mut u) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            u[i] = 0.5 * (lo + hi);
        }
    }
    at(&u)
}

/// Gauss-Hermite nodes and weights for `∫ e^{−x²} f(x) dx`, by Newton iteration
/// on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Mutual information for a two-item body whose distances are independent
/// `N(m₁, σ²)` and `N(m₂, σ²)`, by tensor Gauss-Hermite quadrature.
pub fn triplet_mi_quadrature(m1: f64, m2: f64, sigma2: f64, mu: f64, nodes: usize) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    let s = (2.0 * sigma2).sqrt();
    let norm = std::f64::consts::PI;
    let mut mean_p = 0.0;
    let mut mean_h = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        for (xj, wj) in x.iter().zip(&w) {
            let d1 = m1 + s * xi;
            let d2 = m2 + s * xj;
            let p = triplet_prob_ref(d1 * d1, d2 * d2, mu);
            let weight = wi * wj / norm;
            mean_p += weight * p;
            mean_h += weight * binary_entropy(p);
        }
    }
    binary_entropy(mean_p) - mean_h
}

/// Probability of a full ranking under the adjacent-pair product model,
/// normalized by enumerating every permutation.
pub fn brute_force_pmf(d2: &[f64], mu: f64) -> Vec<(Vec<usize>, f64)> {
    let perms = permutations(d2.len());
    let weight = |p: &[usize]| -> f64 {
        p.windows(2)
            .map(|w| triplet_prob_ref(d2[w[0]], d2[w[1]], mu))
            .product()
    };
    let total: f64 = perms.iter().map(|p| weight(p)).sum();
    perms
        .into_iter()
        .map(|p| {
            let w = weight(&p) / total;
            (p, w)
        })
        .collect()
}

/// All permutations of `0..n` by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}
