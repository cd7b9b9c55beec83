//! Independent oracles the integration tests check the library against.
//!
//! Everything here recomputes a quantity through a route the library does
//! not use: the halfspace projection by iterative descent instead of the
//! closed form, similarity through centered kernel matrices instead of
//! cross-covariance norms, the spectrum by power iteration, aggregation
//! by a naive double loop. Agreement between routes is the evidence the
//! closed forms are right.
//!
//! Shared between test targets, each of which uses its own subset.
#![allow(dead_code)]

use std::collections::BTreeMap;

use incofl::{ClientId, GroupSpec, LayerKey, Tensor};

/// Minimizes ‖g − gk‖² subject to ⟨g, g0⟩ ≥ 0 by projected gradient
/// descent. The objective is 1-strongly convex with a 2-Lipschitz
/// gradient, so a 0.25 step contracts the error by half every iteration
/// and 400 iterations push it far below the comparison tolerance.
pub fn qp_halfspace_oracle(g0: &[f64], gk: &[f64], iterations: usize) -> Vec<f64> {
    let alpha: f64 = g0.iter().map(|v| v * v).sum();
    assert!(alpha > 0.0, "oracle needs a nonzero anchor");
    let mut g = gk.to_vec();
    for _ in 0..iterations {
        for (gi, ki) in g.iter_mut().zip(gk) {
            *gi -= 0.25 * 2.0 * (*gi - ki);
        }
        let dot: f64 = g.iter().zip(g0).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            let scale = dot / alpha;
            for (gi, ai) in g.iter_mut().zip(g0) {
                *gi -= scale * ai;
            }
        }
    }
    g
}

fn centered_gram(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
        }
    }
    // H K H with H = I − 11ᵀ/n, written out as row and column centering.
    let row_means: Vec<f64> = k.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let total_mean = row_means.iter().sum::<f64>() / n as f64;
    let mut centered = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            centered[i][j] = k[i][j] - row_means[i] - row_means[j] + total_mean;
        }
    }
    centered
}

fn hsic(k: &[Vec<f64>], l: &[Vec<f64>]) -> f64 {
    let n = k.len();
    let mut trace = 0.0;
    for i in 0..n {
        for j in 0..n {
            trace += k[i][j] * l[j][i];
        }
    }
    trace / ((n - 1) as f64 * (n - 1) as f64)
}

/// Linear-kernel similarity computed from centered Gram matrices:
/// HSIC(K,L) / sqrt(HSIC(K,K) · HSIC(L,L)). The library computes the
/// same quantity from feature cross-covariances, which never forms an
/// n × n matrix; the kernel route is the independent check.
pub fn hsic_cka_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    assert_eq!(x.len(), y.len());
    let k = centered_gram(x);
    let l = centered_gram(y);
    let cross = hsic(&k, &l);
    let kk = hsic(&k, &k);
    let ll = hsic(&l, &l);
    cross / (kk * ll).sqrt()
}

/// Random orthogonal matrix, as Gram-Schmidt on Gaussian draws. Retries
/// the whole draw on near-dependence, which at these dimensions is
/// practically unreachable.
pub fn random_orthogonal<R: rand::Rng>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    'attempt: loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut row: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            for previous in &basis {
                let overlap: f64 = row.iter().zip(previous).map(|(a, b)| a * b).sum();
                for (r, p) in row.iter_mut().zip(previous) {
                    *r -= overlap * p;
                }
            }
            let length: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if length < 1e-8 {
                continue 'attempt;
            }
            for r in &mut row {
                *r /= length;
            }
            basis.push(row);
        }
        return basis;
    }
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix by
/// power iteration with a deterministic start.
pub fn power_iteration_sym(a: &[Vec<f64>], iterations: usize) -> f64 {
    let n = a.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sin() * 0.1).collect();
    let mut eigenvalue = 0.0;
    for _ in 0..iterations {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[i] += a[i][j] * v[j];
            }
        }
        let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 0.0, "power iteration collapsed to zero");
        for x in &mut next {
            *x /= norm;
        }
        eigenvalue = norm;
        v = next;
    }
    eigenvalue
}

/// Layer-wise mean by explicit double loop over layers and clients. The
/// membership question is answered straight from the ownership rule on
/// each group spec, never from a precomputed plan, and the mean uses the
/// same sum-then-reciprocal arithmetic as the library so the comparison
/// can demand bitwise equality.
pub fn naive_mean_aggregate(
    groups: &[GroupSpec],
    stages: usize,
    contributions: &BTreeMap<ClientId, BTreeMap<LayerKey, Tensor>>,
) -> BTreeMap<LayerKey, Tensor> {
    let max_depth = |stage: usize| {
        groups
            .iter()
            .map(|g| g.depth_per_stage[stage])
            .max()
            .unwrap_or(0)
    };
    let mut result = BTreeMap::new();
    for stage in 0..stages {
        for index in 0..max_depth(stage) {
            let key = LayerKey::new(stage, index);
            let mut members: Vec<ClientId> = groups
                .iter()
                .filter(|g| g.owns(key))
                .flat_map(|g| g.client_ids.iter().copied())
                .collect();
            members.sort_unstable();
            if members.is_empty() {
                continue;
            }
            let mut sum: Option<Vec<f64>> = None;
            let mut shape: Vec<usize> = Vec::new();
            for client in &members {
                let tensor = &contributions[client][&key];
                match &mut sum {
                    None => {
                        shape = tensor.shape().to_vec();
                        sum = Some(tensor.values().to_vec());
                    }
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(tensor.values()) {
                            *a += v;
                        }
                    }
                }
            }
            let reciprocal = 1.0 / members.len() as f64;
            let mean: Vec<f64> = sum.unwrap().iter().map(|v| v * reciprocal).collect();
            result.insert(key, Tensor::new(shape, mean).expect("finite means"));
        }
    }
    result
}
