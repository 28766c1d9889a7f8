#![allow(dead_code)]

use mixmiss_core::{CovStructure, MixtureParams};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `A Aᵀ + ridge I` with uniform entries in A.
pub fn random_pd<R: Rng>(rng: &mut R, p: usize, ridge: f64) -> Array2<f64> {
    let a = Array2::from_shape_fn((p, p), |_| rng.random_range(-1.0..1.0));
    let mut s = a.dot(&a.t());
    for k in 0..p {
        s[[k, k]] += ridge;
    }
    s
}

pub fn random_params<R: Rng>(rng: &mut R, g: usize, p: usize, structure: CovStructure) -> MixtureParams<f64> {
    let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w = Array1::from(raw.iter().map(|v| v / total).collect::<Vec<_>>());
    // renormalise against rounding
    let s = w.sum();
    w.mapv_inplace(|v| v / s);
    let means = Array2::from_shape_fn((g, p), |_| rng.random_range(-3.0..3.0));
    let covs = (0..structure.n_matrices(g)).map(|_| random_pd(rng, p, 0.3)).collect();
    MixtureParams::new(w, means, covs, structure).unwrap()
}

/// Gauss-Jordan inverse and determinant, no factorisation shared with the crate.
pub fn dense_inverse(m: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = Array2::<f64>::eye(n);
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        if piv != c {
            for k in 0..n {
                a.swap([c, k], [piv, k]);
                inv.swap([c, k], [piv, k]);
            }
            det = -det;
        }
        let d = a[[c, c]];
        det *= d;
        for k in 0..n {
            a[[c, k]] /= d;
            inv[[c, k]] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[[r, c]];
                for k in 0..n {
                    a[[r, k]] -= f * a[[c, k]];
                    inv[[r, k]] -= f * inv[[c, k]];
                }
            }
        }
    }
    (inv, det)
}

pub fn naive_log_density(y: &[f64], mean: &[f64], cov: &Array2<f64>) -> f64 {
    let p = y.len();
    let (inv, det) = dense_inverse(cov);
    let r: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut quad = 0.0;
    for i in 0..p {
        for j in 0..p {
            quad += r[i] * inv[[i, j]] * r[j];
        }
    }
    -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
