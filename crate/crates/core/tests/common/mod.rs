#![allow(dead_code)]

use overparam_core::netcore::init_theorem;
use overparam_core::seeding::rng_from_seed;
use overparam_core::{Activation, Dataset, Matrix, ShallowNet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn sphere(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut x = gaussian(rng, n, d);
    for i in 0..n {
        let r = x.row_mut(i);
        let s = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= s);
    }
    x
}

pub fn dataset(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let x = sphere(&mut rng, n, d);
    let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Dataset::new(x, y).unwrap()
}

pub fn random_net(rng: &mut ChaCha8Rng, k: usize, d: usize, act: Activation) -> ShallowNet {
    let w = gaussian(rng, k, d);
    let v = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    ShallowNet::new(w, v, act).unwrap()
}

pub fn theorem_net(seed: u64, n: usize, d: usize, k: usize, act: Activation) -> (Dataset, ShallowNet) {
    let data = dataset(seed, n, d);
    let net = init_theorem(k, d, act, &data, seed ^ 0xA5A5).unwrap();
    (data, net)
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Matrix {
    gaussian(rng, n, rank).gram_rows()
}

pub fn to_na(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values from nalgebra, descending.
pub fn oracle_singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Symmetric eigenvalues from nalgebra, ascending.
pub fn oracle_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut e: Vec<f64> = nalgebra::SymmetricEigen::new(to_na(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    e
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
