//! Random instances for the randomized inequality checks.
//!
//! This is test infrastructure: the generators aim for variety (sparse and dense
//! supports, rank-deficient PSD blocks, mixed scales), not for any particular law.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::NetworkTopology;

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Symmetric positive weights on a random connected support with positive diagonal.
fn random_support<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // random spanning tree keeps the support connected
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        let child = order[k];
        let v = rng.random_range(0.1..1.0);
        w[(parent, child)] = v;
        w[(child, parent)] = v;
    }
    let density: f64 = rng.random();
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] == 0.0 && rng.random::<f64>() < density {
                let v = rng.random_range(0.1..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        w[(i, i)] = rng.random_range(0.1..1.0);
    }
    w
}

/// Scales a symmetric nonnegative matrix with positive diagonal to a symmetric doubly
/// stochastic one, `D W D`, by symmetric Sinkhorn iterations `d <- sqrt(d / (W d))`.
pub fn symmetric_sinkhorn(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut d = vec![1.0; n];
    for _ in 0..10_000 {
        let wd: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[(i, j)] * d[j]).sum()).collect();
        let worst = (0..n).map(|i| (d[i] * wd[i] - 1.0).abs()).fold(0.0, f64::max);
        if worst < 1e-15 {
            break;
        }
        for i in 0..n {
            d[i] = (d[i] / wd[i]).sqrt();
        }
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = d[i] * w[(i, j)] * d[j];
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    // the diagonal absorbs the remaining rounding so rows sum to one
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    a
}

/// A random validated topology on `n` nodes.
pub fn random_topology<R: Rng + ?Sized>(n: usize, rng: &mut R) -> NetworkTopology {
    loop {
        let a = symmetric_sinkhorn(&random_support(n, rng));
        if let Ok(t) = NetworkTopology::new(a) {
            return t;
        }
    }
}

/// `X^T X` with `X` of random rank between 1 and `m`, at a random scale.
pub fn random_psd<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let rank = rng.random_range(1..=m);
    let x = gaussian_matrix(rank, m, rng);
    let scale = 10f64.powf(rng.random_range(-1.0..2.0));
    let mut q = x.transpose() * x * scale;
    super::symmetrize(&mut q);
    q
}

/// A random well-conditioned SPD matrix at a random scale.
pub fn random_spd<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let x = gaussian_matrix(m, m, rng);
    let shift = rng.random_range(0.05..1.0);
    let scale = 10f64.powf(rng.random_range(-1.0..2.0));
    let mut q = (x.transpose() * x / m as f64 + DMatrix::identity(m, m) * shift) * scale;
    super::symmetrize(&mut q);
    q
}

/// Random convex weights of length `k`.
pub fn random_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    w
}

/// Dense gaussian matrix, exposed for the inversion-lemma draws.
pub fn random_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    gaussian_matrix(rows, cols, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_topologies_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 3, 5, 8] {
            for _ in 0..20 {
                let t = random_topology(n, &mut rng);
                assert_eq!(t.n(), n);
                assert!(t.a_min() > 0.0);
            }
        }
    }

    #[test]
    fn simplex_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..6 {
            let w = random_simplex(k, &mut rng);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn random_psd_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let q = random_psd(3, &mut rng);
            assert!(super::super::lambda_min(&q) >= -1e-10 * super::super::scale_of(&q));
        }
    }
}
