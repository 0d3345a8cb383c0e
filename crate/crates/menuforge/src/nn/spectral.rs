//! Spectral normalization via power iteration.
//!
//! Training divides every weight matrix by its estimated largest singular
//! value after each optimizer step, keeping sigma_max at 1. Estimates use
//! persistent left/right vectors so a few iterations per step suffice;
//! standalone calls start from a deterministic uniform vector.

use crate::scalar::Real;
use ndarray::{Array1, Array2};

/// Iterations used when normalizing during training.
pub const POWER_ITERS: usize = 50;

/// One power-iteration sweep updating (u, v) in place; returns the current
/// sigma_max estimate u^T W v. A zero matrix yields 0 and leaves u, v alone.
pub fn power_iterate<R: Real>(
    w: &Array2<R>,
    u: &mut Array1<R>,
    v: &mut Array1<R>,
    iters: usize,
) -> R {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return R::zero();
    }
    let tiny = R::real(1e-300);
    for _ in 0..iters {
        let mut vn = w.t().dot(u);
        let vnorm = l2(&vn);
        if vnorm <= tiny {
            return R::zero();
        }
        vn /= vnorm;
        let mut un = w.dot(&vn);
        let unorm = l2(&un);
        if unorm <= tiny {
            return R::zero();
        }
        un /= unorm;
        *v = vn;
        *u = un;
    }
    u.dot(&w.dot(v))
}

fn l2<R: Real>(x: &Array1<R>) -> R {
    x.iter().map(|&a| a * a).sum::<R>().sqrt()
}

/// Divides `weights` by the power-iteration estimate of sigma_max.
/// Returns the normalized matrix and the estimate; a zero matrix is
/// returned unchanged with estimate 0.
pub fn spectral_normalize<R: Real>(weights: &Array2<R>, iters: usize) -> (Array2<R>, R) {
    assert!(iters >= 1);
    let (rows, cols) = weights.dim();
    if rows == 0 || cols == 0 || weights.iter().all(|&x| x == R::zero()) {
        return (weights.clone(), R::zero());
    }
    let mut u = Array1::from_elem(rows, R::one() / R::real((rows as f64).sqrt()));
    let mut v = Array1::from_elem(cols, R::one() / R::real((cols as f64).sqrt()));
    let sigma = power_iterate(weights, &mut u, &mut v, iters);
    if sigma <= R::zero() {
        return (weights.clone(), R::zero());
    }
    (weights / sigma, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Largest singular value by Jacobi eigenvalue iteration on W^T W;
    /// independent of the power-iteration path.
    fn svd_sigma_max(w: &Array2<f64>) -> f64 {
        let a = w.t().dot(w);
        let n = a.nrows();
        let mut a = a.into_raw_vec_and_offset().0;
        let idx = |r: usize, c: usize| r * n + c;
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[idx(p, q)].abs();
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[idx(p, q)];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a[idx(p, p)];
                    let aqq = a[idx(q, q)];
                    let theta = 0.5 * (aqq - app) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[idx(k, p)];
                        let akq = a[idx(k, q)];
                        a[idx(k, p)] = c * akp - s * akq;
                        a[idx(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[idx(p, k)];
                        let aqk = a[idx(q, k)];
                        a[idx(p, k)] = c * apk - s * aqk;
                        a[idx(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut lam: f64 = 0.0;
        for i in 0..n {
            lam = lam.max(a[idx(i, i)]);
        }
        lam.sqrt()
    }

    #[test]
    fn diagonal_matrix_normalizes_exactly() {
        let w = array![[2.0f64, 0.0], [0.0, 1.0]];
        let (nw, sigma) = spectral_normalize(&w, 100);
        let _: f64 = sigma;
        assert!((sigma - 2.0).abs() < 1e-9);
        assert!((nw[[0, 0]] - 1.0).abs() < 1e-9);
        assert!((nw[[1, 1]] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn orthonormal_matrix_unchanged() {
        let th = 0.7f64;
        let w = array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let (nw, sigma) = spectral_normalize(&w, 200);
        assert!((sigma - 1.0).abs() < 1e-9);
        for (a, b) in nw.iter().zip(w.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_matrix_flagged() {
        let w = Array2::<f64>::zeros((3, 2));
        let (nw, sigma) = spectral_normalize(&w, 10);
        assert_eq!(sigma, 0.0);
        assert_eq!(nw, w);
    }

    #[test]
    fn random_matrices_match_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = Array2::from_shape_fn((5, 5), |_| rng.gen_range(-1.0..1.0));
            let (_, sigma) = spectral_normalize(&w, 200);
            let truth = svd_sigma_max(&w);
            let rel = (sigma - truth).abs() / truth.max(1e-12);
            assert!(rel < 1e-6, "sigma {sigma} vs svd {truth}");
        }
    }

    #[test]
    fn renormalized_sigma_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let w = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0f64..1.0));
            let (nw, _) = spectral_normalize(&w, 200);
            let (_, sigma) = spectral_normalize(&nw, 200);
            assert!((sigma - 1.0).abs() < 1e-5, "sigma {sigma}");
        }
    }

    #[test]
    fn rectangular_shapes_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = Array2::from_shape_fn((2, 7), |_| rng.gen_range(-1.0..1.0));
        let (_, sigma) = spectral_normalize(&w, 200);
        let truth = svd_sigma_max(&w);
        assert!((sigma - truth).abs() / truth < 1e-6);
    }
}
