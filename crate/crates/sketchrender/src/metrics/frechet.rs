//! Fréchet distance between Gaussian feature summaries:
//! `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
//!
//! The matrix square root comes from an eigendecomposition of the
//! symmetric product `S_a^{1/2} S_b S_a^{1/2}` (same trace as
//! `(S_a S_b)^{1/2}` but numerically well behaved), computed by a cyclic
//! Jacobi sweep. Sampling noise can push small eigenvalues slightly
//! negative; those are clamped to zero, and so is the final result.

use crate::error::{Error, Result};

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix, by cyclic
/// Jacobi rotations. `a` is row-major `n x n` and is consumed as scratch.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix must be square");
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if n <= 1 {
        return (a, v);
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..64 {
        if off(&a) <= 1e-26 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // stable tangent of the rotation angle
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
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
    let eig = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; n * n];
    for i in 0..n {
        for k in 0..n {
            let av = a[i * n + k];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[k * n + j];
            }
        }
    }
    c
}

fn symmetrize(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }
    out
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (sampling noise) are clamped to zero.
fn sqrtm_psd(m: &[f64], n: usize) -> Vec<f64> {
    let (eig, v) = symmetric_eigen(symmetrize(m, n), n);
    // V diag(sqrt(max(e,0))) V^T
    let mut scaled = vec![0.0f64; n * n]; // V * diag
    for i in 0..n {
        for j in 0..n {
            scaled[i * n + j] = v[i * n + j] * eig[j].max(0.0).sqrt();
        }
    }
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += scaled[i * n + k] * v[j * n + k];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Fréchet distance between two Gaussians given as (mean, covariance).
/// Covariances are row-major `n x n`, symmetrized defensively on entry.
pub fn frechet_distance(
    mu_a: &[f64],
    cov_a: &[f64],
    mu_b: &[f64],
    cov_b: &[f64],
) -> Result<f64> {
    let n = mu_a.len();
    if mu_b.len() != n || cov_a.len() != n * n || cov_b.len() != n * n {
        return Err(Error::shape(
            "frechet",
            format!(
                "dimension mismatch: mu {} vs {}, cov {} vs {}",
                mu_a.len(),
                mu_b.len(),
                cov_a.len(),
                cov_b.len()
            ),
        ));
    }
    if n == 0 {
        return Err(Error::invalid("frechet", "empty feature vectors"));
    }
    for v in mu_a.iter().chain(mu_b).chain(cov_a).chain(cov_b) {
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "frechet" });
        }
    }
    let sa = symmetrize(cov_a, n);
    let sb = symmetrize(cov_b, n);
    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let trace = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let sa_half = sqrtm_psd(&sa, n);
    let inner = matmul_sq(&matmul_sq(&sa_half, &sb, n), &sa_half, n);
    let (eig, _) = symmetric_eigen(symmetrize(&inner, n), n);
    let tr_sqrt: f64 = eig.iter().map(|&e| e.max(0.0).sqrt()).sum();
    let d = mean_term + trace(&sa) + trace(&sb) - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::NonFinite { op: "frechet" });
    }
    Ok(d.max(0.0))
}
