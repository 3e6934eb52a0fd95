//! Dense linear algebra kernels shared by the spectral and analysis stages.
//!
//! All routines are deterministic: no pivoting heuristics depend on memory
//! layout or threading, so equal inputs give bit-identical outputs. Problem
//! sizes in this crate are small (graphs over at most a few hundred features),
//! so cyclic Jacobi methods are fast enough and give high relative accuracy.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues in ascending order with eigenvectors as the matching
/// columns of an orthogonal matrix. Fails if the input is not square, not
/// symmetric to `1e-8`, or does not converge.
pub fn jacobi_eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigh needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("eigh of empty matrix".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * (1.0 + a[[i, j]].abs()) {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let mut m = a.clone();
    // Work on the exactly symmetric average so rotations stay consistent.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let mut v = Array2::<f64>::eye(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        let diag: f64 = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off.sqrt() <= 1e-14 * (diag.sqrt() + 1.0) {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                if apq.abs() <= 1e-300 + 1e-17 * (app.abs() + aqq.abs()) {
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, dst]] = v[[k, src]];
        }
    }
    Ok((eigenvalues, vectors))
}

/// Singular values of a rectangular matrix, descending, via one-sided Jacobi.
///
/// Works on the transpose when that has fewer columns; column-pair rotations
/// orthogonalize the working matrix and the singular values are the final
/// column norms.
pub fn singular_values(a: &Array2<f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::EmptyInput("SVD of empty matrix".into()));
    }
    let mut w = if a.ncols() > a.nrows() {
        a.t().to_owned()
    } else {
        a.clone()
    };
    let (m, n) = (w.nrows(), w.ncols());

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for k in 0..m {
                    app += w[[k, p]] * w[[k, p]];
                    aqq += w[[k, q]] * w[[k, q]];
                    apq += w[[k, p]] * w[[k, q]];
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let wkp = w[[k, p]];
                    let wkq = w[[k, q]];
                    w[[k, p]] = c * wkp - s * wkq;
                    w[[k, q]] = s * wkp + c * wkq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_SWEEPS));
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| {
            let mut s = 0.0;
            for k in 0..m {
                s += w[[k, j]] * w[[k, j]];
            }
            s.sqrt()
        })
        .collect();
    sigma.sort_by(|x, y| y.total_cmp(x));
    Ok(sigma)
}

/// Matrix exponential by scaling-and-squaring with a Taylor series.
pub fn matrix_exp(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix_exp needs a square matrix");
    let norm = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = a / 2f64.powi(s as i32);

    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=40 {
        term = term.dot(&b) / k as f64;
        result = &result + &term;
        let tnorm: f64 = term.iter().map(|x| x * x).sum::<f64>().sqrt();
        if tnorm < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = result.dot(&result);
    }
    result
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of a vector.
pub fn norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &Array2<f64>) -> Result<f64> {
    Ok(singular_values(a)?[0])
}
