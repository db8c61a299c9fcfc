//! Second generalised eigenpair of `(D - W) x = lambda D x`.
//!
//! Both solvers work on the symmetric normalised Laplacian
//! `L = I - D^{-1/2} W D^{-1/2}` and map its eigenvector `y` back through
//! `x = D^{-1/2} y`. Small graphs use a dense symmetric eigendecomposition;
//! larger ones factor `L + u u^T` once (the rank-one term lifts the trivial
//! eigenvector `u = D^{1/2} 1 / |D^{1/2} 1|` away from zero) and run
//! shift-inverted block power iteration with Rayleigh-Ritz extraction,
//! projecting `u` out of every iterate.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::affinity::AffinityMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOptions {
    /// Largest `n` solved densely.
    pub dense_limit: usize,
    pub max_iterations: usize,
    /// Target for the relative generalised residual of the iterative path.
    pub tolerance: f64,
    /// Block width of the iterative path.
    pub block: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            dense_limit: 1024,
            max_iterations: 10_000,
            tolerance: 1e-8,
            block: 8,
        }
    }
}

/// The second-smallest generalised eigenpair.
#[derive(Clone, Debug)]
pub struct Fiedler {
    pub value: f64,
    /// Unit 2-norm, largest-magnitude entry positive.
    pub vector: Vec<f64>,
    /// `|(D - W) x - lambda D x| / |x|`.
    pub residual: f64,
    pub iterations: usize,
}

pub fn ncut_second_eigvec(w: &AffinityMatrix) -> Result<Fiedler> {
    ncut_second_eigvec_with(w, &EigenOptions::default())
}

pub fn ncut_second_eigvec_with(w: &AffinityMatrix, opts: &EigenOptions) -> Result<Fiedler> {
    let n = w.n();
    if n < 2 {
        return Err(Error::param("affinity", "need at least two patches"));
    }
    let deg = w.degrees();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let lap = Mat::<f64>::from_fn(n, n, |i, j| {
        let a = inv_sqrt[i] * w.get(i, j) * inv_sqrt[j];
        if i == j {
            1.0 - a
        } else {
            -a
        }
    });

    let (value, y, iterations) = if n <= opts.dense_limit {
        let (v, y) = dense(&lap)?;
        (v, y, 0)
    } else {
        iterative(&lap, &deg, &inv_sqrt, opts)?
    };

    let mut x: Vec<f64> = y.iter().zip(&inv_sqrt).map(|(a, s)| a * s).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    let mut pivot = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[pivot].abs() {
            pivot = i;
        }
    }
    if x[pivot] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let residual = generalized_residual(w, &deg, &x, value);
    Ok(Fiedler {
        value,
        vector: x,
        residual,
        iterations,
    })
}

/// `|(D - W) x - lambda D x|_2 / |x|_2`.
pub fn generalized_residual(w: &AffinityMatrix, deg: &[f64], x: &[f64], lambda: f64) -> f64 {
    let n = w.n();
    let mut acc = 0.0;
    for i in 0..n {
        let wx: f64 = w.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        let r = deg[i] * x[i] - wx - lambda * deg[i] * x[i];
        acc += r * r;
    }
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    acc.sqrt() / xn
}

fn dense(lap: &Mat<f64>) -> Result<(f64, Vec<f64>)> {
    let eig = lap
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence {
            iterations: 0,
            residual: f64::NAN,
        })?;
    let value = eig.S()[1];
    let y = (0..lap.nrows()).map(|i| eig.U()[(i, 1)]).collect();
    Ok((value, y))
}

fn iterative(
    lap: &Mat<f64>,
    deg: &[f64],
    inv_sqrt: &[f64],
    opts: &EigenOptions,
) -> Result<(f64, Vec<f64>, usize)> {
    let n = lap.nrows();
    let b = opts.block.clamp(1, n - 1);
    let sqrt_deg: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
    let un = sqrt_deg.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = sqrt_deg.iter().map(|v| v / un).collect();

    let mut shift = 0.0;
    let factor = loop {
        let m = Mat::<f64>::from_fn(n, n, |i, j| {
            lap[(i, j)] + u[i] * u[j] + if i == j { shift } else { 0.0 }
        });
        match m.llt(Side::Lower) {
            Ok(f) => break f,
            Err(_) if shift < 1e-4 => shift = if shift == 0.0 { 1e-12 } else { shift * 100.0 },
            Err(_) => {
                return Err(Error::NoConvergence {
                    iterations: 0,
                    residual: f64::NAN,
                })
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut y = Mat::<f64>::from_fn(n, b, |_, _| rng.gen_range(-1.0..1.0));
    deflate_and_orthonormalize(&mut y, &u);

    let mut last_residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let mut z = factor.solve(&y);
        deflate_and_orthonormalize(&mut z, &u);
        let lz = lap * &z;
        let h = z.transpose() * &lz;
        let h = Mat::<f64>::from_fn(b, b, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
        let ritz = h.self_adjoint_eigen(Side::Lower).map_err(|_| Error::NoConvergence {
            iterations: it,
            residual: last_residual,
        })?;
        let v = ritz.U();
        y = &z * v;
        let ly = &lz * v;
        let theta = ritz.S()[0];

        // Residual of x = D^{-1/2} y in the generalised problem:
        // (D - W) x - theta D x = D^{1/2} (L y - theta y).
        let mut r2 = 0.0;
        let mut x2 = 0.0;
        for i in 0..n {
            let r = ly[(i, 0)] - theta * y[(i, 0)];
            r2 += deg[i] * r * r;
            let xi = inv_sqrt[i] * y[(i, 0)];
            x2 += xi * xi;
        }
        last_residual = (r2 / x2).sqrt();
        if last_residual <= opts.tolerance {
            let y0 = (0..n).map(|i| y[(i, 0)]).collect();
            return Ok((theta, y0, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: last_residual,
    })
}

/// Removes the `u` component from every column and orthonormalises the
/// block (modified Gram-Schmidt, two passes).
fn deflate_and_orthonormalize(y: &mut Mat<f64>, u: &[f64]) {
    let (n, b) = (y.nrows(), y.ncols());
    for _ in 0..2 {
        for j in 0..b {
            let c: f64 = (0..n).map(|i| u[i] * y[(i, j)]).sum();
            for i in 0..n {
                y[(i, j)] -= c * u[i];
            }
            for k in 0..j {
                let c: f64 = (0..n).map(|i| y[(i, k)] * y[(i, j)]).sum();
                for i in 0..n {
                    let yk = y[(i, k)];
                    y[(i, j)] -= c * yk;
                }
            }
            let norm = (0..n).map(|i| y[(i, j)] * y[(i, j)]).sum::<f64>().sqrt();
            if norm > 0.0 {
                for i in 0..n {
                    y[(i, j)] /= norm;
                }
            }
        }
    }
}
