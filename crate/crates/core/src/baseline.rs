//! Reference solvers for `ℒ_α x = y`: conjugate gradients, random walk with
//! restart, truncated power series, plus the quadratic objectives they
//! minimize.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::graph::{check_alpha, DegreeVector};
use crate::linalg::{axpy, dot, norm2, norm_inf};
use crate::ranking::ObservationVector;
use crate::sparse::SparseSymmetricMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// CG: `‖ℒ_α x − y‖ / ‖y‖`. RWR: `‖x⁽ᵗ⁾ − x⁽ᵗ⁻¹⁾‖∞`.
    pub residual_norm: f64,
    pub converged: bool,
    pub wall_time_secs: f64,
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "tolerance must be positive, got {tol}"
        )))
    }
}

/// `out = ℒ_α v = (v − α 𝒲 v) / β`.
fn apply_regularized(w_norm: &SparseSymmetricMatrix, alpha: f64, v: &[f64], out: &mut [f64]) {
    w_norm.matvec_into(v, out);
    let beta = 1.0 - alpha;
    for (o, &vi) in out.iter_mut().zip(v) {
        *o = (vi - alpha * *o) / beta;
    }
}

/// Plain conjugate gradients on `ℒ_α x = y`, starting from zero.
pub fn solve_cg(
    w_norm: &SparseSymmetricMatrix,
    y: &ObservationVector,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolverReport> {
    solve_cg_observed(w_norm, y, alpha, tol, max_iter, |_| {})
}

/// As [`solve_cg`], calling `observe` with every iterate.
pub fn solve_cg_observed(
    w_norm: &SparseSymmetricMatrix,
    y: &ObservationVector,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(&[f64]),
) -> Result<SolverReport> {
    check_alpha(alpha)?;
    check_tol(tol)?;
    let n = w_norm.n();
    Error::check_dim(n, y.len())?;
    let start = Instant::now();
    let b = y.to_dense();
    let b_norm = norm2(&b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(SolverReport {
            solution: x,
            iterations: 0,
            residual_norm: 0.0,
            converged: true,
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        apply_regularized(w_norm, alpha, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.is_nan() || pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate gradients broke down (pᵀAp = {pap})"
            )));
        }
        let step = rr / pap;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        iterations += 1;
        observe(&x);
        let rr_new = dot(&r, &r);
        rel = rr_new.sqrt() / b_norm;
        if rel <= tol {
            // Replace the recurrence residual with the true one.
            apply_regularized(w_norm, alpha, &x, &mut ap);
            for (ri, (&bi, &ai)) in r.iter_mut().zip(b.iter().zip(&ap)) {
                *ri = bi - ai;
            }
            let rr_true = dot(&r, &r);
            rel = rr_true.sqrt() / b_norm;
            if rel <= tol {
                break;
            }
            p.copy_from_slice(&r);
            rr = rr_true;
            continue;
        }
        let ratio = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + ratio * *pi;
        }
        rr = rr_new;
    }
    Ok(SolverReport {
        solution: x,
        iterations,
        residual_norm: rel,
        converged: rel <= tol,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// `x⁽ᵗ⁾ = α 𝒲 x⁽ᵗ⁻¹⁾ + (1 − α) y` from `x⁽⁰⁾ = y`, stopping once
/// `‖x⁽ᵗ⁾ − x⁽ᵗ⁻¹⁾‖∞ ≤ tol`.
pub fn iterate_rwr(
    w_norm: &SparseSymmetricMatrix,
    y: &ObservationVector,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolverReport> {
    check_alpha(alpha)?;
    check_tol(tol)?;
    let n = w_norm.n();
    Error::check_dim(n, y.len())?;
    let start = Instant::now();
    let b = y.to_dense();
    let beta = 1.0 - alpha;
    let mut x = b.clone();
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        w_norm.matvec_into(&x, &mut next);
        delta = 0.0;
        for ((nx, &bi), &xi) in next.iter_mut().zip(&b).zip(&x) {
            *nx = alpha * *nx + beta * bi;
            delta = f64::max(delta, (*nx - xi).abs());
        }
        std::mem::swap(&mut x, &mut next);
        iterations += 1;
        if delta <= tol {
            break;
        }
    }
    Ok(SolverReport {
        solution: x,
        iterations,
        residual_norm: delta,
        converged: delta <= tol,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// `β Σ_{t=0}^{T} (α 𝒲)^t y`.
pub fn truncated_series(
    w_norm: &SparseSymmetricMatrix,
    y: &ObservationVector,
    alpha: f64,
    terms: usize,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let beta = 1.0 - alpha;
    let mut c = beta;
    let coeffs: Vec<f64> = (0..=terms)
        .map(|_| {
            let v = c;
            c *= alpha;
            v
        })
        .collect();
    series_with_coefficients(w_norm, y, &coeffs)
}

/// `Σ_t c_t 𝒲^t y` for a general coefficient sequence.
pub fn series_with_coefficients(
    w_norm: &SparseSymmetricMatrix,
    y: &ObservationVector,
    coeffs: &[f64],
) -> Result<Vec<f64>> {
    let n = w_norm.n();
    Error::check_dim(n, y.len())?;
    let mut power = y.to_dense();
    let mut next = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for (t, &c) in coeffs.iter().enumerate() {
        if t > 0 {
            w_norm.matvec_into(&power, &mut next);
            std::mem::swap(&mut power, &mut next);
        }
        axpy(c, &power, &mut sum);
    }
    Ok(sum)
}

/// Number of terms after which the geometric tail `α^{T+1} / (1 − α)` of
/// [`truncated_series`] drops below `tol` (relative to `‖y‖∞`).
pub fn series_terms_for(alpha: f64, tol: f64) -> Result<usize> {
    check_alpha(alpha)?;
    check_tol(tol)?;
    if alpha == 0.0 {
        return Ok(0);
    }
    let t = ((tol * (1.0 - alpha)).ln() / alpha.ln()).ceil() - 1.0;
    Ok(t.max(0.0) as usize)
}

/// `f_α(x) = ½ xᵀ ℒ_α x − yᵀ x`.
pub fn energy(
    w_norm: &SparseSymmetricMatrix,
    x: &[f64],
    y: &ObservationVector,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let n = w_norm.n();
    Error::check_dim(n, x.len())?;
    Error::check_dim(n, y.len())?;
    let mut lx = vec![0.0; n];
    apply_regularized(w_norm, alpha, x, &mut lx);
    let yx: f64 = y.entries().iter().map(|&(i, v)| v * x[i]).sum();
    Ok(0.5 * dot(x, &lx) - yx)
}

/// `α Σ_{i<j} w_ij (x̂_i − x̂_j)² + (1 − α) ‖x − y‖²` with `x̂ = D^{-1/2} x`.
///
/// Each edge is counted once, which gives the pairwise term `xᵀℒx` and the
/// same minimizer as [`energy`] on graphs without isolated vertices.
pub fn smoothness_objective(
    w: &SparseSymmetricMatrix,
    d: &DegreeVector,
    x: &[f64],
    y: &ObservationVector,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let n = w.n();
    Error::check_dim(n, d.0.len())?;
    Error::check_dim(n, x.len())?;
    Error::check_dim(n, y.len())?;
    let xhat: Vec<f64> = x
        .iter()
        .zip(&d.0)
        .map(|(&xi, &di)| if di > 0.0 { xi / di.sqrt() } else { 0.0 })
        .collect();
    let mut pairwise = 0.0;
    for i in 0..n {
        for (j, wij) in w.row(i) {
            if j > i {
                let diff = xhat[i] - xhat[j];
                pairwise += wij * diff * diff;
            }
        }
    }
    let yd = y.to_dense();
    let fit: f64 = x.iter().zip(&yd).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(alpha * pairwise + (1.0 - alpha) * fit)
}

/// `‖a − b‖∞ / max(‖b‖∞, tiny)`.
pub fn relative_inf_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_inf(&diff) / norm_inf(b).max(f64::MIN_POSITIVE)
}
