use log::debug;

use super::image::ComplexImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CgConfig {
    /// Relative residual `||Ax - b|| / ||b||` at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 100 }
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: ComplexImage,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    /// Recursively updated relative residual after each iteration.
    pub residual_history: Vec<f64>,
}

/// Conjugate gradients for a Hermitian positive definite `apply_system`.
///
/// Returns the best (last) iterate together with a convergence flag when
/// `max_iter` is exhausted.
pub fn cg_solve<F>(apply_system: F, rhs: &ComplexImage, cfg: &CgConfig) -> Result<CgOutcome>
where
    F: Fn(&ComplexImage) -> ComplexImage,
{
    let b_norm = rhs.norm();
    let zero = ComplexImage::from_raw(
        rhs.height(),
        rhs.width(),
        vec![Default::default(); rhs.len()],
    );
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: zero,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
            residual_history: Vec::new(),
        });
    }
    if !b_norm.is_finite() {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }

    let mut x = zero;
    let mut r = rhs.clone();
    let mut p = rhs.clone();
    let mut rs = r.norm_sqr();
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let ap = apply_system(&p);
        let pap = p.dot(&ap).re;
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate gradients broke down: <p, Ap> = {pap}"
            )));
        }
        let alpha = rs / pap;
        x = x.axpy(alpha, &p);
        r = r.axpy(-alpha, &ap);
        let rs_new = r.norm_sqr();
        if !rs_new.is_finite() {
            return Err(Error::Numerical("non-finite residual in conjugate gradients".into()));
        }
        let rel = rs_new.sqrt() / b_norm;
        if let Some(&prev) = history.last() {
            if rel > prev * (1.0 + 10.0 * f64::EPSILON) {
                debug!("cg residual increased: {prev:.3e} -> {rel:.3e}");
            }
        }
        history.push(rel);
        if rel <= cfg.tol {
            converged = true;
            break;
        }
        p = r.axpy(rs_new / rs, &p);
        rs = rs_new;
    }

    let relative_residual = (&apply_system(&x) - rhs).norm() / b_norm;
    if !x.is_finite() {
        return Err(Error::Numerical("non-finite conjugate gradient iterate".into()));
    }
    Ok(CgOutcome {
        solution: x,
        iterations: history.len(),
        converged,
        relative_residual,
        residual_history: history,
    })
}
