use log::warn;

use super::tape::{LinearMap, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::CgConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TapeCgStats {
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// Conjugate gradients for `system x = rhs` with every iterate recorded on
/// the tape, so gradients are exact for the computed (truncated) solution.
/// Stopping decisions are taken on values and are not differentiated.
pub fn cg_on_tape(tape: &mut Tape, system: &LinearMap, rhs: Var, cfg: &CgConfig) -> Result<(Var, TapeCgStats)> {
    let b_norm = tape.value(rhs).norm_sqr().sqrt();
    if b_norm == 0.0 {
        let x = tape.scale(rhs, 0.0)?;
        return Ok((x, TapeCgStats { iterations: 0, converged: true, relative_residual: 0.0 }));
    }
    let mut x = tape.scale(rhs, 0.0)?;
    let mut r = rhs;
    let mut p = rhs;
    let mut rs = tape.dot(r, r)?;
    let mut stats = TapeCgStats { iterations: 0, converged: false, relative_residual: 1.0 };
    for _ in 0..cfg.max_iter {
        let ap = tape.linear(p, system.clone())?;
        let pap = tape.dot(p, ap)?;
        if !(tape.value(pap).item() > 0.0) {
            return Err(Error::Numerical(format!(
                "conjugate gradients broke down: <p, Ap> = {}",
                tape.value(pap).item()
            )));
        }
        let alpha = tape.div(rs, pap)?;
        x = tape.add_scaled(x, alpha, p)?;
        r = tape.sub_scaled(r, alpha, ap)?;
        let rs_new = tape.dot(r, r)?;
        stats.iterations += 1;
        stats.relative_residual = tape.value(rs_new).item().sqrt() / b_norm;
        if stats.relative_residual <= cfg.tol {
            stats.converged = true;
            break;
        }
        let beta = tape.div(rs_new, rs)?;
        p = tape.add_scaled(r, beta, p)?;
        rs = rs_new;
    }
    if !stats.converged {
        warn!(
            "recorded CG stopped at relative residual {:.3e} after {} iterations",
            stats.relative_residual, stats.iterations
        );
    }
    Ok((x, stats))
}
