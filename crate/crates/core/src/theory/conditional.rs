use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Result};
use crate::numerics::ComplexImage;

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return invalid(format!("time must lie in (0, 1], got {t}"));
    }
    Ok(())
}

/// `sigma(t)^2 - sigma(0)^2`.
pub fn added_variance(sched: &NoiseSchedule, t: f64) -> f64 {
    let s = sched.sigma_at(t);
    let l = sched.sigma_l();
    s * s - l * l
}

/// `d sigma(t)^2 / dt = 2 log(sigma_u / sigma_l) sigma(t)^2`.
pub fn variance_rate(sched: &NoiseSchedule, t: f64) -> f64 {
    let s = sched.sigma_at(t);
    2.0 * (sched.sigma_u() / sched.sigma_l()).ln() * s * s
}

/// KL divergence between the clean and perturbed conditionals at time `t`,
/// `||A^H delta||^2 / (2 (sigma(t)^2 - sigma(0)^2))`, for
/// `delta_img = A^H delta`.
pub fn kl_conditional(delta_img: &ComplexImage, sched: &NoiseSchedule, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(delta_img.norm_sqr() / (2.0 * added_variance(sched, t)))
}

/// Time derivative of [`kl_conditional`]:
/// `-||A^H delta||^2 sigma_l^2 log(sigma_u/sigma_l) (sigma_u/sigma_l)^(2t) / (sigma(t)^2 - sigma_l^2)^2`.
pub fn kl_conditional_derivative(delta_img: &ComplexImage, sched: &NoiseSchedule, t: f64) -> Result<f64> {
    check_time(t)?;
    let (l, u) = (sched.sigma_l(), sched.sigma_u());
    let r = u / l;
    let v = added_variance(sched, t);
    Ok(-delta_img.norm_sqr() * l * l * r.ln() * r.powf(2.0 * t) / (v * v))
}
