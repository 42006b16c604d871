/// Compares `analytic` with central differences of `f` around `x0`.
///
/// Returns the largest entrywise deviation divided by the largest
/// finite-difference magnitude, so entries that are tiny relative to the
/// rest of the gradient do not dominate the measure.
pub fn central_difference_error(analytic: &[f64], x0: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(analytic.len(), x0.len(), "gradient and point differ in length");
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..x.len() {
        x[i] = x0[i] + h;
        let up = f(&x);
        x[i] = x0[i] - h;
        let down = f(&x);
        x[i] = x0[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs());
        scale = scale.max(fd.abs());
    }
    if scale == 0.0 {
        return if worst == 0.0 { 0.0 } else { f64::INFINITY };
    }
    worst / scale
}
