use crate::math::Scalar;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference estimate of `∂f/∂params[i]`.
pub fn numeric_partial<T: Scalar, F: FnMut(&[T]) -> T>(f: &mut F, params: &[T], i: usize, h: T) -> T {
    let mut p = params.to_vec();
    let x = p[i];
    p[i] = x + h;
    let up = f(&p);
    p[i] = x - h;
    let down = f(&p);
    (up - down) / (h + h)
}

/// Largest relative error between `analytic` and central differences of `f`
/// over the probed coordinates:
/// `max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|)`.
pub fn finite_diff_check<T: Scalar, F: FnMut(&[T]) -> T>(
    mut f: F,
    params: &[T],
    analytic: &[T],
    probes: &[usize],
    h: T,
) -> T {
    let floor = T::lit(1e-8);
    probes
        .iter()
        .map(|&i| {
            let numeric = numeric_partial(&mut f, params, i, h);
            (analytic[i] - numeric).abs() / numeric.abs().max(floor)
        })
        .fold(T::zero(), |acc, e| if e > acc || e.is_nan() { e } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative_is_recovered() {
        let f = |p: &[f64]| p[0] * p[0];
        let err = finite_diff_check(f, &[3.0], &[6.0], &[0], FD_STEP);
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let f = |p: &[f64]| p[0] * p[1];
        let err = finite_diff_check(f, &[2.0, 5.0], &[5.0, 2.5], &[0, 1], FD_STEP);
        assert!((err - 0.25).abs() < 1e-6);
    }
}
