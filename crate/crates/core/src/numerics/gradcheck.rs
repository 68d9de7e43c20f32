/// Central-difference check of an analytic gradient.
///
/// `f` returns the scalar value and its analytic gradient at the given point.
/// The result is `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn check_gradients<F>(mut f: F, x: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input length");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let (plus, _) = f(&probe);
        probe[i] = x[i] - h;
        let (minus, _) = f(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let err = check_gradients(
            |v| (v.iter().map(|a| a * a).sum(), v.iter().map(|a| 2.0 * a).collect()),
            &x,
            1e-4,
        );
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = check_gradients(|v| (v[0] * v[0], vec![v[0]]), &[1.0], 1e-4);
        assert!(err > 0.5);
    }
}
