/// Compare an analytic gradient against central finite differences.
///
/// `f` returns the scalar value and its analytic gradient at a point. The
/// result is the worst coordinate-wise error `|analytic - numeric|` divided
/// by `max(|analytic|, |numeric|, 1)`, so coordinates with tiny gradients are
/// judged on absolute error.
pub fn finite_diff_check<F, E>(f: F, point: &[f64], epsilon: f64) -> Result<f64, E>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let (_, analytic) = f(point)?;
    assert_eq!(analytic.len(), point.len(), "gradient length must match the point");
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + epsilon;
        let (plus, _) = f(&probe)?;
        probe[i] = point[i] - epsilon;
        let (minus, _) = f(&probe)?;
        probe[i] = point[i];
        let numeric = (plus - minus) / (2.0 * epsilon);
        let scale = analytic[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}
