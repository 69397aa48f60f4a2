use crate::model::ModelParams;

/// Central differences at `h = 1e-5` on sampled coordinates.
pub fn max_rel_error(
    params: &ModelParams,
    f: &dyn Fn(&ModelParams) -> f64,
    grad: &ModelParams,
    coords: &[usize],
) -> f64 {
    let h = 1e-5;
    coords
        .iter()
        .map(|&i| {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = grad.as_slice()[i];
            (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}
