use super::{F64x2, ParamId, ParamSet, Tape, TensorError, Var};

/// Largest relative error between analytic gradients and central finite
/// differences `(f(x+eps) - f(x-eps)) / 2eps`, over every coordinate of every
/// parameter. Relative error is `|a-n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(params: &mut ParamSet<f64>, eps: f64, f: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |ps: &ParamSet<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new(ps);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        let id = ParamId(p);
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_default();
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + eps;
            let up = eval(params)?;
            params.get_mut(id).data_mut()[k] = orig - eps;
            let down = eval(params)?;
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.get(k).copied().unwrap_or(0.0);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Like [`grad_check`], but the finite differences are taken in
/// double-double arithmetic by `reference`, which must compute the same
/// function as `f`. Analytic gradients still come from the f64 tape.
///
/// In f64 the difference `f(x+eps) - f(x-eps)` is quantized to the spacing of
/// representable values near `f(x)`, so after dividing by `2eps = 2e-5` every
/// numeric derivative carries noise of about `|f| * 1e-11`. Coordinates whose
/// true gradient is smaller than roughly `|f| * 1e-7` then miss a relative
/// tolerance of `1e-4` however exact the analytic gradient is.
pub fn grad_check_wide<F, G>(params: &ParamSet<f64>, eps: f64, f: F, reference: G) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, TensorError>,
    G: Fn(&mut Tape<'_, F64x2>) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let mut wide: ParamSet<F64x2> = params.cast();
    let eval = |ps: &ParamSet<F64x2>| -> Result<F64x2, TensorError> {
        let mut tape = Tape::new(ps);
        let loss = reference(&mut tape)?;
        Ok(tape.scalar(loss))
    };
    let step = F64x2::from_f64(eps);
    let mut worst = 0.0f64;
    for p in 0..wide.len() {
        let id = ParamId(p);
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_default();
        for k in 0..wide.get(id).len() {
            let orig = wide.get(id).data()[k];
            wide.get_mut(id).data_mut()[k] = orig + step;
            let up = eval(&wide)?;
            wide.get_mut(id).data_mut()[k] = orig - step;
            let down = eval(&wide)?;
            wide.get_mut(id).data_mut()[k] = orig;
            let numeric = ((up - down) / (step + step)).as_f64();
            let a = grad.get(k).copied().unwrap_or(0.0);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
