use super::{AutodiffError, ParamSet, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    /// `max |analytic − numeric|`
    pub max_abs_error: f64,
    /// `max_abs_error / max(max |numeric|, 1e-8)`
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences with the given `step`. `f` runs on evaluation-mode tapes and
/// must be deterministic.
pub fn grad_check<F>(f: F, params: &ParamSet, step: f64, tolerance: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |ps: &ParamSet| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new(false, 0);
        let vars = ps.bind(&mut tape);
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new(false, 0);
    let vars = params.bind(&mut tape);
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut analytic = params.zeros_like();
    grads.accumulate_params(&mut analytic);

    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        let mut max_abs_error: f64 = 0.0;
        let mut max_numeric: f64 = 0.0;
        for j in 0..params.get(p).len() {
            let orig = params.get(p).data()[j];
            probe.get_mut(p).data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(p).data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(p).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            max_numeric = max_numeric.max(numeric.abs());
            max_abs_error = max_abs_error.max((numeric - grad.data()[j]).abs());
        }
        entries.push(GradCheckEntry {
            name: params.name(p).to_string(),
            max_abs_error,
            relative_error: max_abs_error / max_numeric.max(1e-8),
        });
    }
    let max_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    })
}
