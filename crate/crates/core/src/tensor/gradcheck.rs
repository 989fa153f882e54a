use super::{Result, Tape, Tensor, TensorError, Var};

/// Denominator floor for relative errors, so entries whose true gradient is
/// near zero are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Flat index where the worst error occurred.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub passed: bool,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares `analytic[i]` with the central difference of `eval` at `point`
/// for every `i` in `indices`. Non-finite evaluations fail the report.
pub fn central_difference_check<F>(
    mut eval: F,
    point: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let mut probe = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        passed: true,
    };
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&probe);
        probe[i] = orig - h;
        let minus = eval(&probe);
        probe[i] = orig;
        report.checked += 1;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            report.passed = false;
            report.max_rel_error = f64::INFINITY;
            report.worst_index = Some(i);
            continue;
        };
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if !err.is_finite() || !analytic[i].is_finite() {
            report.passed = false;
            report.max_rel_error = f64::INFINITY;
            report.worst_index = Some(i);
            continue;
        }
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report.passed &= report.max_rel_error <= tol;
    report
}

/// Checks the tape gradient of the scalar `f(x)` at `point` against central
/// differences with step `h`, over every element of `point`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(TensorError::Domain {
            op: "grad_check",
            reason: format!("step {h} outside [1e-6, 1e-3]"),
        });
    }
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).is_finite() {
        return Ok(GradCheckReport {
            max_rel_error: f64::INFINITY,
            worst_index: None,
            checked: 0,
            passed: false,
        });
    }
    tape.backward(y)?;
    let analytic = tape.grad_tensor(x).into_data();
    let shape = point.shape().to_vec();
    let eval = |p: &[f64]| {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(shape.clone(), p.to_vec()).ok()?);
        let y = f(&mut t, x).ok()?;
        let v = t.value(y).item();
        v.is_finite().then_some(v)
    };
    let indices: Vec<usize> = (0..point.len()).collect();
    Ok(central_difference_check(
        eval,
        point.data(),
        &analytic,
        &indices,
        h,
        tol,
    ))
}
