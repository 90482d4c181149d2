use crate::numerics::Tensor;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate of `max_rel_error` (or of the first NaN).
    pub worst_index: Option<usize>,
    pub compared: usize,
    /// Coordinates skipped because `f` has a kink inside `[x - h, x + h]`.
    pub excluded: usize,
    /// First coordinate where the analytic or numeric gradient was not finite.
    pub non_finite_at: Option<usize>,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = libm::fabs(analytic).max(libm::fabs(numeric)).max(1e-8);
    libm::fabs(analytic - numeric) / denom
}

// One-sided slopes that disagree by more than this are treated as a kink.
const KINK_REL: f64 = 1e-3;
const KINK_ABS: f64 = 1e-7;

/// Checks the gradient returned by `f` against central differences of its value.
///
/// `f` returns `(value, analytic gradient)`. A coordinate is excluded when its
/// forward and backward one-sided slopes disagree beyond what smooth curvature
/// explains, which is how relu kinks show up.
pub fn grad_check(
    f: impl Fn(&Tensor) -> (f64, Tensor),
    x: &Tensor,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let (f0, analytic) = f(x);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        compared: 0,
        excluded: 0,
        non_finite_at: None,
        pass: false,
    };
    if !f0.is_finite() {
        report.non_finite_at = Some(0);
        return report;
    }
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe).0;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe).0;
        probe.data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite_at = Some(i);
            report.worst_index = Some(i);
            return report;
        }
        let fwd = (up - f0) / h;
        let bwd = (f0 - down) / h;
        if libm::fabs(fwd - bwd) > KINK_REL * libm::fabs(fwd).max(libm::fabs(bwd)) + KINK_ABS {
            report.excluded += 1;
            continue;
        }
        report.compared += 1;
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst_index = Some(i);
        }
    }
    report.pass = report.max_rel_error <= tol;
    report
}
