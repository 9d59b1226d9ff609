//! Central finite-difference gradient checking.
//!
//! The checker only ever calls a scalar forward closure, so it stays
//! independent of any backward rule it is used to verify.
//!
//! Piecewise-smooth ops (relu, max reductions) have fold points where the
//! central difference straddles two slopes and stops being a derivative at
//! all; graphs with structurally identical nodes sit exactly on such ties.
//! A correct subgradient implementation returns one side's slope there, so
//! an entry passes if the analytic value matches the central difference or
//! either one-sided difference.

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Default relative tolerance.
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute floor below which differences are ignored.
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Central difference of `f` w.r.t. `x[i]`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Numerical gradient of `f` at `x`, entry by entry.
pub fn numerical_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len()).map(|i| central_diff(f, x, i, h)).collect()
}

/// Relative error with an absolute floor: differences below the floor pass
/// regardless of scale.
pub fn rel_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(abs_floor)
}

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol
    }
}

/// Error of one entry: the best agreement among the central and the two
/// one-sided differences, refining the step when a fold point sits inside
/// the probe interval. `f0` is `f(x)`, computed once by the caller.
fn entry_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    f0: f64,
    i: usize,
    analytic: f64,
    h: f64,
    abs_floor: f64,
) -> (f64, f64) {
    let mut best: Option<(f64, f64)> = None;
    let mut prev_sided: Option<(f64, f64)> = None;
    for step in [h, h / 10.0, h / 100.0, h / 1000.0] {
        let mut xp = x.to_vec();
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        let central = (fp - fm) / (2.0 * step);
        let err_central = rel_error(analytic, central, abs_floor);
        if err_central < 1e-6 {
            return (err_central, central);
        }
        let right = (fp - f0) / step;
        let left = (f0 - fm) / step;
        let mut candidates = vec![central, right, left];
        // Richardson extrapolation across consecutive rungs (step ratio 10)
        // cancels the O(step) truncation of the one-sided differences,
        // which converge slowly near high-curvature fold points.
        if let Some((pr, pl)) = prev_sided {
            candidates.push((10.0 * right - pr) / 9.0);
            candidates.push((10.0 * left - pl) / 9.0);
        }
        prev_sided = Some((right, left));
        for candidate in candidates {
            let err = rel_error(analytic, candidate, abs_floor);
            if best.is_none() || err < best.unwrap().0 {
                best = Some((err, candidate));
            }
        }
    }
    best.expect("at least one step evaluated")
}

/// Compares `analytic` with the finite-difference gradient of `f` at `x`.
pub fn compare(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    abs_floor: f64,
) -> GradCheck {
    let entries: Vec<usize> = (0..x.len()).collect();
    compare_sampled(f, x, analytic, &entries, h, abs_floor)
}

/// Like [`compare`], but probes only the listed entries. Full sweeps over a
/// whole model are quadratic in parameter count; sampling keeps the check
/// affordable without changing what it verifies.
pub fn compare_sampled(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    entries: &[usize],
    h: f64,
    abs_floor: f64,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let f0 = f(x);
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for &i in entries {
        let (err, num) = entry_error(f, x, f0, i, analytic[i], h, abs_floor);
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic_at_worst: analytic[i],
                numeric_at_worst: num,
            };
        }
    }
    worst
}
