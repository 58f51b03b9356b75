//! Small 1-D numeric helpers shared by the solvers.

/// Golden-section maximization of `f` on `[lo, hi]`.
///
/// Returns the abscissa of the best point seen. Tolerant of plateaus and of
/// `f` returning `-inf` inside the interval; the bracket shrinks to `tol`.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    debug_assert!(lo <= hi);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while (b - a) > tol && iter < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iter += 1;
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

/// Bisection root refinement for a sign change of `g` on `[lo, hi]`.
///
/// `g(lo)` and `g(hi)` must have opposite signs. Refines until the interval
/// is shorter than `tol` and returns the midpoint.
pub(crate) fn bisect_root(g: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let mut a = lo;
    let mut b = hi;
    let mut ga = g(a);
    debug_assert!(ga * g(b) <= 0.0);
    for _ in 0..200 {
        if (b - a) < tol {
            break;
        }
        let mid = 0.5 * (a + b);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if ga * gm < 0.0 {
            b = mid;
        } else {
            a = mid;
            ga = gm;
        }
    }
    0.5 * (a + b)
}

/// Largest `x` in `[feasible, limit]` for which `pred(x)` holds, assuming the
/// feasible set is an interval containing `feasible`. Bisects the boundary to
/// absolute precision `tol`.
pub(crate) fn bisect_feasible_upper(
    pred: impl Fn(f64) -> bool,
    feasible: f64,
    limit: f64,
    tol: f64,
) -> f64 {
    if pred(limit) {
        return limit;
    }
    let mut lo = feasible;
    let mut hi = limit;
    while (hi - lo) > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Mirror of [`bisect_feasible_upper`] toward smaller values.
pub(crate) fn bisect_feasible_lower(
    pred: impl Fn(f64) -> bool,
    feasible: f64,
    limit: f64,
    tol: f64,
) -> f64 {
    if pred(limit) {
        return limit;
    }
    let mut lo = limit;
    let mut hi = feasible;
    while (hi - lo) > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
