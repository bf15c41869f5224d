//! Scalar minimization: a log-spaced scan to bracket the minimum, then
//! golden-section refinement in the log argument.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[a, b]`. Stops when the
/// bracket is narrower than `tol`. Returns the best point seen.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
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
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimizes `f` over `[lo, hi]` (both positive): evaluates `points`
/// log-spaced values, then refines around the best one with golden-section
/// search in `ln x` to tolerance `tol`. Non-finite values count as `+inf`.
pub fn log_grid_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize, tol: f64) -> (f64, f64) {
    debug_assert!(lo > 0.0 && hi > lo && points >= 3);
    let g = |t: f64| {
        let y = f(t.exp());
        if y.is_nan() {
            f64::INFINITY
        } else {
            y
        }
    };
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (points - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..points {
        let y = g(llo + step * i as f64);
        if y < best.1 {
            best = (i, y);
        }
    }
    let i = best.0;
    let a = llo + step * i.saturating_sub(1) as f64;
    let b = llo + step * (i + 1).min(points - 1) as f64;
    let (t, y) = golden_section(g, a, b, tol);
    let grid_t = llo + step * i as f64;
    if best.1 <= y {
        (grid_t.exp(), best.1)
    } else {
        (t.exp(), y)
    }
}
