//! Bracketing and bisection for the smallest lever that turns a nondecreasing
//! function nonnegative.

/// How the upper end of the bracket grows while searching for a sign change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expansion {
    /// Doubles the distance from the lower end.
    Doubling,
    /// Adds a fixed step.
    Linear(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketOptions {
    /// First trial distance above the lower end.
    pub initial: f64,
    /// Largest lever value tried.
    pub cap: f64,
    pub expansion: Expansion,
    /// Stop once the bracket is narrower than this.
    pub x_tol: f64,
    /// Stop once the value at the upper end lies in `[0, f_tol)`.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for BracketOptions {
    fn default() -> Self {
        BracketOptions {
            initial: 1.0,
            cap: 100.0,
            expansion: Expansion::Doubling,
            x_tol: 1e-10,
            f_tol: 0.0,
            max_iter: 200,
        }
    }
}

/// Upper end of the final bracket, where the function is nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootOutcome {
    Found(Root),
    /// Still negative at the cap.
    Unbracketed { cap: f64, value: f64 },
}

/// Smallest `x ≥ lo` with `f(x) ≥ 0`, to within `x_tol`, for nondecreasing `f`.
///
/// Returns `lo` itself when `f(lo)` is already nonnegative.
pub fn smallest_nonnegative<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    lo: f64,
    opts: &BracketOptions,
) -> Result<RootOutcome, E> {
    let mut evaluations = 1;
    let f_lo = f(lo)?;
    if f_lo >= 0.0 {
        return Ok(RootOutcome::Found(Root {
            x: lo,
            value: f_lo,
            evaluations,
        }));
    }
    let mut a = lo;
    let mut b = (lo + opts.initial).min(opts.cap);
    let mut fb;
    loop {
        fb = f(b)?;
        evaluations += 1;
        if fb >= 0.0 {
            break;
        }
        if b >= opts.cap || evaluations > opts.max_iter {
            return Ok(RootOutcome::Unbracketed { cap: b, value: fb });
        }
        a = b;
        b = match opts.expansion {
            Expansion::Doubling => lo + 2.0 * (b - lo),
            Expansion::Linear(step) => b + step,
        }
        .min(opts.cap);
    }
    while b - a > opts.x_tol && fb >= opts.f_tol && evaluations < opts.max_iter {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid)?;
        evaluations += 1;
        if fm >= 0.0 {
            b = mid;
            fb = fm;
        } else {
            a = mid;
        }
    }
    Ok(RootOutcome::Found(Root {
        x: b,
        value: fb,
        evaluations,
    }))
}
