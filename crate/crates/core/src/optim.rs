//! Box-constrained quasi-Newton minimisation with finite-difference gradients.

/// Settings for [`minimize_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBfgsOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Central-difference step.
    pub fd_step: f64,
    pub max_iter: usize,
    /// Stop when the projected gradient's max norm falls below this.
    pub gradient_tol: f64,
    /// Stop when the objective falls below this.
    pub objective_tol: f64,
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Largest component of the projected gradient `x − P(x − g)`.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| (xi - (xi - gi).clamp(l, h)).abs())
        .fold(0.0, f64::max)
}

/// Minimises `f` over the box `[lower, upper]` from `x0`.
///
/// Variables sitting on a bound with the gradient pointing outward are held
/// fixed for the iteration; the inverse-Hessian approximation acts on the
/// rest. Steps are projected back onto the box and accepted by an Armijo
/// backtracking rule. Objective failures (`Err`) abort the run.
pub fn minimize_box<E>(
    f: impl Fn(&[f64]) -> Result<f64, E>,
    x0: &[f64],
    opts: &BoxBfgsOptions,
) -> Result<Minimum, E> {
    let n = x0.len();
    let (lo, hi) = (&opts.lower, &opts.upper);
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = eval(&x)?;
    let grad = |x: &[f64], eval: &mut dyn FnMut(&[f64]) -> Result<f64, E>| -> Result<Vec<f64>, E> {
        let mut g = vec![0.0; n];
        let mut xp = x.to_vec();
        for i in 0..n {
            let xi = x[i];
            xp[i] = xi + opts.fd_step;
            let fp = eval(&xp)?;
            xp[i] = xi - opts.fd_step;
            let fm = eval(&xp)?;
            xp[i] = xi;
            g[i] = (fp - fm) / (2.0 * opts.fd_step);
        }
        Ok(g)
    };
    let mut g = grad(&x, &mut eval)?;
    let mut gamma = 1.0 / g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut h = identity(n, gamma);
    let mut fresh = true;
    let mut history = Vec::new();
    let mut gnorm = projected_gradient_norm(&x, &g, lo, hi);
    let mut converged = fx <= opts.objective_tol || gnorm <= opts.gradient_tol;
    let mut iterations = 0;

    let mut previous_free: Option<Vec<bool>> = None;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        if previous_free.as_ref().is_some_and(|p| *p != free) {
            h = identity(n, gamma);
            fresh = true;
        }
        let mut accepted = None;
        for restart in [false, true] {
            if restart {
                if fresh {
                    break;
                }
                h = identity(n, gamma);
                fresh = true;
            }
            let d: Vec<f64> = (0..n)
                .map(|i| {
                    if free[i] {
                        -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect();
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..60 {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                project(&mut xn, lo, hi);
                let fn_ = eval(&xn)?;
                let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
                if fn_ <= fx + 1e-4 * decrease.min(0.0) && fn_ < fx {
                    accepted = Some((xn, fn_));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fn_)) = accepted else { break };
        previous_free = Some(free);
        let gn = grad(&xn, &mut eval)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
            gamma = sy / y.iter().map(|v| v * v).sum::<f64>();
            if fresh {
                h = identity(n, gamma);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let step = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = xn;
        fx = fn_;
        g = gn;
        gnorm = projected_gradient_norm(&x, &g, lo, hi);
        history.push(IterationRecord {
            iteration: iterations,
            objective: fx,
            gradient_norm: gnorm,
            step,
        });
        converged = fx <= opts.objective_tol || gnorm <= opts.gradient_tol;
        if step == 0.0 {
            break;
        }
    }
    Ok(Minimum {
        x,
        objective: fx,
        gradient_norm: gnorm,
        iterations,
        evaluations,
        converged,
        history,
    })
}

fn identity(n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
        .collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn opts(n: usize, lo: f64, hi: f64) -> BoxBfgsOptions {
        BoxBfgsOptions {
            lower: vec![lo; n],
            upper: vec![hi; n],
            fd_step: 1e-5,
            max_iter: 500,
            gradient_tol: 1e-10,
            objective_tol: 0.0,
        }
    }

    #[test]
    fn rosenbrock_interior() {
        let f = |x: &[f64]| Ok::<_, Infallible>((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let o = BoxBfgsOptions {
            gradient_tol: 1e-8,
            ..opts(2, -5.0, 5.0)
        };
        let m = minimize_box(f, &[-1.2, 1.0], &o).unwrap();
        assert!(m.converged, "{:?} {} {} {}", m.x, m.objective, m.gradient_norm, m.iterations);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn active_bound() {
        // Unconstrained minimum at (1, -2); the box caps the first coordinate at 0.
        let f = |x: &[f64]| Ok::<_, Infallible>((x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2));
        let m = minimize_box(f, &[-0.5, -0.5], &opts(2, -5.0, 0.0)).unwrap();
        assert!(m.converged);
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| Ok::<_, Infallible>(x.iter().map(|v| (v + 0.3).powi(4)).sum::<f64>());
        let x0 = [-0.1, -0.4, -2.0];
        let f0 = f(&x0).unwrap();
        let m = minimize_box(f, &x0, &opts(3, -5.0, 0.0)).unwrap();
        assert!(m.objective <= f0);
        assert!(m.history.windows(2).all(|w| w[1].objective <= w[0].objective));
    }

    #[test]
    fn steep_start_on_the_bound_converges() {
        let w = [[1.0, 3.0, 0.5, 1.0], [0.2, 1.0, 2.0, 4.0]];
        let response = |x: &[f64], k: usize| -> f64 { (0..4).map(|j| 40.0 * w[k][j] * (1.0 - x[j].exp())).sum() };
        let truth = [-0.3, -0.2, -0.1, -0.05];
        let targets = [response(&truth, 0), response(&truth, 1)];
        let f = |x: &[f64]| Ok::<_, Infallible>((0..2).map(|k| (response(x, k) - targets[k]).powi(2)).sum::<f64>());
        let o = BoxBfgsOptions {
            max_iter: 200,
            objective_tol: 1e-16,
            ..opts(4, -5.0, 0.0)
        };
        let m = minimize_box(f, &[0.0; 4], &o).unwrap();
        assert!(m.converged, "{m:?}");
        assert!(m.objective < 1e-12);
    }

    #[test]
    fn underdetermined_least_squares_reaches_zero() {
        // Two residuals in four unknowns.
        let f = |x: &[f64]| {
            let r1 = x[0] + 2.0 * x[1] - x[2] + 0.7;
            let r2 = x[1] - x[3] * 0.5 + 0.2;
            Ok::<_, Infallible>(r1 * r1 + r2 * r2)
        };
        let mut o = opts(4, -5.0, 0.0);
        o.objective_tol = 1e-20;
        let m = minimize_box(f, &[0.0; 4], &o).unwrap();
        assert!(m.objective < 1e-16, "{}", m.objective);
    }
}
