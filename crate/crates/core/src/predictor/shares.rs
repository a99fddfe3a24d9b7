//! Forward (utilities to shares) and inverse (shares to utilities) demand.
//!
//! The inverse demand is explicit:
//!
//! `V_j = (1 - Σ_h ρ_h) ln s_j + Σ_h ρ_h ln S_{h(j)} - ln s_0`
//!
//! where `S_{h(j)}` is the total share of `j`'s group in dimension `h`. The
//! outside option has `V_0 = 0` and is a singleton in every dimension.
//!
//! The forward problem is solved on unnormalised log-shares `y` with the
//! outside option pinned at `y_0 = 0`. The inverse map is homogeneous of
//! degree one, so the inside equations do not involve `y_0` and reduce to
//! `y_j = V_j + Σ_h ρ_h ln s_{j|h}`, a contraction with local rate `Σ_h ρ_h`.

use crate::data::NestingStructure;
use crate::error::{Error, Result};
use crate::params::rho_valid;
use crate::scalar::{log_sum_exp, Scalar};

/// How utilities map to shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardModel {
    /// Exact inverse of the IPDL demand system.
    #[default]
    Ipdl,
    /// `exp(V_j) / (1 + Σ_q exp(V_q))`, ignoring nesting.
    PlainLogit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Stop when `max |Δ ln s|` falls below this.
    pub tolerance: T,
    pub max_iter: usize,
    /// Weight on the new iterate; 1 is the plain contraction.
    pub damping: T,
    pub forward: ForwardModel,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: T::lit(1e-10),
            max_iter: 10_000,
            damping: T::one(),
            forward: ForwardModel::Ipdl,
        }
    }
}

/// Solved market shares.
#[derive(Debug, Clone, PartialEq)]
pub struct Shares<T> {
    pub inside: Vec<T>,
    pub outside: T,
    pub iterations: usize,
    /// Last `max |Δ ln s|`.
    pub residual: T,
}

impl<T: Scalar> Shares<T> {
    pub fn total(&self) -> T {
        self.outside + self.inside.iter().copied().sum::<T>()
    }
}

/// Solves for shares given inside utilities. `rho` has one entry per nesting dimension.
pub fn solve_shares<T: Scalar>(
    rho: &[T],
    nesting: &NestingStructure,
    utilities: &[T],
    opts: &SolverOptions<T>,
) -> Result<Shares<T>> {
    if utilities.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("non-finite utility passed to the share solver".into()));
    }
    if opts.forward == ForwardModel::PlainLogit {
        return Ok(normalise(utilities.to_vec(), 0, T::zero()));
    }
    check_shape(rho, nesting, utilities.len())?;
    if !rho_valid(rho) {
        return Err(Error::InvalidRho {
            rho: rho.iter().map(|r| r.to_f64_lossy()).collect(),
        });
    }

    let n = utilities.len();
    let mut y = utilities.to_vec();
    let active: Vec<(usize, T)> = rho
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, r)| *r != T::zero())
        .collect();
    if active.is_empty() || n == 0 {
        return Ok(normalise(y, 1, T::zero()));
    }

    let mut next = vec![T::zero(); n];
    let mut group_lse: Vec<Vec<T>> = active
        .iter()
        .map(|&(h, _)| vec![T::zero(); nesting.dim(h).groups().len()])
        .collect();
    let mut residual = T::infinity();
    for iter in 1..=opts.max_iter {
        for (k, &(h, _)) in active.iter().enumerate() {
            let dim = nesting.dim(h);
            for (g, members) in dim.groups().iter().enumerate() {
                group_lse[k][g] = log_sum_exp(members.iter().map(|&q| y[q]));
            }
        }
        residual = T::zero();
        for j in 0..n {
            let mut v = utilities[j];
            for (k, &(h, r)) in active.iter().enumerate() {
                v = v + r * (y[j] - group_lse[k][nesting.dim(h).group_of(j)]);
            }
            next[j] = v;
            residual = residual.max((v - y[j]).abs());
        }
        if opts.damping == T::one() {
            std::mem::swap(&mut y, &mut next);
        } else {
            for j in 0..n {
                y[j] = y[j] + opts.damping * (next[j] - y[j]);
            }
        }
        if residual < opts.tolerance {
            return Ok(normalise(y, iter, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: residual.to_f64_lossy(),
    })
}

/// Shares from unnormalised log-shares with the outside option at 0.
fn normalise<T: Scalar>(y: Vec<T>, iterations: usize, residual: T) -> Shares<T> {
    let m = y.iter().copied().fold(T::zero(), T::max);
    let mut inside: Vec<T> = y.iter().map(|&v| (v - m).exp()).collect();
    let outside_w = (-m).exp();
    let denom = outside_w + inside.iter().copied().sum::<T>();
    for s in &mut inside {
        *s = *s / denom;
    }
    Shares {
        inside,
        outside: outside_w / denom,
        iterations,
        residual,
    }
}

/// Utilities implied by strictly positive shares.
pub fn inverse_utility<T: Scalar>(
    rho: &[T],
    nesting: &NestingStructure,
    inside: &[T],
    outside: T,
) -> Result<Vec<T>> {
    check_shape(rho, nesting, inside.len())?;
    if !(outside > T::zero()) {
        return Err(Error::ZeroShare("outside alternative".into()));
    }
    if let Some(j) = inside.iter().position(|s| !(*s > T::zero())) {
        return Err(Error::ZeroShare(format!("alternative {j}")));
    }
    let rho_sum: T = rho.iter().copied().sum();
    let group_sums: Vec<Vec<T>> = nesting
        .dims()
        .iter()
        .map(|d| {
            d.groups()
                .iter()
                .map(|m| m.iter().map(|&q| inside[q]).sum())
                .collect()
        })
        .collect();
    let ln_out = outside.ln();
    Ok((0..inside.len())
        .map(|j| {
            let mut v = (T::one() - rho_sum) * inside[j].ln() - ln_out;
            for (h, &r) in rho.iter().enumerate() {
                v = v + r * group_sums[h][nesting.dim(h).group_of(j)].ln();
            }
            v
        })
        .collect())
}

fn check_shape<T>(rho: &[T], nesting: &NestingStructure, n: usize) -> Result<()> {
    if rho.len() != nesting.n_dims() {
        return Err(Error::Usage(format!(
            "{} nesting parameters for {} nesting dimensions",
            rho.len(),
            nesting.n_dims()
        )));
    }
    if nesting.n_dims() > 0 && nesting.n_alternatives() != n {
        return Err(Error::Usage(format!(
            "nesting covers {} alternatives, got {}",
            nesting.n_alternatives(),
            n
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Reference solutions that share no code with the solver.

    use crate::data::{NestingDimension, NestingStructure};

    pub fn softmax_with_outside(v: &[f64]) -> (Vec<f64>, f64) {
        let m = v.iter().copied().fold(0.0_f64, f64::max);
        let w: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let d: f64 = (-m).exp() + w.iter().sum::<f64>();
        (w.iter().map(|x| x / d).collect(), (-m).exp() / d)
    }

    /// Nested logit with scale `1 - rho` on the given groups; outside is its own nest.
    pub fn nested_logit(v: &[f64], groups: &[Vec<usize>], rho: f64) -> (Vec<f64>, f64) {
        let mu = 1.0 - rho;
        let inclusive: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().map(|&j| (v[j] / mu).exp()).sum::<f64>().ln())
            .collect();
        let denom = 1.0 + inclusive.iter().map(|i| (mu * i).exp()).sum::<f64>();
        let mut s = vec![0.0; v.len()];
        for (g, members) in groups.iter().enumerate() {
            let nest = (mu * inclusive[g]).exp() / denom;
            for &j in members {
                s[j] = nest * (v[j] / mu - inclusive[g]).exp();
            }
        }
        (s, 1.0 / denom)
    }

    /// Gauss-Seidel sweeps, each coordinate solved by bisection on the
    /// (monotone) inverse-demand equation with the outside pinned at 0.
    pub fn coordinate_bisection(v: &[f64], rho: &[f64], keys: &[Vec<usize>]) -> (Vec<f64>, f64) {
        let n = v.len();
        let rho_sum: f64 = rho.iter().sum();
        let lhs = |y: &[f64], j: usize| -> f64 {
            let mut out = (1.0 - rho_sum) * y[j];
            for (h, &r) in rho.iter().enumerate() {
                let s: f64 = (0..n)
                    .filter(|&q| keys[h][q] == keys[h][j])
                    .map(|q| y[q].exp())
                    .sum();
                out += r * s.ln();
            }
            out
        };
        let mut y = v.to_vec();
        for _sweep in 0..10_000 {
            for j in 0..n {
                let (mut lo, mut hi) = (-60.0, 60.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    y[j] = mid;
                    if lhs(&y, j) < v[j] {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                y[j] = 0.5 * (lo + hi);
            }
            let resid = (0..n).map(|j| (lhs(&y, j) - v[j]).abs()).fold(0.0, f64::max);
            if resid < 1e-13 {
                break;
            }
        }
        let z = 1.0 + y.iter().map(|x| x.exp()).sum::<f64>();
        (y.iter().map(|x| x.exp() / z).collect(), 1.0 / z)
    }

    pub fn nesting_from_keys(keys: &[Vec<usize>]) -> NestingStructure {
        NestingStructure::new(
            keys.iter()
                .enumerate()
                .map(|(h, k)| NestingDimension::from_keys(format!("d{h}"), k))
                .collect(),
        )
    }
}
