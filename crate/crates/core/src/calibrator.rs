//! Post-implementation toll constants fitted to observed traffic changes.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::data::{MarketDataset, Mode};
use crate::error::{Error, Result};
use crate::optim::{minimize_box, BoxBfgsOptions, IterationRecord};
use crate::params::{ParameterSet, TollAscs};
use crate::predictor::{predict_markets, Availability, Prediction, Scenario, SolverOptions};

/// Cells whose traffic a target measures.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGroup {
    pub name: String,
    /// Origin zone ids.
    pub origins: BTreeSet<String>,
    pub modes: BTreeSet<Mode>,
    /// Count only trips bound for the cordon zone.
    pub crz_only: bool,
}

impl RegionGroup {
    /// Auto trips into the cordon from the given origins.
    pub fn auto_into_crz(name: impl Into<String>, origins: impl IntoIterator<Item = impl Into<String>>) -> Self {
        RegionGroup {
            name: name.into(),
            origins: origins.into_iter().map(Into::into).collect(),
            modes: Mode::ALL.iter().copied().filter(|m| m.is_auto()).collect(),
            crz_only: true,
        }
    }

    fn markets(&self, dataset: &MarketDataset) -> Vec<usize> {
        (0..dataset.markets().len())
            .filter(|&t| self.origins.contains(&dataset.origin(t).id))
            .collect()
    }

    fn cells(&self, dataset: &MarketDataset) -> Vec<(usize, usize)> {
        let alts: Vec<usize> = dataset
            .alternatives()
            .iter()
            .enumerate()
            .filter(|(j, a)| self.modes.contains(&a.mode) && (!self.crz_only || dataset.destination(*j).is_crz))
            .map(|(j, _)| j)
            .collect();
        self.markets(dataset)
            .into_iter()
            .flat_map(|t| alts.iter().map(move |&j| (t, j)))
            .filter(|&(t, j)| dataset.attribute(t, j).is_some())
            .collect()
    }
}

/// Observed percentage changes per region group.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    pub groups: Vec<(RegionGroup, f64)>,
}

impl CalibrationTargets {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Usage("calibration needs at least one target".into()));
        }
        for (g, pct) in &self.groups {
            if !pct.is_finite() || *pct <= -100.0 {
                return Err(Error::Usage(format!(
                    "target for {} must be a percentage above -100, got {pct}",
                    g.name
                )));
            }
        }
        Ok(())
    }
}

fn volume(prediction: &Prediction<f64>, cells: &[(usize, usize)]) -> f64 {
    cells.iter().map(|&(t, j)| prediction.trips(t, j)).sum()
}

/// Percentage change of a group's trip volume from `pre` to `post`.
pub fn predicted_change(
    dataset: &MarketDataset,
    params: &ParameterSet<f64>,
    pre: &Scenario<f64>,
    post: &Scenario<f64>,
    group: &RegionGroup,
    opts: &SolverOptions<f64>,
) -> Result<f64> {
    let cells = group.cells(dataset);
    if cells.is_empty() {
        return Err(Error::EmptyRegionGroup(group.name.clone()));
    }
    let markets = group.markets(dataset);
    let a = predict_markets(dataset, params, pre, opts, Availability::Observed, markets.iter().copied())?;
    let b = predict_markets(dataset, params, post, opts, Availability::Observed, markets)?;
    let base = volume(&a, &cells);
    if base <= 0.0 {
        return Err(Error::EmptyRegionGroup(group.name.clone()));
    }
    Ok(100.0 * (volume(&b, &cells) - base) / base)
}

/// Settings for [`calibrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    /// Box for every toll constant.
    pub lower: f64,
    pub upper: f64,
    /// Starting vectors in `TollAscs::NAMES` order.
    pub starts: Vec<[f64; 4]>,
    /// Constants held at a fixed value.
    pub pinned: [Option<f64>; 4],
    /// Weight of the `‖ASC‖²` penalty.
    pub ridge: f64,
    pub fd_step: f64,
    pub max_iter: usize,
    pub gradient_tol: f64,
    pub objective_tol: f64,
    pub solver: SolverOptions<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            lower: -5.0,
            upper: 0.0,
            starts: [0.0, -0.25, -0.5].iter().map(|&v| [v; 4]).collect(),
            pinned: [None; 4],
            ridge: 0.0,
            fd_step: 1e-5,
            max_iter: 200,
            gradient_tol: 1e-9,
            objective_tol: 1e-16,
            solver: SolverOptions {
                tolerance: 1e-13,
                ..SolverOptions::default()
            },
        }
    }
}

/// Outcome of one start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub start: [f64; 4],
    pub start_objective: f64,
    pub toll: [f64; 4],
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult<T = f64> {
    pub toll: TollAscs<T>,
    pub objective: f64,
    /// Predicted percentage change per group at the returned constants.
    pub predicted: BTreeMap<String, f64>,
    pub observed: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Fewer targets than free constants.
    pub under_determined: bool,
    pub free_parameters: usize,
    pub starts: Vec<StartOutcome>,
}

struct Problem<'a> {
    dataset: &'a MarketDataset,
    params: &'a ParameterSet<f64>,
    post: &'a Scenario<f64>,
    opts: &'a CalibrationOptions,
    markets: Vec<usize>,
    groups: Vec<(String, Vec<(usize, usize)>, f64, f64)>,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn full(&self, z: &[f64]) -> [f64; 4] {
        let mut a = [0.0; 4];
        let mut k = 0;
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = match self.opts.pinned[i] {
                Some(v) => v,
                None => {
                    k += 1;
                    z[k - 1]
                }
            };
        }
        a
    }

    fn changes(&self, toll: [f64; 4]) -> Result<Vec<f64>> {
        let p = self.params.clone().with_toll(TollAscs::from_array(toll));
        let pred = predict_markets(
            self.dataset,
            &p,
            self.post,
            &self.opts.solver,
            Availability::Observed,
            self.markets.iter().copied(),
        )?;
        Ok(self
            .groups
            .iter()
            .map(|(_, cells, base, _)| 100.0 * (volume(&pred, cells) - base) / base)
            .collect())
    }

    fn objective(&self, z: &[f64]) -> Result<f64> {
        let toll = self.full(z);
        let pred = self.changes(toll)?;
        let fit: f64 = self
            .groups
            .iter()
            .zip(&pred)
            .map(|((_, _, _, obs), p)| (obs - p).powi(2))
            .sum();
        let ridge = self.opts.ridge * toll.iter().map(|a| a * a).sum::<f64>();
        Ok(fit + ridge)
    }
}

/// Fits the toll constants so predicted changes match the targets.
///
/// `pre` is the scenario before pricing and `post` the priced scenario; the
/// constants enter `post` through the parameter set. Starts run in parallel
/// and the lowest objective wins, ties going to the earlier start.
pub fn calibrate(
    dataset: &MarketDataset,
    params: &ParameterSet<f64>,
    targets: &CalibrationTargets,
    pre: &Scenario<f64>,
    post: &Scenario<f64>,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult<f64>> {
    targets.validate()?;
    if opts.starts.is_empty() {
        return Err(Error::Usage("calibration needs at least one start".into()));
    }
    if !(opts.lower <= opts.upper) {
        return Err(Error::Usage("calibration bounds are inverted".into()));
    }
    let mut markets = BTreeSet::new();
    let mut groups = Vec::new();
    for (g, _) in &targets.groups {
        let cells = g.cells(dataset);
        if cells.is_empty() {
            return Err(Error::EmptyRegionGroup(g.name.clone()));
        }
        markets.extend(g.markets(dataset));
        groups.push((g, cells));
    }
    let markets: Vec<usize> = markets.into_iter().collect();
    let base = predict_markets(dataset, params, pre, &opts.solver, Availability::Observed, markets.iter().copied())?;
    let groups = groups
        .into_iter()
        .zip(&targets.groups)
        .map(|((g, cells), (_, obs))| {
            let b = volume(&base, &cells);
            if b <= 0.0 {
                Err(Error::EmptyRegionGroup(g.name.clone()))
            } else {
                Ok((g.name.clone(), cells, b, *obs))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let free: Vec<usize> = (0..4).filter(|&i| opts.pinned[i].is_none()).collect();
    let problem = Problem {
        dataset,
        params,
        post,
        opts,
        markets,
        groups,
        free,
    };
    let n_free = problem.free.len();
    let bfgs = BoxBfgsOptions {
        lower: vec![opts.lower; n_free],
        upper: vec![opts.upper; n_free],
        fd_step: opts.fd_step,
        max_iter: opts.max_iter,
        gradient_tol: opts.gradient_tol,
        objective_tol: opts.objective_tol,
    };

    let outcomes: Vec<StartOutcome> = opts
        .starts
        .par_iter()
        .map(|start| {
            let z0: Vec<f64> = problem.free.iter().map(|&i| start[i].clamp(opts.lower, opts.upper)).collect();
            let start_objective = problem.objective(&z0)?;
            let m = minimize_box(|z| problem.objective(z), &z0, &bfgs)?;
            Ok(StartOutcome {
                start: *start,
                start_objective,
                toll: problem.full(&m.x),
                objective: m.objective,
                gradient_norm: m.gradient_norm,
                iterations: m.iterations,
                converged: m.converged,
                history: m.history,
            })
        })
        .collect::<Result<_>>()?;

    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .map(|(k, _)| k)
        .expect("at least one start");
    let b = &outcomes[best];
    if !b.converged {
        return Err(Error::CalibrationNonConvergence {
            objective: b.objective,
            gradient_norm: b.gradient_norm,
            best: b.toll.to_vec(),
        });
    }
    let predicted_values = problem.changes(b.toll)?;
    let predicted = problem
        .groups
        .iter()
        .zip(&predicted_values)
        .map(|((name, ..), p)| (name.clone(), *p))
        .collect();
    let observed = problem.groups.iter().map(|(name, _, _, o)| (name.clone(), *o)).collect();
    let under_determined = problem.groups.len() < n_free;
    if under_determined {
        log::warn!(
            "calibration is under-determined: {} targets for {} free constants",
            problem.groups.len(),
            n_free
        );
    }
    Ok(CalibrationResult {
        toll: TollAscs::from_array(b.toll),
        objective: b.objective,
        predicted,
        observed,
        iterations: b.iterations,
        converged: b.converged,
        under_determined,
        free_parameters: n_free,
        starts: outcomes,
    })
}
