//! Transit wait reductions and fare discounts that offset toll welfare losses.
//!
//! Every lever is evaluated against the pre-toll baseline: a market's
//! compensating variation compares its logsum under the toll plus the lever
//! with its logsum before the toll.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{MarketDataset, Mode, Population};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::predictor::{solve_market, Availability, MarketScope, Scenario, SolverOptions};
use crate::roots::{smallest_nonnegative, BracketOptions, Expansion, RootOutcome};
use crate::scalar::Scalar;
use crate::welfare::{cv_from_cs, market_cost_coefficient};

/// Markets that receive the transit levers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationScope {
    pub name: String,
    /// Market indices in ascending order.
    pub markets: Vec<usize>,
}

impl CompensationScope {
    pub fn new(name: impl Into<String>, dataset: &MarketDataset, scope: &MarketScope) -> Result<Self> {
        let name = name.into();
        let markets: Vec<usize> = (0..dataset.markets().len())
            .filter(|&t| scope.contains(dataset, t))
            .collect();
        if markets.is_empty() {
            return Err(Error::Usage(format!("compensation scope `{name}` selects no markets")));
        }
        Ok(CompensationScope { name, markets })
    }

    /// Markets whose origin zone satisfies `keep`.
    pub fn by_origin(name: impl Into<String>, dataset: &MarketDataset, keep: impl Fn(&crate::data::Zone) -> bool) -> Result<Self> {
        let ids: BTreeSet<String> = dataset.zones().iter().filter(|z| keep(z)).map(|z| z.id.clone()).collect();
        Self::new(name, dataset, &MarketScope::Origins(ids))
    }

    fn as_market_scope(&self) -> MarketScope {
        MarketScope::Markets(self.markets.iter().copied().collect())
    }
}

/// How the Kaldor–Hicks fare lever is shared across populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KhFare {
    /// Each population offsets its own aggregate loss.
    #[default]
    PerPopulation,
    /// One discount for everyone offsets the total loss.
    Single,
}

impl FromStr for KhFare {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_population" => Ok(KhFare::PerPopulation),
            "single" => Ok(KhFare::Single),
            _ => Err(format!("unknown kh_fare mode `{s}` (expected per_population or single)")),
        }
    }
}

/// Which transit demand the fare subsidy is paid on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsidyDemand {
    /// Demand after the discount takes effect.
    #[default]
    Responsive,
    /// Demand under the toll and wait lever, before any discount.
    Fixed,
}

impl FromStr for SubsidyDemand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "responsive" => Ok(SubsidyDemand::Responsive),
            "fixed" => Ok(SubsidyDemand::Fixed),
            _ => Err(format!("unknown subsidy demand mode `{s}` (expected responsive or fixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Criterion {
    KaldorHicks,
    Pareto,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::KaldorHicks => "kaldor_hicks",
            Criterion::Pareto => "pareto",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kaldor_hicks" | "kh" => Ok(Criterion::KaldorHicks),
            "pareto" => Ok(Criterion::Pareto),
            _ => Err(format!("unknown criterion `{s}` (expected kaldor_hicks or pareto)")),
        }
    }
}

/// The lever solved for under Kaldor–Hicks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KhLever {
    /// Minutes of wait reduction, no discount.
    Wait,
    /// Fare discounts on top of a fixed wait reduction.
    Fare { wait_reduction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationOptions<T = f64> {
    /// Largest wait reduction tried, minutes.
    pub wait_cap: f64,
    /// Largest fare discount tried, dollars per trip.
    pub fare_cap: f64,
    pub kh_fare: KhFare,
    pub subsidy_demand: SubsidyDemand,
    pub annualization_days: f64,
    /// Pareto feasibility slack per group, dollars per day.
    pub epsilon: f64,
    /// Bisection stops once the criterion CV lies in `[0, cv_tol)` dollars per day.
    pub cv_tol: f64,
    /// Bisection stops once the bracket is narrower than this, in lever units.
    pub lever_tol: f64,
    pub expansion: Expansion,
    pub solver: SolverOptions<T>,
}

impl<T: Scalar> Default for CompensationOptions<T> {
    fn default() -> Self {
        CompensationOptions {
            wait_cap: 60.0,
            fare_cap: 50.0,
            kh_fare: KhFare::PerPopulation,
            subsidy_demand: SubsidyDemand::Responsive,
            annualization_days: 365.0,
            epsilon: 1.0,
            cv_tol: 0.5,
            lever_tol: 1e-9,
            expansion: Expansion::Doubling,
            solver: SolverOptions {
                tolerance: T::lit(1e-13),
                ..SolverOptions::default()
            },
        }
    }
}

/// A wait reduction (minutes) and per-population fare discounts (dollars per trip).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lever {
    pub wait_reduction: f64,
    pub fare_discount: BTreeMap<Population, f64>,
}

impl Lever {
    pub fn wait(minutes: f64) -> Self {
        Lever {
            wait_reduction: minutes,
            fare_discount: BTreeMap::new(),
        }
    }

    pub fn with_discount(mut self, population: Population, dollars: f64) -> Self {
        self.fare_discount.insert(population, dollars);
        self
    }

    fn discount(&self, population: Population) -> f64 {
        self.fare_discount.get(&population).copied().unwrap_or(0.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.wait_reduction >= 0.0) || self.fare_discount.values().any(|d| !(*d >= 0.0)) {
            return Err(Error::Usage(format!("compensation levers must be non-negative, got {self:?}")));
        }
        Ok(())
    }
}

/// One market under a lever.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketOutcome {
    pub market: usize,
    /// Against the pre-toll baseline, dollars per day.
    pub cv_per_day: f64,
    pub transit_trips: f64,
    /// Discount actually received on the market's transit trips, dollars per day.
    pub discount_per_day: f64,
}

/// Population and origin zone id.
pub type GroupKey = (Population, String);

/// A toll scenario over a scope with cached pre-toll logsums.
pub struct CompensationProblem<'a, T: Scalar> {
    dataset: &'a MarketDataset,
    params: &'a ParameterSet<T>,
    toll: Scenario<T>,
    scope: CompensationScope,
    opts: CompensationOptions<T>,
    cs_pre: BTreeMap<usize, T>,
    theta: BTreeMap<usize, T>,
}

impl<'a, T: Scalar> CompensationProblem<'a, T> {
    pub fn new(
        dataset: &'a MarketDataset,
        params: &'a ParameterSet<T>,
        pre: &Scenario<T>,
        toll: Scenario<T>,
        scope: CompensationScope,
        opts: CompensationOptions<T>,
    ) -> Result<Self> {
        if !(opts.annualization_days > 0.0) || !(opts.epsilon >= 0.0) || !(opts.wait_cap > 0.0) || !(opts.fare_cap > 0.0) {
            return Err(Error::Usage("compensation caps, epsilon and annualization_days must be positive".into()));
        }
        let cached: Vec<(usize, T, T)> = scope
            .markets
            .par_iter()
            .map(|&t| {
                let mp = solve_market(dataset, params, pre, t, Availability::Observed, &opts.solver)?;
                Ok((t, -mp.shares.outside.ln(), market_cost_coefficient(dataset, params, t)?))
            })
            .collect::<Result<_>>()?;
        Ok(CompensationProblem {
            dataset,
            params,
            toll,
            scope,
            opts,
            cs_pre: cached.iter().map(|&(t, cs, _)| (t, cs)).collect(),
            theta: cached.iter().map(|&(t, _, th)| (t, th)).collect(),
        })
    }

    pub fn scope(&self) -> &CompensationScope {
        &self.scope
    }

    pub fn options(&self) -> &CompensationOptions<T> {
        &self.opts
    }

    /// The toll scenario with the lever applied to the scope's transit.
    pub fn scenario(&self, lever: &Lever) -> Scenario<T> {
        let mut s = self.toll.clone();
        s.transit_wait_delta = T::lit(-lever.wait_reduction);
        s.wait_scope = self.scope.as_market_scope();
        s.transit_fare_delta = lever
            .fare_discount
            .iter()
            .map(|(&p, &d)| (p, T::lit(-d)))
            .collect();
        s.fare_scope = self.scope.as_market_scope();
        s
    }

    fn outcome(&self, scenario: &Scenario<T>, lever: &Lever, t: usize) -> Result<MarketOutcome> {
        let mp = solve_market(self.dataset, self.params, scenario, t, Availability::Observed, &self.opts.solver)?;
        let m = &self.dataset.markets()[t];
        let trips = m.total_trips as f64;
        let cs = -mp.shares.outside.ln();
        let cv = cv_from_cs(self.cs_pre[&t], cs, self.theta[&t])?.to_f64_lossy() * trips;
        let discount = lever.discount(m.segment.population);
        let mut transit_trips = 0.0;
        let mut discount_per_day = 0.0;
        for (k, &j) in mp.alternatives.iter().enumerate() {
            if self.dataset.alternatives()[j].mode != Mode::Transit {
                continue;
            }
            let n = mp.shares.inside[k].to_f64_lossy() * trips;
            transit_trips += n;
            if discount > 0.0 {
                let fare = scenario
                    .base_attributes(self.dataset, t, j)
                    .map(|x| x.cost)
                    .unwrap_or(0.0);
                discount_per_day += n * discount.min(fare.max(0.0));
            }
        }
        Ok(MarketOutcome {
            market: t,
            cv_per_day: cv,
            transit_trips,
            discount_per_day,
        })
    }

    /// Outcomes of the listed markets, in the given order.
    pub fn evaluate(&self, lever: &Lever, markets: &[usize]) -> Result<Vec<MarketOutcome>> {
        lever.validate()?;
        let scenario = self.scenario(lever);
        markets.iter().map(|&t| self.outcome(&scenario, lever, t)).collect()
    }

    /// Summed CV over the listed markets, dollars per day.
    pub fn cv_over(&self, lever: &Lever, markets: &[usize]) -> Result<f64> {
        Ok(self.evaluate(lever, markets)?.iter().map(|o| o.cv_per_day).sum())
    }

    /// Summed CV over the whole scope, dollars per day.
    pub fn cv_of_lever(&self, lever: &Lever) -> Result<f64> {
        let scenario = self.scenario(lever);
        lever.validate()?;
        let v: Vec<f64> = self
            .scope
            .markets
            .par_iter()
            .map(|&t| self.outcome(&scenario, lever, t).map(|o| o.cv_per_day))
            .collect::<Result<_>>()?;
        Ok(v.iter().sum())
    }

    /// Scope markets grouped by (population, origin zone), in key order.
    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<usize>> {
        let mut g: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for &t in &self.scope.markets {
            let pop = self.dataset.markets()[t].segment.population;
            g.entry((pop, self.dataset.origin(t).id.clone())).or_default().push(t);
        }
        g
    }

    /// Scope markets of each population present.
    pub fn populations(&self) -> BTreeMap<Population, Vec<usize>> {
        let mut g: BTreeMap<Population, Vec<usize>> = BTreeMap::new();
        for &t in &self.scope.markets {
            g.entry(self.dataset.markets()[t].segment.population).or_default().push(t);
        }
        g
    }

    /// Group CVs under a lever, dollars per day.
    pub fn group_cvs(&self, lever: &Lever) -> Result<BTreeMap<GroupKey, f64>> {
        let groups: Vec<(GroupKey, Vec<usize>)> = self.groups().into_iter().collect();
        groups
            .into_par_iter()
            .map(|(k, ms)| Ok((k, self.cv_over(lever, &ms)?)))
            .collect()
    }

    /// Annual fare subsidy by population in dollars, with its total.
    pub fn subsidy(&self, lever: &Lever) -> Result<(BTreeMap<Population, f64>, f64)> {
        let mut by_pop: BTreeMap<Population, f64> = BTreeMap::new();
        if lever.fare_discount.values().all(|&d| d == 0.0) {
            return Ok((by_pop, 0.0));
        }
        let outcomes = match self.opts.subsidy_demand {
            SubsidyDemand::Responsive => self.evaluate(lever, &self.scope.markets)?,
            SubsidyDemand::Fixed => {
                // Trips under the wait lever alone, priced at the discount the lever grants.
                let no_fare = Lever::wait(lever.wait_reduction);
                let scenario = self.scenario(&no_fare);
                self.scope
                    .markets
                    .iter()
                    .map(|&t| {
                        let mut o = self.outcome(&scenario, &no_fare, t)?;
                        o.discount_per_day = self.fixed_discount(&scenario, lever, t)?;
                        Ok(o)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        for o in &outcomes {
            let pop = self.dataset.markets()[o.market].segment.population;
            *by_pop.entry(pop).or_insert(0.0) += o.discount_per_day * self.opts.annualization_days;
        }
        let total = by_pop.values().sum();
        Ok((by_pop, total))
    }

    fn fixed_discount(&self, scenario: &Scenario<T>, lever: &Lever, t: usize) -> Result<f64> {
        let mp = solve_market(self.dataset, self.params, scenario, t, Availability::Observed, &self.opts.solver)?;
        let m = &self.dataset.markets()[t];
        let discount = lever.discount(m.segment.population);
        let mut spend = 0.0;
        for (k, &j) in mp.alternatives.iter().enumerate() {
            if self.dataset.alternatives()[j].mode == Mode::Transit {
                let fare = scenario.base_attributes(self.dataset, t, j).map(|x| x.cost).unwrap_or(0.0);
                spend += mp.shares.inside[k].to_f64_lossy() * m.total_trips as f64 * discount.min(fare.max(0.0));
            }
        }
        Ok(spend)
    }

    fn bracket(&self, cap: f64) -> BracketOptions {
        BracketOptions {
            initial: (cap / 64.0).max(self.opts.lever_tol),
            cap,
            expansion: self.opts.expansion,
            x_tol: self.opts.lever_tol,
            f_tol: self.opts.cv_tol,
            max_iter: 500,
        }
    }

    fn result(&self, criterion: Criterion, lever: Lever) -> Result<CompensationResult> {
        let residual_cv = self.group_cvs(&lever)?;
        let aggregate_cv = residual_cv.values().sum();
        let (subsidy_by_population, annual_subsidy) = self.subsidy(&lever)?;
        let converged = match criterion {
            Criterion::KaldorHicks => aggregate_cv >= -self.opts.epsilon,
            Criterion::Pareto => residual_cv.values().all(|&v| v >= -self.opts.epsilon),
        };
        Ok(CompensationResult {
            scope: self.scope.name.clone(),
            criterion,
            wait_reduction_min: lever.wait_reduction,
            fare_discount: lever.fare_discount,
            annual_subsidy,
            subsidy_by_population,
            aggregate_cv,
            residual_cv,
            converged,
        })
    }
}

/// A solved compensation package. Subsidies are dollars per year, CVs dollars per day.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationResult {
    pub scope: String,
    pub criterion: Criterion,
    pub wait_reduction_min: f64,
    /// Dollars per trip; populations without an entry get no discount.
    pub fare_discount: BTreeMap<Population, f64>,
    pub annual_subsidy: f64,
    pub subsidy_by_population: BTreeMap<Population, f64>,
    pub aggregate_cv: f64,
    /// Per (population, origin zone) group under the solved lever.
    pub residual_cv: BTreeMap<GroupKey, f64>,
    /// The criterion holds within epsilon on re-evaluation.
    pub converged: bool,
}

impl CompensationResult {
    pub fn discount(&self, population: Population) -> f64 {
        self.fare_discount.get(&population).copied().unwrap_or(0.0)
    }

    /// Lowest residual CV among a population's groups, with its zone.
    pub fn worst_group(&self, population: Population) -> Option<(&str, f64)> {
        self.residual_cv
            .iter()
            .filter(|((p, _), _)| *p == population)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|((_, z), &v)| (z.as_str(), v))
    }
}

fn solve_lever<T: Scalar>(
    problem: &CompensationProblem<'_, T>,
    cap: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
    on_plateau: impl FnOnce(f64, f64) -> Error,
) -> Result<f64> {
    match smallest_nonnegative(&mut f, 0.0, &problem.bracket(cap))? {
        RootOutcome::Found(r) => Ok(r.x),
        RootOutcome::Unbracketed { cap, value } => Err(on_plateau(cap, value)),
    }
}

/// Smallest lever whose aggregate CV over the scope is nonnegative.
///
/// Under [`KhFare::PerPopulation`] each population's discount offsets that
/// population's own aggregate loss.
pub fn solve_kaldor_hicks<T: Scalar>(problem: &CompensationProblem<'_, T>, lever: KhLever) -> Result<CompensationResult> {
    let opts = problem.options();
    let solved = match lever {
        KhLever::Wait => {
            let w = solve_lever(
                problem,
                opts.wait_cap,
                |w| problem.cv_of_lever(&Lever::wait(w)),
                |cap, plateau_cv| Error::Unbracketable { cap, plateau_cv },
            )?;
            Lever::wait(w)
        }
        KhLever::Fare { wait_reduction } => {
            let pops = problem.populations();
            match opts.kh_fare {
                KhFare::Single => {
                    let with = |d: f64| {
                        pops.keys()
                            .fold(Lever::wait(wait_reduction), |l, &p| l.with_discount(p, d))
                    };
                    let d = solve_lever(
                        problem,
                        opts.fare_cap,
                        |d| problem.cv_of_lever(&with(d)),
                        |cap, plateau_cv| Error::Unbracketable { cap, plateau_cv },
                    )?;
                    with(d)
                }
                KhFare::PerPopulation => {
                    let discounts: Vec<(Population, f64)> = pops
                        .into_par_iter()
                        .map(|(p, ms)| {
                            let d = solve_lever(
                                problem,
                                opts.fare_cap,
                                |d| problem.cv_over(&Lever::wait(wait_reduction).with_discount(p, d), &ms),
                                |cap, plateau_cv| Error::Unbracketable { cap, plateau_cv },
                            )?;
                            Ok((p, d))
                        })
                        .collect::<Result<_>>()?;
                    discounts
                        .into_iter()
                        .fold(Lever::wait(wait_reduction), |l, (p, d)| l.with_discount(p, d))
                }
            }
        }
    };
    problem.result(Criterion::KaldorHicks, solved)
}

/// Pareto package at one wait level: each population's discount is the
/// largest any of its origin-zone groups needs to stop losing.
pub fn solve_pareto_level<T: Scalar>(problem: &CompensationProblem<'_, T>, wait_reduction: f64) -> Result<CompensationResult> {
    let opts = problem.options();
    let groups: Vec<(GroupKey, Vec<usize>)> = problem.groups().into_iter().collect();
    let needs: Vec<(Population, f64)> = groups
        .into_par_iter()
        .map(|((p, zone), ms)| {
            let d = solve_lever(
                problem,
                opts.fare_cap,
                |d| problem.cv_over(&Lever::wait(wait_reduction).with_discount(p, d), &ms),
                |_, plateau_cv| Error::InfeasibleDiscount {
                    group: format!("{p}/{zone}"),
                    plateau_cv,
                },
            )?;
            Ok((p, d))
        })
        .collect::<Result<_>>()?;
    let mut lever = Lever::wait(wait_reduction);
    for (p, d) in needs {
        let e = lever.fare_discount.entry(p).or_insert(0.0);
        *e = e.max(d);
    }
    let result = problem.result(Criterion::Pareto, lever)?;
    if !result.converged {
        log::warn!(
            "pareto package at {wait_reduction} min leaves a group below -{} $/day",
            opts.epsilon
        );
    }
    Ok(result)
}

/// Pareto packages over ascending wait levels, evaluated in parallel.
pub fn solve_pareto<T: Scalar>(problem: &CompensationProblem<'_, T>, wait_levels: &[f64]) -> Result<Vec<CompensationResult>> {
    pareto_sweep(problem, wait_levels)?.into_iter().collect()
}

/// Like [`solve_pareto`] but keeps going past levels that fail, returning
/// one outcome per level. Only invalid levels fail the whole sweep.
pub fn pareto_sweep<T: Scalar>(
    problem: &CompensationProblem<'_, T>,
    wait_levels: &[f64],
) -> Result<Vec<Result<CompensationResult>>> {
    if wait_levels.windows(2).any(|w| !(w[0] < w[1])) || wait_levels.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Usage("wait levels must be non-negative and strictly ascending".into()));
    }
    Ok(wait_levels.par_iter().map(|&w| solve_pareto_level(problem, w)).collect())
}

/// `0, step, 2·step, …` up to and including `max`.
pub fn wait_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// One line of a compensation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub criterion: Criterion,
    pub wait_min: f64,
    pub population: Population,
    pub discount_usd_per_trip: f64,
    pub subsidy_musd_per_year: f64,
    pub worst_residual_group: String,
    pub residual_cv: f64,
}

/// Rows ordered by (wait level, population).
pub fn schedule_rows(results: &[CompensationResult]) -> Vec<ScheduleRow> {
    let mut rows = Vec::new();
    for r in results {
        let pops: BTreeSet<Population> = r.residual_cv.keys().map(|(p, _)| *p).collect();
        for p in pops {
            let (zone, cv) = r.worst_group(p).map(|(z, v)| (z.to_string(), v)).unwrap_or_default();
            rows.push(ScheduleRow {
                criterion: r.criterion,
                wait_min: r.wait_reduction_min,
                population: p,
                discount_usd_per_trip: r.discount(p),
                subsidy_musd_per_year: r.subsidy_by_population.get(&p).copied().unwrap_or(0.0) / 1e6,
                worst_residual_group: zone,
                residual_cv: cv,
            });
        }
    }
    rows.sort_by(|a, b| a.wait_min.total_cmp(&b.wait_min).then(a.population.cmp(&b.population)));
    rows
}
