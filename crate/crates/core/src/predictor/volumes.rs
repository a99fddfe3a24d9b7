//! Market-level prediction over a whole dataset.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::MarketDataset;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::scalar::Scalar;

use super::scenario::{post_utility, Scenario};
use super::shares::{solve_shares, Shares, SolverOptions};

/// Which alternatives enter a market's choice set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Availability {
    /// Every alternative; a missing attribute row is an error.
    Strict,
    /// Only alternatives with attribute rows.
    Observed,
}

/// Utilities of one market under a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketUtilities<T> {
    /// Dataset alternative index of each entry.
    pub alternatives: Vec<usize>,
    pub utilities: Vec<T>,
    pub clamps: usize,
}

pub fn market_utilities<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    scenario: &Scenario<T>,
    market: usize,
    availability: Availability,
) -> Result<MarketUtilities<T>> {
    let m = &dataset.markets()[market];
    let p = params.segment(m.segment)?;
    let adj = scenario.for_market(dataset, market);
    let n = dataset.alternatives().len();
    let mut out = MarketUtilities {
        alternatives: Vec::with_capacity(n),
        utilities: Vec::with_capacity(n),
        clamps: 0,
    };
    for (j, alt) in dataset.alternatives().iter().enumerate() {
        let Some(base) = scenario.base_attributes(dataset, market, j) else {
            match availability {
                Availability::Observed => continue,
                Availability::Strict => {
                    return Err(Error::MissingAttributes {
                        market: dataset.market_label(market),
                        alternative: dataset.alternative_label(j),
                    })
                }
            }
        };
        let asc = p.dest_asc(&dataset.zones()[alt.destination].id)?;
        let cell = scenario.apply(&adj, alt, base);
        out.clamps += cell.clamps;
        out.alternatives.push(j);
        out.utilities
            .push(post_utility(p, &params.toll, &adj, alt, asc, &cell, scenario.toll_asc_active));
    }
    Ok(out)
}

/// Solved shares of one market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPrediction<T> {
    pub market: usize,
    pub alternatives: Vec<usize>,
    pub shares: Shares<T>,
    pub clamps: usize,
}

impl<T: Scalar> MarketPrediction<T> {
    /// Share of a dataset alternative (zero when unavailable).
    pub fn share_of(&self, alternative: usize) -> T {
        self.alternatives
            .iter()
            .position(|&j| j == alternative)
            .map_or(T::zero(), |k| self.shares.inside[k])
    }
}

pub fn solve_market<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    scenario: &Scenario<T>,
    market: usize,
    availability: Availability,
    opts: &SolverOptions<T>,
) -> Result<MarketPrediction<T>> {
    let u = market_utilities(dataset, params, scenario, market, availability)?;
    let rho = params.segment(dataset.markets()[market].segment)?.rhos();
    let shares = if u.alternatives.len() == dataset.alternatives().len() {
        solve_shares(&rho, dataset.nesting(), &u.utilities, opts)?
    } else {
        let nesting = dataset.nesting().restrict(&u.alternatives);
        solve_shares(&rho, &nesting, &u.utilities, opts)?
    };
    Ok(MarketPrediction {
        market,
        alternatives: u.alternatives,
        shares,
        clamps: u.clamps,
    })
}

/// Predicted shares and trips for every market.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub markets: Vec<MarketPrediction<T>>,
    /// `[market][alternative]` trips per day.
    pub trips: Vec<Vec<T>>,
    pub outside_trips: Vec<T>,
    pub summary: PredictionSummary,
}

/// Solver diagnostics aggregated over markets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictionSummary {
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub max_residual: f64,
    pub clamps: usize,
}

/// Predicts every market over the alternatives it offers (cells with attributes).
///
/// Markets are solved in parallel; results keep market order.
pub fn predict_volumes<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    scenario: &Scenario<T>,
    opts: &SolverOptions<T>,
) -> Result<Prediction<T>> {
    predict_markets(dataset, params, scenario, opts, Availability::Observed, 0..dataset.markets().len())
}

/// As [`predict_volumes`] restricted to `markets` and with a chosen availability rule.
pub fn predict_markets<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    scenario: &Scenario<T>,
    opts: &SolverOptions<T>,
    availability: Availability,
    markets: impl IntoIterator<Item = usize>,
) -> Result<Prediction<T>> {
    let ids: Vec<usize> = markets.into_iter().collect();
    let solved: Vec<MarketPrediction<T>> = ids
        .par_iter()
        .map(|&t| solve_market(dataset, params, scenario, t, availability, opts))
        .collect::<Result<_>>()?;
    let n_alt = dataset.alternatives().len();
    let mut trips = vec![vec![T::zero(); n_alt]; dataset.markets().len()];
    let mut outside_trips = vec![T::zero(); dataset.markets().len()];
    let mut summary = PredictionSummary::default();
    for mp in &solved {
        let total = T::lit(dataset.markets()[mp.market].total_trips as f64);
        let mut inside = T::zero();
        for (k, &j) in mp.alternatives.iter().enumerate() {
            let v = mp.shares.inside[k] * total;
            trips[mp.market][j] = v;
            inside = inside + v;
        }
        outside_trips[mp.market] = total - inside;
        summary.max_iterations = summary.max_iterations.max(mp.shares.iterations);
        summary.total_iterations += mp.shares.iterations;
        summary.max_residual = summary.max_residual.max(mp.shares.residual.to_f64_lossy());
        summary.clamps += mp.clamps;
    }
    Ok(Prediction {
        markets: solved,
        trips,
        outside_trips,
        summary,
    })
}

impl<T: Scalar> Prediction<T> {
    pub fn trips(&self, market: usize, alternative: usize) -> T {
        self.trips[market][alternative]
    }

    /// Sums trips over (market, alternative) cells by key; `None` skips the cell.
    pub fn aggregate<K: Ord>(&self, key: impl Fn(usize, usize) -> Option<K>) -> BTreeMap<K, T> {
        let mut out = BTreeMap::new();
        for mp in &self.markets {
            for &j in &mp.alternatives {
                if let Some(k) = key(mp.market, j) {
                    let e = out.entry(k).or_insert(T::zero());
                    *e = *e + self.trips[mp.market][j];
                }
            }
        }
        out
    }

    pub fn by_mode(&self, dataset: &MarketDataset) -> BTreeMap<crate::data::Mode, T> {
        self.aggregate(|_, j| Some(dataset.alternatives()[j].mode))
    }

    pub fn by_destination_region(&self, dataset: &MarketDataset) -> BTreeMap<crate::data::RegionTag, T> {
        self.aggregate(|_, j| Some(dataset.destination(j).region))
    }

    pub fn by_origin_region(&self, dataset: &MarketDataset) -> BTreeMap<crate::data::RegionTag, T> {
        self.aggregate(|t, _| Some(dataset.origin(t).region))
    }
}
