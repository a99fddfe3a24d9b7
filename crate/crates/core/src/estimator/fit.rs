use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{MarketDataset, Segment};
use crate::error::{Error, Result};
use crate::linalg::{default_rank_tolerance, least_squares, Matrix, Qr};
use crate::params::{ParameterSet, PValues, SegmentParams, TollAscs};
use crate::predictor::{solve_market, Availability, Scenario, SolverOptions};
use crate::scalar::Scalar;

use super::design::{
    build_design, build_instruments, ColumnRole, DesignMatrix, EndogenousSet, InstrumentFamily, Instruments, ModelClass,
    ShareTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Ols,
    #[default]
    Tsls,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Tsls => "TSLS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "OLS" => Ok(Method::Ols),
            "TSLS" | "2SLS" => Ok(Method::Tsls),
            _ => Err(format!("unknown estimation method `{s}` (expected OLS or TSLS)")),
        }
    }
}

/// Fitted parameters of one segment with inference and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult<T> {
    pub segment: Segment,
    pub model_class: ModelClass,
    pub method: Method,
    pub params: SegmentParams<T>,
    /// Keyed by parameter name; dropped columns are absent.
    pub std_errors: BTreeMap<String, T>,
    pub p_values: BTreeMap<String, f64>,
    pub r2: f64,
    pub adj_r2: f64,
    /// `None` until computed, or when the fitted `rho` cannot be solved.
    pub mcfadden_r2: Option<f64>,
    pub n_obs: usize,
    pub n_trips: u64,
    pub dropped_rows: usize,
    pub dropped_markets: Vec<usize>,
    pub dropped_columns: Vec<String>,
    pub rho_valid: bool,
    pub residual_norm: f64,
    pub endogenous: Vec<String>,
    /// Excluded instruments that carry information beyond the exogenous regressors.
    pub effective_instruments: usize,
}

impl<T: Scalar> EstimationResult<T> {
    /// `p < alpha`; dropped or inference-free parameters are not significant.
    pub fn is_significant(&self, name: &str, alpha: f64) -> bool {
        self.p_values.get(name).is_some_and(|&p| p < alpha)
    }

    /// Parameter names in reporting order.
    pub fn names(&self) -> Vec<String> {
        self.params.names()
    }
}

fn two_sided_p(t: f64, dof: f64) -> f64 {
    if !t.is_finite() || dof <= 0.0 {
        return f64::NAN;
    }
    match StudentsT::new(0.0, 1.0, dof) {
        Ok(d) => 2.0 * (1.0 - d.cdf(t.abs())),
        Err(_) => f64::NAN,
    }
}

/// Fits a design by least squares.
///
/// Under two-stage least squares each endogenous column is replaced by its
/// projection on the exogenous columns and the excluded instruments; the
/// residual variance uses the structural residuals.
pub fn fit<T: Scalar>(design: &DesignMatrix<T>, instruments: &Instruments<T>, method: Method) -> Result<EstimationResult<T>> {
    let n = design.n_obs();
    let k = design.columns.len();
    let tol = default_rank_tolerance::<T>();
    let x = Matrix::from_columns(n, &design.columns.iter().map(|c| c.values.clone()).collect::<Vec<_>>());

    let endogenous: Vec<usize> = match method {
        Method::Ols => Vec::new(),
        Method::Tsls => (0..k).filter(|&c| design.columns[c].role == ColumnRole::Endogenous).collect(),
    };
    let mut effective_instruments = 0;
    let regressors = if endogenous.is_empty() {
        x.clone()
    } else {
        let exog: Vec<Vec<T>> = design
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Exogenous)
            .map(|c| c.values.clone())
            .collect();
        let exog_rank = Qr::factor(&Matrix::from_columns(n, &exog), tol).rank();
        let mut z = exog;
        z.extend(instruments.columns.iter().cloned());
        let zq = Qr::factor(&Matrix::from_columns(n, &z), tol);
        effective_instruments = zq.rank() - exog_rank;
        if effective_instruments < endogenous.len() {
            return Err(Error::UnderIdentified {
                instruments: effective_instruments,
                endogenous: endogenous.len(),
            });
        }
        let mut xhat = x.clone();
        for &c in &endogenous {
            let p = zq.project(x.column(c));
            xhat.column_mut(c).copy_from_slice(&p);
        }
        xhat
    };

    let ls = least_squares(&regressors, &design.y, tol).map_err(|cols| Error::RankDeficient {
        columns: cols.iter().map(|&c| design.columns[c].name.clone()).collect(),
    })?;
    let beta = ls.coefficients;
    let fitted = x.mul_vec(&beta);
    let resid: Vec<f64> = design
        .y
        .iter()
        .zip(&fitted)
        .map(|(&a, &b)| (a - b).to_f64_lossy())
        .collect();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let ybar = design.y.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n as f64;
    let sst: f64 = design.y.iter().map(|v| (v.to_f64_lossy() - ybar).powi(2)).sum();
    let dof = n as f64 - k as f64;
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN };
    let adj_r2 = if dof > 0.0 {
        1.0 - (1.0 - r2) * (n as f64 - 1.0) / dof
    } else {
        f64::NAN
    };
    let sigma2 = if dof > 0.0 { ssr / dof } else { f64::NAN };

    let mut params = design.empty_params();
    let mut std_errors = BTreeMap::new();
    let mut p_values = BTreeMap::new();
    for (c, col) in design.columns.iter().enumerate() {
        params.set(&col.name, beta[c]);
        let se = (sigma2 * ls.inverse_gram.get(c, c).to_f64_lossy()).sqrt();
        std_errors.insert(col.name.clone(), T::lit(se));
        p_values.insert(col.name.clone(), two_sided_p(beta[c].to_f64_lossy() / se, dof));
    }
    let rho_valid = params.rho_valid();
    if !rho_valid {
        log::warn!(
            "segment {}: fitted rho ({}, {}) outside the admissible region",
            design.segment,
            params.rho_mode,
            params.rho_dest
        );
    }
    Ok(EstimationResult {
        segment: design.segment,
        model_class: design.model_class,
        method,
        params,
        std_errors,
        p_values,
        r2,
        adj_r2,
        mcfadden_r2: None,
        n_obs: n,
        n_trips: 0,
        dropped_rows: design.dropped_rows,
        dropped_markets: design.dropped_markets.clone(),
        dropped_columns: design.dropped_columns.clone(),
        rho_valid,
        residual_norm: ssr.sqrt(),
        endogenous: endogenous.iter().map(|&c| design.columns[c].name.clone()).collect(),
        effective_instruments,
    })
}

/// McFadden pseudo R² against equal shares over each market's available options.
///
/// Log likelihoods weight log predicted shares by observed trip counts,
/// outside option included.
pub fn mcfadden_r2<T: Scalar>(
    params: &SegmentParams<T>,
    dataset: &MarketDataset,
    segment: Segment,
    opts: &SolverOptions<T>,
) -> Result<f64> {
    let mut set = ParameterSet::<T> {
        segments: BTreeMap::new(),
        toll: TollAscs::from_array([T::zero(); 4]),
    };
    set.segments.insert(segment, params.clone());
    let scenario = Scenario::<T>::identity();
    let mut ll = 0.0;
    let mut ll0 = 0.0;
    for t in dataset.markets_of(segment) {
        let mp = solve_market(dataset, &set, &scenario, t, Availability::Observed, opts)?;
        let options = mp.alternatives.len() as f64 + 1.0;
        let total = dataset.markets()[t].total_trips as f64;
        for (k, &j) in mp.alternatives.iter().enumerate() {
            let n = dataset.trips(t, j) as f64;
            if n > 0.0 {
                ll += n * mp.shares.inside[k].to_f64_lossy().ln();
            }
        }
        let n0 = dataset.outside_trips(t) as f64;
        if n0 > 0.0 {
            ll += n0 * mp.shares.outside.to_f64_lossy().ln();
        }
        ll0 -= total * options.ln();
    }
    Ok(if ll0 == 0.0 { 0.0 } else { 1.0 - ll / ll0 })
}

/// Attaches the McFadden R² and trip count to a fitted result.
pub fn fit_statistics<T: Scalar>(
    result: &mut EstimationResult<T>,
    dataset: &MarketDataset,
    opts: &SolverOptions<T>,
) -> Result<()> {
    result.n_trips = dataset
        .markets_of(result.segment)
        .filter(|t| !result.dropped_markets.contains(t))
        .map(|t| dataset.markets()[t].total_trips)
        .sum();
    result.mcfadden_r2 = if result.rho_valid {
        Some(mcfadden_r2(&result.params, dataset, result.segment, opts)?)
    } else {
        None
    };
    Ok(())
}

/// Estimation settings shared by every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub model_class: ModelClass,
    pub method: Method,
    pub endogenous: EndogenousSet,
    pub families: Vec<InstrumentFamily>,
    /// Nesting dimensions over which instruments are averaged.
    pub instrument_dims: Vec<usize>,
    pub fit_statistics: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            model_class: ModelClass::Ipdl,
            method: Method::Tsls,
            endogenous: EndogenousSet::Default,
            families: InstrumentFamily::ALL.to_vec(),
            instrument_dims: vec![0, 1],
            fit_statistics: true,
        }
    }
}

/// Builds, fits and scores one segment.
pub fn estimate_segment<T: Scalar>(
    dataset: &MarketDataset,
    shares: &ShareTable,
    segment: Segment,
    opts: &EstimateOptions,
) -> Result<EstimationResult<T>> {
    let design = build_design::<T>(dataset, shares, segment, opts.model_class)?.with_endogenous(opts.endogenous);
    let instruments = match opts.method {
        Method::Ols => Instruments::none(),
        Method::Tsls => build_instruments(&design, dataset, &opts.families, &opts.instrument_dims),
    };
    let mut result = fit(&design, &instruments, opts.method)?;
    if opts.fit_statistics {
        fit_statistics(&mut result, dataset, &SolverOptions::default())?;
    }
    Ok(result)
}

/// Estimates every segment in parallel; results are in segment order.
pub fn estimate_all<T: Scalar>(
    dataset: &MarketDataset,
    shares: &ShareTable,
    opts: &EstimateOptions,
) -> Result<Vec<EstimationResult<T>>> {
    dataset
        .segments()
        .par_iter()
        .map(|&g| estimate_segment(dataset, shares, g, opts))
        .collect()
}

/// Collects fitted segments into a parameter set (toll constants zero) with p-values.
pub fn collect_parameters<T: Scalar>(results: &[EstimationResult<T>]) -> (ParameterSet<T>, PValues) {
    let mut set = ParameterSet {
        segments: BTreeMap::new(),
        toll: TollAscs::from_array([T::zero(); 4]),
    };
    let mut pv = PValues::new();
    for r in results {
        set.segments.insert(r.segment, r.params.clone());
        for (k, &p) in &r.p_values {
            pv.insert((r.segment, k.clone()), p);
        }
    }
    (set, pv)
}
