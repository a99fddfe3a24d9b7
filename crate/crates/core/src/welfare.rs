//! Value of time, logsum welfare, compensating variation and toll revenue.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{MarketDataset, Mode, Period, Population, RegionTag, Segment};
use crate::error::{Error, Result};
use crate::params::{ParameterSet, PValues, SegmentParams};
use crate::predictor::{solve_market, Availability, Prediction, Scenario, SolverOptions};
use crate::scalar::Scalar;

/// Travel-time attribute whose value of time is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeComponent {
    AutoTt,
    Access,
    Egress,
    Wait,
    Ivt,
    NonAutoTt,
}

impl TimeComponent {
    pub const ALL: [TimeComponent; 6] = [
        TimeComponent::AutoTt,
        TimeComponent::Access,
        TimeComponent::Egress,
        TimeComponent::Wait,
        TimeComponent::Ivt,
        TimeComponent::NonAutoTt,
    ];

    /// Base parameter name; the NYC interaction appends `_nyc`.
    pub fn parameter(self) -> &'static str {
        match self {
            TimeComponent::AutoTt => "theta_auto_tt",
            TimeComponent::Access => "theta_at",
            TimeComponent::Egress => "theta_et",
            TimeComponent::Wait => "theta_wt",
            TimeComponent::Ivt => "theta_ivt",
            TimeComponent::NonAutoTt => "theta_nonauto_tt",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeComponent::AutoTt => "auto_tt",
            TimeComponent::Access => "access",
            TimeComponent::Egress => "egress",
            TimeComponent::Wait => "wait",
            TimeComponent::Ivt => "ivt",
            TimeComponent::NonAutoTt => "nonauto_tt",
        }
    }
}

impl fmt::Display for TimeComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which of the four coefficients behind a value of time are significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VotSignificance {
    pub time: bool,
    pub cost: bool,
    pub time_nyc: bool,
    pub cost_nyc: bool,
}

impl VotSignificance {
    pub const ALL: VotSignificance = VotSignificance {
        time: true,
        cost: true,
        time_nyc: true,
        cost_nyc: true,
    };

    /// Significance at `alpha` from estimated p-values; missing entries count as insignificant.
    pub fn from_p_values(p: &PValues, segment: Segment, component: TimeComponent, alpha: f64) -> Self {
        let sig = |name: &str| p.get(&(segment, name.to_string())).is_some_and(|&v| v < alpha);
        let t = component.parameter();
        VotSignificance {
            time: sig(t),
            cost: sig("theta_cost"),
            time_nyc: sig(&format!("{t}_nyc")),
            cost_nyc: sig("theta_cost_nyc"),
        }
    }
}

/// Dollars per hour traded for one component's travel time.
///
/// Absent when the base time or cost coefficient is insignificant. An
/// insignificant NYC interaction contributes nothing.
pub fn value_of_time<T: Scalar>(
    p: &SegmentParams<T>,
    component: TimeComponent,
    nyc: bool,
    significance: VotSignificance,
) -> Result<Option<T>> {
    if !significance.time || !significance.cost {
        return Ok(None);
    }
    let base = component.parameter();
    let get = |name: &str| p.get(name).unwrap_or_else(T::zero);
    let mut time = get(base);
    let mut cost = p.cost;
    if nyc {
        if significance.time_nyc {
            time = time + get(&format!("{base}_nyc"));
        }
        if significance.cost_nyc {
            cost = cost + p.cost_nyc;
        }
    }
    if cost == T::zero() {
        return Err(Error::ZeroCostParameter);
    }
    Ok(Some(T::lit(60.0) * time / cost))
}

/// One row of a value-of-time table.
#[derive(Debug, Clone, PartialEq)]
pub struct VotRow {
    pub segment: Segment,
    pub component: TimeComponent,
    pub nyc: bool,
    pub vot: Option<f64>,
}

/// Values of time for every segment, component and NYC flag.
pub fn vot_table(params: &ParameterSet<f64>, p_values: Option<&PValues>, alpha: f64) -> Result<Vec<VotRow>> {
    let mut rows = Vec::new();
    for (&segment, p) in &params.segments {
        for component in TimeComponent::ALL {
            let sig = match p_values {
                Some(pv) => VotSignificance::from_p_values(pv, segment, component, alpha),
                None => VotSignificance::ALL,
            };
            for nyc in [false, true] {
                rows.push(VotRow {
                    segment,
                    component,
                    nyc,
                    vot: value_of_time(p, component, nyc, sig)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Expected maximum utility of a market under a scenario, with the unknown constant at zero.
pub fn consumer_surplus<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    market: usize,
    scenario: &Scenario<T>,
    opts: &SolverOptions<T>,
) -> Result<T> {
    let mp = solve_market(dataset, params, scenario, market, Availability::Observed, opts)?;
    Ok(-mp.shares.outside.ln())
}

/// Dollars per trip from a logsum change, with the market's cost coefficient.
pub fn cv_from_cs<T: Scalar>(cs_pre: T, cs_post: T, theta_cost: T) -> Result<T> {
    if theta_cost == T::zero() {
        return Err(Error::ZeroCostParameter);
    }
    Ok(-(cs_post - cs_pre) / theta_cost)
}

/// Cost coefficient of a market, NYC interaction included.
pub fn market_cost_coefficient<T: Scalar>(dataset: &MarketDataset, params: &ParameterSet<T>, market: usize) -> Result<T> {
    let m = &dataset.markets()[market];
    Ok(params.segment(m.segment)?.effective_cost(dataset.origin(market).is_nyc))
}

/// Per-trip and per-day compensating variation of moving from `pre` to `post`.
pub fn compensating_variation<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    market: usize,
    pre: &Scenario<T>,
    post: &Scenario<T>,
    opts: &SolverOptions<T>,
) -> Result<(T, T)> {
    let theta = market_cost_coefficient(dataset, params, market)?;
    let a = consumer_surplus(dataset, params, market, pre, opts)?;
    let b = consumer_surplus(dataset, params, market, post, opts)?;
    let per_trip = cv_from_cs(a, b, theta)?;
    Ok((per_trip, per_trip * T::lit(dataset.markets()[market].total_trips as f64)))
}

/// Welfare of one market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketWelfare<T> {
    pub market: usize,
    pub cs_pre: T,
    pub cs_post: T,
    pub cv_per_trip: T,
    pub cv_per_day: T,
    pub trips: f64,
}

/// Summed CV and trips over a set of markets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub cv_per_day: f64,
    pub trips: f64,
    pub markets: usize,
}

impl Aggregate {
    pub fn add(&mut self, cv_per_day: f64, trips: f64) {
        self.cv_per_day += cv_per_day;
        self.trips += trips;
        self.markets += 1;
    }

    /// Average CV per trip; zero when there are no trips.
    pub fn per_trip(&self) -> f64 {
        if self.trips > 0.0 {
            self.cv_per_day / self.trips
        } else {
            0.0
        }
    }
}

/// Per-market welfare with its standard aggregations.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport<T> {
    pub markets: Vec<MarketWelfare<T>>,
    pub by_origin: BTreeMap<String, Aggregate>,
    pub by_segment: BTreeMap<Segment, Aggregate>,
    pub by_population: BTreeMap<Population, Aggregate>,
    pub by_region: BTreeMap<RegionTag, Aggregate>,
    pub total: Aggregate,
}

impl<T: Scalar> WelfareReport<T> {
    /// Sums the markets selected by `keep`, in market order.
    pub fn aggregate_where(&self, keep: impl Fn(usize) -> bool) -> Aggregate {
        let mut a = Aggregate::default();
        for m in self.markets.iter().filter(|m| keep(m.market)) {
            a.add(m.cv_per_day.to_f64_lossy(), m.trips);
        }
        a
    }
}

/// Welfare of every market from `pre` to `post`; markets are evaluated in parallel.
pub fn welfare_report<T: Scalar>(
    dataset: &MarketDataset,
    params: &ParameterSet<T>,
    pre: &Scenario<T>,
    post: &Scenario<T>,
    opts: &SolverOptions<T>,
) -> Result<WelfareReport<T>> {
    let markets: Vec<MarketWelfare<T>> = (0..dataset.markets().len())
        .into_par_iter()
        .map(|t| {
            let theta = market_cost_coefficient(dataset, params, t)?;
            let cs_pre = consumer_surplus(dataset, params, t, pre, opts)?;
            let cs_post = consumer_surplus(dataset, params, t, post, opts)?;
            let cv_per_trip = cv_from_cs(cs_pre, cs_post, theta)?;
            let trips = dataset.markets()[t].total_trips as f64;
            Ok(MarketWelfare {
                market: t,
                cs_pre,
                cs_post,
                cv_per_trip,
                cv_per_day: cv_per_trip * T::lit(trips),
                trips,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = WelfareReport {
        markets: Vec::new(),
        by_origin: BTreeMap::new(),
        by_segment: BTreeMap::new(),
        by_population: BTreeMap::new(),
        by_region: BTreeMap::new(),
        total: Aggregate::default(),
    };
    for m in &markets {
        let cv = m.cv_per_day.to_f64_lossy();
        let seg = dataset.markets()[m.market].segment;
        let origin = dataset.origin(m.market);
        report.by_origin.entry(origin.id.clone()).or_default().add(cv, m.trips);
        report.by_segment.entry(seg).or_default().add(cv, m.trips);
        report.by_population.entry(seg.population).or_default().add(cv, m.trips);
        report.by_region.entry(origin.region).or_default().add(cv, m.trips);
        report.total.add(cv, m.trips);
    }
    report.markets = markets;
    Ok(report)
}

/// Toll vehicle class of a mode; driving and carpool are passenger cars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VehicleClass {
    PassengerCar,
    ForHire,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 2] = [VehicleClass::PassengerCar, VehicleClass::ForHire];

    pub fn of(mode: Mode) -> Option<VehicleClass> {
        match mode {
            Mode::Driving | Mode::Carpool => Some(VehicleClass::PassengerCar),
            Mode::Fhv => Some(VehicleClass::ForHire),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::PassengerCar => "PassengerCar",
            VehicleClass::ForHire => "ForHire",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "PassengerCar" => Ok(VehicleClass::PassengerCar),
            "ForHire" | "FHV" => Ok(VehicleClass::ForHire),
            _ => Err(format!("unknown vehicle class `{s}`")),
        }
    }
}

/// Toll per entry by vehicle class and period.
#[derive(Debug, Clone, PartialEq)]
pub struct TollRateTable {
    pub rates: BTreeMap<(VehicleClass, Period), f64>,
    pub annualization_days: f64,
}

impl TollRateTable {
    /// Passenger cars at `peak_car` and `overnight_car`, for-hire trips at a flat `fhv`.
    pub fn cordon(peak_car: f64, overnight_car: f64, fhv: f64, annualization_days: f64) -> Self {
        let rates = [
            ((VehicleClass::PassengerCar, Period::Peak), peak_car),
            ((VehicleClass::PassengerCar, Period::Overnight), overnight_car),
            ((VehicleClass::ForHire, Period::Peak), fhv),
            ((VehicleClass::ForHire, Period::Overnight), fhv),
        ];
        TollRateTable {
            rates: rates.into_iter().collect(),
            annualization_days,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.annualization_days > 0.0) {
            return Err(Error::Usage("annualization_days must be positive".into()));
        }
        if let Some(((c, p), r)) = self.rates.iter().find(|(_, r)| !(**r >= 0.0)) {
            return Err(Error::Usage(format!("toll rate for {c}/{p} must be non-negative, got {r}")));
        }
        Ok(())
    }
}

/// Tolled trips per day by population, vehicle class and period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TollVolumes {
    pub trips: BTreeMap<(Population, VehicleClass, Period), f64>,
}

impl TollVolumes {
    pub fn add(&mut self, population: Population, class: VehicleClass, period: Period, trips: f64) {
        *self.trips.entry((population, class, period)).or_insert(0.0) += trips;
    }
}

/// Predicted trips that pay the toll: tolled cells bound for the cordon from another zone.
pub fn tolled_volumes<T: Scalar>(dataset: &MarketDataset, prediction: &Prediction<T>) -> TollVolumes {
    let mut v = TollVolumes::default();
    for mp in &prediction.markets {
        let m = &dataset.markets()[mp.market];
        for &j in &mp.alternatives {
            let alt = dataset.alternatives()[j];
            let Some(class) = VehicleClass::of(alt.mode) else { continue };
            let Some(x) = dataset.attribute(mp.market, j) else { continue };
            if x.toll_flag && x.crz_dest && m.origin != alt.destination {
                v.add(m.segment.population, class, m.segment.period, prediction.trips(mp.market, j).to_f64_lossy());
            }
        }
    }
    v
}

/// Annual revenue by cell with population and grand totals, in dollars.
#[derive(Debug, Clone, PartialEq)]
pub struct RevenueTable {
    pub cells: BTreeMap<(Population, VehicleClass, Period), RevenueCell>,
    pub by_population: BTreeMap<Population, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevenueCell {
    pub trips_per_day: f64,
    pub rate: f64,
    pub annual: f64,
}

/// Annual revenue: trips per day × rate × annualisation days, per cell.
pub fn toll_revenue(volumes: &TollVolumes, rates: &TollRateTable) -> Result<RevenueTable> {
    rates.validate()?;
    let mut cells = BTreeMap::new();
    let mut by_population: BTreeMap<Population, f64> = BTreeMap::new();
    let mut total = 0.0;
    for (&(pop, class, period), &trips) in &volumes.trips {
        if !(trips >= 0.0) {
            return Err(Error::Usage(format!("negative tolled volume for {pop}/{class}/{period}")));
        }
        let rate = *rates
            .rates
            .get(&(class, period))
            .ok_or_else(|| Error::MissingRate(format!("{class}/{period}")))?;
        let annual = trips * rate * rates.annualization_days;
        cells.insert(
            (pop, class, period),
            RevenueCell {
                trips_per_day: trips,
                rate,
                annual,
            },
        );
        *by_population.entry(pop).or_insert(0.0) += annual;
        total += annual;
    }
    Ok(RevenueTable {
        cells,
        by_population,
        total,
    })
}
