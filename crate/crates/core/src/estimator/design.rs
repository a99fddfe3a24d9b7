use std::fmt;
use std::str::FromStr;

use crate::data::{Attributes, MarketDataset, Mode, NestingStructure, Segment};
use crate::error::{Error, Result};
use crate::params::{dest_param_name, SegmentParams};
use crate::scalar::Scalar;

/// Which nesting columns enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelClass {
    Mnl,
    NlMode,
    NlDest,
    Ipdl,
}

impl ModelClass {
    pub const ALL: [ModelClass; 4] = [ModelClass::Mnl, ModelClass::NlMode, ModelClass::NlDest, ModelClass::Ipdl];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelClass::Mnl => "MNL",
            ModelClass::NlMode => "NL_mode",
            ModelClass::NlDest => "NL_dest",
            ModelClass::Ipdl => "IPDL",
        }
    }

    /// Nesting dimensions with a free `rho`.
    pub fn nesting_dims(self) -> &'static [usize] {
        match self {
            ModelClass::Mnl => &[],
            ModelClass::NlMode => &[NestingStructure::MODE],
            ModelClass::NlDest => &[NestingStructure::DESTINATION],
            ModelClass::Ipdl => &[NestingStructure::MODE, NestingStructure::DESTINATION],
        }
    }
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelClass::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model class `{s}` (expected MNL, NL_mode, NL_dest or IPDL)"))
    }
}

/// Regressors treated as endogenous under two-stage least squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndogenousSet {
    /// Cost, its NYC interaction and every nesting column.
    #[default]
    Default,
    /// Cost and its NYC interaction only.
    CostOnly,
}

impl EndogenousSet {
    pub fn contains(self, column: &str) -> bool {
        match column {
            "theta_cost" | "theta_cost_nyc" => true,
            "rho_mode" | "rho_dest" => self == EndogenousSet::Default,
            _ => false,
        }
    }
}

impl FromStr for EndogenousSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "default" => Ok(EndogenousSet::Default),
            "cost_only" => Ok(EndogenousSet::CostOnly),
            _ => Err(format!("unknown endogenous set `{s}` (expected default or cost_only)")),
        }
    }
}

/// Observed shares per market, either from trip counts or supplied directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareTable {
    inside: Vec<Vec<f64>>,
    outside: Vec<f64>,
}

impl ShareTable {
    pub fn from_counts(dataset: &MarketDataset) -> Self {
        let n = dataset.markets().len();
        ShareTable {
            inside: (0..n)
                .map(|t| (0..dataset.alternatives().len()).map(|j| dataset.share(t, j)).collect())
                .collect(),
            outside: (0..n).map(|t| dataset.outside_share(t)).collect(),
        }
    }

    pub fn from_parts(inside: Vec<Vec<f64>>, outside: Vec<f64>) -> Self {
        assert_eq!(inside.len(), outside.len());
        ShareTable { inside, outside }
    }

    pub fn share(&self, market: usize, alternative: usize) -> f64 {
        self.inside[market][alternative]
    }

    pub fn outside(&self, market: usize) -> f64 {
        self.outside[market]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Exogenous,
    Endogenous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column<T> {
    pub name: String,
    pub role: ColumnRole,
    pub values: Vec<T>,
}

/// Regression of log odds on attributes and nesting variables for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    pub segment: Segment,
    pub model_class: ModelClass,
    /// `(market, alternative)` of each row.
    pub rows: Vec<(usize, usize)>,
    pub y: Vec<T>,
    pub columns: Vec<Column<T>>,
    /// Zero-share cells with attributes that were left out.
    pub dropped_rows: usize,
    /// Markets left out because their outside share is zero.
    pub dropped_markets: Vec<usize>,
    /// Parameters whose column was identically zero; they are reported as 0.
    pub dropped_columns: Vec<String>,
    /// Destination zone ids whose constants the design carries.
    pub destinations: Vec<String>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column<T>> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Re-tags column roles for the given endogenous set.
    pub fn with_endogenous(mut self, set: EndogenousSet) -> Self {
        for c in &mut self.columns {
            c.role = if set.contains(&c.name) {
                ColumnRole::Endogenous
            } else {
                ColumnRole::Exogenous
            };
        }
        self
    }

    pub fn endogenous_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Endogenous)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Keeps only the rows whose index satisfies `keep`.
    pub fn filter_rows(mut self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&i| keep(i)).collect();
        self.rows = idx.iter().map(|&i| self.rows[i]).collect();
        self.y = idx.iter().map(|&i| self.y[i]).collect();
        for c in &mut self.columns {
            c.values = idx.iter().map(|&i| c.values[i]).collect();
        }
        self
    }

    /// Empty parameter vector carrying this design's destination constants.
    pub fn empty_params(&self) -> SegmentParams<T> {
        let mut p = SegmentParams::zero();
        for z in &self.destinations {
            p.dest_asc.insert(z.clone(), T::zero());
        }
        p
    }
}

/// Value of `name`'s regressor for one alternative, zero where the term is absent.
fn regressor(name: &str, mode: Mode, nyc: bool, x: &Attributes) -> f64 {
    let inter = |v: f64| if nyc { v } else { 0.0 };
    let auto = matches!(mode, Mode::Driving | Mode::Fhv | Mode::Carpool);
    let transit = mode == Mode::Transit;
    let priced = matches!(mode, Mode::Driving | Mode::Fhv | Mode::Transit);
    let active = mode.is_active();
    let on = |b: bool, v: f64| if b { v } else { 0.0 };
    match name {
        "theta_auto_tt" => on(auto, x.tt),
        "theta_auto_tt_nyc" => on(auto, inter(x.tt)),
        "theta_at" => on(transit, x.access),
        "theta_at_nyc" => on(transit, inter(x.access)),
        "theta_et" => on(transit, x.egress),
        "theta_et_nyc" => on(transit, inter(x.egress)),
        "theta_wt" => on(transit, x.wait),
        "theta_wt_nyc" => on(transit, inter(x.wait)),
        "theta_ivt" => on(transit, x.ivt),
        "theta_ivt_nyc" => on(transit, inter(x.ivt)),
        "theta_trans" => on(transit, x.transfers),
        "theta_nonauto_tt" => on(active, x.tt),
        "theta_nonauto_tt_nyc" => on(active, inter(x.tt)),
        "theta_cost" => on(priced, x.cost),
        "theta_cost_nyc" => on(priced, inter(x.cost)),
        "asc_driving" => on(mode == Mode::Driving, 1.0),
        "asc_transit" => on(transit, 1.0),
        "asc_fhv" => on(mode == Mode::Fhv, 1.0),
        "asc_biking" => on(mode == Mode::Biking, 1.0),
        "asc_walking" => on(mode == Mode::Walking, 1.0),
        _ => unreachable!("not an attribute regressor: {name}"),
    }
}

/// Assembles the log-odds regression of one segment.
///
/// Rows are the cells with a strictly positive share; markets with a zero
/// outside share are dropped whole. Columns that are identically zero are
/// removed and listed in `dropped_columns`.
pub fn build_design<T: Scalar>(
    dataset: &MarketDataset,
    shares: &ShareTable,
    segment: Segment,
    model_class: ModelClass,
) -> Result<DesignMatrix<T>> {
    let markets: Vec<usize> = dataset.markets_of(segment).collect();
    if markets.is_empty() {
        return Err(Error::EmptySegment(segment.to_string()));
    }
    let nesting = dataset.nesting();
    let destinations = dataset.destination_ids();
    let rho_names: Vec<&str> = model_class
        .nesting_dims()
        .iter()
        .map(|&h| if h == NestingStructure::MODE { "rho_mode" } else { "rho_dest" })
        .collect();
    let attr_names: Vec<&str> = SegmentParams::<T>::SCALAR_NAMES
        .iter()
        .copied()
        .filter(|n| !n.starts_with("rho_"))
        .collect();

    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); attr_names.len() + destinations.len() + rho_names.len()];
    let mut dropped_rows = 0;
    let mut dropped_markets = Vec::new();

    for &t in &markets {
        let s0 = shares.outside(t);
        if s0 <= 0.0 {
            log::warn!("market {} has no outside share and is dropped", dataset.market_label(t));
            dropped_markets.push(t);
            continue;
        }
        let nyc = dataset.origin(t).is_nyc;
        // Group share sums per dimension for this market.
        let group_sums: Vec<Vec<f64>> = model_class
            .nesting_dims()
            .iter()
            .map(|&h| {
                let d = nesting.dim(h);
                let mut sums = vec![0.0; d.groups().len()];
                for j in 0..dataset.alternatives().len() {
                    sums[d.group_of(j)] += shares.share(t, j);
                }
                sums
            })
            .collect();
        for (j, alt) in dataset.alternatives().iter().enumerate() {
            let Some(x) = dataset.attribute(t, j) else { continue };
            let s = shares.share(t, j);
            if s <= 0.0 {
                dropped_rows += 1;
                continue;
            }
            rows.push((t, j));
            y.push(T::lit((s / s0).ln()));
            for (k, name) in attr_names.iter().enumerate() {
                raw[k].push(regressor(name, alt.mode, nyc, x));
            }
            let dest = &dataset.zones()[alt.destination].id;
            for (k, z) in destinations.iter().enumerate() {
                raw[attr_names.len() + k].push(if z == dest { 1.0 } else { 0.0 });
            }
            for (k, &h) in model_class.nesting_dims().iter().enumerate() {
                let sum = group_sums[k][nesting.dim(h).group_of(j)];
                raw[attr_names.len() + destinations.len() + k].push((s / sum).ln());
            }
        }
    }

    let names: Vec<String> = attr_names
        .iter()
        .map(|s| s.to_string())
        .chain(destinations.iter().map(|z| dest_param_name(z)))
        .chain(rho_names.iter().map(|s| s.to_string()))
        .collect();
    let mut columns = Vec::new();
    let mut dropped_columns = Vec::new();
    for (name, values) in names.into_iter().zip(raw) {
        if values.iter().all(|&v| v == 0.0) {
            dropped_columns.push(name);
            continue;
        }
        let role = if EndogenousSet::Default.contains(&name) {
            ColumnRole::Endogenous
        } else {
            ColumnRole::Exogenous
        };
        columns.push(Column {
            name,
            role,
            values: values.into_iter().map(T::lit).collect(),
        });
    }
    if dropped_rows > 0 {
        log::info!("segment {segment}: {dropped_rows} zero-share cells left out of the regression");
    }
    Ok(DesignMatrix {
        segment,
        model_class,
        rows,
        y,
        columns,
        dropped_rows,
        dropped_markets,
        dropped_columns,
        destinations,
    })
}

/// Travel-time family averaged over other group members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentFamily {
    AutoTt,
    TransitIvt,
    NonAutoTt,
}

impl InstrumentFamily {
    pub const ALL: [InstrumentFamily; 3] = [InstrumentFamily::AutoTt, InstrumentFamily::TransitIvt, InstrumentFamily::NonAutoTt];

    pub fn as_str(self) -> &'static str {
        match self {
            InstrumentFamily::AutoTt => "auto_tt",
            InstrumentFamily::TransitIvt => "transit_ivt",
            InstrumentFamily::NonAutoTt => "nonauto_tt",
        }
    }

    /// The family's value for an alternative; zero for modes outside the family.
    pub fn value(self, mode: Mode, x: &Attributes) -> f64 {
        match self {
            InstrumentFamily::AutoTt if mode.is_auto() => x.tt,
            InstrumentFamily::TransitIvt if mode == Mode::Transit => x.ivt,
            InstrumentFamily::NonAutoTt if mode.is_active() => x.tt,
            _ => 0.0,
        }
    }
}

impl FromStr for InstrumentFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        InstrumentFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown instrument family `{s}`"))
    }
}

/// Excluded instruments aligned with a design's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruments<T> {
    pub names: Vec<String>,
    pub columns: Vec<Vec<T>>,
}

impl<T: Scalar> Instruments<T> {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn none() -> Self {
        Instruments {
            names: Vec::new(),
            columns: Vec::new(),
        }
    }
}

/// Group averages of other members' travel times, one column per family and dimension.
///
/// Members without attributes in the row's market are not averaged over;
/// a row with no other member gets 0.
pub fn build_instruments<T: Scalar>(
    design: &DesignMatrix<T>,
    dataset: &MarketDataset,
    families: &[InstrumentFamily],
    dims: &[usize],
) -> Instruments<T> {
    let nesting = dataset.nesting();
    let alts = dataset.alternatives();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for &f in families {
        for &h in dims {
            let d = nesting.dim(h);
            let col = design
                .rows
                .iter()
                .map(|&(t, j)| {
                    let (sum, n) = d
                        .members(d.group_of(j))
                        .iter()
                        .filter(|&&q| q != j)
                        .filter_map(|&q| dataset.attribute(t, q).map(|x| f.value(alts[q].mode, x)))
                        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                    T::lit(if n == 0 { 0.0 } else { sum / n as f64 })
                })
                .collect();
            names.push(format!("iv_{}_{}", f.as_str(), d.name));
            columns.push(col);
        }
    }
    Instruments { names, columns }
}
