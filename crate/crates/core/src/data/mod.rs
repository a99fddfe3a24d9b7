//! Domain types, tabular IO and the two-dimensional nesting structure.
//!
//! Individual heterogeneity within a market is not modelled: every traveller
//! in a market shares the same systematic utility.

mod io;
mod nesting;
mod types;

use std::collections::{BTreeSet, HashMap};

pub use io::{load_attribute_overrides, load_dataset, write_dataset, DatasetPaths};
pub use nesting::{Choice, NestingDimension, NestingStructure};
pub use types::{
    Alternative, AttributeTable, Attributes, Market, Mode, Period, Population, Purpose, RegionTag,
    Segment, Zone,
};

use crate::error::{Error, Result};

/// Immutable, cross-referenced input data.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    zones: Vec<Zone>,
    markets: Vec<Market>,
    alternatives: Vec<Alternative>,
    attributes: AttributeTable,
    trips: Vec<Vec<u64>>,
    nesting: NestingStructure,
    folded_outside_rows: usize,
}

impl MarketDataset {
    /// Validates and assembles a dataset. `attributes` and `trips` are indexed
    /// `[market][alternative]`.
    pub fn from_parts(
        zones: Vec<Zone>,
        markets: Vec<Market>,
        alternatives: Vec<Alternative>,
        attributes: AttributeTable,
        trips: Vec<Vec<u64>>,
    ) -> Result<Self> {
        validate_zones(&zones)?;
        let mut seen = BTreeSet::new();
        for m in &markets {
            if m.origin >= zones.len() {
                return Err(Error::Inconsistent(format!("market origin index {} out of range", m.origin)));
            }
            if !seen.insert((m.segment, m.origin)) {
                return Err(Error::Inconsistent(format!(
                    "duplicate market {} from {}",
                    m.segment, zones[m.origin].id
                )));
            }
        }
        let mut alt_seen = BTreeSet::new();
        for a in &alternatives {
            if a.destination >= zones.len() {
                return Err(Error::Inconsistent("alternative destination out of range".into()));
            }
            if zones[a.destination].region.is_origin_only() {
                return Err(Error::Inconsistent(format!(
                    "zone {} is origin-only and cannot be a destination",
                    zones[a.destination].id
                )));
            }
            if !alt_seen.insert(*a) {
                return Err(Error::Inconsistent(format!(
                    "duplicate alternative {} to {}",
                    a.mode, zones[a.destination].id
                )));
            }
        }
        if attributes.len() != markets.len() || trips.len() != markets.len() {
            return Err(Error::Inconsistent("attribute/trip tables do not match market count".into()));
        }
        for (t, m) in markets.iter().enumerate() {
            if attributes[t].len() != alternatives.len() || trips[t].len() != alternatives.len() {
                return Err(Error::Inconsistent("attribute/trip rows do not match alternative count".into()));
            }
            let inside: u64 = trips[t].iter().sum();
            if inside > m.total_trips {
                return Err(Error::Inconsistent(format!(
                    "market {} from {}: inside trips {} exceed total {}",
                    m.segment, zones[m.origin].id, inside, m.total_trips
                )));
            }
            for (j, a) in alternatives.iter().enumerate() {
                match &attributes[t][j] {
                    Some(x) => validate_attributes(x, a, &zones).map_err(|reason| {
                        Error::Inconsistent(format!(
                            "market {} from {}, {} to {}: {}",
                            m.segment, zones[m.origin].id, a.mode, zones[a.destination].id, reason
                        ))
                    })?,
                    None if trips[t][j] > 0 => {
                        return Err(Error::MissingAttributes {
                            market: format!("{} from {}", m.segment, zones[m.origin].id),
                            alternative: format!("{} to {}", a.mode, zones[a.destination].id),
                        })
                    }
                    None => {}
                }
            }
        }
        let nesting = NestingStructure::by_mode_and_destination(&alternatives, &zones);
        Ok(Self {
            zones,
            markets,
            alternatives,
            attributes,
            trips,
            nesting,
            folded_outside_rows: 0,
        })
    }

    pub(crate) fn with_folded_rows(mut self, n: usize) -> Self {
        self.folded_outside_rows = n;
        self
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn markets(&self) -> &[Market] {
        &self.markets
    }

    pub fn alternatives(&self) -> &[Alternative] {
        &self.alternatives
    }

    pub fn attributes(&self) -> &AttributeTable {
        &self.attributes
    }

    pub fn attribute(&self, market: usize, alternative: usize) -> Option<&Attributes> {
        self.attributes[market][alternative].as_ref()
    }

    pub fn trips(&self, market: usize, alternative: usize) -> u64 {
        self.trips[market][alternative]
    }

    pub fn market_trips(&self, market: usize) -> &[u64] {
        &self.trips[market]
    }

    pub fn inside_trips(&self, market: usize) -> u64 {
        self.trips[market].iter().sum()
    }

    /// Total minus inside trips; never negative for a validated dataset.
    pub fn outside_trips(&self, market: usize) -> u64 {
        self.markets[market].total_trips - self.inside_trips(market)
    }

    pub fn share(&self, market: usize, alternative: usize) -> f64 {
        self.trips[market][alternative] as f64 / self.markets[market].total_trips as f64
    }

    pub fn outside_share(&self, market: usize) -> f64 {
        self.outside_trips(market) as f64 / self.markets[market].total_trips as f64
    }

    pub fn nesting(&self) -> &NestingStructure {
        &self.nesting
    }

    /// Share rows whose destination was origin-only and were counted as outside trips.
    pub fn folded_outside_rows(&self) -> usize {
        self.folded_outside_rows
    }

    /// Distinct segments, sorted.
    pub fn segments(&self) -> Vec<Segment> {
        let set: BTreeSet<Segment> = self.markets.iter().map(|m| m.segment).collect();
        set.into_iter().collect()
    }

    pub fn markets_of(&self, segment: Segment) -> impl Iterator<Item = usize> + '_ {
        self.markets
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.segment == segment)
            .map(|(t, _)| t)
    }

    pub fn origin(&self, market: usize) -> &Zone {
        &self.zones[self.markets[market].origin]
    }

    pub fn destination(&self, alternative: usize) -> &Zone {
        &self.zones[self.alternatives[alternative].destination]
    }

    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zones.iter().position(|z| z.id == id)
    }

    /// Destination zone ids in alternative order, deduplicated.
    pub fn destination_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for a in &self.alternatives {
            if seen.insert(a.destination) {
                out.push(self.zones[a.destination].id.clone());
            }
        }
        out
    }

    pub(crate) fn market_index(&self) -> HashMap<(Segment, usize), usize> {
        self.markets
            .iter()
            .enumerate()
            .map(|(t, m)| ((m.segment, m.origin), t))
            .collect()
    }

    pub fn market_label(&self, market: usize) -> String {
        let m = &self.markets[market];
        format!("{} from {}", m.segment, self.zones[m.origin].id)
    }

    pub fn alternative_label(&self, alternative: usize) -> String {
        let a = &self.alternatives[alternative];
        format!("{} to {}", a.mode, self.zones[a.destination].id)
    }
}

fn validate_zones(zones: &[Zone]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for z in zones {
        if !ids.insert(z.id.as_str()) {
            return Err(Error::Inconsistent(format!("duplicate zone id {}", z.id)));
        }
        if z.is_crz && !z.is_nyc {
            return Err(Error::Inconsistent(format!("zone {} is CRZ but not NYC", z.id)));
        }
        if (z.region == RegionTag::Crz) != z.is_crz {
            return Err(Error::Inconsistent(format!(
                "zone {}: region {} disagrees with is_crz={}",
                z.id, z.region, z.is_crz
            )));
        }
        if z.region.is_nyc() != z.is_nyc {
            return Err(Error::Inconsistent(format!(
                "zone {}: region {} disagrees with is_nyc={}",
                z.id, z.region, z.is_nyc
            )));
        }
    }
    Ok(())
}

pub(crate) fn validate_attributes(
    x: &Attributes,
    alt: &Alternative,
    zones: &[Zone],
) -> std::result::Result<(), String> {
    let values = [
        ("tt_min", x.tt),
        ("cost_usd", x.cost),
        ("access_min", x.access),
        ("egress_min", x.egress),
        ("wait_min", x.wait),
        ("ivt_min", x.ivt),
        ("transfers", x.transfers),
    ];
    for (name, v) in values {
        if !v.is_finite() || v < 0.0 {
            return Err(format!("{name} = {v} must be finite and non-negative"));
        }
    }
    if alt.mode != Mode::Transit
        && (x.access != 0.0 || x.egress != 0.0 || x.wait != 0.0 || x.ivt != 0.0 || x.transfers != 0.0)
    {
        return Err("non-transit alternative has transit components".into());
    }
    if x.toll_flag && !alt.mode.is_auto() {
        return Err(format!("toll_flag set for untolled mode {}", alt.mode));
    }
    if x.crz_dest != zones[alt.destination].is_crz {
        return Err("crz_dest_flag disagrees with destination zone".into());
    }
    Ok(())
}
