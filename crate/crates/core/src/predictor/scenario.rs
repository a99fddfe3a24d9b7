//! Attribute changes and toll constants applied on top of the base data.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::data::{Alternative, AttributeTable, Attributes, MarketDataset, Mode, Period, Population};
use crate::params::{SegmentParams, TollAscs};
use crate::scalar::Scalar;

use super::utility::utility_with_dest_asc;

/// Which markets a lever reaches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MarketScope {
    #[default]
    All,
    /// Markets whose origin zone id is listed.
    Origins(BTreeSet<String>),
    /// Explicit market indices.
    Markets(BTreeSet<usize>),
}

impl MarketScope {
    pub fn contains(&self, dataset: &MarketDataset, market: usize) -> bool {
        match self {
            MarketScope::All => true,
            MarketScope::Origins(ids) => ids.contains(&dataset.origin(market).id),
            MarketScope::Markets(set) => set.contains(&market),
        }
    }
}

/// A policy state. The default value changes nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T = f64> {
    /// Dollars added to the cost of tolled trips entering the cordon.
    pub toll_schedule: BTreeMap<(Mode, Period), T>,
    /// Multiplier on auto travel time for cordon-bound trips.
    pub crz_auto_time_factor: T,
    /// Minutes added to transit wait (negative is a reduction).
    pub transit_wait_delta: T,
    pub wait_scope: MarketScope,
    /// Dollars added to transit fares by population (negative is a discount).
    pub transit_fare_delta: BTreeMap<Population, T>,
    pub fare_scope: MarketScope,
    pub toll_asc_active: bool,
    /// Replacement attribute table, same shape as the dataset's.
    pub attribute_overrides: Option<Arc<AttributeTable>>,
}

impl<T: Scalar> Default for Scenario<T> {
    fn default() -> Self {
        Self {
            toll_schedule: BTreeMap::new(),
            crz_auto_time_factor: T::one(),
            transit_wait_delta: T::zero(),
            wait_scope: MarketScope::All,
            transit_fare_delta: BTreeMap::new(),
            fare_scope: MarketScope::All,
            toll_asc_active: false,
            attribute_overrides: None,
        }
    }
}

/// Car rates apply to driving and carpool; FHV pays a flat rate in both periods.
pub fn cordon_toll_schedule<T: Scalar>(peak_car: T, overnight_car: T, fhv: T) -> BTreeMap<(Mode, Period), T> {
    let mut m = BTreeMap::new();
    for mode in [Mode::Driving, Mode::Carpool] {
        m.insert((mode, Period::Peak), peak_car);
        m.insert((mode, Period::Overnight), overnight_car);
    }
    m.insert((Mode::Fhv, Period::Peak), fhv);
    m.insert((Mode::Fhv, Period::Overnight), fhv);
    m
}

/// The per-market part of a scenario, resolved once per market.
#[derive(Debug, Clone, Copy)]
pub struct MarketAdjustments<T> {
    pub period: Period,
    pub origin: usize,
    pub origin_is_nyc: bool,
    pub wait_delta: Option<T>,
    pub fare_delta: Option<T>,
}

/// Attributes after the scenario, plus what happened on the way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedCell<T> {
    pub attrs: Attributes<T>,
    pub toll_applies: bool,
    pub clamps: usize,
}

impl<T: Scalar> Scenario<T> {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn for_market(&self, dataset: &MarketDataset, market: usize) -> MarketAdjustments<T> {
        let m = &dataset.markets()[market];
        let wait_delta = (self.transit_wait_delta != T::zero() && self.wait_scope.contains(dataset, market))
            .then_some(self.transit_wait_delta);
        let fare_delta = self
            .transit_fare_delta
            .get(&m.segment.population)
            .copied()
            .filter(|d| *d != T::zero() && self.fare_scope.contains(dataset, market));
        MarketAdjustments {
            period: m.segment.period,
            origin: m.origin,
            origin_is_nyc: dataset.zones()[m.origin].is_nyc,
            wait_delta,
            fare_delta,
        }
    }

    /// Base (or overridden) attributes of a cell.
    pub fn base_attributes<'a>(
        &'a self,
        dataset: &'a MarketDataset,
        market: usize,
        alternative: usize,
    ) -> Option<&'a Attributes> {
        match &self.attribute_overrides {
            Some(table) => table[market][alternative].as_ref(),
            None => dataset.attribute(market, alternative),
        }
    }

    /// Applies tolls, cordon speed-up and transit levers to one cell. Times
    /// and costs driven below zero are clamped at zero.
    pub fn apply(&self, adj: &MarketAdjustments<T>, alt: &Alternative, base: &Attributes) -> AppliedCell<T> {
        let mut x: Attributes<T> = base.cast();
        let mut clamps = 0;
        let toll_applies = base.toll_flag && base.crz_dest && adj.origin != alt.destination;
        if toll_applies {
            if let Some(&rate) = self.toll_schedule.get(&(alt.mode, adj.period)) {
                if rate != T::zero() {
                    x.cost = x.cost + rate;
                }
            }
        }
        if base.crz_dest && alt.mode.is_auto() && self.crz_auto_time_factor != T::one() {
            x.tt = x.tt * self.crz_auto_time_factor;
        }
        if alt.mode == Mode::Transit {
            if let Some(d) = adj.wait_delta {
                x.wait = clamp(x.wait + d, &mut clamps);
            }
            if let Some(d) = adj.fare_delta {
                x.cost = clamp(x.cost + d, &mut clamps);
            }
        }
        if clamps > 0 {
            log::trace!("clamped {clamps} attribute(s) at zero for {:?}", alt);
        }
        AppliedCell {
            attrs: x,
            toll_applies,
            clamps,
        }
    }
}

fn clamp<T: Scalar>(v: T, clamps: &mut usize) -> T {
    if v < T::zero() {
        *clamps += 1;
        T::zero()
    } else {
        v
    }
}

/// Post-implementation utility: base utility on the changed attributes plus
/// the toll constants when the scenario switches them on.
pub fn post_utility<T: Scalar>(
    p: &SegmentParams<T>,
    toll: &TollAscs<T>,
    adj: &MarketAdjustments<T>,
    alt: &Alternative,
    dest_asc: T,
    cell: &AppliedCell<T>,
    toll_asc_active: bool,
) -> T {
    let mut v = utility_with_dest_asc(p, adj.origin_is_nyc, alt.mode, dest_asc, &cell.attrs);
    if toll_asc_active {
        if cell.toll_applies {
            v = v + match alt.mode {
                Mode::Driving => toll.driving,
                Mode::Fhv => toll.fhv,
                Mode::Carpool => toll.carpool,
                _ => T::zero(),
            };
        }
        if cell.attrs.crz_dest {
            v = v + toll.crz;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Market, Purpose, RegionTag, Segment, Zone};
    use approx::assert_abs_diff_eq;

    fn dataset() -> MarketDataset {
        let zones = vec![
            Zone::new("crz", RegionTag::Crz),
            Zone::new("nassau", RegionTag::NysOther),
        ];
        let seg = Segment::new(Population::NotLowIncome, Purpose::Commute, Period::Peak);
        let markets = vec![
            Market {
                segment: seg,
                origin: 1,
                total_trips: 100,
            },
            Market {
                segment: seg,
                origin: 0,
                total_trips: 100,
            },
        ];
        let alts = vec![
            Alternative {
                mode: Mode::Driving,
                destination: 0,
            },
            Alternative {
                mode: Mode::Transit,
                destination: 0,
            },
        ];
        let drive = Attributes {
            tt: 23.0,
            cost: 2.0,
            toll_flag: true,
            crz_dest: true,
            ..Default::default()
        };
        let transit = Attributes {
            tt: 40.0,
            cost: 2.9,
            access: 5.0,
            egress: 3.0,
            wait: 1.5,
            ivt: 30.0,
            transfers: 1.0,
            toll_flag: false,
            crz_dest: true,
        };
        let attrs = vec![vec![Some(drive), Some(transit)]; 2];
        MarketDataset::from_parts(zones, markets, alts, attrs, vec![vec![10, 10]; 2]).unwrap()
    }

    fn params() -> SegmentParams<f64> {
        let mut p = SegmentParams::zero();
        p.auto_tt = -0.033;
        p.cost = -0.147;
        p.wait = -0.104;
        p.dest_asc.insert("crz".into(), -3.088);
        p
    }

    fn utility(d: &MarketDataset, s: &Scenario<f64>, toll: &TollAscs<f64>, t: usize, j: usize) -> f64 {
        let adj = s.for_market(d, t);
        let alt = d.alternatives()[j];
        let cell = s.apply(&adj, &alt, d.attribute(t, j).unwrap());
        post_utility(&params(), toll, &adj, &alt, -3.088, &cell, s.toll_asc_active)
    }

    #[test]
    fn identity_scenario_is_bitwise_neutral() {
        let d = dataset();
        let s = Scenario::<f64>::identity();
        let p = params();
        for t in 0..2 {
            for j in 0..2 {
                let pre = utility_with_dest_asc(&p, false, d.alternatives()[j].mode, -3.088, d.attribute(t, j).unwrap());
                let toll = TollAscs::from_array([-1.0, -1.0, -1.0, -1.0]);
                assert_eq!(utility(&d, &s, &toll, t, j).to_bits(), pre.to_bits());
            }
        }
    }

    #[test]
    fn peak_toll_and_constants_shift_driving() {
        let d = dataset();
        let toll = TollAscs::from_array([-0.287, -0.224, -0.214, -0.182]);
        let pre = utility(&d, &Scenario::identity(), &toll, 0, 0);
        let post = Scenario {
            toll_schedule: cordon_toll_schedule(9.0, 2.25, 1.5),
            toll_asc_active: true,
            ..Scenario::default()
        };
        let dv = utility(&d, &post, &toll, 0, 0) - pre;
        assert_abs_diff_eq!(dv, -0.147 * 9.0 - 0.287 - 0.182, epsilon = 1e-12);
        assert_abs_diff_eq!(dv, -1.792, epsilon = 1e-12);
        // Transit to the cordon picks up only the CRZ constant.
        let dv_transit = utility(&d, &post, &toll, 0, 1) - utility(&d, &Scenario::identity(), &toll, 0, 1);
        assert_abs_diff_eq!(dv_transit, -0.182, epsilon = 1e-12);
    }

    #[test]
    fn intra_cordon_trips_are_not_tolled() {
        let d = dataset();
        let s = Scenario {
            toll_schedule: cordon_toll_schedule(9.0, 2.25, 1.5),
            ..Scenario::default()
        };
        let adj = s.for_market(&d, 1);
        let cell = s.apply(&adj, &d.alternatives()[0], d.attribute(1, 0).unwrap());
        assert!(!cell.toll_applies);
        assert_eq!(cell.attrs.cost, 2.0);
    }

    #[test]
    fn speed_factor_scales_auto_time() {
        let d = dataset();
        let s = Scenario {
            crz_auto_time_factor: 1.0 / 1.15,
            ..Scenario::default()
        };
        let adj = s.for_market(&d, 0);
        let cell = s.apply(&adj, &d.alternatives()[0], d.attribute(0, 0).unwrap());
        assert_abs_diff_eq!(cell.attrs.tt, 20.0, epsilon = 1e-12);
        let transit = s.apply(&adj, &d.alternatives()[1], d.attribute(0, 1).unwrap());
        assert_eq!(transit.attrs.tt, 40.0);
    }

    #[test]
    fn transit_levers_clamp_at_zero_and_respect_scope() {
        let d = dataset();
        let mut fares = BTreeMap::new();
        fares.insert(Population::NotLowIncome, -5.0);
        let s = Scenario {
            transit_wait_delta: -2.0,
            wait_scope: MarketScope::Origins(["nassau".to_string()].into()),
            transit_fare_delta: fares,
            ..Scenario::default()
        };
        let adj = s.for_market(&d, 0);
        let cell = s.apply(&adj, &d.alternatives()[1], d.attribute(0, 1).unwrap());
        assert_eq!(cell.attrs.wait, 0.0);
        assert_eq!(cell.attrs.cost, 0.0);
        assert_eq!(cell.clamps, 2);
        // Out of the wait scope: only the fare lever applies.
        let adj = s.for_market(&d, 1);
        let cell = s.apply(&adj, &d.alternatives()[1], d.attribute(1, 1).unwrap());
        assert_eq!(cell.attrs.wait, 1.5);
        assert_eq!(cell.clamps, 1);
    }
}
