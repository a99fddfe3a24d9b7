//! Seeded synthetic datasets with known parameters.
//!
//! Zones sit at random points around the cordon zone; distances drive every
//! travel time and most costs. An optional structural error ξ enters each
//! alternative's utility before shares are solved, and an optional cost
//! disturbance is correlated with ξ to make cost endogenous.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Alternative, Attributes, Market, MarketDataset, Mode, NestingStructure, Population, Purpose, Period, RegionTag, Segment, Zone};
use crate::error::{Error, Result};
use crate::estimator::ShareTable;
use crate::params::{ParameterSet, SegmentParams, TollAscs};
use crate::predictor::{solve_shares, utility_with_dest_asc, SolverOptions};

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn is_valid(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo >= 0.0 && self.hi >= self.lo
    }
}

/// Sampling ranges for the attribute generator.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRanges {
    /// Distance of a zone from the cordon, km.
    pub radius_km: Range,
    /// Trip length inside a zone, km.
    pub intrazonal_km: Range,
    pub auto_speed_kmh: Range,
    pub fhv_time_factor: Range,
    pub carpool_time_factor: Range,
    pub drive_cost_per_km: Range,
    pub parking_crz: Range,
    pub parking_other: Range,
    pub fhv_base_fare: Range,
    pub fhv_cost_per_km: Range,
    pub transit_speed_kmh: Range,
    pub transit_access: Range,
    pub transit_egress: Range,
    pub transit_wait: Range,
    pub transit_fare: Range,
    pub transit_fare_per_km: Range,
    pub max_transfers: u32,
    pub bike_speed_kmh: Range,
    pub walk_speed_kmh: Range,
    /// Biking is offered only up to this distance, km.
    pub max_bike_km: f64,
    /// Walking is offered only up to this distance, km.
    pub max_walk_km: f64,
}

impl Default for AttributeRanges {
    fn default() -> Self {
        AttributeRanges {
            radius_km: Range::new(2.0, 12.0),
            intrazonal_km: Range::new(0.5, 2.0),
            auto_speed_kmh: Range::new(15.0, 40.0),
            fhv_time_factor: Range::new(1.0, 1.25),
            carpool_time_factor: Range::new(1.05, 1.35),
            drive_cost_per_km: Range::new(0.2, 0.5),
            parking_crz: Range::new(8.0, 25.0),
            parking_other: Range::new(0.0, 10.0),
            fhv_base_fare: Range::new(2.5, 5.0),
            fhv_cost_per_km: Range::new(0.8, 1.8),
            transit_speed_kmh: Range::new(12.0, 30.0),
            transit_access: Range::new(2.0, 15.0),
            transit_egress: Range::new(2.0, 12.0),
            transit_wait: Range::new(2.0, 15.0),
            transit_fare: Range::new(2.0, 3.5),
            transit_fare_per_km: Range::new(0.0, 0.3),
            max_transfers: 2,
            bike_speed_kmh: Range::new(10.0, 18.0),
            walk_speed_kmh: Range::new(3.5, 5.5),
            max_bike_km: 15.0,
            max_walk_km: 5.0,
        }
    }
}

/// Everything needed to draw one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSpec {
    pub n_origin_zones: usize,
    pub n_dest_zones: usize,
    pub crz_zone_id: String,
    /// When set, destination zones are also the first origins.
    pub destinations_are_origins: bool,
    /// Regions cycled over for origin-only zones.
    pub origin_regions: Vec<RegionTag>,
    pub segments: Vec<Segment>,
    pub truth: ParameterSet<f64>,
    pub ranges: AttributeRanges,
    pub total_trips: Range,
    /// Standard deviation of the structural error ξ.
    pub noise_sd: f64,
    /// Correlation between the cost disturbance and ξ, in `[-1, 1]`.
    pub endogeneity_strength: f64,
    /// Standard deviation of the cost disturbance, dollars.
    pub cost_disturbance_sd: f64,
    pub seed: u64,
}

/// Destination zone ids for `n` destinations, cordon zone first.
pub fn destination_ids(n: usize, crz_zone_id: &str) -> Vec<String> {
    (0..n)
        .map(|k| if k == 0 { crz_zone_id.to_string() } else { format!("d{k}") })
        .collect()
}

/// Plausible parameters for one segment, varied slightly by segment.
pub fn default_segment_truth(segment: Segment, dest_ids: &[String]) -> SegmentParams<f64> {
    let s = 1.0 + 0.1 * segment.population.index() as f64 - 0.05 * segment.purpose.index() as f64;
    let mut p = SegmentParams {
        auto_tt: -0.030 * s,
        access: -0.045 * s,
        egress: -0.035 * s,
        wait: -0.050 * s,
        ivt: -0.020 * s,
        transfers: -0.25,
        nonauto_tt: -0.060 * s,
        cost: -0.150 / s,
        auto_tt_nyc: -0.015,
        access_nyc: -0.010,
        egress_nyc: -0.008,
        wait_nyc: -0.020,
        ivt_nyc: -0.012,
        nonauto_tt_nyc: -0.010,
        cost_nyc: 0.030,
        asc_driving: 0.6,
        asc_transit: 0.9,
        asc_fhv: -0.4,
        asc_biking: -1.2,
        asc_walking: 0.4,
        rho_mode: 0.3,
        rho_dest: 0.2,
        dest_asc: BTreeMap::new(),
    };
    for (k, z) in dest_ids.iter().enumerate() {
        p.dest_asc.insert(z.clone(), 0.5 - 0.3 * k as f64);
    }
    p
}

impl GenerationSpec {
    /// A spec with default ranges and truth for the given segments.
    pub fn standard(n_origin_zones: usize, n_dest_zones: usize, segments: Vec<Segment>, seed: u64) -> Self {
        let crz = "crz".to_string();
        let ids = destination_ids(n_dest_zones, &crz);
        let truth = ParameterSet {
            segments: segments.iter().map(|&g| (g, default_segment_truth(g, &ids))).collect(),
            toll: TollAscs::from_array([0.0; 4]),
        };
        GenerationSpec {
            n_origin_zones,
            n_dest_zones,
            crz_zone_id: crz,
            destinations_are_origins: true,
            origin_regions: EXTRA_ORIGIN_REGIONS.to_vec(),
            segments,
            truth,
            ranges: AttributeRanges::default(),
            total_trips: Range::new(2.0e6, 5.0e6),
            noise_sd: 0.0,
            endogeneity_strength: 0.0,
            cost_disturbance_sd: 1.0,
            seed,
        }
    }

    /// The first `n` segments in canonical order.
    pub fn first_segments(n: usize) -> Vec<Segment> {
        Segment::all().into_iter().take(n).collect()
    }

    /// Sets every segment's nesting parameters.
    pub fn with_rho(mut self, rho_mode: f64, rho_dest: f64) -> Self {
        for p in self.truth.segments.values_mut() {
            p.rho_mode = rho_mode;
            p.rho_dest = rho_dest;
        }
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Usage(format!("invalid generation spec: {msg}")));
        if self.n_dest_zones == 0 || self.n_origin_zones == 0 {
            return bad("zone counts must be positive");
        }
        if self.segments.is_empty() {
            return bad("no segments");
        }
        if self.origin_regions.is_empty() && (!self.destinations_are_origins || self.n_origin_zones > self.n_dest_zones) {
            return bad("origin_regions is empty");
        }
        if !(self.noise_sd >= 0.0) || !(self.cost_disturbance_sd >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.endogeneity_strength) {
            return bad("endogeneity_strength must lie in [-1, 1]");
        }
        if !self.total_trips.is_valid() || self.total_trips.lo < 1.0 {
            return bad("total_trips range must be positive");
        }
        let r = &self.ranges;
        let ranges = [
            r.radius_km,
            r.intrazonal_km,
            r.auto_speed_kmh,
            r.fhv_time_factor,
            r.carpool_time_factor,
            r.drive_cost_per_km,
            r.parking_crz,
            r.parking_other,
            r.fhv_base_fare,
            r.fhv_cost_per_km,
            r.transit_speed_kmh,
            r.transit_access,
            r.transit_egress,
            r.transit_wait,
            r.transit_fare,
            r.transit_fare_per_km,
            r.bike_speed_kmh,
            r.walk_speed_kmh,
        ];
        if !ranges.iter().all(|r| r.is_valid()) {
            return bad("attribute ranges must be finite, non-negative and ordered");
        }
        if [r.auto_speed_kmh, r.transit_speed_kmh, r.bike_speed_kmh, r.walk_speed_kmh]
            .iter()
            .any(|s| s.lo <= 0.0)
        {
            return bad("speeds must be positive");
        }
        for g in &self.segments {
            let p = self.truth.segment(*g)?;
            if !p.rho_valid() {
                return Err(Error::InvalidRho {
                    rho: p.rhos().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// A generated dataset with the truth that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: MarketDataset,
    pub truth: ParameterSet<f64>,
    /// Real-valued shares before rounding to trips.
    pub exact: ShareTable,
    /// Structural errors `[market][alternative]`.
    pub xi: Vec<Vec<f64>>,
}

const DEST_REGIONS: [RegionTag; 3] = [RegionTag::UpperManhattan, RegionTag::NycOther, RegionTag::NysOther];
const EXTRA_ORIGIN_REGIONS: [RegionTag; 3] = [RegionTag::Nj, RegionTag::NycOther, RegionTag::NysOther];

/// Draws a dataset from `spec`. Identical specs give identical datasets.
pub fn generate(spec: &GenerationSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = &spec.ranges;

    let dest_ids = destination_ids(spec.n_dest_zones, &spec.crz_zone_id);
    let mut zones: Vec<Zone> = dest_ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let region = if k == 0 {
                RegionTag::Crz
            } else {
                DEST_REGIONS[(k - 1) % DEST_REGIONS.len()]
            };
            Zone::new(id.clone(), region)
        })
        .collect();
    let shared = if spec.destinations_are_origins {
        spec.n_origin_zones.min(spec.n_dest_zones)
    } else {
        0
    };
    for k in shared..spec.n_origin_zones {
        let region = spec.origin_regions[(k - shared) % spec.origin_regions.len()];
        zones.push(Zone::new(format!("o{k}"), region));
    }
    let coords: Vec<(f64, f64)> = (0..zones.len())
        .map(|k| {
            if k == 0 {
                (0.0, 0.0)
            } else {
                let radius = r.radius_km.sample(&mut rng);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                (radius * angle.cos(), radius * angle.sin())
            }
        })
        .collect();

    let origins: Vec<usize> = (0..shared).chain(spec.n_dest_zones..zones.len()).collect();
    let alternatives: Vec<Alternative> = (0..spec.n_dest_zones)
        .flat_map(|d| Mode::ALL.iter().map(move |&mode| Alternative { mode, destination: d }))
        .collect();
    let mut segments = spec.segments.clone();
    segments.sort();
    segments.dedup();

    let mut markets = Vec::new();
    let mut attributes = Vec::new();
    let mut exact_inside = Vec::new();
    let mut exact_outside = Vec::new();
    let mut trips = Vec::new();
    let mut xis = Vec::new();
    let opts = SolverOptions::default();
    let nesting = NestingStructure::by_mode_and_destination(&alternatives, &zones);

    for &segment in &segments {
        let p = spec.truth.segment(segment)?;
        let rho = p.rhos();
        for &o in &origins {
            let total = spec.total_trips.sample(&mut rng).round();
            let origin_nyc = zones[o].is_nyc;
            let mut row = Vec::with_capacity(alternatives.len());
            let mut v = Vec::with_capacity(alternatives.len());
            let mut xi_row = Vec::with_capacity(alternatives.len());
            for alt in &alternatives {
                let d = alt.destination;
                let km = if d == o {
                    r.intrazonal_km.sample(&mut rng)
                } else {
                    let (a, b) = (coords[o], coords[d]);
                    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt().max(0.5)
                };
                let xi = if spec.noise_sd > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * spec.noise_sd
                } else {
                    0.0
                };
                let w: f64 = StandardNormal.sample(&mut rng);
                let zx = if spec.noise_sd > 0.0 { xi / spec.noise_sd } else { 0.0 };
                let rr = spec.endogeneity_strength;
                let disturbance = spec.cost_disturbance_sd * (rr * zx + (1.0 - rr * rr).sqrt() * w);
                let x = draw_attributes(&mut rng, r, alt.mode, km, zones[d].is_crz, disturbance);
                let offered = match alt.mode {
                    Mode::Biking => km <= r.max_bike_km,
                    Mode::Walking => km <= r.max_walk_km,
                    _ => true,
                };
                xi_row.push(xi);
                if offered {
                    let asc = p.dest_asc(&zones[d].id)?;
                    v.push(utility_with_dest_asc(p, origin_nyc, alt.mode, asc, &x) + xi);
                    row.push(Some(x));
                } else {
                    row.push(None);
                }
            }
            let available: Vec<usize> = (0..alternatives.len()).filter(|&j| row[j].is_some()).collect();
            let solved = if available.len() == alternatives.len() {
                solve_shares(&rho, &nesting, &v, &opts)?
            } else {
                solve_shares(&rho, &nesting.restrict(&available), &v, &opts)?
            };
            let mut inside_shares = vec![0.0; alternatives.len()];
            for (k, &j) in available.iter().enumerate() {
                inside_shares[j] = solved.inside[k];
            }
            let shares = crate::predictor::Shares {
                inside: inside_shares,
                ..solved
            };
            let counts: Vec<u64> = shares.inside.iter().map(|s| (s * total).round() as u64).collect();
            let inside: u64 = counts.iter().sum();
            // Rounding can push the inside sum past a total with a tiny outside share.
            let total_trips = (total as u64).max(inside);
            markets.push(Market {
                segment,
                origin: o,
                total_trips,
            });
            exact_inside.push(shares.inside);
            exact_outside.push(shares.outside);
            attributes.push(row);
            trips.push(counts);
            xis.push(xi_row);
        }
    }
    let dataset = MarketDataset::from_parts(zones, markets, alternatives, attributes, trips)?;
    let mut truth = spec.truth.clone();
    truth.segments.retain(|g, _| segments.contains(g));
    Ok(Generated {
        dataset,
        truth,
        exact: ShareTable::from_parts(exact_inside, exact_outside),
        xi: xis,
    })
}

fn draw_attributes(rng: &mut ChaCha8Rng, r: &AttributeRanges, mode: Mode, km: f64, crz_dest: bool, disturbance: f64) -> Attributes {
    let mut x = Attributes {
        tt: 0.0,
        cost: 0.0,
        access: 0.0,
        egress: 0.0,
        wait: 0.0,
        ivt: 0.0,
        transfers: 0.0,
        toll_flag: mode.is_auto() && crz_dest,
        crz_dest,
    };
    let minutes = |speed: f64| km / speed * 60.0;
    let drive_tt = minutes(r.auto_speed_kmh.sample(rng));
    let parking = if crz_dest { r.parking_crz } else { r.parking_other };
    match mode {
        Mode::Driving => {
            x.tt = drive_tt;
            x.cost = km * r.drive_cost_per_km.sample(rng) + parking.sample(rng) + disturbance;
        }
        Mode::Fhv => {
            x.tt = drive_tt * r.fhv_time_factor.sample(rng);
            x.cost = r.fhv_base_fare.sample(rng) + km * r.fhv_cost_per_km.sample(rng) + disturbance;
        }
        Mode::Carpool => {
            x.tt = drive_tt * r.carpool_time_factor.sample(rng);
            x.cost = 0.5 * (km * r.drive_cost_per_km.sample(rng) + parking.sample(rng));
        }
        Mode::Transit => {
            x.access = r.transit_access.sample(rng);
            x.egress = r.transit_egress.sample(rng);
            x.wait = r.transit_wait.sample(rng);
            x.ivt = minutes(r.transit_speed_kmh.sample(rng));
            x.transfers = rng.random_range(0..=r.max_transfers) as f64;
            x.tt = x.access + x.egress + x.wait + x.ivt;
            x.cost = r.transit_fare.sample(rng) + km * r.transit_fare_per_km.sample(rng) + disturbance;
        }
        Mode::Biking => x.tt = minutes(r.bike_speed_kmh.sample(rng)),
        Mode::Walking => x.tt = minutes(r.walk_speed_kmh.sample(rng)),
    }
    x.cost = x.cost.max(0.0);
    x
}

/// One segment per population group for a fixed purpose and period.
pub fn one_segment_per_population(purpose: Purpose, period: Period) -> Vec<Segment> {
    Population::ALL.iter().map(|&p| Segment::new(p, purpose, period)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_dataset;

    fn spec(seed: u64) -> GenerationSpec {
        GenerationSpec::standard(5, 4, GenerationSpec::first_segments(2), seed)
    }

    #[test]
    fn shape_and_flags() {
        let g = generate(&spec(1)).unwrap();
        let d = &g.dataset;
        assert_eq!(d.markets().len(), 10);
        assert_eq!(d.alternatives().len(), 24);
        assert!(d.zones().iter().any(|z| z.region == RegionTag::Nj));
        assert!(d.zones()[0].is_crz);
        for t in 0..d.markets().len() {
            for (j, a) in d.alternatives().iter().enumerate() {
                match d.attribute(t, j) {
                    Some(x) => assert_eq!(x.toll_flag, a.mode.is_auto() && d.destination(j).is_crz),
                    None => {
                        assert!(a.mode.is_active());
                        assert_eq!(d.trips(t, j), 0);
                        assert_eq!(g.exact.share(t, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn seeded_runs_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_dataset(&generate(&spec(7)).unwrap().dataset, a.path()).unwrap();
        let pb = write_dataset(&generate(&spec(7)).unwrap().dataset, b.path()).unwrap();
        for (x, y) in [(pa.zones, pb.zones), (pa.markets, pb.markets), (pa.attributes, pb.attributes), (pa.shares, pb.shares)] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        assert_ne!(generate(&spec(8)).unwrap().dataset, generate(&spec(7)).unwrap().dataset);
    }

    #[test]
    fn exact_shares_satisfy_inverse_system() {
        let g = generate(&spec(3)).unwrap();
        let d = &g.dataset;
        for t in 0..d.markets().len() {
            let p = g.truth.segment(d.markets()[t].segment).unwrap();
            let avail: Vec<usize> = (0..d.alternatives().len()).filter(|&j| d.attribute(t, j).is_some()).collect();
            let inside: Vec<f64> = avail.iter().map(|&j| g.exact.share(t, j)).collect();
            let nesting = d.nesting().restrict(&avail);
            let v = crate::predictor::inverse_utility(&p.rhos(), &nesting, &inside, g.exact.outside(t)).unwrap();
            for (k, &j) in avail.iter().enumerate() {
                let x = d.attribute(t, j).unwrap();
                let a = d.alternatives()[j];
                let want =
                    crate::predictor::systematic_utility(p, d.origin(t), a.mode, d.destination(j), x).unwrap();
                assert!((v[k] - want).abs() < 1e-8, "market {t} alt {j}: {} vs {want}", v[k]);
            }
        }
    }

    #[test]
    fn rejects_invalid_rho() {
        let s = spec(1).with_rho(0.6, 0.5);
        assert!(matches!(generate(&s), Err(Error::InvalidRho { .. })));
    }

    #[test]
    fn structural_noise_enters_utilities() {
        let mut s = spec(4);
        s.noise_sd = 0.5;
        let g = generate(&s).unwrap();
        let sd = {
            let all: Vec<f64> = g.xi.iter().flatten().copied().collect();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            (all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt()
        };
        assert!((sd - 0.5).abs() < 0.1, "{sd}");
    }
}
