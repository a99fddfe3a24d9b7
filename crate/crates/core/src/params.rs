//! Taste, nesting and toll parameters.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::Segment;
use crate::error::{Error, Location, Result};
use crate::report::{fmt_f64, CsvTable};
use crate::scalar::Scalar;

macro_rules! taste_fields {
    ($m:ident) => {
        $m! {
            auto_tt => "theta_auto_tt",
            access => "theta_at",
            egress => "theta_et",
            wait => "theta_wt",
            ivt => "theta_ivt",
            transfers => "theta_trans",
            nonauto_tt => "theta_nonauto_tt",
            cost => "theta_cost",
            auto_tt_nyc => "theta_auto_tt_nyc",
            access_nyc => "theta_at_nyc",
            egress_nyc => "theta_et_nyc",
            wait_nyc => "theta_wt_nyc",
            ivt_nyc => "theta_ivt_nyc",
            nonauto_tt_nyc => "theta_nonauto_tt_nyc",
            cost_nyc => "theta_cost_nyc",
            asc_driving => "asc_driving",
            asc_transit => "asc_transit",
            asc_fhv => "asc_fhv",
            asc_biking => "asc_biking",
            asc_walking => "asc_walking",
            rho_mode => "rho_mode",
            rho_dest => "rho_dest",
        }
    };
}

macro_rules! define_segment_params {
    ($($field:ident => $name:literal),+ $(,)?) => {
        /// Parameters of one segment's pre-implementation utility.
        ///
        /// Carpool is the reference mode and has no constant of its own.
        /// Transfers carry no NYC interaction.
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct SegmentParams<T> {
            $(pub $field: T,)+
            /// Destination constants keyed by zone id.
            pub dest_asc: BTreeMap<String, T>,
        }

        impl<T: Scalar> SegmentParams<T> {
            /// Names of the scalar (non-destination) parameters, in reporting order.
            pub const SCALAR_NAMES: &'static [&'static str] = &[$($name),+];

            pub fn get(&self, name: &str) -> Option<T> {
                match name {
                    $($name => Some(self.$field),)+
                    _ => dest_key(name).and_then(|z| self.dest_asc.get(z).copied()),
                }
            }

            /// Returns `false` for an unknown name.
            pub fn set(&mut self, name: &str, value: T) -> bool {
                match name {
                    $($name => { self.$field = value; true })+
                    _ => match dest_key(name) {
                        Some(z) => { self.dest_asc.insert(z.to_string(), value); true }
                        None => false,
                    },
                }
            }

            pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> SegmentParams<U> {
                SegmentParams {
                    $($field: f(self.$field),)+
                    dest_asc: self.dest_asc.iter().map(|(k, v)| (k.clone(), f(*v))).collect(),
                }
            }
        }
    };
}

taste_fields!(define_segment_params);

/// Name used for a destination constant, e.g. `asc_dest[crz]`.
pub fn dest_param_name(zone_id: &str) -> String {
    format!("asc_dest[{zone_id}]")
}

fn dest_key(name: &str) -> Option<&str> {
    name.strip_prefix("asc_dest[")?.strip_suffix(']')
}

impl<T: Scalar> SegmentParams<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn rhos(&self) -> [T; 2] {
        [self.rho_mode, self.rho_dest]
    }

    pub fn rho_valid(&self) -> bool {
        rho_valid(&self.rhos())
    }

    pub fn dest_asc(&self, zone_id: &str) -> Result<T> {
        self.dest_asc
            .get(zone_id)
            .copied()
            .ok_or_else(|| Error::MissingParameter(dest_param_name(zone_id)))
    }

    /// All parameter names including destination constants.
    pub fn names(&self) -> Vec<String> {
        Self::SCALAR_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(self.dest_asc.keys().map(|z| dest_param_name(z)))
            .collect()
    }

    /// Cost coefficient faced by a market, including the NYC interaction.
    pub fn effective_cost(&self, origin_is_nyc: bool) -> T {
        if origin_is_nyc {
            self.cost + self.cost_nyc
        } else {
            self.cost
        }
    }
}

/// Each `rho` in `[0, 1)` and the sum below one.
pub fn rho_valid<T: Scalar>(rho: &[T]) -> bool {
    let sum: T = rho.iter().copied().sum();
    rho.iter().all(|&r| r >= T::zero() && r < T::one()) && sum < T::one()
}

/// Post-implementation constants shared by every segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TollAscs<T> {
    pub driving: T,
    pub fhv: T,
    pub carpool: T,
    pub crz: T,
}

impl<T: Scalar> TollAscs<T> {
    pub const NAMES: [&'static str; 4] = [
        "toll_asc_driving",
        "toll_asc_fhv",
        "toll_asc_carpool",
        "toll_asc_crz",
    ];

    pub fn from_array(v: [T; 4]) -> Self {
        Self {
            driving: v[0],
            fhv: v[1],
            carpool: v[2],
            crz: v[3],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.driving, self.fhv, self.carpool, self.crz]
    }
}

/// Segment parameter sets plus the toll constants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet<T = f64> {
    pub segments: BTreeMap<Segment, SegmentParams<T>>,
    pub toll: TollAscs<T>,
}

/// p-values keyed by (segment, parameter name).
pub type PValues = BTreeMap<(Segment, String), f64>;

const TOLL_SEGMENT: &str = "*";

impl<T: Scalar> ParameterSet<T> {
    pub fn segment(&self, segment: Segment) -> Result<&SegmentParams<T>> {
        self.segments
            .get(&segment)
            .ok_or_else(|| Error::MissingParameter(format!("parameters for segment {segment}")))
    }

    pub fn with_toll(mut self, toll: TollAscs<T>) -> Self {
        self.toll = toll;
        self
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let f = |x: T| U::lit(x.to_f64_lossy());
        ParameterSet {
            segments: self.segments.iter().map(|(s, p)| (*s, p.map(f))).collect(),
            toll: TollAscs::from_array(self.toll.to_array().map(f)),
        }
    }

    /// `segment, parameter_name, value` with toll constants under segment `*`.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["segment", "parameter_name", "value"]);
        for (s, p) in &self.segments {
            for name in p.names() {
                let v = p.get(&name).expect("listed name");
                t.push([s.to_string(), name, fmt_f64(v.to_f64_lossy())]);
            }
        }
        for (name, v) in TollAscs::<T>::NAMES.iter().zip(self.toll.to_array()) {
            t.push([TOLL_SEGMENT.to_string(), name.to_string(), fmt_f64(v.to_f64_lossy())]);
        }
        t
    }
}

/// Reads a parameter table written by [`ParameterSet::to_table`] or by the
/// estimator (`estimate` column, optional `p_value`).
pub fn read_parameters(path: &Path) -> Result<(ParameterSet<f64>, PValues)> {
    let csv_err = |source| Error::Csv {
        file: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let loc = |row: usize, column: &str| Location {
        file: path.to_path_buf(),
        row,
        column: column.to_string(),
    };
    let seg_col = col("segment").ok_or_else(|| Error::MissingColumn(loc(0, "segment")))?;
    let name_col = col("parameter_name").ok_or_else(|| Error::MissingColumn(loc(0, "parameter_name")))?;
    let value_col = col("value")
        .or_else(|| col("estimate"))
        .ok_or_else(|| Error::MissingColumn(loc(0, "value")))?;
    let value_name = headers[value_col].to_string();
    let p_col = col("p_value");

    let mut out = ParameterSet::<f64>::default();
    let mut pvalues = PValues::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let seg_text = &rec[seg_col];
        let name = rec[name_col].to_string();
        let raw = &rec[value_col];
        let value: f64 = raw.parse().map_err(|_| Error::InvalidValue {
            at: loc(row, &value_name),
            value: raw.to_string(),
            reason: "not a number".into(),
        })?;
        if seg_text == TOLL_SEGMENT {
            let Some(k) = TollAscs::<f64>::NAMES.iter().position(|n| *n == name) else {
                return Err(Error::InvalidValue {
                    at: loc(row, "parameter_name"),
                    value: name,
                    reason: "unknown toll parameter".into(),
                });
            };
            let mut arr = out.toll.to_array();
            arr[k] = value;
            out.toll = TollAscs::from_array(arr);
            continue;
        }
        let segment: Segment = seg_text.parse().map_err(|reason| Error::InvalidValue {
            at: loc(row, "segment"),
            value: seg_text.to_string(),
            reason,
        })?;
        let params = out.segments.entry(segment).or_default();
        if !params.set(&name, value) {
            return Err(Error::InvalidValue {
                at: loc(row, "parameter_name"),
                value: name,
                reason: "unknown parameter".into(),
            });
        }
        if let Some(pc) = p_col {
            if let Ok(p) = rec[pc].parse::<f64>() {
                pvalues.insert((segment, name), p);
            }
        }
    }
    Ok((out, pvalues))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Period, Population, Purpose};

    fn seg() -> Segment {
        Segment::new(Population::Senior, Purpose::NonCommute, Period::Overnight)
    }

    #[test]
    fn named_access() {
        let mut p = SegmentParams::<f64>::zero();
        assert!(p.set("theta_wt_nyc", -0.5));
        assert!(p.set("asc_dest[crz]", -3.0));
        assert!(!p.set("theta_bogus", 1.0));
        assert_eq!(p.wait_nyc, -0.5);
        assert_eq!(p.get("asc_dest[crz]"), Some(-3.0));
        assert!(matches!(p.dest_asc("bk"), Err(Error::MissingParameter(_))));
        assert_eq!(p.names().len(), SegmentParams::<f64>::SCALAR_NAMES.len() + 1);
    }

    #[test]
    fn rho_validity() {
        assert!(rho_valid(&[0.3, 0.2]));
        assert!(rho_valid(&[0.0, 0.0]));
        assert!(!rho_valid(&[0.6, 0.4]));
        assert!(!rho_valid(&[-0.1, 0.2]));
        assert!(!rho_valid(&[0.642, 0.543]));
    }

    #[test]
    fn table_round_trip() {
        let mut set = ParameterSet::<f64>::default();
        let mut p = SegmentParams::zero();
        p.cost = -0.147;
        p.cost_nyc = 0.012;
        p.rho_mode = 0.3;
        p.dest_asc.insert("crz".into(), -3.088);
        set.segments.insert(seg(), p);
        set.toll = TollAscs::from_array([-0.287, -0.224, -0.214, -0.182]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        set.to_table().write_atomic(&path).unwrap();
        let (back, pv) = read_parameters(&path).unwrap();
        assert_eq!(back, set);
        assert!(pv.is_empty());
        assert_eq!(set.cast::<f32>().cast::<f64>().segments[&seg()].rho_mode, 0.3f32 as f64);
    }
}
