use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} `{}` (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

string_enum! {
    /// Coarse geography of a zone.
    RegionTag {
        Crz => "CRZ",
        UpperManhattan => "UpperManhattan",
        NycOther => "NYC_Other",
        NysOther => "NYS_Other",
        Nj => "NJ",
    }
}

impl RegionTag {
    pub fn is_nyc(self) -> bool {
        matches!(self, RegionTag::Crz | RegionTag::UpperManhattan | RegionTag::NycOther)
    }

    /// Origin-only zones: trips to them count as the outside alternative.
    pub fn is_origin_only(self) -> bool {
        self == RegionTag::Nj
    }
}

string_enum! {
    Population {
        NotLowIncome => "NotLowIncome",
        LowIncome => "LowIncome",
        Senior => "Senior",
        Student => "Student",
    }
}

string_enum! {
    Purpose {
        Commute => "Commute",
        NonCommute => "NonCommute",
    }
}

string_enum! {
    Period {
        Peak => "Peak",
        Overnight => "Overnight",
    }
}

string_enum! {
    Mode {
        Driving => "Driving",
        Transit => "Transit",
        Fhv => "FHV",
        Biking => "Biking",
        Walking => "Walking",
        Carpool => "Carpool",
    }
}

impl Mode {
    /// Modes charged at the cordon.
    pub fn is_auto(self) -> bool {
        matches!(self, Mode::Driving | Mode::Fhv | Mode::Carpool)
    }

    pub fn is_active(self) -> bool {
        matches!(self, Mode::Biking | Mode::Walking)
    }
}

/// One population x purpose x period class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub population: Population,
    pub purpose: Purpose,
    pub period: Period,
}

impl Segment {
    pub fn new(population: Population, purpose: Purpose, period: Period) -> Self {
        Self {
            population,
            purpose,
            period,
        }
    }

    /// The full 16-member cross product.
    pub fn all() -> Vec<Segment> {
        let mut out = Vec::with_capacity(16);
        for &population in Population::ALL {
            for &purpose in Purpose::ALL {
                for &period in Period::ALL {
                    out.push(Segment::new(population, purpose, period));
                }
            }
        }
        out
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.population, self.purpose, self.period)
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(format!("segment `{s}` is not population/purpose/period"));
        }
        Ok(Segment::new(parts[0].parse()?, parts[1].parse()?, parts[2].parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zone {
    pub id: String,
    pub region: RegionTag,
    pub is_nyc: bool,
    pub is_crz: bool,
}

impl Zone {
    pub fn new(id: impl Into<String>, region: RegionTag) -> Self {
        Self {
            id: id.into(),
            region,
            is_nyc: region.is_nyc(),
            is_crz: region == RegionTag::Crz,
        }
    }
}

/// All trips of one segment leaving one zone. `origin` indexes the dataset's zones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Market {
    pub segment: Segment,
    pub origin: usize,
    pub total_trips: u64,
}

/// An inside alternative; the outside option is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alternative {
    pub mode: Mode,
    /// Index into the dataset's zones.
    pub destination: usize,
}

/// Level-of-service attributes of one (market, alternative) cell.
///
/// Times are minutes, cost is dollars. The transit components are zero for
/// every other mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Attributes<T = f64> {
    pub tt: T,
    pub cost: T,
    pub access: T,
    pub egress: T,
    pub wait: T,
    pub ivt: T,
    pub transfers: T,
    pub toll_flag: bool,
    pub crz_dest: bool,
}

impl Attributes<f64> {
    pub fn cast<T: crate::scalar::Scalar>(&self) -> Attributes<T> {
        Attributes {
            tt: T::lit(self.tt),
            cost: T::lit(self.cost),
            access: T::lit(self.access),
            egress: T::lit(self.egress),
            wait: T::lit(self.wait),
            ivt: T::lit(self.ivt),
            transfers: T::lit(self.transfers),
            toll_flag: self.toll_flag,
            crz_dest: self.crz_dest,
        }
    }
}

/// `[market][alternative]`; `None` where the input had no attribute row.
pub type AttributeTable = Vec<Vec<Option<Attributes>>>;
