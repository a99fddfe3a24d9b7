use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::StringRecord;

use super::types::{Alternative, AttributeTable, Attributes, Market, Mode, RegionTag, Segment, Zone};
use super::MarketDataset;
use crate::error::{Error, Location, Result};
use crate::report::{fmt_bool, fmt_f64, CsvTable};

const SEGMENT_COLUMNS: [&str; 3] = ["segment_population", "segment_purpose", "segment_period"];
const ATTRIBUTE_COLUMNS: [&str; 9] = [
    "tt_min",
    "cost_usd",
    "access_min",
    "egress_min",
    "wait_min",
    "ivt_min",
    "transfers",
    "toll_flag",
    "crz_dest_flag",
];

/// Locations of the four input tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub zones: PathBuf,
    pub markets: PathBuf,
    pub attributes: PathBuf,
    pub shares: PathBuf,
}

impl DatasetPaths {
    /// `zones.csv`, `markets.csv`, `attributes.csv`, `shares.csv` under `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            zones: dir.join("zones.csv"),
            markets: dir.join("markets.csv"),
            attributes: dir.join("attributes.csv"),
            shares: dir.join("shares.csv"),
        }
    }
}

struct Table {
    path: PathBuf,
    columns: HashMap<String, usize>,
    rows: Vec<StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            file: path.to_path_buf(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let columns = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        let rows = rdr.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn require(&self, names: &[&str]) -> Result<()> {
        for name in names {
            if !self.columns.contains_key(*name) {
                return Err(Error::MissingColumn(Location {
                    file: self.path.clone(),
                    row: 0,
                    column: name.to_string(),
                }));
            }
        }
        Ok(())
    }

    fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().enumerate().map(move |(i, rec)| Row {
            table: self,
            row: i + 1,
            rec,
        })
    }
}

struct Row<'a> {
    table: &'a Table,
    row: usize,
    rec: &'a StringRecord,
}

impl Row<'_> {
    fn at(&self, column: &str) -> Location {
        Location {
            file: self.table.path.clone(),
            row: self.row,
            column: column.to_string(),
        }
    }

    fn str(&self, column: &str) -> &str {
        let i = self.table.columns[column];
        self.rec.get(i).unwrap_or("")
    }

    fn parse<T: FromStr<Err = String>>(&self, column: &str) -> Result<T> {
        let v = self.str(column);
        v.parse().map_err(|reason| Error::InvalidValue {
            at: self.at(column),
            value: v.to_string(),
            reason,
        })
    }

    fn number(&self, column: &str) -> Result<f64> {
        let v = self.str(column);
        let x: f64 = v.parse().map_err(|_| Error::InvalidValue {
            at: self.at(column),
            value: v.to_string(),
            reason: "not a number".into(),
        })?;
        if x.is_nan() {
            return Err(Error::InvalidValue {
                at: self.at(column),
                value: v.to_string(),
                reason: "NaN".into(),
            });
        }
        if x < 0.0 {
            return Err(Error::NegativeValue {
                at: self.at(column),
                value: x,
            });
        }
        Ok(x)
    }

    fn count(&self, column: &str) -> Result<u64> {
        let x = self.number(column)?;
        if x.fract() != 0.0 || x > u64::MAX as f64 {
            return Err(Error::InvalidValue {
                at: self.at(column),
                value: self.str(column).to_string(),
                reason: "expected a whole count".into(),
            });
        }
        Ok(x as u64)
    }

    fn flag(&self, column: &str) -> Result<bool> {
        match self.str(column) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::InvalidValue {
                at: self.at(column),
                value: other.to_string(),
                reason: "booleans are 0/1".into(),
            }),
        }
    }

    fn segment(&self) -> Result<Segment> {
        Ok(Segment::new(
            self.parse(SEGMENT_COLUMNS[0])?,
            self.parse(SEGMENT_COLUMNS[1])?,
            self.parse(SEGMENT_COLUMNS[2])?,
        ))
    }

    fn zone(&self, column: &str, zone_ix: &HashMap<String, usize>) -> Result<usize> {
        let id = self.str(column);
        zone_ix.get(id).copied().ok_or_else(|| Error::UnknownZoneRef {
            at: self.at(column),
            value: id.to_string(),
        })
    }

    fn attributes(&self) -> Result<Attributes> {
        Ok(Attributes {
            tt: self.number("tt_min")?,
            cost: self.number("cost_usd")?,
            access: self.number("access_min")?,
            egress: self.number("egress_min")?,
            wait: self.number("wait_min")?,
            ivt: self.number("ivt_min")?,
            transfers: self.number("transfers")?,
            toll_flag: self.flag("toll_flag")?,
            crz_dest: self.flag("crz_dest_flag")?,
        })
    }
}

fn with_segment(cols: &[&'static str]) -> Vec<&'static str> {
    SEGMENT_COLUMNS.iter().chain(cols).copied().collect()
}

/// A keyed cell row: (market, mode, destination) resolved against the zone and market indices.
struct CellKey {
    market: usize,
    mode: Mode,
    dest: usize,
}

fn cell_key(
    row: &Row<'_>,
    zone_ix: &HashMap<String, usize>,
    market_ix: &HashMap<(Segment, usize), usize>,
) -> Result<CellKey> {
    let segment = row.segment()?;
    let origin = row.zone("origin_zone", zone_ix)?;
    let market = *market_ix.get(&(segment, origin)).ok_or_else(|| Error::UnknownZoneRef {
        at: row.at("origin_zone"),
        value: format!("market {} from {}", segment, row.str("origin_zone")),
    })?;
    Ok(CellKey {
        market,
        mode: row.parse("mode")?,
        dest: row.zone("dest_zone", zone_ix)?,
    })
}

/// Loads and cross-references the four input tables.
pub fn load_dataset(paths: &DatasetPaths) -> Result<MarketDataset> {
    let zones_t = Table::read(&paths.zones)?;
    zones_t.require(&["zone_id", "region_tag", "is_nyc", "is_crz"])?;
    let mut zones = Vec::new();
    let mut zone_ix = HashMap::new();
    for row in zones_t.rows() {
        let id = row.str("zone_id").to_string();
        if zone_ix.insert(id.clone(), zones.len()).is_some() {
            return Err(Error::DuplicateKey {
                at: row.at("zone_id"),
                key: id,
            });
        }
        let zone = Zone {
            id,
            region: row.parse::<RegionTag>("region_tag")?,
            is_nyc: row.flag("is_nyc")?,
            is_crz: row.flag("is_crz")?,
        };
        if zone.is_crz && !zone.is_nyc {
            return Err(Error::InvalidValue {
                at: row.at("is_crz"),
                value: "1".into(),
                reason: "a CRZ zone must be in NYC".into(),
            });
        }
        zones.push(zone);
    }

    let markets_t = Table::read(&paths.markets)?;
    markets_t.require(&with_segment(&["origin_zone", "total_trips"]))?;
    let mut markets = Vec::new();
    let mut market_ix = HashMap::new();
    for row in markets_t.rows() {
        let segment = row.segment()?;
        let origin = row.zone("origin_zone", &zone_ix)?;
        if market_ix.insert((segment, origin), markets.len()).is_some() {
            return Err(Error::DuplicateKey {
                at: row.at("origin_zone"),
                key: format!("{} from {}", segment, zones[origin].id),
            });
        }
        markets.push(Market {
            segment,
            origin,
            total_trips: row.count("total_trips")?,
        });
    }

    let attr_t = Table::read(&paths.attributes)?;
    let mut attr_cols = vec!["origin_zone", "mode", "dest_zone"];
    attr_cols.extend(ATTRIBUTE_COLUMNS);
    attr_t.require(&with_segment(&attr_cols))?;
    let shares_t = Table::read(&paths.shares)?;
    shares_t.require(&with_segment(&["origin_zone", "mode", "dest_zone", "trips"]))?;

    let mut folded = 0usize;
    let mut attr_cells: HashMap<(usize, Alternative), Attributes> = HashMap::new();
    let mut alt_set: BTreeSet<(usize, Mode)> = BTreeSet::new();
    for row in attr_t.rows() {
        let key = cell_key(&row, &zone_ix, &market_ix)?;
        if zones[key.dest].region.is_origin_only() {
            folded += 1;
            continue;
        }
        let alt = Alternative {
            mode: key.mode,
            destination: key.dest,
        };
        if attr_cells.insert((key.market, alt), row.attributes()?).is_some() {
            return Err(Error::DuplicateKey {
                at: row.at("dest_zone"),
                key: format!("{} {} to {}", row.str("origin_zone"), key.mode, zones[key.dest].id),
            });
        }
        alt_set.insert((key.dest, key.mode));
    }
    let mut trip_cells: HashMap<(usize, Alternative), u64> = HashMap::new();
    let mut folded_trips = vec![0u64; markets.len()];
    for row in shares_t.rows() {
        let key = cell_key(&row, &zone_ix, &market_ix)?;
        let trips = row.count("trips")?;
        if zones[key.dest].region.is_origin_only() {
            folded += 1;
            folded_trips[key.market] += trips;
            continue;
        }
        let alt = Alternative {
            mode: key.mode,
            destination: key.dest,
        };
        if trip_cells.insert((key.market, alt), trips).is_some() {
            return Err(Error::DuplicateKey {
                at: row.at("dest_zone"),
                key: format!("{} {} to {}", row.str("origin_zone"), key.mode, zones[key.dest].id),
            });
        }
        alt_set.insert((key.dest, key.mode));
    }
    if folded > 0 {
        log::info!("{folded} rows with origin-only destinations folded into the outside alternative");
    }

    let alternatives: Vec<Alternative> = alt_set
        .into_iter()
        .map(|(destination, mode)| Alternative { mode, destination })
        .collect();
    let attributes: AttributeTable = (0..markets.len())
        .map(|t| alternatives.iter().map(|a| attr_cells.get(&(t, *a)).copied()).collect())
        .collect();
    let trips: Vec<Vec<u64>> = (0..markets.len())
        .map(|t| {
            alternatives
                .iter()
                .map(|a| trip_cells.get(&(t, *a)).copied().unwrap_or(0))
                .collect()
        })
        .collect();
    MarketDataset::from_parts(zones, markets, alternatives, attributes, trips).map(|d| d.with_folded_rows(folded))
}

/// Reads an attributes-schema file and overlays it on the dataset's own
/// attribute table. Cells absent from the file keep their base values.
pub fn load_attribute_overrides(path: &Path, dataset: &MarketDataset) -> Result<AttributeTable> {
    let t = Table::read(path)?;
    let mut cols = vec!["origin_zone", "mode", "dest_zone"];
    cols.extend(ATTRIBUTE_COLUMNS);
    t.require(&with_segment(&cols))?;
    let zone_ix: HashMap<String, usize> = dataset
        .zones()
        .iter()
        .enumerate()
        .map(|(i, z)| (z.id.clone(), i))
        .collect();
    let market_ix = dataset.market_index();
    let mut table = dataset.attributes().clone();
    for row in t.rows() {
        let key = cell_key(&row, &zone_ix, &market_ix)?;
        let alt = Alternative {
            mode: key.mode,
            destination: key.dest,
        };
        let Some(j) = dataset.alternatives().iter().position(|a| *a == alt) else {
            return Err(Error::UnknownZoneRef {
                at: row.at("dest_zone"),
                value: format!("alternative {} to {}", key.mode, row.str("dest_zone")),
            });
        };
        let x = row.attributes()?;
        super::validate_attributes(&x, &alt, dataset.zones()).map_err(|reason| Error::InvalidValue {
            at: row.at("mode"),
            value: key.mode.to_string(),
            reason,
        })?;
        table[key.market][j] = Some(x);
    }
    Ok(table)
}

fn segment_cells(s: Segment) -> [String; 3] {
    [
        s.population.to_string(),
        s.purpose.to_string(),
        s.period.to_string(),
    ]
}

/// Emits the four input tables; `load_dataset` on the result reproduces `dataset`.
pub fn write_dataset(dataset: &MarketDataset, dir: &Path) -> Result<DatasetPaths> {
    let paths = DatasetPaths::in_dir(dir);

    let mut zones = CsvTable::new(["zone_id", "region_tag", "is_nyc", "is_crz"]);
    for z in dataset.zones() {
        zones.push([
            z.id.clone(),
            z.region.to_string(),
            fmt_bool(z.is_nyc).into(),
            fmt_bool(z.is_crz).into(),
        ]);
    }

    let mut markets = CsvTable::new(with_segment(&["origin_zone", "total_trips"]));
    for m in dataset.markets() {
        let mut row = segment_cells(m.segment).to_vec();
        row.push(dataset.zones()[m.origin].id.clone());
        row.push(m.total_trips.to_string());
        markets.push(row);
    }

    let mut attr_cols = vec!["origin_zone", "mode", "dest_zone"];
    attr_cols.extend(ATTRIBUTE_COLUMNS);
    let mut attrs = CsvTable::new(with_segment(&attr_cols));
    let mut shares = CsvTable::new(with_segment(&["origin_zone", "mode", "dest_zone", "trips"]));
    for (t, m) in dataset.markets().iter().enumerate() {
        for (j, a) in dataset.alternatives().iter().enumerate() {
            let mut key = segment_cells(m.segment).to_vec();
            key.push(dataset.zones()[m.origin].id.clone());
            key.push(a.mode.to_string());
            key.push(dataset.zones()[a.destination].id.clone());
            if let Some(x) = dataset.attribute(t, j) {
                let mut row = key.clone();
                row.extend([
                    fmt_f64(x.tt),
                    fmt_f64(x.cost),
                    fmt_f64(x.access),
                    fmt_f64(x.egress),
                    fmt_f64(x.wait),
                    fmt_f64(x.ivt),
                    fmt_f64(x.transfers),
                    fmt_bool(x.toll_flag).into(),
                    fmt_bool(x.crz_dest).into(),
                ]);
                attrs.push(row);
            }
            key.push(dataset.trips(t, j).to_string());
            shares.push(key);
        }
    }

    zones.write_atomic(&paths.zones)?;
    markets.write_atomic(&paths.markets)?;
    attrs.write_atomic(&paths.attributes)?;
    shares.write_atomic(&paths.shares)?;
    Ok(paths)
}
