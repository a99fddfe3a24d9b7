//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cordon_core::data::{DatasetPaths, Mode, RegionTag};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Parameter table for commands run without a preceding `estimate`.
    pub parameters: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub solver: SolverConfig,
    pub estimate: EstimateConfig,
    pub scenario: ScenarioConfig,
    pub calibrate: CalibrateConfig,
    pub welfare: WelfareConfig,
    pub revenue: RevenueConfig,
    pub compensate: CompensateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("out"),
            parameters: None,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            solver: SolverConfig::default(),
            estimate: EstimateConfig::default(),
            scenario: ScenarioConfig::default(),
            calibrate: CalibrateConfig::default(),
            welfare: WelfareConfig::default(),
            revenue: RevenueConfig::default(),
            compensate: CompensateConfig::default(),
        }
    }
}

/// Input tables. Explicit paths win over `dir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub zones: Option<PathBuf>,
    pub markets: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub shares: Option<PathBuf>,
}

impl DataConfig {
    pub fn paths(&self, output_dir: &Path) -> DatasetPaths {
        let base = DatasetPaths::in_dir(self.dir.clone().unwrap_or_else(|| output_dir.join("data")));
        DatasetPaths {
            zones: self.zones.clone().unwrap_or(base.zones),
            markets: self.markets.clone().unwrap_or(base.markets),
            attributes: self.attributes.clone().unwrap_or(base.attributes),
            shares: self.shares.clone().unwrap_or(base.shares),
        }
    }

    /// Directory `synth` writes to.
    pub fn synth_dir(&self, output_dir: &Path) -> PathBuf {
        self.dir.clone().unwrap_or_else(|| output_dir.join("data"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub origins: usize,
    pub destinations: usize,
    /// Segments taken in canonical order.
    pub segments: usize,
    pub total_trips_min: f64,
    pub total_trips_max: f64,
    pub noise_sd: f64,
    pub endogeneity_strength: f64,
    pub cost_disturbance_sd: f64,
    pub rho_mode: Option<f64>,
    pub rho_dest: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            origins: 5,
            destinations: 4,
            segments: 2,
            total_trips_min: 2.0e6,
            total_trips_max: 5.0e6,
            noise_sd: 0.0,
            endogeneity_strength: 0.0,
            cost_disturbance_sd: 1.0,
            rho_mode: None,
            rho_dest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    /// MNL, NL_mode, NL_dest or IPDL.
    pub model_class: String,
    /// OLS or TSLS.
    pub method: String,
    /// `default` or `cost_only`.
    pub endogenous: String,
    pub instruments: Vec<String>,
    /// Nesting dimensions (`mode`, `destination`) the instruments average over.
    pub instrument_dims: Vec<String>,
    pub fit_statistics: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            model_class: "IPDL".into(),
            method: "TSLS".into(),
            endogenous: "default".into(),
            instruments: vec!["auto_tt".into(), "transit_ivt".into(), "nonauto_tt".into()],
            instrument_dims: vec!["mode".into(), "destination".into()],
            fit_statistics: true,
        }
    }
}

/// The priced scenario compared against the unpriced base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub toll_peak_car_usd: f64,
    pub toll_overnight_car_usd: f64,
    pub toll_fhv_usd: f64,
    pub crz_auto_time_factor: f64,
    pub toll_asc_active: bool,
    /// Attribute table replacing the base one under pricing.
    pub attribute_overrides: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            toll_peak_car_usd: 9.0,
            toll_overnight_car_usd: 2.25,
            toll_fhv_usd: 1.5,
            crz_auto_time_factor: 1.0,
            toll_asc_active: true,
            attribute_overrides: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub name: String,
    /// Origin zone ids.
    pub origins: Vec<String>,
    /// Adds every origin zone in these regions.
    pub origin_regions: Vec<RegionTag>,
    pub modes: Vec<Mode>,
    pub crz_only: bool,
    /// Observed change in percent; ignored when targets are generated.
    pub change_pct: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            name: String::new(),
            origins: Vec::new(),
            origin_regions: Vec::new(),
            modes: vec![Mode::Driving, Mode::Fhv, Mode::Carpool],
            crz_only: true,
            change_pct: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub targets: Vec<TargetConfig>,
    /// Toll constants (driving, fhv, carpool, crz) whose predicted changes replace the observed ones.
    pub generate_targets_from: Option<[f64; 4]>,
    pub lower: f64,
    pub upper: f64,
    pub starts: Vec<[f64; 4]>,
    /// Constants held fixed, by name.
    pub pinned: BTreeMap<String, f64>,
    pub ridge: f64,
    pub max_iter: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            targets: Vec::new(),
            generate_targets_from: None,
            lower: -5.0,
            upper: 0.0,
            starts: vec![[0.0; 4], [-0.25; 4], [-0.5; 4]],
            pinned: BTreeMap::new(),
            ridge: 0.0,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WelfareConfig {
    /// p-value threshold for value-of-time reporting.
    pub significance: f64,
}

impl Default for WelfareConfig {
    fn default() -> Self {
        WelfareConfig { significance: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RevenueConfig {
    pub annualization_days: f64,
}

impl Default for RevenueConfig {
    fn default() -> Self {
        RevenueConfig {
            annualization_days: 365.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompensateConfig {
    pub scope_name: String,
    /// Origin regions whose markets receive the levers.
    pub scope_regions: Vec<RegionTag>,
    /// Extra origin zone ids added to the scope.
    pub scope_origins: Vec<String>,
    /// `kaldor_hicks`, `pareto` or `both`.
    pub criterion: String,
    /// `per_population` or `single`.
    pub kh_fare: String,
    /// `responsive` or `fixed`.
    pub subsidy_demand: String,
    pub wait_levels_min: Vec<f64>,
    pub epsilon_usd_per_day: f64,
    pub wait_cap_min: f64,
    pub fare_cap_usd: f64,
    pub annualization_days: f64,
}

impl Default for CompensateConfig {
    fn default() -> Self {
        CompensateConfig {
            scope_name: "nyc".into(),
            scope_regions: vec![RegionTag::Crz, RegionTag::UpperManhattan, RegionTag::NycOther],
            scope_origins: Vec::new(),
            criterion: "both".into(),
            kh_fare: "per_population".into(),
            subsidy_demand: "responsive".into(),
            wait_levels_min: cordon_core::compensator::wait_grid(10.0, 0.5),
            epsilon_usd_per_day: 1.0,
            wait_cap_min: 60.0,
            fare_cap_usd: 50.0,
            annualization_days: 365.0,
        }
    }
}

/// Parses the override value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), Failure> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::usage(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Failure::usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (absent means all defaults) and applies the overrides in order.
    ///
    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Failure::usage(format!("config {} does not parse: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::usage(format!("invalid config: {}", e.message())))?;
        if let Some(base) = path.and_then(|p| p.parent()) {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.parameters,
            &mut self.data.dir,
            &mut self.data.zones,
            &mut self.data.markets,
            &mut self.data.attributes,
            &mut self.data.shares,
            &mut self.scenario.attribute_overrides,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
