//! The pipeline stages behind each subcommand.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use cordon_core::calibrator::{calibrate, predicted_change, CalibrationOptions, CalibrationTargets, RegionGroup};
use cordon_core::compensator::{
    pareto_sweep, schedule_rows, solve_kaldor_hicks, CompensationOptions, CompensationProblem, CompensationResult,
    CompensationScope, KhFare, KhLever, SubsidyDemand,
};
use cordon_core::data::{load_attribute_overrides, load_dataset, write_dataset, MarketDataset, Segment};
use cordon_core::estimator::{
    collect_parameters, estimate_all, EndogenousSet, EstimateOptions, EstimationResult, InstrumentFamily, Method,
    ModelClass, ShareTable,
};
use cordon_core::params::{read_parameters, PValues, ParameterSet, TollAscs};
use cordon_core::predictor::{cordon_toll_schedule, predict_volumes, Scenario, SolverOptions};
use cordon_core::report::{fmt_bool, fmt_f64, CsvTable};
use cordon_core::synthgen::{generate, GenerationSpec, Range};
use cordon_core::welfare::{toll_revenue, tolled_volumes, vot_table, welfare_report, Aggregate, TollRateTable};

use crate::context::RunContext;
use crate::failure::Failure;

type Outcome<T = ()> = Result<T, Failure>;

fn parse<T: FromStr<Err = String>>(what: &str, s: &str) -> Outcome<T> {
    s.parse().map_err(|e: String| Failure::usage(format!("{what}: {e}")))
}

fn segment_cells(s: Segment) -> [String; 3] {
    [s.population.to_string(), s.purpose.to_string(), s.period.to_string()]
}

const SEGMENT_COLUMNS: [&str; 3] = ["population", "purpose", "period"];

fn with_segment(rest: &[&str]) -> Vec<String> {
    SEGMENT_COLUMNS.iter().chain(rest).map(|s| s.to_string()).collect()
}

fn solver(ctx: &RunContext) -> SolverOptions<f64> {
    SolverOptions {
        tolerance: ctx.cfg.solver.tolerance,
        max_iter: ctx.cfg.solver.max_iter,
        ..SolverOptions::default()
    }
}

pub fn load(ctx: &RunContext) -> Outcome<MarketDataset> {
    let paths = ctx.cfg.data.paths(ctx.output_dir());
    for p in [&paths.zones, &paths.markets, &paths.attributes, &paths.shares] {
        if !p.exists() {
            return Err(Failure::usage(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(load_dataset(&paths)?)
}

/// The unpriced base and the priced scenario.
pub fn scenarios(ctx: &RunContext, dataset: &MarketDataset) -> Outcome<(Scenario<f64>, Scenario<f64>)> {
    let s = &ctx.cfg.scenario;
    let overrides = match &s.attribute_overrides {
        Some(p) => Some(Arc::new(load_attribute_overrides(p, dataset)?)),
        None => None,
    };
    let post = Scenario {
        toll_schedule: cordon_toll_schedule(s.toll_peak_car_usd, s.toll_overnight_car_usd, s.toll_fhv_usd),
        crz_auto_time_factor: s.crz_auto_time_factor,
        toll_asc_active: s.toll_asc_active,
        attribute_overrides: overrides,
        ..Scenario::identity()
    };
    Ok((Scenario::identity(), post))
}

/// Parameters from the configured table or from an earlier stage's artifact.
fn stored_parameters(ctx: &RunContext, prefer_calibrated: bool) -> Outcome<(ParameterSet<f64>, PValues)> {
    let out = ctx.output_dir();
    let mut candidates: Vec<PathBuf> = Vec::new();
    if let Some(p) = &ctx.cfg.parameters {
        candidates.push(p.clone());
    } else {
        if prefer_calibrated {
            candidates.push(out.join("calibrate_parameters.csv"));
        }
        candidates.push(out.join("estimate_parameters.csv"));
    }
    let Some(path) = candidates.iter().find(|p| p.exists()) else {
        return Err(Failure::usage(format!(
            "no parameter table found (looked for {}); run `estimate` first or set `parameters`",
            candidates.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    };
    let (params, mut pv) = read_parameters(path)?;
    // Calibrated tables carry no p-values; take them from the estimate when it is there.
    if pv.is_empty() && ctx.cfg.parameters.is_none() {
        let est = out.join("estimate_parameters.csv");
        if est.exists() && est != *path {
            pv = read_parameters(&est)?.1;
        }
    }
    if params.segments.is_empty() {
        return Err(Failure::usage(format!("parameter table {} lists no segments", path.display())));
    }
    Ok((params, pv))
}

pub fn validate(ctx: &mut RunContext) -> Outcome {
    let d = load(ctx)?;
    let attribute_rows: usize = d.attributes().iter().map(|r| r.iter().flatten().count()).sum();
    let total: u64 = d.markets().iter().map(|m| m.total_trips).sum();
    let outside: u64 = (0..d.markets().len()).map(|t| d.outside_trips(t)).sum();
    let mut t = CsvTable::new(["metric", "value"]);
    for (k, v) in [
        ("zones", d.zones().len().to_string()),
        ("segments", d.segments().len().to_string()),
        ("markets", d.markets().len().to_string()),
        ("alternatives", d.alternatives().len().to_string()),
        ("attribute_rows", attribute_rows.to_string()),
        ("total_trips", total.to_string()),
        ("outside_trips", outside.to_string()),
        ("folded_outside_rows", d.folded_outside_rows().to_string()),
    ] {
        t.push([k.to_string(), v]);
    }
    if d.folded_outside_rows() > 0 {
        ctx.warn(format!(
            "{} share rows to origin-only zones were folded into the outside option",
            d.folded_outside_rows()
        ));
    }
    ctx.write_table("validate", "summary", &t)?;
    Ok(())
}

pub fn synth(ctx: &mut RunContext) -> Outcome {
    let s = &ctx.cfg.synth;
    let mut spec = GenerationSpec::standard(
        s.origins,
        s.destinations,
        GenerationSpec::first_segments(s.segments),
        ctx.cfg.seed,
    );
    spec.total_trips = Range::new(s.total_trips_min, s.total_trips_max);
    spec.noise_sd = s.noise_sd;
    spec.endogeneity_strength = s.endogeneity_strength;
    spec.cost_disturbance_sd = s.cost_disturbance_sd;
    if s.rho_mode.is_some() || s.rho_dest.is_some() {
        let d = GenerationSpec::standard(1, 1, GenerationSpec::first_segments(1), 0);
        let base = d.truth.segments.values().next().expect("one segment");
        spec = spec.with_rho(s.rho_mode.unwrap_or(base.rho_mode), s.rho_dest.unwrap_or(base.rho_dest));
    }
    let g = generate(&spec)?;
    let dir = ctx.cfg.data.synth_dir(ctx.output_dir());
    let paths = write_dataset(&g.dataset, &dir)?;
    for p in [&paths.zones, &paths.markets, &paths.attributes, &paths.shares] {
        let bytes = std::fs::read(p).map_err(|e| Failure::usage(format!("cannot re-read {}: {e}", p.display())))?;
        ctx.record(p, &bytes);
    }
    ctx.write_table("synth", "truth", &g.truth.to_table())?;
    Ok(())
}

fn estimate_options(ctx: &RunContext, dataset: &MarketDataset) -> Outcome<EstimateOptions> {
    let e = &ctx.cfg.estimate;
    let families = e
        .instruments
        .iter()
        .map(|f| parse::<InstrumentFamily>("estimate.instruments", f))
        .collect::<Outcome<Vec<_>>>()?;
    let dims = e
        .instrument_dims
        .iter()
        .map(|name| {
            dataset
                .nesting()
                .dims()
                .iter()
                .position(|d| d.name == *name)
                .ok_or_else(|| Failure::usage(format!("estimate.instrument_dims: unknown nesting dimension `{name}`")))
        })
        .collect::<Outcome<Vec<_>>>()?;
    Ok(EstimateOptions {
        model_class: parse::<ModelClass>("estimate.model_class", &e.model_class)?,
        method: parse::<Method>("estimate.method", &e.method)?,
        endogenous: parse::<EndogenousSet>("estimate.endogenous", &e.endogenous)?,
        families,
        instrument_dims: dims,
        fit_statistics: e.fit_statistics,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn estimate(ctx: &mut RunContext, dataset: &MarketDataset) -> Outcome<(ParameterSet<f64>, PValues)> {
    let opts = estimate_options(ctx, dataset)?;
    let shares = ShareTable::from_counts(dataset);
    let results: Vec<EstimationResult<f64>> = estimate_all(dataset, &shares, &opts)?;

    let mut params = CsvTable::new(["segment", "parameter_name", "estimate", "std_error", "p_value"]);
    let mut fit = CsvTable::new(with_segment(&[
        "model_class",
        "method",
        "n_obs",
        "n_trips",
        "r2",
        "adj_r2",
        "mcfadden_r2",
        "rho_valid",
        "effective_instruments",
        "dropped_rows",
        "dropped_markets",
        "dropped_columns",
    ]));
    for r in &results {
        for name in r.names() {
            let value = r.params.get(&name).expect("listed parameter");
            params.push([
                r.segment.to_string(),
                name.clone(),
                fmt_f64(value),
                opt(r.std_errors.get(&name).copied()),
                opt(r.p_values.get(&name).copied()),
            ]);
        }
        let mut row = segment_cells(r.segment).to_vec();
        row.extend([
            r.model_class.as_str().to_string(),
            r.method.as_str().to_string(),
            r.n_obs.to_string(),
            r.n_trips.to_string(),
            fmt_f64(r.r2),
            fmt_f64(r.adj_r2),
            opt(r.mcfadden_r2),
            fmt_bool(r.rho_valid).to_string(),
            r.effective_instruments.to_string(),
            r.dropped_rows.to_string(),
            r.dropped_markets.len().to_string(),
            r.dropped_columns.join(";"),
        ]);
        fit.push(row);
        if r.dropped_rows > 0 {
            ctx.warn(format!("{}: {} zero-share cells left out of the regression", r.segment, r.dropped_rows));
        }
        if !r.dropped_markets.is_empty() {
            ctx.warn(format!("{}: {} markets without outside trips dropped", r.segment, r.dropped_markets.len()));
        }
        if !r.dropped_columns.is_empty() {
            ctx.warn(format!("{}: constant-zero columns dropped: {}", r.segment, r.dropped_columns.join(", ")));
        }
        if !r.rho_valid {
            ctx.warn(format!(
                "{}: fitted rho ({}, {}) outside the admissible region",
                r.segment, r.params.rho_mode, r.params.rho_dest
            ));
        }
    }
    ctx.write_table("estimate", "parameters", &params)?;
    ctx.write_table("estimate", "fit", &fit)?;
    Ok(collect_parameters(&results))
}

pub fn predict(ctx: &mut RunContext, dataset: &MarketDataset, params: &ParameterSet<f64>) -> Outcome {
    let (pre, post) = scenarios(ctx, dataset)?;
    let opts = solver(ctx);
    let a = predict_volumes(dataset, params, &pre, &opts)?;
    let b = predict_volumes(dataset, params, &post, &opts)?;
    if b.summary.clamps > 0 {
        ctx.warn(format!("{} attribute values clamped at zero under the scenario", b.summary.clamps));
    }
    let mut cells = CsvTable::new(with_segment(&["origin_zone", "mode", "dest_zone", "trips_pre", "trips_post"]));
    for mp in &a.markets {
        let t = mp.market;
        for &j in &mp.alternatives {
            let alt = dataset.alternatives()[j];
            let mut row = segment_cells(dataset.markets()[t].segment).to_vec();
            row.extend([
                dataset.origin(t).id.clone(),
                alt.mode.to_string(),
                dataset.destination(j).id.clone(),
                fmt_f64(a.trips(t, j)),
                fmt_f64(b.trips(t, j)),
            ]);
            cells.push(row);
        }
    }
    let mut by_mode = CsvTable::new(["mode", "trips_pre", "trips_post", "change_pct"]);
    let (ma, mb) = (a.by_mode(dataset), b.by_mode(dataset));
    for (m, &va) in &ma {
        let vb = mb.get(m).copied().unwrap_or(0.0);
        let pct = if va > 0.0 { 100.0 * (vb - va) / va } else { 0.0 };
        by_mode.push([m.to_string(), fmt_f64(va), fmt_f64(vb), fmt_f64(pct)]);
    }
    ctx.write_table("predict", "volumes", &cells)?;
    ctx.write_table("predict", "by_mode", &by_mode)?;
    Ok(())
}

fn targets(ctx: &RunContext, dataset: &MarketDataset) -> Outcome<Vec<(RegionGroup, f64)>> {
    let c = &ctx.cfg.calibrate;
    if c.targets.is_empty() {
        return Err(Failure::usage("calibration needs at least one [[calibrate.targets]] entry"));
    }
    c.targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut origins: BTreeSet<String> = t.origins.iter().cloned().collect();
            origins.extend(
                dataset
                    .zones()
                    .iter()
                    .filter(|z| t.origin_regions.contains(&z.region))
                    .map(|z| z.id.clone()),
            );
            let name = if t.name.is_empty() { format!("target{}", i + 1) } else { t.name.clone() };
            let group = RegionGroup {
                name,
                origins,
                modes: t.modes.iter().copied().collect(),
                crz_only: t.crz_only,
            };
            Ok((group, t.change_pct))
        })
        .collect()
}

pub fn calibrate_stage(
    ctx: &mut RunContext,
    dataset: &MarketDataset,
    params: &ParameterSet<f64>,
) -> Outcome<ParameterSet<f64>> {
    let (pre, post) = scenarios(ctx, dataset)?;
    let c = ctx.cfg.calibrate.clone();
    let mut opts = CalibrationOptions {
        lower: c.lower,
        upper: c.upper,
        starts: c.starts.clone(),
        ridge: c.ridge,
        max_iter: c.max_iter,
        ..CalibrationOptions::default()
    };
    for (name, &v) in &c.pinned {
        let k = TollAscs::<f64>::NAMES
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Failure::usage(format!("calibrate.pinned: unknown toll constant `{name}`")))?;
        opts.pinned[k] = Some(v);
    }
    let mut groups = targets(ctx, dataset)?;
    if let Some(truth) = c.generate_targets_from {
        let p = params.clone().with_toll(TollAscs::from_array(truth));
        for (g, obs) in groups.iter_mut() {
            *obs = predicted_change(dataset, &p, &pre, &post, g, &opts.solver)?;
        }
    }
    let targets = CalibrationTargets { groups };
    let result = calibrate(dataset, params, &targets, &pre, &post, &opts)?;
    if result.under_determined {
        ctx.warn(format!(
            "{} targets for {} free toll constants; the solution is one of many",
            targets.groups.len(),
            result.free_parameters
        ));
    }
    let calibrated = params.clone().with_toll(result.toll);
    ctx.write_table("calibrate", "parameters", &calibrated.to_table())?;

    let mut t = CsvTable::new(["group", "observed_change_pct", "predicted_change_pct", "residual_pct"]);
    for (g, _) in &targets.groups {
        let (o, p) = (result.observed[&g.name], result.predicted[&g.name]);
        t.push([g.name.clone(), fmt_f64(o), fmt_f64(p), fmt_f64(p - o)]);
    }
    ctx.write_table("calibrate", "targets", &t)?;

    let mut s = CsvTable::new([
        "start",
        "start_driving",
        "start_fhv",
        "start_carpool",
        "start_crz",
        "start_objective",
        "theta_toll_driving",
        "theta_toll_fhv",
        "theta_toll_carpool",
        "theta_toll_crz",
        "objective",
        "gradient_norm",
        "iterations",
        "converged",
    ]);
    for (i, o) in result.starts.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(o.start.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(o.start_objective));
        row.extend(o.toll.iter().map(|v| fmt_f64(*v)));
        row.extend([
            fmt_f64(o.objective),
            fmt_f64(o.gradient_norm),
            o.iterations.to_string(),
            fmt_bool(o.converged).to_string(),
        ]);
        s.push(row);
    }
    ctx.write_table("calibrate", "starts", &s)?;
    Ok(calibrated)
}

fn aggregate_table<K: ToString>(key: &str, rows: impl IntoIterator<Item = (K, Aggregate)>) -> CsvTable {
    let mut t = CsvTable::new([key, "markets", "trips_per_day", "cv_usd_per_day", "cv_usd_per_trip"]);
    for (k, a) in rows {
        t.push([
            k.to_string(),
            a.markets.to_string(),
            fmt_f64(a.trips),
            fmt_f64(a.cv_per_day),
            fmt_f64(a.per_trip()),
        ]);
    }
    t
}

pub fn welfare(ctx: &mut RunContext, dataset: &MarketDataset, params: &ParameterSet<f64>, pv: &PValues) -> Outcome {
    let (pre, post) = scenarios(ctx, dataset)?;
    let report = welfare_report(dataset, params, &pre, &post, &solver(ctx))?;

    let mut m = CsvTable::new(with_segment(&[
        "origin_zone",
        "trips_per_day",
        "cs_pre",
        "cs_post",
        "cv_usd_per_trip",
        "cv_usd_per_day",
    ]));
    for w in &report.markets {
        let mut row = segment_cells(dataset.markets()[w.market].segment).to_vec();
        row.extend([
            dataset.origin(w.market).id.clone(),
            fmt_f64(w.trips),
            fmt_f64(w.cs_pre),
            fmt_f64(w.cs_post),
            fmt_f64(w.cv_per_trip),
            fmt_f64(w.cv_per_day),
        ]);
        m.push(row);
    }
    ctx.write_table("welfare", "markets", &m)?;
    ctx.write_table("welfare", "by_origin", &aggregate_table("origin_zone", report.by_origin.clone()))?;
    ctx.write_table("welfare", "by_segment", &aggregate_table("segment", report.by_segment.clone()))?;
    ctx.write_table("welfare", "by_population", &aggregate_table("population", report.by_population.clone()))?;
    ctx.write_table("welfare", "by_region", &aggregate_table("region", report.by_region.clone()))?;
    ctx.write_table("welfare", "total", &aggregate_table("scope", [("all", report.total)]))?;

    let p_values = (!pv.is_empty()).then_some(pv);
    if p_values.is_none() {
        ctx.warn("no p-values available; every value of time is reported");
    }
    let mut v = CsvTable::new(with_segment(&["component", "nyc_origin", "vot_usd_per_hour"]));
    for r in vot_table(params, p_values, ctx.cfg.welfare.significance)? {
        let mut row = segment_cells(r.segment).to_vec();
        row.extend([r.component.to_string(), fmt_bool(r.nyc).to_string(), opt(r.vot)]);
        v.push(row);
    }
    ctx.write_table("welfare", "vot", &v)?;
    Ok(())
}

pub fn revenue(ctx: &mut RunContext, dataset: &MarketDataset, params: &ParameterSet<f64>) -> Outcome {
    let (_, post) = scenarios(ctx, dataset)?;
    let prediction = predict_volumes(dataset, params, &post, &solver(ctx))?;
    let s = &ctx.cfg.scenario;
    let rates = TollRateTable::cordon(
        s.toll_peak_car_usd,
        s.toll_overnight_car_usd,
        s.toll_fhv_usd,
        ctx.cfg.revenue.annualization_days,
    );
    let table = toll_revenue(&tolled_volumes(dataset, &prediction), &rates)?;
    let mut cells = CsvTable::new([
        "population",
        "vehicle_class",
        "period",
        "tolled_trips_per_day",
        "rate_usd",
        "annual_musd",
    ]);
    for ((p, c, q), cell) in &table.cells {
        cells.push([
            p.to_string(),
            c.to_string(),
            q.to_string(),
            fmt_f64(cell.trips_per_day),
            fmt_f64(cell.rate),
            fmt_f64(cell.annual / 1e6),
        ]);
    }
    let mut totals = CsvTable::new(["population", "annual_musd"]);
    for (p, v) in &table.by_population {
        totals.push([p.to_string(), fmt_f64(v / 1e6)]);
    }
    totals.push(["total".to_string(), fmt_f64(table.total / 1e6)]);
    ctx.write_table("revenue", "cells", &cells)?;
    ctx.write_table("revenue", "totals", &totals)?;
    Ok(())
}

fn push_package(t: &mut CsvTable, lever: &str, r: &CompensationResult) {
    let pops: BTreeSet<_> = r.residual_cv.keys().map(|(p, _)| *p).collect();
    for p in pops {
        t.push([
            lever.to_string(),
            fmt_f64(r.wait_reduction_min),
            p.to_string(),
            fmt_f64(r.discount(p)),
            fmt_f64(r.subsidy_by_population.get(&p).copied().unwrap_or(0.0) / 1e6),
            fmt_f64(r.aggregate_cv),
            fmt_bool(r.converged).to_string(),
        ]);
    }
}

/// Lever searches that end on a plateau below zero rather than on a hard failure.
fn unreachable_target(e: &cordon_core::Error) -> bool {
    matches!(
        e,
        cordon_core::Error::InfeasibleDiscount { .. } | cordon_core::Error::Unbracketable { .. }
    )
}

pub fn compensate(ctx: &mut RunContext, dataset: &MarketDataset, params: &ParameterSet<f64>) -> Outcome {
    let c = ctx.cfg.compensate.clone();
    let (pre, post) = scenarios(ctx, dataset)?;
    let origins: BTreeSet<String> = c.scope_origins.iter().cloned().collect();
    let scope = CompensationScope::by_origin(&c.scope_name, dataset, |z| {
        c.scope_regions.contains(&z.region) || origins.contains(&z.id)
    })?;
    let opts = CompensationOptions {
        wait_cap: c.wait_cap_min,
        fare_cap: c.fare_cap_usd,
        kh_fare: parse::<KhFare>("compensate.kh_fare", &c.kh_fare)?,
        subsidy_demand: parse::<SubsidyDemand>("compensate.subsidy_demand", &c.subsidy_demand)?,
        annualization_days: c.annualization_days,
        epsilon: c.epsilon_usd_per_day,
        ..CompensationOptions::default()
    };
    let (kh, pareto) = match c.criterion.as_str() {
        "kaldor_hicks" => (true, false),
        "pareto" => (false, true),
        "both" => (true, true),
        other => {
            return Err(Failure::usage(format!(
                "compensate.criterion: unknown criterion `{other}` (expected kaldor_hicks, pareto or both)"
            )))
        }
    };
    let problem = CompensationProblem::new(dataset, params, &pre, post, scope, opts)?;
    let mut schedule: Vec<CompensationResult> = Vec::new();
    if kh {
        let mut t = CsvTable::new([
            "lever",
            "wait_min",
            "population",
            "discount_usd_per_trip",
            "subsidy_musd_per_year",
            "aggregate_cv_usd_per_day",
            "converged",
        ]);
        match solve_kaldor_hicks(&problem, KhLever::Wait) {
            Ok(r) => push_package(&mut t, "wait", &r),
            Err(e) if unreachable_target(&e) => ctx.warn(format!("kaldor_hicks wait lever skipped: {e}")),
            Err(e) => return Err(e.into()),
        }
        for &w in &c.wait_levels_min {
            match solve_kaldor_hicks(&problem, KhLever::Fare { wait_reduction: w }) {
                Ok(r) => {
                    push_package(&mut t, "fare", &r);
                    schedule.push(r);
                }
                Err(e) if unreachable_target(&e) => {
                    ctx.warn(format!("kaldor_hicks fare lever at {w} min skipped: {e}"))
                }
                Err(e) => return Err(e.into()),
            }
        }
        ctx.write_table("compensate", "kaldor_hicks", &t)?;
    }
    if pareto {
        let mut results = Vec::new();
        let mut first_failure = None;
        for (w, outcome) in c.wait_levels_min.iter().zip(pareto_sweep(&problem, &c.wait_levels_min)?) {
            match outcome {
                Ok(r) => results.push(r),
                Err(e) if unreachable_target(&e) => {
                    ctx.warn(format!("pareto package at {w} min skipped: {e}"));
                    first_failure.get_or_insert(e);
                }
                Err(e) => return Err(e.into()),
            }
        }
        if results.is_empty() {
            if let Some(e) = first_failure {
                return Err(e.into());
            }
        }
        let mut g = CsvTable::new(["wait_min", "population", "origin_zone", "residual_cv_usd_per_day"]);
        for r in &results {
            if !r.converged {
                ctx.warn(format!(
                    "pareto package at {} min leaves a group below -{} $/day",
                    r.wait_reduction_min, c.epsilon_usd_per_day
                ));
            }
            for ((p, z), v) in &r.residual_cv {
                g.push([fmt_f64(r.wait_reduction_min), p.to_string(), z.clone(), fmt_f64(*v)]);
            }
        }
        ctx.write_table("compensate", "pareto_groups", &g)?;
        schedule.extend(results);
    }
    let mut s = CsvTable::new([
        "criterion",
        "wait_min",
        "population",
        "discount_usd_per_trip",
        "subsidy_musd_per_year",
        "worst_residual_group",
        "residual_cv_usd_per_day",
    ]);
    let mut rows = schedule_rows(&schedule);
    rows.sort_by(|a, b| a.criterion.cmp(&b.criterion).then(a.wait_min.total_cmp(&b.wait_min)).then(a.population.cmp(&b.population)));
    for r in rows {
        s.push([
            r.criterion.to_string(),
            fmt_f64(r.wait_min),
            r.population.to_string(),
            fmt_f64(r.discount_usd_per_trip),
            fmt_f64(r.subsidy_musd_per_year),
            r.worst_residual_group,
            fmt_f64(r.residual_cv),
        ]);
    }
    ctx.write_table("compensate", "schedule", &s)?;
    Ok(())
}

/// Runs one subcommand against the context.
pub fn run(ctx: &mut RunContext, command: &str) -> Outcome {
    match command {
        "validate" => validate(ctx),
        "synth" => synth(ctx),
        "estimate" => {
            let d = load(ctx)?;
            estimate(ctx, &d).map(|_| ())
        }
        "predict" => {
            let d = load(ctx)?;
            let (p, _) = stored_parameters(ctx, true)?;
            predict(ctx, &d, &p)
        }
        "calibrate" => {
            let d = load(ctx)?;
            let (p, _) = stored_parameters(ctx, false)?;
            calibrate_stage(ctx, &d, &p).map(|_| ())
        }
        "welfare" => {
            let d = load(ctx)?;
            let (p, pv) = stored_parameters(ctx, true)?;
            welfare(ctx, &d, &p, &pv)
        }
        "revenue" => {
            let d = load(ctx)?;
            let (p, _) = stored_parameters(ctx, true)?;
            revenue(ctx, &d, &p)
        }
        "compensate" => {
            let d = load(ctx)?;
            let (p, _) = stored_parameters(ctx, true)?;
            compensate(ctx, &d, &p)
        }
        "pipeline" => {
            let d = load(ctx)?;
            let (estimated, pv) = estimate(ctx, &d)?;
            let calibrated = calibrate_stage(ctx, &d, &estimated)?;
            welfare(ctx, &d, &calibrated, &pv)?;
            revenue(ctx, &d, &calibrated)?;
            compensate(ctx, &d, &calibrated)
        }
        other => Err(Failure::usage(format!("unknown command `{other}`"))),
    }
}
