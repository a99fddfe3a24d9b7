//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Run with `cargo test --release -p cordon-cli --test acceptance -- --nocapture --include-ignored`
//! to see every line, including the ignored revenue-table check.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cordon_core::calibrator::{calibrate, predicted_change, CalibrationOptions, CalibrationTargets, RegionGroup};
use cordon_core::compensator::{
    solve_kaldor_hicks, solve_pareto, wait_grid, CompensationOptions, CompensationProblem, CompensationScope, KhLever,
    Lever,
};
use cordon_core::data::{
    MarketDataset, Mode, NestingDimension, NestingStructure, Period, Population, Purpose, RegionTag,
};
use cordon_core::estimator::{estimate_all, estimate_segment, EstimateOptions, Method, ShareTable};
use cordon_core::params::{ParameterSet, SegmentParams, TollAscs};
use cordon_core::predictor::{cordon_toll_schedule, inverse_utility, solve_shares, Scenario, SolverOptions};
use cordon_core::synthgen::{generate, one_segment_per_population, GenerationSpec, Range};
use cordon_core::welfare::{
    toll_revenue, value_of_time, welfare_report, TimeComponent, TollRateTable, TollVolumes, VehicleClass,
    VotSignificance,
};

fn verdict(n: usize, pass: bool, detail: impl std::fmt::Display) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn worst_relative_error(fitted: &SegmentParams<f64>, truth: &SegmentParams<f64>) -> (f64, String) {
    truth
        .names()
        .into_iter()
        .map(|n| {
            let t = truth.get(&n).unwrap();
            let f = fitted.get(&n).unwrap_or(f64::NAN);
            let e = ((f - t) / t).abs();
            (if e.is_nan() { f64::INFINITY } else { e }, n)
        })
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a })
}

#[test]
fn criterion_1_noiseless_parameter_recovery() {
    let clock = Instant::now();
    let mut spec = GenerationSpec::standard(5, 4, GenerationSpec::first_segments(2), 5);
    spec.total_trips = Range::new(1.0e8, 2.0e8);
    let g = generate(&spec).unwrap();
    let ols = EstimateOptions {
        method: Method::Ols,
        fit_statistics: false,
        ..Default::default()
    };

    let mut worst_exact = (0.0f64, String::new());
    let mut worst_rounded = (0.0f64, String::new());
    let rounded = ShareTable::from_counts(&g.dataset);
    for (shares, worst) in [(&g.exact, &mut worst_exact), (&rounded, &mut worst_rounded)] {
        for r in estimate_all::<f64>(&g.dataset, shares, &ols).unwrap() {
            let e = worst_relative_error(&r.params, g.truth.segment(r.segment).unwrap());
            if e.0 > worst.0 {
                *worst = e;
            }
        }
    }
    let elapsed = clock.elapsed();
    let pass = worst_exact.0 < 1e-6 && worst_rounded.0 < 1e-3 && within(elapsed, 10);
    verdict(
        1,
        pass,
        format!(
            "exact shares worst {:.2e} on {}, rounded trips worst {:.2e} on {}, {:.1?}",
            worst_exact.0, worst_exact.1, worst_rounded.0, worst_rounded.1, elapsed
        ),
    );
}

#[test]
fn criterion_2_endogeneity_correction() {
    let clock = Instant::now();
    let reps = 50u64;
    let segment = GenerationSpec::first_segments(1)[0];
    let errors: Vec<(f64, f64)> = (0..reps)
        .map(|r| {
            let mut spec = GenerationSpec::standard(60, 10, vec![segment], 1000 + r);
            spec.destinations_are_origins = false;
            spec.origin_regions = vec![RegionTag::Nj, RegionTag::NysOther];
            spec.ranges.radius_km = Range::new(2.0, 25.0);
            spec.noise_sd = 0.5;
            spec.endogeneity_strength = 0.8;
            spec.cost_disturbance_sd = 2.0;
            let g = generate(&spec).unwrap();
            let truth = g.truth.segment(segment).unwrap().cost;
            let base = EstimateOptions {
                fit_statistics: false,
                ..Default::default()
            };
            let ols = EstimateOptions {
                method: Method::Ols,
                ..base.clone()
            };
            let a = estimate_segment::<f64>(&g.dataset, &g.exact, segment, &ols).unwrap();
            let b = estimate_segment::<f64>(&g.dataset, &g.exact, segment, &base).unwrap();
            (a.params.cost - truth, b.params.cost - truth)
        })
        .collect();
    let n = reps as f64;
    let ols_mae = errors.iter().map(|e| e.0.abs()).sum::<f64>() / n;
    let tsls_mae = errors.iter().map(|e| e.1.abs()).sum::<f64>() / n;
    let ols_bias = errors.iter().map(|e| e.0).sum::<f64>() / n;
    let tsls_bias = errors.iter().map(|e| e.1).sum::<f64>() / n;
    let elapsed = clock.elapsed();
    let pass = tsls_mae < ols_mae && tsls_mae < 0.25 * ols_mae && within(elapsed, 120);
    verdict(
        2,
        pass,
        format!(
            "mean |error| OLS {ols_mae:.4} vs 2SLS {tsls_mae:.4} (ratio {:.3}); mean signed error OLS {ols_bias:.4} vs 2SLS {tsls_bias:.4}; {elapsed:.1?}",
            tsls_mae / ols_mae
        ),
    );
}

fn softmax_with_outside(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().copied().fold(0.0_f64, f64::max);
    let w: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let d = (-m).exp() + w.iter().sum::<f64>();
    (w.iter().map(|x| x / d).collect(), (-m).exp() / d)
}

/// Closed-form nested logit: inclusive values per group, nest scale `1 - rho`.
fn nested_logit(v: &[f64], keys: &[usize], rho: f64) -> (Vec<f64>, f64) {
    let mu = 1.0 - rho;
    let n_groups = keys.iter().max().map_or(0, |k| k + 1);
    let mut iv = vec![0.0; n_groups];
    for (j, &k) in keys.iter().enumerate() {
        iv[k] += (v[j] / mu).exp();
    }
    let denom = 1.0 + iv.iter().map(|s| s.powf(mu)).sum::<f64>();
    let s = keys
        .iter()
        .enumerate()
        .map(|(j, &k)| iv[k].powf(mu) / denom * (v[j] / mu).exp() / iv[k])
        .collect();
    (s, 1.0 / denom)
}

fn random_grid(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let modes = rng.random_range(1..=6usize);
    let dests = rng.random_range(1..=5usize);
    let n = modes * dests;
    ((0..n).map(|j| j / dests).collect(), (0..n).map(|j| j % dests).collect())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_3_forward_solver_equivalences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::<f64>::default();

    let mut mnl_err = 0.0f64;
    for _ in 0..1000 {
        let (mk, dk) = random_grid(&mut rng);
        let nest = NestingStructure::new(vec![
            NestingDimension::from_keys("mode", &mk),
            NestingDimension::from_keys("destination", &dk),
        ]);
        let v: Vec<f64> = (0..mk.len()).map(|_| rng.random_range(-5.0..3.0)).collect();
        let s = solve_shares(&[0.0, 0.0], &nest, &v, &opts).unwrap();
        let (want, want0) = softmax_with_outside(&v);
        mnl_err = mnl_err.max(max_abs_diff(&s.inside, &want)).max((s.outside - want0).abs());
    }

    let mut nl_err = 0.0f64;
    for rho in [0.2, 0.5, 0.8] {
        for dim in 0..2 {
            for _ in 0..200 {
                let (mk, dk) = random_grid(&mut rng);
                let nest = NestingStructure::new(vec![
                    NestingDimension::from_keys("mode", &mk),
                    NestingDimension::from_keys("destination", &dk),
                ]);
                let v: Vec<f64> = (0..mk.len()).map(|_| rng.random_range(-4.0..2.0)).collect();
                let mut r = [0.0, 0.0];
                r[dim] = rho;
                let s = solve_shares(&r, &nest, &v, &opts).unwrap();
                let (want, want0) = nested_logit(&v, if dim == 0 { &mk } else { &dk }, rho);
                nl_err = nl_err.max(max_abs_diff(&s.inside, &want)).max((s.outside - want0).abs());
            }
        }
    }

    let mut round_trip = 0.0f64;
    for _ in 0..1000 {
        let (mk, dk) = random_grid(&mut rng);
        let nest = NestingStructure::new(vec![
            NestingDimension::from_keys("mode", &mk),
            NestingDimension::from_keys("destination", &dk),
        ]);
        let v: Vec<f64> = (0..mk.len()).map(|_| rng.random_range(-4.0..2.0)).collect();
        let rho = [0.3, 0.2];
        let s = solve_shares(&rho, &nest, &v, &opts).unwrap();
        let back = inverse_utility(&rho, &nest, &s.inside, s.outside).unwrap();
        round_trip = round_trip.max(max_abs_diff(&back, &v));
    }

    let pass = mnl_err <= 1e-12 && nl_err <= 1e-8 && round_trip < 1e-8;
    verdict(
        3,
        pass,
        format!("softmax {mnl_err:.1e}, nested logit {nl_err:.1e}, round trip {round_trip:.1e}"),
    );
}

#[test]
fn criterion_4_value_of_time_arithmetic() {
    let p: SegmentParams<f64> = SegmentParams {
        auto_tt: -0.033,
        cost: -0.147,
        auto_tt_nyc: -0.017,
        cost_nyc: 0.012,
        ..SegmentParams::zero()
    };
    let other = value_of_time(&p, TimeComponent::AutoTt, false, VotSignificance::ALL)
        .unwrap()
        .unwrap();
    let nyc = value_of_time(&p, TimeComponent::AutoTt, true, VotSignificance::ALL)
        .unwrap()
        .unwrap();
    let pass = (other - 13.52).abs() <= 0.15 && (nyc - 22.24).abs() <= 0.15;
    verdict(4, pass, format!("other {other:.3} $/h vs 13.52, NYC {nyc:.3} $/h vs 22.24"));
}

/// Daily tolled trips and the annual revenue (million $) reported for each cell.
const REVENUE_CELLS: [(Population, VehicleClass, Period, f64, f64); 16] = [
    (Population::NotLowIncome, VehicleClass::PassengerCar, Period::Peak, 189_032.0, 620.97),
    (Population::NotLowIncome, VehicleClass::ForHire, Period::Peak, 181_510.0, 99.38),
    (Population::NotLowIncome, VehicleClass::PassengerCar, Period::Overnight, 23_435.0, 19.25),
    (Population::NotLowIncome, VehicleClass::ForHire, Period::Overnight, 20_016.0, 10.96),
    (Population::LowIncome, VehicleClass::PassengerCar, Period::Peak, 24_943.0, 81.49),
    (Population::LowIncome, VehicleClass::ForHire, Period::Peak, 32_821.0, 17.97),
    (Population::LowIncome, VehicleClass::PassengerCar, Period::Overnight, 2_786.0, 2.29),
    (Population::LowIncome, VehicleClass::ForHire, Period::Overnight, 3_736.0, 2.05),
    (Population::Senior, VehicleClass::PassengerCar, Period::Peak, 34_485.0, 113.28),
    (Population::Senior, VehicleClass::ForHire, Period::Peak, 32_483.0, 17.78),
    (Population::Senior, VehicleClass::PassengerCar, Period::Overnight, 4_528.0, 3.72),
    (Population::Senior, VehicleClass::ForHire, Period::Overnight, 3_831.0, 2.10),
    (Population::Student, VehicleClass::PassengerCar, Period::Peak, 20_440.0, 67.15),
    (Population::Student, VehicleClass::ForHire, Period::Peak, 27_246.0, 14.92),
    (Population::Student, VehicleClass::PassengerCar, Period::Overnight, 2_365.0, 1.94),
    (Population::Student, VehicleClass::ForHire, Period::Overnight, 2_367.0, 1.30),
];

/// The LowIncome passenger-car peak cell is listed as 81.49 although
/// 24,943 × $9 × 365 is 81.94, so the 16-cell tolerance cannot be met.
#[test]
#[ignore = "one reference cell disagrees with its own trips × rate × 365"]
fn criterion_5_revenue_arithmetic() {
    let rates = TollRateTable::cordon(9.0, 2.25, 1.5, 365.0);
    let mut volumes = TollVolumes::default();
    for (pop, class, period, trips, _) in REVENUE_CELLS {
        volumes.add(pop, class, period, trips);
    }
    let table = toll_revenue(&volumes, &rates).unwrap();
    let misses: Vec<String> = REVENUE_CELLS
        .iter()
        .filter_map(|&(pop, class, period, _, want)| {
            let got = table.cells[&(pop, class, period)].annual / 1e6;
            ((got - want).abs() > 0.01).then(|| format!("{pop} {class} {period}: {got:.3} vs {want}"))
        })
        .collect();
    let total = table.total / 1e6;
    let pass = misses.is_empty() && (total - 1077.0).abs() <= 1.0;
    verdict(
        5,
        pass,
        format!(
            "{}/16 cells within $0.01M, total {total:.2}M vs 1077M; misses: [{}]",
            16 - misses.len(),
            misses.join("; ")
        ),
    );
}

fn crz_toll() -> Scenario<f64> {
    Scenario {
        toll_schedule: cordon_toll_schedule(9.0, 2.25, 1.5),
        toll_asc_active: true,
        ..Scenario::identity()
    }
}

fn nyc_origins(d: &MarketDataset) -> Vec<String> {
    d.zones().iter().filter(|z| z.region.is_nyc()).map(|z| z.id.clone()).collect()
}

#[test]
fn criterion_6_calibration_self_consistency() {
    let clock = Instant::now();
    let mut spec = GenerationSpec::standard(8, 4, GenerationSpec::first_segments(2), 6);
    spec.total_trips = Range::new(2.0e6, 5.0e6);
    let g = generate(&spec).unwrap();
    let d = &g.dataset;
    let truth_toll = [-0.287, -0.224, -0.214, -0.182];
    let truth = g.truth.clone().with_toll(TollAscs::from_array(truth_toll));
    let pre = Scenario::identity();
    let post = crz_toll();
    let solver = SolverOptions::default();

    let all: Vec<String> = d.zones().iter().map(|z| z.id.clone()).collect();
    let by_mode = |name: &str, mode: Mode, origins: &[String]| {
        let mut g = RegionGroup::auto_into_crz(name, origins.iter().cloned());
        g.modes = [mode].into_iter().collect();
        g
    };
    let groups = vec![
        by_mode("driving_nyc", Mode::Driving, &nyc_origins(d)),
        by_mode("fhv_all", Mode::Fhv, &all),
        by_mode("carpool_all", Mode::Carpool, &all),
        by_mode("transit_into_crz", Mode::Transit, &all),
    ];
    let targets = CalibrationTargets {
        groups: groups
            .into_iter()
            .map(|g| {
                let v = predicted_change(d, &truth, &pre, &post, &g, &solver).unwrap();
                (g, v)
            })
            .collect(),
    };
    let r = calibrate(d, &g.truth, &targets, &pre, &post, &CalibrationOptions::default()).unwrap();
    let worst_pp = r
        .observed
        .iter()
        .map(|(k, o)| (r.predicted[k] - o).abs())
        .fold(0.0, f64::max);
    let elapsed = clock.elapsed();
    let pass = r.objective < 1e-12 && worst_pp < 1e-6 && within(elapsed, 60);
    verdict(
        6,
        pass,
        format!(
            "objective {:.2e}, worst target gap {worst_pp:.2e} pp, constants {:?}, {elapsed:.1?}",
            r.objective,
            r.toll.to_array()
        ),
    );
}

#[test]
fn criterion_7_compensation_solvers() {
    let clock = Instant::now();
    let mut spec = GenerationSpec::standard(6, 4, GenerationSpec::first_segments(2), 7);
    spec.total_trips = Range::new(2.0e4, 5.0e4);
    let g = generate(&spec).unwrap();
    let d = &g.dataset;
    let params: ParameterSet<f64> = g.truth.with_toll(TollAscs::from_array([-0.05, -0.02, -0.02, 0.0]));
    let toll = Scenario {
        toll_schedule: cordon_toll_schedule(3.0, 0.75, 0.5),
        toll_asc_active: true,
        ..Scenario::identity()
    };
    let scope = CompensationScope::by_origin("nyc", d, |z| z.region.is_nyc()).unwrap();
    let problem =
        CompensationProblem::new(d, &params, &Scenario::identity(), toll, scope, CompensationOptions::default()).unwrap();
    let loss = problem.cv_of_lever(&Lever::default()).unwrap();

    let kh_wait = solve_kaldor_hicks(&problem, KhLever::Wait).unwrap();
    let reapplied = problem.cv_of_lever(&Lever::wait(kh_wait.wait_reduction_min)).unwrap();
    let a = loss < 0.0 && reapplied.abs() < 1.0;

    let levels = wait_grid(5.0, 0.5);
    let schedule = solve_pareto(&problem, &levels).unwrap();
    let worst_residual = schedule
        .iter()
        .flat_map(|r| r.residual_cv.values().copied())
        .fold(f64::INFINITY, f64::min);
    let monotone = schedule.windows(2).all(|w| w[1].annual_subsidy <= w[0].annual_subsidy);
    let b = worst_residual >= -1.0 && monotone;

    let mut c = true;
    let mut tightest = f64::INFINITY;
    for r in &schedule {
        let kh = solve_kaldor_hicks(
            &problem,
            KhLever::Fare {
                wait_reduction: r.wait_reduction_min,
            },
        )
        .unwrap();
        c &= r.annual_subsidy >= kh.annual_subsidy;
        tightest = tightest.min(r.annual_subsidy - kh.annual_subsidy);
    }
    let elapsed = clock.elapsed();
    let pass = a && b && c && within(elapsed, 120);
    verdict(
        7,
        pass,
        format!(
            "loss {loss:.1} $/day, KH wait {:.3} min leaves {reapplied:.3} $/day; Pareto worst residual {worst_residual:.3} $/day, subsidy nonincreasing {monotone}; min Pareto minus KH subsidy {tightest:.1} $/yr; {elapsed:.1?}",
            kh_wait.wait_reduction_min
        ),
    );
}

#[test]
fn criterion_8_welfare_properties() {
    let mut spec = GenerationSpec::standard(8, 4, one_segment_per_population(Purpose::Commute, Period::Peak), 8);
    spec.total_trips = Range::new(2.0e4, 5.0e4);
    let g = generate(&spec).unwrap();
    let d = &g.dataset;
    let params = g.truth.with_toll(TollAscs::from_array([-0.287, -0.224, -0.214, -0.182]));
    let solver = SolverOptions::default();
    let identity = Scenario::identity();

    let same = welfare_report(d, &params, &identity, &identity, &solver).unwrap();
    let identity_exact = same.markets.iter().all(|m| m.cv_per_trip == 0.0 && m.cv_per_day == 0.0);

    let pure_toll = Scenario {
        toll_asc_active: false,
        ..crz_toll()
    };
    let tolled = welfare_report(d, &params, &identity, &pure_toll, &solver).unwrap();
    let all_losses = tolled.markets.iter().all(|m| m.cv_per_trip <= 0.0);

    let total = tolled.total.cv_per_day;
    let mut worst_gap = 0.0f64;
    let mut check = |parts: Vec<f64>| worst_gap = worst_gap.max((parts.iter().sum::<f64>() - total).abs());
    check(tolled.by_origin.values().map(|a| a.cv_per_day).collect());
    check(tolled.by_segment.values().map(|a| a.cv_per_day).collect());
    check(tolled.by_population.values().map(|a| a.cv_per_day).collect());
    check(tolled.by_region.values().map(|a| a.cv_per_day).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let k = rng.random_range(2..6usize);
        let label: BTreeMap<usize, usize> = (0..d.markets().len()).map(|t| (t, rng.random_range(0..k))).collect();
        check((0..k).map(|part| tolled.aggregate_where(|t| label[&t] == part).cv_per_day).collect());
    }

    let pass = identity_exact && all_losses && worst_gap <= 1e-9;
    verdict(
        8,
        pass,
        format!(
            "identity CV exactly zero {identity_exact}, all toll CVs <= 0 {all_losses}, worst partition gap {worst_gap:.1e} $/day on total {total:.1}"
        ),
    );
}

const DETERMINISM_CONFIG: &str = r#"
seed = 29
output_dir = "out"

[synth]
origins = 6
destinations = 4
segments = 2
total_trips_min = 20000.0
total_trips_max = 50000.0
noise_sd = 0.1

[calibrate]
generate_targets_from = [-0.3, -0.2, -0.1, -0.05]

[[calibrate.targets]]
name = "nyc"
origin_regions = ["CRZ", "UpperManhattan", "NYC_Other"]

[[calibrate.targets]]
name = "outer"
origin_regions = ["NJ", "NYS_Other"]

[compensate]
wait_levels_min = [0.0, 1.0, 2.0]
"#;

fn run_cli(dir: &Path, command: &str, workers: usize) {
    let o = Command::new(env!("CARGO_BIN_EXE_cordon"))
        .arg(command)
        .arg("-c")
        .arg(dir.join("run.toml"))
        .arg("--set")
        .arg(format!("workers={workers}"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{command}: {}", String::from_utf8_lossy(&o.stderr));
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run_manifest.json") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_9_determinism_across_workers() {
    let runs: Vec<BTreeMap<PathBuf, Vec<u8>>> = [1usize, 4]
        .iter()
        .map(|&workers| {
            let dir = tempfile::tempdir().unwrap();
            fs::write(dir.path().join("run.toml"), DETERMINISM_CONFIG).unwrap();
            run_cli(dir.path(), "synth", workers);
            run_cli(dir.path(), "pipeline", workers);
            files_under(&dir.path().join("out"))
        })
        .collect();
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let pass = !a.is_empty() && differing.is_empty();
    verdict(
        9,
        pass,
        format!("{} artifacts compared at 1 and 4 workers, differing: {differing:?}", a.len()),
    );
}
