//! Linear estimation of the inverted share equations.

mod design;
mod fit;

pub use design::{
    build_design, build_instruments, Column, ColumnRole, DesignMatrix, EndogenousSet, InstrumentFamily, Instruments,
    ModelClass, ShareTable,
};
pub use fit::{
    collect_parameters, estimate_all, estimate_segment, fit, fit_statistics, mcfadden_r2, EstimateOptions,
    EstimationResult, Method,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Alternative, Attributes, Market, MarketDataset, Mode, RegionTag, Segment, Zone};
    use crate::error::Error;
    use crate::synthgen::{generate, GenerationSpec};
    use approx::assert_relative_eq;

    fn seg() -> Segment {
        Segment::all()[0]
    }

    fn attrs(tt: f64, cost: f64, crz: bool) -> Attributes {
        Attributes {
            tt,
            cost,
            access: 0.0,
            egress: 0.0,
            wait: 0.0,
            ivt: 0.0,
            transfers: 0.0,
            toll_flag: false,
            crz_dest: crz,
        }
    }

    /// One market with driving to two destinations, 25 trips each out of 100.
    fn two_driving() -> MarketDataset {
        let zones = vec![Zone::new("crz", RegionTag::Crz), Zone::new("d1", RegionTag::NycOther)];
        let markets = vec![Market {
            segment: seg(),
            origin: 1,
            total_trips: 100,
        }];
        let alts = vec![
            Alternative {
                mode: Mode::Driving,
                destination: 0,
            },
            Alternative {
                mode: Mode::Driving,
                destination: 1,
            },
        ];
        let x = vec![vec![Some(attrs(10.0, 5.0, true)), Some(attrs(20.0, 3.0, false))]];
        MarketDataset::from_parts(zones, markets, alts, x, vec![vec![25, 25]]).unwrap()
    }

    #[test]
    fn log_odds_and_nesting_columns() {
        let d = two_driving();
        let s = ShareTable::from_counts(&d);
        let mnl = build_design::<f64>(&d, &s, seg(), ModelClass::Mnl).unwrap();
        assert_eq!(mnl.n_obs(), 2);
        for y in &mnl.y {
            assert_relative_eq!(*y, -std::f64::consts::LN_2, epsilon = 1e-12);
        }
        assert!(mnl.column("rho_mode").is_none() && mnl.column("rho_dest").is_none());

        let ipdl = build_design::<f64>(&d, &s, seg(), ModelClass::Ipdl).unwrap();
        for v in &ipdl.column("rho_mode").unwrap().values {
            assert_relative_eq!(*v, (0.25f64 / 0.5).ln(), epsilon = 1e-12);
        }
        // Each destination holds a single alternative, so the destination nesting column is ln 1 = 0.
        assert!(ipdl.column("rho_dest").is_none());
        assert!(ipdl.dropped_columns.contains(&"rho_dest".to_string()));

        let nl = build_design::<f64>(&d, &s, seg(), ModelClass::NlMode).unwrap();
        assert!(nl.column("rho_mode").is_some());
    }

    #[test]
    fn zero_outside_share_drops_the_market() {
        let d = two_driving();
        let s = ShareTable::from_parts(vec![vec![0.5, 0.5]], vec![0.0]);
        let m = build_design::<f64>(&d, &s, seg(), ModelClass::Mnl).unwrap();
        assert_eq!(m.n_obs(), 0);
        assert_eq!(m.dropped_markets, vec![0]);
    }

    #[test]
    fn instrument_is_mean_of_other_members() {
        let zones = vec![
            Zone::new("crz", RegionTag::Crz),
            Zone::new("d1", RegionTag::NycOther),
            Zone::new("d2", RegionTag::NysOther),
        ];
        let markets = vec![Market {
            segment: seg(),
            origin: 1,
            total_trips: 100,
        }];
        let mut alts: Vec<Alternative> = (0..3)
            .map(|d| Alternative {
                mode: Mode::Driving,
                destination: d,
            })
            .collect();
        alts.push(Alternative {
            mode: Mode::Transit,
            destination: 0,
        });
        let mut transit = attrs(30.0, 2.9, true);
        transit.ivt = 25.0;
        let x = vec![vec![
            Some(attrs(10.0, 1.0, true)),
            Some(attrs(20.0, 1.0, false)),
            Some(attrs(30.0, 1.0, false)),
            Some(transit),
        ]];
        let d = MarketDataset::from_parts(zones, markets, alts, x, vec![vec![10, 10, 10, 10]]).unwrap();
        let s = ShareTable::from_counts(&d);
        let design = build_design::<f64>(&d, &s, seg(), ModelClass::Ipdl).unwrap();
        let iv = build_instruments(&design, &d, &InstrumentFamily::ALL, &[0, 1]);
        assert_eq!(iv.len(), 6);
        let col = |name: &str| &iv.columns[iv.names.iter().position(|n| n == name).unwrap()];
        assert_eq!(col("iv_auto_tt_mode")[0], 25.0);
        // Transit is alone in its mode group.
        assert_eq!(col("iv_auto_tt_mode")[3], 0.0);
        assert_eq!(col("iv_transit_ivt_mode")[3], 0.0);
        // Transit to the cordon shares its destination group with driving (tt 10).
        assert_eq!(col("iv_auto_tt_destination")[3], 10.0);
        assert_eq!(col("iv_transit_ivt_destination")[0], 25.0);
    }

    fn noiseless(rho: (f64, f64), seed: u64) -> crate::synthgen::Generated {
        let spec = GenerationSpec::standard(5, 4, GenerationSpec::first_segments(2), seed).with_rho(rho.0, rho.1);
        generate(&spec).unwrap()
    }

    fn ols(model_class: ModelClass) -> EstimateOptions {
        EstimateOptions {
            model_class,
            method: Method::Ols,
            ..EstimateOptions::default()
        }
    }

    #[test]
    fn exact_recovery_with_real_shares() {
        let g = noiseless((0.3, 0.2), 11);
        for r in estimate_all::<f64>(&g.dataset, &g.exact, &ols(ModelClass::Ipdl)).unwrap() {
            let truth = g.truth.segment(r.segment).unwrap();
            for name in truth.names() {
                let (a, b) = (r.params.get(&name).unwrap(), truth.get(&name).unwrap());
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "{name}: {a} vs {b}");
            }
            assert!(r.residual_norm < 1e-8);
            assert_relative_eq!(r.adj_r2, 1.0, epsilon = 1e-9);
            assert!(r.rho_valid);
            let offered = g
                .dataset
                .markets_of(r.segment)
                .map(|t| (0..24).filter(|&j| g.dataset.attribute(t, j).is_some()).count())
                .sum::<usize>();
            assert_eq!(r.n_obs, offered);
        }
    }

    #[test]
    fn mnl_nested_in_ipdl() {
        let g = noiseless((0.0, 0.0), 12);
        let ipdl = estimate_all::<f64>(&g.dataset, &g.exact, &ols(ModelClass::Ipdl)).unwrap();
        let mnl = estimate_all::<f64>(&g.dataset, &g.exact, &ols(ModelClass::Mnl)).unwrap();
        for (a, b) in ipdl.iter().zip(&mnl) {
            assert!(a.params.rho_mode.abs() < 1e-6 && a.params.rho_dest.abs() < 1e-6);
            for name in a.names().iter().filter(|n| !n.starts_with("rho_")) {
                let (x, y) = (a.params.get(name).unwrap(), b.params.get(name).unwrap());
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-9), "{name}");
            }
        }
    }

    #[test]
    fn tsls_with_regressors_as_instruments_is_ols() {
        let mut spec = GenerationSpec::standard(5, 4, GenerationSpec::first_segments(1), 13);
        spec.noise_sd = 0.3;
        let g = generate(&spec).unwrap();
        let s = ShareTable::from_counts(&g.dataset);
        let design = build_design::<f64>(&g.dataset, &s, seg(), ModelClass::Ipdl).unwrap();
        let endo = Instruments {
            names: design.endogenous_names().iter().map(|n| n.to_string()).collect(),
            columns: design
                .columns
                .iter()
                .filter(|c| c.role == ColumnRole::Endogenous)
                .map(|c| c.values.clone())
                .collect(),
        };
        let a = fit(&design, &Instruments::none(), Method::Ols).unwrap();
        let b = fit(&design, &endo, Method::Tsls).unwrap();
        for name in a.names() {
            let (x, y) = (a.params.get(&name).unwrap(), b.params.get(&name).unwrap());
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "{name}: {x} vs {y}");
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut spec = GenerationSpec::standard(5, 4, GenerationSpec::first_segments(1), 14);
        spec.noise_sd = 0.2;
        let g = generate(&spec).unwrap();
        let s = ShareTable::from_counts(&g.dataset);
        let design = build_design::<f64>(&g.dataset, &s, seg(), ModelClass::Ipdl).unwrap();
        let iv = build_instruments(&design, &g.dataset, &InstrumentFamily::ALL, &[0, 1]);
        let n = design.n_obs();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut shuffled = design.clone();
        shuffled.rows = perm.iter().map(|&i| design.rows[i]).collect();
        shuffled.y = perm.iter().map(|&i| design.y[i]).collect();
        for c in &mut shuffled.columns {
            let orig = c.values.clone();
            c.values = perm.iter().map(|&i| orig[i]).collect();
        }
        let iv2 = build_instruments(&shuffled, &g.dataset, &InstrumentFamily::ALL, &[0, 1]);
        let a = fit(&design, &iv, Method::Tsls).unwrap();
        let b = fit(&shuffled, &iv2, Method::Tsls).unwrap();
        for name in a.names() {
            let (x, y) = (a.params.get(&name).unwrap(), b.params.get(&name).unwrap());
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "{name}");
        }
    }

    #[test]
    fn tsls_without_instruments_is_under_identified() {
        let g = noiseless((0.3, 0.2), 15);
        let s = ShareTable::from_counts(&g.dataset);
        let design = build_design::<f64>(&g.dataset, &s, seg(), ModelClass::Ipdl).unwrap();
        match fit(&design, &Instruments::none(), Method::Tsls) {
            Err(Error::UnderIdentified { instruments: 0, endogenous: 4 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collinear_column_is_named() {
        let g = noiseless((0.3, 0.2), 16);
        let s = ShareTable::from_counts(&g.dataset);
        let mut design = build_design::<f64>(&g.dataset, &s, seg(), ModelClass::Ipdl).unwrap();
        let mut dup = design.column("theta_auto_tt").unwrap().clone();
        dup.name = "copy".into();
        design.columns.push(dup);
        match fit(&design, &Instruments::none(), Method::Ols) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["copy".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mcfadden_is_zero_for_uniform_data_and_null_model() {
        let d = two_driving();
        // Re-create with equal trips in all three options.
        let d = MarketDataset::from_parts(
            d.zones().to_vec(),
            vec![Market {
                segment: seg(),
                origin: 1,
                total_trips: 99,
            }],
            d.alternatives().to_vec(),
            d.attributes().clone(),
            vec![vec![33, 33]],
        )
        .unwrap();
        let mut p = crate::params::SegmentParams::<f64>::zero();
        p.dest_asc.insert("crz".into(), 0.0);
        p.dest_asc.insert("d1".into(), 0.0);
        let r2 = mcfadden_r2(&p, &d, seg(), &Default::default()).unwrap();
        assert!(r2.abs() < 1e-12);
    }

    #[test]
    fn instruments_correlate_with_cost() {
        let mut spec = GenerationSpec::standard(5, 4, GenerationSpec::first_segments(1), 17);
        spec.noise_sd = 0.3;
        let g = generate(&spec).unwrap();
        let s = ShareTable::from_counts(&g.dataset);
        let design = build_design::<f64>(&g.dataset, &s, seg(), ModelClass::Ipdl).unwrap();
        let iv = build_instruments(&design, &g.dataset, &InstrumentFamily::ALL, &[0, 1]);
        let cost = &design.column("theta_cost").unwrap().values;
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let best = iv.columns.iter().map(|c| corr(c, cost).abs()).fold(0.0, f64::max);
        assert!(best > 0.1, "{best}");
    }

    #[test]
    fn rounded_counts_drop_zero_cells() {
        let mut spec = GenerationSpec::standard(5, 4, GenerationSpec::first_segments(1), 18);
        spec.total_trips = crate::synthgen::Range::new(50.0, 80.0);
        let g = generate(&spec).unwrap();
        let s = ShareTable::from_counts(&g.dataset);
        let design = build_design::<f64>(&g.dataset, &s, seg(), ModelClass::Mnl).unwrap();
        let positive = (0..g.dataset.markets().len())
            .flat_map(|t| (0..g.dataset.alternatives().len()).map(move |j| (t, j)))
            .filter(|&(t, j)| g.dataset.trips(t, j) > 0)
            .count();
        assert_eq!(design.n_obs(), positive);
        assert!(design.dropped_rows > 0);
        let offered = (0..5)
            .flat_map(|t| (0..24).map(move |j| (t, j)))
            .filter(|&(t, j)| g.dataset.attribute(t, j).is_some())
            .count();
        assert_eq!(design.n_obs() + design.dropped_rows, offered);
    }
}
