use deepfactor::backtest::{self, training_rows, ForecastRecord, WindowScheme};
use deepfactor::dataflow::{FeatureCase, YearMonth};
use deepfactor::linear::{self, CvSpec, FoldScheme};
use deepfactor::simulation;
use proptest::prelude::*;

fn records(rows: &[(f64, f64, f64)]) -> Vec<ForecastRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, &(y_hat, y_true, benchmark))| {
            let d = YearMonth { year: 1980, month: 1 }.plus_months(i as i64);
            ForecastRecord {
                method: "m".into(),
                feature_case: FeatureCase::Base,
                horizon: 1,
                window: "cumulative".into(),
                origin_date: d,
                target_date: d.plus_months(1),
                y_hat,
                y_true,
                benchmark,
                train_start: YearMonth { year: 1960, month: 1 },
                train_end: d.plus_months(-1),
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn r2_os_sign_matches_mspe_ordering(rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..40)) {
        let recs = records(&rows);
        let bench = backtest::benchmark_mspe(&recs).unwrap();
        prop_assume!(bench > 1e-12);
        let r2 = backtest::r2_os(&recs).unwrap();
        let mspe = backtest::mspe(&recs).unwrap();
        prop_assert_eq!(r2 > 0.0, mspe < bench);
        prop_assert!((r2 - (1.0 - mspe / bench)).abs() < 1e-12);
    }

    #[test]
    fn dm_is_antisymmetric(d in prop::collection::vec(-2.0f64..2.0, 5..60), lag in 0usize..4) {
        let a = backtest::dm_statistic(&d, lag);
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let b = backtest::dm_statistic(&neg, lag);
        prop_assert!(a.statistic == -b.statistic || (a.statistic == 0.0 && b.statistic == 0.0));
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn training_windows_end_h_months_before_origin(
        fixed in any::<bool>(),
        length in 44usize..120,
        start in 0usize..5,
        origin in 0usize..300,
        h in 1usize..13,
    ) {
        let scheme = if fixed {
            WindowScheme::FixedMoving { length }
        } else {
            WindowScheme::Cumulative { start: None, min_history: length }
        };
        if let Some((lo, hi)) = training_rows(&scheme, start, origin, h) {
            prop_assert!(lo >= start);
            prop_assert!(lo <= hi);
            prop_assert_eq!(hi + h, origin);
            if fixed {
                prop_assert_eq!(origin + 1 - lo, length);
            } else {
                prop_assert_eq!(lo, start);
            }
        } else {
            prop_assert!(origin + 1 < start + length || origin < start + h);
        }
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(z in -10.0f64..10.0, gamma in 0.0f64..5.0) {
        let s = linear::soft_threshold(z, gamma);
        prop_assert!(s.abs() <= z.abs());
        prop_assert!(s == 0.0 || s.signum() == z.signum());
        prop_assert!((s.abs() - (z.abs() - gamma).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn folds_partition_the_rows(n in 2usize..200, folds in 2usize..10, seed in any::<u64>(), random in any::<bool>()) {
        prop_assume!(folds <= n);
        let cv = CvSpec {
            folds,
            grid: vec![1.0],
            scheme: if random { FoldScheme::RandomFold } else { FoldScheme::ContiguousBlock },
            seed,
        };
        let f = linear::fold_indices(n, &cv);
        prop_assert_eq!(f.len(), folds);
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(f.iter().all(|v| !v.is_empty()));
    }

    #[test]
    fn noise_calibration_hits_the_target(var in 1e-3f64..1e3, r2 in 0.01f64..0.99) {
        let s2 = simulation::calibrate_noise(var, r2).unwrap();
        prop_assert!((var / (var + s2) - r2).abs() < 1e-12);
    }

    #[test]
    fn months_round_trip(ord in 0i64..40_000, step in -600i64..600) {
        let d = YearMonth::from_ordinal(ord);
        prop_assert_eq!(d.ordinal(), ord);
        prop_assert_eq!(d.plus_months(step).ordinal(), ord + step);
        prop_assert_eq!(d.to_string().parse::<YearMonth>().unwrap(), d);
        prop_assert!((1..=12).contains(&d.month));
    }
}
