use mmkg::cli_io::{ExperimentKind, RunConfig, Table};
use mmkg::geometry::{smootherstep, to_hyperboloidal, HyperCoords};
use mmkg::scattering_data::fmt_f64;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ExperimentKind> {
    prop::sample::select(ExperimentKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn config_survives_print_and_parse(
        k in kind(),
        dr in 0.01f64..0.5,
        t_max in 20.0f64..500.0,
        scale in 1.0f64..100.0,
        seed in any::<u64>(),
    ) {
        let mut cfg = RunConfig::baseline(k);
        cfg.grid.dr = dr;
        cfg.grid.t_max = t_max;
        cfg.tolerances.scale = scale;
        cfg.seed = seed;
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn csv_cells_round_trip_bit_exactly(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 0..20)) {
        let mut t = Table::new(&["a", "b", "c"]);
        for r in rows {
            t.push(r);
        }
        let back = Table::from_csv(&t.to_csv()).unwrap();
        for (x, y) in t.rows.iter().flatten().zip(back.rows.iter().flatten()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        prop_assert_eq!(back.rows.len(), t.rows.len());
    }

    #[test]
    fn formatted_values_carry_seventeen_digits(v in any::<f64>().prop_filter("finite", |v| v.is_finite() && *v != 0.0)) {
        let s = fmt_f64(v);
        let mantissa = s.trim_start_matches('-').split('e').next().unwrap().replace('.', "");
        prop_assert_eq!(mantissa.len(), 17);
    }

    #[test]
    fn hyperboloid_coordinates_invert(tau in 0.5f64..500.0, rho in 0.0f64..0.999) {
        let p = HyperCoords::new(tau, rho).unwrap().to_spacetime();
        prop_assert!(p.t > p.r && p.r >= 0.0);
        let h = to_hyperboloidal(p).unwrap();
        prop_assert!((h.tau - tau).abs() <= 1e-12 * tau.max(1.0));
        prop_assert!((h.rho - rho).abs() <= 1e-12);
    }

    #[test]
    fn smootherstep_is_monotone_and_bounded(x in -1.0f64..2.0, dx in 0.0f64..0.5) {
        let (a, da, _) = smootherstep(x);
        let (b, _, _) = smootherstep(x + dx);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(da >= 0.0);
        prop_assert!(b >= a);
    }
}
