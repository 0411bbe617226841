use std::path::Path;
use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;

use mrfzoom::bloch::Simulator;
use mrfzoom::dictionary::{
    brute_force_search, generate, grid_from_ranges, AxisSpec, Dictionary, GenOptions, Metric,
    ParameterGrid,
};
use mrfzoom::fingerprint::{add_noise, Fingerprint, TissueParams};
use mrfzoom::phantom::SliceDefinition;
use mrfzoom::sequence::{build_schedule, Schedule};
use mrfzoom::zoom::{zoom_1d, zoom_2d, EntrySource, Quantifier, ZoomConfig};

struct Fixture {
    sched: Schedule,
    grid: ParameterGrid,
    dict: Dictionary,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let sched = build_schedule(200, 4).unwrap();
        let grid =
            grid_from_ranges([(600.0, 1600.0), (100.0, 400.0), (-20.0, 20.0)], [100.0, 50.0, 2.0])
                .unwrap();
        let dict = generate(&grid, &sched, &GenOptions::default(), |_, _| {}).unwrap();
        Fixture { sched, grid, dict }
    })
}

fn axis() -> impl Strategy<Value = AxisSpec> {
    (-50i32..50, 1u32..20, 1usize..40).prop_map(|(min, step, count)| AxisSpec {
        min: min as f64,
        step: step as f64,
        count,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_index_round_trips(t1 in axis(), t2 in axis(), df in axis(), pick in any::<u64>()) {
        let g = ParameterGrid { t1, t2, df };
        let flat = (pick % g.total() as u64) as usize;
        let [a, b, c] = g.unflatten(flat);
        prop_assert_eq!(g.flat_index(a, b, c), flat);
        prop_assert_eq!(flat, (a * g.t2.count + b) * g.df.count + c);
        prop_assert_eq!(g.index_of(&g.params_at([a, b, c])), Some([a, b, c]));
    }

    #[test]
    fn axis_snap_is_nearest(a in axis(), v in -200.0f64..1000.0) {
        let k = a.snap(v);
        prop_assert!(k < a.count);
        for j in 0..a.count {
            prop_assert!((a.value(k) - v).abs() <= (a.value(j) - v).abs() + 1e-9);
        }
    }

    #[test]
    fn schedules_reproducible(n in 1usize..300, seed in any::<u64>()) {
        let a = build_schedule(n, seed).unwrap();
        let b = build_schedule(n, seed).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(a.digest(), b.digest());
        let back = Schedule::from_csv(&a.to_csv(), Path::new("s.csv")).unwrap();
        prop_assert_eq!(back.to_csv(), a.to_csv());
    }

    #[test]
    fn noise_seeded(seed in any::<u64>(), sigma in 0.01f64..2.0) {
        let fp = Fingerprint::new((0..64).map(|k| Complex64::from_polar(1.0, k as f64)).collect());
        let a = add_noise(&fp, sigma, seed).unwrap();
        prop_assert_eq!(&a, &add_noise(&fp, sigma, seed).unwrap());
        prop_assert_ne!(&a, &add_noise(&fp, sigma, seed.wrapping_add(1)).unwrap());
    }

    #[test]
    fn zoom_1d_finds_unimodal_peak(n in 2usize..400, peak_frac in 0.0f64..1.0, init_frac in 0.0f64..1.0) {
        let peak = ((n - 1) as f64 * peak_frac) as usize;
        let init = ((n - 1) as f64 * init_frac) as usize;
        let mut f = |i: usize| Ok(-((i as f64) - peak as f64).abs());
        let steps: Vec<usize> = [64, 16, 4, 1].into_iter().filter(|s| *s < n.max(2)).collect();
        let got = zoom_1d(&mut f, n, init, &steps).unwrap();
        prop_assert_eq!(got, peak);
    }

    #[test]
    fn zoom_2d_finds_separable_peak(n1 in 2usize..120, n2 in 2usize..120,
                                    p in (0.0f64..1.0, 0.0f64..1.0), s in (0.0f64..1.0, 0.0f64..1.0)) {
        let peak = (((n1 - 1) as f64 * p.0) as usize, ((n2 - 1) as f64 * p.1) as usize);
        let init = (((n1 - 1) as f64 * s.0) as usize, ((n2 - 1) as f64 * s.1) as usize);
        let mut f = |i: usize, j: usize| {
            Ok(-((i as f64 - peak.0 as f64).powi(2) + 2.0 * (j as f64 - peak.1 as f64).powi(2)))
        };
        let got = zoom_2d(&mut f, (n1, n2), init, &[(16, 16), (4, 4), (1, 1)]).unwrap();
        prop_assert_eq!(got, peak);
    }

    #[test]
    fn slice_csv_round_trips(w in 1usize..6, h in 1usize..6, bits in any::<u64>()) {
        let voxels = (0..w * h)
            .map(|i| (bits >> (i % 64) & 1 == 1).then(|| TissueParams::new(500.0 + i as f64, 60.0, i as f64 - 3.0)))
            .collect();
        let s = SliceDefinition { width: w, height: h, voxels };
        prop_assert_eq!(SliceDefinition::from_csv(&s.to_csv(), Path::new("x.csv")).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn brute_force_scale_phase_invariant(pick in any::<u64>(), c in 0.01f64..100.0, psi in -3.2f64..3.2) {
        let f = fixture();
        let truth = f.grid.params_at(f.grid.unflatten((pick % f.grid.total() as u64) as usize));
        let fp = Simulator::new(&f.sched).unwrap().simulate(&truth).unwrap();
        let a = brute_force_search(&fp, &f.dict, Metric::Cc).unwrap();
        let b = brute_force_search(&fp.scale(Complex64::from_polar(c, psi)), &f.dict, Metric::Cc).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert_eq!(a.params, truth);
    }

    #[test]
    fn quantify_scale_phase_invariant(pick in any::<u64>(), c in 0.01f64..100.0, psi in -3.2f64..3.2) {
        let f = fixture();
        let truth = f.grid.params_at(f.grid.unflatten((pick % f.grid.total() as u64) as usize));
        let fp = Simulator::new(&f.sched).unwrap().simulate(&truth).unwrap();
        let q = Quantifier::new(&f.sched, ZoomConfig::for_schedule(&f.sched), EntrySource::Simulate).unwrap();
        let a = q.quantify(&fp, &f.grid).unwrap();
        let b = q.quantify(&fp.scale(Complex64::from_polar(c, psi)), &f.grid).unwrap();
        prop_assert_eq!(a.params.t1_ms, b.params.t1_ms);
        prop_assert_eq!(a.params.t2_ms, b.params.t2_ms);
        prop_assert_eq!(a.params.df_hz, b.params.df_hz);
        prop_assert!((b.params.pd / a.params.pd - c).abs() < 1e-6 * c);
    }
}
