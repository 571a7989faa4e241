use proptest::prelude::*;

use cyclosky::arraysim::{ArrayGeometry, ArraySnapshot, DirectionLM};
use cyclosky::cyclospec::{corr_matrix, cyclic_corr_matrix, CorrMatrix};
use cyclosky::imaging::{skymap, SkymapGrid};
use cyclosky::sched::{
    corruption_risk, flag_mask, track_risk, Channelization, RfiPrediction, Schedule, SiteModel, SlotAssignment,
};
use cyclosky::tracker::{MotionClass, MotionModel, RfiTrack, TrackPoint, TrackerConfig};
use cyclosky::{CMatrix, Complex64};

const FS: f64 = 1.0e6;

fn snapshot() -> impl Strategy<Value = ArraySnapshot> {
    (2usize..6, 4usize..64).prop_flat_map(|(m, n)| {
        prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), m * n).prop_map(move |v| ArraySnapshot {
            data: CMatrix::from_fn(m, n, |i, k| {
                let (re, im) = v[i * n + k];
                Complex64::new(re, im)
            }),
            sample_rate: FS,
            t0: 0.0,
        })
    })
}

fn direction() -> impl Strategy<Value = DirectionLM> {
    (-0.7f64..0.7, -0.7f64..0.7).prop_map(|(l, m)| DirectionLM::new(l, m).unwrap())
}

fn close(a: Complex64, b: Complex64, scale: f64) -> bool {
    (a - b).norm() <= 1e-10 * scale.max(1.0)
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn cyclic_matrix_scales_with_c(snap in snapshot(), alpha in -4e5f64..4e5, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let c = Complex64::new(re, im);
        let scaled = snap.scaled(c);
        let plain = cyclic_corr_matrix(&snap, alpha, false).unwrap();
        let conj = cyclic_corr_matrix(&snap, alpha, true).unwrap();
        let plain_s = cyclic_corr_matrix(&scaled, alpha, false).unwrap();
        let conj_s = cyclic_corr_matrix(&scaled, alpha, true).unwrap();
        let scale = plain.frobenius() * c.norm_sqr();
        for (x, y) in plain.values.iter().zip(plain_s.values.iter()) {
            prop_assert!(close(*x * c.norm_sqr(), *y, scale));
        }
        for (x, y) in conj.values.iter().zip(conj_s.values.iter()) {
            prop_assert!(close(*x * c * c, *y, scale));
        }
    }

    #[test]
    fn conjugate_matrix_is_symmetric(snap in snapshot(), alpha in -4e5f64..4e5) {
        let r = cyclic_corr_matrix(&snap, alpha, true).unwrap();
        prop_assert_eq!(r.values.transpose(), r.values);
    }

    #[test]
    fn negated_alpha_is_adjoint(snap in snapshot(), alpha in -4e5f64..4e5) {
        let plus = cyclic_corr_matrix(&snap, alpha, false).unwrap();
        let minus = cyclic_corr_matrix(&snap, -alpha, false).unwrap();
        prop_assert_eq!(plus.values.adjoint(), minus.values);
    }

    #[test]
    fn zero_alpha_is_classical(snap in snapshot()) {
        let r = corr_matrix(&snap);
        let r0 = cyclic_corr_matrix(&snap, 0.0, false).unwrap();
        prop_assert_eq!(r.values, r0.values);
    }

    #[test]
    fn skymap_scales_linearly(snap in snapshot(), c in 0.01f64..100.0, seed in any::<u64>()) {
        let geom = ArrayGeometry::random_disk(snap.n_antennas(), 1.4e9, 4.0, seed).unwrap();
        let grid = SkymapGrid { n_l: 24, n_m: 24, ..Default::default() };
        let r = corr_matrix(&snap);
        let base = skymap(&r, &geom, &grid).unwrap();
        let scaled = skymap(&CorrMatrix { values: r.values.map(|z| z * c), n_samples: r.n_samples }, &geom, &grid).unwrap();
        let peak = base.max().abs().max(1e-300);
        for (x, y) in base.power.iter().zip(&scaled.power) {
            prop_assert!((y - c * x).abs() <= 1e-12 * c * peak);
        }
    }

    #[test]
    fn motion_class_is_monotone_in_speed(a in 0.0f64..1e-2, b in 0.0f64..1e-2) {
        let config = TrackerConfig::default();
        let rank = |c: MotionClass| match c {
            MotionClass::Stationary => 0,
            MotionClass::Slow => 1,
            MotionClass::Fast => 2,
            MotionClass::Unclassified => unreachable!(),
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rank(MotionClass::from_speed(lo, &config)) <= rank(MotionClass::from_speed(hi, &config)));
    }

    #[test]
    fn risk_is_a_probability(p in direction(), q in direction(), radius in 0.0f64..0.3, excl in 0.01f64..0.5) {
        let rfi = RfiPrediction { direction: q, radius, band: [1.0, 2.0] };
        let r = track_risk(p, [1.5, 3.0], &rfi, excl);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(track_risk(p, [2.5, 3.0], &rfi, excl), 0.0);
    }

    #[test]
    fn risk_grows_with_exclusion_radius(p in direction(), q in direction(), radius in 0.0f64..0.3, excl in 0.01f64..0.5, k in 1.0f64..4.0) {
        let rfi = RfiPrediction { direction: q, radius, band: [1.0, 2.0] };
        prop_assert!(track_risk(p, [1.5, 3.0], &rfi, excl) <= track_risk(p, [1.5, 3.0], &rfi, k * excl));
    }

    #[test]
    fn risk_grows_with_more_sources(p in direction(), qs in prop::collection::vec((direction(), 0.0f64..0.2), 1..5), excl in 0.01f64..0.5) {
        let rfi: Vec<RfiPrediction> = qs.iter().map(|&(direction, radius)| RfiPrediction { direction, radius, band: [1.0, 2.0] }).collect();
        let all = corruption_risk(p, [1.5, 3.0], &rfi, excl);
        prop_assert!((0.0..=1.0).contains(&all));
        prop_assert!(corruption_risk(p, [1.5, 3.0], &rfi[..rfi.len() - 1], excl) <= all);
    }

    #[test]
    fn flag_mask_grows_with_exclusion_radius(
        pointings in prop::collection::vec(prop::option::of(direction()), 1..16),
        start in direction(),
        rate in (-0.01f64..0.01, -0.01f64..0.01),
        excl in 0.01f64..0.3,
        k in 1.0f64..3.0,
    ) {
        let site = SiteModel { latitude: 0.0, slot_length: 10.0, lst0: 0.0 };
        let history: Vec<TrackPoint> = (-5..=0)
            .map(|t| TrackPoint {
                time: t as f64,
                direction: DirectionLM::new(start.l + rate.0 * t as f64, start.m + rate.1 * t as f64).unwrap(),
                power: 1.0,
            })
            .collect();
        let track = RfiTrack {
            id: 0,
            alpha: 1.0,
            conjugate: true,
            model: MotionModel::fit(&history),
            history,
            class: MotionClass::Fast,
            misses: 0,
        };
        let schedule = Schedule {
            slots: pointings
                .iter()
                .enumerate()
                .map(|(slot, p)| SlotAssignment { slot, program: p.map(|_| 1), pointing: *p, risk: 0.0 })
                .collect(),
            total_risk: 0.0,
            objective: 0.0,
            unscheduled: vec![],
            diagnostics: vec![],
        };
        let channels = Channelization { f_start: 1.0e9, width: 1.0e6, count: 8 };
        let tracks = [track];
        let narrow = flag_mask(&tracks, &schedule, &site, 0.0, excl, &channels, &[]).unwrap();
        let wide = flag_mask(&tracks, &schedule, &site, 0.0, k * excl, &channels, &[]).unwrap();
        prop_assert!(narrow.is_subset_of(&wide));
    }
}
