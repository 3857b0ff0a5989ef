use mobunc::staypoint::{attach_poi, extract_stay_events, StayParams};
use mobunc::synthgen::{generate_population, inject_anomalies, render_gps, InjectionKind, InjectionSpec};
use proptest::prelude::*;

#[test]
fn population_density_is_realistic() {
    let ds = generate_population(500, 56, 1).unwrap();
    let per_day = ds.n_events() as f64 / (500.0 * 56.0);
    assert!((3.0..=8.0).contains(&per_day), "mean events per agent-day {per_day}");
    for a in &ds.agents {
        for d in 0..56 {
            assert!(!a.day(d).is_empty());
        }
        assert!(a.labels.iter().all(|&l| !l));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rendered_tracks_extract_back_to_the_same_events(seed in 0u64..10_000) {
        let ds = generate_population(3, 7, seed).unwrap();
        for a in &ds.agents {
            let track = render_gps(&a.events);
            let mut got = extract_stay_events(&track, StayParams::default()).unwrap();
            attach_poi(&mut got, &a.events);
            prop_assert_eq!(got.len(), a.events.len());
            for (g, e) in got.iter().zip(&a.events) {
                prop_assert_eq!(g, e);
            }
        }
    }

    #[test]
    fn raising_min_dwell_never_adds_events(seed in 0u64..10_000, lo in 1.0f64..20.0, extra in 0.0f64..40.0) {
        let ds = generate_population(1, 7, seed).unwrap();
        let track = render_gps(&ds.agents[0].events);
        let n = |m: f64| extract_stay_events(&track, StayParams { min_dwell: m, stay_radius: 0.1 }).unwrap().len();
        prop_assert!(n(lo + extra) <= n(lo));
    }

    #[test]
    fn injection_is_deterministic_local_and_sound(seed in 0u64..10_000, kind_idx in 0usize..6) {
        let ds = generate_population(12, 28, seed).unwrap();
        let kind = InjectionKind::ALL[kind_idx];
        let spec = InjectionSpec::new(kind, 2.0 / 12.0, seed ^ 0xabc);
        let a = inject_anomalies(&ds, std::slice::from_ref(&spec)).unwrap();
        let b = inject_anomalies(&ds, &[spec]).unwrap();
        prop_assert_eq!(&a, &b);
        let test_start = ds.split.test().start;
        for (before, after) in ds.agents.iter().zip(&a.agents) {
            let keep = |r: &mobunc::synthgen::AgentRecord| -> Vec<_> {
                r.events.iter().filter(|e| e.day < test_start).cloned().collect()
            };
            prop_assert_eq!(keep(before), keep(after));
            for (e, &label) in after.events.iter().zip(&after.labels) {
                let untouched = before.events.iter().any(|o| o.same_content(e));
                prop_assert_eq!(label, !untouched);
            }
            for w in after.events.windows(2) {
                prop_assert!(w[0].end() < w[1].st);
            }
        }
        prop_assert!(a.agent_labels().iter().any(|&l| l));
    }
}
