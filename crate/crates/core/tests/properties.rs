use proptest::prelude::*;

use crn::dump::EpisodeDump;
use crn::harness::edge_accuracy;
use crn::oracle::{edge_marginals, enumerate_worlds, map_edge_accuracy, posterior_from_enumeration};
use crn::scm::{sample_log_likelihood, EpisodeSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_worlds_are_well_formed(n in 2usize..7, p in 0.0f64..=1.0, seed in any::<u64>()) {
        let spec = EpisodeSpec { n, k: 20, p_edge: p, ..EpisodeSpec::default() };
        let ep = spec.generate_indexed(seed, 0, 0).unwrap();
        let w = &ep.world;
        for i in 0..n {
            for j in i..n {
                prop_assert!(!w.has_edge(j, i));
            }
            let k = w.in_degree(i) as i32;
            let allowed = if k == 1 { vec![0] } else { vec![1 - k, k - 1] };
            prop_assert!(allowed.contains(&w.bias(i)));
        }
        prop_assert_eq!(ep.len(), 20);
        for s in &ep.samples {
            prop_assert!(s.target < n);
            prop_assert!(s.values.iter().all(|&v| v <= 1));
            prop_assert!(sample_log_likelihood(w, s) <= 0.0);
        }
    }

    #[test]
    fn edge_accuracy_is_symmetric_and_bounded(
        (a, b) in (2usize..6).prop_flat_map(|n| (
            proptest::collection::vec(0u8..=1, n * n),
            proptest::collection::vec(0u8..=1, n * n),
        ))
    ) {
        let (full, lower) = edge_accuracy(&a, &b).unwrap();
        prop_assert_eq!(edge_accuracy(&b, &a).unwrap(), (full, lower));
        prop_assert!((0.0..=1.0).contains(&full) && (0.0..=1.0).contains(&lower));
        prop_assert_eq!(edge_accuracy(&a, &a).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn dump_round_trips(n in 2usize..6, k in 1usize..30, seed in any::<u64>(), index in 0u64..1000) {
        let spec = EpisodeSpec { n, k, ..EpisodeSpec::default() };
        let ep = spec.generate_indexed(seed, 0, index).unwrap();
        let dump = EpisodeDump::from_episode(&ep, seed, spec.p_edge);
        prop_assert_eq!(EpisodeDump::parse(&dump.to_text(), "mem").unwrap(), dump);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn posterior_is_normalized(n in 2usize..4, p in 0.05f64..0.95, k in 0usize..40, seed in any::<u64>()) {
        let spec = EpisodeSpec { n, k: k.max(1), p_edge: p, ..EpisodeSpec::default() };
        let ep = spec.generate_indexed(seed, 0, 0).unwrap();
        let enumeration = enumerate_worlds(n, p).unwrap();
        let post = posterior_from_enumeration(&enumeration, &ep.samples[..k.min(ep.len())]).unwrap();
        prop_assert!((post.total() - 1.0).abs() < 1e-9);
        for (i, m) in edge_marginals(&post).into_iter().enumerate() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&m));
            if i % n >= i / n {
                prop_assert_eq!(m, 0.0);
            }
        }
        let acc = map_edge_accuracy(&ep.samples, &ep.world, p).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }
}
