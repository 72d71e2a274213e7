use chunkdelay::compress::skip_schedule;
use chunkdelay::*;
use proptest::prelude::*;

fn random_traj(n: usize, d_s: usize, d_a: usize, dt: f64, seed: u64) -> Trajectory {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<Vec<f64>> = (0..=n)
        .map(|_| (0..d_s).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    Trajectory::from_states(states, d_a, dt, TrajMeta::default()).unwrap()
}

/// Exhaustive argmin over every integer length, earliest on ties.
fn brute_force_length(n: usize, h: usize, m: usize) -> usize {
    let g = |k: usize| k + (k.div_ceil(h) - 1) * m;
    (1..=n).min_by_key(|&k| (g(k).abs_diff(n), k)).unwrap()
}

fn timing(h: usize, m: usize) -> TimingConfig {
    TimingConfig::new(1.0, m as f64, h, 2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn compression_invariants(
        n in 1usize..120,
        h in prop::sample::select(vec![1usize, 2, 3, 4, 8, 16]),
        m in 0usize..9,
        d_a in 1usize..3,
        extra in 0usize..3,
        dt in prop::sample::select(vec![0.05, 0.1, 1.0]),
        seed in any::<u64>(),
    ) {
        let traj = random_traj(n, d_a + extra, d_a, dt, seed);
        let cfg = TimingConfig::new(dt, m as f64 * dt, h, 2).unwrap();
        let c = compress(&traj, &cfg, false).unwrap();
        let np = c.n_prime();
        prop_assert_eq!(c.traj.final_state(), traj.final_state());
        prop_assert_eq!(np + c.skip_schedule.iter().sum::<usize>(), n);
        prop_assert_eq!(c.index_map.len(), np);
        prop_assert_eq!(c.index_map[0], 0);
        prop_assert!(c.index_map.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*c.index_map.last().unwrap() < n);
        for (i, &j) in c.index_map.iter().enumerate() {
            prop_assert_eq!(&c.traj.states[i], &traj.states[j]);
        }
        prop_assert!(validate(&c.traj).is_ok());
        if m == 0 {
            prop_assert_eq!(&c.traj, &traj);
        }
    }

    #[test]
    fn compressed_length_matches_brute_force(
        n in 4usize..=200,
        h in prop::sample::select(vec![2usize, 4, 8]),
        m in 0usize..=8,
    ) {
        let choice = choose_integer_length(n, &timing(h, m)).unwrap();
        prop_assert_eq!(choice.n_prime, brute_force_length(n, h, m));
    }
}

#[test]
fn exact_balance_when_the_solution_is_a_chunk_multiple() {
    // n = k (H + m) - m solves the balance with N' = k H exactly.
    let mut checked = 0;
    for h in [2usize, 4, 8] {
        for m in 0..=8usize {
            for k in 1.. {
                let n = k * (h + m) - m;
                if n > 200 {
                    break;
                }
                if n < 4 {
                    continue;
                }
                let cfg = timing(h, m);
                let c = choose_integer_length(n, &cfg).unwrap();
                assert_eq!(c.n_prime, k * h, "n={n} H={h} m={m}");
                assert_eq!(dp_execution_time(c.n_prime, &cfg).unwrap(), n as f64);
                assert_eq!(adjusted_length(n, &cfg), (k * h) as f64);
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn skips_never_exceed_the_per_boundary_delay_before_the_last() {
    for n in 4..200 {
        for h in [2usize, 4, 8] {
            for m in 1..=8usize {
                let cfg = timing(h, m);
                let c = choose_integer_length(n, &cfg).unwrap();
                let (s, _) = skip_schedule(n, c.n_prime, &cfg);
                if s.len() > 1 {
                    assert!(s[..s.len() - 1].iter().all(|&k| k <= m));
                }
            }
        }
    }
}

#[test]
fn dataset_labels_and_records_line_up() {
    let trajs: Vec<Trajectory> = (0..5).map(|s| random_traj(30, 3, 1, 0.1, s)).collect();
    let cfg = TimingConfig::new(0.1, 0.0, 4, 2).unwrap();
    let out = build_delay_dataset(&trajs, &[0.0, 0.1, 0.2], &cfg, false).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.dataset.len(), 15);
    for (e, r) in out.dataset.entries.iter().zip(&out.records) {
        assert_eq!(e.delta, r.delta);
        assert_eq!(e.traj.len(), r.n_prime);
        assert_eq!(
            r.n_prime + r.skip_schedule.iter().sum::<usize>(),
            r.source_len
        );
        if r.delta == 0.0 {
            assert_eq!(e.traj, trajs[r.source_index]);
        }
    }
}
