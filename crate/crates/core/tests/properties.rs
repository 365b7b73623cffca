use mbqc_selftest::certify::{
    build_lambda, sequential_distribution, AdaptivePlan, Basis, StepRule,
};
use mbqc_selftest::delegation::{twirl_compensation_gap, Frame};
use mbqc_selftest::device::SiteObservables;
use mbqc_selftest::extraction::{delta_chain, EpsilonSet};
use mbqc_selftest::hilbert::{self, gates, Matrix, PureState, Setting, C64};
use mbqc_selftest::seed::SeedTree;
use mbqc_selftest::stats::{hypergeom_pmf_exact, hypergeom_variance_exact};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame() -> impl Strategy<Value = Frame> {
    (any::<bool>(), 0u8..8).prop_map(|(reflect, shift)| Frame { reflect, shift })
}

fn random_state(dims: Vec<usize>, seed: u64) -> PureState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: usize = dims.iter().product();
    let amps = (0..d)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    PureState::normalized(dims, amps).unwrap()
}

fn basis() -> impl Strategy<Value = Basis> {
    prop_oneof![
        Just(Basis::I),
        Just(Basis::X),
        Just(Basis::Z),
        Just(Basis::A0),
        Just(Basis::A1)
    ]
}

fn plan(n: usize) -> impl Strategy<Value = AdaptivePlan> {
    let rules = proptest::collection::vec((basis(), basis(), any::<u8>()), n);
    (Just(n), rules, any::<u64>()).prop_map(|(n, rules, shuffle)| {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(j, (even, odd, mask))| {
                let depends_on: Vec<usize> = (0..j).filter(|i| mask >> i & 1 == 1).collect();
                if depends_on.is_empty() {
                    StepRule::Fixed { basis: even }
                } else {
                    StepRule::Parity {
                        depends_on,
                        even,
                        odd,
                    }
                }
            })
            .collect();
        AdaptivePlan::new(order, rules).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_composition_is_a_group_action(f in frame(), g in frame(), h in frame(), j in 0u8..8) {
        prop_assert_eq!(f.compose(g).map_angle(j), f.map_angle(g.map_angle(j)));
        prop_assert_eq!(f.compose(g).compose(h), f.compose(g.compose(h)));
        prop_assert_eq!(Frame::IDENTITY.compose(f), f);
    }

    #[test]
    fn twirl_is_compensated(a in 0u8..4, b in 0u8..4, t0 in 0u8..8, t1 in 0u8..8) {
        let settings = [Setting::from_angle_index(a), Setting::from_angle_index(b)];
        let gap = twirl_compensation_gap(&hilbert::bell_target(), &settings, &[t0, t1]).unwrap();
        prop_assert!(gap < 1e-12);
    }

    #[test]
    fn measurement_leaves_normalized_state(seed in any::<u64>(), site in 0usize..3, a in 0u8..4) {
        let psi = random_state(vec![2, 3, 2], seed);
        let obs = if site == 1 {
            let mut m = Matrix::identity(3, 3);
            m[(2, 2)] = C64::new(-1.0, 0.0);
            m
        } else {
            Setting::from_angle_index(a).ideal()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let (_, post) = psi.measure_matrix(site, &obs, &mut rng).unwrap();
        prop_assert!((post.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hypergeometric_pmf_normalizes(n in 2u64..60, m_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
        let m = (m_frac * n as f64) as u64;
        let k = (k_frac * n as f64) as u64;
        let total = (0..=m.min(k)).fold(Ratio::from_integer(0u128), |acc, x| {
            acc + hypergeom_pmf_exact(n, m, k, x).unwrap()
        });
        prop_assert_eq!(total, Ratio::from_integer(1u128));
        prop_assert!(hypergeom_variance_exact(n, m, k).unwrap() <= Ratio::new(u128::from(m), 4));
    }

    #[test]
    fn lambda_matches_sequential_measurement(p in plan(3), seed in any::<u64>(), angles in proptest::collection::vec(-0.4f64..0.4, 3)) {
        let obs: Vec<SiteObservables> = angles
            .iter()
            .map(|&a| SiteObservables::ideal().conjugated(&gates::rotation(a)))
            .collect();
        let psi = random_state(vec![2, 2, 2], seed);
        let v = nalgebra::DVector::from_column_slice(psi.amps());
        let rho = &v * v.adjoint();
        let lambda = build_lambda(&obs, &p).unwrap();
        let a = lambda.distribution(&rho);
        let b = sequential_distribution(&psi, &obs, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_chain_is_monotone(base in proptest::collection::vec(0.0f64..0.1, 5), bump in 1e-6f64..0.05, which in 0usize..5) {
        let eps = |v: &[f64]| EpsilonSet { e1: v[0], e2: v[1], e3: v[2], e4: v[3], e5: v[4] };
        let mut raised = base.clone();
        raised[which] += bump;
        let lo = delta_chain(&eps(&base));
        let hi = delta_chain(&eps(&raised));
        prop_assert!(hi.d1 >= lo.d1 && hi.d2 >= lo.d2);
    }

    #[test]
    fn seed_streams_are_deterministic(master in any::<u64>(), a in 0u64..16, b in 0u64..16) {
        let tree = SeedTree::new(master);
        let x: [u64; 4] = tree.rng(&[a, b]).random();
        let y: [u64; 4] = SeedTree::new(master).rng(&[a, b]).random();
        prop_assert_eq!(x, y);
        let z: [u64; 4] = tree.rng(&[a, b + 16]).random();
        prop_assert_ne!(x, z);
    }

    #[test]
    fn pair_application_matches_embedding(seed in any::<u64>(), s in 0usize..3, t in 0usize..3) {
        prop_assume!(s != t);
        let dims = vec![2, 3, 2];
        let psi = random_state(dims.clone(), seed);
        let op = random_state(vec![dims[s] * dims[t], dims[s] * dims[t]], seed.wrapping_add(1));
        let op = Matrix::from_column_slice(dims[s] * dims[t], dims[s] * dims[t], op.amps());
        let fast = hilbert::apply_on_pair(&dims, psi.amps(), s, t, &op);
        // reference: expand op over the full space entry by entry
        let d: usize = dims.iter().product();
        let digits = |i: usize| [i / 6, (i / 2) % 3, i % 2];
        let mut slow = vec![C64::new(0.0, 0.0); d];
        for (col, amp) in psi.amps().iter().enumerate() {
            let dc = digits(col);
            for (row, slot) in slow.iter_mut().enumerate() {
                let dr = digits(row);
                let other = (0..3).filter(|&q| q != s && q != t).all(|q| dr[q] == dc[q]);
                if other {
                    *slot += op[(dr[s] * dims[t] + dr[t], dc[s] * dims[t] + dc[t])] * amp;
                }
            }
        }
        for (x, y) in fast.iter().zip(&slow) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }
}
