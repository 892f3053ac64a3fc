use pathmeasure::chain::{Catalog, MarkovKernel, Node, State};
use pathmeasure::exact::{q, qi, Exact};
use pathmeasure::harmonic::{check_harmonic, phi_closed, Variant};
use pathmeasure::mc::{ks_distance, sample_planar_bm, stream, BesselLocalSampler, McConfig};
use pathmeasure::oracle::{exact_expectation, Backend, Functional};
use pathmeasure::qmeasure::{q_integral, PenalisedWeight, QFunctional, TailFn};
use proptest::prelude::*;
use rand::Rng;

fn state(cat: Catalog, i: i64) -> State {
    match cat {
        Catalog::SrwZ => State::Z(i - 50),
        Catalog::BangBang => State::N(i.rem_euclid(80) as u64),
        Catalog::SrwZ2 => State::Z2(i % 11 - 5, i / 11 - 4),
        Catalog::BinaryTree => {
            let bits: Vec<u8> = (0..(i % 9)).map(|k| ((i >> k) & 1) as u8).collect();
            State::Tree(Node::from_letters(&bits))
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn phi_is_harmonic_off_x0(cat in 0usize..4, i in 0i64..100) {
        let cat = Catalog::all()[cat];
        let phi = phi_closed(cat, Variant::default_for(cat)).unwrap();
        for (_, r) in check_harmonic(&cat, &phi, &[state(cat, i)]) {
            prop_assert_eq!(r, Exact::from(0));
        }
    }

    #[test]
    fn oracle_backends_agree(cat in 0usize..2, i in 0i64..100, n in 0usize..9, k in 1i64..4) {
        let cat = [Catalog::SrwZ, Catalog::BangBang][cat];
        let x = state(cat, 48 + i % 5);
        let f = |s: &State, c: &[u32]| {
            let base = if *s == cat.origin() { qi(2) } else { qi(1) };
            base * q(1, k).pow(c[0] as i32)
        };
        let tracked = [cat.origin()];
        let a = exact_expectation(&cat, x, n, &tracked, &Functional::Terminal(&f), Backend::Enumerate).unwrap();
        let b = exact_expectation(&cat, x, n, &tracked, &Functional::Terminal(&f), Backend::Propagate).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn geometric_moment_of_local_time_is_psi(cat in 0usize..2, i in 0i64..100, rn in 1i64..10) {
        let cat = [Catalog::SrwZ, Catalog::BangBang][cat];
        let r = q(rn, 10);
        let w = PenalisedWeight::catalog(cat, r.clone()).unwrap();
        let x = state(cat, 40 + i % 20);
        let v = q_integral(&w, &x, &QFunctional::one(), &w.x0(), &TailFn::Geometric { ratio: r }).unwrap();
        prop_assert_eq!(v, w.psi_r(&x));
    }

    #[test]
    fn mc_map_ignores_jobs(seed in any::<u64>(), paths in 1usize..300, jobs in 2usize..6) {
        let f = |i: usize, rng: &mut rand_chacha::ChaCha8Rng| (i, rng.random::<u64>());
        let a = McConfig::new(seed, paths).map("prop", f);
        let b = McConfig::new(seed, paths).with_jobs(jobs).map("prop", f);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn winding_reverses_exactly(seed in any::<u64>(), x in 0.2f64..3.0, y in -2.0f64..2.0) {
        let p = sample_planar_bm(200, 1.0, (x, y), &mut stream(seed, "prop", 0), std::f64::consts::PI).unwrap();
        prop_assert_eq!(p.reversed().winding(), -p.winding());
        prop_assert_eq!(p.reversed().reversed().winding(), p.winding());
    }

    #[test]
    fn ks_is_a_symmetric_distance(a in proptest::collection::vec(-5.0f64..5.0, 1..60), b in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
        let d = ks_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&b, &a));
        prop_assert_eq!(ks_distance(&a, &a), 0.0);
    }

    #[test]
    fn bessel_local_time_is_monotone(seed in any::<u64>(), alpha in 0.05f64..0.95) {
        let s = BesselLocalSampler::new(alpha).unwrap();
        let v = s.sample(&[0.1, 0.5, 1.0, 3.0, 3.5], &mut stream(seed, "prop", 1)).unwrap();
        for w in v.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
        prop_assert!(v.iter().all(|(r, l)| *r >= 0.0 && l.is_finite()));
    }
}
