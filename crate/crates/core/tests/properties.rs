use erm_anatomy::bounds::{
    check_covering, covering_number_bound, covering_radius, generalization_bound, lipschitz_risk_bound, ln_reduction_check,
    mmc_bound, nearest_centre, optimization_bound, NormOrder,
};
use erm_anatomy::data::Sample;
use erm_anatomy::net::{Architecture, ClippedNet, ParamVector};
use erm_anatomy::risk::empirical_risk;
use erm_anatomy::special::{check_beta_bounds, check_gamma_ratio_general, check_wendel};
use erm_anatomy::stats::{pairwise_sum, sign_test_less};
use erm_anatomy::stream::{derive_stream, Purpose, StreamTag};
use proptest::prelude::*;

fn widths() -> impl Strategy<Value = Vec<usize>> {
    (1usize..=3, prop::collection::vec(1usize..=5, 1..=3)).prop_map(|(d, hidden)| {
        let mut w = vec![d];
        w.extend(hidden);
        w.push(1);
        w
    })
}

fn norm_order() -> impl Strategy<Value = NormOrder> {
    prop_oneof![Just(NormOrder::Infinity), (1.0f64..6.0).prop_map(NormOrder::Finite)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generalization_fine_below_coarse(
        widths in widths(), p in 0.5f64..8.0, u in -3.0f64..3.0, gap in 1.0f64..5.0,
        m in 1usize..1_000_000, cap in 1.0f64..50.0, b in 1.0f64..10.0,
    ) {
        let arch = Architecture::new(widths).unwrap();
        let pair = generalization_bound(p, u, u + gap, &arch, m, cap, b).unwrap();
        prop_assert!(pair.fine <= pair.coarse, "{pair:?}");
    }

    #[test]
    fn optimization_fine_below_coarse(
        widths in widths(), p in 0.5f64..8.0, gap in 0.1f64..5.0,
        b in 1.0f64..10.0, cap in 1.0f64..20.0, k in 1usize..10_000_000,
    ) {
        let arch = Architecture::new(widths).unwrap();
        let pair = optimization_bound(p, 0.0, gap, &arch, b, cap, k).unwrap();
        prop_assert!(pair.fine <= pair.coarse, "{pair:?}");
    }

    #[test]
    fn mmc_fine_below_coarse(
        p in 0.1f64..10.0, lip in 0.0f64..10.0, alpha in -5.0f64..5.0, len in 0.01f64..10.0,
        dim in 1usize..50, k in 1usize..1_000_000,
    ) {
        let pair = mmc_bound(p, lip, alpha, alpha + len, dim, k).unwrap();
        prop_assert!(pair.fine <= pair.coarse, "{pair:?}");
    }

    #[test]
    fn nearest_centre_within_radius(
        d in 1usize..5, a in -3.0f64..3.0, len in 0.1f64..5.0, n in 1usize..20, p in norm_order(),
        fractions in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let b = a + len;
        let x: Vec<f64> = fractions[..d].iter().map(|f| a + f * len).collect();
        let c = nearest_centre(&x, a, b, n);
        let diff: Vec<f64> = x.iter().zip(&c).map(|(x, c)| x - c).collect();
        let r = covering_radius(d, a, b, n, p);
        prop_assert!(p.norm(&diff) <= r * (1.0 + 1e-12), "x={x:?} c={c:?} r={r}");
        // the grid has no more centres than the covering bound at that radius
        let bound = covering_number_bound(d, a, b, r, p).unwrap();
        prop_assert!((n as u128).pow(d as u32) <= bound.count, "{bound:?}");
    }

    #[test]
    fn covering_check_passes(d in 1usize..4, n in 1usize..8, p in norm_order(), seed: u64) {
        let mut s = derive_stream(seed, StreamTag::new(Purpose::Probe, 0, 0));
        let check = check_covering(d, -1.0, 2.0, n, p, 200, &mut s).unwrap();
        prop_assert!(check.passed, "{check:?}");
    }

    #[test]
    fn ln_reduction_holds(m in 1.0f64..1e12, c in 1.0f64..100.0, extra in 0.0f64..100.0) {
        let r = ln_reduction_check(m, c + extra, c).unwrap();
        prop_assert!(r.holds, "{r:?}");
    }

    #[test]
    fn risk_is_lipschitz_in_parameters(widths in widths(), cap in 1.0f64..2.0, seed: u64) {
        let arch = Architecture::new(widths).unwrap();
        let d = arch.input_dim();
        let (u, v, b) = (-1.0, 1.0, 1.0);
        let net = ClippedNet::new(arch.clone(), u, v).unwrap();
        let mut s = derive_stream(seed, StreamTag::new(Purpose::Probe, 1, 0));
        let batch: Vec<Sample> = (0..6)
            .map(|_| Sample { x: (0..d).map(|_| s.uniform_in(-b, b)).collect(), y: s.uniform_in(u, v) })
            .collect();
        let mut draw = || {
            let mut t = vec![0.0; net.param_count()];
            s.fill_uniform(-cap, cap, &mut t);
            t
        };
        let (t1, t2) = (draw(), draw());
        let dist = t1.iter().zip(&t2).map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max);
        let r1 = empirical_risk(&net, &ParamVector::new(t1).unwrap(), &batch).unwrap();
        let r2 = empirical_risk(&net, &ParamVector::new(t2).unwrap(), &batch).unwrap();
        let lip = lipschitz_risk_bound(&arch, u, v, b, cap).unwrap();
        prop_assert!((r1 - r2).abs() <= lip * dist, "|{r1} - {r2}| > {lip} * {dist}");
    }

    #[test]
    fn network_output_stays_in_range(widths in widths(), u in -2.0f64..0.0, len in 0.1f64..3.0, seed: u64) {
        let net = ClippedNet::new(Architecture::new(widths).unwrap(), u, u + len).unwrap();
        let mut s = derive_stream(seed, StreamTag::new(Purpose::Probe, 2, 0));
        let mut theta = vec![0.0; net.param_count()];
        s.fill_uniform(-5.0, 5.0, &mut theta);
        let theta = ParamVector::new(theta).unwrap();
        let x: Vec<f64> = (0..net.arch().input_dim()).map(|_| s.uniform_in(-3.0, 3.0)).collect();
        let y = net.forward_scalar(&theta, &x).unwrap();
        prop_assert!((u..=u + len).contains(&y));
    }

    #[test]
    fn gamma_ratio_chains(x in 1e-3f64..200.0, alpha in 0.0f64..=1.0, beta_shift in 0.0f64..6.0) {
        let w = check_wendel(x, alpha).unwrap();
        prop_assert!(w.holds, "{w:?}");
        let g = check_gamma_ratio_general(x, alpha + beta_shift).unwrap();
        prop_assert!(g.holds, "{g:?}");
    }

    #[test]
    fn beta_chain(x in 1e-2f64..30.0, y in 1e-2f64..30.0) {
        prop_assume!(x + y > 1.0);
        let r = check_beta_bounds(x, y).unwrap();
        prop_assert!(r.holds, "{r:?}");
    }

    #[test]
    fn pairwise_sum_matches_naive(values in prop::collection::vec(-1e3f64..1e3, 0..300)) {
        let naive: f64 = values.iter().sum();
        let scale: f64 = values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((pairwise_sum(&values) - naive).abs() <= 1e-12 * scale);
    }

    #[test]
    fn sign_test_is_antisymmetric(pairs in prop::collection::vec((0u8..4, 0u8..4), 0..40)) {
        let first: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let second: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let fwd = sign_test_less(&first, &second);
        let back = sign_test_less(&second, &first);
        prop_assert_eq!((fwd.wins, fwd.losses, fwd.ties), (back.losses, back.wins, back.ties));
        prop_assert!((0.0..=1.0).contains(&fwd.p_value));
        // one of the two one-sided tests must not reject at 1/2
        prop_assert!(fwd.p_value + back.p_value >= 1.0 - 1e-12);
    }

    #[test]
    fn uniform_draws_in_unit_interval(seed: u64, k: u64, n: u64) {
        let mut s = derive_stream(seed, StreamTag::new(Purpose::Sweep, k, n));
        for _ in 0..64 {
            let u = s.uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
    }
}
