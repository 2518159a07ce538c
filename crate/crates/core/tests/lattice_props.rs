use proptest::prelude::*;

use volterra_ghd::ensembles::{sample_gge, volterra_spectrum, GgeParams};
use volterra_ghd::integrate::integrate;
use volterra_ghd::lattice::{
    local_currents, local_fields, local_fields_banded, log_product, total_field, volterra_rhs, CurrentConvention,
    LatticeState,
};

fn state(max_pairs: usize) -> impl Strategy<Value = LatticeState> {
    (3..=max_pairs)
        .prop_flat_map(|n| prop::collection::vec(0.05f64..4.0, 2 * n))
        .prop_map(|a| LatticeState::new(a).unwrap())
}

/// dQ/dt along the flow by a Richardson central difference; exact for the
/// polynomial fields up to roundoff.
fn flow_derivative(s: &LatticeState, n: usize) -> Vec<f64> {
    let adot = volterra_rhs(s);
    let central = |h: f64| -> Vec<f64> {
        let shifted = |sign: f64| {
            let a = s.a.iter().zip(&adot).map(|(a, d)| a + sign * h * d).collect();
            local_fields(&LatticeState::new(a).unwrap(), n)
        };
        let (p, q) = (shifted(1.0), shifted(-1.0));
        p.iter().zip(&q).map(|(p, q)| (p - q) / (2.0 * h)).collect()
    };
    let scale = adot.iter().zip(&s.a).map(|(d, a)| (d / a).abs()).fold(1.0, f64::max);
    let h = 1e-3 / scale;
    let (d1, d2) = (central(h), central(0.5 * h));
    d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rhs_conserves_sum_and_product(s in state(40)) {
        let d = volterra_rhs(&s);
        let total: f64 = d.iter().sum();
        let log_rate: f64 = d.iter().zip(&s.a).map(|(d, a)| d / a).sum();
        let scale: f64 = s.a.iter().map(|a| a * a).sum();
        prop_assert!(total.abs() <= 1e-12 * scale);
        prop_assert!(log_rate.abs() <= 1e-12 * scale);
    }

    #[test]
    fn banded_fields_match_dense(s in state(20), n in 1usize..=3) {
        prop_assume!(s.sites() > 4 * n);
        let dense = local_fields(&s, n);
        let banded = local_fields_banded(&s, n).unwrap();
        for (x, y) in dense.iter().zip(&banded) {
            prop_assert!((x - y).abs() <= 1e-11 * x.abs().max(1.0));
        }
    }

    #[test]
    fn continuity_currents_close_the_balance(s in state(20), n in 0usize..=3) {
        let sites = s.sites();
        let dq = if n == 0 {
            volterra_rhs(&s).iter().zip(&s.a).map(|(d, a)| 0.5 * d / a).collect()
        } else {
            flow_derivative(&s, n)
        };
        let j = local_currents(&s, n, CurrentConvention::Continuity);
        let scale = j.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..sites {
            let r = dq[i] - (j[i] - j[(i + sites - 1) % sites]);
            prop_assert!(r.abs() <= 1e-8 * scale, "n={} site {} residual {}", n, i, r);
        }
    }

    #[test]
    fn lax_currents_are_minus_half_continuity(s in state(20), n in 1usize..=3) {
        let p = local_currents(&s, n, CurrentConvention::Lax);
        let c = local_currents(&s, n, CurrentConvention::Continuity);
        for (p, c) in p.iter().zip(&c) {
            prop_assert!((p + 0.5 * c).abs() <= 1e-14 * c.abs().max(1.0));
        }
    }

    #[test]
    fn spectrum_second_moment_is_trace(s in state(12)) {
        let w = volterra_spectrum(&s).unwrap();
        let lhs: f64 = w.iter().map(|w| w * w).sum();
        let rhs: f64 = s.a.iter().sum();
        prop_assert!((lhs / rhs - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), beta in 0.3f64..4.0) {
        let p = GgeParams::quadratic(beta).unwrap();
        prop_assert_eq!(sample_gge(&p, 16, seed).unwrap(), sample_gge(&p, 16, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn integration_conserves_charges(seed in any::<u64>()) {
        let p = GgeParams::quadratic(1.5).unwrap();
        let s0 = sample_gge(&p, 32, seed).unwrap();
        let before = [total_field(&s0, 1), total_field(&s0, 2), log_product(&s0)];
        let s = integrate(&s0, 50.0, 1e-10).unwrap();
        prop_assert!(s.time == 50.0 && s.a != s0.a);
        let after = [total_field(&s, 1), total_field(&s, 2), log_product(&s)];
        prop_assert!((after[0] / before[0] - 1.0).abs() <= 1e-7);
        prop_assert!((after[1] / before[1] - 1.0).abs() <= 1e-7);
        prop_assert!((after[2] - before[2]).abs() <= 1e-9);
    }
}
