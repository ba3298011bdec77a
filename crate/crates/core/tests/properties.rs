//! Property-based invariants across the library.

use proptest::prelude::*;

use viscoclamp::control::{
    build_reference, feedforward_nonlinear, measure_reference_force, run_clamp, LoopSettings, Mode, ModelUsed, PIGains,
    ReferenceSpec, DEFAULT_T0,
};
use viscoclamp::harness::{derive_seed, format_level, ProtocolConfig};
use viscoclamp::metrics::{ff_fit, overshoot, settling_time, SettlingSpec};
use viscoclamp::models::{
    invert_tf, simulate_discrete_tf, simulate_forward, simulate_inverse, unstrained_length, Domain, MaxwellParams,
    RationalTransferFunction,
};
use viscoclamp::plant::{make_plant, PlantPreset};
use viscoclamp::signals::{
    median_filter, moving_average, normalize_unit, nrmse, truncated_gaussian_noise, TimeSeries, DEFAULT_DT,
};

fn series(values: Vec<f64>) -> TimeSeries {
    TimeSeries::new(0.0, DEFAULT_DT, values).unwrap()
}

fn feasible_params() -> impl Strategy<Value = MaxwellParams> {
    (0.5f64..3.0, 0.005f64..0.05, 2.0f64..6.0, 1.2f64..3.0)
        .prop_map(|(k2, c, n, ratio)| MaxwellParams::new(k2 * ratio * 5.0, k2, c, n).unwrap())
}

fn poly_from_real_roots(roots: &[f64]) -> Vec<f64> {
    let mut p = vec![1.0];
    for r in roots {
        let mut next = vec![0.0; p.len() + 1];
        for (i, c) in p.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        p = next;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filters_preserve_length_and_constants(len in 25usize..200, value in -5.0f64..5.0, w in 1usize..20) {
        let s = series(vec![value; len]);
        let avg = moving_average(&s, w).unwrap();
        let med = median_filter(&s, 2 * (w / 2) + 1).unwrap();
        prop_assert_eq!(avg.len(), len);
        prop_assert_eq!(med.len(), len);
        prop_assert!(avg.values().iter().all(|v| (v - value).abs() <= 1e-12 * value.abs().max(1.0)));
        prop_assert!(med.values().iter().all(|&v| v == value));
    }

    #[test]
    fn nrmse_is_scale_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60),
        alpha in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(y.iter().any(|v| v.abs() > 1e-3));
        let base = nrmse(&series(y.clone()), &series(yhat.clone())).unwrap();
        let scaled = nrmse(
            &series(y.iter().map(|v| alpha * v).collect()),
            &series(yhat.iter().map(|v| alpha * v).collect()),
        )
        .unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn normalize_round_trip(values in prop::collection::vec(-1e3f64..1e3, 2..100)) {
        let s = series(values);
        prop_assume!(s.max() - s.min() > 1e-6);
        let (unit, scale) = normalize_unit(&s).unwrap();
        prop_assert!(unit.values().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let back = scale.denormalize(&unit).unwrap();
        for (a, b) in s.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn truncated_noise_stays_in_bounds(seed in any::<u64>(), std in 1e-4f64..1.0, k in 1.0f64..4.0, count in 1usize..5000) {
        let noise = truncated_gaussian_noise(seed, std, k * std, count, DEFAULT_DT).unwrap();
        prop_assert_eq!(noise.len(), count);
        prop_assert!(noise.values().iter().all(|v| v.abs() <= k * std));
    }

    #[test]
    fn minimum_phase_inverse_is_an_involution(
        zeros in prop::collection::vec(0.5f64..50.0, 1..4),
        poles in prop::collection::vec(0.5f64..50.0, 3),
        gain in 0.1f64..10.0,
    ) {
        let order = zeros.len();
        let num: Vec<f64> = poly_from_real_roots(&zeros.iter().map(|z| -z).collect::<Vec<_>>()).iter().map(|c| gain * c).collect();
        let den = poly_from_real_roots(&poles[..order].iter().map(|p| -p).collect::<Vec<_>>());
        let h = RationalTransferFunction::new(num, den, Domain::Continuous).unwrap();
        let back = invert_tf(&invert_tf(&h).unwrap()).unwrap();
        for (a, b) in h.num().iter().chain(h.den()).zip(back.num().iter().chain(back.den())) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{:?} vs {:?}", h, back);
        }
    }

    #[test]
    fn biproper_discrete_model_has_feedthrough(
        b in prop::collection::vec(-2.0f64..2.0, 3),
        a1 in -0.5f64..0.5,
        a2 in -0.2f64..0.2,
        u0 in -3.0f64..3.0,
    ) {
        prop_assume!(b[0].abs() > 1e-3);
        let tf = RationalTransferFunction::new(b.clone(), vec![1.0, a1, a2], Domain::Discrete { ts: DEFAULT_DT }).unwrap();
        let y = simulate_discrete_tf(&tf, &series(vec![u0, 0.0, 0.0])).unwrap();
        prop_assert!((y.values()[0] - b[0] * u0).abs() <= 1e-12 * u0.abs().max(1.0));
    }

    #[test]
    fn settling_never_later_for_wider_band(
        level in 0.05f64..0.8,
        tau in 0.002f64..0.05,
        ring in 50.0f64..600.0,
        band in 0.001f64..0.02,
        widen in 1.0f64..5.0,
    ) {
        let y = TimeSeries::from_fn(0.0, DEFAULT_DT, 6001, |t| {
            if t < DEFAULT_T0 { 1.0 } else { level + (1.0 - level) * (-(t - DEFAULT_T0) / tau).exp() * (ring * (t - DEFAULT_T0)).cos() }
        }).unwrap();
        let spec = SettlingSpec::new(DEFAULT_T0, 0.6);
        let narrow = settling_time(&y, 1.0, level, &SettlingSpec { band, ..spec }).unwrap().unwrap_or(f64::INFINITY);
        let wide = settling_time(&y, 1.0, level, &SettlingSpec { band: band * widen, ..spec }).unwrap().unwrap_or(f64::INFINITY);
        prop_assert!(wide <= narrow);
    }

    #[test]
    fn overshoot_ignores_uniform_scale(level in 1.0f64..90.0, dip in 0.0f64..0.1, scale in 0.01f64..100.0) {
        let target = level / 100.0;
        let y = TimeSeries::from_fn(0.0, DEFAULT_DT, 6001, |t| {
            if t < DEFAULT_T0 { 1.0 } else { target - dip * (-(t - DEFAULT_T0) / 0.01).exp() }
        }).unwrap();
        let spec = SettlingSpec::new(DEFAULT_T0, 0.6);
        let a = overshoot(&y, 1.0, level, &spec).unwrap();
        let b = overshoot(&y.map(|v| scale * v).unwrap(), scale, level, &spec).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn ff_fit_is_zero_exactly_without_feedback(
        ff in prop::collection::vec(-1.0f64..0.0, 5..50),
        fb in prop::collection::vec(prop_oneof![Just(0.0), 1e-3f64..0.1, -0.1f64..-1e-3], 50),
    ) {
        prop_assume!(ff.iter().any(|v| v.abs() > 1e-3));
        let u_ff = series(ff.clone());
        prop_assert_eq!(ff_fit(&u_ff, &u_ff).unwrap(), 0.0);
        let total = series(ff.iter().zip(&fb).map(|(a, b)| a + b).collect());
        let any_fb = fb[..ff.len()].iter().any(|&b| b != 0.0);
        prop_assert_eq!(ff_fit(&total, &u_ff).unwrap() > 0.0, any_fb);
    }

    #[test]
    fn seeds_and_level_names_are_stable(base in any::<u64>(), a in any::<u64>(), b in any::<u64>(), pct in 1u32..100) {
        prop_assert_eq!(derive_seed(base, a), derive_seed(base, a));
        if a != b {
            prop_assert_ne!(derive_seed(base, a), derive_seed(base, b));
        }
        prop_assert_eq!(format_level(pct as f64 / 100.0), pct.to_string());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forward_inverse_composition(p in feasible_params(), depth in 0.02f64..0.2, wiggle in 0.0f64..0.02, f0 in 0.5f64..5.0) {
        let x = TimeSeries::from_fn(0.0, DEFAULT_DT, 3001, |t| -depth * (t / 0.02).min(1.0) + wiggle * (30.0 * t).sin()).unwrap();
        let l0 = unstrained_length(&p, f0).unwrap();
        prop_assume!(l0 - depth - wiggle > 0.05 * l0);
        let force = simulate_forward(&p, &x, f0).unwrap();
        let back = simulate_inverse(&p, &force, 0.0).unwrap();
        prop_assert!(nrmse(&x, &back).unwrap() < 1e-3);
    }

    #[test]
    fn constant_stretch_relaxes_to_power_law(p in feasible_params(), frac in 0.02f64..0.3, f0 in 0.5f64..5.0) {
        let l0 = unstrained_length(&p, f0).unwrap();
        let x_hold = -frac * l0;
        let horizon = 10.0 * p.c / p.k2;
        let count = (horizon / DEFAULT_DT).ceil() as usize + 2;
        let x = TimeSeries::from_fn(0.0, DEFAULT_DT, count, |t| if t == 0.0 { 0.0 } else { x_hold }).unwrap();
        let force = simulate_forward(&p, &x, f0).unwrap();
        let expected = p.steady_force(x_hold, l0).unwrap();
        prop_assert!((force.last() - expected).abs() <= 1e-3 * expected, "{} vs {}", force.last(), expected);
    }

    #[test]
    fn plant_output_is_causal(seed in 1u64..1000, step_at in 100usize..400) {
        let plant = make_plant(PlantPreset::Matched, seed).unwrap().noiseless();
        let quiet = TimeSeries::constant(0.0, plant.dt, 800, 0.0).unwrap();
        let stepped = TimeSeries::from_fn(0.0, plant.dt, 800, |t| if t >= step_at as f64 * plant.dt - 1e-12 { -0.1 } else { 0.0 }).unwrap();
        let a = plant.record(&quiet).unwrap();
        let b = plant.record(&stepped).unwrap();
        let first_change = (0..800).find(|&i| a.output.values()[i] != b.output.values()[i]).unwrap();
        prop_assert!(first_change >= step_at + plant.io_delay_samples, "{} < {}", first_change, step_at + plant.io_delay_samples);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn clamp_effort_is_exact_sum_and_deterministic(seed in any::<u64>(), level in 0.05f64..0.8, ki in 0.0f64..5.0) {
        let plant = make_plant(PlantPreset::Matched, 1).unwrap().with_seed(seed);
        let settings = LoopSettings { ff_lead_samples: plant.apparent_delay_samples() + 1, ..LoopSettings::default() };
        let f_ref = measure_reference_force(&plant, DEFAULT_T0 - settings.ff_lead_samples as f64 * plant.dt).unwrap();
        let spec = ReferenceSpec::new(level, f_ref).unwrap();
        let ff = feedforward_nonlinear(&plant.truth.as_maxwell().unwrap(), &build_reference(&spec).unwrap(), 0.0).unwrap();
        let gains = PIGains::new(0.0, ki).unwrap();
        let run = || run_clamp(&plant, &spec, &gains, Some(&ff), Mode::FfFb, ModelUsed::Nonlinear, &settings).unwrap().unwrap();
        let first = run();
        let t = &first.traces;
        for i in 0..t.u.len() {
            prop_assert_eq!(t.u.values()[i], t.u_ff.values()[i] + t.u_fb.values()[i]);
        }
        prop_assert_eq!(&run().traces, t);
    }

    #[test]
    fn config_json_round_trip(seed in any::<u64>(), repeats in 1usize..6, order_seed in any::<u64>(), ki in 0.0f64..50.0, parallel in any::<bool>()) {
        let mut cfg = ProtocolConfig { seed, repeats, order_seed, parallel, ..ProtocolConfig::default() };
        cfg.gains.ki = ki;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ProtocolConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
