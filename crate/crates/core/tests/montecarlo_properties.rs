use grp_urn::montecarlo::{
    clt_report_different_rates, clt_report_same_rate, loglog_slope, mean_profile, mean_theta_sq,
    random_limit_check, run_experiment, ExperimentConfig, Moments,
};
use grp_urn::schedule::{BurnIn, ScheduleSpec};
use grp_urn::UrnParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P0: [f64; 3] = [1.0 / 6.0, 1.0 / 3.0, 0.5];

fn example1_spec() -> ScheduleSpec {
    ScheduleSpec::Example1 { c: 1.0, eps: 0.5, b0_norm: 1.0, burn_in: BurnIn::Clamp }
}

fn example2_spec() -> ScheduleSpec {
    ScheduleSpec::Example2 { eps: 0.75, delta: 0.5, b0_norm: 1.0, offset: 1 }
}

#[test]
fn moment_merge_is_order_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f64> = (0..5000).map(|_| rng.gen_range(-3.0..7.0)).collect();
    let whole: Moments = data.iter().copied().collect();
    for _ in 0..50 {
        let mut cuts: Vec<usize> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(0..data.len())).collect();
        cuts.push(0);
        cuts.push(data.len());
        cuts.sort_unstable();
        let mut parts: Vec<Moments> = cuts.windows(2).map(|w| data[w[0]..w[1]].iter().copied().collect()).collect();
        // merge in a shuffled order
        for i in (1..parts.len()).rev() {
            parts.swap(i, rng.gen_range(0..=i));
        }
        let merged = parts.iter().fold(Moments::new(), |acc, m| acc.merge(m));
        assert_eq!(merged.count(), whole.count());
        assert!((merged.mean() - whole.mean()).abs() <= 1e-12);
        assert!((merged.variance() - whole.variance()).abs() <= 1e-12 * whole.variance());
    }
}

#[test]
fn example1_mean_converges_and_remainder_shrinks() {
    let params = UrnParams::proportional(&P0, 1.0, 1.0).unwrap();
    let cfg = ExperimentConfig::new(params, example1_spec(), vec![1_000, 10_000, 100_000], 1000, 20_240_601);
    let res = run_experiment(&cfg).unwrap();

    let last = mean_profile(res.last());
    for i in 0..3 {
        let z = (last.mean[i] - P0[i]) / last.standard_error[i];
        assert!(z.abs() < 3.0, "component {i}: z = {z}");
    }

    let norms: Vec<f64> = res
        .horizons
        .iter()
        .map(|h| clt_report_same_rate(h, &P0, &cfg.schedule).unwrap().mean_remainder_norm())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");

    let lim = random_limit_check(res.last()).unwrap();
    assert!(!lim.random_limit_detected, "{lim:?}");
}

#[test]
fn example2_remainder_shrinks_and_theta_decays() {
    let p0 = [0.4, 0.6];
    let params = UrnParams::proportional(&p0, 1.0, 0.0).unwrap();
    let cfg = ExperimentConfig::new(params, example2_spec(), vec![1_000, 10_000, 100_000], 1000, 77);
    let res = run_experiment(&cfg).unwrap();

    let reports: Vec<_> =
        res.horizons.iter().map(|h| clt_report_different_rates(h, &p0, &cfg.schedule).unwrap()).collect();
    let norms: Vec<f64> = reports.iter().map(|r| r.mean_remainder_norm()).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    // component means of the remainder sit within 3 standard errors of 0
    let last = reports.last().unwrap();
    for (i, m) in last.remainder_component_means().iter().enumerate() {
        let col: Moments = last.remainder.iter().map(|row| row[i]).collect();
        let se = (col.variance() / last.remainder.len() as f64).sqrt();
        assert!(m.abs() < 3.0 * se, "component {i}: mean {m}, se {se}");
    }

    // E‖θ_n‖² = O(n^{ε−2δ}) = O(n^{−0.25})
    let points: Vec<(f64, f64)> = res.horizons[..2]
        .iter()
        .map(|h| (h.horizon as f64, mean_theta_sq(h, &p0)))
        .collect();
    let slope = loglog_slope(&points);
    assert!((slope + 0.25).abs() <= 0.1, "slope {slope}");
}

#[test]
fn pemantle_power_has_random_limit() {
    let params = UrnParams::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let spec = ScheduleSpec::PemantlePower { a: 1.0, exponent: 2.0 };
    let cfg = ExperimentConfig::new(params, spec, vec![10_000], 500, 9);
    let res = run_experiment(&cfg).unwrap();
    let lim = random_limit_check(res.last()).unwrap();
    assert!(lim.across_variance[0] > 0.001, "{lim:?}");
    assert!(lim.random_limit_detected);
}

#[test]
fn standard_polya_beta_limits() {
    // b0 = (1,1), B0 = 0: limit Beta(1,1), variance 1/12
    // b0 = (1,1), B0 = (1,1): limit Beta(2,2), variance 1/20
    for (big_b0, expected) in [(vec![0.0, 0.0], 1.0 / 12.0), (vec![1.0, 1.0], 1.0 / 20.0)] {
        let params = UrnParams::new(vec![1.0, 1.0], big_b0).unwrap();
        let cfg = ExperimentConfig::new(params, ScheduleSpec::StandardPolya { alpha: 1.0 }, vec![2_000], 2000, 12);
        let res = run_experiment(&cfg).unwrap();
        let lim = random_limit_check(res.last()).unwrap();
        assert!((lim.across_variance[0] - expected).abs() < 0.01, "{lim:?}");
        assert!(lim.random_limit_detected);
    }
}

#[test]
fn horizons_share_one_trajectory() {
    let params = UrnParams::proportional(&P0, 1.0, 1.0).unwrap();
    let short = run_experiment(&ExperimentConfig::new(params.clone(), example1_spec(), vec![500], 4, 3)).unwrap();
    let long = run_experiment(&ExperimentConfig::new(params, example1_spec(), vec![500, 5000], 4, 3)).unwrap();
    assert_eq!(short.horizons[0], long.horizons[0]);
}
