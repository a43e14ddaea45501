use lobcal_core::chiarella::{
    chiarella_step, demand, run_chiarella, step_with_noise, ChiarellaConfig, ChiarellaError,
    ChiarellaState, FundamentalValue, ThetaChiarella,
};
use lobcal_core::prior::PriorSpec;
use lobcal_core::rng::seeded;
use proptest::prelude::*;

fn theta(
    sigma_n: f64,
    beta: f64,
    gamma_m: f64,
    kappa: f64,
    beta_hf: f64,
    gamma_hf: f64,
) -> ThetaChiarella {
    ThetaChiarella {
        sigma_n,
        beta,
        gamma_m,
        kappa,
        beta_hf,
        gamma_hf,
    }
}

fn prior_median() -> ThetaChiarella {
    ThetaChiarella::from_log10(&PriorSpec::chiarella().midpoint()).unwrap()
}

#[test]
fn fundamental_relaxation_is_geometric() {
    // with only the fundamental term, p_t - v = (p_0 - v) (1 - lambda kappa dt)^t
    let cfg = ChiarellaConfig::default();
    let th = theta(0.0, 0.0, 0.0, 2.0, 0.0, 0.0);
    // v = 0 keeps the deviation at full relative precision
    let (v, p0) = (0.0, 50.0);
    let rate = 1.0 - cfg.kyle_lambda * th.kappa * cfg.dt;
    let mut s = ChiarellaState::at(p0);
    for t in 1..=500 {
        s = step_with_noise(&s, &th, &cfg, v, 0.0).0;
        let exact = v + (p0 - v) * rate.powi(t);
        assert!(
            ((s.price - v) - (exact - v)).abs() <= 1e-10 * (exact - v).abs(),
            "t={t}"
        );
    }
}

#[test]
fn pure_noise_increment_std() {
    let cfg = ChiarellaConfig::default();
    let th = theta(3.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut rng = seeded(17);
    let mut s = ChiarellaState::at(10_000.0);
    let n = 100_000;
    let mut sq = 0.0;
    for _ in 0..n {
        let next = chiarella_step(&s, &th, &cfg, 10_000.0, &mut rng).0;
        sq += (next.price - s.price).powi(2);
        s = next;
    }
    let std = (sq / n as f64).sqrt();
    let want = cfg.kyle_lambda * th.sigma_n * cfg.dt.sqrt();
    assert!((std / want - 1.0).abs() < 0.02, "{std} vs {want}");
}

#[test]
fn price_path_independent_of_order_scale() {
    let cfg = ChiarellaConfig {
        n_steps: 300,
        seed: 4,
        ..Default::default()
    };
    let a = run_chiarella(&prior_median(), &cfg).unwrap();
    let b = run_chiarella(
        &prior_median(),
        &ChiarellaConfig {
            order_scale: cfg.order_scale * 3.0,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(a.model_prices, b.model_prices);
    assert_ne!(a.record.trades, b.record.trades);
}

#[test]
fn price_impact_scaling_is_exact() {
    // doubling the impact coefficient while halving every demand coefficient
    // leaves the model price unchanged bit for bit
    let cfg = ChiarellaConfig {
        n_steps: 300,
        seed: 8,
        ..Default::default()
    };
    let th = prior_median();
    let halved = ThetaChiarella {
        sigma_n: th.sigma_n / 2.0,
        beta: th.beta / 2.0,
        kappa: th.kappa / 2.0,
        beta_hf: th.beta_hf / 2.0,
        ..th
    };
    let a = run_chiarella(&th, &cfg).unwrap();
    let b = run_chiarella(
        &halved,
        &ChiarellaConfig {
            kyle_lambda: cfg.kyle_lambda * 2.0,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(a.model_prices, b.model_prices);
}

#[test]
fn mid_tracks_model_price() {
    let cfg = ChiarellaConfig {
        n_steps: 600,
        seed: 21,
        ..Default::default()
    };
    let run = run_chiarella(&prior_median(), &cfg).unwrap();
    let mids: Vec<f64> = run
        .record
        .snapshots
        .chunks(3)
        .map(|c| c[2].mid_price())
        .collect();
    let mut dev: Vec<f64> = mids
        .iter()
        .zip(&run.model_prices)
        .map(|(m, p)| (m - p).abs())
        .collect();
    dev.sort_by(f64::total_cmp);
    let median = dev[dev.len() / 2];
    assert!(median < 5.0, "median |mid - model| = {median} ticks");
}

#[test]
fn random_walk_fundamental_moves() {
    let cfg = ChiarellaConfig {
        n_steps: 200,
        fundamental: FundamentalValue::RandomWalk { step_std: 1.0 },
        ..Default::default()
    };
    let run = run_chiarella(&prior_median(), &cfg).unwrap();
    assert!(run
        .fundamental
        .iter()
        .any(|v| *v != cfg.initial_price as f64));
}

#[test]
fn overshooting_reversion_reports_divergence() {
    // lambda kappa dt = 200: each step overshoots the value by a growing margin
    let cfg = ChiarellaConfig {
        n_steps: 100,
        ..Default::default()
    };
    let th = theta(1.0, 0.0, 0.0, 2_000.0, 0.0, 0.0);
    match run_chiarella(&th, &cfg) {
        Err(ChiarellaError::Diverged { .. }) => {}
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|r| r.model_prices.last().copied())
        ),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn momentum_demand_is_bounded(
        beta in 0.0f64..100.0, gamma in 0.0f64..1e3, beta_hf in 0.0f64..1e3, gamma_hf in 0.0f64..1e3,
        trend in -1e6f64..1e6, trend_hf in -1e6f64..1e6,
    ) {
        let cfg = ChiarellaConfig::default();
        let th = theta(0.0, beta, gamma, 0.0, beta_hf, gamma_hf);
        let s = ChiarellaState { price: 100.0, trend, trend_hf };
        let d = demand(&s, &th, &cfg, 100.0, 0.0);
        prop_assert!(d.momentum.abs() <= cfg.momentum_scale * beta * (1.0 + 1e-12));
        prop_assert!(d.momentum_hf.abs() <= cfg.hf_momentum_scale * beta_hf * (1.0 + 1e-12));
    }

    #[test]
    fn decomposition_sums_to_price_change(
        v in prop::collection::vec(-1.0f64..1.0, 6), eps in -4.0f64..4.0, value in 9_000.0f64..11_000.0,
        trend in -5.0f64..5.0,
    ) {
        let prior = PriorSpec::chiarella();
        let log: Vec<f64> = v.iter().enumerate().map(|(i, u)| prior.midpoint()[i] + u * prior.width()[i] / 2.0).collect();
        let th = ThetaChiarella::from_log10(&log).unwrap();
        let cfg = ChiarellaConfig::default();
        let s = ChiarellaState { price: 10_000.0, trend, trend_hf: -trend };
        let (next, d) = step_with_noise(&s, &th, &cfg, value, eps);
        let dp = cfg.kyle_lambda * (d.fundamental + d.momentum + d.momentum_hf + d.noise);
        prop_assert!((next.price - s.price - dp).abs() <= 1e-9 * (1.0 + dp.abs()));
    }
}
