//! Single-tile campaigns against the closed-form Poisson tail.

use raresir_core::rare::{estimate_tail, run_tail_phase, CampaignConfig};
use raresir_core::scenario::{GridGeometry, PathLossGrid, Scenario};

fn one_tile(db: f64, area: f64) -> Scenario<f64> {
    let g = GridGeometry::new(1, 1, area.sqrt(), area.sqrt(), (0.0, 0.0)).unwrap();
    Scenario::new("one", PathLossGrid::new(g, vec![Some(db)]).unwrap(), None).unwrap()
}

/// P(N >= k) for N ~ Poisson(m), summed directly.
fn poisson_upper(m: f64, k: u32) -> f64 {
    let mut pmf = (-m).exp();
    let mut below = 0.0;
    for j in 0..k {
        below += pmf;
        pmf *= m / f64::from(j + 1);
    }
    1.0 - below
}

// A lone tile disconnects all its users once N * tau_lambda > 1, so with
// tau_lambda = 1/(k - 1/2) the event L > 0 is exactly N >= k.
fn config(lambda: f64, k: u32, n_tail: u64, seed: u64) -> CampaignConfig<f64> {
    let tau_lambda = 1.0 / (f64::from(k) - 0.5);
    CampaignConfig {
        lambda,
        tau_db: 10.0 * (tau_lambda * lambda).log10(),
        eps: 0.1,
        n_mean: 1,
        n_tail,
        master_seed: seed,
    }
}

#[test]
fn tail_matches_poisson_tail() {
    for (lambda, area, k) in [(0.5, 4.0, 3u32), (2.0, 3.0, 9), (0.01, 100.0, 2)] {
        let sc = one_tile(-20.0, area);
        let cfg = config(lambda, k, 40_000, 11);
        let est = estimate_tail(&sc, &cfg, 0.0).unwrap();
        let exact = poisson_upper(lambda * area, k);
        let se = (exact * (1.0 - exact) / est.n as f64).sqrt();
        assert!(
            (est.p_hat - exact).abs() <= 3.0 * se,
            "lambda {lambda}, k {k}: {} vs {exact} (se {se})",
            est.p_hat
        );
    }
}

#[test]
fn conditional_count_is_shifted_upward() {
    // Given N >= k the conditional mean exceeds the unconditional one.
    let sc = one_tile(-3.0, 1.0);
    let cfg = config(1.0, 2, 20_000, 5);
    let phase = run_tail_phase(&sc, &cfg, 0.0, true, false).unwrap();
    let heat = phase.heatmap.unwrap();
    let m: f64 = 1.0;
    // E[N | N >= 2] = (m - m e^{-m}) / (1 - e^{-m} - m e^{-m})
    let exact = (m - m * (-m).exp()) / (1.0 - (-m).exp() - m * (-m).exp());
    let se = heat.std_err_counts()[0];
    assert!((heat.mean_counts[0] - exact).abs() <= 4.0 * se, "{} vs {exact}", heat.mean_counts[0]);
    assert!(heat.ratio[0].unwrap() > 1.0);
}
