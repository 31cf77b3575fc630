use mfdmc::baselines::{fit_baseline, BaselineConfig, BaselineKind, FlatMfModel};
use mfdmc::data::{parse_ratings, InteractionDataset, RatingFormat};
use mfdmc::eval::evaluate_rmse;

/// 5 users × 5 items, 20 of 25 cells observed.
fn tiny() -> InteractionDataset {
    let mut csv = String::from("user,item,rating\n");
    for u in 0..5 {
        for i in 0..5 {
            if (u + 2 * i) % 5 != 0 {
                csv.push_str(&format!("u{u},i{i},{}\n", 1 + (u * 3 + i * 7) % 5));
            }
        }
    }
    parse_ratings(csv.as_bytes(), RatingFormat::GenericCsv).unwrap()
}

#[test]
fn funkmf_objective_decreases_under_full_batch_descent() {
    let ds = tiny();
    let cfg = BaselineConfig { dim: 3, init_std: 0.5, seed: 4, ..BaselineConfig::default() };
    let mut m = FlatMfModel::<f64>::new(BaselineKind::FunkMf, ds.n_users, ds.n_items, &cfg, ds.mean_rating());
    let mut last = m.objective(&ds, cfg.reg).unwrap();
    let start = last;
    for step in 0..500 {
        m.full_batch_step(&ds, cfg.reg, 0.005).unwrap();
        let now = m.objective(&ds, cfg.reg).unwrap();
        assert!(now <= last, "step {step}: {now} > {last}");
        last = now;
    }
    assert!(last < 0.2 * start, "{start} -> {last}");
}

#[test]
fn sgd_fits_beat_the_global_mean() {
    let ds = tiny();
    let mean = ds.mean_rating();
    let mean_rmse = (ds.records.iter().map(|r| (r.rating - mean).powi(2)).sum::<f64>() / ds.len() as f64).sqrt();
    let cfg = BaselineConfig { dim: 4, learning_rate: 0.02, epochs: 300, reg: 0.01, ..BaselineConfig::default() };
    for kind in [BaselineKind::FunkMf, BaselineKind::BiasedMf] {
        let out = fit_baseline::<f64>(kind, &ds, None, &cfg).unwrap();
        assert_eq!(out.history.len(), 300);
        let rmse = evaluate_rmse(&out.model, &ds).unwrap();
        assert!(rmse < 0.5 * mean_rmse, "{}: {rmse} vs mean {mean_rmse}", kind.as_str());
    }
}

#[test]
fn frozen_factors_leave_a_pure_bias_model() {
    let ds = tiny();
    let cfg = BaselineConfig { freeze_factors: true, epochs: 50, ..BaselineConfig::default() };
    let out = fit_baseline::<f64>(BaselineKind::BiasedMf, &ds, None, &cfg).unwrap();
    let fresh = FlatMfModel::<f64>::new(BaselineKind::BiasedMf, ds.n_users, ds.n_items, &cfg, ds.mean_rating());
    assert_eq!(out.model.user_factors, fresh.user_factors);
    assert_eq!(out.model.item_factors, fresh.item_factors);
    assert!(out.model.user_bias.iter().any(|&b| b != 0.0));
}
