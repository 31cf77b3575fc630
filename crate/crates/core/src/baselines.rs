//! Flat matrix-factorization baselines trained by per-rating SGD: the plain
//! factor model and the variant with user/item biases and a global mean.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_rmse, RatingPredictor};
use crate::model::Side;
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[serde(rename = "funkmf")]
    FunkMf,
    #[serde(rename = "biasedmf")]
    BiasedMf,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::FunkMf => "funkmf",
            BaselineKind::BiasedMf => "biasedmf",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "funkmf" | "funk" => Ok(BaselineKind::FunkMf),
            "biasedmf" | "biased" => Ok(BaselineKind::BiasedMf),
            other => Err(Error::Config(format!("unknown baseline kind {other:?} (expected funkmf or biasedmf)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub dim: usize,
    /// L2 coefficient on factors (and biases for the biased model).
    pub reg: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_std: f64,
    pub seed: u64,
    /// Keep biases and the global mean at zero.
    pub freeze_biases: bool,
    /// Keep factors at their initial values.
    pub freeze_factors: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            dim: 16,
            reg: 0.02,
            learning_rate: 0.005,
            epochs: 20,
            init_std: 0.1,
            seed: 0,
            freeze_biases: false,
            freeze_factors: false,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("baseline dim must be >= 1".into()));
        }
        for (name, x) in [("reg", self.reg), ("learning_rate", self.learning_rate), ("init_std", self.init_std)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!("baseline {name} = {x} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// `pred = q_i · p_u (+ b_i + b_u + mu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatMfModel<T> {
    pub kind: BaselineKind,
    pub dim: usize,
    pub user_factors: Vec<T>,
    pub item_factors: Vec<T>,
    pub user_bias: Vec<T>,
    pub item_bias: Vec<T>,
    pub global_mean: T,
}

impl<T: Scalar> FlatMfModel<T> {
    pub fn new(kind: BaselineKind, users: usize, items: usize, config: &BaselineConfig, global_mean: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std).expect("finite std");
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| if config.init_std > 0.0 { T::lit(normal.sample(&mut rng)) } else { T::zero() }).collect()
        };
        let user_factors = draw(users * config.dim);
        let item_factors = draw(items * config.dim);
        let mean = match kind {
            BaselineKind::BiasedMf if !config.freeze_biases => global_mean,
            _ => 0.0,
        };
        FlatMfModel {
            kind,
            dim: config.dim,
            user_factors,
            item_factors,
            user_bias: vec![T::zero(); users],
            item_bias: vec![T::zero(); items],
            global_mean: T::lit(mean),
        }
    }

    pub fn users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn user_vec(&self, u: usize) -> &[T] {
        &self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_vec(&self, i: usize) -> &[T] {
        &self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    /// Raw prediction; clamping happens at evaluation.
    pub fn predict(&self, user: usize, item: usize) -> Result<T> {
        if user >= self.users() {
            return Err(Error::IndexOutOfRange { side: Side::User, index: user, count: self.users() });
        }
        if item >= self.items() {
            return Err(Error::IndexOutOfRange { side: Side::Item, index: item, count: self.items() });
        }
        let mut pred = dot(self.user_vec(user), self.item_vec(item));
        if self.kind == BaselineKind::BiasedMf {
            pred += self.user_bias[user] + self.item_bias[item] + self.global_mean;
        }
        Ok(pred)
    }

    /// `Σ (r - pred)² + reg Σ (‖p_u‖² + ‖q_i‖²)` over the observed ratings.
    pub fn objective(&self, data: &InteractionDataset, reg: f64) -> Result<f64> {
        let mut total = 0.0;
        for r in &data.records {
            let (u, i) = (r.user as usize, r.item as usize);
            let err = r.rating - self.predict(u, i)?.as_f64();
            let norms = dot(self.user_vec(u), self.user_vec(u)) + dot(self.item_vec(i), self.item_vec(i));
            total += err * err + reg * norms.as_f64();
        }
        Ok(total)
    }

    /// One full-batch gradient step on [`FlatMfModel::objective`] (factors only).
    pub fn full_batch_step(&mut self, data: &InteractionDataset, reg: f64, lr: f64) -> Result<()> {
        let mut gu = vec![T::zero(); self.user_factors.len()];
        let mut gi = vec![T::zero(); self.item_factors.len()];
        let (reg, two, d) = (T::lit(reg), T::lit(2.0), self.dim);
        for r in &data.records {
            let (u, i) = (r.user as usize, r.item as usize);
            let err = T::lit(r.rating) - self.predict(u, i)?;
            for k in 0..d {
                let (p, q) = (self.user_factors[u * d + k], self.item_factors[i * d + k]);
                gu[u * d + k] += -two * err * q + two * reg * p;
                gi[i * d + k] += -two * err * p + two * reg * q;
            }
        }
        let lr = T::lit(lr);
        self.user_factors.iter_mut().zip(&gu).for_each(|(p, &g)| *p -= lr * g);
        self.item_factors.iter_mut().zip(&gi).for_each(|(q, &g)| *q -= lr * g);
        Ok(())
    }

    fn sgd_update(&mut self, user: usize, item: usize, rating: f64, config: &BaselineConfig) -> T {
        let err = T::lit(rating) - self.predict(user, item).expect("indices checked by caller");
        let lr = T::lit(config.learning_rate);
        let reg = T::lit(config.reg);
        if self.kind == BaselineKind::BiasedMf && !config.freeze_biases {
            let (bu, bi) = (self.user_bias[user], self.item_bias[item]);
            self.user_bias[user] += lr * (err - reg * bu);
            self.item_bias[item] += lr * (err - reg * bi);
        }
        if !config.freeze_factors {
            let d = self.dim;
            for k in 0..d {
                let p = self.user_factors[user * d + k];
                let q = self.item_factors[item * d + k];
                self.user_factors[user * d + k] += lr * (err * q - reg * p);
                self.item_factors[item * d + k] += lr * (err * p - reg * q);
            }
        }
        err
    }

    pub fn is_finite(&self) -> bool {
        [&self.user_factors, &self.item_factors, &self.user_bias, &self.item_bias]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.global_mean.is_finite()
    }
}

impl<T: Scalar> RatingPredictor for FlatMfModel<T> {
    fn predict_raw(&self, user: usize, item: usize) -> Result<f64> {
        self.predict(user, item).map(Scalar::as_f64)
    }
}

/// Per-epoch log row for baseline runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub epoch: usize,
    pub train_rmse: f64,
    pub valid_rmse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome<T> {
    pub model: FlatMfModel<T>,
    pub best_epoch: usize,
    pub history: Vec<BaselineReport>,
}

fn check_indices(model_users: usize, model_items: usize, data: &InteractionDataset) -> Result<()> {
    for r in &data.records {
        if r.user as usize >= model_users {
            return Err(Error::IndexOutOfRange { side: Side::User, index: r.user as usize, count: model_users });
        }
        if r.item as usize >= model_items {
            return Err(Error::IndexOutOfRange { side: Side::Item, index: r.item as usize, count: model_items });
        }
    }
    Ok(())
}

/// Shuffled per-rating SGD with best-validation retention.
pub fn fit_baseline<T: Scalar>(
    kind: BaselineKind,
    train: &InteractionDataset,
    valid: Option<&InteractionDataset>,
    config: &BaselineConfig,
) -> Result<BaselineOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_indices(train.n_users, train.n_items, train)?;
    let mut model = FlatMfModel::new(kind, train.n_users, train.n_items, config, train.mean_rating());
    let mut best: Option<(f64, usize, FlatMfModel<T>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for &k in &order {
            let r = train.records[k];
            model.sgd_update(r.user as usize, r.item as usize, r.rating, config);
        }
        if !model.is_finite() {
            return Err(Error::NonFinite(format!("{} parameters diverged at epoch {epoch}", kind.as_str())));
        }
        let train_rmse = evaluate_rmse(&model, train)?;
        let valid_rmse = match valid {
            Some(v) if !v.is_empty() => Some(evaluate_rmse(&model, v)?),
            _ => None,
        };
        let score = valid_rmse.unwrap_or(train_rmse);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        }
        history.push(BaselineReport { epoch, train_rmse, valid_rmse });
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) if valid.is_some() => (m, epoch),
        _ => (model, config.epochs),
    };
    Ok(BaselineOutcome { model, best_epoch, history })
}

/// Plain factor model: minimizes squared error plus L2 on factors.
pub fn funkmf_fit<T: Scalar>(
    train: &InteractionDataset,
    valid: Option<&InteractionDataset>,
    config: &BaselineConfig,
) -> Result<BaselineOutcome<T>> {
    fit_baseline(BaselineKind::FunkMf, train, valid, config)
}

/// Factor model with user/item biases and the training-set mean.
pub fn biasedmf_fit<T: Scalar>(
    train: &InteractionDataset,
    valid: Option<&InteractionDataset>,
    config: &BaselineConfig,
) -> Result<BaselineOutcome<T>> {
    fit_baseline(BaselineKind::BiasedMf, train, valid, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawRating;

    fn dataset(rows: &[(&str, &str, f64)]) -> InteractionDataset {
        let raw = rows.iter().map(|&(u, i, r)| RawRating { user_key: u.into(), item_key: i.into(), rating: r });
        InteractionDataset::from_raw(raw, Some((1.0, 5.0))).unwrap()
    }

    #[test]
    fn prediction_parts_add_up() {
        let cfg = BaselineConfig { dim: 2, init_std: 0.0, ..Default::default() };
        let mut m = FlatMfModel::<f64>::new(BaselineKind::BiasedMf, 1, 1, &cfg, 3.0);
        m.user_bias[0] = 0.5;
        m.item_bias[0] = -0.2;
        assert!((m.predict(0, 0).unwrap() - 3.3).abs() < 1e-15);
        let funk = FlatMfModel::<f64>::new(BaselineKind::FunkMf, 1, 1, &cfg, 3.0);
        assert_eq!(funk.predict(0, 0).unwrap(), 0.0);
        assert!(funk.predict(1, 0).is_err());
    }

    #[test]
    fn constant_data_fits_by_the_mean() {
        let ds = dataset(&[("a", "x", 4.0), ("b", "x", 4.0), ("a", "y", 4.0)]);
        let cfg = BaselineConfig { dim: 3, init_std: 0.0, epochs: 0, ..Default::default() };
        let m = FlatMfModel::<f64>::new(BaselineKind::BiasedMf, ds.n_users, ds.n_items, &cfg, ds.mean_rating());
        assert_eq!(m.global_mean, 4.0);
        assert_eq!(evaluate_rmse(&m, &ds).unwrap(), 0.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("funkmf".parse::<BaselineKind>().unwrap(), BaselineKind::FunkMf);
        assert_eq!("BiasedMF".parse::<BaselineKind>().unwrap(), BaselineKind::BiasedMf);
        assert!("pmf".parse::<BaselineKind>().is_err());
    }
}
