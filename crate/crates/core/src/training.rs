//! Minibatch SGD with momentum over the composite objective, ramped loss
//! weights, weight decay, and epoch-end pruning of under-used centers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, Record};
use crate::error::{Error, Result};
use crate::eval::evaluate_rmse;
use crate::losses::{gradients_with_rmse, population_loss, GradientSet, LossBreakdown};
use crate::model::{softmax_into, BlockKind, Model, ModelConfig, PsiRule, Side};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    LinearRamp,
}

/// Epoch-indexed scalar schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub start: f64,
    #[serde(default)]
    pub end: f64,
    #[serde(default)]
    pub ramp_epochs: usize,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule { kind: ScheduleKind::Constant, start: value, end: value, ramp_epochs: 0 }
    }

    pub fn ramp(start: f64, end: f64, ramp_epochs: usize) -> Self {
        Schedule { kind: ScheduleKind::LinearRamp, start, end, ramp_epochs }
    }

    /// `start + (end - start) * min(1, epoch / ramp_epochs)` for a ramp; a
    /// zero-length ramp sits at `end`.
    pub fn value(&self, epoch: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.start,
            ScheduleKind::LinearRamp => {
                if self.ramp_epochs == 0 {
                    return self.end;
                }
                let frac = (epoch as f64 / self.ramp_epochs as f64).min(1.0);
                self.start + (self.end - self.start) * frac
            }
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.start) || (self.kind == ScheduleKind::LinearRamp && !ok(self.end)) {
            return Err(Error::Config(format!("{name} schedule values must be finite and >= 0")));
        }
        Ok(())
    }
}

/// Live-center counts per view, per side.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveCenters {
    pub user: Vec<usize>,
    pub item: Vec<usize>,
}

impl LiveCenters {
    pub fn of<T: Scalar>(model: &Model<T>) -> Self {
        LiveCenters { user: model.live_counts(Side::User), item: model.live_counts(Side::Item) }
    }
}

/// Initial slot ids of removed centers, `[view]`, per side.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removed {
    pub user: Vec<Vec<usize>>,
    pub item: Vec<Vec<usize>>,
}

impl Removed {
    pub fn is_empty(&self) -> bool {
        self.user.iter().chain(&self.item).all(Vec::is_empty)
    }

    pub fn total(&self) -> usize {
        self.user.iter().chain(&self.item).map(Vec::len).sum()
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub train_rmse: f64,
    pub valid_rmse: Option<f64>,
    pub live_centers: LiveCenters,
    pub removed: Removed,
    pub eta: f64,
    pub gamma: f64,
    pub ablation: bool,
}

/// Everything a run carries between epochs.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    /// Completed epochs.
    pub epoch: usize,
    pub model: Model<T>,
    /// Momentum buffers, congruent with the model's parameter blocks.
    pub velocity: GradientSet<T>,
    pub history: Vec<TrainReport>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: Model<T>) -> Self {
        let velocity = GradientSet::zeros_like(&model);
        TrainState { epoch: 0, model, velocity, history: Vec::new() }
    }

    /// True when every momentum buffer has the shape of its parameter block.
    pub fn is_congruent(&self) -> bool {
        let params = self.model.blocks();
        let vel = self.velocity.blocks();
        params.len() == vel.len() && params.iter().zip(&vel).all(|((a, p), (b, v))| a == b && p.len() == v.len())
    }
}

/// Mean softmax weight of each live center in `view`, over all entities of the
/// given sides.
pub fn cluster_means<T: Scalar>(model: &Model<T>, sides: &[Side], view: usize) -> Vec<f64> {
    let t = model.centers(sides[0]).views[view].len();
    let mut sums = vec![0.0f64; t];
    let mut count = 0usize;
    let mut w = vec![T::zero(); t];
    for &side in sides {
        let store = model.weights(side);
        for e in 0..store.entities {
            softmax_into(store.row(e, view), &mut w);
            for (s, x) in sums.iter_mut().zip(&w) {
                *s += x.as_f64();
            }
        }
        count += store.entities;
    }
    sums.iter().map(|s| s / count.max(1) as f64).collect()
}

/// Relative slack on the pruning threshold. A mean of exactly-uniform weights
/// accumulated over many entities can round to just below `1/t`.
pub const PRUNE_SLACK: f64 = 1e-9;

/// Positions (ascending) to drop given per-center means: every mean `< psi`,
/// except that the best-scoring candidates are kept so that at least
/// `min_live` centers survive.
pub fn prune_plan(means: &[f64], psi: f64, min_live: usize) -> Vec<usize> {
    let t = means.len();
    let cut = psi * (1.0 - PRUNE_SLACK);
    let mut candidates: Vec<usize> = (0..t).filter(|&k| means[k] < cut).collect();
    let max_drop = t.saturating_sub(min_live);
    if candidates.len() > max_drop {
        // Keep the highest-mean candidates; ties keep the lower index.
        candidates.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(b.cmp(&a)));
        candidates.truncate(max_drop);
        candidates.sort_unstable();
    }
    candidates
}

/// Removes centers whose cluster-wise mean softmax weight falls below the
/// threshold, once `state.epoch > prune_after`. With shared centers the mean
/// pools users and items. Logit columns and momentum slots of removed centers
/// are dropped with them.
pub fn prune_centers<T: Scalar>(state: &mut TrainState<T>, psi: PsiRule) -> Removed {
    let views = state.model.config.views;
    let mut removed = Removed { user: vec![Vec::new(); views], item: vec![Vec::new(); views] };
    if state.epoch <= state.model.config.prune_after {
        return removed;
    }
    let min_live = state.model.config.min_centers;
    let groups: Vec<Vec<Side>> =
        if state.model.shares_centers() { vec![vec![Side::User, Side::Item]] } else { vec![vec![Side::User], vec![Side::Item]] };
    for sides in groups {
        for view in 0..views {
            let means = cluster_means(&state.model, &sides, view);
            let initial = state.model.centers(sides[0]).initial;
            let plan = prune_plan(&means, psi.threshold(initial, means.len()), min_live);
            if plan.is_empty() {
                continue;
            }
            let bank_side = sides[0];
            let dim = state.model.centers(bank_side).dim;
            let width = means.len();
            let ids: Vec<usize> = plan.iter().map(|&k| state.model.centers(bank_side).views[view].ids[k]).collect();
            state.model.centers_mut(bank_side).remove(view, &plan);
            state.velocity.remove_centers(bank_side, view, &plan, dim, width);
            for &side in &sides {
                state.model.weights_mut(side).remove_columns(view, &plan);
                if side != bank_side {
                    state.velocity.remove_logit_columns(side, view, &plan, width);
                }
                match side {
                    Side::User => removed.user[view] = ids.clone(),
                    Side::Item => removed.item[view] = ids.clone(),
                }
            }
            log::debug!("epoch {}: view {view} removed centers {ids:?} (means {means:?})", state.epoch);
        }
    }
    removed
}

/// Permutation of record positions for a 0-based epoch.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs one epoch: shuffled minibatches, momentum updates, pruning, report.
pub fn train_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    train: &InteractionDataset,
    valid: Option<&InteractionDataset>,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let config = state.model.config.clone();
    let epoch_index = state.epoch;
    let (eta, gamma) = config.loss_weights(epoch_index);
    let logit_lr = T::lit(config.optimizer.learning_rate);
    let center_lr = T::lit(config.optimizer.center_learning_rate);
    let mu = T::lit(config.optimizer.momentum);

    let order = epoch_order(config.seed, epoch_index, train.len());
    let mut grads = GradientSet::zeros_like(&state.model);
    let mut batch: Vec<Record> = Vec::with_capacity(config.optimizer.batch_size);
    for chunk in order.chunks(config.optimizer.batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&k| train.records[k]));
        gradients_with_rmse(&state.model, &batch, eta, gamma, &mut grads)?;
        let params = state.model.blocks_mut();
        let velocity = state.velocity.blocks_mut();
        for (((id, p), (_, v)), (_, g)) in params.into_iter().zip(velocity).zip(grads.blocks()) {
            let lr = match id.kind {
                BlockKind::Logits => logit_lr,
                BlockKind::Centers => center_lr,
            };
            for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }
    state.epoch += 1;
    let removed = prune_centers(state, config.psi);

    let losses = population_loss(&state.model, &train.records, eta, gamma)?;
    if let Some(component) = losses.non_finite_component() {
        return Err(Error::NonFinite(format!("loss component {component} at epoch {}", state.epoch)));
    }
    let train_rmse = evaluate_rmse(&state.model, train)?;
    let valid_rmse = match valid {
        Some(v) if !v.is_empty() => Some(evaluate_rmse(&state.model, v)?),
        _ => None,
    };
    state.history.push(TrainReport {
        epoch: state.epoch,
        losses,
        train_rmse,
        valid_rmse,
        live_centers: LiveCenters::of(&state.model),
        removed,
        eta,
        gamma,
        ablation: config.ablation,
    });
    Ok(())
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    /// Parameters with the best validation RMSE (the last epoch's when no
    /// validation set is given).
    pub model: Model<T>,
    pub best_epoch: usize,
    pub history: Vec<TrainReport>,
}

/// Trains for `config.optimizer.epochs` epochs, keeping the best-validation
/// parameters. `on_epoch` sees each report and the current model as soon as
/// the epoch finishes.
pub fn fit_with<T: Scalar>(
    config: &ModelConfig,
    train: &InteractionDataset,
    valid: Option<&InteractionDataset>,
    mut on_epoch: impl FnMut(&TrainReport, &Model<T>, bool) -> Result<()>,
) -> Result<FitOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = Model::init(config, train.n_users, train.n_items)?;
    let mut state = TrainState::new(model);
    let mut best: Option<(f64, usize, Model<T>)> = None;
    for _ in 0..config.optimizer.epochs {
        train_epoch(&mut state, train, valid)?;
        let report = state.history.last().expect("epoch report");
        let score = report.valid_rmse.unwrap_or(report.train_rmse);
        let improved = best.as_ref().is_none_or(|(b, _, _)| score < *b);
        if improved {
            best = Some((score, state.epoch, state.model.clone()));
        }
        on_epoch(report, &state.model, improved)?;
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, model)) if valid.is_some() => (model, epoch),
        _ => (state.model, state.epoch),
    };
    Ok(FitOutcome { model, best_epoch, history: state.history })
}

pub fn fit<T: Scalar>(
    config: &ModelConfig,
    train: &InteractionDataset,
    valid: Option<&InteractionDataset>,
) -> Result<FitOutcome<T>> {
    fit_with(config, train, valid, |_, _, _| Ok(()))
}
