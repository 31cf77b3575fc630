//! The composite objective and its analytic gradient.
//!
//! `total = eta * (spread_user + spread_item + cohesion_user + cohesion_item)
//!        + gamma * (entropy_user + entropy_item) + rmse`
//!
//! Spread and cohesion are measured on a view-wise normalized copy of the
//! centers; assembly for prediction uses the raw centers. Over a minibatch the
//! cohesion mean runs over the entities present in the batch and the entropy
//! sum is rescaled by `population / present` so its magnitude matches the
//! full-population value.

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::model::{
    argmax_first, assemble_from, normalize_centers, softmax_into, BlockId, BlockKind, CenterBank, Model,
    NormalizedBank, Side, WeightStore,
};
use crate::scalar::{dot, sq_dist, Scalar};

/// Floor on the batch MSE used when dividing by the RMSE in its gradient.
pub const MSE_FLOOR: f64 = 1e-8;

/// Every component of the objective, as reported per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub spread_user: f64,
    pub spread_item: f64,
    pub cohesion_user: f64,
    pub cohesion_item: f64,
    pub entropy_user: f64,
    pub entropy_item: f64,
    pub prediction_rmse: f64,
    pub total: f64,
    pub eta: f64,
    pub gamma: f64,
}

impl LossBreakdown {
    /// Spread plus cohesion, both sides.
    pub fn center_loss(&self) -> f64 {
        self.spread_user + self.spread_item + self.cohesion_user + self.cohesion_item
    }

    /// Mapped entropy, both sides.
    pub fn weight_loss(&self) -> f64 {
        self.entropy_user + self.entropy_item
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("spread_user", self.spread_user),
            ("spread_item", self.spread_item),
            ("cohesion_user", self.cohesion_user),
            ("cohesion_item", self.cohesion_item),
            ("entropy_user", self.entropy_user),
            ("entropy_item", self.entropy_item),
            ("prediction_rmse", self.prediction_rmse),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Hinge spread penalty summed over views and unordered center pairs.
pub fn spread_loss<T: Scalar>(bank: &CenterBank<T>, rho: T) -> T {
    let mut total = T::zero();
    for view in &bank.views {
        for a in 0..view.len() {
            for b in a + 1..view.len() {
                let d = sq_dist(view.center(a), view.center(b));
                total += (rho - d).max(T::zero());
            }
        }
    }
    total
}

/// Mean over `entities` of the summed squared distance between each view
/// sub-vector (assembled from `normalized`) and its argmax center.
pub fn cohesion_over<T: Scalar>(store: &WeightStore<T>, normalized: &CenterBank<T>, entities: &[usize]) -> T {
    if entities.is_empty() {
        return T::zero();
    }
    let b = normalized.dim;
    let mut weights = Vec::new();
    let mut sub = vec![T::zero(); b];
    let mut total = T::zero();
    for &e in entities {
        for (j, view) in normalized.views.iter().enumerate() {
            weights.resize(view.len(), T::zero());
            softmax_into(store.row(e, j), &mut weights);
            crate::model::weighted_center_sum(view, &weights, &mut sub);
            total += sq_dist(view.center(argmax_first(&weights)), &sub);
        }
    }
    total / T::from_usize_lossy(entities.len())
}

/// Full-population cohesion of one side.
pub fn cohesion_loss<T: Scalar>(model: &Model<T>, side: Side) -> T {
    let normalized = normalize_centers(model.centers(side));
    let all: Vec<usize> = (0..model.entity_count(side)).collect();
    cohesion_over(model.weights(side), &normalized.bank, &all)
}

fn check_map_domain<T: Scalar>(w: T, t: usize) -> Result<()> {
    if !(w >= T::zero() && w <= T::one()) {
        return Err(Error::Domain { what: "map_weight (w' must lie in [0, 1])", value: w.as_f64() });
    }
    if t < 2 {
        return Err(Error::Domain { what: "map_weight (t must be >= 2)", value: t as f64 });
    }
    Ok(())
}

#[inline]
fn map_raw<T: Scalar>(w: T, t: usize) -> T {
    let tf = T::from_usize_lossy(t);
    let inv_e = (-T::one()).exp();
    if w * tf <= T::one() {
        tf * inv_e * w
    } else {
        (tf * w - T::one()) / (tf - T::one()) * (T::one() - inv_e) + inv_e
    }
}

/// Slope of the weight map; the left branch is used at the knot `w = 1/t`.
#[inline]
fn map_slope<T: Scalar>(w: T, t: usize) -> T {
    let tf = T::from_usize_lossy(t);
    let inv_e = (-T::one()).exp();
    if w * tf <= T::one() {
        tf * inv_e
    } else {
        tf / (tf - T::one()) * (T::one() - inv_e)
    }
}

/// Piecewise-linear map sending `0 → 0`, `1/t → 1/e`, `1 → 1`, so that a
/// uniform row maps every entry to the maximizer of `-x ln x`.
pub fn map_weight<T: Scalar>(w_prime: T, t: usize) -> Result<T> {
    check_map_domain(w_prime, t)?;
    Ok(map_raw(w_prime, t))
}

/// `-x ln x` with `0 ln 0 = 0`.
#[inline]
fn neg_x_ln_x<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        -x * x.ln()
    } else {
        T::zero()
    }
}

/// Mapped entropy of one softmaxed row. Rows with fewer than two entries
/// carry no uncertainty and contribute 0.
pub fn entropy_row<T: Scalar>(weights: &[T]) -> T {
    let t = weights.len();
    if t < 2 {
        return T::zero();
    }
    weights.iter().fold(T::zero(), |acc, &w| acc + neg_x_ln_x(map_raw(w, t)))
}

/// `scale * Σ_{e ∈ entities} Σ_views entropy_row(softmax(row))`.
pub fn entropy_over<T: Scalar>(store: &WeightStore<T>, entities: &[usize], scale: T) -> T {
    let mut weights = Vec::new();
    let mut total = T::zero();
    for &e in entities {
        for j in 0..store.views.len() {
            weights.resize(store.views[j].width, T::zero());
            softmax_into(store.row(e, j), &mut weights);
            total += entropy_row(&weights);
        }
    }
    total * scale
}

/// Full-population mapped entropy of a logit store.
pub fn entropy_loss<T: Scalar>(store: &WeightStore<T>) -> T {
    let all: Vec<usize> = (0..store.entities).collect();
    entropy_over(store, &all, T::one())
}

/// Root mean squared error.
pub fn prediction_loss<T: Scalar>(predictions: &[T], truths: &[T]) -> Result<T> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("prediction_loss needs at least one prediction"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Config(format!(
            "prediction_loss: {} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let sse = predictions.iter().zip(truths).fold(T::zero(), |acc, (&p, &y)| acc + (p - y) * (p - y));
    Ok((sse / T::from_usize_lossy(predictions.len())).sqrt())
}

/// Sorted distinct entities of `side` referenced by `records`.
pub fn entities_in(records: &[Record], side: Side, count: usize) -> Vec<usize> {
    let mut seen = vec![false; count];
    for r in records {
        let e = match side {
            Side::User => r.user as usize,
            Side::Item => r.item as usize,
        };
        if e < count {
            seen[e] = true;
        }
    }
    seen.iter().enumerate().filter(|(_, &s)| s).map(|(e, _)| e).collect()
}

fn check_records<T: Scalar>(model: &Model<T>, records: &[Record]) -> Result<()> {
    let (m, n) = (model.entity_count(Side::User), model.entity_count(Side::Item));
    for r in records {
        if r.user as usize >= m {
            return Err(Error::IndexOutOfRange { side: Side::User, index: r.user as usize, count: m });
        }
        if r.item as usize >= n {
            return Err(Error::IndexOutOfRange { side: Side::Item, index: r.item as usize, count: n });
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Scope {
    Batch,
    Population,
}

fn objective<T: Scalar>(model: &Model<T>, records: &[Record], eta: f64, gamma: f64, scope: Scope) -> Result<LossBreakdown> {
    if records.is_empty() {
        return Err(Error::EmptyInput("objective needs a nonempty batch"));
    }
    check_records(model, records)?;
    let rho = T::lit(model.config.rho);
    let mut out = LossBreakdown { eta, gamma, ..LossBreakdown::default() };
    let d = model.latent_dim();
    let mut latents: [Vec<T>; 2] = [Vec::new(), Vec::new()];

    for (slot, side) in Side::BOTH.into_iter().enumerate() {
        let population = model.entity_count(side);
        let present = match scope {
            Scope::Batch => entities_in(records, side, population),
            Scope::Population => (0..population).collect(),
        };
        let normalized = normalize_centers(model.centers(side));
        let spread = spread_loss(&normalized.bank, rho).as_f64();
        let cohesion = cohesion_over(model.weights(side), &normalized.bank, &present).as_f64();
        let scale = T::from_usize_lossy(population) / T::from_usize_lossy(present.len().max(1));
        let entropy = entropy_over(model.weights(side), &present, scale).as_f64();
        match side {
            Side::User => (out.spread_user, out.cohesion_user, out.entropy_user) = (spread, cohesion, entropy),
            Side::Item => (out.spread_item, out.cohesion_item, out.entropy_item) = (spread, cohesion, entropy),
        }
        let mut lat = vec![T::zero(); population * d];
        for &e in &present {
            assemble_from(model.weights(side), model.centers(side), e, &mut lat[e * d..(e + 1) * d]);
        }
        latents[slot] = lat;
    }

    let (preds, truths): (Vec<T>, Vec<T>) = records
        .iter()
        .map(|r| {
            let (u, i) = (r.user as usize, r.item as usize);
            (dot(&latents[0][u * d..(u + 1) * d], &latents[1][i * d..(i + 1) * d]), T::lit(r.rating))
        })
        .unzip();
    out.prediction_rmse = prediction_loss(&preds, &truths)?.as_f64();
    out.total = eta * out.center_loss() + gamma * out.weight_loss() + out.prediction_rmse;
    Ok(out)
}

/// Objective on a minibatch: cohesion and entropy over the entities present in
/// `batch` (entropy rescaled to population size), spread over all live centers,
/// RMSE over the batch records.
pub fn total_loss<T: Scalar>(model: &Model<T>, batch: &[Record], eta: f64, gamma: f64) -> Result<LossBreakdown> {
    objective(model, batch, eta, gamma, Scope::Batch)
}

/// Objective with cohesion and entropy over every entity and RMSE over `records`.
pub fn population_loss<T: Scalar>(model: &Model<T>, records: &[Record], eta: f64, gamma: f64) -> Result<LossBreakdown> {
    objective(model, records, eta, gamma, Scope::Population)
}

/// Gradient of [`total_loss`] (plus weight decay) for every parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    /// `[view]` → `entities × width`, row-major.
    pub user_logits: Vec<Vec<T>>,
    pub item_logits: Vec<Vec<T>>,
    /// `[view]` → `live × dim`, row-major.
    pub user_centers: Vec<Vec<T>>,
    /// `None` when centers are shared.
    pub item_centers: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        let logits = |store: &WeightStore<T>| store.views.iter().map(|v| vec![T::zero(); v.logits.len()]).collect();
        let centers = |bank: &CenterBank<T>| bank.views.iter().map(|v| vec![T::zero(); v.coords.len()]).collect();
        GradientSet {
            user_logits: logits(&model.user_weights),
            item_logits: logits(&model.item_weights),
            user_centers: centers(&model.user_centers),
            item_centers: model.item_centers.as_ref().map(centers),
        }
    }

    pub fn fill_zero(&mut self) {
        for block in self.blocks_mut() {
            block.1.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    fn logits_mut(&mut self, side: Side) -> &mut Vec<Vec<T>> {
        match side {
            Side::User => &mut self.user_logits,
            Side::Item => &mut self.item_logits,
        }
    }

    fn centers_mut(&mut self, side: Side) -> &mut Vec<Vec<T>> {
        match (side, &mut self.item_centers) {
            (Side::Item, Some(c)) => c,
            _ => &mut self.user_centers,
        }
    }

    /// Blocks in the same order as [`Model::blocks`].
    pub fn blocks(&self) -> Vec<(BlockId, &[T])> {
        let mut out = Vec::new();
        for (side, views) in [(Side::User, &self.user_logits), (Side::Item, &self.item_logits)] {
            for (view, g) in views.iter().enumerate() {
                out.push((BlockId { kind: BlockKind::Logits, side, view }, g.as_slice()));
            }
        }
        let centers =
            std::iter::once((Side::User, &self.user_centers)).chain(self.item_centers.as_ref().map(|c| (Side::Item, c)));
        for (side, views) in centers {
            for (view, g) in views.iter().enumerate() {
                out.push((BlockId { kind: BlockKind::Centers, side, view }, g.as_slice()));
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockId, &mut [T])> {
        let mut out = Vec::new();
        for (side, views) in [(Side::User, &mut self.user_logits), (Side::Item, &mut self.item_logits)] {
            for (view, g) in views.iter_mut().enumerate() {
                out.push((BlockId { kind: BlockKind::Logits, side, view }, g.as_mut_slice()));
            }
        }
        let centers = std::iter::once((Side::User, &mut self.user_centers))
            .chain(self.item_centers.as_mut().map(|c| (Side::Item, c)));
        for (side, views) in centers {
            for (view, g) in views.iter_mut().enumerate() {
                out.push((BlockId { kind: BlockKind::Centers, side, view }, g.as_mut_slice()));
            }
        }
        out
    }

    /// Drops the logit columns and center rows of pruned centers.
    pub fn remove_centers(&mut self, side: Side, view: usize, positions: &[usize], dim: usize, width: usize) {
        crate::model::remove_columns(&mut self.logits_mut(side)[view], width, positions);
        crate::model::remove_rows(&mut self.centers_mut(side)[view], dim, positions);
    }

    /// Same as [`GradientSet::remove_centers`] but only for the logits.
    pub fn remove_logit_columns(&mut self, side: Side, view: usize, positions: &[usize], width: usize) {
        crate::model::remove_columns(&mut self.logits_mut(side)[view], width, positions);
    }

    pub fn first_non_finite(&self) -> Option<BlockId> {
        self.blocks().into_iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())).map(|(id, _)| id)
    }
}

/// Per-side scratch for the entities present in one batch.
struct SideScratch<T> {
    entities: Vec<usize>,
    /// `local[e]` is `position + 1` of entity `e` in `entities`, or 0.
    local: Vec<usize>,
    /// `[view]` → `present × width` softmax weights.
    weights: Vec<Vec<T>>,
    /// Gradient with respect to the softmax weights, same layout.
    grad_weights: Vec<Vec<T>>,
    /// `present × d` raw latents.
    latents: Vec<T>,
    grad_latents: Vec<T>,
}

impl<T: Scalar> SideScratch<T> {
    fn build(model: &Model<T>, side: Side, records: &[Record]) -> Self {
        let count = model.entity_count(side);
        let entities = entities_in(records, side, count);
        let mut local = vec![0; count];
        for (pos, &e) in entities.iter().enumerate() {
            local[e] = pos + 1;
        }
        let store = model.weights(side);
        let bank = model.centers(side);
        let (b, d) = (bank.dim, model.latent_dim());
        let mut weights: Vec<Vec<T>> = store.views.iter().map(|v| vec![T::zero(); entities.len() * v.width]).collect();
        let mut latents = vec![T::zero(); entities.len() * d];
        for (pos, &e) in entities.iter().enumerate() {
            for (j, view) in bank.views.iter().enumerate() {
                let t = view.len();
                let w = &mut weights[j][pos * t..(pos + 1) * t];
                softmax_into(store.row(e, j), w);
                crate::model::weighted_center_sum(view, w, &mut latents[pos * d + j * b..pos * d + (j + 1) * b]);
            }
        }
        let grad_weights = weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
        let grad_latents = vec![T::zero(); latents.len()];
        SideScratch { entities, local, weights, grad_weights, latents, grad_latents }
    }

    fn position(&self, entity: usize) -> usize {
        self.local[entity] - 1
    }
}

/// Computes the gradient of [`total_loss`] on `batch` with respect to every
/// live center coordinate and logit, plus `weight_decay * param`.
///
/// Argmax assignments and the per-view extreme coordinates used by the
/// normalization are held fixed for the step. Returns the batch RMSE alongside.
pub fn gradients_with_rmse<T: Scalar>(
    model: &Model<T>,
    batch: &[Record],
    eta: f64,
    gamma: f64,
    out: &mut GradientSet<T>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradients need a nonempty batch"));
    }
    check_records(model, batch)?;
    out.fill_zero();
    let d = model.latent_dim();
    let (eta_t, gamma_t) = (T::lit(eta), T::lit(gamma));
    let mut sides = [SideScratch::build(model, Side::User, batch), SideScratch::build(model, Side::Item, batch)];

    // Prediction term: d rmse / d pred_r = err_r / (B * rmse).
    let mut sse = T::zero();
    for r in batch {
        let (pu, pi) = (sides[0].position(r.user as usize), sides[1].position(r.item as usize));
        let p = &sides[0].latents[pu * d..(pu + 1) * d];
        let q = &sides[1].latents[pi * d..(pi + 1) * d];
        let err = dot(p, q) - T::lit(r.rating);
        sse += err * err;
    }
    let count = T::from_usize_lossy(batch.len());
    let mse = sse / count;
    let rmse = mse.sqrt();
    if !rmse.is_finite() {
        return Err(Error::NonFinite("prediction_rmse".into()));
    }
    let denom = mse.max(T::lit(MSE_FLOOR)).sqrt() * count;
    {
        let [users, items] = &mut sides;
        for r in batch {
            let (pu, pi) = (users.position(r.user as usize), items.position(r.item as usize));
            let err = dot(&users.latents[pu * d..(pu + 1) * d], &items.latents[pi * d..(pi + 1) * d]) - T::lit(r.rating);
            let coef = err / denom;
            for k in 0..d {
                users.grad_latents[pu * d + k] += coef * items.latents[pi * d + k];
                items.grad_latents[pi * d + k] += coef * users.latents[pu * d + k];
            }
        }
    }

    let shared = model.shares_centers();
    let bank_slot = |side: Side| if shared { 0 } else { side as usize };
    let normalized: Vec<NormalizedBank<T>> = if eta != 0.0 {
        let mut v = vec![normalize_centers(&model.user_centers)];
        if let Some(bank) = &model.item_centers {
            v.push(normalize_centers(bank));
        }
        v
    } else {
        Vec::new()
    };
    // dL/d(normalized coords), per bank and view.
    let mut grad_hat: Vec<Vec<Vec<T>>> =
        normalized.iter().map(|nb| nb.bank.views.iter().map(|v| vec![T::zero(); v.coords.len()]).collect()).collect();

    for side in Side::BOTH {
        let s = &mut sides[side as usize];
        let bank = model.centers(side);
        let b = bank.dim;

        // Assembly: sub_j = Σ_k w_k c_k on raw centers.
        let centers_grad = out.centers_mut(side);
        for pos in 0..s.entities.len() {
            for (j, view) in bank.views.iter().enumerate() {
                let t = view.len();
                let g_sub = &s.grad_latents[pos * d + j * b..pos * d + (j + 1) * b];
                for k in 0..t {
                    let w = s.weights[j][pos * t + k];
                    let c = view.center(k);
                    s.grad_weights[j][pos * t + k] += dot(c, g_sub);
                    for (x, &g) in g_sub.iter().enumerate() {
                        centers_grad[j][k * b + x] += w * g;
                    }
                }
            }
        }

        if eta != 0.0 && !s.entities.is_empty() {
            let slot = bank_slot(side);
            let nbank = &normalized[slot].bank;
            let ghat = &mut grad_hat[slot];
            let scale = eta_t / T::from_usize_lossy(s.entities.len());
            let two = T::lit(2.0);
            let mut sub = vec![T::zero(); b];
            for pos in 0..s.entities.len() {
                for (j, view) in nbank.views.iter().enumerate() {
                    let t = view.len();
                    let w = &s.weights[j][pos * t..(pos + 1) * t];
                    let a = argmax_first(w);
                    crate::model::weighted_center_sum(view, w, &mut sub);
                    let resid: Vec<T> = sub.iter().zip(view.center(a)).map(|(&x, &c)| two * scale * (x - c)).collect();
                    for k in 0..t {
                        s.grad_weights[j][pos * t + k] += dot(view.center(k), &resid);
                        for x in 0..b {
                            ghat[j][k * b + x] += w[k] * resid[x];
                        }
                    }
                    for x in 0..b {
                        ghat[j][a * b + x] -= resid[x];
                    }
                }
            }
            // Spread hinge, active where the squared distance is <= rho.
            let rho = T::lit(model.config.rho);
            for (j, view) in nbank.views.iter().enumerate() {
                for a in 0..view.len() {
                    for c in a + 1..view.len() {
                        if sq_dist(view.center(a), view.center(c)) <= rho {
                            for x in 0..b {
                                let g = two * eta_t * (view.center(a)[x] - view.center(c)[x]);
                                ghat[j][a * b + x] -= g;
                                ghat[j][c * b + x] += g;
                            }
                        }
                    }
                }
            }
        }

        if gamma != 0.0 && !s.entities.is_empty() {
            let scale = gamma_t * T::from_usize_lossy(model.entity_count(side)) / T::from_usize_lossy(s.entities.len());
            for j in 0..bank.views.len() {
                let t = bank.views[j].len();
                if t < 2 {
                    continue;
                }
                for (g, &w) in s.grad_weights[j].iter_mut().zip(&s.weights[j]) {
                    let x = map_raw(w, t);
                    if x > T::zero() {
                        *g += scale * -(x.ln() + T::one()) * map_slope(w, t);
                    }
                }
            }
        }

        // Softmax backward into the logits.
        let logits = out.logits_mut(side);
        for (j, view) in bank.views.iter().enumerate() {
            let t = view.len();
            for (pos, &e) in s.entities.iter().enumerate() {
                let w = &s.weights[j][pos * t..(pos + 1) * t];
                let gw = &s.grad_weights[j][pos * t..(pos + 1) * t];
                let inner = dot(w, gw);
                let row = &mut logits[j][e * t..(e + 1) * t];
                for k in 0..t {
                    row[k] += w[k] * (gw[k] - inner);
                }
            }
        }
    }

    // Normalization backward: c_hat = (c - min) / (max - min) with the
    // extreme positions frozen.
    for (slot, nb) in normalized.iter().enumerate() {
        let side = if slot == 0 { Side::User } else { Side::Item };
        let grads = out.centers_mut(side);
        for (j, range) in nb.ranges.iter().enumerate() {
            if range.degenerate {
                continue;
            }
            let span = range.max - range.min;
            let hat = &nb.bank.views[j].coords;
            let gh = &grad_hat[slot][j];
            let (mut dmin, mut dmax) = (T::zero(), T::zero());
            for x in 0..hat.len() {
                grads[j][x] += gh[x] / span;
                dmin += gh[x] * (hat[x] - T::one()) / span;
                dmax -= gh[x] * hat[x] / span;
            }
            grads[j][range.argmin] += dmin;
            grads[j][range.argmax] += dmax;
        }
    }

    let decay = T::lit(model.config.weight_decay);
    if decay != T::zero() {
        for ((_, g), (_, p)) in out.blocks_mut().into_iter().zip(model.blocks()) {
            for (gi, &pi) in g.iter_mut().zip(p) {
                *gi += decay * pi;
            }
        }
    }
    if let Some(block) = out.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient block {block}")));
    }
    Ok(rmse.as_f64())
}

/// Allocating wrapper around [`gradients_with_rmse`].
pub fn gradients<T: Scalar>(model: &Model<T>, batch: &[Record], eta: f64, gamma: f64) -> Result<GradientSet<T>> {
    let mut out = GradientSet::zeros_like(model);
    gradients_with_rmse(model, batch, eta, gamma, &mut out)?;
    Ok(out)
}
