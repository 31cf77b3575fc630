//! Cluster centers, per-entity weights and latent assembly.
//!
//! An entity's latent vector is the concatenation over views of the
//! softmax-weighted sum of that view's live centers. Predictions are plain dot
//! products of user and item latents.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::training::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::User, Side::Item];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the pruning threshold is chosen for a view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PsiRule {
    /// `1 / t` with `t` the configured initial center count.
    InverseInitialCount,
    /// `1 / t_j` where `t_j` is the view's current live count.
    InverseLiveCount,
    Fixed { value: f64 },
}

impl PsiRule {
    pub fn threshold(self, initial: usize, live: usize) -> f64 {
        match self {
            PsiRule::InverseInitialCount => 1.0 / initial as f64,
            PsiRule::InverseLiveCount => 1.0 / live as f64,
            PsiRule::Fixed { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Step size for the logit blocks.
    pub learning_rate: f64,
    /// Step size for the center blocks. Center gradients pool every entity in
    /// the batch, so they run much larger than per-entity logit gradients.
    pub center_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 2.0, center_learning_rate: 0.2, batch_size: 1024, epochs: 150, momentum: 0.9 }
    }
}

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of views `v`.
    pub views: usize,
    /// Centers per view at initialization.
    pub centers: usize,
    /// Center dimension `b`.
    pub center_dim: usize,
    /// Latent dimension `d`; must equal `views * center_dim`.
    pub latent_dim: usize,
    /// Spread margin on squared distances between normalized centers.
    pub rho: f64,
    pub psi: PsiRule,
    /// Pruning only runs after epochs strictly greater than this.
    pub prune_after: usize,
    /// Floor on live centers per view.
    pub min_centers: usize,
    /// Weight of the center losses (spread and cohesion).
    pub eta: Schedule,
    /// Weight of the mapped-entropy loss. The entropy term is a sum over the
    /// whole population, so useful values are small (around 1e-5 on ML-100k).
    pub gamma: Schedule,
    /// Weight decay, added as `weight_decay * param` to every gradient entry.
    pub weight_decay: f64,
    pub share_centers: bool,
    /// Pins both auxiliary weights to zero.
    pub ablation: bool,
    /// Standard deviation of the initial logits.
    pub init_logit_std: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            views: 8,
            centers: 10,
            center_dim: 2,
            latent_dim: 16,
            rho: 0.05,
            psi: PsiRule::InverseInitialCount,
            prune_after: 40,
            min_centers: 3,
            eta: Schedule::ramp(0.0, 0.1, 40),
            gamma: Schedule::ramp(0.0, 1e-5, 40),
            weight_decay: 1e-4,
            share_centers: false,
            ablation: false,
            init_logit_std: 0.01,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.views == 0 {
            return fail("views must be >= 1".into());
        }
        if self.center_dim == 0 {
            return fail("center_dim must be >= 1".into());
        }
        if self.latent_dim != self.views * self.center_dim {
            return fail(format!(
                "latent_dim d = {} must equal views v * center_dim b = {} * {} = {}",
                self.latent_dim,
                self.views,
                self.center_dim,
                self.views * self.center_dim
            ));
        }
        if self.min_centers < 3 {
            return fail(format!("min_centers {} must be >= 3", self.min_centers));
        }
        if self.centers < self.min_centers {
            return fail(format!("centers {} below the floor of {}", self.centers, self.min_centers));
        }
        let reals = [
            ("rho", self.rho),
            ("weight_decay", self.weight_decay),
            ("init_logit_std", self.init_logit_std),
            ("momentum", self.optimizer.momentum),
        ];
        for (name, x) in reals {
            if !(x.is_finite() && x >= 0.0) {
                return fail(format!("{name} = {x} must be finite and >= 0"));
            }
        }
        for (name, lr) in [
            ("learning_rate", self.optimizer.learning_rate),
            ("center_learning_rate", self.optimizer.center_learning_rate),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return fail(format!("{name} = {lr} must be finite and >= 0"));
            }
        }
        if self.optimizer.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if let PsiRule::Fixed { value } = self.psi {
            if !(value > 0.0 && value < 1.0) {
                return fail(format!("fixed psi {value} must lie in (0, 1)"));
            }
        }
        self.eta.validate("eta")?;
        self.gamma.validate("gamma")?;
        Ok(())
    }

    /// Auxiliary-loss weights for a 0-based epoch index.
    pub fn loss_weights(&self, epoch: usize) -> (f64, f64) {
        if self.ablation {
            (0.0, 0.0)
        } else {
            (self.eta.value(epoch), self.gamma.value(epoch))
        }
    }
}

/// Live centers of one view, stored row-major (`len() * dim` coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct ViewCenters<T> {
    pub dim: usize,
    pub coords: Vec<T>,
    /// Initial slot of each live center, ascending.
    pub ids: Vec<usize>,
}

impl<T: Scalar> ViewCenters<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn center(&self, k: usize) -> &[T] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }
}

/// Per-view cluster centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank<T> {
    pub initial: usize,
    pub dim: usize,
    pub views: Vec<ViewCenters<T>>,
}

impl<T: Scalar> CenterBank<T> {
    /// Centers drawn uniformly from `[0, 1]^dim`.
    pub fn random(views: usize, centers: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let views = (0..views)
            .map(|_| ViewCenters {
                dim,
                coords: (0..centers * dim).map(|_| T::lit(rng.random::<f64>())).collect(),
                ids: (0..centers).collect(),
            })
            .collect();
        CenterBank { initial: centers, dim, views }
    }

    /// Builds a bank from explicit coordinates, `[view][center][coord]`.
    pub fn from_centers(centers: &[Vec<Vec<f64>>]) -> Result<Self> {
        let dim = centers.first().and_then(|v| v.first()).map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Config("center bank needs at least one non-empty center".into()));
        }
        let initial = centers.iter().map(Vec::len).max().unwrap_or(0);
        let mut views = Vec::with_capacity(centers.len());
        for view in centers {
            if view.iter().any(|c| c.len() != dim) {
                return Err(Error::Config("centers must share one dimension".into()));
            }
            views.push(ViewCenters {
                dim,
                coords: view.iter().flatten().map(|&x| T::lit(x)).collect(),
                ids: (0..view.len()).collect(),
            });
        }
        Ok(CenterBank { initial, dim, views })
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn live_counts(&self) -> Vec<usize> {
        self.views.iter().map(ViewCenters::len).collect()
    }

    pub fn alive_mask(&self, view: usize) -> Vec<bool> {
        let mut mask = vec![false; self.initial];
        for &id in &self.views[view].ids {
            mask[id] = true;
        }
        mask
    }

    /// Drops the given live positions (ascending) from `view`.
    pub fn remove(&mut self, view: usize, positions: &[usize]) {
        let vc = &mut self.views[view];
        remove_rows(&mut vc.coords, vc.dim, positions);
        remove_rows(&mut vc.ids, 1, positions);
    }

    pub fn is_finite(&self) -> bool {
        self.views.iter().all(|v| v.coords.iter().all(|x| x.is_finite()))
    }
}

/// Removes rows (ascending `positions`) from a row-major buffer.
pub(crate) fn remove_rows<V: Copy>(data: &mut Vec<V>, width: usize, positions: &[usize]) {
    if positions.is_empty() {
        return;
    }
    let rows = data.len() / width;
    let mut keep = Vec::with_capacity(data.len());
    let mut cursor = positions.iter().peekable();
    for r in 0..rows {
        if cursor.peek() == Some(&&r) {
            cursor.next();
            continue;
        }
        keep.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    *data = keep;
}

/// Removes columns (ascending `positions`) from a row-major matrix.
pub(crate) fn remove_columns<V: Copy>(data: &mut Vec<V>, width: usize, positions: &[usize]) {
    if positions.is_empty() || width == 0 {
        return;
    }
    let mut drop = vec![false; width];
    for &p in positions {
        drop[p] = true;
    }
    let keep: Vec<V> = data
        .chunks_exact(width)
        .flat_map(|row| row.iter().zip(&drop).filter(|(_, &d)| !d).map(|(&x, _)| x))
        .collect();
    *data = keep;
}

/// Raw logits of one view for every entity, row-major `entities × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewLogits<T> {
    pub width: usize,
    pub logits: Vec<T>,
}

/// Per-entity, per-view logits over live centers.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore<T> {
    pub entities: usize,
    pub views: Vec<ViewLogits<T>>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn random(entities: usize, widths: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
        let views = widths
            .iter()
            .map(|&width| ViewLogits {
                width,
                logits: (0..entities * width)
                    .map(|_| if std > 0.0 { T::lit(normal.sample(rng)) } else { T::zero() })
                    .collect(),
            })
            .collect();
        WeightStore { entities, views }
    }

    pub fn zeros(entities: usize, widths: &[usize]) -> Self {
        let views =
            widths.iter().map(|&width| ViewLogits { width, logits: vec![T::zero(); entities * width] }).collect();
        WeightStore { entities, views }
    }

    pub fn row(&self, entity: usize, view: usize) -> &[T] {
        let v = &self.views[view];
        &v.logits[entity * v.width..(entity + 1) * v.width]
    }

    pub fn row_mut(&mut self, entity: usize, view: usize) -> &mut [T] {
        let v = &mut self.views[view];
        &mut v.logits[entity * v.width..(entity + 1) * v.width]
    }

    pub fn softmax_row(&self, entity: usize, view: usize) -> Vec<T> {
        softmax_view(self.row(entity, view))
    }

    pub fn widths(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.width).collect()
    }

    pub fn remove_columns(&mut self, view: usize, positions: &[usize]) {
        let v = &mut self.views[view];
        remove_columns(&mut v.logits, v.width, positions);
        v.width -= positions.len();
    }

    pub fn is_finite(&self) -> bool {
        self.views.iter().all(|v| v.logits.iter().all(|x| x.is_finite()))
    }
}

/// Numerically stable softmax.
pub fn softmax_view<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax_first<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (k, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = k;
        }
    }
    best
}

/// Affine range of one view before normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewRange<T> {
    pub min: T,
    pub max: T,
    /// Flat coordinate positions of the extremes (first occurrence).
    pub argmin: usize,
    pub argmax: usize,
    pub degenerate: bool,
}

/// A normalized copy of a bank together with the ranges used to build it.
#[derive(Clone, Debug)]
pub struct NormalizedBank<T> {
    pub bank: CenterBank<T>,
    pub ranges: Vec<ViewRange<T>>,
}

impl<T: Scalar> NormalizedBank<T> {
    pub fn has_degenerate_view(&self) -> bool {
        self.ranges.iter().any(|r| r.degenerate)
    }
}

/// Maps each view's coordinates affinely onto `[0, 1]` using the view-wide
/// minimum and maximum. A view whose coordinates are all equal becomes all
/// zeros and is flagged as degenerate.
pub fn normalize_centers<T: Scalar>(bank: &CenterBank<T>) -> NormalizedBank<T> {
    let mut out = bank.clone();
    let mut ranges = Vec::with_capacity(bank.views.len());
    for (j, view) in out.views.iter_mut().enumerate() {
        let (mut argmin, mut argmax) = (0, 0);
        for (x, &c) in view.coords.iter().enumerate() {
            if c < view.coords[argmin] {
                argmin = x;
            }
            if c > view.coords[argmax] {
                argmax = x;
            }
        }
        let (min, max) = (view.coords[argmin], view.coords[argmax]);
        let degenerate = !(max > min);
        if degenerate {
            log::warn!("view {j}: all center coordinates equal {min}; normalized to zeros");
            view.coords.iter_mut().for_each(|c| *c = T::zero());
        } else {
            let span = max - min;
            view.coords.iter_mut().for_each(|c| *c = (*c - min) / span);
        }
        ranges.push(ViewRange { min, max, argmin, argmax, degenerate });
    }
    NormalizedBank { bank: out, ranges }
}

/// Writes the view sub-vector `Σ_k w_k c_k` into `out`.
pub fn weighted_center_sum<T: Scalar>(view: &ViewCenters<T>, weights: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &w) in weights.iter().enumerate() {
        for (o, &c) in out.iter_mut().zip(view.center(k)) {
            *o += w * c;
        }
    }
}

/// Assembles a full latent vector from a weight store row set and a bank.
pub fn assemble_from<T: Scalar>(store: &WeightStore<T>, bank: &CenterBank<T>, entity: usize, out: &mut [T]) {
    let b = bank.dim;
    let mut weights = Vec::new();
    for (j, view) in bank.views.iter().enumerate() {
        weights.resize(view.len(), T::zero());
        softmax_into(store.row(entity, j), &mut weights);
        weighted_center_sum(view, &weights, &mut out[j * b..(j + 1) * b]);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Logits,
    Centers,
}

/// Identifies one parameter block: the logits or the centers of one view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockId {
    pub kind: BlockKind,
    pub side: Side,
    pub view: usize,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            BlockKind::Logits => "logits",
            BlockKind::Centers => "centers",
        };
        write!(f, "{}.{}[view {}]", self.side, kind, self.view)
    }
}

/// The trainable state.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub user_weights: WeightStore<T>,
    pub item_weights: WeightStore<T>,
    pub user_centers: CenterBank<T>,
    /// `None` when centers are shared; items then read `user_centers`.
    pub item_centers: Option<CenterBank<T>>,
}

impl<T: Scalar> Model<T> {
    /// Random initialization: centers uniform in `[0,1]^b`, logits
    /// `N(0, init_logit_std²)`, all from a ChaCha8 stream seeded by `config.seed`.
    pub fn init(config: &ModelConfig, n_users: usize, n_items: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, t, b) = (config.views, config.centers, config.center_dim);
        let user_centers = CenterBank::random(v, t, b, &mut rng);
        let item_centers = (!config.share_centers).then(|| CenterBank::random(v, t, b, &mut rng));
        let widths = vec![t; v];
        let user_weights = WeightStore::random(n_users, &widths, config.init_logit_std, &mut rng);
        let item_weights = WeightStore::random(n_items, &widths, config.init_logit_std, &mut rng);
        Ok(Model { config: config.clone(), user_weights, item_weights, user_centers, item_centers })
    }

    pub fn latent_dim(&self) -> usize {
        self.user_centers.num_views() * self.user_centers.dim
    }

    pub fn entity_count(&self, side: Side) -> usize {
        self.weights(side).entities
    }

    pub fn weights(&self, side: Side) -> &WeightStore<T> {
        match side {
            Side::User => &self.user_weights,
            Side::Item => &self.item_weights,
        }
    }

    pub fn weights_mut(&mut self, side: Side) -> &mut WeightStore<T> {
        match side {
            Side::User => &mut self.user_weights,
            Side::Item => &mut self.item_weights,
        }
    }

    pub fn centers(&self, side: Side) -> &CenterBank<T> {
        match (side, &self.item_centers) {
            (Side::Item, Some(bank)) => bank,
            _ => &self.user_centers,
        }
    }

    pub fn centers_mut(&mut self, side: Side) -> &mut CenterBank<T> {
        match (side, &mut self.item_centers) {
            (Side::Item, Some(bank)) => bank,
            _ => &mut self.user_centers,
        }
    }

    pub fn shares_centers(&self) -> bool {
        self.item_centers.is_none()
    }

    /// Live-center counts per view for one side.
    pub fn live_counts(&self, side: Side) -> Vec<usize> {
        self.centers(side).live_counts()
    }

    fn check_entity(&self, side: Side, entity: usize) -> Result<()> {
        let count = self.entity_count(side);
        if entity >= count {
            return Err(Error::IndexOutOfRange { side, index: entity, count });
        }
        Ok(())
    }

    pub fn latent(&self, side: Side, entity: usize) -> Result<Vec<T>> {
        self.check_entity(side, entity)?;
        let mut out = vec![T::zero(); self.latent_dim()];
        assemble_from(self.weights(side), self.centers(side), entity, &mut out);
        Ok(out)
    }

    /// Unclamped dot product of the assembled latents.
    pub fn predict(&self, user: usize, item: usize) -> Result<T> {
        let p = self.latent(Side::User, user)?;
        let q = self.latent(Side::Item, item)?;
        Ok(dot(&p, &q))
    }

    pub fn assign(&self, side: Side, entity: usize, view: usize) -> Result<usize> {
        self.check_entity(side, entity)?;
        if view >= self.user_centers.num_views() {
            return Err(Error::Config(format!("view {view} out of range")));
        }
        Ok(argmax_first(&self.weights(side).softmax_row(entity, view)))
    }

    /// Every parameter block in a fixed order: user logits, item logits, user
    /// centers, then item centers when unshared. Shared centers appear once,
    /// labelled as the user side.
    pub fn blocks(&self) -> Vec<(BlockId, &[T])> {
        let mut out = Vec::new();
        for (side, store) in [(Side::User, &self.user_weights), (Side::Item, &self.item_weights)] {
            for (view, v) in store.views.iter().enumerate() {
                out.push((BlockId { kind: BlockKind::Logits, side, view }, v.logits.as_slice()));
            }
        }
        let banks = std::iter::once((Side::User, &self.user_centers))
            .chain(self.item_centers.as_ref().map(|b| (Side::Item, b)));
        for (side, bank) in banks {
            for (view, v) in bank.views.iter().enumerate() {
                out.push((BlockId { kind: BlockKind::Centers, side, view }, v.coords.as_slice()));
            }
        }
        out
    }

    /// Mutable counterpart of [`Model::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<(BlockId, &mut [T])> {
        let mut out = Vec::new();
        for (side, store) in [(Side::User, &mut self.user_weights), (Side::Item, &mut self.item_weights)] {
            for (view, v) in store.views.iter_mut().enumerate() {
                out.push((BlockId { kind: BlockKind::Logits, side, view }, v.logits.as_mut_slice()));
            }
        }
        let banks = std::iter::once((Side::User, &mut self.user_centers))
            .chain(self.item_centers.as_mut().map(|b| (Side::Item, b)));
        for (side, bank) in banks {
            for (view, v) in bank.views.iter_mut().enumerate() {
                out.push((BlockId { kind: BlockKind::Centers, side, view }, v.coords.as_mut_slice()));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.user_weights.is_finite()
            && self.item_weights.is_finite()
            && self.user_centers.is_finite()
            && self.item_centers.as_ref().is_none_or(CenterBank::is_finite)
    }
}
