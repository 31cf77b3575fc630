//! Central finite-difference check of [`gradients`] on small random models.
//!
//! The objective is piecewise smooth. A coordinate is skipped when nudging it
//! by `±step` changes any discrete choice: a cluster assignment, a view's
//! argmin/argmax coordinate, a spread hinge, or a weight-map branch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::losses::{gradients, total_loss};
use crate::model::{argmax_first, normalize_centers, BlockId, Model, ModelConfig, Side};
use crate::scalar::sq_dist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub users: usize,
    pub items: usize,
    pub views: usize,
    pub centers: usize,
    pub center_dim: usize,
    pub records: usize,
    pub rho: f64,
    pub eta: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub share_centers: bool,
    pub step: f64,
    pub tolerance: f64,
    /// Minimum number of coordinates to check; fresh random models are drawn
    /// until it is reached.
    pub coordinates: usize,
    pub seed: u64,
    /// Test hook: added to every analytic gradient entry of the first block.
    pub corrupt: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            users: 6,
            items: 6,
            views: 2,
            centers: 4,
            center_dim: 2,
            records: 20,
            rho: 0.3,
            eta: 0.1,
            gamma: 0.01,
            weight_decay: 1e-4,
            share_centers: false,
            step: 1e-5,
            tolerance: 1e-4,
            coordinates: 1000,
            seed: 0,
            corrupt: None,
        }
    }
}

impl GradcheckConfig {
    fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            views: self.views,
            centers: self.centers,
            center_dim: self.center_dim,
            latent_dim: self.views * self.center_dim,
            rho: self.rho,
            weight_decay: self.weight_decay,
            share_centers: self.share_centers,
            init_logit_std: 1.0,
            min_centers: self.centers.min(3),
            seed,
            ..ModelConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradcheckReport {
    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&BlockCheck> {
        self.blocks.iter().filter(|b| !(b.max_rel_error < self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.failing().is_empty()
    }

    fn merge(&mut self, other: GradcheckReport) {
        for b in other.blocks {
            match self.blocks.iter_mut().find(|x| x.block == b.block) {
                Some(x) => {
                    x.checked += b.checked;
                    x.skipped += b.skipped;
                    x.max_rel_error = x.max_rel_error.max(b.max_rel_error);
                }
                None => self.blocks.push(b),
            }
        }
    }
}

/// Gradient entries smaller than this are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Discrete choices the objective depends on. Equal signatures at both probe
/// points mean the objective is smooth along the probe.
#[derive(PartialEq)]
struct Signature {
    assignments: Vec<usize>,
    extremes: Vec<(usize, usize)>,
    hinges: Vec<bool>,
    branches: Vec<bool>,
}

fn signature(model: &Model<f64>) -> Signature {
    let mut sig = Signature { assignments: Vec::new(), extremes: Vec::new(), hinges: Vec::new(), branches: Vec::new() };
    for side in Side::BOTH {
        let store = model.weights(side);
        for e in 0..store.entities {
            for j in 0..store.views.len() {
                let w = store.softmax_row(e, j);
                sig.assignments.push(argmax_first(&w));
                let t = w.len() as f64;
                sig.branches.extend(w.iter().map(|&x| x * t <= 1.0));
            }
        }
        let normalized = normalize_centers(model.centers(side));
        for (j, r) in normalized.ranges.iter().enumerate() {
            sig.extremes.push((r.argmin, r.argmax));
            let view = &normalized.bank.views[j];
            for a in 0..view.len() {
                for b in a + 1..view.len() {
                    sig.hinges.push(sq_dist(view.center(a), view.center(b)) <= model.config.rho);
                }
            }
        }
    }
    sig
}

fn objective(model: &Model<f64>, batch: &[Record], eta: f64, gamma: f64) -> Result<f64> {
    let decay: f64 = model.blocks().iter().flat_map(|(_, p)| p.iter()).map(|x| x * x).sum();
    Ok(total_loss(model, batch, eta, gamma)?.total + 0.5 * model.config.weight_decay * decay)
}

fn set_param(model: &mut Model<f64>, block: usize, index: usize, value: f64) {
    model.blocks_mut()[block].1[index] = value;
}

/// Compares analytic and central-difference gradients at every coordinate of
/// `model` whose probe does not cross a kink.
pub fn check_model(
    model: &Model<f64>,
    batch: &[Record],
    eta: f64,
    gamma: f64,
    step: f64,
    tolerance: f64,
    corrupt: Option<f64>,
) -> Result<GradcheckReport> {
    let mut grads = gradients(model, batch, eta, gamma)?;
    if let Some(delta) = corrupt {
        if let Some((_, g)) = grads.blocks_mut().into_iter().next() {
            g.iter_mut().for_each(|x| *x += delta);
        }
    }
    let analytic: Vec<(BlockId, Vec<f64>)> = grads.blocks().into_iter().map(|(id, g)| (id, g.to_vec())).collect();
    let base = signature(model);
    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(analytic.len());
    for (b, (id, grad)) in analytic.iter().enumerate() {
        let mut check = BlockCheck { block: id.to_string(), checked: 0, skipped: 0, max_rel_error: 0.0 };
        for (x, &g) in grad.iter().enumerate() {
            let orig = model.blocks()[b].1[x];
            set_param(&mut probe, b, x, orig + step);
            let plus_sig = signature(&probe);
            let plus = objective(&probe, batch, eta, gamma)?;
            set_param(&mut probe, b, x, orig - step);
            let minus_sig = signature(&probe);
            let minus = objective(&probe, batch, eta, gamma)?;
            set_param(&mut probe, b, x, orig);
            if plus_sig != base || minus_sig != base {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(relative_error(g, numeric));
        }
        blocks.push(check);
    }
    Ok(GradcheckReport { tolerance, blocks })
}

/// Random batch with each rating drawn uniformly from `[1, 5]`.
pub fn random_batch(users: usize, items: usize, records: usize, rng: &mut impl Rng) -> Vec<Record> {
    (0..records)
        .map(|_| Record {
            user: rng.random_range(0..users) as u32,
            item: rng.random_range(0..items) as u32,
            rating: rng.random_range(1.0..=5.0),
        })
        .collect()
}

/// Draws random tiny models until `cfg.coordinates` coordinates are checked.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.step > 0.0) || cfg.users == 0 || cfg.items == 0 || cfg.records == 0 {
        return Err(Error::Config("gradcheck needs a positive step and nonempty model and batch".into()));
    }
    if cfg.eta < 0.0 || cfg.gamma < 0.0 {
        return Err(Error::Config("gradcheck eta and gamma must be >= 0".into()));
    }
    let mut report = GradcheckReport { tolerance: cfg.tolerance, blocks: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for round in 0..1000u64 {
        let mcfg = cfg.model_config(cfg.seed.wrapping_add(round));
        mcfg.validate()?;
        let model = Model::<f64>::init(&mcfg, cfg.users, cfg.items)?;
        let batch = random_batch(cfg.users, cfg.items, cfg.records, &mut rng);
        report.merge(check_model(&model, &batch, cfg.eta, cfg.gamma, cfg.step, cfg.tolerance, cfg.corrupt)?);
        if report.checked() >= cfg.coordinates {
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_gradcheck(&GradcheckConfig { coordinates: 200, ..Default::default() }).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.blocks.len(), 8);
    }

    #[test]
    fn prediction_only_and_shared_paths_pass() {
        let cfg = GradcheckConfig { eta: 0.0, gamma: 0.0, weight_decay: 0.0, coordinates: 100, ..Default::default() };
        assert!(run_gradcheck(&cfg).unwrap().passed());
        let cfg = GradcheckConfig { share_centers: true, coordinates: 100, ..Default::default() };
        let report = run_gradcheck(&cfg).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.blocks.len(), 6);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let cfg = GradcheckConfig { corrupt: Some(1e-2), coordinates: 50, ..Default::default() };
        let report = run_gradcheck(&cfg).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing().len(), 1);
        assert_eq!(report.failing()[0].block, "user.logits[view 0]");
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}
