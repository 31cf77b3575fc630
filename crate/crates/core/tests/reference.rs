//! A second, deliberately naive implementation of the objective, used as an
//! oracle for `total_loss` and, through finite differences, for `gradients`.

use mfdmc::data::Record;
use mfdmc::losses::{gradients, total_loss};
use mfdmc::model::{Model, ModelConfig, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn mapped(w: f64, t: usize) -> f64 {
    let t = t as f64;
    let inv_e = (-1.0f64).exp();
    if w <= 1.0 / t {
        t * inv_e * w
    } else {
        (t * w - 1.0) / (t - 1.0) * (1.0 - inv_e) + inv_e
    }
}

struct Side_ {
    /// [entity][view] -> weights
    weights: Vec<Vec<Vec<f64>>>,
    /// [view][center] -> raw coords
    centers: Vec<Vec<Vec<f64>>>,
}

fn extract(model: &Model<f64>, side: Side) -> Side_ {
    let store = model.weights(side);
    let bank = model.centers(side);
    Side_ {
        weights: (0..store.entities)
            .map(|e| (0..store.views.len()).map(|j| softmax(store.row(e, j))).collect())
            .collect(),
        centers: bank.views.iter().map(|v| (0..v.len()).map(|k| v.center(k).to_vec()).collect()).collect(),
    }
}

fn normalized(centers: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    centers
        .iter()
        .map(|view| {
            let all: Vec<f64> = view.iter().flatten().copied().collect();
            let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            view.iter()
                .map(|c| c.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect())
                .collect()
        })
        .collect()
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn first_argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..w.len() {
        if w[k] > w[best] {
            best = k;
        }
    }
    best
}

/// Returns (spread, cohesion, entropy, latents) for one side.
fn side_terms(s: &Side_, rho: f64, present: &[usize]) -> (f64, f64, f64, Vec<Vec<f64>>) {
    let norm = normalized(&s.centers);
    let mut spread = 0.0;
    for view in &norm {
        for a in 0..view.len() {
            for b in a + 1..view.len() {
                spread += (rho - d2(&view[a], &view[b])).max(0.0);
            }
        }
    }
    let mut cohesion = 0.0;
    let mut entropy = 0.0;
    for &e in present {
        for (j, view) in norm.iter().enumerate() {
            let w = &s.weights[e][j];
            let dim = view[0].len();
            let sub: Vec<f64> = (0..dim).map(|x| w.iter().zip(view).map(|(wk, c)| wk * c[x]).sum()).collect();
            cohesion += d2(&view[first_argmax(w)], &sub);
            for &wk in w {
                let m = mapped(wk, w.len());
                if m > 0.0 {
                    entropy -= m * m.ln();
                }
            }
        }
    }
    let population = s.weights.len() as f64;
    cohesion /= present.len() as f64;
    entropy *= population / present.len() as f64;
    let latents = s
        .weights
        .iter()
        .map(|rows| {
            rows.iter()
                .zip(&s.centers)
                .flat_map(|(w, view)| {
                    let dim = view[0].len();
                    (0..dim).map(move |x| w.iter().zip(view).map(|(wk, c)| wk * c[x]).sum::<f64>())
                })
                .collect()
        })
        .collect();
    (spread, cohesion, entropy, latents)
}

fn reference_total(model: &Model<f64>, batch: &[Record], eta: f64, gamma: f64) -> f64 {
    let mut users: Vec<usize> = batch.iter().map(|r| r.user as usize).collect();
    let mut items: Vec<usize> = batch.iter().map(|r| r.item as usize).collect();
    users.sort_unstable();
    users.dedup();
    items.sort_unstable();
    items.dedup();
    let rho = model.config.rho;
    let (su, cu, eu, pu) = side_terms(&extract(model, Side::User), rho, &users);
    let (si, ci, ei, qi) = side_terms(&extract(model, Side::Item), rho, &items);
    let mse: f64 = batch
        .iter()
        .map(|r| {
            let p: f64 = pu[r.user as usize].iter().zip(&qi[r.item as usize]).map(|(a, b)| a * b).sum();
            (p - r.rating).powi(2)
        })
        .sum::<f64>()
        / batch.len() as f64;
    eta * (su + si + cu + ci) + gamma * (eu + ei) + mse.sqrt()
}

fn tiny(seed: u64, share: bool) -> (Model<f64>, Vec<Record>) {
    let cfg = ModelConfig {
        views: 2,
        centers: 4,
        center_dim: 2,
        latent_dim: 4,
        rho: 0.3,
        share_centers: share,
        init_logit_std: 1.0,
        weight_decay: 1e-3,
        seed,
        ..ModelConfig::default()
    };
    let model = Model::init(&cfg, 6, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let batch = (0..15)
        .map(|_| Record {
            user: rng.random_range(0..6),
            item: rng.random_range(0..6),
            rating: rng.random_range(1.0..5.0),
        })
        .collect();
    (model, batch)
}

#[test]
fn total_loss_matches_independent_reference() {
    for seed in 0..20 {
        for share in [false, true] {
            let (model, batch) = tiny(seed, share);
            for (eta, gamma) in [(0.0, 0.0), (0.1, 0.01), (1.5, 0.3)] {
                let got = total_loss(&model, &batch, eta, gamma).unwrap().total;
                let want = reference_total(&model, &batch, eta, gamma);
                assert!((got - want).abs() < 1e-9, "seed {seed} share {share}: {got} vs {want}");
            }
        }
    }
}

/// Penalized objective whose exact gradient `gradients` returns.
fn penalized(model: &Model<f64>, batch: &[Record], eta: f64, gamma: f64) -> f64 {
    let sq: f64 = model.blocks().iter().flat_map(|(_, p)| p.iter()).map(|x| x * x).sum();
    reference_total(model, batch, eta, gamma) + 0.5 * model.config.weight_decay * sq
}

fn central(model: &Model<f64>, batch: &[Record], block: usize, x: usize, h: f64, eta: f64, gamma: f64) -> f64 {
    let mut probe = model.clone();
    let orig = model.blocks()[block].1[x];
    probe.blocks_mut()[block].1[x] = orig + h;
    let plus = penalized(&probe, batch, eta, gamma);
    probe.blocks_mut()[block].1[x] = orig - h;
    let minus = penalized(&probe, batch, eta, gamma);
    (plus - minus) / (2.0 * h)
}

#[test]
fn gradients_match_central_differences_of_reference() {
    let (h, tol) = (1e-5, 1e-4);
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..12 {
        for share in [false, true] {
            let (model, batch) = tiny(seed, share);
            let (eta, gamma) = (0.2, 0.05);
            let grads = gradients(&model, &batch, eta, gamma).unwrap();
            for (b, (_, g)) in grads.blocks().iter().enumerate() {
                for (x, &analytic) in g.iter().enumerate() {
                    let coarse = central(&model, &batch, b, x, h, eta, gamma);
                    let fine = central(&model, &batch, b, x, h / 2.0, eta, gamma);
                    // Disagreement between step sizes means the probe crossed a kink.
                    if (coarse - fine).abs() > 1e-6 * coarse.abs().max(1e-3) {
                        skipped += 1;
                        continue;
                    }
                    checked += 1;
                    let rel = (analytic - coarse).abs() / analytic.abs().max(coarse.abs()).max(1e-6);
                    worst = worst.max(rel);
                    assert!(rel < tol, "seed {seed} block {b} coord {x}: analytic {analytic} numeric {coarse}");
                }
            }
        }
    }
    assert!(checked >= 1000, "only {checked} coordinates checked ({skipped} skipped)");
    assert!(skipped * 5 < checked, "too many skipped: {skipped} of {}", checked + skipped);
    eprintln!("checked {checked}, skipped {skipped}, worst relative error {worst:.2e}");
}

#[test]
fn single_record_prediction_gradient_has_closed_form() {
    let (mut model, _) = tiny(3, false);
    model.config.weight_decay = 0.0;
    let r = Record { user: 2, item: 4, rating: 4.5 };
    let grads = gradients(&model, &[r], 0.0, 0.0).unwrap();
    let p = model.latent(Side::User, 2).unwrap();
    let q = model.latent(Side::Item, 4).unwrap();
    let pred: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
    // d|pred - r| / d pred = sign(pred - r); through the assembly each user
    // center coordinate x of view j gets sign * w_k * q_x.
    let sign = (pred - r.rating).signum();
    let bank = model.centers(Side::User);
    for j in 0..2 {
        let w = model.weights(Side::User).softmax_row(2, j);
        let g = &grads.user_centers[j];
        for k in 0..bank.views[j].len() {
            for x in 0..2 {
                let want = sign * w[k] * q[j * 2 + x];
                assert!((g[k * 2 + x] - want).abs() < 1e-12);
            }
        }
        // logits: sign * w_k * (c_k - p_j) . q_j
        let lg = model.weights(Side::User).views[j].width;
        let gl = &grads.user_logits[j][2 * lg..3 * lg];
        for k in 0..lg {
            let c = bank.views[j].center(k);
            let dot: f64 = (0..2).map(|x| (c[x] - p[j * 2 + x]) * q[j * 2 + x]).sum();
            assert!((gl[k] - sign * w[k] * dot).abs() < 1e-12);
        }
    }
    // other users untouched
    assert!(grads.user_logits[0][..2 * 4].iter().all(|&g| g == 0.0));
}

#[test]
fn entropy_gradient_vanishes_on_saturated_rows() {
    let (mut model, _) = tiny(5, false);
    model.config.weight_decay = 0.0;
    for j in 0..2 {
        let row = model.weights_mut(Side::User).row_mut(0, j);
        row.iter_mut().for_each(|x| *x = -40.0);
        row[1] = 40.0;
    }
    let batch = [Record { user: 0, item: 0, rating: 3.0 }];
    let with = gradients(&model, &batch, 0.0, 1.0).unwrap();
    let without = gradients(&model, &batch, 0.0, 0.0).unwrap();
    for j in 0..2 {
        for k in 0..4 {
            let d = with.user_logits[j][k] - without.user_logits[j][k];
            assert!(d.abs() < 1e-12, "view {j} logit {k}: {d}");
        }
    }
}
