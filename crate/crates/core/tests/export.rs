use std::collections::BTreeMap;

use mfdmc::checkpoint::{Checkpoint, SavedModel};
use mfdmc::data::{parse_ratings, InteractionDataset, RatingFormat};
use mfdmc::eval::{export_assignments, interpretability_report, ItemMetadata};
use mfdmc::model::{Model, ModelConfig, Side};

/// Two users and four items in one view with three centers. Item logits put
/// i0 and i1 in cluster 0, i2 in cluster 1 and i3 in cluster 2; u0 sits in
/// cluster 0 and u1 in cluster 2.
fn fixture() -> (Model<f64>, InteractionDataset) {
    let csv = "user,item,rating\nu0,i0,5\nu0,i1,4\nu0,i2,2\nu1,i2,3\nu1,i3,1\nu1,i1,2\n";
    let ds = parse_ratings(csv.as_bytes(), RatingFormat::GenericCsv).unwrap();
    let cfg = ModelConfig { views: 1, centers: 3, center_dim: 2, latent_dim: 2, init_logit_std: 0.0, ..ModelConfig::default() };
    let mut model = Model::init(&cfg, ds.n_users, ds.n_items).unwrap();
    for (key, cluster) in [("i0", 0), ("i1", 0), ("i2", 1), ("i3", 2)] {
        let i = ds.items.index_of(key).unwrap();
        model.weights_mut(Side::Item).row_mut(i, 0)[cluster] = 5.0;
    }
    for (key, cluster) in [("u0", 0), ("u1", 2)] {
        let u = ds.users.index_of(key).unwrap();
        model.weights_mut(Side::User).row_mut(u, 0)[cluster] = 5.0;
    }
    (model, ds)
}

fn metadata() -> ItemMetadata {
    let csv = "item,category\ni0,Action\ni1,Action\ni1,Comedy\ni2,Comedy\ni3,Drama\n";
    ItemMetadata::parse(csv.as_bytes()).unwrap()
}

#[test]
fn report_matches_hand_computed_fixture() {
    let (model, ds) = fixture();
    let report = interpretability_report(&model, &ds.items, &metadata(), Some(&ds)).unwrap();
    assert_eq!(report.metadata_coverage, 1.0);
    let view = &report.views[0];

    let hist: Vec<(usize, BTreeMap<String, usize>)> =
        view.item_clusters.iter().map(|c| (c.members, c.categories.clone())).collect();
    let cats = |pairs: &[(&str, usize)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
    assert_eq!(
        hist,
        vec![
            (2, cats(&[("Action", 2), ("Comedy", 1)])),
            (1, cats(&[("Comedy", 1)])),
            (1, cats(&[("Drama", 1)])),
        ]
    );

    // Comedy splits evenly over two clusters; the others sit in one.
    let spread: Vec<(&str, usize, usize)> =
        view.category_spread.iter().map(|s| (s.category.as_str(), s.items, s.clusters)).collect();
    assert_eq!(spread, vec![("Comedy", 2, 2), ("Action", 2, 1), ("Drama", 1, 1)]);
    assert!((view.category_spread[0].entropy - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(view.category_spread[1].entropy, 0.0);

    let users = &view.user_clusters;
    assert_eq!(users.iter().map(|c| c.members).collect::<Vec<_>>(), vec![1, 0, 1]);
    // u0 rated Action 5 and 4 (i1 is also Comedy), Comedy 4 and 2.
    assert_eq!(users[0].mean_rating["Action"], 4.5);
    assert_eq!(users[0].mean_rating["Comedy"], 3.0);
    assert!(users[1].mean_rating.is_empty());
    // u1 rated Comedy 3 and 2, Drama 1, Action 2.
    assert_eq!(users[2].mean_rating["Comedy"], 2.5);
    assert_eq!(users[2].mean_rating["Drama"], 1.0);
    assert_eq!(users[2].mean_rating["Action"], 2.0);
}

#[test]
fn low_metadata_coverage_is_rejected() {
    let (model, ds) = fixture();
    let partial = ItemMetadata::parse("item,category\ni0,Action\n".as_bytes()).unwrap();
    let err = interpretability_report(&model, &ds.items, &partial, None).unwrap_err();
    assert!(err.to_string().contains("25.0%"), "{err}");
}

#[test]
fn export_is_byte_identical_through_a_checkpoint() {
    let (model, ds) = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let first = export_assignments(&model, &tmp.path().join("a")).unwrap();

    let path = tmp.path().join("ckpt.json");
    Checkpoint::mfdmc(model).with_dataset(&ds).save(&path).unwrap();
    let SavedModel::Mfdmc(restored) = Checkpoint::<f64>::load(&path).unwrap().model else { panic!("flat model") };
    let second = export_assignments(&restored, &tmp.path().join("b")).unwrap();

    for (a, b) in [(&first.assignments_csv, &second.assignments_csv), (&first.centers_json, &second.centers_json)] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{}", a.display());
    }
    let csv = std::fs::read_to_string(&first.assignments_csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "side,entity,view,assigned_center,w0,w1,w2");
    assert_eq!(csv.lines().count(), 1 + ds.n_users + ds.n_items);
}
