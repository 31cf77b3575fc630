//! Test-set evaluation, cluster-assignment export and interpretability reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, KeyIndex, PlantedStructure};
use crate::error::{Error, Result};
use crate::model::{argmax_first, Model, Side};
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Anything that produces a raw (unclamped) rating.
pub trait RatingPredictor {
    fn predict_raw(&self, user: usize, item: usize) -> Result<f64>;
}

impl<T: Scalar> RatingPredictor for Model<T> {
    fn predict_raw(&self, user: usize, item: usize) -> Result<f64> {
        self.predict(user, item).map(Scalar::as_f64)
    }
}

fn rmse_with(model: &impl RatingPredictor, test: &InteractionDataset, clamp: bool) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("evaluation needs a nonempty test set"));
    }
    let mut sse = 0.0;
    for r in &test.records {
        let raw = model.predict_raw(r.user as usize, r.item as usize)?;
        let pred = if clamp { test.clamp(raw) } else { raw };
        sse += (pred - r.rating) * (pred - r.rating);
    }
    Ok((sse / test.len() as f64).sqrt())
}

/// RMSE of predictions clamped to the dataset's rating range.
pub fn evaluate_rmse(model: &impl RatingPredictor, test: &InteractionDataset) -> Result<f64> {
    rmse_with(model, test, true)
}

pub fn evaluate_rmse_unclamped(model: &impl RatingPredictor, test: &InteractionDataset) -> Result<f64> {
    rmse_with(model, test, false)
}

/// Predicts one constant for every pair.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPredictor(pub f64);

impl RatingPredictor for ConstantPredictor {
    fn predict_raw(&self, _: usize, _: usize) -> Result<f64> {
        Ok(self.0)
    }
}

/// One (side, entity, view) membership.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentRow {
    pub side: Side,
    pub entity: usize,
    pub view: usize,
    pub assigned_center: usize,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignmentTable {
    pub rows: Vec<AssignmentRow>,
}

impl ClusterAssignmentTable {
    pub fn of<T: Scalar>(model: &Model<T>) -> Self {
        let mut rows = Vec::new();
        for side in Side::BOTH {
            let store = model.weights(side);
            for entity in 0..store.entities {
                for view in 0..store.views.len() {
                    let w = store.softmax_row(entity, view);
                    rows.push(AssignmentRow {
                        side,
                        entity,
                        view,
                        assigned_center: argmax_first(&w),
                        weights: w.iter().map(|x| x.as_f64()).collect(),
                    });
                }
            }
        }
        ClusterAssignmentTable { rows }
    }

    /// CSV with header `side,entity,view,assigned_center,w0..w{t-1}`; rows of
    /// views with fewer live centers leave their trailing cells empty.
    pub fn to_csv(&self) -> String {
        let width = self.rows.iter().map(|r| r.weights.len()).max().unwrap_or(0);
        let mut out = String::from("side,entity,view,assigned_center");
        for k in 0..width {
            write!(out, ",w{k}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.side, r.entity, r.view, r.assigned_center).unwrap();
            for k in 0..width {
                match r.weights.get(k) {
                    Some(w) => write!(out, ",{w}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSummary {
    /// Position among live centers, as used by the assignment columns.
    pub index: usize,
    /// Slot at initialization.
    pub id: usize,
    pub coords: Vec<f64>,
    pub members: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub view: usize,
    pub centers: Vec<CenterSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterExport {
    pub schema_version: u32,
    pub shared_centers: bool,
    pub user: Vec<ViewSummary>,
    pub item: Vec<ViewSummary>,
}

impl CenterExport {
    pub fn of<T: Scalar>(model: &Model<T>, table: &ClusterAssignmentTable) -> Self {
        let summarize = |side: Side| -> Vec<ViewSummary> {
            let bank = model.centers(side);
            bank.views
                .iter()
                .enumerate()
                .map(|(view, vc)| {
                    let mut members = vec![0usize; vc.len()];
                    for r in table.rows.iter().filter(|r| r.side == side && r.view == view) {
                        members[r.assigned_center] += 1;
                    }
                    let centers = (0..vc.len())
                        .map(|k| CenterSummary {
                            index: k,
                            id: vc.ids[k],
                            coords: vc.center(k).iter().map(|x| x.as_f64()).collect(),
                            members: members[k],
                        })
                        .collect();
                    ViewSummary { view, centers }
                })
                .collect()
        };
        CenterExport {
            schema_version: REPORT_SCHEMA_VERSION,
            shared_centers: model.shares_centers(),
            user: summarize(Side::User),
            item: summarize(Side::Item),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportPaths {
    pub assignments_csv: PathBuf,
    pub centers_json: PathBuf,
}

/// Writes `assignments.csv` and `centers.json` into `dir`.
pub fn export_assignments<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<ExportPaths> {
    std::fs::create_dir_all(dir)?;
    let table = ClusterAssignmentTable::of(model);
    let summary = CenterExport::of(model, &table);
    let paths = ExportPaths { assignments_csv: dir.join("assignments.csv"), centers_json: dir.join("centers.json") };
    std::fs::write(&paths.assignments_csv, table.to_csv())?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(&paths.centers_json, json)?;
    Ok(paths)
}

/// Item categories keyed by raw item id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemMetadata {
    pub categories: BTreeMap<String, Vec<String>>,
}

pub const UNKNOWN_CATEGORY: &str = "unknown";

impl ItemMetadata {
    /// Parses CSV `item,category`, one row per (item, category) pair.
    pub fn parse<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let headers = reader.headers().map_err(|e| Error::Metadata(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Metadata(format!("header lacks a {name:?} column")))
        };
        let (ci, cc) = (col("item")?, col("category")?);
        let mut categories: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Metadata(e.to_string()))?;
            let (item, cat) = (row.get(ci), row.get(cc));
            let (Some(item), Some(cat)) = (item, cat) else {
                return Err(Error::Metadata(format!("short row {:?}", row.position().map(|p| p.line()))));
            };
            let entry = categories.entry(item.trim().to_owned()).or_default();
            let cat = cat.trim().to_owned();
            if !entry.contains(&cat) {
                entry.push(cat);
            }
        }
        Ok(ItemMetadata { categories })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(std::fs::File::open(path)?)
    }

    /// Categories of every dense item index; unmatched items get `unknown`.
    fn resolve(&self, items: &KeyIndex) -> (Vec<Vec<String>>, usize) {
        let mut matched = 0;
        let cats = items
            .keys()
            .iter()
            .map(|k| match self.categories.get(k) {
                Some(c) if !c.is_empty() => {
                    matched += 1;
                    c.clone()
                }
                _ => vec![UNKNOWN_CATEGORY.to_owned()],
            })
            .collect();
        (cats, matched)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterHistogram {
    pub cluster: usize,
    pub members: usize,
    /// Category → member count. Items with several categories count once in each.
    pub categories: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpread {
    pub category: String,
    pub items: usize,
    /// Shannon entropy (nats) of the category's items across clusters.
    pub entropy: f64,
    /// Number of clusters holding at least one item of the category.
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserClusterRatings {
    pub cluster: usize,
    pub members: usize,
    /// Category → mean rating given by the cluster's users to items of it.
    pub mean_rating: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub view: usize,
    pub item_clusters: Vec<ClusterHistogram>,
    /// Categories ordered from most spread across clusters to most concentrated.
    pub category_spread: Vec<CategorySpread>,
    pub user_clusters: Vec<UserClusterRatings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityReport {
    pub schema_version: u32,
    pub metadata_coverage: f64,
    pub views: Vec<ViewReport>,
}

/// Joins item cluster memberships with item categories, per view, and when
/// `ratings` is given the mean rating each user cluster gives each category.
pub fn interpretability_report<T: Scalar>(
    model: &Model<T>,
    items: &KeyIndex,
    metadata: &ItemMetadata,
    ratings: Option<&InteractionDataset>,
) -> Result<InterpretabilityReport> {
    let n_items = model.entity_count(Side::Item);
    if items.len() != n_items {
        return Err(Error::Metadata(format!("item index map has {} keys for {n_items} items", items.len())));
    }
    let (cats, matched) = metadata.resolve(items);
    let coverage = if n_items == 0 { 0.0 } else { matched as f64 / n_items as f64 };
    if coverage < 0.9 {
        return Err(Error::Metadata(format!("metadata covers {:.1}% of items, need >= 90%", coverage * 100.0)));
    }
    let views = model.centers(Side::Item).num_views();
    let mut out = Vec::with_capacity(views);
    for view in 0..views {
        let t_item = model.centers(Side::Item).views[view].len();
        let item_assign: Vec<usize> = (0..n_items).map(|i| model.assign(Side::Item, i, view)).collect::<Result<_>>()?;
        let mut item_clusters: Vec<ClusterHistogram> =
            (0..t_item).map(|cluster| ClusterHistogram { cluster, members: 0, categories: BTreeMap::new() }).collect();
        let mut per_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, &c) in item_assign.iter().enumerate() {
            item_clusters[c].members += 1;
            for cat in &cats[i] {
                *item_clusters[c].categories.entry(cat.clone()).or_default() += 1;
                per_category.entry(cat.as_str()).or_insert_with(|| vec![0; t_item])[c] += 1;
            }
        }
        let mut category_spread: Vec<CategorySpread> = per_category
            .into_iter()
            .map(|(category, counts)| {
                let total: usize = counts.iter().sum();
                let entropy = counts
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / total as f64;
                        -p * p.ln()
                    })
                    .sum();
                CategorySpread {
                    category: category.to_owned(),
                    items: total,
                    entropy,
                    clusters: counts.iter().filter(|&&c| c > 0).count(),
                }
            })
            .collect();
        category_spread.sort_by(|a, b| b.entropy.total_cmp(&a.entropy).then_with(|| a.category.cmp(&b.category)));

        let mut user_clusters = Vec::new();
        if let Some(ds) = ratings {
            let t_user = model.centers(Side::User).views[view].len();
            let user_assign: Vec<usize> =
                (0..model.entity_count(Side::User)).map(|u| model.assign(Side::User, u, view)).collect::<Result<_>>()?;
            let mut sums: Vec<HashMap<&str, (f64, usize)>> = vec![HashMap::new(); t_user];
            for r in &ds.records {
                let c = *user_assign.get(r.user as usize).ok_or(Error::IndexOutOfRange {
                    side: Side::User,
                    index: r.user as usize,
                    count: user_assign.len(),
                })?;
                let item_cats = cats.get(r.item as usize).ok_or(Error::IndexOutOfRange {
                    side: Side::Item,
                    index: r.item as usize,
                    count: cats.len(),
                })?;
                for cat in item_cats {
                    let e = sums[c].entry(cat.as_str()).or_insert((0.0, 0));
                    e.0 += r.rating;
                    e.1 += 1;
                }
            }
            let mut members = vec![0usize; t_user];
            for &c in &user_assign {
                members[c] += 1;
            }
            user_clusters = sums
                .into_iter()
                .enumerate()
                .map(|(cluster, m)| UserClusterRatings {
                    cluster,
                    members: members[cluster],
                    mean_rating: m.into_iter().map(|(k, (s, n))| (k.to_owned(), s / n as f64)).collect(),
                })
                .collect();
        }
        out.push(ViewReport { view, item_clusters, category_spread, user_clusters });
    }
    Ok(InterpretabilityReport { schema_version: REPORT_SCHEMA_VERSION, metadata_coverage: coverage, views: out })
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(n³)). Returns `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // Potentials and matching use 1-based indices with 0 as a sentinel column.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assignment[col_owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of entities (over both sides and all views) whose learned cluster
/// matches the planted one, after resolving the center labelling of each view
/// with a maximum-agreement matching and the view order by exhaustive search
/// over view permutations when `views <= 6`.
#[allow(clippy::needless_range_loop)]
pub fn planted_recovery<T: Scalar>(model: &Model<T>, planted: &PlantedStructure) -> Result<f64> {
    let views = planted.views;
    if model.centers(Side::User).num_views() != views {
        return Err(Error::Config("model and planted structure disagree on view count".into()));
    }
    let sides = [(Side::User, &planted.user_assign), (Side::Item, &planted.item_assign)];
    // agree[s][learned_view][planted_view] = best matched count.
    let mut agree = vec![vec![vec![0usize; views]; views]; 2];
    let mut totals = [0usize; 2];
    for (s, (side, truth)) in sides.iter().enumerate() {
        let n = model.entity_count(*side);
        totals[s] = n;
        for lv in 0..views {
            let learned: Vec<usize> = (0..n).map(|e| model.assign(*side, e, lv)).collect::<Result<_>>()?;
            for pv in 0..views {
                agree[s][lv][pv] = matched_agreement(&learned, truth.iter().map(|a| a[pv]));
            }
        }
    }
    let perms = if views <= 6 { permutations(views) } else { vec![(0..views).collect()] };
    let mut best = 0usize;
    for perm in &perms {
        let hits: usize = (0..2).map(|s| (0..views).map(|lv| agree[s][lv][perm[lv]]).sum::<usize>()).sum();
        best = best.max(hits);
    }
    Ok(best as f64 / ((totals[0] + totals[1]) * views) as f64)
}

fn matched_agreement(learned: &[usize], truth: impl Iterator<Item = usize>) -> usize {
    let truth: Vec<usize> = truth.collect();
    let size = learned.iter().chain(&truth).max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0.0f64; size]; size];
    for (&l, &t) in learned.iter().zip(&truth) {
        counts[l][t] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|row| row.iter().map(|&c| -c).collect()).collect();
    let assignment = hungarian(&cost);
    assignment.iter().enumerate().map(|(l, &t)| counts[l][t] as usize).sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InteractionDataset, RawRating};

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        permutations(cost.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 100) as f64
        };
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| next()).collect()).collect();
                let a = hungarian(&cost);
                let mut seen = a.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let got: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
                assert_eq!(got, brute_force_min(&cost));
            }
        }
    }

    #[test]
    fn clamping_examples() {
        let ds = InteractionDataset::from_raw(
            vec![RawRating { user_key: "a".into(), item_key: "x".into(), rating: 5.0 }],
            Some((1.0, 5.0)),
        )
        .unwrap();
        let high = ConstantPredictor(5.7);
        assert_eq!(evaluate_rmse(&high, &ds).unwrap(), 0.0);
        assert!((evaluate_rmse_unclamped(&high, &ds).unwrap() - 0.7).abs() < 1e-12);
        let empty = ds.with_records(Vec::new());
        assert!(evaluate_rmse(&high, &empty).is_err());
    }

    #[test]
    fn metadata_parsing() {
        let md = ItemMetadata::parse("item,category\n1,Comedy\n1,Drama\n2,Comedy\n1,Drama\n".as_bytes()).unwrap();
        assert_eq!(md.categories["1"], vec!["Comedy", "Drama"]);
        assert!(ItemMetadata::parse("id,genre\n1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_pads_ragged_rows() {
        let table = ClusterAssignmentTable {
            rows: vec![
                AssignmentRow { side: Side::User, entity: 0, view: 0, assigned_center: 1, weights: vec![0.25, 0.5, 0.25] },
                AssignmentRow { side: Side::Item, entity: 0, view: 1, assigned_center: 0, weights: vec![1.0, 0.0] },
            ],
        };
        assert_eq!(
            table.to_csv(),
            "side,entity,view,assigned_center,w0,w1,w2\nuser,0,0,1,0.25,0.5,0.25\nitem,0,1,0,1,0,\n"
        );
    }
}
