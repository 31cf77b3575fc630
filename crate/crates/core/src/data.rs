//! Rating datasets: parsing, dense reindexing, deterministic splits and
//! synthetic fixtures with planted cluster structure.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One rating as it appears in a source file, before reindexing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRating {
    pub user_key: String,
    pub item_key: String,
    pub rating: f64,
}

/// A reindexed rating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
}

/// Bijection between raw identifiers and dense indices `0..len`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyIndex {
    keys: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl KeyIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_keys(keys: Vec<String>) -> Result<Self> {
        let mut index = KeyIndex::new();
        for key in keys {
            let before = index.len();
            index.intern(&key);
            if index.len() == before {
                return Err(Error::Config(format!("duplicate key {key:?} in index map")));
            }
        }
        Ok(index)
    }

    /// Returns the dense index of `key`, assigning the next free one on first sight.
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&idx) = self.lookup.get(key) {
            return idx;
        }
        let idx = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.lookup.insert(key.to_owned(), idx);
        idx
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.lookup.get(key).map(|&i| i as usize)
    }

    pub fn key_of(&self, index: usize) -> Option<&str> {
        self.keys.get(index).map(String::as_str)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Source layouts understood by [`parse_ratings`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, no header.
    #[serde(rename = "movielens_100k")]
    MovieLens100k,
    /// `user::item::rating::timestamp`, no header.
    #[serde(rename = "movielens_1m")]
    MovieLens1m,
    /// Comma-separated with a header naming `user`, `item` and `rating`.
    GenericCsv,
}

impl RatingFormat {
    /// Rating range fixed by the format, if any.
    pub fn declared_range(self) -> Option<(f64, f64)> {
        match self {
            RatingFormat::MovieLens100k | RatingFormat::MovieLens1m => Some((1.0, 5.0)),
            RatingFormat::GenericCsv => None,
        }
    }
}

impl std::str::FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens_100k" | "ml-100k" => Ok(RatingFormat::MovieLens100k),
            "movielens_1m" | "ml-1m" => Ok(RatingFormat::MovieLens1m),
            "generic_csv" | "csv" => Ok(RatingFormat::GenericCsv),
            other => Err(Error::Config(format!("unknown rating format {other:?}"))),
        }
    }
}

/// Ratings over a dense user × item index space.
///
/// Splits of one dataset share the parent's dimensions and index maps.
#[derive(Clone, Debug)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub records: Vec<Record>,
    pub rating_min: f64,
    pub rating_max: f64,
    pub users: Arc<KeyIndex>,
    pub items: Arc<KeyIndex>,
}

impl InteractionDataset {
    /// Builds a dataset from raw ratings, assigning dense indices in order of
    /// first appearance.
    pub fn from_raw(raw: impl IntoIterator<Item = RawRating>, range: Option<(f64, f64)>) -> Result<Self> {
        let mut users = KeyIndex::new();
        let mut items = KeyIndex::new();
        let mut records = Vec::new();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in raw {
            let user = users.intern(&r.user_key);
            let item = items.intern(&r.item_key);
            lo = lo.min(r.rating);
            hi = hi.max(r.rating);
            records.push(Record { user, item, rating: r.rating });
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (rating_min, rating_max) = range.unwrap_or((lo, hi));
        Ok(InteractionDataset {
            n_users: users.len(),
            n_items: items.len(),
            records,
            rating_min,
            rating_max,
            users: Arc::new(users),
            items: Arc::new(items),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_rating(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.rating).sum::<f64>() / self.records.len() as f64
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.rating_min, self.rating_max)
    }

    /// A dataset over the same index space holding `records`.
    pub fn with_records(&self, records: Vec<Record>) -> Self {
        InteractionDataset {
            n_users: self.n_users,
            n_items: self.n_items,
            records,
            rating_min: self.rating_min,
            rating_max: self.rating_max,
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
        }
    }
}

fn parse_rating(field: &str, line: usize) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("rating {field:?} is not a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse { line, message: format!("rating {field:?} is not finite") });
    }
    Ok(value)
}

fn check_range(value: f64, range: Option<(f64, f64)>, line: usize) -> Result<()> {
    if let Some((lo, hi)) = range {
        if value < lo || value > hi {
            return Err(Error::Parse {
                line,
                message: format!("rating {value} outside declared range [{lo}, {hi}]"),
            });
        }
    }
    Ok(())
}

fn parse_delimited<R: Read>(source: R, delimiter: &str, range: Option<(f64, f64)>) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(delimiter).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let rating = parse_rating(fields[2], lineno)?;
        check_range(rating, range, lineno)?;
        out.push(RawRating {
            user_key: fields[0].trim().to_owned(),
            item_key: fields[1].trim().to_owned(),
            rating,
        });
    }
    Ok(out)
}

fn parse_csv<R: Read>(source: R) -> Result<Vec<RawRating>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or(Error::Parse {
            line: 1,
            message: format!("header lacks a {name:?} column"),
        })
    };
    let (cu, ci, cr) = (column("user")?, column("item")?, column("rating")?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let rating = parse_rating(&row[cr], line)?;
        out.push(RawRating {
            user_key: row[cu].trim().to_owned(),
            item_key: row[ci].trim().to_owned(),
            rating,
        });
    }
    Ok(out)
}

/// Parses a rating file into a densely reindexed dataset.
///
/// Record order follows the source. Users and items are numbered in order of
/// first appearance, so `n_items` counts observed items only.
pub fn parse_ratings<R: Read>(source: R, format: RatingFormat) -> Result<InteractionDataset> {
    let range = format.declared_range();
    let raw = match format {
        RatingFormat::MovieLens100k => parse_delimited(source, "\t", range)?,
        RatingFormat::MovieLens1m => parse_delimited(source, "::", range)?,
        RatingFormat::GenericCsv => parse_csv(source)?,
    };
    InteractionDataset::from_raw(raw, range)
}

pub fn load_ratings(path: &std::path::Path, format: RatingFormat) -> Result<InteractionDataset> {
    let file = std::fs::File::open(path)?;
    parse_ratings(file, format)
}

/// Record-level split proportions and the shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.8, valid: 0.1, test: 0.1, seed: 42 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} fraction {f} must lie in (0, 1)")));
            }
        }
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` records: valid and test are floor-rounded, train
    /// takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 0.1 * 100000 = 10000.000000000002
        // or 0.7 * 10 = 6.999999999999999.
        let part = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let valid = part(self.valid);
        let test = part(self.test);
        (n - valid - test, valid, test)
    }
}

/// The three parts of a split plus a fingerprint of the partition.
#[derive(Clone, Debug)]
pub struct SplitParts {
    pub train: InteractionDataset,
    pub valid: InteractionDataset,
    pub test: InteractionDataset,
    /// SHA-256 over the record positions of each part, hex encoded.
    pub fingerprint: String,
}

/// Shuffles record positions with ChaCha8 seeded from `spec.seed` and cuts the
/// permutation into train / valid / test. Within each part records keep the
/// parent's order.
pub fn split_dataset(ds: &InteractionDataset, spec: &SplitSpec) -> Result<SplitParts> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ds.len();
    let (n_train, n_valid, n_test) = spec.sizes(n);
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} records leaves an empty part ({n_train}/{n_valid}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..].to_vec(),
    ];
    let mut hasher = Sha256::new();
    for (tag, part) in parts.iter_mut().enumerate() {
        part.sort_unstable();
        hasher.update([tag as u8]);
        for &pos in part.iter() {
            hasher.update((pos as u64).to_le_bytes());
        }
    }
    let fingerprint: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let pick = |idx: &[usize]| ds.with_records(idx.iter().map(|&i| ds.records[i]).collect());
    Ok(SplitParts {
        train: pick(&parts[0]),
        valid: pick(&parts[1]),
        test: pick(&parts[2]),
        fingerprint,
    })
}

/// Parameters of a planted multi-view dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub views: usize,
    pub centers: usize,
    pub center_dim: usize,
    pub noise_sigma: f64,
    /// Probability that a (user, item) pair is observed.
    pub density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Small noiseless fixture: 200 users and items, two views of four 2-d centers.
    fn default() -> Self {
        SyntheticSpec { users: 200, items: 200, views: 2, centers: 4, center_dim: 2, noise_sigma: 0.0, density: 1.0, seed: 0 }
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    pub views: usize,
    pub center_dim: usize,
    /// `[view][center]` → coordinates.
    pub user_centers: Vec<Vec<Vec<f64>>>,
    pub item_centers: Vec<Vec<Vec<f64>>>,
    /// `[entity][view]` → planted center.
    pub user_assign: Vec<Vec<usize>>,
    pub item_assign: Vec<Vec<usize>>,
}

impl PlantedStructure {
    fn latent(centers: &[Vec<Vec<f64>>], assign: &[usize]) -> Vec<f64> {
        assign.iter().enumerate().flat_map(|(j, &k)| centers[j][k].iter().copied()).collect()
    }

    pub fn user_latent(&self, user: usize) -> Vec<f64> {
        Self::latent(&self.user_centers, &self.user_assign[user])
    }

    pub fn item_latent(&self, item: usize) -> Vec<f64> {
        Self::latent(&self.item_centers, &self.item_assign[item])
    }

    /// Noise-free rating of the planted model.
    pub fn rating(&self, user: usize, item: usize) -> f64 {
        let p = self.user_latent(user);
        let q = self.item_latent(item);
        p.iter().zip(&q).map(|(a, b)| a * b).sum()
    }

    /// RMSE of the planted model on `ds`; the floor any fitted model can reach.
    pub fn residual_rmse(&self, ds: &InteractionDataset) -> f64 {
        let sse: f64 = ds
            .records
            .iter()
            .map(|r| {
                let e = self.rating(r.user as usize, r.item as usize) - r.rating;
                e * e
            })
            .sum();
        (sse / ds.len() as f64).sqrt()
    }
}

/// Generates ratings from planted centers and one-hot memberships.
///
/// Centers are uniform in `[0, 1]^b`, each user and item picks one center per
/// view uniformly at random, and a rating is the dot product of the assembled
/// latents plus Gaussian noise. User `u` has key `u{u}` and index `u`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(InteractionDataset, PlantedStructure)> {
    let SyntheticSpec { users, items, views, centers, center_dim, noise_sigma, density, seed } = *spec;
    if users == 0 || items == 0 || views == 0 || centers == 0 || center_dim == 0 {
        return Err(Error::Config("synthetic counts must all be positive".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {noise_sigma} must be finite and >= 0")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density {density} must lie in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plant_centers = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
        (0..views)
            .map(|_| (0..centers).map(|_| (0..center_dim).map(|_| rng.random::<f64>()).collect()).collect())
            .collect()
    };
    let user_centers = plant_centers(&mut rng);
    let item_centers = plant_centers(&mut rng);
    let plant_assign = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
        (0..count).map(|_| (0..views).map(|_| rng.random_range(0..centers)).collect()).collect()
    };
    let user_assign = plant_assign(users, &mut rng);
    let item_assign = plant_assign(items, &mut rng);
    let planted = PlantedStructure { views, center_dim, user_centers, item_centers, user_assign, item_assign };

    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut raw = Vec::with_capacity(users * items);
    for u in 0..users {
        let p = planted.user_latent(u);
        for i in 0..items {
            if density < 1.0 && rng.random::<f64>() >= density {
                continue;
            }
            let q = planted.item_latent(i);
            let mut rating: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            if noise_sigma > 0.0 {
                rating += noise.sample(&mut rng);
            }
            raw.push(RawRating { user_key: format!("u{u}"), item_key: format!("i{i}"), rating });
        }
    }
    // Pre-intern keys so dense indices coincide with planted indices even when
    // sparse sampling skips an entity's first pair.
    let mut user_index = KeyIndex::new();
    for u in 0..users {
        user_index.intern(&format!("u{u}"));
    }
    let mut item_index = KeyIndex::new();
    for i in 0..items {
        item_index.intern(&format!("i{i}"));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let records = raw
        .iter()
        .map(|r| {
            lo = lo.min(r.rating);
            hi = hi.max(r.rating);
            Record {
                user: user_index.index_of(&r.user_key).unwrap() as u32,
                item: item_index.index_of(&r.item_key).unwrap() as u32,
                rating: r.rating,
            }
        })
        .collect();
    let ds = InteractionDataset {
        n_users: users,
        n_items: items,
        records,
        rating_min: lo,
        rating_max: hi,
        users: Arc::new(user_index),
        items: Arc::new(item_index),
    };
    Ok((ds, planted))
}
