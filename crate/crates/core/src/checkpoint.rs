//! Self-describing JSON checkpoints. Parameter arrays are stored as base64 of
//! their little-endian bytes, so a save/load round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, FlatMfModel};
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::model::{CenterBank, Model, ModelConfig, ViewCenters, ViewLogits, WeightStore};
use crate::scalar::{decode_le, encode_le, Scalar};

pub const CHECKPOINT_FORMAT: &str = "mfdmc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Array {
    len: usize,
    data: String,
}

impl Array {
    fn of<T: Scalar>(values: &[T]) -> Self {
        Array { len: values.len(), data: STANDARD.encode(encode_le(values)) }
    }

    fn decode<T: Scalar>(&self, what: &str) -> Result<Vec<T>> {
        let bytes = STANDARD.decode(&self.data).map_err(|e| Error::Checkpoint(format!("{what}: bad base64 ({e})")))?;
        let values = decode_le::<T>(&bytes)
            .ok_or_else(|| Error::Checkpoint(format!("{what}: payload is not a whole number of {}", T::NAME)))?;
        if values.len() != self.len {
            return Err(Error::Checkpoint(format!("{what}: expected {} values, found {}", self.len, values.len())));
        }
        Ok(values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ViewRecord {
    alive: Vec<bool>,
    coords: Array,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BankRecord {
    initial: usize,
    dim: usize,
    views: Vec<ViewRecord>,
}

impl BankRecord {
    fn of<T: Scalar>(bank: &CenterBank<T>) -> Self {
        BankRecord {
            initial: bank.initial,
            dim: bank.dim,
            views: (0..bank.num_views())
                .map(|j| ViewRecord { alive: bank.alive_mask(j), coords: Array::of(&bank.views[j].coords) })
                .collect(),
        }
    }

    fn restore<T: Scalar>(&self, what: &str) -> Result<CenterBank<T>> {
        let mut views = Vec::with_capacity(self.views.len());
        for (j, v) in self.views.iter().enumerate() {
            if v.alive.len() != self.initial {
                return Err(Error::Checkpoint(format!("{what} view {j}: alive mask length {}", v.alive.len())));
            }
            let ids: Vec<usize> = v.alive.iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k).collect();
            let coords = v.coords.decode::<T>(&format!("{what} view {j}"))?;
            if coords.len() != ids.len() * self.dim {
                return Err(Error::Checkpoint(format!(
                    "{what} view {j}: {} coordinates for {} live centers of dim {}",
                    coords.len(),
                    ids.len(),
                    self.dim
                )));
            }
            views.push(ViewCenters { dim: self.dim, coords, ids });
        }
        Ok(CenterBank { initial: self.initial, dim: self.dim, views })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LogitsRecord {
    width: usize,
    logits: Array,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MfdmcPayload {
    config: ModelConfig,
    users: usize,
    items: usize,
    user_centers: BankRecord,
    item_centers: Option<BankRecord>,
    user_logits: Vec<LogitsRecord>,
    item_logits: Vec<LogitsRecord>,
}

fn store_record<T: Scalar>(store: &WeightStore<T>) -> Vec<LogitsRecord> {
    store.views.iter().map(|v| LogitsRecord { width: v.width, logits: Array::of(&v.logits) }).collect()
}

fn restore_store<T: Scalar>(records: &[LogitsRecord], entities: usize, bank: &CenterBank<T>, what: &str) -> Result<WeightStore<T>> {
    if records.len() != bank.num_views() {
        return Err(Error::Checkpoint(format!("{what}: {} logit views for {} center views", records.len(), bank.num_views())));
    }
    let mut views = Vec::with_capacity(records.len());
    for (j, r) in records.iter().enumerate() {
        if r.width != bank.views[j].len() {
            return Err(Error::Checkpoint(format!(
                "{what} view {j}: logit width {} but {} live centers",
                r.width,
                bank.views[j].len()
            )));
        }
        let logits = r.logits.decode::<T>(&format!("{what} view {j}"))?;
        if logits.len() != entities * r.width {
            return Err(Error::Checkpoint(format!("{what} view {j}: wrong logit count {}", logits.len())));
        }
        views.push(ViewLogits { width: r.width, logits });
    }
    Ok(WeightStore { entities, views })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FlatPayload {
    dim: usize,
    users: usize,
    items: usize,
    user_factors: Array,
    item_factors: Array,
    user_bias: Array,
    item_bias: Array,
    global_mean: Array,
}

/// Raw user and item identifiers in dense-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl KeyMaps {
    pub fn of(ds: &InteractionDataset) -> Self {
        KeyMaps { users: ds.users.keys().to_vec(), items: ds.items.keys().to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SavedModel<T> {
    Mfdmc(Model<T>),
    Flat(FlatMfModel<T>),
}

impl<T> SavedModel<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SavedModel::Mfdmc(_) => "mfdmc",
            SavedModel::Flat(m) => match m.kind {
                BaselineKind::FunkMf => "funkmf",
                BaselineKind::BiasedMf => "biasedmf",
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: SavedModel<T>,
    pub keys: Option<KeyMaps>,
    pub rating_range: Option<[f64; 2]>,
}

/// Fields readable without knowing the scalar type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub model_kind: String,
    pub scalar: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    #[serde(flatten)]
    header: CheckpointHeader,
    #[serde(default)]
    keys: Option<KeyMaps>,
    #[serde(default)]
    rating_range: Option<[f64; 2]>,
    model: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn mfdmc(model: Model<T>) -> Self {
        Checkpoint { model: SavedModel::Mfdmc(model), keys: None, rating_range: None }
    }

    pub fn flat(model: FlatMfModel<T>) -> Self {
        Checkpoint { model: SavedModel::Flat(model), keys: None, rating_range: None }
    }

    /// Attaches the dataset's key maps and rating range.
    pub fn with_dataset(mut self, ds: &InteractionDataset) -> Self {
        self.keys = Some(KeyMaps::of(ds));
        self.rating_range = Some([ds.rating_min, ds.rating_max]);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let model = match &self.model {
            SavedModel::Mfdmc(m) => serde_json::to_value(MfdmcPayload {
                config: m.config.clone(),
                users: m.user_weights.entities,
                items: m.item_weights.entities,
                user_centers: BankRecord::of(&m.user_centers),
                item_centers: m.item_centers.as_ref().map(BankRecord::of),
                user_logits: store_record(&m.user_weights),
                item_logits: store_record(&m.item_weights),
            })?,
            SavedModel::Flat(m) => serde_json::to_value(FlatPayload {
                dim: m.dim,
                users: m.users(),
                items: m.items(),
                user_factors: Array::of(&m.user_factors),
                item_factors: Array::of(&m.item_factors),
                user_bias: Array::of(&m.user_bias),
                item_bias: Array::of(&m.item_bias),
                global_mean: Array::of(&[m.global_mean]),
            })?,
        };
        let envelope = Envelope {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                model_kind: self.model.kind_name().into(),
                scalar: T::NAME.into(),
            },
            keys: self.keys.clone(),
            rating_range: self.rating_range,
            model,
        };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let envelope: Envelope = parse_envelope(text)?;
        let header = &envelope.header;
        if header.scalar != T::NAME {
            return Err(Error::Checkpoint(format!("checkpoint holds {} parameters, expected {}", header.scalar, T::NAME)));
        }
        let model = match header.model_kind.as_str() {
            "mfdmc" => {
                let p: MfdmcPayload = serde_json::from_value(envelope.model)
                    .map_err(|e| Error::Checkpoint(format!("mfdmc payload: {e}")))?;
                p.config.validate()?;
                let user_centers = p.user_centers.restore::<T>("user centers")?;
                let item_centers = p.item_centers.as_ref().map(|b| b.restore::<T>("item centers")).transpose()?;
                let item_bank = item_centers.as_ref().unwrap_or(&user_centers);
                let user_weights = restore_store(&p.user_logits, p.users, &user_centers, "user logits")?;
                let item_weights = restore_store(&p.item_logits, p.items, item_bank, "item logits")?;
                SavedModel::Mfdmc(Model { config: p.config, user_weights, item_weights, user_centers, item_centers })
            }
            kind @ ("funkmf" | "biasedmf") => {
                let p: FlatPayload = serde_json::from_value(envelope.model)
                    .map_err(|e| Error::Checkpoint(format!("{kind} payload: {e}")))?;
                let m = FlatMfModel {
                    kind: kind.parse()?,
                    dim: p.dim,
                    user_factors: p.user_factors.decode("user factors")?,
                    item_factors: p.item_factors.decode("item factors")?,
                    user_bias: p.user_bias.decode("user bias")?,
                    item_bias: p.item_bias.decode("item bias")?,
                    global_mean: *p.global_mean.decode::<T>("global mean")?.first().ok_or_else(|| {
                        Error::Checkpoint("global mean missing".into())
                    })?,
                };
                if m.user_factors.len() != p.users * p.dim || m.item_factors.len() != p.items * p.dim {
                    return Err(Error::Checkpoint("factor arrays disagree with declared dimensions".into()));
                }
                SavedModel::Flat(m)
            }
            other => return Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
        };
        Ok(Checkpoint { model, keys: envelope.keys, rating_range: envelope.rating_range })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn parse_envelope(text: &str) -> Result<Envelope> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON ({e}); version unknown")))?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("format tag {format:?} is not {CHECKPOINT_FORMAT:?}")));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {v} (this build reads version {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint(format!("missing version (expected {CHECKPOINT_VERSION})"))),
    }
    serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("version {CHECKPOINT_VERSION} envelope: {e}")))
}

/// Reads the header of a checkpoint, e.g. to choose the scalar type.
pub fn read_header(text: &str) -> Result<CheckpointHeader> {
    Ok(parse_envelope(text)?.header)
}
