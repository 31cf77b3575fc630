//! Run configuration: one JSON file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use mfdmc::baselines::BaselineConfig;
use mfdmc::data::{RatingFormat, SplitSpec, SyntheticSpec};
use mfdmc::gradcheck::GradcheckConfig;
use mfdmc::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DATA_DIR_ENV: &str = "MFDMC_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Label used in summary lines.
    pub name: String,
    /// Relative paths resolve against the data directory.
    pub path: PathBuf,
    pub format: RatingFormat,
    /// Optional `item,category` sidecar for interpretability reports.
    pub metadata: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "ml-100k".into(),
            path: PathBuf::from("ml-100k/u.data"),
            format: RatingFormat::MovieLens100k,
            metadata: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub baseline: BaselineConfig,
    pub gradcheck: GradcheckConfig,
    pub synthetic: SyntheticSpec,
    pub precision: Precision,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            baseline: BaselineConfig::default(),
            gradcheck: GradcheckConfig::default(),
            synthetic: SyntheticSpec::default(),
            precision: Precision::F64,
            output_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        let defaults = serde_json::to_value(RunConfig::default())?;
        for item in overrides {
            apply_override(&mut value, &defaults, item)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        self.baseline.validate()?;
        Ok(())
    }

    pub fn data_path(&self, data_dir: &Path) -> PathBuf {
        resolve(&self.dataset.path, data_dir)
    }

    pub fn metadata_path(&self, data_dir: &Path) -> Option<PathBuf> {
        self.dataset.metadata.as_ref().map(|p| resolve(p, data_dir))
    }
}

fn resolve(path: &Path, data_dir: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_dir.join(path)
    }
}

/// Applies one `dotted.key=value` override. The value is read as JSON and
/// falls back to a plain string. Missing intermediate objects are seeded from
/// the defaults, so `model.eta.end=0.2` keeps the default schedule's kind.
pub fn apply_override(root: &mut Value, defaults: &Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let parsed = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut cur = root;
    let mut def = Some(defaults);
    for (i, part) in parts.iter().enumerate() {
        let next_def = def.and_then(|d| d.get(*part));
        if def.is_some() && next_def.is_none() && def.is_some_and(Value::is_object) {
            return Err(Error::Config(format!("unknown config key {:?}", parts[..=i].join("."))));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("config key {:?} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), parsed);
            return Ok(());
        }
        let slot = obj.entry((*part).to_owned()).or_insert_with(|| match next_def {
            Some(d) if d.is_object() => d.clone(),
            _ => Value::Object(Default::default()),
        });
        cur = slot;
        def = next_def;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_seed_from_defaults() {
        let cfg = RunConfig::load(None, &["model.views=4".into(), "model.latent_dim=8".into(), "model.eta.end=0.3".into()])
            .unwrap();
        assert_eq!(cfg.model.views, 4);
        assert_eq!(cfg.model.eta.end, 0.3);
        assert_eq!(cfg.model.eta.ramp_epochs, ModelConfig::default().eta.ramp_epochs);
        let cfg = RunConfig::load(None, &["dataset.name=toy".into(), "precision=\"f32\"".into()]).unwrap();
        assert_eq!(cfg.dataset.name, "toy");
        assert_eq!(cfg.precision, Precision::F32);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(RunConfig::load(None, &["model.vews=4".into()]).unwrap_err().is_config());
        assert!(RunConfig::load(None, &["nonsense".into()]).unwrap_err().is_config());
        let mut v = serde_json::json!({"model": {"bogus": 1}});
        let defaults = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut v, &defaults, "model.views=2").unwrap();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_data_dir() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.data_path(Path::new("/d")), PathBuf::from("/d/ml-100k/u.data"));
        let mut abs = cfg.clone();
        abs.dataset.path = PathBuf::from("/x/y.csv");
        assert_eq!(abs.data_path(Path::new("/d")), PathBuf::from("/x/y.csv"));
    }
}
