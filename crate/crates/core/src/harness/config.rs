use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::text::CorpusSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Single,
    LeaveOneOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the domain files and `manifest.json`.
    pub dir: PathBuf,
    /// Explicit domain files; when empty the manifest in `dir` is used.
    pub files: Vec<PathBuf>,
    /// Required with explicit `files`; otherwise taken from the manifest.
    pub num_classes: Option<usize>,
    pub corpus_seed: u64,
    pub overwrite: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            files: Vec::new(),
            num_classes: None,
            corpus_seed: 0,
            overwrite: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub mode: Mode,
    /// Domain held out of training and evaluated each epoch (single mode).
    pub holdout: Option<usize>,
    /// Epochs between held-out evaluations.
    pub eval_every: usize,
    /// Epochs between numbered checkpoints; 0 keeps only `last` and `final`.
    pub checkpoint_every: usize,
    /// Stop (and checkpoint) after this many iterations, as if interrupted.
    pub stop_after: Option<u64>,
    pub parallel: bool,
    /// Leave-one-out repeats per fold.
    pub repeats: usize,
    pub compare_erm: bool,
    pub compare_meta_only: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: PathBuf::from("runs/default"),
            mode: Mode::Single,
            holdout: None,
            eval_every: 1,
            checkpoint_every: 1,
            stop_after: None,
            parallel: true,
            repeats: 1,
            compare_erm: true,
            compare_meta_only: false,
        }
    }
}

/// Everything a command needs: corpus spec, data location, training
/// hyperparameters and run bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub run: RunSection,
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a parsed config table. Values are read as
/// TOML literals, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{spec}`: `{k}` is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        if self.run.eval_every == 0 || self.run.repeats == 0 {
            return Err(Error::Config("eval_every and repeats must be positive".into()));
        }
        Ok(())
    }

    /// The fully resolved config as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence() {
        let text = "[train]\nbatch_size = 4\n[run]\nout_dir = \"a\"\n";
        let cfg = RunConfig::from_toml_str(
            text,
            &["train.batch_size=16".into(), "run.out_dir=b/c".into(), "train.use_jury=false".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.run.out_dir, PathBuf::from("b/c"));
        assert!(!cfg.train.use_jury);
        assert_eq!(cfg.train.epochs, 15);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_toml_str("", &["train.seed=9".into(), "run.holdout=2".into()]).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        for (text, o) in [
            ("", "train.nope=1"),
            ("", "nodots"),
            ("", "train.temperature=0"),
            ("[train\n", "train.seed=1"),
        ] {
            let err = RunConfig::from_toml_str(text, &[o.to_string()]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text} {o}: {err}");
        }
    }
}
