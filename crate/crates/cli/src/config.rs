use std::path::{Path, PathBuf};

use gigaseg::model::{ArchConstraints, ArchSpec};
use gigaseg::pipeline::{DatasetSpec, LabelRecipe, SynthParams};
use gigaseg::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory searched for `gigaseg.toml`
/// when `--config` is not given.
pub const HOME_ENV: &str = "GIGASEG_HOME";
pub const CONFIG_FILE: &str = "gigaseg.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset root holding `train/`, `val/` and `test/`.
    pub data: PathBuf,
    /// Architecture text file; the pinned network when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: PathBuf::from("data"),
            arch: None,
        }
    }
}

/// Everything a subcommand can be configured with. Sections map onto the
/// library's own config types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    pub deterministic: bool,
    /// Base seed of the synthetic corpus.
    pub data_seed: u64,
    pub paths: Paths,
    pub train: TrainConfig,
    pub recipe: LabelRecipe,
    pub dataset: DatasetSpec,
    pub synth: SynthParams,
    pub arch: ArchConstraints,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 0,
            deterministic: true,
            data_seed: 0,
            paths: Paths::default(),
            train: TrainConfig::default(),
            recipe: LabelRecipe::default(),
            dataset: DatasetSpec::default(),
            synth: SynthParams::default(),
            arch: ArchConstraints::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
    }

    /// Reads `explicit`, else `$GIGASEG_HOME/gigaseg.toml` if present, else
    /// the defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => match std::env::var_os(HOME_ENV) {
                Some(home) if Path::new(&home).join(CONFIG_FILE).exists() => Path::new(&home).join(CONFIG_FILE),
                _ => return Ok(RunConfig::default()),
            },
        };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text, &path)
    }

    pub fn arch_spec(&self) -> Result<ArchSpec, CliError> {
        match &self.paths.arch {
            None => Ok(ArchSpec::pinned()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                ArchSpec::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Checks every section against its owner's invariants.
    pub fn validate(&self) -> Result<(), CliError> {
        if !self.deterministic {
            return Err(CliError::Config(
                "invalid value for `deterministic`: only deterministic kernels are implemented".into(),
            ));
        }
        self.train.validate()?;
        self.recipe.validate()?;
        self.synth.validate()?;
        self.arch.validate()?;
        let arch = self.arch_spec()?;
        let multiple = arch.downsampling().max(self.recipe.downsample_factor);
        self.dataset.validate(multiple)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml(), Path::new("x")).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::parse("[train]\nmax_steps = 3\nmax_stpes = 4\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("max_stpes") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn field_invariants_are_named() {
        let cfg = RunConfig::parse("[recipe]\nmedian_kernel = 4\n", Path::new("c.toml")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("median_kernel"));
        let cfg = RunConfig::parse("[dataset]\ncrop_height = 520\n", Path::new("c.toml")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("crop_height"));
    }
}
