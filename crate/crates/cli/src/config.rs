//! The run configuration file. Flags override its fields; the merged result is
//! mirrored into every output directory as `run_config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use kore_core::augment::Task;
use kore_core::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub checkpoint: Option<PathBuf>,
    pub cov_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentBlock {
    /// Tasks to build; all four by default.
    pub tasks: Vec<Task>,
    pub stub_dir: Option<PathBuf>,
    /// Fall back to the deterministic stub when a canned response is missing.
    pub stub_fallback: bool,
    pub llm_url: Option<String>,
    pub llm_model: String,
    /// Quadruplets per item produced by the deterministic stub.
    pub quadruplets: usize,
}

impl Default for AugmentBlock {
    fn default() -> Self {
        AugmentBlock {
            tasks: Task::ALL.to_vec(),
            stub_dir: None,
            stub_fallback: false,
            llm_url: None,
            llm_model: "gpt-4o".into(),
            quadruplets: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentBlock,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            paths: Paths::default(),
            rank: None,
            eps: None,
            train: TrainConfig { seed, ..TrainConfig::default() },
            augment: AugmentBlock::default(),
        }
    }

    /// Checks that every configured input path exists.
    pub fn validate(&self) -> anyhow::Result<()> {
        for (name, p) in [
            ("checkpoint", &self.paths.checkpoint),
            ("cov_dir", &self.paths.cov_dir),
            ("data", &self.paths.data),
            ("augment.stub_dir", &self.augment.stub_dir),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name} path {} does not exist", p.display());
                }
            }
        }
        if let Some(r) = self.rank {
            if r == 0 {
                bail!("rank must be >= 1");
            }
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn write_into(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_CONFIG_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads either a full run config or a bare training block. A bare block
/// becomes a run config seeded from its own `seed`.
pub fn load_any(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let run_err = match serde_json::from_str::<RunConfig>(&text) {
        Ok(run) => return Ok(run),
        Err(e) => e,
    };
    match serde_json::from_str::<TrainConfig>(&text) {
        Ok(train) => Ok(RunConfig { seed: train.seed, train, ..RunConfig::with_seed(0) }),
        Err(_) => Err(run_err).with_context(|| format!("parsing {}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required_in_files() {
        assert!(serde_json::from_str::<RunConfig>("{}").is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "rank": 2}"#).unwrap();
        assert_eq!(c.rank, Some(2));
        assert_eq!(c.augment.tasks.len(), 4);
    }

    #[test]
    fn missing_paths_fail_validation() {
        let mut c = RunConfig::with_seed(0);
        c.paths.data = Some(PathBuf::from("/definitely/not/here"));
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_from_either_shape() {
        let dir = tempfile::tempdir().unwrap();
        let bare = dir.path().join("t.json");
        fs::write(&bare, r#"{"base_lr": 0.1, "epochs": 3, "seed": 9}"#).unwrap();
        let c = load_any(&bare).unwrap();
        assert_eq!((c.train.epochs, c.seed), (3, 9));
        let full = dir.path().join("r.json");
        fs::write(&full, r#"{"seed": 1, "train": {"epochs": 4}}"#).unwrap();
        assert_eq!(load_any(&full).unwrap().train.epochs, 4);
        let bad = dir.path().join("b.json");
        fs::write(&bad, r#"{"rank": 2}"#).unwrap();
        assert!(load_any(&bad).unwrap_err().to_string().contains("b.json"));
    }
}
