//! Run configuration file. Every value is optional; command-line flags win
//! over the file, and the file wins over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub ssm_state: Option<usize>,
    pub footwork_blocks: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub diffusion_steps: Option<usize>,
    pub schedule: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub dancers: Option<usize>,
    pub frames: Option<usize>,
    pub count: Option<usize>,
    pub beat_period: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub frames: Option<usize>,
    pub window: Option<usize>,
    pub hop: Option<usize>,
    pub beat_period: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub radius: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    /// Directory for outputs whose path is not given on the command line.
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| AppError::Config { path: path.to_path_buf(), msg: e.message().to_string() })
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| AppError::Input { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Output path: the flag if given, otherwise `name` inside the configured
/// output directory, falling back to the environment's default directory.
pub fn output_path(flag: Option<PathBuf>, cfg: &FileConfig, env_dir: Option<&Path>, name: &str) -> AppResult<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    cfg.out_dir
        .as_deref()
        .or(env_dir)
        .map(|d| d.join(name))
        .ok_or_else(|| AppError::Usage("no output path: pass --out, set out_dir in the config or CHOREO_OUT_DIR".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let cfg = FileConfig::parse("seed = 3\n[train]\nlr = 0.001\n[model]\nhidden = 16\n", Path::new("x.toml")).unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.train.lr, Some(0.001));
        assert_eq!(cfg.model.hidden, Some(16));
        assert!(FileConfig::parse("[train]\nlearning_rate = 1.0\n", Path::new("x.toml")).is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None::<i32>, None, 3), 3);
        let cfg = FileConfig { out_dir: Some("cfg".into()), ..FileConfig::default() };
        let env = Path::new("env");
        assert_eq!(output_path(None, &cfg, Some(env), "a").unwrap(), Path::new("cfg/a"));
        assert_eq!(output_path(None, &FileConfig::default(), Some(env), "a").unwrap(), Path::new("env/a"));
        assert_eq!(output_path(Some("f".into()), &cfg, Some(env), "a").unwrap(), Path::new("f"));
        assert!(output_path(None, &FileConfig::default(), None, "a").is_err());
    }
}
