//! Parameter checkpoints: model sizes, the noise schedule and every named
//! tensor with its shape, then the tensors' values as little-endian `f64`.

use std::fs;
use std::path::Path;

use choreo_core::diffusion::ScheduleKind;
use choreo_core::model::{Model, ModelConfig, ModelParams};
use choreo_core::params::ParamTree;
use choreo_core::Tensor;

use crate::error::{AppError, AppResult, FormatError};
use crate::format::{read_blocks, split_header, END_HEADER};

pub const CHECKPOINT_MAGIC: &str = "CHOREO-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with the schedule it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
}

fn config_line(c: &ModelConfig) -> String {
    format!(
        "dancers={} hidden={} layers={} heads={} ssm_state={} footwork_blocks={}",
        c.dancers, c.hidden, c.layers, c.heads, c.ssm_state, c.footwork_blocks
    )
}

fn parse_config(v: &str) -> Result<ModelConfig, FormatError> {
    let bad = |msg: String| FormatError::Header { line: 3, msg };
    let keys = ["dancers", "hidden", "layers", "heads", "ssm_state", "footwork_blocks"];
    let parts: Vec<&str> = v.split(' ').collect();
    if parts.len() != keys.len() {
        return Err(bad(format!("expected {} model fields", keys.len())));
    }
    let mut vals = [0usize; 6];
    for ((part, key), slot) in parts.iter().zip(keys).zip(vals.iter_mut()) {
        *slot = part
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(format!("expected `{key}=<n>`, found `{part}`")))?;
    }
    let [dancers, hidden, layers, heads, ssm_state, footwork_blocks] = vals;
    let cfg = ModelConfig { dancers, hidden, layers, heads, ssm_state, footwork_blocks };
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
    ck.model.params.for_each("", &mut |n, t| entries.push((n.to_string(), t.shape.clone())));
    let mut header = format!(
        "{CHECKPOINT_MAGIC}\nversion {CHECKPOINT_VERSION}\nmodel {}\nschedule {} {}\ntensors {}\n",
        config_line(&ck.model.config),
        ck.schedule.name(),
        ck.diffusion_steps,
        entries.len()
    );
    for (name, shape) in &entries {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor {name} {}\n", dims.join(" ")));
    }
    header.push_str(END_HEADER);
    header.push('\n');
    let mut out = header.into_bytes();
    ck.model.params.for_each("", &mut |_, t| {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let h = split_header(bytes, CHECKPOINT_MAGIC)?;
    h.version(CHECKPOINT_VERSION)?;
    let config = parse_config(h.field(1, "model")?)?;
    let sched = h.field(2, "schedule")?;
    let (kind, steps) = sched.split_once(' ').ok_or(FormatError::Header { line: 4, msg: format!("bad schedule `{sched}`") })?;
    let schedule: ScheduleKind = kind.parse()?;
    let diffusion_steps: usize =
        steps.parse().ok().filter(|s| *s > 0).ok_or(FormatError::Header { line: 4, msg: format!("bad step count `{steps}`") })?;
    let count: usize = h.parsed(3, "tensors")?;
    let mut params = ModelParams::zeros(&config);
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    params.for_each("", &mut |n, t| expected.push((n.to_string(), t.shape.clone())));
    if count != expected.len() {
        return Err(FormatError::Shape(format!("{count} tensors listed, model has {}", expected.len())));
    }
    for (i, (name, shape)) in expected.iter().enumerate() {
        let line = h.field(4 + i, "tensor")?;
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        if line != format!("{name} {}", dims.join(" ")) {
            return Err(FormatError::Shape(format!("expected tensor `{name} {}`, found `{line}`", dims.join(" "))));
        }
    }
    h.finish(4 + count)?;
    let sizes: Vec<usize> = expected.iter().map(|(_, s)| s.iter().product()).collect();
    let mut blocks = read_blocks(&bytes[h.payload..], h.payload, &sizes)?.into_iter();
    params.for_each_mut("", &mut |_, t: &mut Tensor| t.data = blocks.next().unwrap_or_default());
    Ok(Checkpoint { model: Model { config, params }, schedule, diffusion_steps })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> AppResult<()> {
    fs::write(path, encode_checkpoint(ck)).map_err(|source| AppError::Output { path: path.to_path_buf(), source })
}

pub fn read_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| AppError::Input { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes).map_err(|source| AppError::Format { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { dancers: 3, hidden: 8, layers: 1, heads: 2, ssm_state: 2, footwork_blocks: 1 };
        Checkpoint { model: Model::init(&cfg, 5).unwrap(), schedule: ScheduleKind::Linear, diffusion_steps: 20 }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_checkpoint(&sample());
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { missing: 1 })));
        let text = String::from_utf8_lossy(&bytes);
        let pos = text.find("hidden=8").unwrap();
        let mut edited = bytes.clone();
        edited[pos + 7] = b'6';
        assert!(decode_checkpoint(&edited).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(decode_checkpoint(&nan), Err(FormatError::NonFinite(_))));
    }
}
