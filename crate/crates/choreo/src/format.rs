//! Motion container: a text header followed by little-endian `f64` blocks
//! for the skeleton offsets, the motion and the music. See `docs/format.md`.

use std::fs;
use std::path::Path;

use choreo_core::motion::{MOTION_DIM, NUM_JOINTS};
use choreo_core::music::MUSIC_DIM;
use choreo_core::{GroupMotion, MusicTrack, SkeletonSpec};

use crate::error::{AppError, AppResult, FormatError};

pub const MOTION_MAGIC: &str = "CHOREO-MOTION";
pub const MOTION_VERSION: u32 = 1;
pub const MOTION_LAYOUT: &str = "151 contacts=0..4 root=4..7 rot6d=7..151";
pub const MUSIC_LAYOUT: &str = "35 envelope=0 spectral=1..21 chroma=21..33 beat=33 peak=34";
pub const END_HEADER: &str = "end_header";

/// Everything stored in one motion file.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFile {
    pub fps: f64,
    pub motion: GroupMotion,
    pub music: MusicTrack,
    pub skeleton: SkeletonSpec,
}

fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_motion(file: &MotionFile) -> Vec<u8> {
    let (c, l) = (file.motion.dancers(), file.motion.frames());
    let parents: Vec<String> = file.skeleton.parents().iter().map(|p| p.to_string()).collect();
    let header = format!(
        "{MOTION_MAGIC}\nversion {MOTION_VERSION}\nfps {:?}\ndancers {c}\nframes {l}\nmotion_channels {MOTION_LAYOUT}\n\
         music_channels {MUSIC_LAYOUT}\njoints {NUM_JOINTS}\nparents {}\n{END_HEADER}\n",
        file.fps,
        parents.join(" ")
    );
    let mut out = header.into_bytes();
    push_f64s(&mut out, file.skeleton.offsets().iter().flatten().copied());
    push_f64s(&mut out, file.motion.data().iter().copied());
    push_f64s(&mut out, file.music.data().iter().copied());
    out
}

/// Line-oriented view of the header with the byte offset of the payload.
pub(crate) struct Header<'a> {
    pub lines: Vec<&'a str>,
    pub payload: usize,
}

pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &'static str) -> Result<Header<'a>, FormatError> {
    let bad = || FormatError::BadMagic { expected: magic };
    if !bytes.starts_with(magic.as_bytes()) || bytes.get(magic.len()) != Some(&b'\n') {
        return Err(bad());
    }
    let marker = format!("\n{END_HEADER}\n");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or(FormatError::Header { line: 0, msg: format!("missing `{END_HEADER}`") })?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| FormatError::Header { line: 0, msg: "header is not UTF-8".into() })?;
    Ok(Header { lines: text.lines().skip(1).collect(), payload: end + marker.len() })
}

impl<'a> Header<'a> {
    /// Value of the `index`-th line, which must be `key value`.
    pub(crate) fn field(&self, index: usize, key: &str) -> Result<&'a str, FormatError> {
        let line = self.lines.get(index).ok_or(FormatError::Header { line: index + 2, msg: format!("missing `{key}`") })?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(FormatError::Header { line: index + 2, msg: format!("expected `{key} ...`, found `{line}`") }),
        }
    }

    pub(crate) fn parsed<T: std::str::FromStr>(&self, index: usize, key: &str) -> Result<T, FormatError> {
        let v = self.field(index, key)?;
        v.parse().map_err(|_| FormatError::Header { line: index + 2, msg: format!("bad value `{v}` for `{key}`") })
    }

    pub(crate) fn exact(&self, index: usize, key: &str, expected: &str) -> Result<(), FormatError> {
        let v = self.field(index, key)?;
        if v != expected {
            return Err(FormatError::Header { line: index + 2, msg: format!("`{key}` must be `{expected}`, found `{v}`") });
        }
        Ok(())
    }

    pub(crate) fn version(&self, supported: u32) -> Result<(), FormatError> {
        let v = self.field(0, "version")?;
        if v.parse::<u32>().ok() != Some(supported) {
            return Err(FormatError::Version(v.to_string()));
        }
        Ok(())
    }

    pub(crate) fn finish(&self, count: usize) -> Result<(), FormatError> {
        if self.lines.len() != count {
            return Err(FormatError::Header { line: count + 2, msg: "unexpected extra header line".into() });
        }
        Ok(())
    }
}

/// Read `counts` consecutive `f64` blocks that must fill `payload` exactly.
pub(crate) fn read_blocks(payload: &[u8], base: usize, counts: &[usize]) -> Result<Vec<Vec<f64>>, FormatError> {
    let need: usize = counts.iter().sum::<usize>() * 8;
    if payload.len() < need {
        return Err(FormatError::Truncated { missing: need - payload.len() });
    }
    if payload.len() > need {
        return Err(FormatError::TrailingBytes(payload.len() - need));
    }
    let mut chunks = payload.chunks_exact(8).enumerate();
    let mut blocks = Vec::with_capacity(counts.len());
    for &n in counts {
        let mut block = Vec::with_capacity(n);
        for (i, b) in chunks.by_ref().take(n) {
            let v = f64::from_le_bytes(b.try_into().expect("eight bytes"));
            if !v.is_finite() {
                return Err(FormatError::NonFinite(base + 8 * i));
            }
            block.push(v);
        }
        blocks.push(block);
    }
    Ok(blocks)
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionFile, FormatError> {
    let h = split_header(bytes, MOTION_MAGIC)?;
    h.version(MOTION_VERSION)?;
    let fps: f64 = h.parsed(1, "fps")?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(FormatError::Header { line: 3, msg: format!("fps must be positive, got {fps}") });
    }
    let c: usize = h.parsed(2, "dancers")?;
    let l: usize = h.parsed(3, "frames")?;
    if c == 0 || l == 0 {
        return Err(FormatError::Shape(format!("{c} dancers x {l} frames")));
    }
    h.exact(4, "motion_channels", MOTION_LAYOUT)?;
    h.exact(5, "music_channels", MUSIC_LAYOUT)?;
    h.exact(6, "joints", &NUM_JOINTS.to_string())?;
    let parents: Vec<i32> = h
        .field(7, "parents")?
        .split(' ')
        .map(|p| p.parse().map_err(|_| FormatError::Header { line: 9, msg: format!("bad parent `{p}`") }))
        .collect::<Result<_, _>>()?;
    let parents: [i32; NUM_JOINTS] =
        parents.try_into().map_err(|v: Vec<i32>| FormatError::Shape(format!("{} parents for {NUM_JOINTS} joints", v.len())))?;
    h.finish(8)?;
    let motion_len = c.checked_mul(l).and_then(|n| n.checked_mul(MOTION_DIM)).ok_or(FormatError::Shape("motion too large".into()))?;
    let blocks = read_blocks(&bytes[h.payload..], h.payload, &[NUM_JOINTS * 3, motion_len, l * MUSIC_DIM])?;
    let mut offsets = [[0.0; 3]; NUM_JOINTS];
    for (o, v) in offsets.iter_mut().zip(blocks[0].chunks_exact(3)) {
        o.copy_from_slice(v);
    }
    let mut blocks = blocks.into_iter().skip(1);
    Ok(MotionFile {
        fps,
        skeleton: SkeletonSpec::new(parents, offsets)?,
        motion: GroupMotion::from_vec(c, l, blocks.next().unwrap_or_default())?,
        music: MusicTrack::from_vec(l, blocks.next().unwrap_or_default())?,
    })
}

pub fn write_motion(path: &Path, file: &MotionFile) -> AppResult<()> {
    if file.music.frames() != file.motion.frames() {
        return Err(AppError::Usage(format!(
            "{} music frames for {} motion frames",
            file.music.frames(),
            file.motion.frames()
        )));
    }
    fs::write(path, encode_motion(file)).map_err(|source| AppError::Output { path: path.to_path_buf(), source })
}

pub fn read_motion(path: &Path) -> AppResult<MotionFile> {
    let bytes = fs::read(path).map_err(|source| AppError::Input { path: path.to_path_buf(), source })?;
    decode_motion(&bytes).map_err(|source| AppError::Format { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use choreo_core::synth::{synth_group_sequence, ChoreographyRecipe, Formation};

    fn sample() -> MotionFile {
        let (motion, music) = synth_group_sequence(&ChoreographyRecipe::new(2, 30, Formation::Swap, 1)).unwrap();
        MotionFile { fps: 30.0, motion, music, skeleton: SkeletonSpec::default() }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let bytes = encode_motion(&f);
        let back = decode_motion(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_motion(&back), bytes);
    }

    #[test]
    fn payload_length_is_checked() {
        let bytes = encode_motion(&sample());
        assert!(matches!(decode_motion(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { missing: 3 })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_motion(&long), Err(FormatError::TrailingBytes(1))));
    }

    #[test]
    fn header_problems() {
        let text = String::from_utf8_lossy(&encode_motion(&sample())).into_owned();
        let bytes = encode_motion(&sample());
        let swap = |from: &str, to: &str| {
            let pos = text.find(from).unwrap();
            let mut b = bytes[..pos].to_vec();
            b.extend_from_slice(to.as_bytes());
            b.extend_from_slice(&bytes[pos + from.len()..]);
            b
        };
        assert!(matches!(decode_motion(&swap("version 1", "version 2")), Err(FormatError::Version(_))));
        assert!(matches!(decode_motion(&swap("dancers 2", "dancers 0")), Err(FormatError::Shape(_))));
        assert!(matches!(decode_motion(&swap("CHOREO-MOTION", "CHOREO-MOTIOM")), Err(FormatError::BadMagic { .. })));
        assert!(matches!(decode_motion(&swap("beat=33", "beat=32")), Err(FormatError::Header { .. })));
    }

    #[test]
    fn nan_is_rejected() {
        let mut bytes = encode_motion(&sample());
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_motion(&bytes), Err(FormatError::NonFinite(_))));
    }
}
