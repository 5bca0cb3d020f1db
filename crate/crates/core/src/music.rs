//! 35-channel per-frame music conditioning.

use alloc::vec::Vec;

use crate::error::{shape_err, CoreError, Result};

pub const MUSIC_DIM: usize = 35;
pub const ENVELOPE_CHANNEL: usize = 0;
/// Channels 1..=20.
pub const SPECTRAL_CHANNELS: core::ops::Range<usize> = 1..21;
/// Channels 21..=32.
pub const CHROMA_CHANNELS: core::ops::Range<usize> = 21..33;
pub const BEAT_CHANNEL: usize = 33;
pub const PEAK_CHANNEL: usize = 34;

/// `frames x 35` feature track; beat and peak channels are 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicTrack {
    frames: usize,
    data: Vec<f64>,
}

impl MusicTrack {
    pub fn from_vec(frames: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(shape_err!("music track needs at least one frame"));
        }
        if data.len() != frames * MUSIC_DIM {
            return Err(shape_err!("{} frames need {} values, got {}", frames, frames * MUSIC_DIM, data.len()));
        }
        let track = Self { frames, data };
        for l in 0..frames {
            for ch in [BEAT_CHANNEL, PEAK_CHANNEL] {
                let v = track.frame(l)[ch];
                if v != 0.0 && v != 1.0 {
                    return Err(CoreError::InvalidConfig(alloc::format!(
                        "channel {} at frame {} must be 0 or 1, got {}",
                        ch,
                        l,
                        v
                    )));
                }
            }
        }
        if track.data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidConfig("non-finite music feature".into()));
        }
        Ok(track)
    }

    pub fn zeros(frames: usize) -> Result<Self> {
        Self::from_vec(frames, alloc::vec![0.0; frames * MUSIC_DIM])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        &self.data[l * MUSIC_DIM..(l + 1) * MUSIC_DIM]
    }

    pub fn beat_frames(&self) -> Vec<usize> {
        (0..self.frames).filter(|&l| self.frame(l)[BEAT_CHANNEL] == 1.0).collect()
    }

    pub fn peak_frames(&self) -> Vec<usize> {
        (0..self.frames).filter(|&l| self.frame(l)[PEAK_CHANNEL] == 1.0).collect()
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<MusicTrack> {
        if start >= end || end > self.frames {
            return Err(CoreError::InvalidLength(alloc::format!(
                "music range [{}, {}) outside 0..{}",
                start,
                end,
                self.frames
            )));
        }
        Ok(Self { frames: end - start, data: self.data[start * MUSIC_DIM..end * MUSIC_DIM].to_vec() })
    }
}
