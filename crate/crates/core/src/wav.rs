//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads mono or multi-channel PCM files (16-bit integer or 32-bit float,
//! little-endian) and downmixes to mono by channel averaging. Integer
//! samples are scaled to [-1, 1] by dividing by 32768. Anything else
//! (compressed codecs, 24-bit, extensible headers) is rejected.

use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audio::{AudioClip, AudioError};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("wav file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed wav header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("unsupported wav encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct FmtChunk {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Load a RIFF/WAVE file as a mono [`AudioClip`].
///
/// Multi-channel input is downmixed by averaging channels per frame.
pub fn load_wav(path: &Path) -> Result<AudioClip, WavError> {
    let mut file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            WavError::FileNotFound(path.to_path_buf())
        } else {
            WavError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| WavError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_wav(&bytes, path)
}

fn malformed(path: &Path, reason: &str) -> WavError {
    WavError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn unsupported(path: &Path, reason: String) -> WavError {
    WavError::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    }
}

fn decode_wav(bytes: &[u8], path: &Path) -> Result<AudioClip, WavError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4) != Some(b"RIFF") {
        return Err(malformed(path, "missing RIFF magic"));
    }
    let _riff_size = cur.u32().ok_or_else(|| malformed(path, "truncated RIFF size"))?;
    if cur.take(4) != Some(b"WAVE") {
        return Err(malformed(path, "missing WAVE magic"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while cur.pos < bytes.len() {
        let id = match cur.take(4) {
            Some(id) => id,
            None => break,
        };
        let size = cur.u32().ok_or_else(|| malformed(path, "truncated chunk size"))? as usize;
        let body = cur
            .take(size)
            .ok_or_else(|| malformed(path, "chunk body extends past end of file"))?;
        // chunks are word-aligned
        if size % 2 == 1 {
            let _ = cur.take(1);
        }
        match id {
            b"fmt " => {
                let mut f = Cursor { bytes: body, pos: 0 };
                let format_tag = f.u16().ok_or_else(|| malformed(path, "short fmt chunk"))?;
                let channels = f.u16().ok_or_else(|| malformed(path, "short fmt chunk"))?;
                let sample_rate = f.u32().ok_or_else(|| malformed(path, "short fmt chunk"))?;
                let _byte_rate = f.u32().ok_or_else(|| malformed(path, "short fmt chunk"))?;
                let _block_align = f.u16().ok_or_else(|| malformed(path, "short fmt chunk"))?;
                let bits_per_sample = f.u16().ok_or_else(|| malformed(path, "short fmt chunk"))?;
                fmt = Some(FmtChunk {
                    format_tag,
                    channels,
                    sample_rate,
                    bits_per_sample,
                });
            }
            b"data" => data = Some(body),
            _ => {} // LIST, fact, cue ... skipped
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let fmt = fmt.ok_or_else(|| malformed(path, "no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed(path, "no data chunk"))?;
    if fmt.channels == 0 {
        return Err(malformed(path, "zero channels"));
    }
    if fmt.sample_rate == 0 {
        return Err(malformed(path, "zero sample rate"));
    }

    let ch = fmt.channels as usize;
    let samples: Vec<f32> = match (fmt.format_tag, fmt.bits_per_sample) {
        (1, 16) => {
            if data.len() % (2 * ch) != 0 {
                return Err(malformed(path, "data size not a multiple of frame size"));
            }
            data.chunks_exact(2 * ch)
                .map(|frame| {
                    let mut acc = 0.0f32;
                    for c in 0..ch {
                        let v = i16::from_le_bytes([frame[2 * c], frame[2 * c + 1]]);
                        acc += v as f32 / 32768.0;
                    }
                    acc / ch as f32
                })
                .collect()
        }
        (3, 32) => {
            if data.len() % (4 * ch) != 0 {
                return Err(malformed(path, "data size not a multiple of frame size"));
            }
            data.chunks_exact(4 * ch)
                .map(|frame| {
                    let mut acc = 0.0f32;
                    for c in 0..ch {
                        let v = f32::from_le_bytes([
                            frame[4 * c],
                            frame[4 * c + 1],
                            frame[4 * c + 2],
                            frame[4 * c + 3],
                        ]);
                        acc += v.clamp(-1.0, 1.0);
                    }
                    acc / ch as f32
                })
                .collect()
        }
        (tag, bits) => {
            return Err(unsupported(
                path,
                format!("format tag {tag} with {bits} bits per sample"),
            ))
        }
    };

    Ok(AudioClip::new(samples, fmt.sample_rate)?)
}

/// Write a mono 16-bit PCM file. Samples are clamped to [-1, 1] and scaled
/// by 32768 (clamped to i16 range), the inverse of [`load_wav`] scaling.
pub fn write_wav_mono16(path: &Path, clip: &AudioClip) -> Result<(), WavError> {
    let n = clip.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &out).map_err(|e| WavError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
