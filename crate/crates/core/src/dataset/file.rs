//! Binary feature files and their JSON manifests.
//!
//! Layout (all little-endian): `b"DCRF"`, then `version`, `dim`, `count`
//! and `fps` as `u32`, then `count * dim` `f32` values in chronological
//! order. The manifest lives next to the file as `<file>.manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grammar::ActionPair;
use crate::error::{DcrError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DCRF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Chronological frame features, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    dim: usize,
    fps: u32,
    frames: Vec<f32>,
}

impl FeatureStream {
    pub fn new(dim: usize, fps: u32, frames: Vec<f32>) -> Result<Self> {
        if dim == 0 || frames.len() % dim != 0 {
            return Err(DcrError::Invalid(format!(
                "{} values do not form frames of width {dim}",
                frames.len()
            )));
        }
        Ok(FeatureStream { dim, fps, frames })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub instance_id: String,
    /// Chronological index of the segment's first frame.
    pub start_frame: usize,
    pub action: usize,
    pub verb: Option<usize>,
    pub noun: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    /// Action class `i` is the pair `actions[i]`.
    pub actions: Vec<ActionPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dim: usize,
    pub fps: u32,
    pub frame_count: usize,
    pub segments: Vec<SegmentRecord>,
    pub vocabulary: Vocabulary,
}

impl Manifest {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn n_actions(&self) -> usize {
        self.vocabulary.actions.len()
    }

    pub fn has_verb_noun(&self) -> bool {
        !self.vocabulary.verbs.is_empty() && !self.vocabulary.nouns.is_empty()
    }

    /// Checks labels and that every segment's action frames lie in the stream.
    pub fn validate(&self, stream: &FeatureStream) -> Result<()> {
        if self.dim != stream.dim() || self.frame_count != stream.frame_count() {
            return Err(DcrError::Invalid(format!(
                "manifest describes {}x{} frames, stream holds {}x{}",
                self.frame_count,
                self.dim,
                stream.frame_count(),
                stream.dim()
            )));
        }
        for s in &self.segments {
            if s.start_frame + crate::curriculum::ACTION_FRAMES > self.frame_count {
                return Err(DcrError::Invalid(format!("segment {} runs past the stream end", s.instance_id)));
            }
            if s.action >= self.n_actions() {
                return Err(DcrError::Invalid(format!("segment {} has unknown action {}", s.instance_id, s.action)));
            }
            if let (Some(v), Some(n)) = (s.verb, s.noun) {
                if v >= self.vocabulary.verbs.len() || n >= self.vocabulary.nouns.len() {
                    return Err(DcrError::Invalid(format!("segment {} has out-of-range verb/noun", s.instance_id)));
                }
            }
        }
        Ok(())
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn encode_stream(stream: &FeatureStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + stream.frames.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, stream.dim as u32, stream.frame_count() as u32, stream.fps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &stream.frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_stream(bytes: &[u8], path: &Path) -> Result<FeatureStream> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(DcrError::BadMagic {
            path: path.into(),
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DcrError::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(DcrError::UnsupportedVersion { path: path.into(), version });
    }
    let dim = u32_at(bytes, 8) as usize;
    let count = u32_at(bytes, 12) as usize;
    let fps = u32_at(bytes, 16);
    let expected = HEADER_LEN + dim * count * 4;
    if bytes.len() < expected {
        return Err(DcrError::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DcrError::Invalid(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - expected
        )));
    }
    let frames = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if dim == 0 {
        return Err(DcrError::Invalid(format!("{}: zero feature dimension", path.display())));
    }
    FeatureStream::new(dim, fps, frames)
}

pub fn write_feature_file(stream: &FeatureStream, manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate(stream)?;
    fs::write(path, encode_stream(stream)).map_err(|e| DcrError::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| DcrError::json(&mpath, e))?;
    fs::write(&mpath, json).map_err(|e| DcrError::io(&mpath, e))
}

pub fn read_feature_file(path: &Path) -> Result<(FeatureStream, Manifest)> {
    let bytes = fs::read(path).map_err(|e| DcrError::io(path, e))?;
    let stream = decode_stream(&bytes, path)?;
    let mpath = manifest_path(path);
    let text = fs::read(&mpath).map_err(|e| DcrError::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| DcrError::json(&mpath, e))?;
    if manifest.schema_version != Manifest::SCHEMA_VERSION {
        return Err(DcrError::UnsupportedVersion {
            path: mpath,
            version: manifest.schema_version,
        });
    }
    manifest.validate(&stream)?;
    Ok((stream, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let s = FeatureStream::new(2, 4, vec![1.0, -2.0]).unwrap();
        let b = encode_stream(&s);
        assert_eq!(&b[..4], b"DCRF");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &4u32.to_le_bytes());
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let p = Path::new("x");
        let s = FeatureStream::new(3, 4, vec![0.5; 6]).unwrap();
        let mut b = encode_stream(&s);
        assert!(matches!(decode_stream(&b[..b.len() - 1], p), Err(DcrError::Truncated { .. })));
        b[4] = 9;
        assert!(matches!(decode_stream(&b, p), Err(DcrError::UnsupportedVersion { version: 9, .. })));
        b[0] = b'X';
        assert!(matches!(decode_stream(&b, p), Err(DcrError::BadMagic { .. })));
    }

    #[test]
    fn larger_header_count_is_truncation() {
        let s = FeatureStream::new(2, 4, vec![0.0; 4]).unwrap();
        let mut b = encode_stream(&s);
        b[12..16].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            decode_stream(&b, Path::new("x")),
            Err(DcrError::Truncated { expected: 60, found: 36, .. })
        ));
    }

    #[test]
    fn manifest_sits_beside_file() {
        assert_eq!(manifest_path(Path::new("/a/train.dcrf")), Path::new("/a/train.dcrf.manifest.json"));
    }
}
