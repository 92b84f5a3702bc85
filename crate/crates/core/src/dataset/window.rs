use serde::{Deserialize, Serialize};

use super::file::{FeatureStream, Manifest, SegmentRecord};
use crate::curriculum::{ACTION_FRAMES, FUTURE_FRAMES, GAP_FRAMES};
use crate::error::{DcrError, Result};
use crate::reasoners::FeatureSequence;

/// Frame-rate and timing of the reverse-chronological window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub fps: u32,
    /// Anticipation time in seconds.
    pub tau_a: f64,
    /// Observation time in seconds.
    pub tau_o: f64,
}

impl DatasetLayout {
    /// 2.5 s of observation, `K = 18`.
    pub fn desk() -> Self {
        DatasetLayout {
            fps: 4,
            tau_a: 1.0,
            tau_o: 2.5,
        }
    }

    /// 10 s of observation, `K = 48`.
    pub fn paper_shape() -> Self {
        DatasetLayout {
            fps: 4,
            tau_a: 1.0,
            tau_o: 10.0,
        }
    }

    pub fn observed(&self) -> usize {
        (self.fps as f64 * self.tau_o).round() as usize
    }

    /// Window length `K = fps * tau_o + 8`.
    pub fn k(&self) -> usize {
        self.observed() + FUTURE_FRAMES
    }

    /// Frames needed before a segment's first frame.
    pub fn history(&self) -> usize {
        self.k() - ACTION_FRAMES
    }

    pub fn validate(&self) -> Result<()> {
        let gap = self.tau_a * self.fps as f64;
        if (gap - GAP_FRAMES as f64).abs() > 1e-9 {
            return Err(DcrError::Config(format!(
                "tau_a * fps must equal {GAP_FRAMES} (got {gap})"
            )));
        }
        if (self.tau_o * self.fps as f64).fract().abs() > 1e-9 || self.k() < 12 {
            return Err(DcrError::Config(format!(
                "observation of {} s at {} fps must be a whole number of frames giving K >= 12",
                self.tau_o, self.fps
            )));
        }
        Ok(())
    }
}

/// Window for one segment: row `r` holds chronological frame
/// `start + 3 - r`, so index 4 is the segment's first frame, indices 5..8
/// the anticipation gap and 9..K the observation.
///
/// Returns `None` when the stream lacks the `K - 4` frames of history the
/// gap and observation need.
pub fn assemble_window(
    stream: &FeatureStream,
    segment: &SegmentRecord,
    layout: &DatasetLayout,
) -> Result<Option<FeatureSequence>> {
    let k = layout.k();
    let start = segment.start_frame;
    if start < layout.history() {
        return Ok(None);
    }
    let last = start + ACTION_FRAMES - 1;
    if last >= stream.frame_count() {
        return Err(DcrError::Invalid(format!(
            "segment {} needs frame {last} but the stream has {}",
            segment.instance_id,
            stream.frame_count()
        )));
    }
    let dim = stream.dim();
    let mut frames = Vec::with_capacity(k * dim);
    for r in 0..k {
        frames.extend_from_slice(stream.frame(last - r));
    }
    let mut seq = FeatureSequence::new(
        segment.instance_id.clone(),
        frames,
        dim,
        segment.action,
        segment.verb,
        segment.noun,
    )?;
    seq.fps = layout.fps;
    Ok(Some(seq))
}

/// Windows for every segment in the manifest, skipping (with a warning)
/// those without enough history.
pub fn assemble_all(stream: &FeatureStream, manifest: &Manifest, layout: &DatasetLayout) -> Result<Vec<FeatureSequence>> {
    layout.validate()?;
    manifest.validate(stream)?;
    let mut out = Vec::with_capacity(manifest.segments.len());
    for seg in &manifest.segments {
        match assemble_window(stream, seg, layout)? {
            Some(seq) => out.push(seq),
            None => log::warn!(
                "skipping {}: starts at frame {}, needs {} frames of history",
                seg.instance_id,
                seg.start_frame,
                layout.history()
            ),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_stream(n: usize) -> FeatureStream {
        FeatureStream::new(1, 4, (0..n).map(|t| t as f32).collect()).unwrap()
    }

    fn seg(start: usize) -> SegmentRecord {
        SegmentRecord {
            instance_id: "s".into(),
            start_frame: start,
            action: 0,
            verb: None,
            noun: None,
        }
    }

    #[test]
    fn window_lengths() {
        assert_eq!(DatasetLayout::paper_shape().k(), 48);
        assert_eq!(DatasetLayout::desk().k(), 18);
        DatasetLayout::desk().validate().unwrap();
        let bad = DatasetLayout {
            tau_a: 2.0,
            ..DatasetLayout::desk()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn action_start_maps_to_index_four() {
        let layout = DatasetLayout::desk();
        let s = ramp_stream(100);
        let w = assemble_window(&s, &seg(40), &layout).unwrap().unwrap();
        assert_eq!(w.frame(3), &[40.0]);
        assert_eq!(w.frame(0), &[43.0]);
        assert_eq!(w.frame(4), &[39.0]);
        assert_eq!(w.frame(17), &[26.0]);
    }

    #[test]
    fn short_history_is_skipped() {
        let layout = DatasetLayout::desk();
        let s = ramp_stream(100);
        assert!(assemble_window(&s, &seg(13), &layout).unwrap().is_none());
        assert!(assemble_window(&s, &seg(14), &layout).unwrap().is_some());
    }
}
