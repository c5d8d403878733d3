//! Core data model and time/frame arithmetic.
//!
//! Everything here is plain data: immutable once constructed and freely
//! shareable between threads. Keyframes are metadata plus an image reference;
//! no pixel data is ever held.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance (relative) within which a product `t × fps` is treated as
/// landing exactly on an integer frame. Without it, `f / fps × fps` can come
/// out one ulp below `f` and floor to `f - 1`.
const FRAME_SNAP_REL: f64 = 1e-12;

/// Tolerance on `‖v‖₂ − 1` for every embedding accepted by the system.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub fps: f64,
    pub duration_s: f64,
    pub source_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::invalid("video_id must be non-empty"));
        }
        check_fps(self.fps)?;
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(Error::invalid(format!(
                "duration_s must be a non-negative number, got {}",
                self.duration_s
            )));
        }
        Ok(())
    }

    /// Largest frame index that lies inside the video, `floor(duration × fps)`.
    pub fn last_frame(&self) -> u64 {
        frame_index_from_time(self.duration_s, self.fps).unwrap_or(0)
    }
}

/// A detected shot. Both bounds are inclusive frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub start_frame: u64,
    pub end_frame: u64,
}

impl Shot {
    pub fn new(start_frame: u64, end_frame: u64) -> Result<Self> {
        if start_frame > end_frame {
            return Err(Error::invalid(format!(
                "shot start {start_frame} exceeds end {end_frame}"
            )));
        }
        Ok(Shot {
            start_frame,
            end_frame,
        })
    }

    pub fn contains(&self, frame: u64) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub keyframe_id: String,
    pub video_id: String,
    pub shot_ordinal: u32,
    pub frame_index: u64,
    pub position: f64,
    pub timestamp_s: f64,
    /// Reference handed to the image embedder (a frame path or locator).
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub ordinal: u32,
    pub start_s: f64,
    pub end_s: f64,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptInterval {
    pub interval_id: String,
    pub video_id: String,
    pub segment_ordinals: Vec<u32>,
    pub start_s: f64,
    pub end_s: f64,
    pub raw_text: String,
    pub cleaned_text: String,
}

impl TranscriptInterval {
    /// Closed-span containment, `start_s ≤ t ≤ end_s`.
    pub fn covers(&self, t_s: f64) -> bool {
        self.start_s <= t_s && t_s <= self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub summary_text: String,
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// L2-normalizes `values`. Fails on empty, non-finite, or zero vectors.
    pub fn normalize(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite values"));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        let values: Vec<f32> = values
            .iter()
            .map(|&v| (f64::from(v) / norm) as f32)
            .collect();
        Self::from_unit(values)
    }

    /// Accepts an already-normalized vector as is, bit for bit.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one dimension"));
        }
        let norm = l2_norm(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "embedding norm {norm} is not within {NORM_TOLERANCE} of 1"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Cosine similarity, which for unit vectors is the dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        dot(&self.values, &other.values)
    }
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn l2_norm(values: &[f32]) -> f64 {
    dot(values, values).sqrt()
}

fn check_fps(fps: f64) -> Result<()> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("fps must be positive, got {fps}")))
    }
}

/// Frame shown at playback time `t_s`: `floor(t_s × fps)`.
pub fn frame_index_from_time(t_s: f64, fps: f64) -> Result<u64> {
    check_fps(fps)?;
    if !(t_s.is_finite() && t_s >= 0.0) {
        return Err(Error::invalid(format!(
            "time must be a non-negative number, got {t_s}"
        )));
    }
    let product = t_s * fps;
    let nearest = product.round();
    let frame = if (product - nearest).abs() <= FRAME_SNAP_REL * nearest.max(1.0) {
        nearest
    } else {
        product.floor()
    };
    Ok(frame as u64)
}

/// Start time of `frame`: `frame / fps`.
pub fn time_from_frame_index(frame: u64, fps: f64) -> Result<f64> {
    check_fps(fps)?;
    Ok(frame as f64 / fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_from_time_examples() {
        assert_eq!(frame_index_from_time(0.0, 25.0).unwrap(), 0);
        assert_eq!(frame_index_from_time(2.5, 25.0).unwrap(), 62);
        assert_eq!(frame_index_from_time(1.0, 29.97).unwrap(), 29);
    }

    #[test]
    fn time_from_frame_examples() {
        assert_eq!(time_from_frame_index(0, 30.0).unwrap(), 0.0);
        assert!((time_from_frame_index(62, 25.0).unwrap() - 2.48).abs() < 1e-12);
        let t = time_from_frame_index(7919, 23.976).unwrap();
        assert_eq!(frame_index_from_time(t, 23.976).unwrap(), 7919);
    }

    #[test]
    fn bad_fps_and_time_rejected() {
        assert!(matches!(
            frame_index_from_time(1.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(frame_index_from_time(1.0, -3.0).is_err());
        assert!(frame_index_from_time(-0.5, 25.0).is_err());
        assert!(time_from_frame_index(3, f64::NAN).is_err());
    }

    #[test]
    fn embedding_normalization() {
        let e = Embedding::normalize(vec![3.0, 4.0]).unwrap();
        assert!((e.values()[0] - 0.6).abs() < 1e-7);
        assert!((e.cosine(&e) - 1.0).abs() < NORM_TOLERANCE);
        assert!(Embedding::normalize(vec![0.0, 0.0]).is_err());
        assert!(Embedding::normalize(vec![]).is_err());
        assert!(Embedding::from_unit(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn shot_bounds() {
        assert!(Shot::new(5, 4).is_err());
        let s = Shot::new(7, 7).unwrap();
        assert!(s.contains(7) && !s.contains(8));
    }

    proptest! {
        #[test]
        fn frame_round_trip(frame in 0u64..50_000_000, fps in 0.01f64..1000.0) {
            let t = time_from_frame_index(frame, fps).unwrap();
            prop_assert_eq!(frame_index_from_time(t, fps).unwrap(), frame);
        }

        #[test]
        fn frame_from_time_monotone(a in 0.0f64..1e5, b in 0.0f64..1e5, fps in 0.5f64..240.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(frame_index_from_time(lo, fps).unwrap() <= frame_index_from_time(hi, fps).unwrap());
        }

        #[test]
        fn normalized_embeddings_are_unit(v in proptest::collection::vec(-100.0f32..100.0, 1..300)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let e = Embedding::normalize(v).unwrap();
            prop_assert!((e.cosine(&e).sqrt() - 1.0).abs() <= NORM_TOLERANCE);
        }
    }
}
