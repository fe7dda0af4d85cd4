//! Gaze fixation detection and per-frame gaze overlays.
//!
//! Fixations are found with dispersion-threshold identification: a window
//! of consecutive samples grows while its angular dispersion stays within
//! the threshold, and is reported when it breaks (or the stream ends)
//! having lasted at least the minimum duration. Dispersion is the sum of
//! the horizontal and vertical angular extents under a linear mapping of
//! normalized coordinates onto the camera field of view.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{CameraGeometry, Frame, GazeSample};

pub const DEFAULT_DISPERSION_DEG: f64 = 4.91;
pub const DEFAULT_MIN_DURATION_MS: u64 = 1000;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.6;
pub const DEFAULT_OVERLAY_MAX_POINTS: usize = 3;
pub const DEFAULT_SYNC_TOLERANCE_MS: u64 = 50;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("dispersion of an empty window is undefined")]
    EmptyWindow,
    #[error("gaze sample at t={t_ms} arrived after t={last_ms}")]
    OutOfOrderSample { last_ms: u64, t_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationEvent {
    pub start_ms: u64,
    pub end_ms: u64,
    pub centroid: (f64, f64),
    pub dispersion_deg: f64,
    pub sample_count: usize,
}

impl FixationEvent {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn midpoint_ms(&self) -> u64 {
        self.start_ms + self.duration_ms() / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeOverlay {
    pub frame_t_ms: u64,
    pub circle_centers: Vec<(f64, f64)>,
}

/// Angular dispersion of a set of gaze samples, in degrees.
pub fn dispersion_deg(samples: &[GazeSample], geom: &CameraGeometry) -> Result<f64, AttentionError> {
    if samples.is_empty() {
        return Err(AttentionError::EmptyWindow);
    }
    Ok(dispersion_of(samples.iter(), geom))
}

fn dispersion_of<'a>(samples: impl Iterator<Item = &'a GazeSample>, geom: &CameraGeometry) -> f64 {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        min_x = min_x.min(s.x);
        max_x = max_x.max(s.x);
        min_y = min_y.min(s.y);
        max_y = max_y.max(s.y);
    }
    (max_x - min_x) * geom.hfov_deg + (max_y - min_y) * geom.vfov_deg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationParams {
    pub max_dispersion_deg: f64,
    pub min_duration_ms: u64,
    pub min_confidence: f64,
}

impl Default for FixationParams {
    fn default() -> Self {
        Self {
            max_dispersion_deg: DEFAULT_DISPERSION_DEG,
            min_duration_ms: DEFAULT_MIN_DURATION_MS,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

/// Streaming fixation detector. One instance per gaze stream.
#[derive(Debug, Clone)]
pub struct FixationDetector {
    geom: CameraGeometry,
    params: FixationParams,
    window: VecDeque<GazeSample>,
    last_t: Option<u64>,
}

impl FixationDetector {
    pub fn new(geom: CameraGeometry, params: FixationParams) -> Self {
        Self {
            geom,
            params,
            window: VecDeque::new(),
            last_t: None,
        }
    }

    pub fn params(&self) -> &FixationParams {
        &self.params
    }

    /// Feeds one sample. Samples below the confidence floor are ignored
    /// after the ordering check.
    pub fn push(&mut self, sample: GazeSample) -> Result<Option<FixationEvent>, AttentionError> {
        if let Some(last) = self.last_t {
            if sample.t_ms < last {
                return Err(AttentionError::OutOfOrderSample {
                    last_ms: last,
                    t_ms: sample.t_ms,
                });
            }
        }
        self.last_t = Some(sample.t_ms);
        if sample.confidence < self.params.min_confidence {
            return Ok(None);
        }
        loop {
            if self.window.is_empty() {
                self.window.push_back(sample);
                return Ok(None);
            }
            let d = dispersion_of(self.window.iter().chain(std::iter::once(&sample)), &self.geom);
            if d <= self.params.max_dispersion_deg {
                self.window.push_back(sample);
                return Ok(None);
            }
            if self.window_duration() >= self.params.min_duration_ms {
                let fx = self.close_window();
                self.window.push_back(sample);
                return Ok(Some(fx));
            }
            self.window.pop_front();
        }
    }

    pub fn push_all(
        &mut self,
        samples: impl IntoIterator<Item = GazeSample>,
    ) -> Result<Vec<FixationEvent>, AttentionError> {
        let mut out = Vec::new();
        for s in samples {
            out.extend(self.push(s)?);
        }
        Ok(out)
    }

    /// Ends the stream, reporting the open window if it qualifies.
    pub fn finish(&mut self) -> Option<FixationEvent> {
        if !self.window.is_empty() && self.window_duration() >= self.params.min_duration_ms {
            Some(self.close_window())
        } else {
            self.window.clear();
            None
        }
    }

    fn window_duration(&self) -> u64 {
        match (self.window.front(), self.window.back()) {
            (Some(a), Some(b)) => b.t_ms - a.t_ms,
            _ => 0,
        }
    }

    fn close_window(&mut self) -> FixationEvent {
        let n = self.window.len();
        let (sx, sy) = self
            .window
            .iter()
            .fold((0.0, 0.0), |(ax, ay), s| (ax + s.x, ay + s.y));
        let fx = FixationEvent {
            start_ms: self.window.front().map_or(0, |s| s.t_ms),
            end_ms: self.window.back().map_or(0, |s| s.t_ms),
            centroid: (sx / n as f64, sy / n as f64),
            dispersion_deg: dispersion_of(self.window.iter(), &self.geom),
            sample_count: n,
        };
        self.window.clear();
        fx
    }
}

/// Runs a fresh detector over a whole stream, including the final flush.
pub fn detect_fixations(
    samples: &[GazeSample],
    geom: CameraGeometry,
    params: FixationParams,
) -> Result<Vec<FixationEvent>, AttentionError> {
    let mut det = FixationDetector::new(geom, params);
    let mut out = det.push_all(samples.iter().copied())?;
    out.extend(det.finish());
    Ok(out)
}

/// Pairs each frame with the nearest gaze samples inside `tolerance_ms`.
///
/// Inputs must be sorted by time. Candidates are ranked by |Δt|, earlier
/// samples first on ties, and at most `max_points` are kept.
pub fn overlay_for_frames(
    frames: &[Frame],
    gaze: &[GazeSample],
    tolerance_ms: u64,
    max_points: usize,
) -> Vec<GazeOverlay> {
    frames
        .iter()
        .map(|f| overlay_at(f.t_ms, gaze, tolerance_ms, max_points))
        .collect()
}

pub fn overlay_at(t_ms: u64, gaze: &[GazeSample], tolerance_ms: u64, max_points: usize) -> GazeOverlay {
    let lo = gaze.partition_point(|g| g.t_ms + tolerance_ms < t_ms);
    let hi = gaze.partition_point(|g| g.t_ms <= t_ms + tolerance_ms);
    let mut near: Vec<(u64, usize)> = (lo..hi).map(|i| (gaze[i].t_ms.abs_diff(t_ms), i)).collect();
    near.sort_unstable();
    GazeOverlay {
        frame_t_ms: t_ms,
        circle_centers: near
            .into_iter()
            .take(max_points)
            .map(|(_, i)| (gaze[i].x, gaze[i].y))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> CameraGeometry {
        CameraGeometry::default()
    }

    fn at(t: u64, x: f64, y: f64) -> GazeSample {
        GazeSample::new(t, x, y, 1.0)
    }

    #[test]
    fn dispersion_examples() {
        let still = vec![at(0, 0.5, 0.5); 4];
        assert_eq!(dispersion_deg(&still, &geom()).unwrap(), 0.0);

        let s = [at(0, 0.50, 0.40), at(1, 0.52, 0.41)];
        assert!((dispersion_deg(&s, &geom()).unwrap() - 3.61).abs() < 1e-9);

        let s = [at(0, 0.40, 0.4), at(1, 0.45, 0.4)];
        let d = dispersion_deg(&s, &geom()).unwrap();
        assert!((d - 6.95).abs() < 1e-9);
        assert!(d > DEFAULT_DISPERSION_DEG);

        assert_eq!(dispersion_deg(&[], &geom()), Err(AttentionError::EmptyWindow));
    }

    #[test]
    fn stationary_gaze_is_one_fixation() {
        let samples: Vec<_> = (0..150u64)
            .map(|i| at((i * 1200 + 74) / 149, 0.5, 0.5))
            .collect();
        assert_eq!(samples.last().unwrap().t_ms, 1200);
        let fx = detect_fixations(&samples, geom(), FixationParams::default()).unwrap();
        assert_eq!(fx.len(), 1);
        assert_eq!(fx[0].duration_ms(), 1200);
        assert_eq!(fx[0].dispersion_deg, 0.0);
        assert_eq!(fx[0].sample_count, 150);
    }

    #[test]
    fn alternating_gaze_never_fixates() {
        // every two-sample window spans 0.8 in x and y: 111.2 + 66.4 degrees
        let samples: Vec<_> = (0..100u64)
            .map(|i| if i % 2 == 0 { at(i * 50, 0.1, 0.1) } else { at(i * 50, 0.9, 0.9) })
            .collect();
        let fx = detect_fixations(&samples, geom(), FixationParams::default()).unwrap();
        assert!(fx.is_empty());
    }

    #[test]
    fn short_dwell_is_not_a_fixation() {
        let mut samples: Vec<_> = (0..10u64).map(|i| at(i * 100, 0.3, 0.3)).collect();
        samples.push(at(1000, 0.9, 0.9));
        // 900 ms of dwell before the break
        let fx = detect_fixations(&samples, geom(), FixationParams::default()).unwrap();
        assert!(fx.is_empty());
    }

    #[test]
    fn emits_on_break() {
        let mut det = FixationDetector::new(geom(), FixationParams::default());
        for i in 0..=11u64 {
            assert_eq!(det.push(at(i * 100, 0.3, 0.3)).unwrap(), None);
        }
        let fx = det.push(at(1200, 0.8, 0.8)).unwrap().unwrap();
        assert_eq!((fx.start_ms, fx.end_ms), (0, 1100));
        assert!((fx.centroid.0 - 0.3).abs() < 1e-12 && (fx.centroid.1 - 0.3).abs() < 1e-12);
        assert_eq!(det.finish(), None);
    }

    #[test]
    fn low_confidence_samples_are_dropped() {
        let mut det = FixationDetector::new(geom(), FixationParams::default());
        for i in 0..=12u64 {
            det.push(at(i * 100, 0.3, 0.3)).unwrap();
        }
        // a blink far away does not break the window
        assert_eq!(det.push(GazeSample::new(1250, 0.95, 0.05, 0.1)).unwrap(), None);
        det.push(at(1300, 0.3, 0.3)).unwrap();
        let fx = det.finish().unwrap();
        assert_eq!((fx.start_ms, fx.end_ms, fx.sample_count), (0, 1300, 14));
    }

    #[test]
    fn rejects_out_of_order() {
        let mut det = FixationDetector::new(geom(), FixationParams::default());
        det.push(at(100, 0.5, 0.5)).unwrap();
        assert_eq!(
            det.push(at(50, 0.5, 0.5)),
            Err(AttentionError::OutOfOrderSample { last_ms: 100, t_ms: 50 })
        );
    }

    fn frame(t: u64) -> Frame {
        Frame { t_ms: t, image_ref: String::new(), width_px: 1, height_px: 1 }
    }

    #[test]
    fn overlay_tolerance() {
        let gaze = [at(495, 0.2, 0.7)];
        let o = overlay_for_frames(&[frame(500)], &gaze, 50, 3);
        assert_eq!(o[0].circle_centers, vec![(0.2, 0.7)]);

        let gaze = [at(600, 0.2, 0.7)];
        let o = overlay_for_frames(&[frame(500)], &gaze, 50, 3);
        assert!(o[0].circle_centers.is_empty());
    }

    #[test]
    fn overlay_keeps_nearest() {
        let gaze = [
            at(460, 0.1, 0.1),
            at(480, 0.2, 0.2),
            at(499, 0.3, 0.3),
            at(510, 0.4, 0.4),
            at(545, 0.5, 0.5),
        ];
        // oracle: sort by |dt|
        let mut by_dt: Vec<_> = gaze.iter().map(|g| (g.t_ms.abs_diff(500), (g.x, g.y))).collect();
        by_dt.sort_by_key(|a| a.0);
        let expected: Vec<_> = by_dt.iter().take(3).map(|p| p.1).collect();
        let o = overlay_at(500, &gaze, 50, 3);
        assert_eq!(o.circle_centers, expected);
        assert_eq!(o.circle_centers, vec![(0.3, 0.3), (0.4, 0.4), (0.2, 0.2)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn stream() -> impl Strategy<Value = Vec<GazeSample>> {
            proptest::collection::vec((1u64..60, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, any::<bool>()), 1..300)
                .prop_map(|steps| {
                    let mut t = 0;
                    let (mut x, mut y) = (0.5, 0.5);
                    steps
                        .into_iter()
                        .map(|(dt, nx, ny, c, jump)| {
                            t += dt;
                            if jump {
                                x = nx;
                                y = ny;
                            } else {
                                x = (x + (nx - 0.5) * 0.01).clamp(0.0, 1.0);
                                y = (y + (ny - 0.5) * 0.01).clamp(0.0, 1.0);
                            }
                            GazeSample::new(t, x, y, c)
                        })
                        .collect()
                })
        }

        proptest! {
            #[test]
            fn fixations_satisfy_thresholds(samples in stream()) {
                let p = FixationParams::default();
                let fx = detect_fixations(&samples, geom(), p).unwrap();
                for f in &fx {
                    prop_assert!(f.duration_ms() >= p.min_duration_ms);
                    prop_assert!(f.dispersion_deg <= p.max_dispersion_deg);
                }
                for w in fx.windows(2) {
                    prop_assert!(w[0].end_ms <= w[1].start_ms);
                }
            }

            #[test]
            fn chunking_does_not_matter(samples in stream(), cut in 0usize..300) {
                let p = FixationParams::default();
                let whole = detect_fixations(&samples, geom(), p).unwrap();
                let cut = cut.min(samples.len());
                let mut det = FixationDetector::new(geom(), p);
                let mut parts = det.push_all(samples[..cut].iter().copied()).unwrap();
                parts.extend(det.push_all(samples[cut..].iter().copied()).unwrap());
                parts.extend(det.finish());
                prop_assert_eq!(whole, parts);
            }

            #[test]
            fn filtering_commutes_with_detection(samples in stream()) {
                let p = FixationParams::default();
                let direct = detect_fixations(&samples, geom(), p).unwrap();
                let kept: Vec<_> = samples.iter().copied().filter(|s| s.confidence >= p.min_confidence).collect();
                let prefiltered = detect_fixations(&kept, geom(), p).unwrap();
                prop_assert_eq!(direct, prefiltered);
            }
        }
    }
}
