//! Map-unit planning and frame-sampling plans.
//!
//! This is the only place that decides which timestamps become
//! model-visible frames. Every function here is pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Seconds, TimeInterval, MAX_IMAGES_PER_REQUEST};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FramingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("frame index {index} out of range for unit {unit_id} with {len} frames")]
    IndexOutOfRange { unit_id: u32, index: i64, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub caption_unit_s: f64,
    pub caption_fps: f64,
    pub character_unit_s: f64,
    pub character_fps: f64,
    pub frame_cap: usize,
    pub local_frames: usize,
    /// Minimum spacing between densely sampled local frames.
    pub local_min_spacing_s: f64,
    pub chunk_scenes: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            caption_unit_s: 10.0,
            caption_fps: 2.0,
            character_unit_s: 120.0,
            character_fps: 0.25,
            frame_cap: 32,
            local_frames: 32,
            local_min_spacing_s: 1.0,
            chunk_scenes: 32,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), FramingError> {
        let positive = [
            ("caption_unit_s", self.caption_unit_s),
            ("caption_fps", self.caption_fps),
            ("character_unit_s", self.character_unit_s),
            ("character_fps", self.character_fps),
            ("local_min_spacing_s", self.local_min_spacing_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FramingError::InvalidInput(format!("{name} must be positive")));
            }
        }
        if self.frame_cap == 0 || self.frame_cap > MAX_IMAGES_PER_REQUEST {
            return Err(FramingError::InvalidInput(format!(
                "frame_cap must be in 1..={MAX_IMAGES_PER_REQUEST}"
            )));
        }
        if self.local_frames == 0 || self.local_frames > self.frame_cap {
            return Err(FramingError::InvalidInput(
                "local_frames must be in 1..=frame_cap".into(),
            ));
        }
        if self.chunk_scenes == 0 {
            return Err(FramingError::InvalidInput("chunk_scenes must be positive".into()));
        }
        Ok(())
    }
}

/// A fixed-length slice of the video with its sampled frame times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameUnit {
    pub unit_id: u32,
    pub interval: TimeInterval,
    pub fps: f64,
    pub frame_times: Vec<Seconds>,
}

/// 10 s clip sampled at 2 fps, used for scene splitting and captioning.
pub type CaptionUnit = FrameUnit;
/// 2 min window sampled at 0.25 fps, used for character extraction.
pub type CharacterUnit = FrameUnit;

impl FrameUnit {
    pub fn frame_time(&self, index: i64) -> Result<Seconds, FramingError> {
        frame_time(self, index)
    }

    pub fn last_frame_time(&self) -> Seconds {
        *self.frame_times.last().expect("units always hold a frame")
    }

    /// Frame times falling inside `interval`.
    pub fn times_within(&self, interval: &TimeInterval) -> Vec<Seconds> {
        self.frame_times
            .iter()
            .copied()
            .filter(|t| interval.contains_time(*t))
            .collect()
    }
}

fn plan_units(duration: Seconds, unit_s: f64, fps: f64) -> Result<Vec<FrameUnit>, FramingError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(FramingError::InvalidInput(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let mut units = Vec::new();
    let mut k = 0u32;
    loop {
        let start = k as f64 * unit_s;
        if start >= duration {
            break;
        }
        let end = ((k + 1) as f64 * unit_s).min(duration);
        let frame_times: Vec<Seconds> = (0..).map(|i| start + i as f64 / fps).take_while(|t| *t < end).collect();
        units.push(FrameUnit {
            unit_id: k,
            interval: TimeInterval::new(start, end).map_err(|e| FramingError::InvalidInput(e.0))?,
            fps,
            frame_times,
        });
        k += 1;
    }
    Ok(units)
}

pub fn plan_caption_units(duration: Seconds, cfg: &SamplingConfig) -> Result<Vec<CaptionUnit>, FramingError> {
    plan_units(duration, cfg.caption_unit_s, cfg.caption_fps)
}

pub fn plan_character_units(duration: Seconds, cfg: &SamplingConfig) -> Result<Vec<CharacterUnit>, FramingError> {
    plan_units(duration, cfg.character_unit_s, cfg.character_fps)
}

/// Maps a model-supplied frame index to its timestamp.
pub fn frame_time(unit: &FrameUnit, index: i64) -> Result<Seconds, FramingError> {
    if index < 0 || index as usize >= unit.frame_times.len() {
        return Err(FramingError::IndexOutOfRange {
            unit_id: unit.unit_id,
            index,
            len: unit.frame_times.len(),
        });
    }
    Ok(unit.interval.start() + index as f64 / unit.fps)
}

/// Indices of `k` items picked evenly out of `n`, keeping first and last.
pub fn even_subsample(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    match k {
        0 => vec![],
        1 => vec![(n - 1) / 2],
        _ => (0..k).map(|i| (i * (n - 1) + (k - 1) / 2) / (k - 1)).collect(),
    }
}

/// Dense sampling inside one interval: `n` frames at the midpoints of `n`
/// equal sub-intervals, where `n` is bounded by the minimum spacing and the
/// local frame budget. Intervals shorter than the spacing get their
/// midpoint only.
pub fn sample_local(interval: &TimeInterval, cfg: &SamplingConfig) -> Vec<Seconds> {
    let d = interval.duration();
    // Small epsilon so that e.g. 2.0 / 1.0 does not floor to 1.
    let fit = ((d / cfg.local_min_spacing_s) + 1e-9).floor() as usize;
    let n = fit.clamp(1, cfg.local_frames.min(cfg.frame_cap));
    let step = d / n as f64;
    (0..n).map(|i| interval.start() + (i as f64 + 0.5) * step).collect()
}

/// Sparse sampling across intervals: one midpoint per interval in time
/// order, evenly thinned to the frame cap.
pub fn sample_global(intervals: &[TimeInterval], cfg: &SamplingConfig) -> Result<Vec<Seconds>, FramingError> {
    if intervals.is_empty() {
        return Err(FramingError::InvalidInput(
            "global sampling needs at least one interval".into(),
        ));
    }
    let mut mids: Vec<Seconds> = intervals.iter().map(TimeInterval::midpoint).collect();
    mids.sort_by(f64::total_cmp);
    mids.dedup();
    let keep = even_subsample(mids.len(), cfg.frame_cap);
    Ok(keep.into_iter().map(|i| mids[i]).collect())
}

/// `n` frames uniformly spread over the whole video at `(k + 0.5) * d / n`.
pub fn sample_uniform(duration: Seconds, n: usize) -> Vec<Seconds> {
    (0..n).map(|k| (k as f64 + 0.5) * duration / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SamplingConfig {
        SamplingConfig::default()
    }

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    #[test]
    fn twenty_seconds_gives_two_full_units() {
        let units = plan_caption_units(20.0, &cfg()).unwrap();
        assert_eq!(units.len(), 2);
        let expect: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        assert_eq!(units[0].frame_times, expect);
        assert_eq!(units[0].frame_times.last(), Some(&9.5));
    }

    #[test]
    fn tail_unit_is_truncated() {
        let units = plan_caption_units(25.0, &cfg()).unwrap();
        assert_eq!(units.len(), 3);
        assert_eq!(units[2].interval, iv(20.0, 25.0));
        assert_eq!(units[2].frame_times.len(), 10);
    }

    #[test]
    fn hour_long_video_matches_enumeration() {
        let units = plan_caption_units(3600.0, &cfg()).unwrap();
        assert_eq!(units.len(), 360);
        // Oracle: every half second in [0, 3600).
        let enumerated: Vec<f64> = (0..7200).map(|i| i as f64 / 2.0).collect();
        let planned: Vec<f64> = units.iter().flat_map(|u| u.frame_times.clone()).collect();
        assert_eq!(planned, enumerated);
    }

    #[test]
    fn character_units() {
        let units = plan_character_units(240.0, &cfg()).unwrap();
        assert_eq!(units.len(), 2);
        assert!(units.iter().all(|u| u.frame_times.len() == 30));

        let units = plan_character_units(130.0, &cfg()).unwrap();
        assert_eq!(units.len(), 2);
        // Oracle: multiples of 4 s in [120, 130).
        let oracle: Vec<f64> = (0..100)
            .map(|i| i as f64 * 4.0)
            .filter(|t| (120.0..130.0).contains(t))
            .collect();
        assert_eq!(units[1].frame_times, oracle);
        assert_eq!(oracle, vec![120.0, 124.0, 128.0]);

        assert_eq!(plan_character_units(120.0, &cfg()).unwrap().len(), 1);
    }

    #[test]
    fn non_positive_duration_rejected() {
        assert!(matches!(
            plan_caption_units(0.0, &cfg()),
            Err(FramingError::InvalidInput(_))
        ));
        assert!(plan_character_units(-3.0, &cfg()).is_err());
        assert!(plan_caption_units(f64::NAN, &cfg()).is_err());
    }

    #[test]
    fn frame_time_maps_indices() {
        let units = plan_caption_units(200.0, &cfg()).unwrap();
        let u12 = &units[12];
        assert_eq!(u12.interval.start(), 120.0);
        assert_eq!(frame_time(u12, 5).unwrap(), 122.5);
        assert_eq!(frame_time(u12, 0).unwrap(), 120.0);
        assert!(matches!(
            frame_time(u12, 20),
            Err(FramingError::IndexOutOfRange { index: 20, len: 20, .. })
        ));
        assert!(frame_time(u12, -1).is_err());

        let cu = &plan_character_units(200.0, &cfg()).unwrap()[0];
        assert_eq!(frame_time(cu, 29).unwrap(), 29.0 / 0.25);
        assert_eq!(frame_time(cu, 29).unwrap(), 116.0);
    }

    #[test]
    fn local_sampling() {
        let expect: Vec<f64> = (0..32).map(|i| i as f64 + 0.5).collect();
        assert_eq!(sample_local(&iv(0.0, 32.0), &cfg()), expect);

        // Oracle: n = floor(d / spacing) clamped to [1, local], midpoints of n bins.
        let d: f64 = 2.0;
        let n = (d / 1.0).floor() as usize;
        let oracle: Vec<f64> = (0..n).map(|i| 10.0 + (i as f64 + 0.5) * d / n as f64).collect();
        assert_eq!(oracle, vec![10.5, 11.5]);
        assert_eq!(sample_local(&iv(10.0, 12.0), &cfg()), oracle);

        let t = sample_local(&iv(5.0, 5.2), &cfg());
        assert_eq!(t.len(), 1);
        assert!((t[0] - 5.1).abs() < 1e-12);
    }

    #[test]
    fn global_sampling() {
        assert_eq!(
            sample_global(&[iv(10.0, 20.0), iv(40.0, 60.0)], &cfg()).unwrap(),
            vec![15.0, 50.0]
        );
        assert_eq!(sample_global(&[iv(0.0, 10.0)], &cfg()).unwrap(), vec![5.0]);
        assert!(sample_global(&[], &cfg()).is_err());

        let many: Vec<TimeInterval> = (0..40).map(|i| iv(i as f64 * 10.0, i as f64 * 10.0 + 4.0)).collect();
        let got = sample_global(&many, &cfg()).unwrap();
        assert_eq!(got.len(), 32);
        assert_eq!(got[0], 2.0);
        assert_eq!(*got.last().unwrap(), 392.0);
        // Oracle: round(i * 39 / 31) by integer arithmetic.
        let oracle: Vec<f64> = (0..32)
            .map(|i| {
                let idx = ((i as f64) * 39.0 / 31.0).round() as usize;
                idx as f64 * 10.0 + 2.0
            })
            .collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn uniform_sampling() {
        let t = sample_uniform(3600.0, 256);
        assert_eq!(t.len(), 256);
        assert_eq!(t[0], 0.5 * 3600.0 / 256.0);
        assert_eq!(t[255], 255.5 * 3600.0 / 256.0);
        assert_eq!(sample_uniform(180.0, 128).len(), 128);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = SamplingConfig { frame_cap: 33, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig {
            local_frames: 40,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let fifty = SamplingConfig {
            chunk_scenes: 50,
            ..cfg()
        };
        assert!(fifty.validate().is_ok());
    }

    fn arb_cfg() -> impl Strategy<Value = SamplingConfig> {
        (1usize..=32, 1usize..=32, 1u32..40, 1u32..8).prop_map(|(cap, local, unit, fps)| SamplingConfig {
            frame_cap: cap,
            local_frames: local.min(cap),
            caption_unit_s: unit as f64,
            caption_fps: fps as f64 / 2.0,
            ..SamplingConfig::default()
        })
    }

    fn strictly_increasing(v: &[f64]) -> bool {
        v.windows(2).all(|w| w[0] < w[1])
    }

    proptest! {
        #[test]
        fn units_tile_the_video(duration in 0.1f64..5000.0, cfg in arb_cfg()) {
            for units in [plan_caption_units(duration, &cfg).unwrap(), plan_character_units(duration, &cfg).unwrap()] {
                prop_assert_eq!(units[0].interval.start(), 0.0);
                prop_assert_eq!(units.last().unwrap().interval.end(), duration);
                for w in units.windows(2) {
                    prop_assert_eq!(w[0].interval.end(), w[1].interval.start());
                }
                for u in &units {
                    prop_assert!(!u.frame_times.is_empty());
                    prop_assert!(strictly_increasing(&u.frame_times));
                    prop_assert!(u.frame_times.iter().all(|t| u.interval.contains_time(*t)));
                }
            }
        }

        #[test]
        fn sampling_respects_cap(
            cfg in arb_cfg(),
            spans in prop::collection::vec((0u32..20000, 1u32..2000), 1..80),
        ) {
            let ivs: Vec<TimeInterval> = spans.iter()
                .map(|(s, d)| iv(*s as f64 / 10.0, (*s + *d) as f64 / 10.0))
                .collect();
            for i in &ivs {
                let local = sample_local(i, &cfg);
                prop_assert!(!local.is_empty() && local.len() <= cfg.frame_cap);
                prop_assert!(strictly_increasing(&local));
                prop_assert!(local.iter().all(|t| i.contains_time(*t)));
            }
            let global = sample_global(&ivs, &cfg).unwrap();
            prop_assert!(!global.is_empty() && global.len() <= cfg.frame_cap);
            prop_assert!(strictly_increasing(&global));
        }

        #[test]
        fn even_subsample_keeps_ends(n in 1usize..200, k in 2usize..64) {
            let idx = even_subsample(n, k);
            prop_assert_eq!(idx.len(), n.min(k));
            prop_assert_eq!(idx[0], 0);
            prop_assert_eq!(*idx.last().unwrap(), n - 1);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
