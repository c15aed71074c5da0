//! Sensor data model, 6 Hz synchronization, channel groups, windowing,
//! normalization and session splits.

mod synth;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float_engine::Tensor2D;
use crate::{NULL_CLASS, NUM_CLASSES};

pub use synth::{synth_generate, ClassTemplate, NearestCentroid, SynthConfig, SynthDataset};

/// Channels in one synchronized frame.
pub const NUM_CHANNELS: usize = 791;
/// Output rate of [`synchronize`].
pub const SYNC_RATE_HZ: f64 = 6.0;
/// Grid spacing in milliseconds.
pub const GRID_MS: f64 = 1000.0 / SYNC_RATE_HZ;
/// Timestamp comparison slack in milliseconds.
pub const TIME_TOLERANCE_MS: f64 = 1e-6;

pub const THERMAL_ROWS: usize = 24;
pub const THERMAL_COLS: usize = 32;

/// Column ranges inside a frame, in file order.
pub mod layout {
    use core::ops::Range;

    pub const ACCEL: Range<usize> = 0..3;
    pub const GYRO: Range<usize> = 3..6;
    pub const MAG: Range<usize> = 6..9;
    pub const IMU: Range<usize> = 0..9;
    pub const BAROMETER: usize = 9;
    pub const DISTANCE: usize = 10;
    pub const GAS: Range<usize> = 11..13;
    pub const OPTICAL: Range<usize> = 13..23;
    pub const THERMAL: Range<usize> = 23..791;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("stream {0} has no samples")]
    EmptyStream(usize),
    #[error("no streams to synchronize")]
    NoStreams,
    #[error("stream {stream}: timestamp at sample {index} does not increase")]
    NonMonotonic { stream: usize, index: usize },
    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("stream {stream}: channel index {channel} out of range")]
    BadChannel { stream: usize, channel: usize },
    #[error("stream {0}: sampling rate must be positive and finite")]
    BadRate(usize),
    #[error("label {0} is not a valid class")]
    BadLabel(u8),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("recording has {frames} frames but {labels} labels")]
    LabelCount { frames: usize, labels: usize },
}

/// One synchronized sample of every sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub timestamp_ms: f64,
    channels: Vec<f32>,
}

impl SensorFrame {
    pub fn new(timestamp_ms: f64, channels: Vec<f32>) -> Result<Self, DataError> {
        if channels.len() != NUM_CHANNELS {
            return Err(DataError::ChannelCount {
                expected: NUM_CHANNELS,
                got: channels.len(),
            });
        }
        Ok(Self {
            timestamp_ms,
            channels,
        })
    }

    pub fn channels(&self) -> &[f32] {
        &self.channels
    }

    pub fn imu(&self) -> &[f32] {
        &self.channels[layout::IMU]
    }

    pub fn barometer(&self) -> f32 {
        self.channels[layout::BAROMETER]
    }

    pub fn distance(&self) -> f32 {
        self.channels[layout::DISTANCE]
    }

    pub fn gas(&self) -> &[f32] {
        &self.channels[layout::GAS]
    }

    pub fn optical(&self) -> &[f32] {
        &self.channels[layout::OPTICAL]
    }

    /// 24×32 infrared image, row-major.
    pub fn thermal(&self) -> &[f32] {
        &self.channels[layout::THERMAL]
    }

    pub fn select(&self, group: ChannelGroup) -> Vec<f32> {
        group.indices().map(|i| self.channels[i]).collect()
    }
}

/// Subsets of the frame the models are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelGroup {
    /// Every channel.
    G791,
    /// Infrared array only.
    G768,
    /// Everything except the infrared array.
    G23,
    /// G23 without accelerometer and gyroscope.
    G17,
}

impl ChannelGroup {
    pub const ALL: [ChannelGroup; 4] = [
        ChannelGroup::G791,
        ChannelGroup::G768,
        ChannelGroup::G23,
        ChannelGroup::G17,
    ];

    fn range(self) -> Range<usize> {
        match self {
            ChannelGroup::G791 => 0..NUM_CHANNELS,
            ChannelGroup::G768 => layout::THERMAL,
            ChannelGroup::G23 => 0..layout::THERMAL.start,
            ChannelGroup::G17 => layout::MAG.start..layout::THERMAL.start,
        }
    }

    /// Frame column indices, ascending.
    pub fn indices(self) -> Range<usize> {
        self.range()
    }

    pub fn len(self) -> usize {
        self.range().len()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelGroup::G791 => "g791",
            ChannelGroup::G768 => "g768",
            ChannelGroup::G23 => "g23",
            ChannelGroup::G17 => "g17",
        }
    }
}

impl core::fmt::Display for ChannelGroup {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelGroup {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t
            .strip_prefix('g')
            .or_else(|| t.strip_prefix('G'))
            .unwrap_or(t);
        match t {
            "791" => Ok(ChannelGroup::G791),
            "768" => Ok(ChannelGroup::G768),
            "23" => Ok(ChannelGroup::G23),
            "17" => Ok(ChannelGroup::G17),
            _ => Err(DataError::InvalidConfig(
                "channel group must be one of g791, g768, g23, g17",
            )),
        }
    }
}

/// One sensor's native-rate samples, writing into a subset of frame columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub rate_hz: f64,
    pub channels: Vec<usize>,
    pub timestamps_ms: Vec<f64>,
    /// Row-major `timestamps × channels`.
    pub values: Vec<f32>,
}

impl SensorStream {
    fn validate(&self, idx: usize) -> Result<(), DataError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(DataError::BadRate(idx));
        }
        if self.timestamps_ms.is_empty() {
            return Err(DataError::EmptyStream(idx));
        }
        if let Some(&channel) = self.channels.iter().find(|&&c| c >= NUM_CHANNELS) {
            return Err(DataError::BadChannel {
                stream: idx,
                channel,
            });
        }
        if self.values.len() != self.timestamps_ms.len() * self.channels.len() {
            return Err(DataError::ChannelCount {
                expected: self.timestamps_ms.len() * self.channels.len(),
                got: self.values.len(),
            });
        }
        if let Some(i) = self
            .timestamps_ms
            .windows(2)
            .position(|w| w[1].partial_cmp(&w[0]) != Some(core::cmp::Ordering::Greater))
        {
            return Err(DataError::NonMonotonic {
                stream: idx,
                index: i + 1,
            });
        }
        Ok(())
    }

    fn end_ms(&self) -> f64 {
        self.timestamps_ms[self.timestamps_ms.len() - 1] + 1000.0 / self.rate_hz
    }
}

/// Resamples every stream onto a common 6 Hz grid by sample-and-hold.
///
/// The grid starts at the earliest first timestamp; ticks before every stream
/// has produced a sample are dropped, and the grid ends where the shortest
/// stream's last sample period ends. Columns no stream writes stay zero.
pub fn synchronize(streams: &[SensorStream]) -> Result<Vec<SensorFrame>, DataError> {
    if streams.is_empty() {
        return Err(DataError::NoStreams);
    }
    for (i, s) in streams.iter().enumerate() {
        s.validate(i)?;
    }
    let t0 = streams
        .iter()
        .map(|s| s.timestamps_ms[0])
        .fold(f64::INFINITY, f64::min);
    let ready = streams
        .iter()
        .map(|s| s.timestamps_ms[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let end = streams
        .iter()
        .map(SensorStream::end_ms)
        .fold(f64::INFINITY, f64::min);

    let mut cursors = vec![0usize; streams.len()];
    let mut frames = Vec::new();
    let mut k: u64 = 0;
    loop {
        let tick = t0 + k as f64 * GRID_MS;
        k += 1;
        if tick >= end - TIME_TOLERANCE_MS {
            break;
        }
        if tick < ready - TIME_TOLERANCE_MS {
            continue;
        }
        let mut channels = vec![0.0f32; NUM_CHANNELS];
        for (s, cur) in streams.iter().zip(cursors.iter_mut()) {
            while *cur + 1 < s.timestamps_ms.len()
                && s.timestamps_ms[*cur + 1] <= tick + TIME_TOLERANCE_MS
            {
                *cur += 1;
            }
            let width = s.channels.len();
            let row = &s.values[*cur * width..(*cur + 1) * width];
            for (&c, &v) in s.channels.iter().zip(row) {
                channels[c] = v;
            }
        }
        frames.push(SensorFrame {
            timestamp_ms: tick,
            channels,
        });
    }
    Ok(frames)
}

/// Latest label at or before each grid timestamp; ticks before the first label get null.
pub fn hold_labels(label_times_ms: &[f64], labels: &[u8], grid_ms: &[f64]) -> Vec<u8> {
    let mut cur = None;
    let mut i = 0;
    grid_ms
        .iter()
        .map(|&t| {
            while i < label_times_ms.len() && label_times_ms[i] <= t + TIME_TOLERANCE_MS {
                cur = Some(labels[i]);
                i += 1;
            }
            cur.unwrap_or(NULL_CLASS)
        })
        .collect()
}

/// A contiguous, labeled, synchronized session of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject: u16,
    pub session: u8,
    pub group: ChannelGroup,
    pub timestamps_ms: Vec<f64>,
    /// Row-major `frames × group.len()`.
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Recording {
    pub fn from_frames(
        subject: u16,
        session: u8,
        frames: &[SensorFrame],
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        if frames.len() != labels.len() {
            return Err(DataError::LabelCount {
                frames: frames.len(),
                labels: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(DataError::BadLabel(l));
        }
        let mut data = Vec::with_capacity(frames.len() * NUM_CHANNELS);
        for f in frames {
            data.extend_from_slice(&f.channels);
        }
        Ok(Self {
            subject,
            session,
            group: ChannelGroup::G791,
            timestamps_ms: frames.iter().map(|f| f.timestamp_ms).collect(),
            data,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.group.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    /// Full-width frame `i`; only valid on G791 recordings.
    pub fn frame(&self, i: usize) -> Option<SensorFrame> {
        (self.group == ChannelGroup::G791).then(|| SensorFrame {
            timestamp_ms: self.timestamps_ms[i],
            channels: self.row(i).to_vec(),
        })
    }
}

/// Projects a recording onto `group`. Only narrowing from G791 or to the same group is possible.
pub fn select_channels(rec: &Recording, group: ChannelGroup) -> Result<Recording, DataError> {
    if rec.group == group {
        return Ok(rec.clone());
    }
    if rec.group != ChannelGroup::G791 {
        return Err(DataError::ChannelCount {
            expected: NUM_CHANNELS,
            got: rec.width(),
        });
    }
    let range = group.indices();
    let mut data = Vec::with_capacity(rec.len() * group.len());
    for i in 0..rec.len() {
        data.extend_from_slice(&rec.row(i)[range.clone()]);
    }
    Ok(Recording {
        subject: rec.subject,
        session: rec.session,
        group,
        timestamps_ms: rec.timestamps_ms.clone(),
        data,
        labels: rec.labels.clone(),
    })
}

/// Model input with its label and origin.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub window: Tensor2D,
    pub label: u8,
    pub subject: u16,
    pub session: u8,
}

/// Most frequent label; any tie for first place yields the null class.
pub fn majority_label(labels: &[u8]) -> u8 {
    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    let mut winners = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c == best && c > 0);
    match (winners.next(), winners.next()) {
        (Some((l, _)), None) => l as u8,
        _ => NULL_CLASS,
    }
}

/// Sliding windows inside each recording; a window never spans two recordings.
pub fn make_windows(
    recordings: &[Recording],
    window_len: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>, DataError> {
    if window_len == 0 || stride == 0 {
        return Err(DataError::InvalidConfig(
            "window length and stride must be at least 1",
        ));
    }
    let mut out = Vec::new();
    for rec in recordings {
        let w = rec.width();
        let mut start = 0;
        while start + window_len <= rec.len() {
            let data = rec.data[start * w..(start + window_len) * w].to_vec();
            out.push(WindowedSample {
                window: Tensor2D::from_parts(crate::Shape::new(window_len, w), data),
                label: majority_label(&rec.labels[start..start + window_len]),
                subject: rec.subject,
                session: rec.session,
            });
            start += stride;
        }
    }
    Ok(out)
}

/// Per-channel z-score statistics of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn is_constant(&self, c: usize) -> bool {
        self.std[c] <= 1e-12 * self.mean[c].abs().max(1.0)
    }
}

/// Population mean and standard deviation of every channel over all window rows.
pub fn fit_stats(train: &[WindowedSample]) -> Result<DatasetStats, DataError> {
    let first = train.first().ok_or(DataError::InvalidConfig(
        "cannot fit statistics on an empty split",
    ))?;
    let ch = first.window.channels();
    let mut sum = vec![0.0f64; ch];
    let mut n = 0usize;
    for s in train {
        if s.window.channels() != ch {
            return Err(DataError::ChannelCount {
                expected: ch,
                got: s.window.channels(),
            });
        }
        for t in 0..s.window.steps() {
            for (acc, &v) in sum.iter_mut().zip(s.window.row(t)) {
                *acc += v as f64;
            }
        }
        n += s.window.steps();
    }
    let mean: Vec<f64> = sum.iter().map(|&s| s / n as f64).collect();
    let mut sq = vec![0.0f64; ch];
    for s in train {
        for t in 0..s.window.steps() {
            for ((acc, &v), &m) in sq.iter_mut().zip(s.window.row(t)).zip(&mean) {
                let d = v as f64 - m;
                *acc += d * d;
            }
        }
    }
    let std = sq.iter().map(|&s| Float::sqrt(s / n as f64)).collect();
    Ok(DatasetStats { mean, std })
}

/// Applies `stats` in place. Constant channels are left unscaled.
pub fn normalize(samples: &mut [WindowedSample], stats: &DatasetStats) -> Result<(), DataError> {
    for s in samples.iter() {
        if s.window.channels() != stats.channels() {
            return Err(DataError::ChannelCount {
                expected: stats.channels(),
                got: s.window.channels(),
            });
        }
    }
    let ch = stats.channels();
    let constant: Vec<bool> = (0..ch).map(|c| stats.is_constant(c)).collect();
    for s in samples.iter_mut() {
        s.window.map_in_place(|i, v| {
            let c = i % ch;
            if constant[c] {
                v
            } else {
                ((v as f64 - stats.mean[c]) / stats.std[c]) as f32
            }
        });
    }
    Ok(())
}

/// Partitions by session, preserving order: `(train, test)`.
pub fn split_by_session(
    samples: Vec<WindowedSample>,
    held_out_session: u8,
) -> (Vec<WindowedSample>, Vec<WindowedSample>) {
    let (test, train): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .partition(|s| s.session == held_out_session);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(rate_hz: f64, channel: usize, n: usize, start: f64) -> SensorStream {
        SensorStream {
            rate_hz,
            channels: vec![channel],
            timestamps_ms: (0..n)
                .map(|i| start + i as f64 * 1000.0 / rate_hz)
                .collect(),
            values: (0..n).map(|i| i as f32).collect(),
        }
    }

    fn rec(session: u8, labels: Vec<u8>) -> Recording {
        let n = labels.len();
        Recording {
            subject: 0,
            session,
            group: ChannelGroup::G17,
            timestamps_ms: (0..n).map(|i| i as f64 * GRID_MS).collect(),
            data: (0..n * 17)
                .map(|i| (i / 17) as f32 + session as f32 * 100.0)
                .collect(),
            labels,
        }
    }

    #[test]
    fn group_cardinalities_and_cover() {
        let lens: Vec<usize> = ChannelGroup::ALL.iter().map(|g| g.len()).collect();
        assert_eq!(lens, vec![791, 768, 23, 17]);
        let t = ChannelGroup::G768.indices();
        let o = ChannelGroup::G23.indices();
        assert_eq!(o.end, t.start);
        assert_eq!(t.end, NUM_CHANNELS);
        assert_eq!(THERMAL_ROWS * THERMAL_COLS, 768);
    }

    #[test]
    fn g17_keeps_the_expected_markers() {
        let frame = SensorFrame::new(0.0, (0..NUM_CHANNELS).map(|i| i as f32).collect()).unwrap();
        let expected: Vec<f32> = [
            6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22,
        ]
        .iter()
        .map(|&i| i as f32)
        .collect();
        assert_eq!(frame.select(ChannelGroup::G17), expected);
        assert_eq!(frame.select(ChannelGroup::G791), frame.channels());
        assert_eq!(frame.select(ChannelGroup::G768), frame.thermal());
        assert_eq!(frame.select(ChannelGroup::G23)[..9], *frame.imu());
    }

    #[test]
    fn frame_rejects_wrong_width() {
        assert_eq!(
            SensorFrame::new(0.0, vec![0.0; 790]),
            Err(DataError::ChannelCount {
                expected: 791,
                got: 790
            })
        );
    }

    #[test]
    fn group_parsing() {
        assert_eq!("g23".parse::<ChannelGroup>().unwrap(), ChannelGroup::G23);
        assert_eq!("G768".parse::<ChannelGroup>().unwrap(), ChannelGroup::G768);
        assert_eq!("17".parse::<ChannelGroup>().unwrap(), ChannelGroup::G17);
        assert!("g24".parse::<ChannelGroup>().is_err());
    }

    #[test]
    fn sync_12hz_keeps_every_second_sample() {
        let frames = synchronize(&[stream(12.0, 0, 12, 0.0)]).unwrap();
        let got: Vec<f32> = frames.iter().map(|f| f.channels()[0]).collect();
        assert_eq!(got, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn sync_3hz_repeats_each_value_twice() {
        let frames = synchronize(&[stream(3.0, 0, 3, 0.0)]).unwrap();
        let got: Vec<f32> = frames.iter().map(|f| f.channels()[0]).collect();
        assert_eq!(got, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn sync_grid_is_exact_6hz() {
        let frames = synchronize(&[stream(12.0, 0, 120, 5.0), stream(3.0, 1, 30, 5.0)]).unwrap();
        assert_eq!(frames.len(), 60);
        for (k, f) in frames.iter().enumerate() {
            assert!((f.timestamp_ms - (5.0 + k as f64 * 1000.0 / 6.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn sync_aligned_6hz_is_identity() {
        let a = stream(6.0, 0, 10, 0.0);
        let b = stream(6.0, 790, 10, 0.0);
        let frames = synchronize(&[a.clone(), b]).unwrap();
        assert_eq!(frames.len(), 10);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.channels()[0], a.values[i]);
            assert_eq!(f.channels()[790], a.values[i]);
        }
    }

    #[test]
    fn sync_drops_ticks_before_every_stream_started() {
        let frames =
            synchronize(&[stream(6.0, 0, 12, 0.0), stream(6.0, 1, 10, 2.0 * GRID_MS)]).unwrap();
        assert_eq!(frames.len(), 10);
        assert!((frames[0].timestamp_ms - 2.0 * GRID_MS).abs() < 1e-9);
        assert_eq!(frames[0].channels()[0], 2.0);
        assert_eq!(frames[0].channels()[1], 0.0);
    }

    #[test]
    fn sync_errors() {
        let mut empty = stream(6.0, 0, 0, 0.0);
        assert_eq!(
            synchronize(&[empty.clone()]),
            Err(DataError::EmptyStream(0))
        );
        assert_eq!(synchronize(&[]), Err(DataError::NoStreams));
        empty = stream(6.0, 0, 4, 0.0);
        empty.timestamps_ms[2] = 0.0;
        assert_eq!(
            synchronize(&[stream(6.0, 1, 4, 0.0), empty]),
            Err(DataError::NonMonotonic {
                stream: 1,
                index: 2
            })
        );
    }

    #[test]
    fn label_hold() {
        let grid: Vec<f64> = (0..4).map(|k| k as f64 * GRID_MS).collect();
        assert_eq!(
            hold_labels(&[100.0, 400.0], &[3, 5], &grid),
            vec![0, 3, 3, 5]
        );
    }

    #[test]
    fn window_count_and_tie_rule() {
        let w = make_windows(&[rec(1, vec![1; 10])], 4, 2).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(majority_label(&[4, 4, 7, 7]), NULL_CLASS);
        assert_eq!(majority_label(&[4, 4, 7]), 4);
        assert_eq!(majority_label(&[0, 0, 7]), 0);
        let w = make_windows(&[rec(1, vec![4, 4, 7, 7])], 4, 1).unwrap();
        assert_eq!(w[0].label, NULL_CLASS);
    }

    #[test]
    fn windows_never_cross_sessions() {
        // frames 0..=5 in session 1, 6.. in session 2
        let recs = [rec(1, vec![2; 6]), rec(2, vec![3; 6])];
        let w = make_windows(&recs, 4, 1).unwrap();
        assert_eq!(w.len(), 6);
        for s in &w {
            let first = s.window.get(0, 0);
            let last = s.window.get(3, 0);
            assert_eq!((first / 100.0).floor(), (last / 100.0).floor());
            assert_eq!(s.label, s.session + 1);
        }
        assert!(make_windows(&[rec(1, vec![0; 3])], 4, 1)
            .unwrap()
            .is_empty());
        assert!(make_windows(&recs, 0, 1).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let recs = [rec(1, vec![0; 30]), rec(2, vec![0; 30])];
        let mut w = make_windows(&recs, 5, 3).unwrap();
        // make one channel constant
        for s in &mut w {
            s.window.map_in_place(|i, v| {
                if i % 17 == 4 {
                    3.25
                } else {
                    v + (i % 17) as f32 * 0.1
                }
            });
        }
        let stats = fit_stats(&w).unwrap();
        normalize(&mut w, &stats).unwrap();
        let after = fit_stats(&w).unwrap();
        for c in 0..17 {
            if c == 4 {
                assert_eq!(after.mean[c], 3.25);
            } else {
                assert!(after.mean[c].abs() < 1e-6, "{}", after.mean[c]);
                assert!((after.std[c] - 1.0).abs() < 1e-6, "{}", after.std[c]);
            }
        }
        let other = DatasetStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        assert!(normalize(&mut w, &other).is_err());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_stable() {
        let recs: Vec<Recording> = (1..=5).map(|s| rec(s, vec![1; 8])).collect();
        let all = make_windows(&recs, 4, 2).unwrap();
        let (train, test) = split_by_session(all.clone(), 5);
        assert!(train.iter().all(|s| (1..=4).contains(&s.session)));
        assert!(test.iter().all(|s| s.session == 5));
        assert_eq!(train.len() + test.len(), all.len());
        assert_eq!(split_by_session(all, 5), (train, test));
    }

    #[test]
    fn select_channels_projects_recordings() {
        let frames: Vec<SensorFrame> = (0..3)
            .map(|t| {
                SensorFrame::new(
                    t as f64,
                    (0..NUM_CHANNELS).map(|i| (i + t) as f32).collect(),
                )
                .unwrap()
            })
            .collect();
        let r = Recording::from_frames(0, 1, &frames, vec![0, 1, 2]).unwrap();
        let g = select_channels(&r, ChannelGroup::G23).unwrap();
        assert_eq!(g.width(), 23);
        assert_eq!(g.row(2)[0], 2.0);
        assert!(select_channels(&g, ChannelGroup::G17).is_err());
        assert_eq!(r.frame(1).unwrap(), frames[1]);
        assert!(Recording::from_frames(0, 1, &frames, vec![0, 15, 2]).is_err());
    }
}
