//! Seeded synthetic kitchen-activity recordings.
//!
//! Every class owns a template across all sensor groups: an IMU sinusoid
//! (frequency and per-axis amplitude), magnetometer/barometer/distance/gas/
//! optical levels, a gas ramp, and a hot blob on the infrared array. The null
//! class is baseline noise with no blob. Recordings alternate null and
//! activity segments of 3 to 30 seconds.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    layout, make_windows, select_channels, ChannelGroup, DataError, Recording, WindowedSample,
    GRID_MS, NUM_CHANNELS, SYNC_RATE_HZ, THERMAL_COLS, THERMAL_ROWS,
};
use crate::{NULL_CLASS, NUM_CLASSES};

const SEGMENT_MIN_S: f64 = 3.0;
const SEGMENT_MAX_S: f64 = 30.0;
const THERMAL_BASE: f32 = 22.0;
const BLOB_SIGMA: f32 = 2.5;
const BAROMETER_BASE: f32 = 1013.25;

// per-group noise standard deviations
const NOISE_IMU: f32 = 0.3;
const NOISE_MAG: f32 = 0.1;
const NOISE_BARO: f32 = 0.05;
const NOISE_DIST: f32 = 4.0;
const NOISE_GAS: f32 = 0.05;
const NOISE_OPTICAL: f32 = 0.06;
const NOISE_THERMAL: f32 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub subjects: u16,
    pub sessions_per_subject: u8,
    /// Length of every recording in seconds.
    pub duration_s: f64,
    /// Only used to validate `duration_s`.
    pub window_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            subjects: 4,
            sessions_per_subject: 5,
            duration_s: 300.0,
            window_len: 24,
        }
    }
}

/// Generative signature of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub imu_freq_hz: f32,
    /// Accelerometer then gyroscope amplitudes.
    pub imu_amp: [f32; 6],
    pub mag: [f32; 3],
    pub barometer: f32,
    pub distance: f32,
    pub gas: [f32; 2],
    /// Gas drift per second within a segment.
    pub gas_slope: [f32; 2],
    pub optical: [f32; 10],
    /// Hot-blob centre (row, column) and amplitude in kelvin.
    pub blob: Option<(f32, f32, f32)>,
}

impl ClassTemplate {
    fn null() -> Self {
        Self {
            imu_freq_hz: 0.0,
            imu_amp: [0.0; 6],
            mag: [0.0; 3],
            barometer: BAROMETER_BASE,
            distance: 250.0,
            gas: [0.1, 0.1],
            gas_slope: [0.0; 2],
            optical: [0.5; 10],
            blob: None,
        }
    }

    fn activity(class: usize, rng: &mut ChaCha8Rng) -> Self {
        let i = class - 1;
        let mut imu_amp = [0.0; 6];
        for a in &mut imu_amp {
            *a = rng.gen_range(0.5..2.0);
        }
        let mut optical = [0.0; 10];
        for o in &mut optical {
            *o = rng.gen_range(0.0..1.0);
        }
        Self {
            imu_freq_hz: 0.3 + 2.4 * i as f32 / 13.0,
            imu_amp,
            mag: [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
            barometer: BAROMETER_BASE + rng.gen_range(-0.5..0.5),
            distance: rng.gen_range(40.0..200.0),
            gas: [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)],
            gas_slope: [rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02)],
            optical,
            blob: Some((
                4.0 + 8.0 * (i % 3) as f32,
                3.0 + 6.5 * (i / 3) as f32,
                rng.gen_range(4.0..7.0),
            )),
        }
    }
}

/// Per-subject deviations from the class templates.
#[derive(Debug, Clone, Copy)]
struct SubjectJitter {
    amp_scale: f32,
    mag: [f32; 3],
    distance: f32,
    blob_shift: (f32, f32),
}

impl SubjectJitter {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut n = |s: f32| s * rng.sample::<f32, _>(StandardNormal);
        Self {
            amp_scale: 1.0 + n(0.1),
            mag: [n(0.1), n(0.1), n(0.1)],
            distance: n(5.0),
            blob_shift: (n(1.0), n(1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub templates: Vec<ClassTemplate>,
    /// Full-width recordings, ordered by subject then session.
    pub recordings: Vec<Recording>,
}

impl SynthDataset {
    /// Windows of every recording projected onto `group`.
    pub fn windows(
        &self,
        group: ChannelGroup,
        window_len: usize,
        stride: usize,
    ) -> Result<Vec<WindowedSample>, DataError> {
        let mut out = Vec::new();
        for rec in &self.recordings {
            let r = select_channels(rec, group)?;
            out.extend(make_windows(core::slice::from_ref(&r), window_len, stride)?);
        }
        Ok(out)
    }

    /// Frames per class over all recordings.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in &self.recordings {
            for &l in &r.labels {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

fn sq<T: Float>(x: T) -> T {
    x * x
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f32) -> f32 {
    sigma * rng.sample::<f32, _>(StandardNormal)
}

/// Deterministic dataset for `cfg`; same config, same bytes.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset, DataError> {
    if cfg.subjects == 0 || cfg.sessions_per_subject == 0 {
        return Err(DataError::InvalidConfig(
            "need at least one subject and one session",
        ));
    }
    if !(cfg.duration_s.is_finite() && cfg.duration_s * SYNC_RATE_HZ >= cfg.window_len as f64) {
        return Err(DataError::InvalidConfig(
            "duration must cover at least one window",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut templates = vec![ClassTemplate::null()];
    for c in 1..NUM_CLASSES {
        templates.push(ClassTemplate::activity(c, &mut rng));
    }
    let mut recordings = Vec::new();
    for subject in 0..cfg.subjects {
        let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed);
        srng.set_stream(1 + subject as u64);
        let jitter = SubjectJitter::draw(&mut srng);
        for session in 1..=cfg.sessions_per_subject {
            let mut rrng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rrng.set_stream((1 << 32) | ((subject as u64) << 8) | session as u64);
            recordings.push(generate_recording(
                cfg, &templates, &jitter, subject, session, &mut rrng,
            ));
        }
    }
    Ok(SynthDataset {
        config: *cfg,
        templates,
        recordings,
    })
}

fn generate_recording(
    cfg: &SynthConfig,
    templates: &[ClassTemplate],
    jitter: &SubjectJitter,
    subject: u16,
    session: u8,
    rng: &mut ChaCha8Rng,
) -> Recording {
    let n = Float::round(cfg.duration_s * SYNC_RATE_HZ) as usize;
    let mut data = Vec::with_capacity(n * NUM_CHANNELS);
    let mut labels = Vec::with_capacity(n);
    let mut blob_img = vec![0.0f32; THERMAL_ROWS * THERMAL_COLS];
    let mut activity = false;
    while labels.len() < n {
        let seg_s = rng.gen_range(SEGMENT_MIN_S..SEGMENT_MAX_S);
        let seg_len = (Float::round(seg_s * SYNC_RATE_HZ) as usize).min(n - labels.len());
        let class = if activity {
            rng.gen_range(1..NUM_CLASSES)
        } else {
            NULL_CLASS as usize
        };
        activity = !activity;
        let tpl = &templates[class];
        let phases: [f32; 6] = core::array::from_fn(|_| rng.gen_range(0.0..core::f32::consts::TAU));
        blob_img.iter_mut().for_each(|v| *v = 0.0);
        if let Some((r0, c0, amp)) = tpl.blob {
            let r0 = r0 + jitter.blob_shift.0 + gauss(rng, 0.5);
            let c0 = c0 + jitter.blob_shift.1 + gauss(rng, 0.5);
            for r in 0..THERMAL_ROWS {
                for c in 0..THERMAL_COLS {
                    let d2 = sq(r as f32 - r0) + sq(c as f32 - c0);
                    blob_img[r * THERMAL_COLS + c] =
                        amp * Float::exp(-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA));
                }
            }
        }
        for k in 0..seg_len {
            let t_s = k as f32 * (GRID_MS / 1000.0) as f32;
            let w = core::f32::consts::TAU * tpl.imu_freq_hz * t_s;
            for (axis, (&amp, &ph)) in tpl.imu_amp.iter().zip(&phases).enumerate() {
                let base = if axis == 2 { 9.81 } else { 0.0 };
                data.push(
                    base + jitter.amp_scale * amp * Float::sin(w + ph) + gauss(rng, NOISE_IMU),
                );
            }
            for (&m, &dm) in tpl.mag.iter().zip(&jitter.mag) {
                data.push(m + dm + gauss(rng, NOISE_MAG));
            }
            data.push(tpl.barometer + gauss(rng, NOISE_BARO));
            data.push(tpl.distance + jitter.distance + gauss(rng, NOISE_DIST));
            for (&g, &slope) in tpl.gas.iter().zip(&tpl.gas_slope) {
                data.push(g + slope * t_s + gauss(rng, NOISE_GAS));
            }
            for &o in &tpl.optical {
                data.push(o + gauss(rng, NOISE_OPTICAL));
            }
            for &b in &blob_img {
                data.push(THERMAL_BASE + b + gauss(rng, NOISE_THERMAL));
            }
            labels.push(class as u8);
        }
    }
    debug_assert_eq!(data.len(), n * NUM_CHANNELS);
    debug_assert_eq!(layout::THERMAL.end, NUM_CHANNELS);
    Recording {
        subject,
        session,
        group: ChannelGroup::G791,
        timestamps_ms: (0..n).map(|k| k as f64 * GRID_MS).collect(),
        data,
        labels,
    }
}

/// Nearest-centroid classifier on per-channel window mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    centroids: Vec<Option<Vec<f64>>>,
    scale: Vec<f64>,
}

fn features(w: &crate::Tensor2D) -> Vec<f64> {
    let ch = w.channels();
    let n = w.steps() as f64;
    let mut mean = vec![0.0f64; ch];
    for t in 0..w.steps() {
        for (m, &v) in mean.iter_mut().zip(w.row(t)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; ch];
    for t in 0..w.steps() {
        for ((s, &v), &m) in var.iter_mut().zip(w.row(t)).zip(&mean) {
            *s += sq(v as f64 - m);
        }
    }
    mean.extend(var.iter().map(|&s| Float::sqrt(s / n)));
    mean
}

impl NearestCentroid {
    pub fn fit(samples: &[WindowedSample]) -> Result<Self, DataError> {
        let first = samples.first().ok_or(DataError::InvalidConfig(
            "cannot fit centroids on an empty split",
        ))?;
        let dim = 2 * first.window.channels();
        let mut sums = vec![vec![0.0f64; dim]; NUM_CLASSES];
        let mut counts = [0usize; NUM_CLASSES];
        let mut all = Vec::with_capacity(samples.len());
        for s in samples {
            let f = features(&s.window);
            let l = s.label as usize;
            if l >= NUM_CLASSES {
                return Err(DataError::BadLabel(s.label));
            }
            for (a, v) in sums[l].iter_mut().zip(&f) {
                *a += v;
            }
            counts[l] += 1;
            all.push(f);
        }
        let centroids: Vec<Option<Vec<f64>>> = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
            .collect();
        // feature spread, so wide-range channels do not dominate the distance
        let n = all.len() as f64;
        let scale = (0..dim)
            .map(|j| {
                let m = all.iter().map(|f| f[j]).sum::<f64>() / n;
                let v = all.iter().map(|f| sq(f[j] - m)).sum::<f64>() / n;
                if v > 0.0 {
                    1.0 / Float::sqrt(v)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self { centroids, scale })
    }

    pub fn predict(&self, window: &crate::Tensor2D) -> u8 {
        let f = features(window);
        let mut best = (f64::INFINITY, NULL_CLASS);
        for (class, c) in self.centroids.iter().enumerate() {
            if let Some(c) = c {
                let d: f64 = f
                    .iter()
                    .zip(c)
                    .zip(&self.scale)
                    .map(|((a, b), s)| sq((a - b) * s))
                    .sum();
                if d < best.0 {
                    best = (d, class as u8);
                }
            }
        }
        best.1
    }

    pub fn accuracy(&self, samples: &[WindowedSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|s| self.predict(&s.window) == s.label)
            .count();
        hits as f64 / samples.len() as f64
    }
}
