//! Synthetic stimulus schedules and EEG.
//!
//! The signal model is additive: low-pass filtered background noise per
//! channel, a spatially weighted N200/P300-like template per target event,
//! and a phase-locked broadband burst per camera rotation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::montage::{self, STANDARD_32};
use crate::rng::{substream, substream_indexed, Stream};
use crate::types::{ClassId, DynamicsEvent, DynamicsKind, Event, EventSchedule, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoKind {
    Video1,
    Video2N,
    Video2AI,
}

impl FromStr for VideoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "video1" => Ok(VideoKind::Video1),
            "video2n" => Ok(VideoKind::Video2N),
            "video2ai" => Ok(VideoKind::Video2AI),
            other => Err(Error::Invalid(format!(
                "unknown profile {other:?} (video1|video2n|video2ai)"
            ))),
        }
    }
}

impl fmt::Display for VideoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VideoKind::Video1 => "video1",
            VideoKind::Video2N => "video2n",
            VideoKind::Video2AI => "video2ai",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusProfile {
    pub name: VideoKind,
    pub length_s: f64,
    pub sampling_rate: f64,
    pub events_per_class: usize,
    pub target_duration_s: f64,
    /// Minimum gap between the end of one target and the next onset.
    pub min_separation_s: f64,
    /// Keep-out zone at both ends of the recording.
    pub edge_margin_s: f64,
    pub rotation_period_s: Option<f64>,
    pub rotation_duration_s: f64,
    pub weather_drift: bool,
    pub bbox_cue: bool,
    /// Targets only appear while the camera is steady (between rotations).
    pub targets_while_steady: bool,
}

impl StimulusProfile {
    pub fn video1() -> Self {
        Self {
            name: VideoKind::Video1,
            length_s: 300.0,
            sampling_rate: 250.0,
            events_per_class: 20,
            target_duration_s: 1.0,
            min_separation_s: 3.0,
            edge_margin_s: 3.0,
            rotation_period_s: None,
            rotation_duration_s: 3.0,
            weather_drift: false,
            bbox_cue: false,
            targets_while_steady: false,
        }
    }

    pub fn video2n() -> Self {
        Self {
            name: VideoKind::Video2N,
            length_s: 480.0,
            events_per_class: 30,
            rotation_period_s: Some(5.0),
            weather_drift: true,
            targets_while_steady: true,
            ..Self::video1()
        }
    }

    pub fn video2ai() -> Self {
        Self {
            name: VideoKind::Video2AI,
            bbox_cue: true,
            ..Self::video2n()
        }
    }

    pub fn for_kind(kind: VideoKind) -> Self {
        match kind {
            VideoKind::Video1 => Self::video1(),
            VideoKind::Video2N => Self::video2n(),
            VideoKind::Video2AI => Self::video2ai(),
        }
    }

    fn samples(&self, seconds: f64) -> usize {
        (seconds * self.sampling_rate).round() as usize
    }

    pub fn total_samples(&self) -> usize {
        self.samples(self.length_s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.events_per_class == 0 {
            return Err(Error::Invalid("events_per_class must be at least 1".into()));
        }
        if !(self.sampling_rate > 0.0 && self.length_s > 0.0 && self.target_duration_s > 0.0) {
            return Err(Error::Invalid(
                "profile lengths and rate must be positive".into(),
            ));
        }
        if let Some(p) = self.rotation_period_s {
            if !(p > 0.0 && self.rotation_duration_s > 0.0 && self.rotation_duration_s <= p) {
                return Err(Error::Invalid(
                    "rotation duration must fit in its period".into(),
                ));
            }
        }
        let n = 2 * self.events_per_class;
        let needed = 2.0 * self.edge_margin_s
            + n as f64 * self.target_duration_s
            + (n - 1) as f64 * self.min_separation_s;
        if needed > self.length_s {
            return Err(Error::Invalid(format!(
                "{n} targets with margins need {needed} s, profile is {} s",
                self.length_s
            )));
        }
        Ok(())
    }
}

/// Builds a deterministic schedule: `events_per_class` true and error
/// targets in random order, plus rotation and weather dynamics when the
/// profile has them.
pub fn make_schedule(profile: &StimulusProfile, seed: u64) -> Result<EventSchedule> {
    profile.validate()?;
    let mut rng = substream(seed, Stream::Schedule);
    let total = profile.total_samples();
    let dur = profile.samples(profile.target_duration_s);
    let gap = profile.samples(profile.min_separation_s);
    let edge = profile.samples(profile.edge_margin_s);
    let n = 2 * profile.events_per_class;
    let last_onset = total
        .checked_sub(edge + dur)
        .ok_or_else(|| Error::Schedule("recording shorter than its margins".into()))?;

    let mut dynamics = Vec::new();
    if let Some(period_s) = profile.rotation_period_s {
        let period = profile.samples(period_s);
        let rot = profile.samples(profile.rotation_duration_s);
        let mut onset = 0;
        while onset + rot <= total {
            dynamics.push(DynamicsEvent {
                onset,
                kind: DynamicsKind::CameraRotation,
                duration: rot,
            });
            onset += period;
        }
    }
    if profile.weather_drift {
        let half = total / 2;
        dynamics.push(DynamicsEvent {
            onset: half,
            kind: DynamicsKind::WeatherShift,
            duration: total - half,
        });
    }

    let onsets: Vec<usize> = match profile.rotation_period_s {
        Some(period_s) if profile.targets_while_steady => {
            let period = profile.samples(period_s);
            let rot = profile.samples(profile.rotation_duration_s);
            if period < rot + dur {
                return Err(Error::Schedule(
                    "steady interval shorter than a target".into(),
                ));
            }
            // one candidate per rotation cycle: onset range inside the steady part
            let mut cycles: Vec<(usize, usize)> = (0..)
                .map(|k| (k * period + rot, (k + 1) * period - dur))
                .take_while(|&(lo, _)| lo <= last_onset)
                .filter(|&(lo, hi)| lo >= edge && hi <= last_onset)
                .collect();
            if cycles.len() < n {
                return Err(Error::Schedule(format!(
                    "{} steady intervals for {n} targets",
                    cycles.len()
                )));
            }
            cycles.shuffle(&mut rng);
            cycles.truncate(n);
            cycles.sort();
            cycles
                .into_iter()
                .map(|(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        }
        _ => {
            // uniform over all configurations with the required spacing
            let span = last_onset - edge;
            let fixed = (n - 1) * (dur + gap);
            let slack = span.checked_sub(fixed).ok_or_else(|| {
                Error::Schedule(format!("cannot place {n} targets with {gap}-sample gaps"))
            })?;
            let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
            offsets.sort();
            offsets
                .iter()
                .enumerate()
                .map(|(i, u)| edge + u + i * (dur + gap))
                .collect()
        }
    };

    for w in onsets.windows(2) {
        if w[1] < w[0] + dur + gap {
            return Err(Error::Schedule(format!(
                "targets at {} and {} closer than required",
                w[0], w[1]
            )));
        }
    }

    let mut classes: Vec<ClassId> =
        std::iter::repeat_n(ClassId::TrueTarget, profile.events_per_class)
            .chain(std::iter::repeat_n(
                ClassId::ErrorTarget,
                profile.events_per_class,
            ))
            .collect();
    classes.shuffle(&mut rng);
    let targets = onsets
        .into_iter()
        .zip(classes)
        .map(|(onset, class_id)| Event {
            onset,
            class_id,
            duration: dur,
        })
        .collect();
    EventSchedule::new(total, profile.sampling_rate, targets, dynamics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub channels: Vec<String>,
    pub sampling_rate: f64,
    /// Standard deviation of the background noise, µV.
    pub background_sigma: f64,
    /// Corner frequency of the first-order low-pass shaping the background.
    pub background_cutoff_hz: f64,
    pub erp_amp_true: f64,
    pub erp_amp_error: f64,
    pub erp_latency_s: f64,
    pub erp_width_s: f64,
    pub n200_amp: f64,
    pub n200_latency_s: f64,
    pub n200_width_s: f64,
    /// RMS of the rotation burst at its peak channel, µV.
    pub confound_amp: f64,
    pub spatial_peak_target: String,
    pub spatial_peak_confound: String,
    pub spatial_sigma: f64,
    pub weather_period_s: f64,
    pub weather_depth: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: STANDARD_32.iter().map(|s| s.to_string()).collect(),
            sampling_rate: 250.0,
            background_sigma: 10.0,
            background_cutoff_hz: 40.0,
            erp_amp_true: 8.0,
            erp_amp_error: 5.0,
            erp_latency_s: 0.30,
            erp_width_s: 0.08,
            n200_amp: -4.0,
            n200_latency_s: 0.20,
            n200_width_s: 0.025,
            confound_amp: 0.0,
            spatial_peak_target: "Cz".into(),
            spatial_peak_confound: "Oz".into(),
            spatial_sigma: 0.35,
            weather_period_s: 60.0,
            weather_depth: 0.2,
            seed: 0,
        }
    }
}

/// Frequencies (Hz) and phases of the rotation burst carrier.
const BURST_COMPONENTS: [(f64, f64); 5] =
    [(3.0, 0.3), (5.0, 1.9), (8.0, 4.1), (13.0, 2.6), (21.0, 5.3)];

/// Analysis window of a target template, seconds after onset.
const TEMPLATE_SPAN_S: f64 = 1.0;

impl SynthConfig {
    /// Defaults for a profile: rotating profiles get a 12 µV confounder.
    pub fn for_profile(profile: &StimulusProfile) -> Self {
        let confound_amp = if profile.rotation_period_s.is_some() {
            12.0
        } else {
            0.0
        };
        Self {
            confound_amp,
            sampling_rate: profile.sampling_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let amps = [
            self.background_sigma,
            self.erp_amp_true,
            self.erp_amp_error,
            self.n200_amp,
            self.confound_amp,
            self.weather_depth,
        ];
        if amps.iter().any(|a| !a.is_finite()) || self.background_sigma < 0.0 {
            return Err(Error::Invalid(
                "amplitudes must be finite and sigma non-negative".into(),
            ));
        }
        if !(self.sampling_rate > 0.0
            && self.spatial_sigma > 0.0
            && self.erp_width_s > 0.0
            && self.n200_width_s > 0.0)
        {
            return Err(Error::Invalid("rates and widths must be positive".into()));
        }
        if self.erp_latency_s >= TEMPLATE_SPAN_S || self.n200_latency_s >= TEMPLATE_SPAN_S {
            return Err(Error::Invalid(format!(
                "latencies must be below {TEMPLATE_SPAN_S} s"
            )));
        }
        if self.background_cutoff_hz.is_nan() || self.background_cutoff_hz <= 0.0 {
            return Err(Error::Invalid("background cutoff must be positive".into()));
        }
        for label in self
            .channels
            .iter()
            .chain([&self.spatial_peak_target, &self.spatial_peak_confound])
        {
            if montage::position(label).is_none() {
                return Err(Error::UnknownChannel(label.clone()));
            }
        }
        Ok(())
    }

    fn class_amp(&self, class: ClassId) -> f64 {
        match class {
            ClassId::TrueTarget => self.erp_amp_true,
            ClassId::ErrorTarget => self.erp_amp_error,
            ClassId::NonTarget => 0.0,
        }
    }

    pub fn target_weight(&self, channel: &str) -> Result<f64> {
        montage::spatial_weight(channel, &self.spatial_peak_target, self.spatial_sigma)
            .ok_or_else(|| Error::UnknownChannel(channel.to_string()))
    }

    pub fn confound_weight(&self, channel: &str) -> Result<f64> {
        montage::spatial_weight(channel, &self.spatial_peak_confound, self.spatial_sigma)
            .ok_or_else(|| Error::UnknownChannel(channel.to_string()))
    }

    /// Unweighted target waveform at `t` seconds after onset.
    pub fn erp_value(&self, class: ClassId, t: f64) -> f64 {
        if class == ClassId::NonTarget {
            return 0.0;
        }
        let bump = |lat: f64, width: f64| (-(t - lat).powi(2) / (2.0 * width * width)).exp();
        self.class_amp(class) * bump(self.erp_latency_s, self.erp_width_s)
            + self.n200_amp * bump(self.n200_latency_s, self.n200_width_s)
    }

    /// Expected response at `channel` for `len` samples after a target onset.
    pub fn target_template(&self, class: ClassId, channel: &str, len: usize) -> Result<Vec<f64>> {
        let w = self.target_weight(channel)?;
        let span = self.template_len();
        Ok((0..len)
            .map(|i| {
                if i < span {
                    w * self.erp_value(class, i as f64 / self.sampling_rate)
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn template_len(&self) -> usize {
        (TEMPLATE_SPAN_S * self.sampling_rate).round() as usize
    }

    /// Unweighted burst for a rotation of `duration` samples, unit RMS
    /// carrier under a Hann envelope scaled by `confound_amp`.
    pub fn burst_waveform(&self, duration: usize) -> Vec<f64> {
        let norm = (BURST_COMPONENTS.len() as f64 / 2.0).sqrt();
        (0..duration)
            .map(|i| {
                let t = i as f64 / self.sampling_rate;
                let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / duration as f64).cos();
                let carrier: f64 = BURST_COMPONENTS
                    .iter()
                    .map(|&(f, ph)| (2.0 * PI * f * t + ph).sin())
                    .sum::<f64>()
                    / norm;
                self.confound_amp * env * carrier
            })
            .collect()
    }

    /// Expected rotation response at `channel` for `len` samples after onset.
    pub fn rotation_template(
        &self,
        channel: &str,
        duration: usize,
        len: usize,
    ) -> Result<Vec<f64>> {
        let w = self.confound_weight(channel)?;
        let burst = self.burst_waveform(duration);
        Ok((0..len)
            .map(|i| burst.get(i).map_or(0.0, |b| w * b))
            .collect())
    }

    pub fn with_erp_scale(&self, factor: f64) -> Self {
        Self {
            erp_amp_true: self.erp_amp_true * factor,
            erp_amp_error: self.erp_amp_error * factor,
            n200_amp: self.n200_amp * factor,
            ..self.clone()
        }
    }
}

/// Renders the additive signal model for `schedule`.
pub fn render_eeg(schedule: &EventSchedule, cfg: &SynthConfig) -> Result<Recording> {
    cfg.validate()?;
    if (schedule.sampling_rate() - cfg.sampling_rate).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "schedule rate {} Hz differs from synth rate {} Hz",
            schedule.sampling_rate(),
            cfg.sampling_rate
        )));
    }
    let n = schedule.total_samples();
    let n_ch = cfg.channels.len();
    let mut signal = Array2::<f64>::zeros((n_ch, n));

    // background gain: 1 outside weather spans, slow sinusoid inside
    let mut gain = vec![1.0f64; n];
    for d in schedule
        .dynamics()
        .iter()
        .filter(|d| d.kind == DynamicsKind::WeatherShift)
    {
        for (i, g) in gain[d.onset..d.end()].iter_mut().enumerate() {
            let t = i as f64 / cfg.sampling_rate;
            *g *= 1.0 + cfg.weather_depth * (2.0 * PI * t / cfg.weather_period_s).sin();
        }
    }

    if cfg.background_sigma > 0.0 {
        let a = (-2.0 * PI * cfg.background_cutoff_hz / cfg.sampling_rate).exp();
        let drive = (1.0 - a * a).sqrt() * cfg.background_sigma;
        for c in 0..n_ch {
            let mut rng = substream_indexed(cfg.seed, Stream::Background, c as u64);
            let mut y = cfg.background_sigma * rng.sample::<f64, _>(StandardNormal);
            for t in 0..n {
                if t > 0 {
                    y = a * y + drive * rng.sample::<f64, _>(StandardNormal);
                }
                signal[[c, t]] = gain[t] * y;
            }
        }
    }

    let span = cfg.template_len();
    let weights: Vec<(f64, f64)> = cfg
        .channels
        .iter()
        .map(|ch| Ok((cfg.target_weight(ch)?, cfg.confound_weight(ch)?)))
        .collect::<Result<_>>()?;

    for ev in schedule.targets() {
        let shape: Vec<f64> = (0..span)
            .map(|i| cfg.erp_value(ev.class_id, i as f64 / cfg.sampling_rate))
            .collect();
        let end = (ev.onset + span).min(n);
        for (c, &(w, _)) in weights.iter().enumerate() {
            for t in ev.onset..end {
                signal[[c, t]] += w * shape[t - ev.onset];
            }
        }
    }

    if cfg.confound_amp != 0.0 {
        for rot in schedule.rotations() {
            let burst = cfg.burst_waveform(rot.duration);
            for (c, &(_, w)) in weights.iter().enumerate() {
                for (i, b) in burst.iter().enumerate() {
                    signal[[c, rot.onset + i]] += w * b;
                }
            }
        }
    }

    Recording::new(
        cfg.sampling_rate,
        cfg.channels.clone(),
        signal.mapv(|v| v as f32),
    )
}

/// One recording per ERP amplitude, sharing a schedule. `amp` sets the
/// true-target amplitude; the other ERP amplitudes keep their ratio to it.
pub fn snr_sweep(
    profile: &StimulusProfile,
    cfg: &SynthConfig,
    amp_list: &[f64],
) -> Result<Vec<(f64, Recording, EventSchedule)>> {
    let schedule = make_schedule(profile, cfg.seed)?;
    amp_list
        .iter()
        .enumerate()
        .map(|(i, &amp)| {
            let mut c = if cfg.erp_amp_true != 0.0 {
                cfg.with_erp_scale(amp / cfg.erp_amp_true)
            } else {
                SynthConfig {
                    erp_amp_true: amp,
                    ..cfg.clone()
                }
            };
            c.seed = cfg.seed.wrapping_add(i as u64);
            Ok((amp, render_eeg(&schedule, &c)?, schedule.clone()))
        })
        .collect()
}
