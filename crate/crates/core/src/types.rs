//! Domain values shared across the pipeline.

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};

/// Class of a sample or window. Integer codes are stable across every file
/// and wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassId {
    NonTarget = 0,
    TrueTarget = 1,
    ErrorTarget = 2,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [
        ClassId::NonTarget,
        ClassId::TrueTarget,
        ClassId::ErrorTarget,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ClassId::NonTarget),
            1 => Some(ClassId::TrueTarget),
            2 => Some(ClassId::ErrorTarget),
            _ => None,
        }
    }

    pub fn is_target(self) -> bool {
        self != ClassId::NonTarget
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ClassId::NonTarget => "non_target",
            ClassId::TrueTarget => "true_target",
            ClassId::ErrorTarget => "error_target",
        };
        f.write_str(name)
    }
}

/// Multichannel EEG, `[n_channels x n_samples]` in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    sampling_rate: f64,
    channel_names: Vec<String>,
    samples: Array2<f32>,
}

impl Recording {
    pub fn new(
        sampling_rate: f64,
        channel_names: Vec<String>,
        samples: Array2<f32>,
    ) -> Result<Self> {
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return invalid(format!(
                "sampling rate must be positive, got {sampling_rate}"
            ));
        }
        if channel_names.len() != samples.nrows() {
            return Err(Error::Dimension {
                expected: format!("{} channel rows", channel_names.len()),
                got: format!("{} rows", samples.nrows()),
            });
        }
        let mut seen = HashSet::new();
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return invalid(format!("duplicate channel name {name:?}"));
            }
        }
        if let Some(((c, t), v)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return invalid(format!("non-finite sample {v} at channel {c}, time {t}"));
        }
        Ok(Self {
            sampling_rate,
            channel_names,
            samples,
        })
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn samples(&self) -> &Array2<f32> {
        &self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(label))
            .ok_or_else(|| Error::UnknownChannel(label.to_string()))
    }

    pub fn into_samples(self) -> Array2<f32> {
        self.samples
    }
}

/// A target appearance. `duration` defaults to one second of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub onset: usize,
    pub class_id: ClassId,
    pub duration: usize,
}

impl Event {
    pub fn end(&self) -> usize {
        self.onset.saturating_add(self.duration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DynamicsKind {
    CameraRotation,
    WeatherShift,
}

impl DynamicsKind {
    pub fn code(self) -> u32 {
        match self {
            DynamicsKind::CameraRotation => 100,
            DynamicsKind::WeatherShift => 101,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            100 => Some(DynamicsKind::CameraRotation),
            101 => Some(DynamicsKind::WeatherShift),
            _ => None,
        }
    }
}

/// A video-dynamics (confounder) interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicsEvent {
    pub onset: usize,
    pub kind: DynamicsKind,
    pub duration: usize,
}

impl DynamicsEvent {
    pub fn end(&self) -> usize {
        self.onset.saturating_add(self.duration)
    }
}

/// Timed targets and dynamics for one stimulus video.
///
/// Targets are sorted by onset, their spans `[onset, onset + duration)` are
/// pairwise disjoint, and every span lies inside `[0, total_samples)`.
/// Dynamics are kept ordered by onset, then kind code.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSchedule {
    total_samples: usize,
    sampling_rate: f64,
    targets: Vec<Event>,
    dynamics: Vec<DynamicsEvent>,
}

impl EventSchedule {
    pub fn new(
        total_samples: usize,
        sampling_rate: f64,
        targets: Vec<Event>,
        mut dynamics: Vec<DynamicsEvent>,
    ) -> Result<Self> {
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(Error::Schedule(format!(
                "sampling rate must be positive, got {sampling_rate}"
            )));
        }
        for (i, ev) in targets.iter().enumerate() {
            if !ev.class_id.is_target() {
                return Err(Error::Event {
                    index: i,
                    msg: "target event cannot be NonTarget".into(),
                });
            }
            if ev.duration == 0 {
                return Err(Error::Event {
                    index: i,
                    msg: "duration must be positive".into(),
                });
            }
            if ev.end() > total_samples {
                return Err(Error::Event {
                    index: i,
                    msg: format!(
                        "span [{}, {}) exceeds {} samples",
                        ev.onset,
                        ev.end(),
                        total_samples
                    ),
                });
            }
            if i > 0 {
                let prev = &targets[i - 1];
                if ev.onset < prev.onset {
                    return Err(Error::Event {
                        index: i,
                        msg: "targets not sorted by onset".into(),
                    });
                }
                if ev.onset < prev.end() {
                    return Err(Error::Event {
                        index: i,
                        msg: format!("overlaps previous target [{}, {})", prev.onset, prev.end()),
                    });
                }
            }
        }
        for (i, d) in dynamics.iter().enumerate() {
            if d.duration == 0 || d.end() > total_samples {
                return Err(Error::Schedule(format!(
                    "dynamics event {i} span [{}, {}) invalid for {} samples",
                    d.onset,
                    d.end(),
                    total_samples
                )));
            }
        }
        dynamics.sort_by_key(|d| (d.onset, d.kind.code()));
        Ok(Self {
            total_samples,
            sampling_rate,
            targets,
            dynamics,
        })
    }

    pub fn total_samples(&self) -> usize {
        self.total_samples
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn targets(&self) -> &[Event] {
        &self.targets
    }

    pub fn dynamics(&self) -> &[DynamicsEvent] {
        &self.dynamics
    }

    pub fn rotations(&self) -> impl Iterator<Item = &DynamicsEvent> {
        self.dynamics
            .iter()
            .filter(|d| d.kind == DynamicsKind::CameraRotation)
    }
}

/// Per-sample class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTrack {
    pub labels: Vec<ClassId>,
}

impl LabelTrack {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// True when no sample in `[start, start + len)` carries a target label.
    pub fn span_is_nontarget(&self, start: usize, len: usize) -> bool {
        self.labels[start..start + len]
            .iter()
            .all(|&c| c == ClassId::NonTarget)
    }
}

/// A labeled `[n_channels x window_len]` window cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub data: Array2<f32>,
    pub label: ClassId,
    pub source_onset: usize,
}

impl Epoch {
    pub fn window_len(&self) -> usize {
        self.data.ncols()
    }
}
