//! Labeled training data from a recording and its schedule.

use ndarray::s;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{substream, substream_indexed, Stream};
use crate::types::{ClassId, Epoch, EventSchedule, LabelTrack, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub window_len: usize,
    pub stride: usize,
    /// Non-target epochs drawn per target event.
    pub nontarget_per_event: usize,
    /// Seed for negative sampling; the shuffle seed is separate so the
    /// epoch multiset does not depend on presentation order.
    pub sampling_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window_len: 250,
            stride: 25,
            nontarget_per_event: 14,
            sampling_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::Invalid(
                "window_len and stride must be positive".into(),
            ));
        }
        if !self.window_len.is_multiple_of(self.stride) {
            return Err(Error::Invalid(format!(
                "stride {} must divide window_len {}",
                self.stride, self.window_len
            )));
        }
        Ok(())
    }

    /// Windows emitted per target event (10 with the defaults).
    pub fn augment_factor(&self) -> usize {
        self.window_len / self.stride
    }
}

/// Per-sample labels: each target's half-open span `[onset, onset + duration)`
/// carries its class; everything else is NonTarget.
pub fn assign_labels(schedule: &EventSchedule) -> LabelTrack {
    let mut labels = vec![ClassId::NonTarget; schedule.total_samples()];
    for ev in schedule.targets() {
        labels[ev.onset..ev.end()].fill(ev.class_id);
    }
    LabelTrack { labels }
}

pub fn class_counts(track: &LabelTrack) -> [usize; 3] {
    let mut counts = [0; 3];
    for c in &track.labels {
        counts[c.index()] += 1;
    }
    counts
}

pub fn class_ratio(track: &LabelTrack) -> Result<[f64; 3]> {
    if track.is_empty() {
        return Err(Error::Empty("label track".into()));
    }
    let n = track.len() as f64;
    Ok(class_counts(track).map(|c| c as f64 / n))
}

fn window(rec: &Recording, start: usize, len: usize, label: ClassId) -> Epoch {
    Epoch {
        data: rec.samples().slice(s![.., start..start + len]).to_owned(),
        label,
        source_onset: start,
    }
}

/// Sliding-window augmentation of every target event: windows start at
/// `onset + k * stride` for `k in 0..window_len / stride`.
pub fn augment_minority(
    rec: &Recording,
    schedule: &EventSchedule,
    cfg: &DatasetConfig,
) -> Result<Vec<Epoch>> {
    cfg.validate()?;
    let factor = cfg.augment_factor();
    let mut out = Vec::with_capacity(schedule.targets().len() * factor);
    for (i, ev) in schedule.targets().iter().enumerate() {
        let last_end = ev.onset + (factor - 1) * cfg.stride + cfg.window_len;
        if last_end > rec.n_samples() {
            return Err(Error::Event {
                index: i,
                msg: format!(
                    "augmentation window ends at {last_end}, recording has {} samples",
                    rec.n_samples()
                ),
            });
        }
        for k in 0..factor {
            out.push(window(
                rec,
                ev.onset + k * cfg.stride,
                cfg.window_len,
                ev.class_id,
            ));
        }
    }
    Ok(out)
}

/// Draws `nontarget_per_event * n_events` windows uniformly among all start
/// positions whose span holds only NonTarget samples.
pub fn sample_nontarget(
    rec: &Recording,
    track: &LabelTrack,
    n_events: usize,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<Epoch>> {
    cfg.validate()?;
    if track.len() != rec.n_samples() {
        return Err(Error::Dimension {
            expected: format!("{} labels", rec.n_samples()),
            got: format!("{} labels", track.len()),
        });
    }
    let wanted = cfg.nontarget_per_event * n_events;
    if wanted == 0 {
        return Ok(Vec::new());
    }
    let valid = nontarget_starts(track, cfg.window_len);
    if valid.is_empty() {
        return Err(Error::Empty(
            "no all-NonTarget window available for negative sampling".into(),
        ));
    }
    let mut rng = substream(seed, Stream::Sampling);
    Ok((0..wanted)
        .map(|_| {
            let start = valid[rng.random_range(0..valid.len())];
            window(rec, start, cfg.window_len, ClassId::NonTarget)
        })
        .collect())
}

/// Start indices of every window of length `len` free of target labels.
pub fn nontarget_starts(track: &LabelTrack, len: usize) -> Vec<usize> {
    if track.len() < len {
        return Vec::new();
    }
    // run length of trailing NonTarget samples ending at each position
    let mut run = 0usize;
    let mut starts = Vec::new();
    for (i, c) in track.labels.iter().enumerate() {
        run = if *c == ClassId::NonTarget { run + 1 } else { 0 };
        if run >= len {
            starts.push(i + 1 - len);
        }
    }
    starts
}

/// Augmented targets plus sampled negatives (drawn with
/// `cfg.sampling_seed`), shuffled deterministically by `seed`.
pub fn build_dataset(
    rec: &Recording,
    schedule: &EventSchedule,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<Epoch>> {
    let track = assign_labels(schedule);
    let mut epochs = augment_minority(rec, schedule, cfg)?;
    epochs.extend(sample_nontarget(
        rec,
        &track,
        schedule.targets().len(),
        cfg,
        cfg.sampling_seed,
    )?);
    epochs.shuffle(&mut substream(seed, Stream::Shuffle));
    Ok(epochs)
}

/// Pools several sessions into one training set. Session `i` draws its
/// negatives from the `Sampling` sub-stream `i` of `seed`.
pub fn build_training_set(
    sessions: &[(Recording, EventSchedule)],
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<Epoch>> {
    let mut all = Vec::new();
    for (i, (rec, schedule)) in sessions.iter().enumerate() {
        let sampling_seed = substream_indexed(seed, Stream::Sampling, i as u64).random();
        let session_cfg = DatasetConfig {
            sampling_seed,
            ..*cfg
        };
        all.extend(build_dataset(rec, schedule, &session_cfg, seed)?);
    }
    Ok(all)
}
