//! ERP grand averages and channel-importance maps.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::dataset::assign_labels;
use crate::error::{Error, Result};
use crate::metrics::{macro_f_beta, ConfusionMatrix, MetricConfig};
use crate::model::{standardize, HierarchicalModel};
use crate::montage;
use crate::rng::{substream, Stream};
use crate::types::{ClassId, Epoch, EventSchedule, Recording};

/// Averaging class: the three labels plus the camera-rotation pseudo-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErpClass {
    NonTarget,
    TrueTarget,
    ErrorTarget,
    CameraRotation,
}

impl fmt::Display for ErpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErpClass::NonTarget => "non_target",
            ErpClass::TrueTarget => "true_target",
            ErpClass::ErrorTarget => "error_target",
            ErpClass::CameraRotation => "camera_rotation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErpConfig {
    pub horizon_s: f64,
    pub baseline_s: f64,
    /// Random onsets for the NonTarget baseline; `None` uses the target count.
    pub nontarget_trials: Option<usize>,
    pub seed: u64,
}

impl Default for ErpConfig {
    fn default() -> Self {
        Self {
            horizon_s: 3.0,
            baseline_s: 0.2,
            nontarget_trials: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAverage {
    pub class: ErpClass,
    pub n_trials: usize,
    /// Trials dropped for lacking baseline or horizon samples.
    pub skipped: usize,
    /// One waveform per requested channel, in request order.
    pub waveforms: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErpResult {
    pub channels: Vec<String>,
    pub sampling_rate: f64,
    pub classes: Vec<ClassAverage>,
    pub notes: Vec<String>,
}

impl ErpResult {
    pub fn class(&self, class: ErpClass) -> Option<&ClassAverage> {
        self.classes.iter().find(|c| c.class == class)
    }
}

fn average(
    rec: &Recording,
    rows: &[usize],
    onsets: &[usize],
    horizon: usize,
    baseline: usize,
) -> (Vec<Vec<f64>>, usize, usize) {
    let x = rec.samples();
    let n = rec.n_samples();
    let mut sums = vec![vec![0.0; horizon]; rows.len()];
    let (mut used, mut skipped) = (0, 0);
    for &onset in onsets {
        if onset < baseline || onset + horizon > n {
            skipped += 1;
            continue;
        }
        used += 1;
        for (sum, &r) in sums.iter_mut().zip(rows) {
            let row = x.row(r);
            let base = if baseline == 0 {
                0.0
            } else {
                (onset - baseline..onset)
                    .map(|t| row[t] as f64)
                    .sum::<f64>()
                    / baseline as f64
            };
            for (i, s) in sum.iter_mut().enumerate() {
                *s += row[onset + i] as f64 - base;
            }
        }
    }
    if used > 0 {
        for s in sums.iter_mut().flatten() {
            *s /= used as f64;
        }
    }
    (sums, used, skipped)
}

/// Baseline-corrected grand averages per class and requested channel.
///
/// Classes without usable trials are left out and mentioned in `notes`.
pub fn grand_average_erp(
    rec: &Recording,
    schedule: &EventSchedule,
    channels: &[&str],
    cfg: &ErpConfig,
) -> Result<ErpResult> {
    if !(cfg.horizon_s > 0.0 && cfg.baseline_s >= 0.0) {
        return Err(Error::Invalid(
            "horizon must be positive and baseline non-negative".into(),
        ));
    }
    let rows = channels
        .iter()
        .map(|c| rec.channel_index(c))
        .collect::<Result<Vec<_>>>()?;
    let rate = rec.sampling_rate();
    let horizon = (cfg.horizon_s * rate).round() as usize;
    let baseline = (cfg.baseline_s * rate).round() as usize;
    let n = rec.n_samples();

    let mut groups: Vec<(ErpClass, Vec<usize>)> = vec![
        (ErpClass::TrueTarget, vec![]),
        (ErpClass::ErrorTarget, vec![]),
        (
            ErpClass::CameraRotation,
            schedule.rotations().map(|d| d.onset).collect(),
        ),
    ];
    for ev in schedule.targets() {
        let idx = if ev.class_id == ClassId::TrueTarget {
            0
        } else {
            1
        };
        groups[idx].1.push(ev.onset);
    }

    // random onsets whose whole analysis span is free of target labels
    let labels = assign_labels(schedule);
    let span = baseline + horizon;
    let mut eligible = Vec::new();
    if n >= span {
        let mut run = 0usize;
        for (t, &l) in labels.labels.iter().enumerate() {
            run = if l == ClassId::NonTarget { run + 1 } else { 0 };
            if run >= span {
                eligible.push(t + 1 - span + baseline);
            }
        }
    }
    let want = cfg.nontarget_trials.unwrap_or(schedule.targets().len());
    let mut rng = substream(cfg.seed, Stream::Baseline);
    let mut nontarget: Vec<usize> = if eligible.is_empty() {
        vec![]
    } else {
        (0..want)
            .map(|_| eligible[rng.random_range(0..eligible.len())])
            .collect()
    };
    nontarget.sort_unstable();
    groups.insert(0, (ErpClass::NonTarget, nontarget));

    let mut result = ErpResult {
        channels: channels.iter().map(|s| s.to_string()).collect(),
        sampling_rate: rate,
        classes: vec![],
        notes: vec![],
    };
    for (class, onsets) in groups {
        let (waveforms, used, skipped) = average(rec, &rows, &onsets, horizon, baseline);
        if skipped > 0 {
            result.notes.push(format!(
                "{class}: {skipped} trials too close to the recording edge"
            ));
        }
        if used == 0 {
            result
                .notes
                .push(format!("{class}: no usable trials, class omitted"));
            continue;
        }
        result.classes.push(ClassAverage {
            class,
            n_trials: used,
            skipped,
            waveforms,
        });
    }
    Ok(result)
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    pub baseline: f64,
    /// `baseline − ablated` macro F_β per channel.
    pub importance: Vec<f64>,
}

fn check_eval_set(model: &HierarchicalModel, epochs: &[Epoch]) -> Result<()> {
    if epochs.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let want = (model.config().n_channels, model.config().window_len);
    if let Some(e) = epochs.iter().find(|e| e.data.dim() != want) {
        return Err(Error::Dimension {
            expected: format!("{want:?}"),
            got: format!("{:?}", e.data.dim()),
        });
    }
    Ok(())
}

/// Window-level macro F_β drop when each channel is zeroed after
/// standardization.
pub fn occlusion_saliency(
    model: &HierarchicalModel,
    epochs: &[Epoch],
    cfg: &MetricConfig,
) -> Result<Occlusion> {
    check_eval_set(model, epochs)?;
    let inputs: Vec<_> = epochs.iter().map(|e| standardize(e.data.view())).collect();
    let score = |ablate: Option<usize>| -> Result<f64> {
        let mut cm = ConfusionMatrix::default();
        for (x, e) in inputs.iter().zip(epochs) {
            let pred = match ablate {
                Some(c) => {
                    let mut x = x.clone();
                    x.row_mut(c).fill(0.0);
                    model.predict(x.view())?.0
                }
                None => model.predict(x.view())?.0,
            };
            cm.add(e.label, pred);
        }
        Ok(macro_f_beta(&cm, cfg))
    };
    let baseline = score(None)?;
    let importance = (0..model.config().n_channels)
        .map(|c| score(Some(c)).map(|s| baseline - s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Occlusion {
        baseline,
        importance,
    })
}

/// Mean |∂loss/∂input| per channel over time and epochs, dropout off.
pub fn gradient_saliency(model: &HierarchicalModel, epochs: &[Epoch]) -> Result<Vec<f64>> {
    check_eval_set(model, epochs)?;
    let (c, t) = (model.config().n_channels, model.config().window_len);
    let mut acc = vec![0.0; c];
    for e in epochs {
        let x = standardize(e.data.view());
        let bw = model.backward::<rand_chacha::ChaCha8Rng>(x.view(), e.label, None, true)?;
        let g = bw.input_grad.expect("input gradient requested");
        for (a, row) in acc.iter_mut().zip(g.rows()) {
            *a += row.iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    let denom = (epochs.len() * t) as f64;
    Ok(acc.into_iter().map(|v| v / denom).collect())
}

pub fn write_erp_csv<W: Write>(erp: &ErpResult, mut sink: W) -> Result<()> {
    writeln!(sink, "class,channel,time_s,value_uv")?;
    for class in &erp.classes {
        for (ch, wave) in erp.channels.iter().zip(&class.waveforms) {
            for (i, v) in wave.iter().enumerate() {
                writeln!(
                    sink,
                    "{},{},{:.4},{:.6}",
                    class.class,
                    ch,
                    i as f64 / erp.sampling_rate,
                    v
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_saliency_csv<W: Write>(
    channels: &[String],
    occlusion: &[f64],
    gradient: &[f64],
    mut sink: W,
) -> Result<()> {
    if channels.len() != occlusion.len() || channels.len() != gradient.len() {
        return Err(Error::Dimension {
            expected: format!("{} values per method", channels.len()),
            got: format!("{} and {}", occlusion.len(), gradient.len()),
        });
    }
    writeln!(sink, "channel,occlusion_importance,gradient_saliency")?;
    for ((ch, o), g) in channels.iter().zip(occlusion).zip(gradient) {
        writeln!(sink, "{ch},{o:.6},{g:.6e}")?;
    }
    Ok(())
}

pub fn write_layout_csv<W: Write>(mut sink: W) -> Result<()> {
    writeln!(sink, "channel,x,y")?;
    for (ch, x, y) in montage::layout() {
        writeln!(sink, "{ch},{x},{y}")?;
    }
    Ok(())
}
