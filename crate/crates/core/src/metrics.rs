//! Precision, recall, F-beta and macro F-beta over a 3x3 confusion matrix,
//! plus window-level and event-level (online detection) confusion builders.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{ClassId, EventSchedule, LabelTrack};

/// Default event-matching tolerance: 1.5 s at 250 Hz.
pub const DEFAULT_MATCH_TOLERANCE: usize = 375;

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, truth: ClassId, predicted: ClassId) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn row_sum(&self, c: ClassId) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn col_sum(&self, c: ClassId) -> u64 {
        self.counts.iter().map(|row| row[c.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "true\\pred {:>8} {:>8} {:>8}", 0, 1, 2)?;
        for (i, row) in self.counts.iter().enumerate() {
            writeln!(f, "{:>9} {:>8} {:>8} {:>8}", i, row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

/// Which way round the F-beta denominator weights recall and precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FBetaForm {
    /// `(1+b^2) p r / (b^2 p + r)`: beta > 1 emphasises recall.
    #[default]
    RecallWeighted,
    /// `(1+b^2) p r / (b^2 r + p)`, the denominator as literally printed in
    /// the source formula; beta > 1 then emphasises precision.
    LiteralEq4,
}

impl FromStr for FBetaForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recall" | "recall-weighted" | "recall_weighted" => Ok(FBetaForm::RecallWeighted),
            "literal" | "literal-eq4" | "literal_eq4" => Ok(FBetaForm::LiteralEq4),
            other => Err(Error::Invalid(format!(
                "unknown F-beta form {other:?} (use recall|literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub beta: f64,
    pub form: FBetaForm,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            form: FBetaForm::RecallWeighted,
        }
    }
}

/// One-vs-rest precision and recall for class `c`. Empty denominators give 0.
pub fn precision_recall(cm: &ConfusionMatrix, c: ClassId) -> (f64, f64) {
    let tp = cm.counts[c.index()][c.index()] as f64;
    let ratio = |den: u64| if den == 0 { 0.0 } else { tp / den as f64 };
    (ratio(cm.col_sum(c)), ratio(cm.row_sum(c)))
}

pub fn f_beta(precision: f64, recall: f64, cfg: &MetricConfig) -> f64 {
    let b2 = cfg.beta * cfg.beta;
    let den = match cfg.form {
        FBetaForm::RecallWeighted => b2 * precision + recall,
        FBetaForm::LiteralEq4 => b2 * recall + precision,
    };
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

pub fn per_class_f_beta(cm: &ConfusionMatrix, cfg: &MetricConfig) -> [f64; 3] {
    ClassId::ALL.map(|c| {
        let (p, r) = precision_recall(cm, c);
        f_beta(p, r, cfg)
    })
}

/// Unweighted mean of the per-class F-beta over all three classes.
pub fn macro_f_beta(cm: &ConfusionMatrix, cfg: &MetricConfig) -> f64 {
    per_class_f_beta(cm, cfg).iter().sum::<f64>() / 3.0
}

pub fn window_confusion(truth: &LabelTrack, predicted: &LabelTrack) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension {
            expected: format!("{} labels", truth.len()),
            got: format!("{} labels", predicted.len()),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.labels.iter().zip(&predicted.labels) {
        cm.add(t, p);
    }
    Ok(cm)
}

/// A detection emitted by the online engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub time: usize,
    pub class_id: ClassId,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventMatch {
    pub cm: ConfusionMatrix,
    /// (detection index, event index) pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching of time-sorted detections to target events.
///
/// Each detection takes the earliest unmatched event whose window
/// `[onset, onset + tolerance]` contains it. Unmatched detections count as
/// false positives in the NonTarget row; unmatched events as misses in the
/// NonTarget column.
pub fn match_detections(
    detections: &[Detection],
    schedule: &EventSchedule,
    tolerance: usize,
) -> Result<EventMatch> {
    if let Some(i) = detections.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(Error::Invalid(format!(
            "detections not time-sorted at index {}",
            i + 1
        )));
    }
    let events = schedule.targets();
    let mut matched = vec![false; events.len()];
    let mut cm = ConfusionMatrix::default();
    let mut pairs = Vec::new();
    // events are onset-sorted, so everything before `first_open` has expired
    let mut first_open = 0;
    for (di, det) in detections.iter().enumerate() {
        while first_open < events.len() && events[first_open].onset + tolerance < det.time {
            first_open += 1;
        }
        let hit = (first_open..events.len())
            .take_while(|&ei| events[ei].onset <= det.time)
            .find(|&ei| !matched[ei] && det.time <= events[ei].onset + tolerance);
        match hit {
            Some(ei) => {
                matched[ei] = true;
                cm.add(events[ei].class_id, det.class_id);
                pairs.push((di, ei));
            }
            None => cm.add(ClassId::NonTarget, det.class_id),
        }
    }
    for (ev, _) in events.iter().zip(&matched).filter(|(_, &m)| !m) {
        cm.add(ev.class_id, ClassId::NonTarget);
    }
    Ok(EventMatch { cm, pairs })
}
