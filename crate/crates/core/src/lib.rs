//! EEG single-trial video target detection.
//!
//! The crate covers the whole loop: synthetic stimulus schedules and EEG
//! ([`synth`]), label assignment and sliding-window augmentation
//! ([`dataset`]), a two-stage convolutional classifier trained with a single
//! three-class cross-entropy ([`model`]), a streaming replay protocol with an
//! online detection engine ([`stream`]), macro F-beta evaluation
//! ([`metrics`]) and ERP / channel-saliency analysis ([`analysis`]).
//!
//! ```text
//! synth::make_schedule ─► synth::render_eeg ─► Recording ─┬─► dataset::build_dataset ─► model::train
//!                                                          └─► stream::serve_replay ─► stream::online_infer
//!                                                                                          │
//!                                                metrics::match_detections ◄── Detection ◄─┘
//! ```

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod montage;
pub mod rng;
pub mod selftest;
pub mod stream;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    ClassId, DynamicsEvent, DynamicsKind, Epoch, Event, EventSchedule, LabelTrack, Recording,
};
