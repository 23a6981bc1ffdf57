//! Built-in consistency checks run by the `selftest` subcommand.

use std::net::TcpListener;
use std::thread;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::metrics::{macro_f_beta, ConfusionMatrix, FBetaForm, MetricConfig};
use crate::model::{loss, HierarchicalModel, NetConfig};
use crate::stream::{client_receive, serve_replay, EspMessage, ReplayConfig};
use crate::types::{ClassId, Event, EventSchedule, Recording};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Per-class F_β computed by counting cells one at a time.
fn brute_force_macro(cm: &[[u64; 3]; 3], beta: f64, form: FBetaForm) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (t, row) in cm.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                match (t == c, p == c) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fn_ += n,
                    _ => {}
                }
            }
        }
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let b2 = beta * beta;
        let den = match form {
            FBetaForm::RecallWeighted => b2 * p + r,
            FBetaForm::LiteralEq4 => b2 * r + p,
        };
        total += if den == 0.0 {
            0.0
        } else {
            (1.0 + b2) * p * r / den
        };
    }
    total / 3.0
}

pub fn metric_oracle(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut counts = [[0u64; 3]; 3];
        for cell in counts.iter_mut().flatten() {
            *cell = if rng.random_bool(0.2) {
                0
            } else {
                rng.random_range(0..50)
            };
        }
        let beta = rng.random_range(0.25..4.0);
        for form in [FBetaForm::RecallWeighted, FBetaForm::LiteralEq4] {
            let got = macro_f_beta(&ConfusionMatrix::new(counts), &MetricConfig { beta, form });
            worst = worst.max((got - brute_force_macro(&counts, beta, form)).abs());
        }
    }
    CheckResult {
        name: "metric_oracle",
        passed: worst < 1e-9,
        detail: format!("{trials} fuzzed matrices, max |delta| = {worst:.3e}"),
    }
}

pub fn gradient_check(seed: u64) -> Result<CheckResult> {
    let cfg = NetConfig {
        n_channels: 3,
        window_len: 30,
        temporal_filters: 2,
        deep_filters: vec![3, 2],
        kernel_len: 3,
        pool_len: 2,
        dropout_rate: 0.1,
        dense_hidden: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((3, 30), |_| rng.sample::<f64, _>(StandardNormal));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, label) in ClassId::ALL.into_iter().enumerate() {
        let model = HierarchicalModel::new(cfg.clone(), seed + i as u64)?;
        let mask_seed = seed ^ 0x5eed;
        let bw = model.backward(
            x.view(),
            label,
            Some(&mut ChaCha8Rng::seed_from_u64(mask_seed)),
            false,
        )?;
        let eval = |m: &HierarchicalModel| -> Result<f64> {
            let p = m.forward(x.view(), Some(&mut ChaCha8Rng::seed_from_u64(mask_seed)))?;
            Ok(loss(&p, label))
        };
        for stage in 0..2 {
            let grads = if stage == 0 {
                &bw.grads.stage_a
            } else {
                &bw.grads.stage_b
            };
            for (j, &g) in grads.iter().enumerate() {
                let h = 1e-4;
                let mut plus = model.clone();
                let mut minus = model.clone();
                let (pp, pm) = if stage == 0 {
                    (&mut plus.stage_a.params[j], &mut minus.stage_a.params[j])
                } else {
                    (&mut plus.stage_b.params[j], &mut minus.stage_b.params[j])
                };
                *pp += h;
                *pm -= h;
                let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
                worst = worst.max((g - fd).abs() / (g.abs() + 1e-8));
                checked += 1;
            }
        }
    }
    Ok(CheckResult {
        name: "gradient_check",
        passed: worst < 1e-4,
        detail: format!("{checked} parameter gradients, max rel err = {worst:.3e}"),
    })
}

pub fn protocol_round_trip(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..4).map(|i| format!("ch{i}")).collect();
    let data = Array2::from_shape_fn((4, 1003), |_| rng.sample::<f32, _>(StandardNormal));
    let rec = Recording::new(250.0, names, data)?;
    let targets = vec![
        Event {
            onset: 100,
            class_id: ClassId::TrueTarget,
            duration: 250,
        },
        Event {
            onset: 611,
            class_id: ClassId::ErrorTarget,
            duration: 250,
        },
    ];
    let schedule = EventSchedule::new(1003, 250.0, targets, vec![])?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let (srec, ssched) = (rec.clone(), schedule.clone());
    let server = thread::spawn(move || {
        serve_replay(
            &srec,
            &ssched,
            &ReplayConfig {
                chunk_ms: 40.0,
                speed: None,
            },
            &listener,
        )
    });
    let mut got = Vec::new();
    let summary = client_receive(addr, 8, |m| {
        if let EspMessage::Data { frames, .. } = m {
            got.extend_from_slice(frames);
        }
        Ok(())
    })?;
    server
        .join()
        .map_err(|_| crate::Error::Protocol("server thread panicked".into()))??;
    let want: Vec<f32> = rec.samples().t().iter().copied().collect();
    let exact = got.len() == want.len()
        && got
            .iter()
            .zip(&want)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    let markers_ok = summary.markers == vec![(100, 1), (611, 2)];
    Ok(CheckResult {
        name: "protocol_round_trip",
        passed: exact && markers_ok && summary.gaps == 0,
        detail: format!(
            "{} frames in {} blocks, bit-exact: {exact}, markers: {markers_ok}, gaps: {}",
            summary.frames, summary.blocks, summary.gaps
        ),
    })
}

/// Runs every check; errors inside a check count as failures.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let failed = |name, e: crate::Error| CheckResult {
        name,
        passed: false,
        detail: e.to_string(),
    };
    vec![
        metric_oracle(1000, seed),
        gradient_check(seed).unwrap_or_else(|e| failed("gradient_check", e)),
        protocol_round_trip(seed).unwrap_or_else(|e| failed("protocol_round_trip", e)),
    ]
}
