//! On-disk formats: EEGR recordings, schedule CSV, and the epoch cache.
//!
//! EEGR layout, little-endian throughout:
//!
//! ```text
//! "EEGR" | version u32 = 1 | sampling_rate f64 | n_channels u32 | n_samples u64
//! | n_channels x (name_len u16, UTF-8 name)
//! | n_samples x n_channels f32   (sample-major)
//! ```

use std::io::{BufRead, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{ClassId, DynamicsEvent, DynamicsKind, Epoch, Event, EventSchedule, Recording};

pub const EEGR_MAGIC: &[u8; 4] = b"EEGR";
pub const EEGR_VERSION: u32 = 1;

/// Size in bytes of an EEGR file for the given channel names and sample count.
pub fn eegr_size(channel_names: &[String], n_samples: usize) -> usize {
    let names: usize = channel_names.iter().map(|n| 2 + n.len()).sum();
    4 + 4 + 8 + 4 + 8 + names + 4 * channel_names.len() * n_samples
}

pub fn write_recording<W: Write>(rec: &Recording, mut sink: W) -> Result<usize> {
    if rec.samples().iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "recording contains non-finite samples".into(),
        ));
    }
    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(EEGR_MAGIC);
    header.extend_from_slice(&EEGR_VERSION.to_le_bytes());
    header.extend_from_slice(&rec.sampling_rate().to_le_bytes());
    header.extend_from_slice(&(rec.n_channels() as u32).to_le_bytes());
    header.extend_from_slice(&(rec.n_samples() as u64).to_le_bytes());
    for name in rec.channel_names() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Invalid(format!("channel name too long: {} bytes", name.len())))?;
        header.extend_from_slice(&len.to_le_bytes());
        header.extend_from_slice(name.as_bytes());
    }
    sink.write_all(&header)?;

    let samples = rec.samples();
    let mut row = Vec::with_capacity(4 * rec.n_channels());
    for t in 0..rec.n_samples() {
        row.clear();
        for c in 0..rec.n_channels() {
            row.extend_from_slice(&samples[[c, t]].to_le_bytes());
        }
        sink.write_all(&row)?;
    }
    sink.flush()?;
    Ok(header.len() + 4 * rec.n_channels() * rec.n_samples())
}

pub fn read_recording<R: Read>(mut source: R) -> Result<Recording> {
    let mut magic = [0u8; 4];
    read_exact(&mut source, &mut magic, "magic")?;
    if &magic != EEGR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"EEGR\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&mut source, "version")?;
    if version != EEGR_VERSION {
        return Err(Error::Version {
            found: version,
            expected: EEGR_VERSION,
        });
    }
    let rate = read_f64(&mut source, "sampling_rate")?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Format(format!("invalid sampling rate {rate}")));
    }
    let n_channels = read_u32(&mut source, "n_channels")? as usize;
    let n_samples = usize::try_from(read_u64(&mut source, "n_samples")?)
        .map_err(|_| Error::Format("n_samples does not fit in memory".into()))?;
    let mut names = Vec::with_capacity(n_channels.min(1024));
    for i in 0..n_channels {
        names.push(read_name(&mut source, i)?);
    }
    let n_bytes = n_channels
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("declared sample count overflows".into()))?;
    let mut payload = Vec::new();
    source
        .by_ref()
        .take(n_bytes as u64)
        .read_to_end(&mut payload)?;
    if payload.len() != n_bytes {
        return Err(Error::Truncated(format!(
            "declared {n_samples} samples x {n_channels} channels needs {n_bytes} bytes, found {}",
            payload.len()
        )));
    }
    let mut samples = Array2::<f32>::zeros((n_channels, n_samples));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let (t, c) = (i / n_channels, i % n_channels);
        samples[[c, t]] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    Recording::new(rate, names, samples).map_err(|e| Error::Format(e.to_string()))
}

fn read_name<R: Read>(source: &mut R, index: usize) -> Result<String> {
    let mut len = [0u8; 2];
    read_exact(source, &mut len, "channel name length")?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact(source, &mut buf, "channel name")?;
    String::from_utf8(buf).map_err(|_| Error::Format(format!("channel {index} name is not UTF-8")))
}

pub(crate) fn read_exact<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated(format!("unexpected end of input reading {what}"))
        }
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(source: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(source, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(source: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(source, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(source: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(source, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

/// Schedule-level values that the CSV rows alone do not carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleMeta {
    pub sampling_rate: f64,
    pub total_samples: usize,
}

impl ScheduleMeta {
    pub fn of(rec: &Recording) -> Self {
        Self {
            sampling_rate: rec.sampling_rate(),
            total_samples: rec.n_samples(),
        }
    }
}

/// Writes the schedule CSV: two `#` metadata comments, the header
/// `onset,class,duration`, then target rows followed by dynamics rows.
pub fn write_schedule<W: Write>(schedule: &EventSchedule, mut sink: W) -> Result<()> {
    writeln!(sink, "# sampling_rate={}", schedule.sampling_rate())?;
    writeln!(sink, "# total_samples={}", schedule.total_samples())?;
    writeln!(sink, "onset,class,duration")?;
    for ev in schedule.targets() {
        writeln!(sink, "{},{},{}", ev.onset, ev.class_id as u32, ev.duration)?;
    }
    for d in schedule.dynamics() {
        writeln!(sink, "{},{},{}", d.onset, d.kind.code(), d.duration)?;
    }
    sink.flush()?;
    Ok(())
}

/// Parses a schedule CSV.
///
/// `# sampling_rate=` / `# total_samples=` comments take precedence; `hint`
/// supplies them when the file has none. Rows may appear in any order and
/// targets are sorted by onset before validation.
pub fn read_schedule<R: BufRead>(source: R, hint: Option<ScheduleMeta>) -> Result<EventSchedule> {
    let mut rate = None;
    let mut total = None;
    let mut header_seen = false;
    let mut targets = Vec::new();
    let mut dynamics = Vec::new();

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.trim().split_once('=') {
                let csv_err = |msg: String| Error::Csv { line: line_no, msg };
                match key.trim() {
                    "sampling_rate" => {
                        rate = Some(
                            value
                                .trim()
                                .parse::<f64>()
                                .map_err(|e| csv_err(format!("sampling_rate: {e}")))?,
                        )
                    }
                    "total_samples" => {
                        total = Some(
                            value
                                .trim()
                                .parse::<usize>()
                                .map_err(|e| csv_err(format!("total_samples: {e}")))?,
                        )
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<_> = line.split(',').map(str::trim).collect();
            if cols != ["onset", "class", "duration"] {
                return Err(Error::Csv {
                    line: line_no,
                    msg: format!("expected header onset,class,duration, got {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<_> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Csv {
                line: line_no,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, name: &str| {
            s.parse::<u64>().map_err(|e| Error::Csv {
                line: line_no,
                msg: format!("{name} {s:?}: {e}"),
            })
        };
        let onset = parse(fields[0], "onset")? as usize;
        let code = parse(fields[1], "class")?;
        let duration = parse(fields[2], "duration")? as usize;
        if duration == 0 {
            return Err(Error::Csv {
                line: line_no,
                msg: "duration must be positive".into(),
            });
        }
        let code = u32::try_from(code).unwrap_or(u32::MAX);
        match (ClassId::from_code(code), DynamicsKind::from_code(code)) {
            (Some(class_id), _) if class_id.is_target() => targets.push(Event {
                onset,
                class_id,
                duration,
            }),
            (_, Some(kind)) => dynamics.push(DynamicsEvent {
                onset,
                kind,
                duration,
            }),
            _ => {
                return Err(Error::Csv {
                    line: line_no,
                    msg: format!("class {code} invalid: targets use 1 or 2, dynamics 100 or 101"),
                })
            }
        }
    }
    if !header_seen {
        return Err(Error::Csv {
            line: 0,
            msg: "missing header onset,class,duration".into(),
        });
    }
    let meta = match (rate, total, hint) {
        (Some(r), Some(t), Some(h)) if (r != h.sampling_rate || t != h.total_samples) => {
            return Err(Error::Schedule(format!(
                "schedule metadata ({r} Hz, {t} samples) disagrees with recording ({} Hz, {} samples)",
                h.sampling_rate, h.total_samples
            )))
        }
        (Some(r), Some(t), _) => ScheduleMeta { sampling_rate: r, total_samples: t },
        (_, _, Some(h)) => h,
        _ => return Err(Error::Schedule("sampling_rate/total_samples missing and no recording given".into())),
    };
    targets.sort_by_key(|e| e.onset);
    EventSchedule::new(meta.total_samples, meta.sampling_rate, targets, dynamics)
}

/// Epoch cache: `count u64`, then per epoch `label u8 | source_onset u64 |
/// data f32 channel-major`. Dimensions are not stored, so the reader is told
/// the channel count and window length.
pub fn write_epochs<W: Write>(epochs: &[Epoch], mut sink: W) -> Result<usize> {
    let mut written = 8;
    sink.write_all(&(epochs.len() as u64).to_le_bytes())?;
    let mut buf = Vec::new();
    for ep in epochs {
        buf.clear();
        buf.push(ep.label as u8);
        buf.extend_from_slice(&(ep.source_onset as u64).to_le_bytes());
        for row in ep.data.rows() {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        sink.write_all(&buf)?;
        written += buf.len();
    }
    sink.flush()?;
    Ok(written)
}

pub fn read_epochs<R: Read>(
    mut source: R,
    n_channels: usize,
    window_len: usize,
) -> Result<Vec<Epoch>> {
    let count = read_u64(&mut source, "epoch count")? as usize;
    let mut epochs = Vec::with_capacity(count.min(1 << 16));
    let mut block = vec![0u8; 4 * n_channels * window_len];
    for i in 0..count {
        let mut label = [0u8; 1];
        read_exact(&mut source, &mut label, "epoch label")?;
        let label = ClassId::from_code(label[0] as u32)
            .ok_or_else(|| Error::Format(format!("epoch {i}: label {} out of range", label[0])))?;
        let source_onset = read_u64(&mut source, "epoch onset")? as usize;
        read_exact(&mut source, &mut block, "epoch data")?;
        let values: Vec<f32> = block
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let data = Array2::from_shape_vec((n_channels, window_len), values)
            .expect("block sized from dims");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("epoch {i}: non-finite data")));
        }
        epochs.push(Epoch {
            data,
            label,
            source_onset,
        });
    }
    Ok(epochs)
}
