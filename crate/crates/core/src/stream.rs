//! Real-time layer: the ESP wire protocol, a paced TCP replay server, a
//! receiving client with a bounded hand-off queue, a ring buffer and the
//! debounced online detector.
//!
//! Wire format (little-endian):
//!
//! ```text
//! "ESP1" | type u32 (1 Start, 2 Data, 3 Stop) | payload_len u64 | payload
//! Start: sampling_rate f64 | n_channels u32 | (name_len u16, utf-8)*
//! Data:  block_index u64 | n_frames u32 | f32 frames, sample-major
//!        | n_markers u32 | (frame_offset u32, class_code u32)*
//! Stop:  total_samples u64
//! ```

use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::Detection;
use crate::model::{argmax3, standardize, HierarchicalModel};
use crate::types::{ClassId, EventSchedule, Recording};

pub const ESP_MAGIC: &[u8; 4] = b"ESP1";
const TYPE_START: u32 = 1;
const TYPE_DATA: u32 = 2;
const TYPE_STOP: u32 = 3;
const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Marker {
    pub frame_offset: u32,
    pub class_code: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EspMessage {
    Start {
        sampling_rate: f64,
        channel_names: Vec<String>,
    },
    Data {
        block_index: u64,
        n_frames: u32,
        frames: Vec<f32>,
        markers: Vec<Marker>,
    },
    Stop {
        total_samples: u64,
    },
}

impl EspMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let kind = match self {
            EspMessage::Start {
                sampling_rate,
                channel_names,
            } => {
                payload.extend_from_slice(&sampling_rate.to_le_bytes());
                payload.extend_from_slice(&(channel_names.len() as u32).to_le_bytes());
                for name in channel_names {
                    payload.extend_from_slice(&(name.len() as u16).to_le_bytes());
                    payload.extend_from_slice(name.as_bytes());
                }
                TYPE_START
            }
            EspMessage::Data {
                block_index,
                n_frames,
                frames,
                markers,
            } => {
                payload.reserve(20 + 4 * frames.len() + 8 * markers.len());
                payload.extend_from_slice(&block_index.to_le_bytes());
                payload.extend_from_slice(&n_frames.to_le_bytes());
                for v in frames {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                payload.extend_from_slice(&(markers.len() as u32).to_le_bytes());
                for m in markers {
                    payload.extend_from_slice(&m.frame_offset.to_le_bytes());
                    payload.extend_from_slice(&m.class_code.to_le_bytes());
                }
                TYPE_DATA
            }
            EspMessage::Stop { total_samples } => {
                payload.extend_from_slice(&total_samples.to_le_bytes());
                TYPE_STOP
            }
        };
        let mut out = Vec::with_capacity(16 + payload.len());
        out.extend_from_slice(ESP_MAGIC);
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }
}

/// Bounds-checked cursor over one payload.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Protocol(format!("payload too short for {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "payload length mismatch: {} declared, {} used",
                self.buf.len(),
                self.pos
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitStart,
    Streaming,
    Done,
}

/// Stateful decoder enforcing Start → Data* → Stop and contiguous blocks.
#[derive(Debug, Clone)]
pub struct EspDecoder {
    phase: Phase,
    n_channels: usize,
    next_block: u64,
    frames_seen: u64,
}

impl Default for EspDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl EspDecoder {
    pub fn new() -> Self {
        Self {
            phase: Phase::AwaitStart,
            n_channels: 0,
            next_block: 0,
            frames_seen: 0,
        }
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Reads and validates one message. I/O failures surface as `Error::Io`
    /// or `Error::Truncated`.
    pub fn read_message<R: Read>(&mut self, source: &mut R) -> Result<EspMessage> {
        let mut header = [0u8; 16];
        crate::format::read_exact(source, &mut header, "message header")?;
        if &header[..4] != ESP_MAGIC {
            return Err(Error::Protocol(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&header[..4])
            )));
        }
        let kind = u32::from_le_bytes(header[4..8].try_into().unwrap());
        let len = u64::from_le_bytes(header[8..16].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("payload length {len} too large")));
        }
        let mut payload = vec![0u8; len as usize];
        crate::format::read_exact(source, &mut payload, "message payload")?;
        self.decode_payload(kind, &payload)
    }

    pub fn decode_payload(&mut self, kind: u32, payload: &[u8]) -> Result<EspMessage> {
        let mut cur = Cursor {
            buf: payload,
            pos: 0,
        };
        let msg = match kind {
            TYPE_START => {
                if self.phase != Phase::AwaitStart {
                    return Err(Error::Protocol("duplicate Start".into()));
                }
                let sampling_rate = cur.f64("sampling rate")?;
                let n = cur.u32("channel count")? as usize;
                let mut channel_names = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let l = cur.u16("name length")? as usize;
                    let raw = cur.take(l, "channel name")?;
                    let name = std::str::from_utf8(raw)
                        .map_err(|_| Error::Protocol("channel name is not UTF-8".into()))?;
                    channel_names.push(name.to_string());
                }
                if n == 0 || !(sampling_rate.is_finite() && sampling_rate > 0.0) {
                    return Err(Error::Protocol(
                        "Start needs channels and a positive rate".into(),
                    ));
                }
                self.phase = Phase::Streaming;
                self.n_channels = n;
                EspMessage::Start {
                    sampling_rate,
                    channel_names,
                }
            }
            TYPE_DATA => {
                if self.phase != Phase::Streaming {
                    return Err(Error::Protocol(format!(
                        "Data received in state {:?}",
                        self.phase
                    )));
                }
                let block_index = cur.u64("block index")?;
                if block_index != self.next_block {
                    return Err(Error::Protocol(format!(
                        "block {block_index} received, expected {}",
                        self.next_block
                    )));
                }
                let n_frames = cur.u32("frame count")?;
                if n_frames == 0 {
                    return Err(Error::Protocol("Data block without frames".into()));
                }
                let n_bytes = (n_frames as usize)
                    .checked_mul(4 * self.n_channels)
                    .ok_or_else(|| Error::Protocol("frame payload size overflows".into()))?;
                let raw = cur.take(n_bytes, "frames")?;
                let frames = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let n_markers = cur.u32("marker count")? as usize;
                let mut markers = Vec::with_capacity(n_markers.min(1024));
                for _ in 0..n_markers {
                    let frame_offset = cur.u32("marker offset")?;
                    let class_code = cur.u32("marker code")?;
                    if frame_offset >= n_frames {
                        return Err(Error::Protocol(format!(
                            "marker offset {frame_offset} outside block"
                        )));
                    }
                    markers.push(Marker {
                        frame_offset,
                        class_code,
                    });
                }
                self.next_block += 1;
                self.frames_seen += n_frames as u64;
                EspMessage::Data {
                    block_index,
                    n_frames,
                    frames,
                    markers,
                }
            }
            TYPE_STOP => {
                if self.phase != Phase::Streaming {
                    return Err(Error::Protocol(format!(
                        "Stop received in state {:?}",
                        self.phase
                    )));
                }
                let total_samples = cur.u64("total samples")?;
                if total_samples != self.frames_seen {
                    return Err(Error::Protocol(format!(
                        "Stop announces {total_samples} samples, {} received",
                        self.frames_seen
                    )));
                }
                self.phase = Phase::Done;
                EspMessage::Stop { total_samples }
            }
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        };
        cur.finish()?;
        Ok(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayConfig {
    pub chunk_ms: f64,
    /// Playback speed; `None` disables pacing.
    pub speed: Option<f64>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            chunk_ms: 40.0,
            speed: Some(1.0),
        }
    }
}

impl ReplayConfig {
    pub fn frames_per_chunk(&self, sampling_rate: f64) -> Result<usize> {
        let frames = (self.chunk_ms * sampling_rate / 1000.0).round();
        if !(frames.is_finite() && frames >= 1.0) {
            return Err(Error::Invalid(format!(
                "chunk of {} ms holds no samples",
                self.chunk_ms
            )));
        }
        if let Some(s) = self.speed {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Invalid(format!("speed must be positive, got {s}")));
            }
        }
        Ok(frames as usize)
    }
}

/// All onsets (targets and dynamics) as `(sample, code)`, sorted.
fn schedule_markers(schedule: &EventSchedule) -> Vec<(usize, u32)> {
    let mut m: Vec<(usize, u32)> = schedule
        .targets()
        .iter()
        .map(|e| (e.onset, e.class_id as u32))
        .chain(schedule.dynamics().iter().map(|d| (d.onset, d.kind.code())))
        .collect();
    m.sort();
    m
}

/// Splits a recording into the message sequence of one replay session.
pub fn replay_messages(
    rec: &Recording,
    schedule: &EventSchedule,
    frames_per_chunk: usize,
) -> Result<Vec<EspMessage>> {
    if frames_per_chunk == 0 {
        return Err(Error::Invalid("frames per chunk must be positive".into()));
    }
    let mut out = vec![EspMessage::Start {
        sampling_rate: rec.sampling_rate(),
        channel_names: rec.channel_names().to_vec(),
    }];
    let markers = schedule_markers(schedule);
    let mut next_marker = 0;
    let n = rec.n_samples();
    let samples = rec.samples();
    for (block_index, start) in (0..n).step_by(frames_per_chunk).enumerate() {
        let end = (start + frames_per_chunk).min(n);
        let block = samples.slice(ndarray::s![.., start..end]);
        let frames: Vec<f32> = block.t().iter().copied().collect();
        let mut block_markers = Vec::new();
        while next_marker < markers.len() && markers[next_marker].0 < end {
            let (onset, code) = markers[next_marker];
            if onset >= start {
                block_markers.push(Marker {
                    frame_offset: (onset - start) as u32,
                    class_code: code,
                });
            }
            next_marker += 1;
        }
        out.push(EspMessage::Data {
            block_index: block_index as u64,
            n_frames: (end - start) as u32,
            frames,
            markers: block_markers,
        });
    }
    out.push(EspMessage::Stop {
        total_samples: n as u64,
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub blocks: u64,
    pub frames: u64,
    pub elapsed: Duration,
}

/// Writes one paced replay session to `sink`.
pub fn replay_to<W: Write>(
    rec: &Recording,
    schedule: &EventSchedule,
    cfg: &ReplayConfig,
    sink: W,
) -> Result<ReplaySummary> {
    let fpc = cfg.frames_per_chunk(rec.sampling_rate())?;
    let messages = replay_messages(rec, schedule, fpc)?;
    let mut sink = BufWriter::new(sink);
    let started = Instant::now();
    let mut blocks = 0;
    for msg in &messages {
        if let (EspMessage::Data { block_index, .. }, Some(speed)) = (msg, cfg.speed) {
            let due = Duration::from_secs_f64(*block_index as f64 * cfg.chunk_ms / 1000.0 / speed);
            let now = started.elapsed();
            if due > now {
                thread::sleep(due - now);
            }
        }
        sink.write_all(&msg.encode())?;
        if matches!(msg, EspMessage::Data { .. }) {
            blocks += 1;
            if cfg.speed.is_some() {
                sink.flush()?;
            }
        }
    }
    sink.flush()?;
    Ok(ReplaySummary {
        blocks,
        frames: rec.n_samples() as u64,
        elapsed: started.elapsed(),
    })
}

/// Accepts one client on `listener` and replays the recording to it.
pub fn serve_replay(
    rec: &Recording,
    schedule: &EventSchedule,
    cfg: &ReplayConfig,
    listener: &TcpListener,
) -> Result<ReplaySummary> {
    cfg.frames_per_chunk(rec.sampling_rate())?;
    let (stream, peer) = listener.accept()?;
    stream.set_nodelay(true)?;
    log::info!("client {peer} connected");
    match replay_to(rec, schedule, cfg, stream) {
        Ok(s) => {
            log::info!(
                "session finished: {} blocks, {} frames in {:.2?}",
                s.blocks,
                s.frames,
                s.elapsed
            );
            Ok(s)
        }
        Err(e) => {
            log::warn!("session with {peer} ended: {e}");
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub sampling_rate: f64,
    pub channel_names: Vec<String>,
    pub frames: u64,
    pub blocks: u64,
    pub gaps: u64,
    pub markers: Vec<(u64, u32)>,
    pub elapsed: Duration,
}

fn is_disconnect(e: &Error) -> bool {
    match e {
        Error::Truncated(_) => true,
        Error::Io(io) => matches!(
            io.kind(),
            io::ErrorKind::UnexpectedEof
                | io::ErrorKind::ConnectionReset
                | io::ErrorKind::ConnectionAborted
                | io::ErrorKind::BrokenPipe
        ),
        _ => false,
    }
}

fn reader_loop<R: Read>(mut source: R, tx: std::sync::mpsc::SyncSender<Result<EspMessage>>) {
    let mut dec = EspDecoder::new();
    loop {
        let res = dec.read_message(&mut source).map_err(|e| {
            if is_disconnect(&e) {
                Error::ConnectionLost {
                    frames: dec.frames_seen(),
                    msg: e.to_string(),
                }
            } else {
                e
            }
        });
        let stop = res.is_err() || dec.is_done();
        if tx.send(res).is_err() || stop {
            return;
        }
    }
}

/// Decodes a session from `source` on a reader thread and hands messages to
/// `consumer` through a bounded queue of `queue_capacity` messages.
pub fn receive_from<R, F>(
    source: R,
    queue_capacity: usize,
    mut consumer: F,
) -> Result<SessionSummary>
where
    R: Read + Send + 'static,
    F: FnMut(&EspMessage) -> Result<()>,
{
    let (tx, rx): (_, Receiver<Result<EspMessage>>) = sync_channel(queue_capacity.max(1));
    let reader = thread::spawn(move || reader_loop(BufReader::new(source), tx));
    let started = Instant::now();
    let mut summary = SessionSummary {
        sampling_rate: 0.0,
        channel_names: vec![],
        frames: 0,
        blocks: 0,
        gaps: 0,
        markers: vec![],
        elapsed: Duration::ZERO,
    };
    let result = (|| loop {
        let msg = match rx.recv() {
            Ok(m) => m?,
            Err(_) => {
                return Err(Error::ConnectionLost {
                    frames: summary.frames,
                    msg: "reader stopped".into(),
                })
            }
        };
        match &msg {
            EspMessage::Start {
                sampling_rate,
                channel_names,
            } => {
                summary.sampling_rate = *sampling_rate;
                summary.channel_names = channel_names.clone();
            }
            EspMessage::Data {
                n_frames, markers, ..
            } => {
                for m in markers {
                    summary
                        .markers
                        .push((summary.frames + m.frame_offset as u64, m.class_code));
                }
                summary.frames += *n_frames as u64;
                summary.blocks += 1;
            }
            EspMessage::Stop { .. } => {}
        }
        consumer(&msg)?;
        if matches!(msg, EspMessage::Stop { .. }) {
            return Ok(());
        }
    })();
    // Dropping the receiver unblocks the reader if the consumer bailed out.
    drop(rx);
    let _ = reader.join();
    result?;
    summary.elapsed = started.elapsed();
    Ok(summary)
}

/// Connects to a replay server and receives one session.
pub fn client_receive<A, F>(
    endpoint: A,
    queue_capacity: usize,
    consumer: F,
) -> Result<SessionSummary>
where
    A: ToSocketAddrs,
    F: FnMut(&EspMessage) -> Result<()>,
{
    let stream = TcpStream::connect(endpoint)?;
    stream.set_nodelay(true)?;
    receive_from(stream, queue_capacity, consumer)
}

/// Fixed-capacity per-channel circular buffer indexed by absolute sample.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    n_channels: usize,
    capacity: usize,
    data: Vec<f32>,
    write_head: u64,
}

impl RingBuffer {
    pub fn new(n_channels: usize, capacity: usize) -> Result<Self> {
        if n_channels == 0 || capacity == 0 {
            return Err(Error::Invalid(
                "ring buffer needs channels and capacity".into(),
            ));
        }
        Ok(Self {
            n_channels,
            capacity,
            data: vec![0.0; n_channels * capacity],
            write_head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of samples written so far.
    pub fn write_head(&self) -> u64 {
        self.write_head
    }

    pub fn push_frame(&mut self, frame: &[f32]) -> Result<()> {
        if frame.len() != self.n_channels {
            return Err(Error::Dimension {
                expected: format!("{} channels", self.n_channels),
                got: frame.len().to_string(),
            });
        }
        let slot = (self.write_head % self.capacity as u64) as usize;
        for (c, &v) in frame.iter().enumerate() {
            self.data[c * self.capacity + slot] = v;
        }
        self.write_head += 1;
        Ok(())
    }

    /// The most recent `k` samples as `[n_channels x k]`.
    pub fn latest(&self, k: usize) -> Result<Array2<f32>> {
        if k > self.capacity || k as u64 > self.write_head {
            return Err(Error::Invalid(format!(
                "cannot read {k} samples (capacity {}, written {})",
                self.capacity, self.write_head
            )));
        }
        let start = self.write_head - k as u64;
        Ok(Array2::from_shape_fn((self.n_channels, k), |(c, i)| {
            let slot = ((start + i as u64) % self.capacity as u64) as usize;
            self.data[c * self.capacity + slot]
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub infer_stride: usize,
    pub trigger_threshold: f64,
    pub consecutive_required: usize,
    pub refractory: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            infer_stride: 25,
            trigger_threshold: 0.7,
            consecutive_required: 3,
            refractory: 250,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.infer_stride == 0 || self.consecutive_required == 0 || self.refractory == 0 {
            return Err(Error::Invalid(
                "online stride, run length and refractory must be positive".into(),
            ));
        }
        if !(self.trigger_threshold > 0.0 && self.trigger_threshold <= 1.0) {
            return Err(Error::Invalid(format!(
                "trigger threshold {} outside (0, 1]",
                self.trigger_threshold
            )));
        }
        Ok(())
    }
}

/// Anything that maps a standardized window to composed class probabilities.
/// `start` is the absolute sample index of the window's first column.
pub trait WindowClassifier {
    fn window_len(&self) -> usize;
    fn n_channels(&self) -> usize;
    fn classify(&self, window: &Array2<f64>, start: u64) -> Result<[f64; 3]>;
}

impl WindowClassifier for HierarchicalModel {
    fn window_len(&self) -> usize {
        self.config().window_len
    }

    fn n_channels(&self) -> usize {
        self.config().n_channels
    }

    fn classify(&self, window: &Array2<f64>, _start: u64) -> Result<[f64; 3]> {
        self.probs(window.view())
    }
}

/// Debounced detector over an incrementally fed frame stream.
pub struct OnlineEngine<'m, C: WindowClassifier + ?Sized> {
    classifier: &'m C,
    cfg: OnlineConfig,
    ring: RingBuffer,
    run: usize,
    recent: VecDeque<[f64; 3]>,
    refractory_until: u64,
    detections: Vec<Detection>,
    windows: u64,
}

impl<'m, C: WindowClassifier + ?Sized> OnlineEngine<'m, C> {
    pub fn new(classifier: &'m C, cfg: OnlineConfig) -> Result<Self> {
        cfg.validate()?;
        let window = classifier.window_len();
        let ring = RingBuffer::new(classifier.n_channels(), 4 * window)?;
        Ok(Self {
            classifier,
            cfg,
            ring,
            run: 0,
            recent: VecDeque::with_capacity(cfg.consecutive_required),
            refractory_until: 0,
            detections: Vec::new(),
            windows: 0,
        })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    pub fn windows_evaluated(&self) -> u64 {
        self.windows
    }

    /// Feeds sample-major frames; returns detections emitted by this call.
    pub fn push_frames(&mut self, frames: &[f32]) -> Result<Vec<Detection>> {
        let nc = self.classifier.n_channels();
        if !frames.len().is_multiple_of(nc) {
            return Err(Error::Dimension {
                expected: format!("multiple of {nc} values"),
                got: frames.len().to_string(),
            });
        }
        let before = self.detections.len();
        for frame in frames.chunks_exact(nc) {
            self.ring.push_frame(frame)?;
            self.step()?;
        }
        Ok(self.detections[before..].to_vec())
    }

    fn step(&mut self) -> Result<()> {
        let head = self.ring.write_head();
        let window = self.classifier.window_len() as u64;
        if head < window || !(head - window).is_multiple_of(self.cfg.infer_stride as u64) {
            return Ok(());
        }
        let x = standardize(self.ring.latest(window as usize)?.view());
        let probs = self.classifier.classify(&x, head - window)?;
        self.windows += 1;
        if 1.0 - probs[0] >= self.cfg.trigger_threshold {
            self.run += 1;
            if self.recent.len() == self.cfg.consecutive_required {
                self.recent.pop_front();
            }
            self.recent.push_back(probs);
        } else {
            self.run = 0;
            self.recent.clear();
        }
        if self.run >= self.cfg.consecutive_required && head >= self.refractory_until {
            let mut summed = [0.0; 3];
            let mut trigger = 0.0;
            for p in &self.recent {
                summed[1] += p[1];
                summed[2] += p[2];
                trigger += 1.0 - p[0];
            }
            // summed[0] stays 0, so the argmax is always a target class
            let class_id = argmax3(&summed);
            let confidence = (trigger / self.recent.len() as f64).clamp(0.0, 1.0);
            self.detections.push(Detection {
                time: head as usize,
                class_id,
                confidence,
            });
            self.refractory_until = head + self.cfg.refractory as u64;
            self.run = 0;
            self.recent.clear();
        }
        Ok(())
    }
}

/// Runs the detector over a whole recording, frame by frame.
pub fn online_infer<C: WindowClassifier + ?Sized>(
    rec: &Recording,
    classifier: &C,
    cfg: OnlineConfig,
) -> Result<Vec<Detection>> {
    let mut engine = OnlineEngine::new(classifier, cfg)?;
    let frames: Vec<f32> = rec.samples().t().iter().copied().collect();
    engine.push_frames(&frames)?;
    Ok(engine.into_detections())
}

/// Receives a live session and runs the detector on it. `on_detection` sees
/// each detection as soon as it is emitted.
pub fn infer_remote<A, C, F>(
    endpoint: A,
    classifier: &C,
    cfg: OnlineConfig,
    queue_capacity: usize,
    mut on_detection: F,
) -> Result<(Vec<Detection>, SessionSummary)>
where
    A: ToSocketAddrs,
    C: WindowClassifier + ?Sized,
    F: FnMut(&Detection) -> Result<()>,
{
    let mut engine = OnlineEngine::new(classifier, cfg)?;
    let summary = client_receive(endpoint, queue_capacity, |msg| {
        match msg {
            EspMessage::Start { channel_names, .. }
                if channel_names.len() != classifier.n_channels() =>
            {
                return Err(Error::Dimension {
                    expected: format!("{} channels", classifier.n_channels()),
                    got: channel_names.len().to_string(),
                })
            }
            EspMessage::Data { frames, .. } => {
                for d in engine.push_frames(frames)? {
                    on_detection(&d)?;
                }
            }
            _ => {}
        }
        Ok(())
    })?;
    Ok((engine.into_detections(), summary))
}

/// Detections as `time,class,confidence` CSV.
pub fn write_detections<W: Write>(detections: &[Detection], mut sink: W) -> Result<()> {
    writeln!(sink, "time,class,confidence")?;
    for d in detections {
        write_detection_row(d, &mut sink)?;
    }
    Ok(())
}

/// One CSV row, for sinks that record detections as they are emitted.
pub fn write_detection_row<W: Write>(d: &Detection, mut sink: W) -> Result<()> {
    writeln!(sink, "{},{},{:.6}", d.time, d.class_id as u32, d.confidence)?;
    Ok(())
}

pub fn read_detections<R: io::BufRead>(source: R) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("time")) {
            continue;
        }
        let bad = |msg: String| Error::Csv { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", f.len())));
        }
        let time = f[0]
            .parse()
            .map_err(|_| bad(format!("bad time {:?}", f[0])))?;
        let code: u32 = f[1]
            .parse()
            .map_err(|_| bad(format!("bad class {:?}", f[1])))?;
        let class_id = ClassId::from_code(code)
            .filter(|c| c.is_target())
            .ok_or_else(|| bad(format!("class {code} is not a target class")))?;
        let confidence: f64 = f[2]
            .parse()
            .map_err(|_| bad(format!("bad confidence {:?}", f[2])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad(format!("confidence {confidence} outside [0, 1]")));
        }
        out.push(Detection {
            time,
            class_id,
            confidence,
        });
    }
    Ok(out)
}
