//! Bandwidth-limited uplink simulation and receiver-side reconstruction.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use numcore::init::seeded_rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::bitstream::{self, BackgroundState, EncodedFrame, Mode};
use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Gaussian capacity statistics in Mbps: mean, std, min, max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Shared satellite uplink.
pub const SHARED_UPLINK: TraceStats = TraceStats {
    mean: 4.7,
    std: 1.9,
    min: 0.0,
    max: 14.0,
};

/// Dedicated satellite uplink.
pub const SINGLE_UPLINK: TraceStats = TraceStats {
    mean: 16.1,
    std: 5.7,
    min: 1.1,
    max: 39.9,
};

impl TraceStats {
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "shared-uplink" => Some(SHARED_UPLINK),
            "single-uplink" => Some(SINGLE_UPLINK),
            _ => None,
        }
    }
}

/// Per-second link capacity. Simulations past the end wrap around.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub mbps: Vec<f64>,
    pub seed: u64,
}

impl ChannelTrace {
    pub fn constant(mbps: f64, duration_s: usize) -> Self {
        Self {
            mbps: vec![mbps; duration_s.max(1)],
            seed: 0,
        }
    }

    pub fn duration_s(&self) -> usize {
        self.mbps.len()
    }

    pub fn mean(&self) -> f64 {
        self.mbps.iter().sum::<f64>() / self.mbps.len().max(1) as f64
    }

    fn bits_per_second(&self, t: f64) -> f64 {
        let i = (t.floor() as usize) % self.mbps.len();
        self.mbps[i] * 1e6
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("second,mbps\n");
        for (i, v) in self.mbps.iter().enumerate() {
            writeln!(s, "{i},{v}").expect("writing to a String");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut mbps = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("second")) {
                continue;
            }
            let (sec, val) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("trace line {}: expected `second,mbps`", n + 1)))?;
            let sec: usize = sec
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("trace line {}: bad second {sec:?}", n + 1)))?;
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("trace line {}: bad rate {val:?}", n + 1)))?;
            if sec != mbps.len() {
                return Err(Error::Format(format!("trace line {}: seconds must count up from 0", n + 1)));
            }
            if !(val >= 0.0) {
                return Err(Error::Format(format!("trace line {}: negative rate", n + 1)));
            }
            mbps.push(val);
        }
        if mbps.is_empty() {
            return Err(Error::Format("trace has no samples".into()));
        }
        Ok(Self { mbps, seed: 0 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

/// Draws one Gaussian capacity sample per second, clipped to `[min, max]`.
pub fn sample_trace(stats: TraceStats, duration_s: usize, seed: u64) -> Result<ChannelTrace> {
    let TraceStats { mean, std, min, max } = stats;
    if !(min <= max) || !(std >= 0.0) || min < 0.0 || duration_s == 0 {
        return Err(Error::Invalid(format!(
            "trace needs 0 <= min <= max, std >= 0 and a positive duration (got {stats:?}, {duration_s} s)"
        )));
    }
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(mean, std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mbps = (0..duration_s).map(|_| normal.sample(&mut rng).clamp(min, max)).collect();
    Ok(ChannelTrace { mbps, seed })
}

/// What the sender puts on the link for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Payload {
    pub frame_index: u32,
    pub bits: u64,
    /// True for frames that install a new background.
    pub refresh: bool,
    /// Background epoch the frame was encoded against.
    pub epoch: u64,
}

impl Payload {
    pub fn from_encoded(e: &EncodedFrame, epoch: u64) -> Self {
        Self {
            frame_index: e.frame_index,
            bits: e.bytes.len() as u64 * 8,
            refresh: e.mode == Mode::Full,
            epoch,
        }
    }
}

/// Uncompressed 8-bit frames, each self-contained.
pub fn raw_payloads(n_frames: usize, width: usize, height: usize) -> Vec<Payload> {
    (0..n_frames)
        .map(|i| Payload {
            frame_index: i as u32,
            bits: (width * height * 8) as u64,
            refresh: false,
            epoch: 0,
        })
        .collect()
}

/// Codec payload sizes for a stream with a FULL refresh every
/// `refresh_every` frames (the first frame is always FULL).
pub fn codec_payloads(
    n_frames: usize,
    width: usize,
    height: usize,
    k: usize,
    v: usize,
    refresh_every: u64,
) -> Result<Vec<Payload>> {
    if refresh_every == 0 {
        return Err(Error::Invalid("refresh interval must be positive".into()));
    }
    let header = bitstream::HEADER_BITS;
    let padded = |bits: u64| (header + bits).div_ceil(8) * 8;
    let full = padded(bitstream::payload_bits(width, height, k, v, Mode::Full)?);
    let dynamic = padded(bitstream::payload_bits(width, height, k, v, Mode::DynamicOnly)?);
    let mut epoch = 0;
    Ok((0..n_frames as u64)
        .map(|i| {
            let refresh = i % refresh_every == 0;
            if refresh {
                epoch = i;
            }
            Payload {
                frame_index: i as u32,
                bits: if refresh { full } else { dynamic },
                refresh,
                epoch,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropPolicy {
    /// Discard the oldest frame still waiting.
    Oldest,
    /// Discard the arriving frame.
    Newest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuePolicy {
    /// Frames allowed to wait behind the one being sent.
    pub queue_cap_frames: usize,
    pub drop: DropPolicy,
    /// Constant added to every latency (propagation delay).
    pub propagation_ms: f64,
}

impl Default for QueuePolicy {
    fn default() -> Self {
        Self {
            queue_cap_frames: 30,
            drop: DropPolicy::Oldest,
            propagation_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamReport {
    pub frames_offered: usize,
    pub frames_delivered: usize,
    /// Overflow drops plus frames still queued when the run ended.
    pub frames_dropped: usize,
    pub frames_unsent: usize,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    /// Offered bits per second of stream time.
    pub offered_bitrate_bps: f64,
    pub delivered_bitrate_bps: f64,
    pub background_refreshes: usize,
    /// Delivered frames whose background epoch the receiver did not hold.
    pub stale_frames: usize,
    pub duration_s: f64,
}

impl StreamReport {
    pub fn delivery_ratio(&self) -> f64 {
        self.frames_delivered as f64 / self.frames_offered.max(1) as f64
    }

    pub fn drop_ratio(&self) -> f64 {
        self.frames_dropped as f64 / self.frames_offered.max(1) as f64
    }

    /// Single-line JSON record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields serialize")
    }
}

struct InFlight {
    payload: Payload,
    arrived: f64,
    remaining: f64,
}

/// Fluid event simulation: frames arrive every `1/fps` s and drain at the
/// trace rate. Frames still queued one trace length after the last arrival
/// count as dropped.
pub fn simulate(payloads: &[Payload], fps: f64, trace: &ChannelTrace, policy: &QueuePolicy) -> Result<StreamReport> {
    if payloads.is_empty() {
        return Err(Error::Invalid("no payloads to stream".into()));
    }
    if !(fps > 0.0) {
        return Err(Error::Invalid("fps must be positive".into()));
    }
    if trace.mbps.is_empty() {
        return Err(Error::Invalid("empty channel trace".into()));
    }
    let n = payloads.len();
    let last_arrival = (n - 1) as f64 / fps;
    let horizon = last_arrival + trace.duration_s() as f64;

    let mut queue: VecDeque<InFlight> = VecDeque::new();
    let mut next = 0usize;
    let mut t = 0.0f64;
    let mut latencies = Vec::with_capacity(n);
    let mut delivered_bits = 0u64;
    let mut dropped = 0usize;
    let mut refreshes = 0usize;
    let mut stale = 0usize;
    let mut receiver_epoch: Option<u64> = None;

    loop {
        if queue.is_empty() {
            if next >= n {
                break;
            }
            t = t.max(next as f64 / fps);
        }
        // admit everything that has arrived by now
        while next < n && next as f64 / fps <= t {
            let p = payloads[next];
            let item = InFlight {
                payload: p,
                arrived: next as f64 / fps,
                remaining: p.bits as f64,
            };
            next += 1;
            // the head of the queue is in service; the rest are waiting
            if !queue.is_empty() && queue.len() > policy.queue_cap_frames {
                dropped += 1;
                if policy.drop == DropPolicy::Newest || queue.len() == 1 {
                    continue;
                }
                queue.remove(1);
            }
            queue.push_back(item);
        }
        if t >= horizon {
            break;
        }
        let Some(head) = queue.front_mut() else { continue };
        let rate = trace.bits_per_second(t);
        let boundary = (t.floor() + 1.0).min(horizon);
        let finish = if rate.is_infinite() {
            t
        } else if rate > 0.0 {
            t + head.remaining / rate
        } else {
            f64::INFINITY
        };
        let next_arrival = if next < n { next as f64 / fps } else { f64::INFINITY };
        let step_to = finish.min(boundary).min(next_arrival);
        if finish <= step_to {
            let done = queue.pop_front().expect("head exists");
            t = finish;
            latencies.push((t - done.arrived) * 1e3 + policy.propagation_ms);
            delivered_bits += done.payload.bits;
            if done.payload.refresh {
                refreshes += 1;
                receiver_epoch = Some(done.payload.epoch);
            } else if receiver_epoch.is_some_and(|e| e != done.payload.epoch) {
                stale += 1;
            }
        } else {
            if rate.is_finite() {
                head.remaining -= rate * (step_to - t);
            }
            t = step_to;
        }
    }
    let unsent = queue.len() + (n - next);
    dropped += unsent;

    let stream_s = n as f64 / fps;
    latencies.sort_by(|a, b| a.total_cmp(b));
    let mean_latency = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<f64>() / latencies.len() as f64
    };
    let p95 = if latencies.is_empty() {
        0.0
    } else {
        let rank = ((0.95 * latencies.len() as f64).ceil() as usize).clamp(1, latencies.len());
        latencies[rank - 1]
    };
    Ok(StreamReport {
        frames_offered: n,
        frames_delivered: latencies.len(),
        frames_dropped: dropped,
        frames_unsent: unsent,
        mean_latency_ms: mean_latency,
        p95_latency_ms: p95,
        offered_bitrate_bps: payloads.iter().map(|p| p.bits as f64).sum::<f64>() / stream_s,
        delivered_bitrate_bps: delivered_bits as f64 / stream_s,
        background_refreshes: refreshes,
        stale_frames: stale,
        duration_s: stream_s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub frame_index: u32,
    pub frame: Frame,
    /// The frame was encoded against a background this receiver lacks.
    pub stale_background: bool,
}

/// Unpacks `bytes` against the receiver's background and decodes the full
/// reconstruction. `sender_epoch` is the background epoch the sender used,
/// when known; a mismatch marks the result stale.
pub fn receiver_reconstruct(
    state: &mut Option<BackgroundState>,
    bytes: &[u8],
    model: &CodecModel,
    sender_epoch: Option<u64>,
) -> Result<Reconstruction> {
    let u = bitstream::unpack_frame(bytes, state)?;
    let frame = model.decode_layer(&u.pyramid, u.pyramid.k())?;
    let stale_background = u.mode == Mode::DynamicOnly && sender_epoch.is_some_and(|e| e != u.epoch_id);
    Ok(Reconstruction {
        frame_index: u.frame_index,
        frame: frame.with_index(u.frame_index, 0),
        stale_background,
    })
}
