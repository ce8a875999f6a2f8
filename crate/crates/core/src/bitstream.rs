//! Bit-exact framing of index pyramids.
//!
//! Every frame starts with a 136-bit header, all fields big-endian:
//!
//! | field          | bits |
//! |----------------|------|
//! | magic `SCPF`   | 32   |
//! | version        | 8    |
//! | mode           | 8    |
//! | frame index    | 32   |
//! | height, width  | 16+16|
//! | k              | 8    |
//! | bits per index | 8    |
//! | presence       | 8    |
//!
//! Bit `j-1` of the presence byte (LSB first) marks scale `j` as present.
//! Index payloads follow scale by scale in row-major order, each index in
//! `bits per index` bits, MSB first, and the last byte is zero-padded.

use crate::codec::{index_bits, scale_dims, IndexGrid, IndexMapPyramid};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SCPF";
pub const VERSION: u8 = 1;
pub const HEADER_BITS: u64 = 136;
/// Frames between FULL refreshes assumed by [`amortized_bpp`] callers.
pub const DEFAULT_REFRESH_INTERVAL: u64 = 900;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Every scale; refreshes the receiver's background.
    Full = 0,
    /// Finest scale only; spliced onto the stored background.
    DynamicOnly = 1,
}

impl Mode {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mode::Full),
            1 => Some(Mode::DynamicOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub frame_index: u32,
    pub mode: Mode,
    pub frame_width: usize,
    pub frame_height: usize,
    pub k: usize,
    pub bits_per_index: u32,
    pub presence: u8,
    /// Index bits only, header excluded.
    pub payload_bits: u64,
    pub bytes: Vec<u8>,
}

impl EncodedFrame {
    pub fn total_bits(&self) -> u64 {
        HEADER_BITS + self.payload_bits
    }
}

/// Coarse scales `1..k-1` held by a receiver between FULL frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackgroundState {
    pub frame_width: usize,
    pub frame_height: usize,
    pub k: usize,
    pub scales: Vec<IndexGrid>,
    /// Frame index of the FULL frame that installed this state.
    pub epoch_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unpacked {
    pub frame_index: u32,
    pub mode: Mode,
    pub pyramid: IndexMapPyramid,
    /// Background epoch the pyramid was assembled against.
    pub epoch_id: u64,
}

struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn new() -> Self {
        Self { bytes: Vec::new(), used: 8 }
    }

    fn put(&mut self, value: u64, bits: u32) {
        for i in (0..bits).rev() {
            if self.used == 8 {
                self.bytes.push(0);
                self.used = 0;
            }
            let bit = ((value >> i) & 1) as u8;
            *self.bytes.last_mut().expect("pushed above") |= bit << (7 - self.used);
            self.used += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl BitReader<'_> {
    fn get(&mut self, bits: u32, what: &str) -> Result<u64> {
        if self.pos + bits as u64 > self.bytes.len() as u64 * 8 {
            return Err(Error::Framing {
                offset: (self.pos / 8) as usize,
                detail: format!("truncated while reading {what}"),
            });
        }
        let mut v = 0u64;
        for _ in 0..bits {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }
}

fn present_scales(mode: Mode, k: usize) -> u8 {
    match mode {
        Mode::Full => ((1u16 << k) - 1) as u8,
        Mode::DynamicOnly => 1 << (k - 1),
    }
}

/// Packs `pyramid` for transmission. Indices must be below `v`.
pub fn pack_frame(pyramid: &IndexMapPyramid, mode: Mode, frame_index: u32, v: usize) -> Result<EncodedFrame> {
    let k = pyramid.k();
    if !(1..=8).contains(&k) {
        return Err(Error::Invalid(format!("k = {k} does not fit the presence byte")));
    }
    if pyramid.frame_width > u16::MAX as usize || pyramid.frame_height > u16::MAX as usize {
        return Err(Error::Invalid("frame dims exceed 16 bits".into()));
    }
    pyramid.validate(v)?;
    let bits = index_bits(v);
    let presence = present_scales(mode, k);

    let mut w = BitWriter::new();
    for b in MAGIC {
        w.put(b as u64, 8);
    }
    w.put(VERSION as u64, 8);
    w.put(mode as u64, 8);
    w.put(frame_index as u64, 32);
    w.put(pyramid.frame_height as u64, 16);
    w.put(pyramid.frame_width as u64, 16);
    w.put(k as u64, 8);
    w.put(bits as u64, 8);
    w.put(presence as u64, 8);
    let mut payload_bits = 0;
    for (j, g) in pyramid.scales.iter().enumerate() {
        if presence & (1 << j) == 0 {
            continue;
        }
        for &i in &g.indices {
            w.put(i as u64, bits);
        }
        payload_bits += g.len() as u64 * bits as u64;
    }
    Ok(EncodedFrame {
        frame_index,
        mode,
        frame_width: pyramid.frame_width,
        frame_height: pyramid.frame_height,
        k,
        bits_per_index: bits,
        presence,
        payload_bits,
        bytes: w.bytes,
    })
}

/// Parses a packed frame. FULL frames replace `background`, whose epoch
/// becomes their frame index; DYNAMIC_ONLY frames need one already present.
pub fn unpack_frame(bytes: &[u8], background: &mut Option<BackgroundState>) -> Result<Unpacked> {
    let mut r = BitReader { bytes, pos: 0 };
    for (i, &m) in MAGIC.iter().enumerate() {
        if r.get(8, "magic")? as u8 != m {
            return Err(Error::Framing {
                offset: i,
                detail: "bad magic, expected SCPF".into(),
            });
        }
    }
    let version = r.get(8, "version")? as u8;
    if version != VERSION {
        return Err(Error::Framing {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let mode = Mode::from_byte(r.get(8, "mode")? as u8).ok_or_else(|| Error::Framing {
        offset: 5,
        detail: "unknown mode".into(),
    })?;
    let frame_index = r.get(32, "frame index")? as u32;
    let height = r.get(16, "height")? as usize;
    let width = r.get(16, "width")? as usize;
    let k = r.get(8, "k")? as usize;
    let bits = r.get(8, "bits per index")? as u32;
    let presence = r.get(8, "presence")? as u8;
    if !(1..=8).contains(&k) || !(1..=32).contains(&bits) {
        return Err(Error::Framing {
            offset: 14,
            detail: format!("k = {k} or bits per index = {bits} out of range"),
        });
    }
    if presence != present_scales(mode, k) {
        return Err(Error::Framing {
            offset: 16,
            detail: format!("presence {presence:#010b} does not match mode {mode:?}"),
        });
    }
    let dims = scale_dims(width, height, k).map_err(|e| Error::Framing {
        offset: 10,
        detail: e.to_string(),
    })?;

    if mode == Mode::DynamicOnly {
        let bg = background.as_ref().ok_or(Error::BackgroundMissing)?;
        if (bg.frame_width, bg.frame_height, bg.k) != (width, height, k) {
            return Err(Error::Invalid(format!(
                "background is {}x{} k={}, frame is {width}x{height} k={k}",
                bg.frame_width, bg.frame_height, bg.k
            )));
        }
    }

    let mut read = Vec::new();
    for (j, &(gw, gh)) in dims.iter().enumerate() {
        if presence & (1 << j) == 0 {
            continue;
        }
        let indices = (0..gw * gh)
            .map(|_| r.get(bits, "index payload").map(|v| v as u32))
            .collect::<Result<Vec<_>>>()?;
        read.push(IndexGrid::new(gw, gh, indices)?);
    }

    let scales = match mode {
        Mode::Full => {
            let epoch_id = frame_index as u64;
            if let Some(old) = background.as_ref() {
                if epoch_id < old.epoch_id {
                    return Err(Error::Invalid(format!(
                        "FULL frame {epoch_id} is older than background epoch {}",
                        old.epoch_id
                    )));
                }
            }
            *background = Some(BackgroundState {
                frame_width: width,
                frame_height: height,
                k,
                scales: read[..k - 1].to_vec(),
                epoch_id,
            });
            read
        }
        Mode::DynamicOnly => {
            let bg = background.as_ref().expect("checked above");
            let mut s = bg.scales.clone();
            s.extend(read);
            s
        }
    };
    let epoch_id = background.as_ref().map_or(0, |b| b.epoch_id);
    Ok(Unpacked {
        frame_index,
        mode,
        pyramid: IndexMapPyramid {
            frame_width: width,
            frame_height: height,
            scales,
        },
        epoch_id,
    })
}

/// Index bits per pixel, headers excluded.
pub fn bpp(encoded: &EncodedFrame) -> f64 {
    encoded.payload_bits as f64 / (encoded.frame_width * encoded.frame_height) as f64
}

/// Index bits a frame of this geometry costs in `mode`, without packing.
pub fn payload_bits(frame_width: usize, frame_height: usize, k: usize, v: usize, mode: Mode) -> Result<u64> {
    let dims = scale_dims(frame_width, frame_height, k)?;
    let cells: usize = match mode {
        Mode::Full => dims.iter().map(|(w, h)| w * h).sum(),
        Mode::DynamicOnly => dims[k - 1].0 * dims[k - 1].1,
    };
    Ok(cells as u64 * index_bits(v) as u64)
}

/// Mean bpp of a stream sending one FULL frame every `refresh_every` frames
/// and DYNAMIC_ONLY otherwise.
pub fn amortized_bpp(frame_width: usize, frame_height: usize, k: usize, v: usize, refresh_every: u64) -> Result<f64> {
    if refresh_every == 0 {
        return Err(Error::Invalid("refresh interval must be positive".into()));
    }
    let full = payload_bits(frame_width, frame_height, k, v, Mode::Full)? as f64;
    let dynamic = payload_bits(frame_width, frame_height, k, v, Mode::DynamicOnly)? as f64;
    let per_frame = (full + (refresh_every - 1) as f64 * dynamic) / refresh_every as f64;
    Ok(per_frame / (frame_width * frame_height) as f64)
}
