//! Intensity frames, clips, and their on-disk form (8-bit binary PGM plus a
//! `clip.meta` key=value file).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major intensity grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub frame_index: u32,
    pub timestamp_ms: u64,
}

impl Frame {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{}x{} frame given {} values",
                width,
                height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
            frame_index: 0,
            timestamp_ms: 0,
        })
    }

    /// Builds a frame from values, clamping them into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(width, height, values)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            values: vec![value.clamp(0.0, 1.0); width * height],
            frame_index: 0,
            timestamp_ms: 0,
        }
    }

    pub fn with_index(mut self, frame_index: u32, timestamp_ms: u64) -> Self {
        self.frame_index = frame_index;
        self.timestamp_ms = timestamp_ms;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.len().max(1) as f64
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::Format(format!("unsupported PGM magic {:?}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PGM is supported, maxval {maxval}")));
        }
        let raster = bytes
            .get(pos..pos + w * h)
            .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
        Frame::new(w, h, raster.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Ordered frames of uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub fps: f64,
}

impl Clip {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        for pair in frames.windows(2) {
            pair[0].same_dims(&pair[1])?;
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::Invalid("frame indices must strictly increase".into()));
            }
        }
        if fps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    /// Writes `frame_%06d.pgm` files and `clip.meta` into `dir`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            fs::write(dir.join(format!("frame_{i:06}.pgm")), f.to_pgm())?;
        }
        let (w, h) = self.dims().unwrap_or((0, 0));
        let mut meta = String::new();
        let _ = writeln!(meta, "width={w}");
        let _ = writeln!(meta, "height={h}");
        let _ = writeln!(meta, "fps={}", self.fps);
        let _ = writeln!(meta, "n_frames={}", self.frames.len());
        let _ = writeln!(meta, "seed={seed}");
        fs::write(dir.join("clip.meta"), meta)?;
        Ok(())
    }

    /// Loads a clip written by [`Clip::save`]; returns the clip and its seed.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let meta_path = dir.join("clip.meta");
        let meta = fs::read_to_string(&meta_path)
            .map_err(|e| Error::Io(format!("{}: {e}", meta_path.display())))?;
        let mut kv = std::collections::BTreeMap::new();
        for line in meta.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("clip.meta line without '=': {line}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("clip.meta missing {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("clip.meta field {k} is not an integer")))
        };
        let (w, h, n) = (num("width")?, num("height")?, num("n_frames")?);
        let fps: f64 = get("fps")?
            .parse()
            .map_err(|_| Error::Format("clip.meta fps is not a number".into()))?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::Format("clip.meta seed is not an integer".into()))?;
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            let path = dir.join(format!("frame_{i:06}.pgm"));
            let bytes = fs::read(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let f = Frame::from_pgm(&bytes)?;
            if f.dims() != (w, h) {
                return Err(Error::Dimension(format!(
                    "{} is {}x{}, clip.meta says {w}x{h}",
                    path.display(),
                    f.width,
                    f.height
                )));
            }
            let ts = (i as f64 * 1000.0 / fps).round() as u64;
            frames.push(f.with_index(i as u32, ts));
        }
        Ok((Clip::new(frames, fps)?, seed))
    }
}
