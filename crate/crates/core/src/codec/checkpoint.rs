//! Model checkpoint: `SCPM` magic, u16 version, a config block, a manifest of
//! `(name, shape, offset)` records and raw little-endian f32 parameter data.

use std::fs;
use std::path::Path;

use numcore::Tensor;

use super::model::{CodecConfig, CodecModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCPM";
const VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or_else(|| Error::Framing {
            offset: self.pos,
            detail: format!("checkpoint truncated, needed {n} more bytes"),
        })?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn config_block(c: &CodecConfig) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(c.k as u32);
    w.u32(c.latent_dim as u32);
    w.u32(c.codebook_size as u32);
    w.f32(c.lambda1);
    w.f32(c.lambda2);
    w.f32(c.beta);
    for &ch in &c.channels {
        w.u32(ch as u32);
    }
    w.u32(c.frame_width as u32);
    w.u32(c.frame_height as u32);
    w.f32(c.ema_decay);
    w.u32(c.dead_epochs);
    w.0
}

fn read_config(r: &mut Reader) -> Result<CodecConfig> {
    let k = r.u32()? as usize;
    let latent_dim = r.u32()? as usize;
    let codebook_size = r.u32()? as usize;
    let (lambda1, lambda2, beta) = (r.f32()?, r.f32()?, r.f32()?);
    let mut channels = [0usize; 5];
    for c in channels.iter_mut() {
        *c = r.u32()? as usize;
    }
    Ok(CodecConfig {
        k,
        latent_dim,
        codebook_size,
        lambda1,
        lambda2,
        beta,
        channels,
        frame_width: r.u32()? as usize,
        frame_height: r.u32()? as usize,
        ema_decay: r.f32()?,
        dead_epochs: r.u32()?,
    })
}

fn blocks(model: &CodecModel) -> Vec<(String, Vec<usize>, &[f32])> {
    let cb = &model.codebook;
    let mut out: Vec<(String, Vec<usize>, &[f32])> = model
        .names
        .iter()
        .zip(&model.params)
        .map(|(n, p)| (n.clone(), p.shape().to_vec(), p.data()))
        .collect();
    out.push(("codebook.entries".into(), vec![cb.size, cb.dim], &cb.entries));
    out.push(("codebook.ema_counts".into(), vec![cb.size], &cb.ema_counts));
    out.push(("codebook.ema_sums".into(), vec![cb.size, cb.dim], &cb.ema_sums));
    out
}

pub fn to_bytes(model: &CodecModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    let cfg = config_block(&model.config);
    w.u32(cfg.len() as u32);
    w.0.extend_from_slice(&cfg);
    let blocks = blocks(model);
    w.u32(blocks.len() as u32);
    let mut offset = 0u64;
    for (name, shape, data) in &blocks {
        w.u16(name.len() as u16);
        w.0.extend_from_slice(name.as_bytes());
        w.u8(shape.len() as u8);
        for &d in shape {
            w.u32(d as u32);
        }
        w.u64(offset);
        offset += 4 * data.len() as u64;
    }
    for (_, _, data) in &blocks {
        for &v in *data {
            w.f32(v);
        }
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<CodecModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Framing {
            offset: 0,
            detail: "not a model checkpoint (bad magic)".into(),
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_start = r.pos;
    let config = read_config(&mut r)?;
    if r.pos - cfg_start != cfg_len {
        return Err(Error::Format("config block length mismatch".into()));
    }
    // a fresh model fixes the expected names and shapes
    let mut model = CodecModel::new(config, 0)?;
    let n = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        manifest.push((name, shape, offset));
    }
    let data_start = r.pos;
    let expected: Vec<(String, Vec<usize>)> =
        blocks(&model).into_iter().map(|(n, s, _)| (n, s)).collect();
    if manifest.len() != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} blocks, model expects {}",
            manifest.len(),
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(n);
    for ((name, shape, offset), (ename, eshape)) in manifest.iter().zip(&expected) {
        if name != ename || shape != eshape {
            return Err(Error::Format(format!("block {name} {shape:?} where {ename} {eshape:?} expected")));
        }
        let count: usize = shape.iter().product();
        let start = data_start + offset;
        let raw = bytes.get(start..start + 4 * count).ok_or_else(|| Error::Framing {
            offset: start,
            detail: format!("data for {name} runs past end of file"),
        })?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("block {name} holds non-finite values")));
        }
        loaded.push(values);
    }
    let mut it = loaded.into_iter();
    for p in model.params.iter_mut() {
        let shape = p.shape().to_vec();
        *p = Tensor::new(shape, it.next().expect("count checked"))?.with_grad();
    }
    model.codebook.entries = it.next().expect("count checked");
    model.codebook.ema_counts = it.next().expect("count checked");
    model.codebook.ema_sums = it.next().expect("count checked");
    Ok(model)
}

pub fn save(model: &CodecModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    // write then rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("scpm.tmp");
    fs::write(&tmp, to_bytes(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CodecModel> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
