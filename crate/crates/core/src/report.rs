//! Per-clip evaluation rows and their tab-separated report.

use std::fmt::Write as _;

use crate::bitstream::{self, Mode};
use crate::codec::CodecModel;
use crate::dataset::EvalTruth;
use crate::error::{Error, Result};
use crate::frame::Clip;
use crate::metrics::{
    dct_low_baseline, detect_clip, detection_score, hf_residual_energy, ssim, DETECT_MIN_AREA, DETECT_THRESHOLD,
};

/// Fraction of DCT coefficients kept by the low-band baseline and counted as
/// low band by the high-frequency energy metric.
pub const LOW_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub clip: String,
    pub ssim_vs_noisy: f64,
    pub ssim_vs_clean: f64,
    /// `None` for methods that are not transmitted.
    pub bpp: Option<f64>,
    pub hf_energy: f64,
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
}

pub const TSV_HEADER: &str = "method\tclip\tssim_vs_noisy\tssim_vs_clean\tbpp\thf_energy\tprecision\trecall\tap50";

impl EvalRow {
    pub fn to_tsv(&self) -> String {
        let bpp = self.bpp.map_or_else(|| "NA".to_string(), |b| format!("{b:.6}"));
        format!(
            "{}\t{}\t{:.4}\t{:.4}\t{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}",
            self.method,
            self.clip,
            self.ssim_vs_noisy,
            self.ssim_vs_clean,
            bpp,
            self.hf_energy,
            self.precision,
            self.recall,
            self.ap50
        )
    }
}

pub fn to_tsv(rows: &[EvalRow]) -> String {
    let mut s = String::from(TSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.to_tsv()).expect("writing to a String");
    }
    s
}

/// Decodes layer `layer` of every frame of `clip`.
pub fn reconstruct_clip(model: &CodecModel, clip: &Clip, layer: usize) -> Result<Clip> {
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let p = model.encode_latent(f)?;
            Ok(model.decode_layer(&p, layer)?.with_index(f.frame_index, f.timestamp_ms))
        })
        .collect::<Result<Vec<_>>>()?;
    Clip::new(frames, clip.fps)
}

/// Scores `method` output against the noisy input, the clean frames and
/// the truth boxes.
pub fn score_clip(
    method: &str,
    clip_name: &str,
    output: &Clip,
    noisy: &Clip,
    clean: &Clip,
    truth: &EvalTruth,
    bpp: Option<f64>,
) -> Result<EvalRow> {
    if output.len() != noisy.len() || output.len() != clean.len() || output.is_empty() {
        return Err(Error::Dimension(format!(
            "{clip_name}: output {} frames, noisy {}, clean {}",
            output.len(),
            noisy.len(),
            clean.len()
        )));
    }
    let n = output.len() as f64;
    let mut s_noisy = 0.0;
    let mut s_clean = 0.0;
    let mut hf = 0.0;
    for ((o, x), c) in output.frames.iter().zip(&noisy.frames).zip(&clean.frames) {
        s_noisy += ssim(o, x)?;
        s_clean += ssim(o, c)?;
        hf += hf_residual_energy(o, LOW_BAND)?;
    }
    let dets = detect_clip(output, DETECT_THRESHOLD, DETECT_MIN_AREA)?;
    let score = detection_score(&dets, &truth.boxes(), 0.5)?;
    Ok(EvalRow {
        method: method.to_string(),
        clip: clip_name.to_string(),
        ssim_vs_noisy: s_noisy / n,
        ssim_vs_clean: s_clean / n,
        bpp,
        hf_energy: hf / n,
        precision: score.precision,
        recall: score.recall,
        ap50: score.ap50,
    })
}

/// Mean index bpp of a clip streamed with a FULL frame every
/// `refresh_every` frames, starting with one.
pub fn stream_bpp(model: &CodecModel, clip: &Clip, refresh_every: u64) -> Result<f64> {
    let (w, h) = clip.dims().ok_or_else(|| Error::Invalid("empty clip".into()))?;
    let k = model.config.k;
    let v = model.config.codebook_size;
    let full = bitstream::payload_bits(w, h, k, v, Mode::Full)? as f64;
    let dynamic = bitstream::payload_bits(w, h, k, v, Mode::DynamicOnly)? as f64;
    let bits: f64 = (0..clip.len() as u64)
        .map(|i| if i % refresh_every.max(1) == 0 { full } else { dynamic })
        .sum();
    Ok(bits / (clip.len() * w * h) as f64)
}

/// Rows for the noisy input, the codec's full and coarse layers and the
/// DCT low-band baseline on one clip.
pub fn evaluate_clip(
    model: &CodecModel,
    clip_name: &str,
    noisy: &Clip,
    clean: &Clip,
    truth: &EvalTruth,
    refresh_every: u64,
) -> Result<Vec<EvalRow>> {
    let k = model.config.k;
    let full = reconstruct_clip(model, noisy, k)?;
    let coarse = reconstruct_clip(model, noisy, 1)?;
    let dct = Clip::new(
        noisy
            .frames
            .iter()
            .map(|f| dct_low_baseline(f, LOW_BAND))
            .collect::<Result<Vec<_>>>()?,
        noisy.fps,
    )?;
    Ok(vec![
        score_clip("noisy", clip_name, noisy, noisy, clean, truth, Some(8.0))?,
        score_clip("scope", clip_name, &full, noisy, clean, truth, Some(stream_bpp(model, noisy, refresh_every)?))?,
        score_clip("scope_layer1", clip_name, &coarse, noisy, clean, truth, None)?,
        score_clip("dct_low", clip_name, &dct, noisy, clean, truth, None)?,
    ])
}

/// One `mean` row per method, in first-seen method order.
pub fn method_means(rows: &[EvalRow]) -> Vec<EvalRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.method == m).collect();
            let n = sel.len() as f64;
            let avg = |f: fn(&EvalRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            let bpp = if sel.iter().all(|r| r.bpp.is_some()) {
                Some(sel.iter().map(|r| r.bpp.unwrap_or(0.0)).sum::<f64>() / n)
            } else {
                None
            };
            EvalRow {
                method: m.to_string(),
                clip: "mean".into(),
                ssim_vs_noisy: avg(|r| r.ssim_vs_noisy),
                ssim_vs_clean: avg(|r| r.ssim_vs_clean),
                bpp,
                hf_energy: avg(|r| r.hf_energy),
                precision: avg(|r| r.precision),
                recall: avg(|r| r.recall),
                ap50: avg(|r| r.ap50),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, v: f64, bpp: Option<f64>) -> EvalRow {
        EvalRow {
            method: method.into(),
            clip: "c".into(),
            ssim_vs_noisy: v,
            ssim_vs_clean: v,
            bpp,
            hf_energy: v,
            precision: v,
            recall: v,
            ap50: v,
        }
    }

    #[test]
    fn means_group_by_method() {
        let rows = [row("a", 1.0, Some(2.0)), row("b", 0.0, None), row("a", 0.5, Some(4.0))];
        let m = method_means(&rows);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].method.as_str(), m[0].ssim_vs_clean, m[0].bpp), ("a", 0.75, Some(3.0)));
        assert_eq!(m[1].bpp, None);
    }

    #[test]
    fn tsv_has_header_and_na() {
        let t = to_tsv(&[row("dct_low", 0.5, None)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0].split('\t').count(), 9);
        assert_eq!(lines[1].split('\t').nth(4), Some("NA"));
    }
}
