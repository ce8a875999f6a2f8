//! Evaluation: SSIM, DCT low-band baseline and high-frequency energy, and a
//! blob-detection proxy scored against generator truth.

use numcore::Dct2;

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};
use crate::sonargen::{ObjectTrack, SceneTruth};

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut taps = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(v: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * v[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all valid 11×11 window positions.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_dims(b)?;
    let (w, h) = a.dims();
    let n = 2 * SSIM_RADIUS + 1;
    if w < n || h < n {
        return Err(Error::Dimension(format!("SSIM needs at least {n}x{n}, got {w}x{h}")));
    }
    let taps = gaussian_taps();
    let av: Vec<f64> = a.values.iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.values.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, _, _) = filter_valid(&av, w, h, &taps);
    let (mu_b, _, _) = filter_valid(&bv, w, h, &taps);
    let (e_aa, _, _) = filter_valid(&prod(&av, &av), w, h, &taps);
    let (e_bb, _, _) = filter_valid(&prod(&bv, &bv), w, h, &taps);
    let (e_ab, ow, oh) = filter_valid(&prod(&av, &bv), w, h, &taps);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / (ow * oh) as f64)
}

fn low_block(h: usize, w: usize, keep_ratio: f64) -> Result<(usize, usize)> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Invalid(format!("keep_ratio must be in (0, 1], got {keep_ratio}")));
    }
    let side = |n: usize| ((n as f64 * keep_ratio).round() as usize).clamp(1, n);
    Ok((side(h), side(w)))
}

/// Keeps the top-left `keep_ratio` block of the orthonormal DCT.
pub fn dct_low_baseline(frame: &Frame, keep_ratio: f64) -> Result<Frame> {
    let (w, h) = frame.dims();
    let (kh, kw) = low_block(h, w, keep_ratio)?;
    let plan = Dct2::new(h, w);
    let x: Vec<f64> = frame.values.iter().map(|&v| v as f64).collect();
    let mut c = plan.forward(&x);
    for v in 0..h {
        for u in 0..w {
            if v >= kh || u >= kw {
                c[v * w + u] = 0.0;
            }
        }
    }
    let y = plan.inverse(&c);
    Frame::from_clamped(w, h, y.into_iter().map(|v| v as f32).collect())
        .map(|f| f.with_index(frame.frame_index, frame.timestamp_ms))
}

/// Energy of DCT coefficients outside the low block, per pixel.
pub fn hf_residual_energy(frame: &Frame, keep_ratio: f64) -> Result<f64> {
    let (w, h) = frame.dims();
    let (kh, kw) = low_block(h, w, keep_ratio)?;
    let x: Vec<f64> = frame.values.iter().map(|&v| v as f64).collect();
    let c = Dct2::new(h, w).forward(&x);
    let mut e = 0.0;
    for v in 0..h {
        for u in 0..w {
            if v >= kh || u >= kw {
                e += c[v * w + u] * c[v * w + u];
            }
        }
    }
    Ok(e / (w * h) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

impl BBox {
    pub fn iou(&self, o: &BBox) -> f32 {
        let ix = ((self.x + self.w).min(o.x + o.w) - self.x.max(o.x)).max(0.0);
        let iy = ((self.y + self.h).min(o.y + o.h) - self.y.max(o.y)).max(0.0);
        let inter = ix * iy;
        let union = self.w * self.h + o.w * o.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains(&self, px: f32, py: f32) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }
}

/// Per-frame detections.
pub type DetectionSet = Vec<Vec<BBox>>;

/// Per-pixel median over the clip, the background estimate for detection.
pub fn median_frame(clip: &Clip) -> Result<Frame> {
    let (w, h) = clip
        .dims()
        .ok_or_else(|| Error::Invalid("median of an empty clip".into()))?;
    let mut column = vec![0.0f32; clip.len()];
    let mut out = vec![0.0f32; w * h];
    for (i, o) in out.iter_mut().enumerate() {
        for (c, f) in column.iter_mut().zip(&clip.frames) {
            *c = f.values[i];
        }
        column.sort_by(f32::total_cmp);
        let n = column.len();
        *o = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
    }
    Frame::new(w, h, out)
}

/// Excess over the median background that marks a detection pixel.
pub const DETECT_THRESHOLD: f32 = 0.3;
/// Smallest component, in pixels, reported as a detection.
pub const DETECT_MIN_AREA: usize = 30;

/// Connected components (8-neighbourhood) of `frame − background > threshold`.
pub fn detect_blobs(frame: &Frame, background: &Frame, threshold: f32, min_area: usize) -> Result<Vec<BBox>> {
    frame.same_dims(background)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let (w, h) = frame.dims();
    let excess: Vec<f32> = frame.values.iter().zip(&background.values).map(|(a, b)| a - b).collect();
    let fg: Vec<bool> = excess.iter().map(|&e| e > threshold).collect();
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let mut area = 0usize;
        let mut sum = 0.0f64;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            area += 1;
            sum += excess[i] as f64;
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = ny * w + nx;
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            boxes.push(BBox {
                x: x0 as f32,
                y: y0 as f32,
                w: (x1 + 1 - x0) as f32,
                h: (y1 + 1 - y0) as f32,
                score: ((sum / area as f64) as f32).clamp(0.0, 1.0),
            });
        }
    }
    Ok(boxes)
}

/// Runs [`detect_blobs`] on every frame against the clip's median frame.
pub fn detect_clip(clip: &Clip, threshold: f32, min_area: usize) -> Result<DetectionSet> {
    let bg = median_frame(clip)?;
    clip.frames
        .iter()
        .map(|f| detect_blobs(f, &bg, threshold, min_area))
        .collect()
}

/// Ground-truth object boxes per frame (score 1).
pub fn truth_boxes(truth: &SceneTruth) -> DetectionSet {
    truth_boxes_for(&truth.object_tracks, truth.n_frames(), truth.width, truth.height)
}

/// [`truth_boxes`] from bare tracks.
pub fn truth_boxes_for(tracks: &[ObjectTrack], n_frames: usize, width: usize, height: usize) -> DetectionSet {
    (0..n_frames)
        .map(|t| {
            tracks
                .iter()
                .map(|tr| {
                    let (x, y, w, h) = tr.bbox(t, width, height);
                    BBox { x, y, w, h, score: 1.0 }
                })
                .filter(|b| b.w > 0.0 && b.h > 0.0)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
}

/// Greedy score-ordered IoU matching and all-point interpolated AP.
/// Precision is reported as 0 when there are no detections.
pub fn detection_score(detections: &[Vec<BBox>], truth: &[Vec<BBox>], iou_thresh: f32) -> Result<DetectionScore> {
    if detections.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} detection frames vs {} truth frames",
            detections.len(),
            truth.len()
        )));
    }
    let n_truth: usize = truth.iter().map(Vec::len).sum();
    let mut ranked: Vec<(usize, &BBox)> = detections
        .iter()
        .enumerate()
        .flat_map(|(t, ds)| ds.iter().map(move |d| (t, d)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut taken: Vec<Vec<bool>> = truth.iter().map(|ts| vec![false; ts.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (k, (t, d)) in ranked.iter().enumerate() {
        let best = truth[*t]
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*t][*j])
            .map(|(j, g)| (j, d.iou(g)))
            .filter(|&(_, iou)| iou >= iou_thresh)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            taken[*t][j] = true;
            tp += 1;
        }
        let precision = tp as f64 / (k + 1) as f64;
        let recall = if n_truth == 0 { 0.0 } else { tp as f64 / n_truth as f64 };
        curve.push((recall, precision));
    }

    // precision envelope, integrated over recall steps
    let mut ap = 0.0;
    let mut env: Vec<f64> = curve.iter().map(|c| c.1).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut last_recall = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        if r > last_recall {
            ap += (r - last_recall) * env[i];
            last_recall = r;
        }
    }

    Ok(DetectionScore {
        precision: if ranked.is_empty() { 0.0 } else { tp as f64 / ranked.len() as f64 },
        recall: if n_truth == 0 { 0.0 } else { tp as f64 / n_truth as f64 },
        ap50: ap,
    })
}
