//! Proxy (hedging) targets built from noisy frames alone: an online
//! per-pixel mixture-of-Gaussians change detector and a guided filter applied
//! in both directions between the noisy frame and the change mask.

use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MogParams {
    pub k: usize,
    pub alpha: f32,
    /// Cumulative weight that the background components must reach.
    pub background_threshold: f32,
    /// Match distance in standard deviations.
    pub match_sigma: f32,
    pub initial_variance: f32,
    pub variance_floor: f32,
}

impl Default for MogParams {
    fn default() -> Self {
        Self {
            k: 3,
            alpha: 0.01,
            background_threshold: 0.7,
            match_sigma: 2.5,
            initial_variance: 0.05,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mean: f32,
    pub variance: f32,
    pub weight: f32,
}

/// Per-pixel Stauffer–Grimson mixture. Components of pixel `i` live at
/// `components[i * k .. (i + 1) * k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MogState {
    pub params: MogParams,
    pub width: usize,
    pub height: usize,
    pub components: Vec<Component>,
    initialized: bool,
}

impl MogState {
    pub fn new(width: usize, height: usize, params: MogParams) -> Result<Self> {
        if params.k == 0 || !(params.alpha > 0.0 && params.alpha < 1.0) {
            return Err(Error::Invalid("MOG needs k >= 1 and alpha in (0, 1)".into()));
        }
        let empty = Component {
            mean: 0.0,
            variance: params.initial_variance,
            weight: 0.0,
        };
        Ok(Self {
            params,
            width,
            height,
            components: vec![empty; width * height * params.k],
            initialized: false,
        })
    }

    pub fn pixel(&self, i: usize) -> &[Component] {
        let k = self.params.k;
        &self.components[i * k..(i + 1) * k]
    }

    /// Feeds one frame and returns the soft foreground mask computed against
    /// the model as it stood before this frame.
    pub fn update(&mut self, frame: &Frame) -> Result<Frame> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::Dimension(format!(
                "MOG state is {}x{}, frame is {}x{}",
                self.width, self.height, frame.width, frame.height
            )));
        }
        let k = self.params.k;
        let mut mask = vec![0.0f32; frame.len()];
        if !self.initialized {
            for (i, &x) in frame.values.iter().enumerate() {
                let comps = &mut self.components[i * k..(i + 1) * k];
                comps[0] = Component {
                    mean: x,
                    variance: self.params.initial_variance,
                    weight: 1.0,
                };
            }
            self.initialized = true;
            return Frame::new(self.width, self.height, mask);
        }
        let params = self.params;
        for (i, &x) in frame.values.iter().enumerate() {
            let comps = &mut self.components[i * k..(i + 1) * k];
            mask[i] = update_pixel(comps, x, &params);
        }
        Frame::new(self.width, self.height, mask)
    }
}

/// Component order by descending weight/σ; ties keep storage order.
fn ranked(comps: &[Component]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = comps[a].weight / comps[a].variance.sqrt();
        let fb = comps[b].weight / comps[b].variance.sqrt();
        fb.total_cmp(&fa)
    });
    order
}

/// One Stauffer–Grimson step for a single pixel. Returns the soft mask value.
pub fn update_pixel(comps: &mut [Component], x: f32, p: &MogParams) -> f32 {
    let order = ranked(comps);

    let mut cumulative = 0.0;
    let mut n_background = 0;
    for &j in &order {
        n_background += 1;
        cumulative += comps[j].weight;
        if cumulative >= p.background_threshold {
            break;
        }
    }
    // distance (in σ) to the nearest background component
    let d_min = order[..n_background]
        .iter()
        .map(|&j| (x - comps[j].mean).abs() / comps[j].variance.sqrt())
        .fold(f32::INFINITY, f32::min);
    let soft = ((d_min - 1.0) / (p.match_sigma - 1.0)).clamp(0.0, 1.0);

    let matched = order
        .iter()
        .copied()
        .find(|&j| comps[j].weight > 0.0 && (x - comps[j].mean).abs() <= p.match_sigma * comps[j].variance.sqrt());

    match matched {
        Some(m) => {
            for (j, c) in comps.iter_mut().enumerate() {
                let hit = if j == m { 1.0 } else { 0.0 };
                c.weight = (1.0 - p.alpha) * c.weight + p.alpha * hit;
            }
            let rho = p.alpha;
            let c = &mut comps[m];
            c.mean = (1.0 - rho) * c.mean + rho * x;
            let diff = x - c.mean;
            c.variance = ((1.0 - rho) * c.variance + rho * diff * diff).max(p.variance_floor);
        }
        None => {
            let weakest = *order.last().expect("k >= 1");
            comps[weakest] = Component {
                mean: x,
                variance: p.initial_variance,
                weight: p.alpha,
            };
        }
    }
    let total: f32 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
    soft
}

/// Box means over `(2r+1)²` windows clipped at the borders (each output is
/// the mean of the in-bounds pixels). Summed-area table in f64.
pub fn box_mean(values: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let stride = width + 1;
    let mut sat = vec![0.0f64; stride * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += values[y * width + x];
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(width);
            let s = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            out[y * width + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Guided filter of `p` under guidance `guide`.
pub fn guided_filter(p: &Frame, guide: &Frame, radius: usize, eps: f64) -> Result<Frame> {
    p.same_dims(guide)?;
    if radius == 0 || !(eps > 0.0) {
        return Err(Error::Invalid(format!(
            "guided filter needs radius >= 1 and eps > 0, got {radius} and {eps}"
        )));
    }
    let (w, h) = p.dims();
    let pv: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
    let iv: Vec<f64> = guide.values.iter().map(|&v| v as f64).collect();
    let ip: Vec<f64> = iv.iter().zip(&pv).map(|(a, b)| a * b).collect();
    let ii: Vec<f64> = iv.iter().map(|a| a * a).collect();
    let mean_i = box_mean(&iv, w, h, radius);
    let mean_p = box_mean(&pv, w, h, radius);
    let corr_ip = box_mean(&ip, w, h, radius);
    let corr_ii = box_mean(&ii, w, h, radius);
    let mut a = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for j in 0..w * h {
        let var = corr_ii[j] - mean_i[j] * mean_i[j];
        let cov = corr_ip[j] - mean_i[j] * mean_p[j];
        a[j] = cov / (var + eps);
        b[j] = mean_p[j] - a[j] * mean_i[j];
    }
    let mean_a = box_mean(&a, w, h, radius);
    let mean_b = box_mean(&b, w, h, radius);
    let out = (0..w * h)
        .map(|j| (mean_a[j] * iv[j] + mean_b[j]) as f32)
        .collect();
    Frame::from_clamped(w, h, out)
}

/// The two low-pass proxy targets for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgingPair {
    /// Noisy frame filtered with the change mask as guidance.
    pub h1: Frame,
    /// Change mask filtered with the noisy frame as guidance.
    pub h2: Frame,
}

pub fn hedging_pair(noisy: &Frame, mask: &Frame, radius: usize, eps: f64) -> Result<HedgingPair> {
    noisy.same_dims(mask)?;
    let h1 = guided_filter(noisy, mask, radius, eps)?.with_index(noisy.frame_index, noisy.timestamp_ms);
    let h2 = guided_filter(mask, noisy, radius, eps)?.with_index(noisy.frame_index, noisy.timestamp_ms);
    Ok(HedgingPair { h1, h2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyConfig {
    pub mog: MogParams,
    pub radius: usize,
    pub eps: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            mog: MogParams::default(),
            radius: 8,
            eps: 1e-3,
        }
    }
}

/// Runs the change detector causally over a noisy clip and builds one
/// hedging pair per frame.
pub fn proxy_clip(noisy: &Clip, cfg: &ProxyConfig) -> Result<Vec<HedgingPair>> {
    let Some((w, h)) = noisy.dims() else {
        return Ok(Vec::new());
    };
    let mut mog = MogState::new(w, h, cfg.mog)?;
    noisy
        .frames
        .iter()
        .map(|f| {
            let mask = mog.update(f)?;
            hedging_pair(f, &mask, cfg.radius, cfg.eps)
        })
        .collect()
}

/// Writes `h1/` and `h2/` clip directories under `dir`.
pub fn save_pairs(pairs: &[HedgingPair], fps: f64, dir: &Path, seed: u64) -> Result<()> {
    let h1 = Clip::new(pairs.iter().map(|p| p.h1.clone()).collect(), fps)?;
    let h2 = Clip::new(pairs.iter().map(|p| p.h2.clone()).collect(), fps)?;
    h1.save(&dir.join("h1"), seed)?;
    h2.save(&dir.join("h2"), seed)
}
