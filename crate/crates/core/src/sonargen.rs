//! Deterministic synthetic imaging-sonar scenes.
//!
//! A scene is a static background `S` (a fan-shaped insonified region with
//! arc-like structures), a set of bright elliptical objects on smoothed random
//! walks, and geometric artifact regions (acoustic shadows behind objects and
//! radially displaced reverberation ghosts). [`render_clip`] turns a scene into
//! a clean clip and a noisy clip; the noisy one adds correlated multiplicative
//! speckle, sub-frame motion blur and reverberation.
//!
//! Intensities are on `[0, 1]`; thresholds quoted on a 0–255 scale elsewhere
//! are divided by 255.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

/// Calibration thresholds on the normalized intensity scale.
pub const STRONG_CHANGE: f32 = 200.0 / 255.0;
pub const WEAK_CHANGE: f32 = 100.0 / 255.0;

const SHADOW_ATTENUATION: f32 = 0.4;
const GHOST_GAIN: f32 = 0.3;
const GHOST_OFFSET_PX: f32 = 20.0;
const SHADOW_LENGTH_PX: f32 = 36.0;
const MAX_SPEED: f32 = 3.0;
const SPECKLE_SHAPE: f64 = 4.0;
/// Exposure spans half a frame interval, sampled at three positions.
const BLUR_SUBSAMPLES: [f32; 3] = [-0.25, 0.0, 0.25];
/// Relative speckle contrast of object echoes.
const SPECULAR_SPECKLE: f32 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub n_objects: usize,
    pub speckle_strength: f32,
    pub shadow_on: bool,
    pub reverb_on: bool,
    pub blur_on: bool,
    pub fps: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            n_frames: 64,
            n_objects: 6,
            speckle_strength: 1.0,
            shadow_on: true,
            reverb_on: true,
            blur_on: true,
            fps: 15.0,
        }
    }
}

impl SceneConfig {
    /// Everything off: the noisy clip equals the clean clip.
    pub fn noiseless(mut self) -> Self {
        self.speckle_strength = 0.0;
        self.shadow_on = false;
        self.reverb_on = false;
        self.blur_on = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: u32,
    /// Per-frame center in pixels.
    pub centers: Vec<(f32, f32)>,
    /// Ellipse semi-axes along x and y.
    pub axes: (f32, f32),
    pub intensity: f32,
}

impl ObjectTrack {
    /// Displacement from the previous frame (the first frame reuses the next).
    pub fn velocity(&self, t: usize) -> (f32, f32) {
        let n = self.centers.len();
        if n < 2 {
            return (0.0, 0.0);
        }
        let (a, b) = if t == 0 { (0, 1) } else { (t - 1, t) };
        (
            self.centers[b].0 - self.centers[a].0,
            self.centers[b].1 - self.centers[a].1,
        )
    }

    /// Axis-aligned bounding box `(x, y, w, h)` at frame `t`, clipped to the
    /// frame.
    pub fn bbox(&self, t: usize, width: usize, height: usize) -> (f32, f32, f32, f32) {
        let (cx, cy) = self.centers[t];
        let x0 = (cx - self.axes.0).max(0.0);
        let y0 = (cy - self.axes.1).max(0.0);
        let x1 = (cx + self.axes.0).min(width as f32);
        let y1 = (cy + self.axes.1).min(height as f32);
        (x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }

    fn contains(&self, (cx, cy): (f32, f32), x: f32, y: f32) -> bool {
        let dx = (x - cx) / self.axes.0;
        let dy = (y - cy) / self.axes.1;
        dx * dx + dy * dy <= 1.0
    }
}

/// Generator ground truth. Only evaluation code may read it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub static_background: Frame,
    pub object_tracks: Vec<ObjectTrack>,
    /// Per-frame shadow/reverberation regions, row-major.
    pub artifact_masks: Vec<Vec<bool>>,
    /// Fraction of pixels whose object coverage changes between some pair of
    /// consecutive frames.
    pub dynamic_pixel_fraction: f64,
}

/// Fan geometry shared by background synthesis and object placement.
#[derive(Debug, Clone, Copy)]
struct Fan {
    apex: (f32, f32),
    half_angle: f32,
    r_min: f32,
    r_max: f32,
}

impl Fan {
    fn new(width: usize, height: usize) -> Self {
        let h = height as f32;
        Self {
            apex: (width as f32 / 2.0, h * 1.05),
            half_angle: 0.55,
            r_min: 0.14 * h,
            r_max: 1.02 * h,
        }
    }

    /// Range and bearing (0 = straight up) of a pixel.
    fn polar(&self, x: f32, y: f32) -> (f32, f32) {
        let dx = x - self.apex.0;
        let dy = self.apex.1 - y;
        ((dx * dx + dy * dy).sqrt(), dx.atan2(dy))
    }

    /// Soft membership in `[0, 1]` with ~2 px transitions.
    fn weight(&self, x: f32, y: f32) -> f32 {
        let (r, th) = self.polar(x, y);
        let edge_r = smoothstep((r - self.r_min) / 2.0) * smoothstep((self.r_max - r) / 2.0);
        let edge_th = smoothstep((self.half_angle - th.abs()) * r.max(1.0) / 2.0);
        edge_r * edge_th
    }

    fn inside(&self, x: f32, y: f32, margin: f32) -> bool {
        let (r, th) = self.polar(x, y);
        r >= self.r_min + margin
            && r <= self.r_max - margin
            && (self.half_angle - th.abs()) * r >= margin
    }

    fn to_cartesian(&self, r: f32, th: f32) -> (f32, f32) {
        (self.apex.0 + r * th.sin(), self.apex.1 - r * th.cos())
    }
}

fn smoothstep(t: f32) -> f32 {
    let t = (t + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn check_config(cfg: &SceneConfig) -> Result<()> {
    if cfg.width < 64 || cfg.height < 64 {
        return Err(Error::Invalid(format!(
            "scene must be at least 64x64, got {}x{}",
            cfg.width, cfg.height
        )));
    }
    if cfg.n_frames == 0 {
        return Err(Error::Invalid("scene needs at least one frame".into()));
    }
    if !(cfg.fps > 0.0) || !cfg.speckle_strength.is_finite() || cfg.speckle_strength < 0.0 {
        return Err(Error::Invalid("fps must be positive and speckle strength non-negative".into()));
    }
    Ok(())
}

fn background(fan: &Fan, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Frame {
    struct Arc {
        r: f32,
        sigma: f32,
        amp: f32,
        th0: f32,
        th1: f32,
    }
    struct Blob {
        x: f32,
        y: f32,
        sigma: f32,
        amp: f32,
    }
    let n_arcs = rng.random_range(2..=4);
    let arcs: Vec<Arc> = (0..n_arcs)
        .map(|_| {
            let span = rng.random_range(0.35..0.9f32) * fan.half_angle * 2.0;
            let center = rng.random_range(-0.4..0.4f32) * fan.half_angle;
            Arc {
                r: rng.random_range(0.3..0.92f32) * fan.r_max,
                sigma: rng.random_range(2.0..3.5),
                amp: rng.random_range(0.05..0.09),
                th0: center - span / 2.0,
                th1: center + span / 2.0,
            }
        })
        .collect();
    let blobs: Vec<Blob> = (0..4)
        .map(|_| Blob {
            x: rng.random_range(0.0..width as f32),
            y: rng.random_range(0.0..height as f32),
            sigma: rng.random_range(18.0..40.0),
            amp: rng.random_range(-0.02..0.03),
        })
        .collect();
    let gain = rng.random_range(0.03..0.05f32);
    let floor = 0.02f32;

    let mut values = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let w = fan.weight(px, py);
            let (r, th) = fan.polar(px, py);
            let mut v = 0.05 + gain * (r / fan.r_max);
            for b in &blobs {
                let d2 = (px - b.x).powi(2) + (py - b.y).powi(2);
                v += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            }
            for a in &arcs {
                let radial = (-(r - a.r).powi(2) / (2.0 * a.sigma * a.sigma)).exp();
                // tapered angular extent
                let taper = smoothstep((th - a.th0) * r / 6.0) * smoothstep((a.th1 - th) * r / 6.0);
                v += a.amp * radial * taper;
            }
            values[y * width + x] = (floor + w * (v - floor).max(0.0)).clamp(0.0, 0.6);
        }
    }
    Frame::new(width, height, values).expect("values clamped into range")
}

fn tracks(
    fan: &Fan,
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<ObjectTrack> {
    let noise = Normal::new(0.0f32, 0.35).expect("valid std");
    (0..cfg.n_objects)
        .map(|id| {
            let axes = (rng.random_range(9.0..13.0f32), rng.random_range(4.5..6.0f32));
            let margin = axes.0 + 2.0;
            let mut pos = loop {
                let r = rng.random_range(0.25..0.9f32) * fan.r_max;
                let th = rng.random_range(-0.8..0.8f32) * fan.half_angle;
                let p = fan.to_cartesian(r, th);
                if fan.inside(p.0, p.1, margin)
                    && p.0 > margin
                    && p.1 > margin
                    && p.0 < cfg.width as f32 - margin
                    && p.1 < cfg.height as f32 - margin
                {
                    break p;
                }
            };
            // preferred heading: mostly across the fan, like fish moving
            // along a river
            let heading = if rng.random_bool(0.5) { 0.0f32 } else { std::f32::consts::PI }
                + rng.random_range(-0.5..0.5f32);
            let cruise = rng.random_range(0.9..1.5f32);
            let mut pref = (cruise * heading.cos(), cruise * heading.sin());
            let mut vel = pref;
            let mut centers = Vec::with_capacity(cfg.n_frames);
            centers.push(pos);
            for _ in 1..cfg.n_frames {
                vel.0 = 0.8 * vel.0 + 0.2 * pref.0 + noise.sample(rng);
                vel.1 = 0.8 * vel.1 + 0.2 * pref.1 + noise.sample(rng);
                let speed = (vel.0 * vel.0 + vel.1 * vel.1).sqrt();
                if speed > MAX_SPEED {
                    vel.0 *= MAX_SPEED / speed;
                    vel.1 *= MAX_SPEED / speed;
                }
                let mut next = (pos.0 + vel.0, pos.1 + vel.1);
                let in_bounds = |p: (f32, f32)| {
                    fan.inside(p.0, p.1, margin)
                        && p.0 > margin
                        && p.1 > margin
                        && p.0 < cfg.width as f32 - margin
                        && p.1 < cfg.height as f32 - margin
                };
                if !in_bounds(next) {
                    // turn around and stay put for this frame
                    vel = (-vel.0, -vel.1);
                    pref = (-pref.0, -pref.1);
                    next = pos;
                }
                pos = next;
                centers.push(pos);
            }
            ObjectTrack {
                id: id as u32,
                centers,
                axes,
                intensity: rng.random_range(0.97..1.0),
            }
        })
        .collect()
}

/// Per-pixel object coverage at the given centers (hard ellipse test).
fn coverage(tracks: &[ObjectTrack], centers: &[(f32, f32)], x: f32, y: f32) -> Option<f32> {
    let mut best: Option<f32> = None;
    for (tr, &c) in tracks.iter().zip(centers) {
        if (x - c.0).abs() <= tr.axes.0 && (y - c.1).abs() <= tr.axes.1 && tr.contains(c, x, y) {
            best = Some(best.map_or(tr.intensity, |b: f32| b.max(tr.intensity)));
        }
    }
    best
}

fn shadow_hit(fan: &Fan, tr: &ObjectTrack, c: (f32, f32), x: f32, y: f32) -> bool {
    let (rc, thc) = fan.polar(c.0, c.1);
    let (r, th) = fan.polar(x, y);
    let front = rc + tr.axes.1;
    if r <= front || r > front + SHADOW_LENGTH_PX {
        return false;
    }
    let half_width = tr.axes.0 / rc.max(1.0);
    (th - thc).abs() <= half_width
}

fn ghost_center(fan: &Fan, c: (f32, f32)) -> (f32, f32) {
    let (r, th) = fan.polar(c.0, c.1);
    fan.to_cartesian(r + GHOST_OFFSET_PX, th)
}

struct FrameGeometry {
    shadow: Vec<bool>,
    ghost: Vec<bool>,
}

fn frame_geometry(fan: &Fan, truth_tracks: &[ObjectTrack], cfg: &SceneConfig, t: usize) -> FrameGeometry {
    let (w, h) = (cfg.width, cfg.height);
    let mut shadow = vec![false; w * h];
    let mut ghost = vec![false; w * h];
    for tr in truth_tracks {
        let c = tr.centers[t];
        let reach = tr.axes.0.max(tr.axes.1) + SHADOW_LENGTH_PX + GHOST_OFFSET_PX + 4.0;
        let x0 = (c.0 - reach).floor().max(0.0) as usize;
        let x1 = ((c.0 + reach).ceil() as usize).min(w);
        let y0 = (c.1 - reach).floor().max(0.0) as usize;
        let y1 = ((c.1 + reach).ceil() as usize).min(h);
        let g = ghost_center(fan, c);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                if cfg.shadow_on && shadow_hit(fan, tr, c, px, py) {
                    shadow[y * w + x] = true;
                }
                if cfg.reverb_on && tr.contains(g, px, py) {
                    ghost[y * w + x] = true;
                }
            }
        }
    }
    FrameGeometry { shadow, ghost }
}

/// Builds the static background, object tracks and artifact masks.
pub fn gen_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneTruth> {
    check_config(cfg)?;
    let fan = Fan::new(cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let static_background = background(&fan, cfg.width, cfg.height, &mut rng);
    let object_tracks = tracks(&fan, cfg, &mut rng);

    let (w, h) = (cfg.width, cfg.height);
    let mut artifact_masks = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let g = frame_geometry(&fan, &object_tracks, cfg, t);
        artifact_masks.push(g.shadow.iter().zip(&g.ghost).map(|(a, b)| *a || *b).collect());
    }

    let mut dynamic = vec![false; w * h];
    let mut prev: Option<Vec<bool>> = None;
    for t in 0..cfg.n_frames {
        let centers: Vec<_> = object_tracks.iter().map(|tr| tr.centers[t]).collect();
        let mut cov = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                cov[y * w + x] =
                    coverage(&object_tracks, &centers, x as f32 + 0.5, y as f32 + 0.5).is_some();
            }
        }
        if let Some(p) = &prev {
            for i in 0..w * h {
                dynamic[i] |= p[i] != cov[i];
            }
        }
        prev = Some(cov);
    }
    let dynamic_pixel_fraction = dynamic.iter().filter(|&&d| d).count() as f64 / (w * h) as f64;

    Ok(SceneTruth {
        width: w,
        height: h,
        seed,
        static_background,
        object_tracks,
        artifact_masks,
        dynamic_pixel_fraction,
    })
}

fn blur_offsets(cfg: &SceneConfig) -> &'static [f32] {
    if cfg.blur_on {
        &BLUR_SUBSAMPLES
    } else {
        &[0.0]
    }
}

fn frame_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Unit-mean speckle: gamma(shape 4) draws smoothed by a 3×3 box, then pulled
/// toward 1 by `strength`.
pub fn speckle_field(width: usize, height: usize, strength: f32, seed: u64) -> Vec<f32> {
    if strength == 0.0 {
        return vec![1.0; width * height];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(SPECKLE_SHAPE, 1.0 / SPECKLE_SHAPE).expect("valid gamma parameters");
    let raw: Vec<f32> = (0..width * height).map(|_| gamma.sample(&mut rng) as f32).collect();
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for dy in [-1isize, 0, 1] {
                for dx in [-1isize, 0, 1] {
                    let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    acc += raw[yy * width + xx];
                }
            }
            out[y * width + x] = 1.0 + strength * (acc / 9.0 - 1.0);
        }
    }
    out
}

/// Clean and noisy renderings of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedClip {
    pub clean: Clip,
    pub noisy: Clip,
}

pub fn render_clip(scene: &SceneTruth, cfg: &SceneConfig) -> Result<RenderedClip> {
    check_config(cfg)?;
    if (cfg.width, cfg.height) != (scene.width, scene.height)
        || scene.object_tracks.iter().any(|t| t.centers.len() != cfg.n_frames)
    {
        return Err(Error::Invalid("scene does not match the render config".into()));
    }
    let fan = Fan::new(cfg.width, cfg.height);
    let (w, h) = (cfg.width, cfg.height);
    let bg = &scene.static_background.values;
    let mut clean_frames = Vec::with_capacity(cfg.n_frames);
    let mut noisy_frames = Vec::with_capacity(cfg.n_frames);

    for t in 0..cfg.n_frames {
        let geom = frame_geometry(&fan, &scene.object_tracks, cfg, t);
        let centers: Vec<_> = scene.object_tracks.iter().map(|tr| tr.centers[t]).collect();
        let offsets = blur_offsets(cfg);
        let sub_centers: Vec<Vec<(f32, f32)>> = offsets
            .iter()
            .map(|&o| {
                scene
                    .object_tracks
                    .iter()
                    .map(|tr| {
                        let (vx, vy) = tr.velocity(t);
                        (tr.centers[t].0 + o * vx, tr.centers[t].1 + o * vy)
                    })
                    .collect()
            })
            .collect();
        let ghost_sub: Vec<Vec<(f32, f32)>> = sub_centers
            .iter()
            .map(|cs| cs.iter().map(|&c| ghost_center(&fan, c)).collect())
            .collect();
        let speckle = speckle_field(w, h, cfg.speckle_strength, frame_seed(scene.seed, t));

        let mut clean = vec![0.0f32; w * h];
        let mut noisy = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let base = if geom.shadow[i] {
                    bg[i] * (1.0 - SHADOW_ATTENUATION)
                } else {
                    bg[i]
                };
                clean[i] = coverage(&scene.object_tracks, &centers, px, py).unwrap_or(base);

                // object echoes are specular, so they carry less speckle than
                // the diffuse background and the ghosts
                let mut specular = 0.0;
                let mut diffuse = 0.0;
                for (k, cs) in sub_centers.iter().enumerate() {
                    match coverage(&scene.object_tracks, cs, px, py) {
                        Some(v) => specular += v,
                        None => diffuse += base,
                    }
                    if cfg.reverb_on {
                        diffuse += GHOST_GAIN
                            * coverage(&scene.object_tracks, &ghost_sub[k], px, py).unwrap_or(0.0);
                    }
                }
                let n = sub_centers.len() as f32;
                let m = speckle[i];
                let value = (specular * (1.0 + SPECULAR_SPECKLE * (m - 1.0)) + diffuse * m) / n;
                noisy[i] = value.clamp(0.0, 1.0);
            }
        }
        let ts = (t as f64 * 1000.0 / cfg.fps).round() as u64;
        clean_frames.push(Frame::from_clamped(w, h, clean)?.with_index(t as u32, ts));
        noisy_frames.push(Frame::from_clamped(w, h, noisy)?.with_index(t as u32, ts));
    }
    Ok(RenderedClip {
        clean: Clip::new(clean_frames, cfg.fps)?,
        noisy: Clip::new(noisy_frames, cfg.fps)?,
    })
}

/// Stacks column `column` of every frame: row `t` of the result is the
/// vertical slice of frame `t` (so the image is `height` wide and
/// `n_frames` tall).
pub fn echogram(clip: &Clip, column: usize) -> Result<Frame> {
    let (w, h) = clip
        .dims()
        .ok_or_else(|| Error::Invalid("echogram of an empty clip".into()))?;
    if column >= w {
        return Err(Error::Invalid(format!("column {column} outside width {w}")));
    }
    let mut values = Vec::with_capacity(h * clip.len());
    for f in &clip.frames {
        values.extend((0..h).map(|y| f.at(column, y)));
    }
    Frame::new(h, clip.len(), values)
}

/// Per-pixel maximum absolute change between consecutive frames.
pub fn temporal_change_heatmap(clip: &Clip) -> Result<Frame> {
    if clip.len() < 2 {
        return Err(Error::Invalid("temporal change needs at least two frames".into()));
    }
    let (w, h) = clip.dims().expect("non-empty");
    let mut out = vec![0.0f32; w * h];
    for pair in clip.frames.windows(2) {
        for (o, (a, b)) in out.iter_mut().zip(pair[0].values.iter().zip(&pair[1].values)) {
            *o = o.max((b - a).abs());
        }
    }
    Frame::new(w, h, out)
}

/// Pixels whose object coverage switches fully between consecutive frames
/// (inside every sub-frame position on one side, outside all of them on the
/// other) with no shadow or ghost at that pixel in either frame. These are
/// the pixels expected to show strong temporal change.
pub fn object_track_pixels(scene: &SceneTruth, cfg: &SceneConfig) -> Vec<bool> {
    let (w, h) = (scene.width, scene.height);
    let offsets = blur_offsets(cfg);
    let n = scene.object_tracks.first().map_or(0, |t| t.centers.len());
    // per-frame: 2 = covered at all sub-positions, 0 = at none, 1 = partial
    let state = |t: usize, px: f32, py: f32| -> u8 {
        let mut hits = 0;
        for &o in offsets {
            let cs: Vec<_> = scene
                .object_tracks
                .iter()
                .map(|tr| {
                    let (vx, vy) = tr.velocity(t);
                    (tr.centers[t].0 + o * vx, tr.centers[t].1 + o * vy)
                })
                .collect();
            if coverage(&scene.object_tracks, &cs, px, py).is_some() {
                hits += 1;
            }
        }
        if hits == offsets.len() {
            2
        } else if hits == 0 {
            0
        } else {
            1
        }
    };
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let near = scene.object_tracks.iter().any(|tr| {
                tr.centers.iter().any(|c| {
                    (px - c.0).abs() <= tr.axes.0 + MAX_SPEED && (py - c.1).abs() <= tr.axes.1 + MAX_SPEED
                })
            });
            if !near {
                continue;
            }
            let mut prev = state(0, px, py);
            for t in 1..n {
                let s = state(t, px, py);
                let i = y * w + x;
                let plain = !scene.artifact_masks[t - 1][i] && !scene.artifact_masks[t][i];
                if plain && ((prev == 0 && s == 2) || (prev == 2 && s == 0)) {
                    out[i] = true;
                    break;
                }
                prev = s;
            }
        }
    }
    out
}

/// Pixels never touched by an object at any sub-frame position; their
/// temporal change comes from speckle, shadows and reverberation only.
pub fn artifact_only_pixels(scene: &SceneTruth, cfg: &SceneConfig) -> Vec<bool> {
    let (w, h) = (scene.width, scene.height);
    let mut touched = vec![false; w * h];
    let offsets = blur_offsets(cfg);
    for tr in &scene.object_tracks {
        for t in 0..tr.centers.len() {
            let (vx, vy) = tr.velocity(t);
            for &o in offsets {
                let c = (tr.centers[t].0 + o * vx, tr.centers[t].1 + o * vy);
                let x0 = (c.0 - tr.axes.0 - 1.0).floor().max(0.0) as usize;
                let x1 = ((c.0 + tr.axes.0 + 1.0).ceil() as usize).min(w);
                let y0 = (c.1 - tr.axes.1 - 1.0).floor().max(0.0) as usize;
                let y1 = ((c.1 + tr.axes.1 + 1.0).ceil() as usize).min(h);
                for y in y0..y1 {
                    for x in x0..x1 {
                        if tr.contains(c, x as f32 + 0.5, y as f32 + 0.5) {
                            touched[y * w + x] = true;
                        }
                    }
                }
            }
        }
    }
    touched.into_iter().map(|t| !t).collect()
}

impl SceneTruth {
    /// Hard object-coverage mask at frame `t`.
    pub fn object_mask(&self, t: usize) -> Vec<bool> {
        let centers: Vec<_> = self.object_tracks.iter().map(|tr| tr.centers[t]).collect();
        let (w, h) = (self.width, self.height);
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] =
                    coverage(&self.object_tracks, &centers, x as f32 + 0.5, y as f32 + 0.5).is_some();
            }
        }
        out
    }

    pub fn n_frames(&self) -> usize {
        self.artifact_masks.len()
    }

    /// One `frame id cx cy ax ay intensity` record per (frame, object).
    pub fn tracks_to_text(&self) -> String {
        let mut out = String::new();
        for t in 0..self.n_frames() {
            for tr in &self.object_tracks {
                let (cx, cy) = tr.centers[t];
                let _ = writeln!(
                    out,
                    "{t} {} {cx} {cy} {} {} {}",
                    tr.id, tr.axes.0, tr.axes.1, tr.intensity
                );
            }
        }
        out
    }

    /// Parses [`SceneTruth::tracks_to_text`] output back into tracks.
    pub fn tracks_from_text(text: &str) -> Result<Vec<ObjectTrack>> {
        let mut tracks: Vec<ObjectTrack> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("truth line {}: expected 7 fields", ln + 1)));
            }
            let num = |i: usize| -> Result<f32> {
                f[i].parse()
                    .map_err(|_| Error::Format(format!("truth line {}: bad number {:?}", ln + 1, f[i])))
            };
            let frame: usize = f[0]
                .parse()
                .map_err(|_| Error::Format(format!("truth line {}: bad frame", ln + 1)))?;
            let id: u32 = f[1]
                .parse()
                .map_err(|_| Error::Format(format!("truth line {}: bad id", ln + 1)))?;
            let pos = match tracks.iter().position(|t| t.id == id) {
                Some(p) => p,
                None => {
                    tracks.push(ObjectTrack {
                        id,
                        centers: Vec::new(),
                        axes: (num(4)?, num(5)?),
                        intensity: num(6)?,
                    });
                    tracks.len() - 1
                }
            };
            if tracks[pos].centers.len() != frame {
                return Err(Error::Format(format!(
                    "truth line {}: frames for object {id} are not consecutive",
                    ln + 1
                )));
            }
            tracks[pos].centers.push((num(2)?, num(3)?));
        }
        Ok(tracks)
    }
}
