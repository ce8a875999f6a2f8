//! Oracles shared by the proxy tests and the acceptance suite.
#![allow(dead_code)]

use sonarcodec::proxy::{guided_filter, MogParams, MogState};
use sonarcodec::Frame;

/// Direct clipped-window box mean, no summed-area table.
pub fn naive_box(v: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    s += v[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

pub fn lcg_frame(w: usize, h: usize, seed: u64) -> Frame {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let values = (0..w * h)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect();
    Frame::new(w, h, values).unwrap()
}

/// Textbook single-pixel mixture update, written out longhand for K = 3.
pub struct Oracle {
    pub mean: [f32; 3],
    pub var: [f32; 3],
    pub weight: [f32; 3],
}

impl Oracle {
    pub fn step(&mut self, x: f32) -> f32 {
        let (alpha, t_bg, lambda) = (0.01f32, 0.7f32, 2.5f32);
        let fitness = |j: usize| self.weight[j] / self.var[j].sqrt();
        let mut idx = [0usize, 1, 2];
        // stable insertion sort, descending fitness
        for a in 1..3 {
            let mut b = a;
            while b > 0 && fitness(idx[b - 1]) < fitness(idx[b]) {
                idx.swap(b - 1, b);
                b -= 1;
            }
        }
        let mut bg = Vec::new();
        let mut acc = 0.0;
        for &j in &idx {
            bg.push(j);
            acc += self.weight[j];
            if acc >= t_bg {
                break;
            }
        }
        let mut d = f32::INFINITY;
        for &j in &bg {
            d = d.min((x - self.mean[j]).abs() / self.var[j].sqrt());
        }
        let mask = ((d - 1.0) / 1.5).clamp(0.0, 1.0);

        let mut hit = None;
        for &j in &idx {
            if self.weight[j] > 0.0 && (x - self.mean[j]).abs() <= lambda * self.var[j].sqrt() {
                hit = Some(j);
                break;
            }
        }
        if let Some(m) = hit {
            for j in 0..3 {
                self.weight[j] = (1.0 - alpha) * self.weight[j] + alpha * if j == m { 1.0 } else { 0.0 };
            }
            self.mean[m] = (1.0 - alpha) * self.mean[m] + alpha * x;
            let e = x - self.mean[m];
            self.var[m] = ((1.0 - alpha) * self.var[m] + alpha * e * e).max(1e-4);
        } else {
            let j = idx[2];
            self.mean[j] = x;
            self.var[j] = 0.05;
            self.weight[j] = alpha;
        }
        let s = self.weight[0] + self.weight[1] + self.weight[2];
        for j in 0..3 {
            self.weight[j] /= s;
        }
        mask
    }
}

/// Max deviation of the guided filter at eps = 1e6 from the box mean of
/// per-window means.
pub fn box_limit_error() -> f64 {
    let (w, h, r) = (40, 30, 4);
    let p = lcg_frame(w, h, 1);
    let g = lcg_frame(w, h, 2);
    let out = guided_filter(&p, &g, r, 1e6).unwrap();
    let pv: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
    let expect = naive_box(&naive_box(&pv, w, h, r), w, h, r);
    out.values.iter().zip(&expect).fold(0.0f64, |m, (a, b)| m.max((*a as f64 - b).abs()))
}

/// Max deviation of a self-guided filter at tiny eps from a piecewise
/// constant input, more than `r` pixels from its edges.
pub fn identity_limit_error() -> f64 {
    let (w, h, r) = (64, 48, 3);
    let values = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            match (x < 30, y < 20) {
                (true, true) => 0.2,
                (true, false) => 0.7,
                (false, true) => 0.45,
                (false, false) => 0.9,
            }
        })
        .collect();
    let p = Frame::new(w, h, values).unwrap();
    let out = guided_filter(&p, &p, r, 1e-9).unwrap();
    let mut worst = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let near_edge = (x as isize - 30).unsigned_abs() <= r || (y as isize - 20).unsigned_abs() <= r;
            if !near_edge {
                let i = y * w + x;
                worst = worst.max((out.values[i] - p.values[i]).abs() as f64);
            }
        }
    }
    worst
}

/// Drives one pixel through a 0.2 -> 0.9 step and compares mask, means,
/// variances and weights bit for bit with [`Oracle`]. Returns the first
/// mismatch.
pub fn mog_step_trace_mismatch() -> Option<String> {
    let mut mog = MogState::new(1, 1, MogParams::default()).unwrap();
    let mut oracle = Oracle {
        mean: [0.2, 0.0, 0.0],
        var: [0.05; 3],
        weight: [1.0, 0.0, 0.0],
    };
    for t in 0..60 {
        let x = if t < 30 { 0.2 } else { 0.9 };
        let got = mog.update(&Frame::new(1, 1, vec![x]).unwrap()).unwrap().values[0];
        if t == 0 {
            if got != 0.0 {
                return Some(format!("first frame mask {got}"));
            }
            continue;
        }
        let want = oracle.step(x);
        if got != want {
            return Some(format!("mask at frame {t}: {got} vs {want}"));
        }
        if t == 30 && got != 1.0 {
            return Some(format!("step frame mask {got}"));
        }
        let c = mog.pixel(0);
        for j in 0..3 {
            let pairs = [
                ("mean", c[j].mean, oracle.mean[j]),
                ("variance", c[j].variance, oracle.var[j]),
                ("weight", c[j].weight, oracle.weight[j]),
            ];
            for (name, a, b) in pairs {
                if a != b {
                    return Some(format!("{name} {j} at frame {t}: {a} vs {b}"));
                }
            }
        }
    }
    None
}

pub use golden::*;

mod golden {
    use sonarcodec::bitstream::{pack_frame, Mode};
    use sonarcodec::codec::{scale_dims, IndexGrid, IndexMapPyramid};

    pub const GOLDEN_FULL: &str = "golden_full.scpf";
    pub const GOLDEN_DYNAMIC: &str = "golden_dynamic.scpf";

    /// A fixed 256x256, k = 4 pyramid with a distinct pattern per scale.
    pub fn golden_pyramid() -> IndexMapPyramid {
        let scales = scale_dims(256, 256, 4)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(j, (gw, gh))| {
                let idx = (0..gw * gh).map(|i| ((i * 7 + j * 13 + 5) % 64) as u32).collect();
                IndexGrid::new(gw, gh, idx).unwrap()
            })
            .collect();
        IndexMapPyramid { frame_width: 256, frame_height: 256, scales }
    }

    /// The golden FULL frame (index 0) and DYNAMIC_ONLY frame (index 1).
    pub fn golden_streams() -> [(&'static str, Vec<u8>); 2] {
        let p = golden_pyramid();
        [
            (GOLDEN_FULL, pack_frame(&p, Mode::Full, 0, 64).unwrap().bytes),
            (GOLDEN_DYNAMIC, pack_frame(&p, Mode::DynamicOnly, 1, 64).unwrap().bytes),
        ]
    }
}
