use rand::Rng;

use crate::error::{Error, Result};

/// Shared quantization dictionary with exponential-moving-average updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub size: usize,
    pub dim: usize,
    /// `size × dim`, row-major.
    pub entries: Vec<f32>,
    pub ema_counts: Vec<f32>,
    pub ema_sums: Vec<f32>,
    pub decay: f32,
    /// Epochs an entry may go unused before it is reseeded.
    pub dead_after: u32,
    epoch_counts: Vec<u64>,
    dead_streak: Vec<u32>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, decay: f32, dead_after: u32) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Invalid("codebook needs at least one entry of dim >= 1".into()));
        }
        Ok(Self {
            size,
            dim,
            entries: vec![0.0; size * dim],
            ema_counts: vec![1.0; size],
            ema_sums: vec![0.0; size * dim],
            decay,
            dead_after,
            epoch_counts: vec![0; size],
            dead_streak: vec![0; size],
        })
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    /// Overwrites entry `i` and restarts its EMA statistics at that value.
    pub fn set_entry(&mut self, i: usize, v: &[f32]) {
        let d = self.dim;
        self.entries[i * d..(i + 1) * d].copy_from_slice(v);
        self.ema_sums[i * d..(i + 1) * d].copy_from_slice(v);
        self.ema_counts[i] = 1.0;
    }

    /// Index of the L2-nearest entry (lowest index on ties).
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = (0, f32::INFINITY);
        for i in 0..self.size {
            let e = self.entry(i);
            let mut d = 0.0f32;
            for (a, b) in e.iter().zip(v) {
                let t = a - b;
                d += t * t;
            }
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// One EMA step from `(entry, vector)` assignments. Entries without
    /// assignments keep their value; all counts and sums decay.
    pub fn ema_update<'a>(&mut self, assigned: impl IntoIterator<Item = (usize, &'a [f32])>) {
        let d = self.dim;
        let mut counts = vec![0.0f32; self.size];
        let mut sums = vec![0.0f32; self.size * d];
        for (i, v) in assigned {
            counts[i] += 1.0;
            for (s, x) in sums[i * d..(i + 1) * d].iter_mut().zip(v) {
                *s += x;
            }
        }
        let g = self.decay;
        for i in 0..self.size {
            self.ema_counts[i] = g * self.ema_counts[i] + (1.0 - g) * counts[i];
            for j in i * d..(i + 1) * d {
                self.ema_sums[j] = g * self.ema_sums[j] + (1.0 - g) * sums[j];
            }
            if counts[i] > 0.0 {
                self.epoch_counts[i] += counts[i] as u64;
                let n = self.ema_counts[i];
                for j in i * d..(i + 1) * d {
                    self.entries[j] = self.ema_sums[j] / n;
                }
            }
        }
    }

    /// Closes an epoch: entries unused for `dead_after` consecutive epochs
    /// are reseeded from `pool` (encoder outputs, `dim` floats each).
    /// Returns the reseeded entry ids.
    pub fn end_epoch<R: Rng>(&mut self, pool: &[f32], rng: &mut R) -> Vec<usize> {
        let mut reseeded = Vec::new();
        let n_pool = pool.len() / self.dim;
        for i in 0..self.size {
            if self.epoch_counts[i] < 1 {
                self.dead_streak[i] += 1;
            } else {
                self.dead_streak[i] = 0;
            }
            self.epoch_counts[i] = 0;
            if self.dead_streak[i] >= self.dead_after && n_pool > 0 {
                let p = rng.random_range(0..n_pool);
                let v = pool[p * self.dim..(p + 1) * self.dim].to_vec();
                self.set_entry(i, &v);
                self.dead_streak[i] = 0;
                reseeded.push(i);
            }
        }
        reseeded
    }

    pub fn dead_streak(&self, i: usize) -> u32 {
        self.dead_streak[i]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }
}
