//! Self-supervised training on noisy clips and their hedging pairs.

use std::collections::BTreeSet;
use std::path::PathBuf;

use numcore::init::seeded_rng;
use numcore::{Adam, Tape};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::checkpoint;
use super::model::{hedging_loss_tape, CodecConfig, CodecModel};
use super::pyramid::scale_factor;
use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};
use crate::proxy::HedgingPair;

/// One training clip: noisy frames and the matching proxy targets.
#[derive(Debug, Clone)]
pub struct TrainClip {
    pub noisy: Clip,
    pub pairs: Vec<HedgingPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames drawn (without replacement) from every clip per epoch.
    pub frames_per_clip: usize,
    pub batch_size: usize,
    /// Peak learning rate; decays along a cosine to `lr_min` by the last step.
    pub lr: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Weight of the coarse-layer MSE against h1.
    pub layer1_weight: f32,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            frames_per_clip: 8,
            batch_size: 8,
            lr: 1e-3,
            lr_min: 1e-4,
            seed: 0,
            layer1_weight: 1.0,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub hedging: f64,
    pub layer1: f64,
    pub codebook: f64,
    pub commitment: f64,
    /// Distinct codebook entries assigned during the epoch.
    pub used_entries: usize,
    pub reseeded: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
}

fn check_data(data: &[TrainClip], cfg: &CodecConfig) -> Result<()> {
    if data.is_empty() || data.iter().all(|c| c.noisy.is_empty()) {
        return Err(Error::Invalid("training set is empty".into()));
    }
    for (i, c) in data.iter().enumerate() {
        if c.pairs.len() != c.noisy.len() {
            return Err(Error::Invalid(format!(
                "clip {i}: {} frames but {} hedging pairs",
                c.noisy.len(),
                c.pairs.len()
            )));
        }
        if let Some(dims) = c.noisy.dims() {
            if dims != (cfg.frame_width, cfg.frame_height) {
                return Err(Error::Dimension(format!(
                    "clip {i} is {}x{}, model trains at {}x{}",
                    dims.0, dims.1, cfg.frame_width, cfg.frame_height
                )));
            }
        }
    }
    Ok(())
}

/// Fills the codebook from encoder outputs of the first batch: each scale
/// gets an equal share of entries drawn from its quantizer inputs.
fn init_codebook(model: &mut CodecModel, batch: &[&Frame], rng: &mut impl Rng) -> Result<()> {
    let k = model.config.k;
    let v = model.codebook.size;
    let d = model.codebook.dim;
    let mut tape = Tape::new();
    let vars: Vec<_> = model.params.iter().map(|p| tape.constant(p.clone())).collect();
    let x = tape.constant(CodecModel::batch_tensor(batch)?);
    let z = model.encode_tape(&mut tape, &vars, x)?;
    let shape = tape.shape(z).to_vec();
    let (n, lh, lw) = (shape[0], shape[2], shape[3]);
    let mut residual = z;
    let mut next = 0;
    for j in 1..=k {
        let f = scale_factor(j, k);
        let dj = tape.block_mean(residual, f)?;
        let g = lh.div_ceil(f) * lw.div_ceil(f);
        let dv = tape.value(dj).data().to_vec();
        let vectors: Vec<Vec<f32>> = (0..n * g)
            .map(|cell| {
                let (b, c0) = (cell / g, cell % g);
                (0..d).map(|c| dv[b * d * g + c * g + c0]).collect()
            })
            .collect();
        let rms = (dv.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / dv.len().max(1) as f64).sqrt();
        let jitter = Normal::new(0.0, (0.05 * rms).max(1e-6)).expect("positive std");
        let share = if j == k { v - next } else { v / k };
        for _ in 0..share {
            let src = &vectors[rng.random_range(0..vectors.len())];
            let e: Vec<f32> = src.iter().map(|x| x + jitter.sample(rng) as f32).collect();
            model.codebook.set_entry(next, &e);
            next += 1;
        }
        if j < k {
            let mut qv = vec![0.0f32; dv.len()];
            for (cell, vec) in vectors.iter().enumerate() {
                let e = model.codebook.nearest(vec);
                let (b, c0) = (cell / g, cell % g);
                for (c, &val) in model.codebook.entry(e).iter().enumerate() {
                    qv[b * d * g + c * g + c0] = val;
                }
            }
            let q = tape.constant(numcore::Tensor::new(tape.shape(dj).to_vec(), qv)?);
            let up = tape.nearest_up(q, f, lh, lw)?;
            residual = tape.sub(residual, up)?;
        }
    }
    Ok(())
}

/// Trains a fresh model. Deterministic for a given config and seed.
pub fn train(
    model_cfg: CodecConfig,
    data: &[TrainClip],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &CodecModel),
) -> Result<(CodecModel, TrainLog)> {
    model_cfg.validate()?;
    check_data(data, &model_cfg)?;
    if cfg.batch_size == 0 || cfg.frames_per_clip == 0 || !(cfg.lr > 0.0) || !(cfg.lr_min >= 0.0) {
        return Err(Error::Invalid("batch_size, frames_per_clip and lr must be positive".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut model = CodecModel::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    let k = model.config.k;
    let (l1, l2, beta) = (model.config.lambda1, model.config.lambda2, model.config.beta);
    let mut tape = Tape::new();
    let mut initialized = false;
    let per_epoch: usize = data
        .iter()
        .map(|c| c.noisy.len().min(cfg.frames_per_clip))
        .sum::<usize>()
        .div_ceil(cfg.batch_size);
    let total_steps = (per_epoch * cfg.epochs).max(1);

    for epoch in 1..=cfg.epochs {
        let mut picks: Vec<(usize, usize)> = Vec::new();
        for (ci, clip) in data.iter().enumerate() {
            let mut idx: Vec<usize> = (0..clip.noisy.len()).collect();
            idx.shuffle(&mut rng);
            picks.extend(idx.into_iter().take(cfg.frames_per_clip).map(|t| (ci, t)));
        }
        picks.shuffle(&mut rng);

        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        let mut used = BTreeSet::new();
        let mut pool: Vec<f32> = Vec::new();
        for chunk in picks.chunks(cfg.batch_size) {
            let noisy: Vec<&Frame> = chunk.iter().map(|&(c, t)| &data[c].noisy.frames[t]).collect();
            let h1: Vec<&Frame> = chunk.iter().map(|&(c, t)| &data[c].pairs[t].h1).collect();
            let h2: Vec<&Frame> = chunk.iter().map(|&(c, t)| &data[c].pairs[t].h2).collect();
            if !initialized {
                init_codebook(&mut model, &noisy, &mut rng)?;
                initialized = true;
            }

            let progress = log.step_losses.len() as f64 / total_steps as f64;
            adam.lr = cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos());
            tape.reset();
            let vars = model.bind(&mut tape);
            let x = tape.constant(CodecModel::batch_tensor(&noisy)?);
            let t1 = tape.constant(CodecModel::batch_tensor(&h1)?);
            let t2 = tape.constant(CodecModel::batch_tensor(&h2)?);
            let z = model.encode_tape(&mut tape, &vars, x)?;
            let q = model.quantize_tape(&mut tape, z)?;
            let out_k = model.decode_tape(&mut tape, &vars, q.layers[k - 1])?;
            let out_1 = model.decode_tape(&mut tape, &vars, q.layers[0])?;
            let hedge = hedging_loss_tape(&mut tape, out_k, x, t1, t2, l1, l2)?;
            let coarse = tape.mse(out_1, t1)?;
            let mut terms = vec![(hedge, 1.0), (coarse, cfg.layer1_weight)];
            terms.extend(q.commit.iter().map(|&c| (c, beta)));
            let loss = tape.weighted_sum(&terms)?;

            let value = tape.value(loss).item().unwrap_or(f32::NAN) as f64;
            let commit_raw: f64 = q.commit.iter().map(|&c| tape.value(c).item().unwrap_or(0.0) as f64).sum();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "epoch {epoch} step {}: loss {value}, commitment {commit_raw}",
                    log.step_losses.len() + 1
                )));
            }
            tape.backward(loss)?;
            for (v, p) in vars.iter().zip(model.params.iter_mut()) {
                tape.accumulate_into(*v, p)?;
            }
            adam.adam_step(&mut model.params)?;
            for p in model.params.iter_mut() {
                p.zero_grad();
            }
            model
                .codebook
                .ema_update(q.assigned.iter().map(|(e, v)| (*e, v.as_slice())));
            if !model.codebook.is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}: codebook went non-finite")));
            }
            used.extend(q.assigned.iter().map(|(e, _)| *e));
            pool.clear();
            pool.extend(q.assigned.iter().flat_map(|(_, v)| v.iter().copied()));

            log.step_losses.push(value);
            sums[0] += value;
            sums[1] += tape.value(hedge).item().unwrap_or(0.0) as f64;
            sums[2] += tape.value(coarse).item().unwrap_or(0.0) as f64;
            sums[3] += commit_raw;
            sums[4] += beta as f64 * commit_raw;
            steps += 1;
        }
        let reseeded = model.codebook.end_epoch(&pool, &mut rng).len();
        let n = steps.max(1) as f64;
        let stats = EpochStats {
            epoch,
            steps,
            loss: sums[0] / n,
            hedging: sums[1] / n,
            layer1: sums[2] / n,
            codebook: sums[3] / n,
            commitment: sums[4] / n,
            used_entries: used.len(),
            reseeded,
        };
        if let Some(path) = &cfg.checkpoint {
            checkpoint::save(&model, path)?;
        }
        on_epoch(&stats, &model);
        log.epochs.push(stats);
    }
    Ok((model, log))
}

/// Distinct codebook entries used when encoding `frames`.
pub fn codebook_utilization<'a>(model: &CodecModel, frames: impl IntoIterator<Item = &'a Frame>) -> Result<usize> {
    let mut used = BTreeSet::new();
    for f in frames {
        for g in model.encode_latent(f)?.scales {
            used.extend(g.indices);
        }
    }
    Ok(used.len())
}

#[cfg(test)]
mod tests {
    #[test]
    fn training_path_never_touches_generator_truth() {
        let src = include_str!("train.rs");
        let body = &src[..src.find("#[cfg(test)]").expect("test module present")];
        for needle in [concat!("sonar", "gen"), concat!(".cl", "ean"), concat!("Scene", "Truth")] {
            assert!(!body.contains(needle), "training code references {needle}");
        }
    }
}
