//! Central finite-difference gradient checks.
//!
//! The forward pass is re-evaluated in isolation for each perturbed input and
//! its output is projected onto a fixed random direction, accumulating in
//! `f64`. Errors are reported relative to the largest numerical gradient
//! component of each input.

use crate::init::{normal, seeded_rng};
use crate::{Result, Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-3;

/// Builds an op's output from its input leaves.
pub type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn projected(tape: &Tape, y: Var, dir: &[f32]) -> f64 {
    let n = dir.len() as f64;
    tape.value(y)
        .data()
        .iter()
        .zip(dir)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum::<f64>()
        / n
}

fn forward(inputs: &[Tensor], build: &Build) -> Result<(Tape, Var, Vec<Var>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let y = build(&mut tape, &vars)?;
    Ok((tape, y, vars))
}

/// Worst relative error between the tape gradient and central differences
/// over all `inputs`. `seed` picks the projection direction.
pub fn max_rel_error(inputs: Vec<Tensor>, build: &Build, seed: u64) -> Result<f64> {
    let (mut tape, y, vars) = forward(&inputs, build)?;
    let dir_t = normal(tape.shape(y), 1.0, &mut seeded_rng(seed));
    let dir = dir_t.data().to_vec();
    let d = tape.constant(Tensor::new(tape.shape(y).to_vec(), dir.clone())?);
    let prod = tape.mul(y, d)?;
    let loss = tape.mean(prod)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map(|g| g.to_vec()).unwrap_or(vec![0.0; input.len()]);
        let mut numeric = vec![0.0f64; input.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP as f32;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP as f32;
            let (tp, yp, _) = forward(&plus, build)?;
            let (tm, ym, _) = forward(&minus, build)?;
            let step = (plus[k].data()[i] as f64) - (minus[k].data()[i] as f64);
            *slot = (projected(&tp, yp, &dir) - projected(&tm, ym, &dir)) / step;
        }
        let scale = numeric.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
        let err = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((*a as f64 - n).abs()));
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

/// Standard normal values with magnitudes pushed to at least `margin`, so
/// that finite-difference steps never cross the kink of piecewise-linear ops.
pub fn away_from_zero(shape: &[usize], seed: u64, margin: f32) -> Tensor {
    let mut t = normal(shape, 1.0, &mut seeded_rng(seed));
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v >= 0.0 { *v + margin } else { *v - margin };
        }
    }
    t
}
