use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{softmax_row, Tensor};

const UNIFORM_CLAMP: f64 = 1e-10;

/// One standard Gumbel draw, `-ln(-ln(u))` with `u` clamped away from 0 and 1.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| gumbel(rng)).collect()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(NumericsError::Parameter {
            name: "temperature",
            detail: format!("must be positive, got {temperature}"),
        });
    }
    Ok(())
}

/// `softmax((logits + noise) / temperature)` for explicit noise.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let perturbed: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    Ok(softmax_row(&perturbed, None))
}

/// Draws a relaxed one-hot sample `softmax((logits + g) / temperature)`
/// with `g` i.i.d. standard Gumbel.
pub fn gumbel_softmax<R: Rng + ?Sized>(
    logits: &Tensor,
    temperature: f64,
    rng: &mut R,
) -> Result<Tensor> {
    check_temperature(temperature)?;
    let noise = gumbel_noise(rng, logits.numel());
    let out = gumbel_softmax_with_noise(logits.data(), &noise, temperature)?;
    Tensor::new(logits.shape().to_vec(), out)
}

/// Differentiable Gumbel-Softmax sample of a logit vector on the tape.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    rng: &mut R,
) -> Result<Var> {
    check_temperature(temperature)?;
    let n = tape.value(logits).numel();
    let row = tape.reshape(logits, vec![1, n])?;
    let noise = tape.constant(Tensor::matrix(1, n, gumbel_noise(rng, n))?);
    let perturbed = tape.add(row, noise)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let y = tape.softmax(scaled, None)?;
    tape.reshape(y, vec![n])
}
