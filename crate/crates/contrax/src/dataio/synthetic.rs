use contrax_core::lti::{direct_parameterize_lti, to_explicit, ImplicitLti};
use contrax_core::sample;
use contrax_core::{Error, TimeSeriesDataset, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    StableLti,
    /// `y = tanh(Cx + Du)` on top of a stable linear state update.
    LtiPlusStaticNonlinearity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    WhiteNoise,
    Multisine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub input: InputKind,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: TimeSeriesDataset,
    pub system: ImplicitLti,
    pub output_tanh: bool,
}

const MULTISINE_TONES: usize = 8;

fn inputs(rng: &mut ChaCha8Rng, kind: InputKind, t: usize, m: usize) -> Vec<Vector> {
    match kind {
        InputKind::WhiteNoise => (0..t).map(|_| sample::normal_vector(rng, m, 1.0)).collect(),
        InputKind::Multisine => {
            // unit-RMS sum of tones on the DFT grid of the horizon
            let bins = (t / 2).max(1);
            let tones: Vec<Vec<(f64, f64)>> = (0..m)
                .map(|_| {
                    (0..MULTISINE_TONES)
                        .map(|_| {
                            let k = 1 + rng.random_range(0..bins);
                            let freq = 2.0 * std::f64::consts::PI * k as f64 / t.max(2) as f64;
                            (freq, 2.0 * std::f64::consts::PI * rng.random::<f64>())
                        })
                        .collect()
                })
                .collect();
            let amp = (2.0 / MULTISINE_TONES as f64).sqrt();
            (0..t)
                .map(|s| {
                    Vector::from_fn(m, |i, _| {
                        tones[i].iter().map(|&(w, phi)| amp * (w * s as f64 + phi).cos()).sum()
                    })
                })
                .collect()
        }
    }
}

/// Random stable system from the direct parameterization, simulated from
/// rest under the requested input, plus Gaussian output noise. Fully
/// determined by the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    let SyntheticSpec { n, m, p, horizon, .. } = *spec;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1").into());
    }
    if n == 0 || p == 0 {
        return Err(Error::invalid("synthetic systems need n >= 1 and p >= 1").into());
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be finite and >= 0").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let factor = sample::lti_factor(&mut rng, n, 1e-2)?;
    let k = sample::normal_matrix(&mut rng, n, m, 1.0 / (m.max(1) as f64).sqrt());
    let c = sample::normal_matrix(&mut rng, p, n, 1.0 / (n as f64).sqrt());
    let d = sample::normal_matrix(&mut rng, p, m, 0.5 / (m.max(1) as f64).sqrt());
    let system = direct_parameterize_lti(&factor, k, c, d)?;
    let explicit = to_explicit(&system)?;
    let us = inputs(&mut rng, spec.input, horizon, m);
    let tanh = spec.kind == SyntheticKind::LtiPlusStaticNonlinearity;

    let mut x = Vector::zeros(n);
    let mut ys = Vec::with_capacity(horizon);
    for u in &us {
        let (next, mut y) = explicit.step(&x, u);
        if tanh {
            y = y.map(f64::tanh);
        }
        if spec.noise_std > 0.0 {
            y += sample::normal_vector(&mut rng, p, spec.noise_std);
        }
        ys.push(y);
        x = next;
    }
    Ok(Synthetic {
        dataset: TimeSeriesDataset::new(us, ys, None)?,
        system,
        output_tanh: tanh,
    })
}
