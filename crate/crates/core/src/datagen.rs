//! Seeded synthetic problems: unit-norm Gaussian sensing matrices,
//! Bernoulli-masked signals and SNR-calibrated white noise.
//!
//! Every generator is a pure function of its arguments and seed. Per-trial
//! seeds come from [`derive_seed`], so trial results do not depend on the
//! order in which trials run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::types::{norm_sqr, CMatrix, SparseSignal, C64, ZERO};

/// splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for `(stream, index)` under a master seed:
/// `splitmix64(splitmix64(master ^ splitmix64(stream)) + index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Amplitude law for the active entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalModel {
    /// i.i.d. Gaussian amplitudes.
    GaussianIid { mu: f64, var: f64 },
    /// Each active entry draws its own mean and variance uniformly from the
    /// given ranges, then a uniform amplitude with that mean and variance.
    UniformNoniid {
        mu_min: f64,
        mu_max: f64,
        var_min: f64,
        var_max: f64,
    },
    /// Fixed amplitudes assigned cyclically to the active entries.
    CustomAmplitudes { values: Vec<f64> },
}

impl Default for SignalModel {
    fn default() -> Self {
        SignalModel::GaussianIid { mu: 10.0, var: 2.0 }
    }
}

impl SignalModel {
    pub fn uniform_noniid_default() -> Self {
        SignalModel::UniformNoniid {
            mu_min: 5.0,
            mu_max: 10.0,
            var_min: 1.0,
            var_max: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SignalModel::GaussianIid { mu, var } => {
                if !(mu.is_finite() && *var > 0.0 && var.is_finite()) {
                    return Err(domain("gaussian_iid needs finite mu and positive var"));
                }
            }
            SignalModel::UniformNoniid {
                mu_min,
                mu_max,
                var_min,
                var_max,
            } => {
                if !(mu_min <= mu_max && *var_min > 0.0 && var_min <= var_max && mu_max.is_finite() && var_max.is_finite()) {
                    return Err(domain("uniform_noniid needs ordered ranges and positive variances"));
                }
            }
            SignalModel::CustomAmplitudes { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v == 0.0) {
                    return Err(domain("custom_amplitudes needs nonzero finite values"));
                }
            }
        }
        Ok(())
    }
}

/// `M x N` matrix with i.i.d. circular complex Gaussian entries, columns
/// scaled to unit norm.
pub fn gen_matrix(m: usize, n: usize, seed: u64) -> CMatrix {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..n {
        let start = data.len();
        for _ in 0..m {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            data.push(C64::new(re, im));
        }
        normalize(&mut data[start..]);
    }
    CMatrix::from_col_major(m, n, data).expect("generated matrix is well formed")
}

/// Real-valued variant of [`gen_matrix`] (imaginary parts exactly zero).
pub fn gen_real_matrix(m: usize, n: usize, seed: u64) -> CMatrix {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..n {
        let start = data.len();
        for _ in 0..m {
            let re: f64 = StandardNormal.sample(&mut r);
            data.push(C64::new(re, 0.0));
        }
        normalize(&mut data[start..]);
    }
    CMatrix::from_col_major(m, n, data).expect("generated matrix is well formed")
}

fn normalize(col: &mut [C64]) {
    let norm = norm_sqr(col).sqrt();
    for z in col.iter_mut() {
        *z /= norm;
    }
}

/// Bernoulli(`p`) activation mask with amplitudes drawn from `model`.
/// Amplitudes are real; the signal is stored as complex with zero
/// imaginary parts.
pub fn gen_signal(n: usize, p: f64, model: &SignalModel, seed: u64) -> Result<SparseSignal> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("activation probability must lie in [0, 1], got {p}")));
    }
    model.validate()?;
    let mut r = rng(seed);
    let mut values = vec![ZERO; n];
    let mut active = 0usize;
    for v in values.iter_mut() {
        if r.random::<f64>() >= p {
            continue;
        }
        let a = match model {
            SignalModel::GaussianIid { mu, var } => Normal::new(*mu, var.sqrt())
                .expect("validated")
                .sample(&mut r),
            SignalModel::UniformNoniid {
                mu_min,
                mu_max,
                var_min,
                var_max,
            } => {
                let mu = mu_min + (mu_max - mu_min) * r.random::<f64>();
                let var = var_min + (var_max - var_min) * r.random::<f64>();
                let half = (3.0 * var).sqrt();
                mu - half + 2.0 * half * r.random::<f64>()
            }
            SignalModel::CustomAmplitudes { values } => values[active % values.len()],
        };
        active += 1;
        *v = C64::new(a, 0.0);
    }
    Ok(SparseSignal::from_values(values))
}

/// Per-entry noise variance giving `snr_db` for a clean observation:
/// `‖clean‖² = M σ² 10^(snr/10)`.
pub fn noise_variance(clean: &[C64], snr_db: f64) -> Result<f64> {
    let energy = norm_sqr(clean);
    let m = clean.len() as f64;
    if snr_db == f64::INFINITY {
        if energy == 0.0 {
            return Err(domain("noiseless observation of a zero signal"));
        }
        return Ok(variance_floor(energy, clean.len()));
    }
    if !snr_db.is_finite() {
        return Err(domain(format!("invalid SNR {snr_db}")));
    }
    if energy == 0.0 {
        return Err(domain("cannot calibrate SNR against a zero signal"));
    }
    Ok(energy / (m * 10f64.powf(snr_db / 10.0)))
}

/// Smallest admissible noise variance, `1e-12 ‖v‖² / M`.
pub fn variance_floor(energy: f64, m: usize) -> f64 {
    1e-12 * energy / m as f64
}

/// Adds circular complex Gaussian noise `CN(0, σ² I)` at the requested
/// SNR. `snr_db = +inf` leaves the observation clean and returns the
/// variance floor in place of zero.
pub fn add_noise(clean: &[C64], snr_db: f64, seed: u64) -> Result<(Vec<C64>, f64)> {
    let sigma2 = noise_variance(clean, snr_db)?;
    if snr_db == f64::INFINITY {
        return Ok((clean.to_vec(), sigma2));
    }
    let scale = (sigma2 / 2.0).sqrt();
    let mut r = rng(seed);
    let y = clean
        .iter()
        .map(|c| {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            c + C64::new(re, im) * scale
        })
        .collect();
    Ok((y, sigma2))
}

/// Real-valued noise `N(0, σ²)` on the real parts only.
pub fn add_real_noise(clean: &[C64], snr_db: f64, seed: u64) -> Result<(Vec<C64>, f64)> {
    let sigma2 = noise_variance(clean, snr_db)?;
    if snr_db == f64::INFINITY {
        return Ok((clean.to_vec(), sigma2));
    }
    let scale = sigma2.sqrt();
    let mut r = rng(seed);
    let y = clean
        .iter()
        .map(|c| {
            let e: f64 = StandardNormal.sample(&mut r);
            c + C64::new(e * scale, 0.0)
        })
        .collect();
    Ok((y, sigma2))
}

/// Unitary DFT matrix `F[j,k] = exp(-2πi jk/n)/√n`; an orthonormal basis
/// for exact-recovery checks.
pub fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    let mut data = Vec::with_capacity(n * n);
    for k in 0..n {
        for j in 0..n {
            let angle = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
            data.push(C64::from_polar(scale, angle));
        }
    }
    CMatrix::from_col_major(n, n, data).expect("n > 0")
}
