//! Posterior weighting over the dominant supports, approximate MMSE and
//! MAP assembly, and the sparsity/noise bootstrap.

use serde::{Deserialize, Serialize};

use crate::datagen::variance_floor;
use crate::error::{domain, Error, Result};
use crate::model::blue_estimate;
use crate::par;
use crate::recursive::{precompute, PrecomputeCache};
use crate::search::{search_with_budget, DominantSet, SearchConfig};
use crate::types::{check_rate, embed, norm_sqr, CMatrix, ProblemInstance, SupportSet, C64, ZERO};

/// Relative change of `p̂` below which the bootstrap stops.
pub const P_CHANGE_TOL: f64 = 0.02;

/// `exp(ν − max ν)`, normalized.
pub fn posterior_weights(dominant: &DominantSet) -> Result<Vec<f64>> {
    let nus: Vec<f64> = dominant.entries.iter().map(|e| e.nu).collect();
    softmax(&nus)
}

fn softmax(nus: &[f64]) -> Result<Vec<f64>> {
    if nus.is_empty() {
        return Err(Error::EmptySet);
    }
    if nus.iter().any(|v| !v.is_finite()) {
        return Err(domain("metric values must be finite"));
    }
    let max = nus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = nus.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Posterior mixture of per-support BLUEs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub x: Vec<C64>,
    /// Weight per dominant entry; zero for dropped entries.
    pub weights: Vec<f64>,
    /// Entries skipped because their Gram matrix was rank deficient.
    pub dropped: Vec<usize>,
}

/// `Σ_S w(S) embed(BLUE(S))` over the dominant set. Rank-deficient
/// supports are dropped and the remaining weights renormalized.
pub fn ammse_estimate(instance: &ProblemInstance, dominant: &DominantSet) -> Result<Mixture> {
    mixture(&instance.phi, &instance.y, dominant)
}

fn mixture(phi: &CMatrix, y: &[C64], dominant: &DominantSet) -> Result<Mixture> {
    if dominant.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = phi.cols();
    let blues = par::map_indices(dominant.len(), |k| blue_estimate(phi, y, &dominant.entries[k].support));
    let mut dropped = Vec::new();
    let mut kept_nu = Vec::new();
    for (k, b) in blues.iter().enumerate() {
        match b {
            Ok(_) => kept_nu.push(dominant.entries[k].nu),
            Err(Error::RankDeficient { .. }) => dropped.push(k),
            Err(e) => return Err(e.clone()),
        }
    }
    if kept_nu.is_empty() {
        return Err(Error::EmptySet);
    }
    let kept_w = softmax(&kept_nu)?;
    let mut weights = vec![0.0; dominant.len()];
    let mut x = vec![ZERO; n];
    let mut next = kept_w.into_iter();
    for (k, b) in blues.into_iter().enumerate() {
        if let Ok(coeffs) = b {
            let w = next.next().expect("one weight per kept entry");
            weights[k] = w;
            for (i, c) in dominant.entries[k].support.iter().zip(coeffs) {
                x[i] += c * w;
            }
        }
    }
    Ok(Mixture { x, weights, dropped })
}

/// Support with the largest `ν` (ties: smaller cardinality, then
/// lexicographic) and its embedded BLUE.
pub fn map_estimate(instance: &ProblemInstance, dominant: &DominantSet) -> Result<(SupportSet, Vec<C64>)> {
    map_from(&instance.phi, &instance.y, dominant)
}

fn map_from(phi: &CMatrix, y: &[C64], dominant: &DominantSet) -> Result<(SupportSet, Vec<C64>)> {
    if dominant.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut order: Vec<usize> = (0..dominant.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&dominant.entries[a], &dominant.entries[b]);
        eb.nu
            .total_cmp(&ea.nu)
            .then(ea.support.len().cmp(&eb.support.len()))
            .then(ea.support.cmp(&eb.support))
    });
    for k in order {
        let s = &dominant.entries[k].support;
        match blue_estimate(phi, y, s) {
            Ok(coeffs) => return Ok((s.clone(), embed(phi.cols(), s, &coeffs))),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::EmptySet)
}

/// Mean-removed residual variance `(1/M) Σ |r_j − r̄|²` of `y − Φx`,
/// floored at `1e-12 ‖y‖² / M`.
pub fn residual_variance(phi: &CMatrix, y: &[C64], x: &[C64]) -> f64 {
    let fit = phi.mul_vec(x);
    let r: Vec<C64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    let m = r.len() as f64;
    let mean = r.iter().sum::<C64>() / m;
    let var = r.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / m;
    var.max(variance_floor(norm_sqr(y), y.len())).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverOptions {
    /// Known sparsity rate. With `sigma2` also set, no bootstrap is run.
    pub p: Option<f64>,
    /// Known noise variance. Without `p` it replaces the residual estimate
    /// after the sparsity bootstrap.
    pub sigma2: Option<f64>,
    /// Starting sparsity rate for the bootstrap.
    pub p_init: f64,
    pub max_iter: usize,
    pub search: SearchConfig,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            p: None,
            sigma2: None,
            p_init: 0.003,
            max_iter: 10,
            search: SearchConfig::default(),
        }
    }
}

impl RecoverOptions {
    pub fn known(p: f64, sigma2: f64, search: SearchConfig) -> Self {
        Self {
            p: Some(p),
            sigma2: Some(sigma2),
            search,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryResult {
    pub x_ammse: Vec<C64>,
    pub x_map: Vec<C64>,
    pub s_map: SupportSet,
    pub p_hat: f64,
    pub sigma2_hat: f64,
    pub dominant: DominantSet,
    pub weights: Vec<f64>,
    /// Bootstrap rounds run (zero when both hyperparameters were given).
    pub iterations: usize,
    /// False when the bootstrap hit `max_iter` without meeting the 2% rule.
    pub converged: bool,
    /// `p̂` after each bootstrap round, starting with `p_init`.
    pub p_history: Vec<f64>,
    /// Dominant entries dropped from the mixture for rank deficiency.
    pub dropped: Vec<usize>,
    /// Support budget used by the final search.
    pub budget: usize,
}

fn assemble(
    cache: &PrecomputeCache<'_>,
    y: &[C64],
    sigma2: f64,
    p: f64,
    search: &SearchConfig,
) -> Result<RecoveryResult> {
    let phi = cache.phi();
    let budget = search.resolve_budget(phi.rows(), phi.cols(), p)?;
    let dominant = search_with_budget(cache, sigma2, p, budget, search);
    let mix = mixture(phi, y, &dominant)?;
    let (s_map, x_map) = map_from(phi, y, &dominant)?;
    Ok(RecoveryResult {
        x_ammse: mix.x,
        x_map,
        s_map,
        p_hat: p,
        sigma2_hat: sigma2,
        dominant,
        weights: mix.weights,
        iterations: 0,
        converged: true,
        p_history: Vec::new(),
        dropped: mix.dropped,
        budget,
    })
}

/// Estimates `p` by iterating `p̂ ← ‖x̂_map‖₀ / N` until it changes by less
/// than 2% (or `max_iter` rounds), then `σ̂²` once from the final MAP
/// residual, and returns the recovery at `(p̂, σ̂²)`.
///
/// During the iterations `σ²` is held at `‖y‖²/M`: selection ignores it, and
/// tying the MAP threshold to the data scale keeps the support count from
/// chasing noise columns. A supplied `options.sigma2` is used for the final
/// recovery instead of the residual estimate.
pub fn estimate_hyperparameters(phi: &CMatrix, y: &[C64], options: &RecoverOptions) -> Result<RecoveryResult> {
    let cache = precompute(phi, y)?;
    bootstrap(&cache, y, options)
}

fn bootstrap(cache: &PrecomputeCache<'_>, y: &[C64], options: &RecoverOptions) -> Result<RecoveryResult> {
    let phi = cache.phi();
    let (m, n) = (phi.rows(), phi.cols());
    let p_init = options.p.unwrap_or(options.p_init);
    check_rate(p_init)?;
    options.search.validate()?;
    if let Some(s) = options.sigma2 {
        if !(s > 0.0 && s.is_finite()) {
            return Err(domain(format!("sigma2 must be positive, got {s}")));
        }
    }
    let floor = variance_floor(cache.y_energy(), m).max(f64::MIN_POSITIVE);
    let placeholder = (cache.y_energy() / m as f64).max(floor);
    let p_lo = 1.0 / n as f64;
    let p_hi = 0.5;
    let mut p = p_init;
    let mut history = vec![p];
    let mut converged = false;
    let mut iterations = 0;
    let mut x_map = Vec::new();
    for round in 1..=options.max_iter.max(1) {
        let budget = options.search.resolve_budget(m, n, p)?;
        let dominant = search_with_budget(cache, placeholder, p, budget, &options.search);
        let (s_map, x) = map_from(phi, y, &dominant)?;
        x_map = x;
        let p_next = (s_map.len() as f64 / n as f64).clamp(p_lo, p_hi);
        let change = (p_next - p).abs() / p;
        p = p_next;
        history.push(p);
        iterations = round;
        if change < P_CHANGE_TOL {
            converged = true;
            break;
        }
    }
    let sigma2 = options.sigma2.unwrap_or_else(|| residual_variance(phi, y, &x_map));
    let mut result = assemble(cache, y, sigma2, p, &options.search)?;
    result.iterations = iterations;
    result.converged = converged;
    result.p_history = history;
    Ok(result)
}

/// Full recovery. With both `p` and `σ²` supplied this is one search and
/// assembly; otherwise the hyperparameters are bootstrapped first.
pub fn recover(phi: &CMatrix, y: &[C64], options: &RecoverOptions) -> Result<RecoveryResult> {
    if y.len() != phi.rows() {
        return Err(Error::Dimension(format!(
            "observation length {} does not match M = {}",
            y.len(),
            phi.rows()
        )));
    }
    let cache = precompute(phi, y)?;
    match (options.p, options.sigma2) {
        (Some(p), Some(sigma2)) => {
            check_rate(p)?;
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(domain(format!("sigma2 must be positive, got {sigma2}")));
            }
            options.search.validate()?;
            assemble(&cache, y, sigma2, p, &options.search)
        }
        _ => bootstrap(&cache, y, options),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::exhaustive_mmse;
    use crate::datagen::{add_noise, derive_seed, gen_matrix, gen_signal, SignalModel};
    use crate::recursive::precompute;
    use crate::search::{repeated_search, DominantEntry};
    use itertools::Itertools;

    fn identity(n: usize) -> CMatrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        CMatrix::from_real_col_major(n, n, &data).unwrap()
    }

    fn scored(nus: &[f64]) -> DominantSet {
        DominantSet {
            entries: nus
                .iter()
                .enumerate()
                .map(|(i, &nu)| DominantEntry {
                    support: SupportSet::new(vec![i]).unwrap(),
                    nu,
                    xi: f64::NAN,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(posterior_weights(&scored(&[-4.0])).unwrap(), vec![1.0]);
        assert_eq!(posterior_weights(&scored(&[2.0, 2.0])).unwrap(), vec![0.5, 0.5]);
        let w = posterior_weights(&scored(&[3f64.ln(), 0.0])).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert!(matches!(posterior_weights(&DominantSet::default()), Err(Error::EmptySet)));
    }

    #[test]
    fn weights_shift_invariant() {
        let a = posterior_weights(&scored(&[-1.0, -3.5, 2.0, 0.25])).unwrap();
        let b = posterior_weights(&scored(&[-1001.0, -1003.5, -998.0, -999.75])).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn spike_instance() -> ProblemInstance {
        let phi = identity(4);
        let y = vec![C64::new(2.0, 0.0), C64::new(-1.0, 0.5), C64::new(0.0, 0.0), C64::new(0.3, 0.0)];
        ProblemInstance::new(phi, y, 0.5, 0.2).unwrap()
    }

    #[test]
    fn single_support_mixture_is_blue() {
        let inst = spike_instance();
        let set = DominantSet::from_supports(&inst, [SupportSet::new(vec![0, 1]).unwrap()]).unwrap();
        let mix = ammse_estimate(&inst, &set).unwrap();
        assert_eq!(mix.x, vec![inst.y[0], inst.y[1], ZERO, ZERO]);
    }

    #[test]
    fn equal_weight_singletons_average() {
        let inst = spike_instance();
        let set = DominantSet::from_scored([
            (SupportSet::new(vec![0]).unwrap(), -1.0),
            (SupportSet::new(vec![1]).unwrap(), -1.0),
        ])
        .unwrap();
        let mix = ammse_estimate(&inst, &set).unwrap();
        assert_eq!(mix.x, vec![inst.y[0] * 0.5, inst.y[1] * 0.5, ZERO, ZERO]);
    }

    #[test]
    fn rank_deficient_support_dropped() {
        // columns 0 and 2 coincide
        let phi = CMatrix::from_real_col_major(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let inst = ProblemInstance::new(phi, vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)], 1.0, 0.3).unwrap();
        let set = DominantSet::from_scored([
            (SupportSet::new(vec![0, 2]).unwrap(), 5.0),
            (SupportSet::new(vec![1]).unwrap(), 0.0),
        ])
        .unwrap();
        let mix = ammse_estimate(&inst, &set).unwrap();
        assert_eq!(mix.dropped, vec![0]);
        assert_eq!(mix.weights, vec![0.0, 1.0]);
        let (s, _) = map_estimate(&inst, &set).unwrap();
        assert_eq!(s.indices(), &[1]);
    }

    #[test]
    fn map_rules() {
        let inst = spike_instance();
        let set = DominantSet::from_scored([
            (SupportSet::new(vec![0]).unwrap(), -5.0),
            (SupportSet::new(vec![1]).unwrap(), -3.0),
            (SupportSet::new(vec![3]).unwrap(), -9.0),
        ])
        .unwrap();
        assert_eq!(map_estimate(&inst, &set).unwrap().0.indices(), &[1]);

        let tie = DominantSet::from_scored([
            (SupportSet::new(vec![0, 1, 3]).unwrap(), 1.0),
            (SupportSet::new(vec![1, 3]).unwrap(), 1.0),
            (SupportSet::new(vec![0, 1]).unwrap(), 1.0),
        ])
        .unwrap();
        let (s, x) = map_estimate(&inst, &tie).unwrap();
        assert_eq!(s.indices(), &[0, 1]);
        assert_eq!(x[3], ZERO);
    }

    #[test]
    fn restricted_family_matches_exhaustive() {
        let n = 8;
        let phi = gen_matrix(6, n, 41);
        let x = gen_signal(n, 0.25, &SignalModel::default(), 42).unwrap();
        let clean = phi.mul_vec(x.values());
        let (y, s2) = add_noise(&clean, 15.0, 43).unwrap();
        let inst = ProblemInstance::new(phi, y, s2, 0.25).unwrap();
        let family = std::iter::once(SupportSet::empty())
            .chain((1..=2).flat_map(|k| (0..n).combinations(k).map(|c| SupportSet::new(c).unwrap())));
        let set = DominantSet::from_supports(&inst, family).unwrap();
        let mix = ammse_estimate(&inst, &set).unwrap();
        let oracle = exhaustive_mmse(&inst, 2).unwrap();
        let d: f64 = mix.x.iter().zip(&oracle.x).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(d.sqrt() <= 1e-10 * norm_sqr(&oracle.x).sqrt());
    }

    #[test]
    fn mixture_is_bounded_by_largest_component() {
        let phi = gen_matrix(10, 24, 5);
        let x = gen_signal(24, 0.15, &SignalModel::default(), 6).unwrap();
        let (y, s2) = add_noise(&phi.mul_vec(x.values()), 10.0, 7).unwrap();
        let inst = ProblemInstance::new(phi, y, s2, 0.15).unwrap();
        let cache = precompute(&inst.phi, &inst.y).unwrap();
        let set = repeated_search(&inst, &cache, &SearchConfig::default()).unwrap();
        let mix = ammse_estimate(&inst, &set).unwrap();
        let max_norm = set
            .entries
            .iter()
            .map(|e| norm_sqr(&blue_estimate(&inst.phi, &inst.y, &e.support).unwrap()).sqrt())
            .fold(0.0, f64::max);
        assert!(norm_sqr(&mix.x).sqrt() <= max_norm * (1.0 + 1e-12));
        assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_variance_floor() {
        let phi = identity(3);
        let y = vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0)];
        let v = residual_variance(&phi, &y, &y);
        assert!((v - 1e-12 * 14.0 / 3.0).abs() < 1e-24);
        // mean-removed
        let v = residual_variance(&phi, &y, &[ZERO; 3]);
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_on_orthonormal_spikes() {
        let n = 64;
        let phi = identity(n);
        let mut x = vec![ZERO; n];
        for (i, a) in [(3, 10.0), (17, 8.0), (40, 6.0), (58, 12.0)] {
            x[i] = C64::new(a, 0.0);
        }
        let y = phi.mul_vec(&x);
        let res = estimate_hyperparameters(&phi, &y, &RecoverOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.p_history[2], 4.0 / 64.0, "history {:?}", res.p_history);
        assert_eq!(res.p_hat, 4.0 / 64.0);
        assert_eq!(res.s_map.indices(), &[3, 17, 40, 58]);
        // exact recovery: variance clamps to the floor
        assert!((res.sigma2_hat - variance_floor(norm_sqr(&y), n)).abs() <= 1e-9 * res.sigma2_hat);
        for (a, b) in res.x_map.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn known_hyperparameters_exact_orthonormal() {
        let phi = identity(16);
        let mut x = vec![ZERO; 16];
        x[2] = C64::new(5.0, 0.0);
        x[9] = C64::new(-3.0, 1.0);
        let y = phi.mul_vec(&x);
        let opts = RecoverOptions::known(0.1, 1e-3, SearchConfig::default());
        let a = recover(&phi, &y, &opts).unwrap();
        assert_eq!(a.x_map, x);

        // off-support energy so that σ² changes the relative weights
        let mut y = y;
        y[4] = C64::new(0.01, 0.0);
        y[11] = C64::new(0.0, -0.02);
        let a = recover(&phi, &y, &opts).unwrap();
        let opts10 = RecoverOptions::known(0.1, 1e-2, SearchConfig::default());
        let b = recover(&phi, &y, &opts10).unwrap();
        assert_eq!(a.s_map, b.s_map);
        assert_eq!(
            a.dominant.entries.iter().map(|e| &e.support).collect::<Vec<_>>(),
            b.dominant.entries.iter().map(|e| &e.support).collect::<Vec<_>>()
        );
        assert_ne!(a.weights, b.weights);
    }

    #[test]
    fn recovery_is_deterministic() {
        let phi = gen_matrix(32, 96, derive_seed(1, 0, 0));
        let x = gen_signal(96, 0.05, &SignalModel::default(), 2).unwrap();
        let (y, _) = add_noise(&phi.mul_vec(x.values()), 20.0, 3).unwrap();
        let a = recover(&phi, &y, &RecoverOptions::default()).unwrap();
        let b = recover(&phi, &y, &RecoverOptions::default()).unwrap();
        assert_eq!(a.x_ammse, b.x_ammse);
        assert_eq!(a.dominant, b.dominant);
    }
}
