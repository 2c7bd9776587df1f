//! Reference recoveries: exhaustive posterior enumeration for small `N`
//! and orthogonal matching pursuit.

use itertools::Itertools;

use crate::error::{domain, Error, Result};
use crate::model::{blue_estimate, metric_direct, synthesize};
use crate::par;
use crate::types::{dot_h, embed, norm_sqr, CMatrix, ProblemInstance, SparseSignal, SupportSet, C64, ZERO};

/// Largest `N` accepted by the exhaustive oracles.
pub const EXHAUSTIVE_MAX_N: usize = 16;

#[derive(Debug, Clone)]
pub struct ExhaustiveOutput {
    /// Exact posterior mean over the enumerated family.
    pub x: Vec<C64>,
    /// `(S, ν(S))` for every full-rank support with `|S| ≤ k_max`.
    pub supports: Vec<(SupportSet, f64)>,
}

fn enumerate(instance: &ProblemInstance, k_max: usize) -> Result<Vec<(SupportSet, f64, Vec<C64>)>> {
    let n = instance.n();
    if n > EXHAUSTIVE_MAX_N {
        return Err(Error::TooLarge {
            n,
            limit: EXHAUSTIVE_MAX_N,
        });
    }
    let k_max = k_max.min(n);
    let supports: Vec<SupportSet> = (0..=k_max)
        .flat_map(|k| (0..n).combinations(k))
        .map(SupportSet::from_sorted_unchecked)
        .collect();
    let scored = par::map_indices(supports.len(), |i| {
        let s = &supports[i];
        let coeffs = blue_estimate(&instance.phi, &instance.y, s)?;
        let nu = metric_direct(instance, s)?;
        Ok::<_, Error>((nu, coeffs))
    });
    let mut out = Vec::with_capacity(supports.len());
    for (s, r) in supports.into_iter().zip(scored) {
        match r {
            Ok((nu, coeffs)) => out.push((s, nu, coeffs)),
            Err(Error::RankDeficient { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Posterior mean over every support of size at most `k_max` (the empty
/// support included). Rank-deficient supports carry no BLUE and are left
/// out of the sum.
pub fn exhaustive_mmse(instance: &ProblemInstance, k_max: usize) -> Result<ExhaustiveOutput> {
    let all = enumerate(instance, k_max)?;
    let max = all.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = all.iter().map(|e| (e.1 - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = vec![ZERO; instance.n()];
    for ((s, _, coeffs), w) in all.iter().zip(&weights) {
        let w = w / total;
        for (i, c) in s.iter().zip(coeffs) {
            x[i] += c * w;
        }
    }
    Ok(ExhaustiveOutput {
        x,
        supports: all.into_iter().map(|(s, nu, _)| (s, nu)).collect(),
    })
}

/// Support maximizing `ν` over all supports of size at most `k_max`; ties
/// go to the smaller support, then the lexicographically smaller one.
pub fn exhaustive_map(instance: &ProblemInstance, k_max: usize) -> Result<SupportSet> {
    let all = enumerate(instance, k_max)?;
    all.into_iter()
        .map(|(s, nu, _)| (s, nu))
        .reduce(|a, b| {
            let b_wins = b.1 > a.1 || (b.1 == a.1 && (b.0.len(), &b.0) < (a.0.len(), &a.0));
            if b_wins {
                b
            } else {
                a
            }
        })
        .map(|(s, _)| s)
        .ok_or(Error::EmptySet)
}

/// Stopping rule for OMP: a target support size, a relative residual
/// tolerance `‖r‖ ≤ tol ‖y‖`, or both (whichever triggers first).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OmpStop {
    pub k_target: Option<usize>,
    pub residual_tol: Option<f64>,
}

impl OmpStop {
    pub fn sparsity(k: usize) -> Self {
        Self {
            k_target: Some(k),
            residual_tol: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OmpResult {
    pub signal: SparseSignal,
    /// Selected columns (including any whose coefficient came out zero).
    pub active: SupportSet,
    /// `‖r‖` before the first and after every iteration.
    pub residual_norms: Vec<f64>,
}

pub fn omp_recover(phi: &CMatrix, y: &[C64], stop: OmpStop) -> Result<OmpResult> {
    if y.len() != phi.rows() {
        return Err(Error::Dimension(format!(
            "observation length {} does not match M = {}",
            y.len(),
            phi.rows()
        )));
    }
    if stop.k_target.is_none() && stop.residual_tol.is_none() {
        return Err(domain("OMP needs k_target or residual_tol"));
    }
    if let Some(t) = stop.residual_tol {
        if !(t >= 0.0) {
            return Err(domain("residual_tol must be nonnegative"));
        }
    }
    let (m, n) = (phi.rows(), phi.cols());
    let max_k = stop.k_target.unwrap_or(m).min(m).min(n);
    let y_norm = norm_sqr(y).sqrt();
    let tol = stop.residual_tol.unwrap_or(0.0) * y_norm;
    let col_norms: Vec<f64> = (0..n).map(|j| norm_sqr(phi.col(j)).sqrt()).collect();

    let mut active = SupportSet::empty();
    let mut coeffs: Vec<C64> = Vec::new();
    let mut residual = y.to_vec();
    let mut norms = vec![y_norm];
    while active.len() < max_k {
        let r_norm = *norms.last().unwrap();
        if r_norm == 0.0 || r_norm <= tol {
            break;
        }
        let best = par::argmax_by_score(n, |j| {
            if active.contains(j) || col_norms[j] == 0.0 {
                None
            } else {
                Some(dot_h(phi.col(j), &residual).norm() / col_norms[j])
            }
        });
        let Some((j, score)) = best else { break };
        if score <= 0.0 {
            break;
        }
        let candidate = active.with(j);
        let c = match blue_estimate(phi, y, &candidate) {
            Ok(c) => c,
            Err(Error::RankDeficient { .. }) => break,
            Err(e) => return Err(e),
        };
        let fit = synthesize(phi, &candidate, &c);
        residual = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
        active = candidate;
        coeffs = c;
        norms.push(norm_sqr(&residual).sqrt());
    }
    Ok(OmpResult {
        signal: SparseSignal::from_values(embed(n, &active, &coeffs)),
        active,
        residual_norms: norms,
    })
}
