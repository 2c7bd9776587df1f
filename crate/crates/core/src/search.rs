//! Greedy dominant-support search.
//!
//! One pass grows a chain `S_1 ⊂ S_2 ⊂ … ⊂ S_P`, at each level adding the
//! column that maximizes the selection metric. Repeated passes forbid, at
//! every level, the elements already added at that level by earlier
//! passes, so `D` passes collect up to `D·P` distinct supports.
//!
//! Candidates are ranked by their projected-energy gain alone. The metric
//! is an increasing affine function of that gain for a fixed level, so the
//! chosen indices do not depend on `σ²` or `p`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Result};
use crate::model::{metric_direct, prior_unchecked, residual_energy};
use crate::recursive::{PrecomputeCache, RecursiveState, DEFAULT_EPS_F};
use crate::types::{check_rate, norm_sqr, ProblemInstance, SupportSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Maximum support size `P`. Derived from `p` and `tail_prob` when unset.
    pub support_budget: Option<usize>,
    /// Number of greedy passes `D`.
    pub passes: usize,
    /// Target `Pr(|S| > P)` for the derived budget.
    pub tail_prob: f64,
    /// Relative Schur-complement floor for skipping dependent columns.
    pub eps_f: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            support_budget: None,
            passes: 5,
            tail_prob: 1e-3,
            eps_f: DEFAULT_EPS_F,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(domain("at least one greedy pass is required"));
        }
        if !(self.tail_prob > 0.0 && self.tail_prob <= 0.5) {
            return Err(domain(format!("tail_prob must lie in (0, 0.5], got {}", self.tail_prob)));
        }
        if self.support_budget == Some(0) {
            return Err(domain("support budget must be at least 1"));
        }
        if !(self.eps_f >= 0.0) {
            return Err(domain("eps_f must be nonnegative"));
        }
        Ok(())
    }

    /// Budget `P` for an `M x N` problem at rate `p`, clamped to `[1, min(M, N)]`.
    pub fn resolve_budget(&self, m: usize, n: usize, p: f64) -> Result<usize> {
        match self.support_budget {
            Some(b) => Ok(b.clamp(1, m.min(n))),
            None => compute_support_budget(m, n, p, self.tail_prob),
        }
    }
}

/// Smallest support size `P` with `Pr(|S| > P) ≤ tail_prob` for
/// `|S| ~ Binomial(N, p)`.
///
/// For `Np > 5` the Gaussian approximation
/// `P = ⌈Np + sqrt(2Np(1−p)) erfc⁻¹(2 tail_prob)⌉` is used, otherwise the
/// exact binomial tail. The result is clamped to `[1, min(M, N)]`.
pub fn compute_support_budget(m: usize, n: usize, p: f64, tail_prob: f64) -> Result<usize> {
    check_rate(p)?;
    if !(tail_prob > 0.0 && tail_prob <= 0.5) {
        return Err(domain(format!("tail_prob must lie in (0, 0.5], got {tail_prob}")));
    }
    let cap = m.min(n).max(1);
    let np = n as f64 * p;
    let budget = if np > 5.0 {
        let p_cont = np + (2.0 * np * (1.0 - p)).sqrt() * erfc_inv(2.0 * tail_prob);
        // guard against 5.000000001-style round-up of exact integers
        (p_cont - 1e-9).ceil().max(0.0) as usize
    } else {
        let dist = Binomial::new(p, n as u64).map_err(|e| domain(e.to_string()))?;
        (0..=n as u64).find(|&k| dist.sf(k) <= tail_prob).unwrap_or(n as u64) as usize
    };
    Ok(budget.clamp(1, cap))
}

/// Per-level sets of forbidden indices (levels are 1-based).
#[derive(Debug, Clone)]
pub struct LevelExclusions {
    n: usize,
    levels: Vec<Vec<bool>>,
}

impl LevelExclusions {
    pub fn new(n: usize) -> Self {
        Self { n, levels: Vec::new() }
    }

    pub fn insert(&mut self, level: usize, index: usize) {
        assert!(level >= 1 && index < self.n);
        if self.levels.len() < level {
            self.levels.resize_with(level, || vec![false; self.n]);
        }
        self.levels[level - 1][index] = true;
    }

    pub fn contains(&self, level: usize, index: usize) -> bool {
        self.levels
            .get(level.wrapping_sub(1))
            .is_some_and(|l| l[index])
    }

    fn level(&self, level: usize) -> Option<&[bool]> {
        self.levels.get(level - 1).map(|v| v.as_slice())
    }
}

/// One greedy chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyChain {
    /// `(S_j, ν(S_j))` for `j = 1..`
    pub levels: Vec<(SupportSet, f64)>,
    /// Projected energy `ξ(S_j)` per level.
    pub xi: Vec<f64>,
    /// Element newly added at each level.
    pub added: Vec<usize>,
    /// Set when the pass stopped before reaching the budget because every
    /// index at some level was forbidden, committed or singular.
    pub exhausted: bool,
}

/// Runs one greedy pass of `config`'s budget over `instance`.
pub fn greedy_pass(
    instance: &ProblemInstance,
    cache: &PrecomputeCache<'_>,
    config: &SearchConfig,
    forbidden: &LevelExclusions,
) -> Result<GreedyChain> {
    config.validate()?;
    let budget = config.resolve_budget(instance.m(), instance.n(), instance.p)?;
    Ok(run_pass(cache, instance.sigma2, instance.p, budget, config.eps_f, forbidden))
}

pub(crate) fn run_pass(
    cache: &PrecomputeCache<'_>,
    sigma2: f64,
    p: f64,
    budget: usize,
    eps_f: f64,
    forbidden: &LevelExclusions,
) -> GreedyChain {
    let mut state = RecursiveState::empty(cache, budget).with_eps_f(eps_f);
    let mut chain = GreedyChain {
        levels: Vec::with_capacity(budget),
        xi: Vec::with_capacity(budget),
        added: Vec::with_capacity(budget),
        exhausted: false,
    };
    for level in 1..=budget {
        let excluded = forbidden.level(level);
        let best = state.best_candidate(cache, |i| excluded.is_some_and(|l| l[i]));
        let Some((index, _gain)) = best else {
            chain.exhausted = true;
            break;
        };
        if state.commit(cache, index).is_err() {
            chain.exhausted = true;
            break;
        }
        chain.levels.push((state.support(), state.metric(cache, sigma2, p)));
        chain.xi.push(state.xi());
        chain.added.push(index);
    }
    chain
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominantEntry {
    pub support: SupportSet,
    /// Selection metric at the hyperparameters used to build the set.
    pub nu: f64,
    /// Projected energy `‖Φ_S e_y‖²`, independent of hyperparameters.
    pub xi: f64,
}

/// Supports collected by the search, unique by index set, in discovery order.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DominantSet {
    pub entries: Vec<DominantEntry>,
    /// Newly added element per level, one list per pass.
    pub selections: Vec<Vec<usize>>,
    /// Passes that ended early.
    pub exhausted_passes: usize,
}

impl DominantSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a set from explicit supports, scoring each directly.
    /// Duplicates are merged and rank-deficient supports are rejected.
    pub fn from_supports<I>(instance: &ProblemInstance, supports: I) -> Result<Self>
    where
        I: IntoIterator<Item = SupportSet>,
    {
        let y_energy = norm_sqr(&instance.y);
        let mut set = DominantSet::default();
        let mut seen = HashMap::new();
        for s in supports {
            if seen.contains_key(&s) {
                continue;
            }
            let nu = metric_direct(instance, &s)?;
            let xi = y_energy - residual_energy(&instance.phi, &instance.y, &s)?;
            seen.insert(s.clone(), set.entries.len());
            set.entries.push(DominantEntry { support: s, nu, xi });
        }
        Ok(set)
    }

    /// Builds a set from caller-provided `(support, ν)` pairs.
    pub fn from_scored<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (SupportSet, f64)>,
    {
        let mut set = DominantSet::default();
        let mut seen = HashMap::new();
        for (s, nu) in entries {
            if !nu.is_finite() {
                return Err(domain("metric values must be finite"));
            }
            if seen.insert(s.clone(), ()).is_none() {
                set.entries.push(DominantEntry { support: s, nu, xi: f64::NAN });
            }
        }
        Ok(set)
    }

    /// Recomputes every `ν` from the stored projected energies for new
    /// hyperparameters. Contents and order are unchanged.
    pub fn rescored(&self, y_energy: f64, n: usize, sigma2: f64, p: f64) -> Result<Self> {
        check_rate(p)?;
        if !(sigma2 > 0.0) {
            return Err(domain("sigma2 must be positive"));
        }
        let mut out = self.clone();
        for e in &mut out.entries {
            if !e.xi.is_finite() {
                return Err(domain("entry has no stored projected energy"));
            }
            e.nu = (e.xi - y_energy) / sigma2 + prior_unchecked(e.support.len(), p, n);
        }
        Ok(out)
    }
}

/// `D` greedy passes with level-wise exclusion of previously added
/// elements; the union of all chains, deduplicated.
pub fn repeated_search(
    instance: &ProblemInstance,
    cache: &PrecomputeCache<'_>,
    config: &SearchConfig,
) -> Result<DominantSet> {
    config.validate()?;
    let budget = config.resolve_budget(instance.m(), instance.n(), instance.p)?;
    Ok(search_with_budget(cache, instance.sigma2, instance.p, budget, config))
}

pub(crate) fn search_with_budget(
    cache: &PrecomputeCache<'_>,
    sigma2: f64,
    p: f64,
    budget: usize,
    config: &SearchConfig,
) -> DominantSet {
    let mut forbidden = LevelExclusions::new(cache.n());
    let mut set = DominantSet::default();
    let mut seen: HashMap<SupportSet, ()> = HashMap::new();
    for _ in 0..config.passes {
        let chain = run_pass(cache, sigma2, p, budget, config.eps_f, &forbidden);
        for (level, &idx) in chain.added.iter().enumerate() {
            forbidden.insert(level + 1, idx);
        }
        for ((support, nu), xi) in chain.levels.into_iter().zip(chain.xi) {
            if seen.insert(support.clone(), ()).is_none() {
                set.entries.push(DominantEntry { support, nu, xi });
            }
        }
        if chain.exhausted {
            set.exhausted_passes += 1;
        }
        set.selections.push(chain.added);
    }
    set
}
