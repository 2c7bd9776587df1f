//! Order-recursive evaluation of the selection metric.
//!
//! After an `O(MN)` precompute, a [`RecursiveState`] for a committed support
//! `S` (size `k`) keeps, for every column `i` outside `S`:
//!
//! * `q_i = Φ_S^H φ_i`
//! * `e_i = (Φ_S^H Φ_S)^{-1} Φ_S^H φ_i`
//! * `f_i = φ_i^H φ_i − q_i^H e_i`, the energy of `φ_i` orthogonal to `span(Φ_S)`
//!
//! together with the BLUE `e_y` over `S` and the projected energy
//! `ξ = ‖Φ_S e_y‖²`. Scoring candidate `i` costs `O(k)`:
//! `ξ(S ∪ {i}) = ξ + |r_i|² / f_i` with `r_i = φ_i^H y − q_i^H e_y`.
//! Committing a column `c` appends it as the last block of the Gram matrix
//! and updates every candidate by block inversion, using one memoized Gram
//! row `φ_c^H φ_j`, for `O(MN + kN)` total.

use std::sync::OnceLock;

use crate::error::{domain, Error, Result};
use crate::model::prior_unchecked;
use crate::par;
use crate::types::{dot_h, norm_sqr, CMatrix, SupportSet, C64};

/// Columns with squared norm below this are rejected.
pub const MIN_COL_ENERGY: f64 = 1e-24;

/// Default relative Schur-complement floor: candidates with
/// `f_i < DEFAULT_EPS_F * ‖φ_i‖²` are skipped.
pub const DEFAULT_EPS_F: f64 = 1e-10;

/// Quantities computed once per `(Φ, y)` and shared read-only by every
/// search pass over that instance. Gram rows are filled lazily.
pub struct PrecomputeCache<'a> {
    phi: &'a CMatrix,
    phi_h_y: Vec<C64>,
    col_energy: Vec<f64>,
    e_y1: Vec<C64>,
    y_energy: f64,
    rows: Vec<OnceLock<Box<[C64]>>>,
}

/// Builds the per-instance cache: `φ_i^H y`, `φ_i^H φ_i`, single-column
/// BLUEs and `‖y‖²`.
pub fn precompute<'a>(phi: &'a CMatrix, y: &[C64]) -> Result<PrecomputeCache<'a>> {
    if y.len() != phi.rows() {
        return Err(Error::Dimension(format!(
            "observation length {} does not match M = {}",
            y.len(),
            phi.rows()
        )));
    }
    let n = phi.cols();
    let stats = par::map_indices(n, |i| {
        let col = phi.col(i);
        (dot_h(col, y), norm_sqr(col))
    });
    let mut phi_h_y = Vec::with_capacity(n);
    let mut col_energy = Vec::with_capacity(n);
    for (i, (py, e)) in stats.into_iter().enumerate() {
        if !(e >= MIN_COL_ENERGY) {
            return Err(Error::ZeroColumn(i));
        }
        phi_h_y.push(py);
        col_energy.push(e);
    }
    let e_y1 = phi_h_y.iter().zip(&col_energy).map(|(py, e)| py / *e).collect();
    Ok(PrecomputeCache {
        phi,
        phi_h_y,
        col_energy,
        e_y1,
        y_energy: norm_sqr(y),
        rows: (0..n).map(|_| OnceLock::new()).collect(),
    })
}

impl<'a> PrecomputeCache<'a> {
    pub fn phi(&self) -> &'a CMatrix {
        self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.cols()
    }

    pub fn m(&self) -> usize {
        self.phi.rows()
    }

    pub fn phi_h_y(&self) -> &[C64] {
        &self.phi_h_y
    }

    pub fn col_energy(&self) -> &[f64] {
        &self.col_energy
    }

    pub fn e_y1(&self) -> &[C64] {
        &self.e_y1
    }

    pub fn y_energy(&self) -> f64 {
        self.y_energy
    }

    /// Row `i` of the Gram matrix, `φ_i^H φ_j` for all `j`, computed on
    /// first use.
    pub fn gram_row(&self, i: usize) -> &[C64] {
        self.rows[i].get_or_init(|| {
            let col = self.phi.col(i);
            par::map_indices(self.n(), |j| dot_h(col, self.phi.col(j))).into_boxed_slice()
        })
    }

    /// `φ_i^H φ_j`, reusing a memoized row when one exists.
    pub fn gram(&self, i: usize, j: usize) -> C64 {
        if let Some(row) = self.rows[i].get() {
            row[j]
        } else if let Some(row) = self.rows[j].get() {
            row[i].conj()
        } else {
            dot_h(self.phi.col(i), self.phi.col(j))
        }
    }

    /// Number of Gram rows materialized so far.
    pub fn rows_computed(&self) -> usize {
        self.rows.iter().filter(|r| r.get().is_some()).count()
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    q: Vec<C64>,
    e_phi: Vec<C64>,
    f: f64,
}

/// Caches for one committed support, owned by a single search pass.
#[derive(Debug, Clone)]
pub struct RecursiveState {
    order: Vec<usize>,
    active: Vec<bool>,
    e_y: Vec<C64>,
    xi: f64,
    candidates: Vec<Candidate>,
    eps_f: f64,
}

/// State for the singleton support `{i0}`.
pub fn init_state(cache: &PrecomputeCache<'_>, i0: usize) -> Result<RecursiveState> {
    let mut state = RecursiveState::empty(cache, cache.m().min(cache.n()));
    state.commit(cache, i0)?;
    Ok(state)
}

/// `ν(S ∪ {i})` from the recursive caches.
pub fn candidate_metric(
    state: &RecursiveState,
    cache: &PrecomputeCache<'_>,
    i: usize,
    sigma2: f64,
    p: f64,
) -> Result<f64> {
    let gain = state.candidate_gain(cache, i)?;
    Ok(state.metric_with_gain(cache, gain, sigma2, p))
}

impl RecursiveState {
    /// State for the empty support. `capacity` is the expected maximum
    /// support size and only sizes the per-candidate buffers.
    pub fn empty(cache: &PrecomputeCache<'_>, capacity: usize) -> Self {
        let candidates = cache
            .col_energy
            .iter()
            .map(|&e| Candidate {
                q: Vec::with_capacity(capacity),
                e_phi: Vec::with_capacity(capacity),
                f: e,
            })
            .collect();
        Self {
            order: Vec::with_capacity(capacity),
            active: vec![false; cache.n()],
            e_y: Vec::with_capacity(capacity),
            xi: 0.0,
            candidates,
            eps_f: DEFAULT_EPS_F,
        }
    }

    /// Overrides the relative Schur-complement floor.
    pub fn with_eps_f(mut self, eps_f: f64) -> Self {
        self.eps_f = eps_f;
        self
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Committed indices in commit order.
    pub fn commit_order(&self) -> &[usize] {
        &self.order
    }

    pub fn contains(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn support(&self) -> SupportSet {
        let mut v = self.order.clone();
        v.sort_unstable();
        SupportSet::from_sorted_unchecked(v)
    }

    /// BLUE coefficients in commit order.
    pub fn e_y(&self) -> &[C64] {
        &self.e_y
    }

    /// BLUE coefficients in increasing index order, matching [`Self::support`].
    pub fn e_y_sorted(&self) -> Vec<C64> {
        let mut pairs: Vec<(usize, C64)> = self.order.iter().copied().zip(self.e_y.iter().copied()).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        pairs.into_iter().map(|p| p.1).collect()
    }

    /// `ξ = ‖Φ_S e_y‖²`
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Schur complement `f_i` of a non-committed candidate.
    pub fn schur(&self, i: usize) -> f64 {
        self.candidates[i].f
    }

    /// `q_i = Φ_S^H φ_i` in commit order.
    pub fn q(&self, i: usize) -> &[C64] {
        &self.candidates[i].q
    }

    /// `e_i = (Φ_S^H Φ_S)^{-1} Φ_S^H φ_i` in commit order.
    pub fn e_phi(&self, i: usize) -> &[C64] {
        &self.candidates[i].e_phi
    }

    /// Metric of the committed support.
    pub fn metric(&self, cache: &PrecomputeCache<'_>, sigma2: f64, p: f64) -> f64 {
        (self.xi - cache.y_energy) / sigma2 + prior_unchecked(self.len(), p, cache.n())
    }

    pub(crate) fn metric_with_gain(&self, cache: &PrecomputeCache<'_>, gain: f64, sigma2: f64, p: f64) -> f64 {
        (self.xi + gain - cache.y_energy) / sigma2 + prior_unchecked(self.len() + 1, p, cache.n())
    }

    #[inline]
    fn residual_corr(&self, cache: &PrecomputeCache<'_>, i: usize) -> C64 {
        cache.phi_h_y[i] - dot_h(&self.candidates[i].q, &self.e_y)
    }

    #[inline]
    fn singular(&self, cache: &PrecomputeCache<'_>, i: usize) -> bool {
        !(self.candidates[i].f >= self.eps_f * cache.col_energy[i])
    }

    /// Projected-energy increase `|r_i|² / f_i` from adding column `i`.
    /// This is the only candidate-dependent part of the metric and does
    /// not involve `σ²` or `p`.
    pub fn candidate_gain(&self, cache: &PrecomputeCache<'_>, i: usize) -> Result<f64> {
        if i >= self.active.len() {
            return Err(domain(format!("candidate {i} out of range")));
        }
        if self.active[i] {
            return Err(domain(format!("candidate {i} already in the support")));
        }
        if self.singular(cache, i) {
            return Err(Error::NearSingular {
                index: i,
                schur: self.candidates[i].f,
            });
        }
        Ok(self.residual_corr(cache, i).norm_sqr() / self.candidates[i].f)
    }

    /// Eligible candidate with the largest gain, ties to the lowest index.
    /// Committed, excluded and near-singular columns are skipped.
    pub fn best_candidate<F>(&self, cache: &PrecomputeCache<'_>, excluded: F) -> Option<(usize, f64)>
    where
        F: Fn(usize) -> bool + Sync + Send,
    {
        par::argmax_by_score(self.active.len(), |i| {
            if self.active[i] || excluded(i) || self.singular(cache, i) {
                return None;
            }
            let gain = self.residual_corr(cache, i).norm_sqr() / self.candidates[i].f;
            gain.is_finite().then_some(gain)
        })
    }

    /// Appends column `c` to the support and updates every remaining
    /// candidate by block inversion.
    pub fn commit(&mut self, cache: &PrecomputeCache<'_>, c: usize) -> Result<()> {
        if c >= self.active.len() {
            return Err(domain(format!("index {c} out of range")));
        }
        if self.active[c] {
            return Err(domain(format!("index {c} already in the support")));
        }
        if self.singular(cache, c) {
            return Err(Error::NearSingular {
                index: c,
                schur: self.candidates[c].f,
            });
        }
        let pivot = std::mem::replace(
            &mut self.candidates[c],
            Candidate {
                q: Vec::new(),
                e_phi: Vec::new(),
                f: 0.0,
            },
        );
        let f_c = pivot.f;
        let r_c = cache.phi_h_y[c] - dot_h(&pivot.q, &self.e_y);
        let gamma = r_c / f_c;
        for (e, ec) in self.e_y.iter_mut().zip(&pivot.e_phi) {
            *e -= gamma * ec;
        }
        self.e_y.push(gamma);
        self.xi += r_c.norm_sqr() / f_c;
        self.active[c] = true;
        self.order.push(c);

        let row = cache.gram_row(c);
        let active = &self.active;
        let energy = &cache.col_energy;
        par::for_each_indexed(&mut self.candidates, |i, cand| {
            if active[i] {
                return;
            }
            let g = row[i];
            let beta = (g - dot_h(&pivot.q, &cand.e_phi)) / f_c;
            for (e, ec) in cand.e_phi.iter_mut().zip(&pivot.e_phi) {
                *e -= beta * ec;
            }
            cand.e_phi.push(beta);
            cand.q.push(g);
            let f = energy[i] - dot_h(&cand.q, &cand.e_phi).re;
            debug_assert!(f >= -1e-9 * energy[i].max(1.0), "negative Schur complement {f}");
            cand.f = f.max(0.0);
        });
        Ok(())
    }
}
