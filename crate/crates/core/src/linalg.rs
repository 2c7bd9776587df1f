//! Small dense Hermitian solves for the normal equations.

use crate::error::{Error, Result};
use crate::types::{dot_h, CMatrix, C64, ZERO};

/// Relative pivot tolerance for Gram factorizations.
pub const RANK_TOL: f64 = 1e-12;

/// `Φ_S^H Φ_S` as a dense row-major `k x k` matrix.
pub fn gram(phi: &CMatrix, support: &[usize]) -> Vec<C64> {
    let k = support.len();
    let mut g = vec![ZERO; k * k];
    for (a, &sa) in support.iter().enumerate() {
        for (b, &sb) in support.iter().enumerate().skip(a) {
            let v = dot_h(phi.col(sa), phi.col(sb));
            g[a * k + b] = v;
            g[b * k + a] = v.conj();
        }
    }
    g
}

/// Solves `G x = b` for Hermitian positive definite `G` (row-major, `k x k`)
/// with a diagonally pivoted Cholesky factorization.
///
/// Fails with `RankDeficient` when a pivot drops below `RANK_TOL` times the
/// largest diagonal entry of `G`.
pub fn solve_hermitian(g: &[C64], k: usize, b: &[C64]) -> Result<Vec<C64>> {
    assert_eq!(g.len(), k * k);
    assert_eq!(b.len(), k);
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut a = g.to_vec();
    let mut perm: Vec<usize> = (0..k).collect();
    let max_diag = (0..k).map(|i| a[i * k + i].re).fold(0.0_f64, f64::max);
    let tol = RANK_TOL * max_diag;

    for j in 0..k {
        let (p, pivot) = (j..k)
            .map(|i| (i, a[i * k + i].re))
            .fold((j, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(pivot > tol) || max_diag <= 0.0 {
            return Err(Error::RankDeficient { size: k, pivot });
        }
        if p != j {
            for c in 0..k {
                a.swap(j * k + c, p * k + c);
            }
            for r in 0..k {
                a.swap(r * k + j, r * k + p);
            }
            perm.swap(j, p);
        }
        let d = pivot.sqrt();
        a[j * k + j] = C64::new(d, 0.0);
        for i in j + 1..k {
            a[i * k + j] /= d;
        }
        for c in j + 1..k {
            let lc = a[c * k + j];
            for r in j + 1..k {
                let lr = a[r * k + j];
                a[r * k + c] -= lr * lc.conj();
            }
        }
    }

    // L z = P b
    let mut z: Vec<C64> = perm.iter().map(|&i| b[i]).collect();
    for r in 0..k {
        let mut s = z[r];
        for c in 0..r {
            s -= a[r * k + c] * z[c];
        }
        z[r] = s / a[r * k + r].re;
    }
    // L^H w = z
    for r in (0..k).rev() {
        let mut s = z[r];
        for c in r + 1..k {
            s -= a[c * k + r].conj() * z[c];
        }
        z[r] = s / a[r * k + r].re;
    }
    let mut x = vec![ZERO; k];
    for (r, &i) in perm.iter().enumerate() {
        x[i] = z[r];
    }
    Ok(x)
}
