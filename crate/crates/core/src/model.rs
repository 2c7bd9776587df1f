//! Direct (non-recursive) evaluation of the per-support quantities: BLUE
//! coefficients, orthogonal-complement residual energy, Bernoulli support
//! prior and the dominant support selection metric. Every fast path in the
//! crate is checked against these.

use crate::error::{domain, Error, Result};
use crate::linalg::{gram, solve_hermitian};
use crate::types::{axpy, check_rate, dot_h, norm_sqr, CMatrix, ProblemInstance, SupportSet, C64, ZERO};

/// Least-squares coefficients `(Φ_S^H Φ_S)^{-1} Φ_S^H y`, listed in
/// increasing index order of `support`.
pub fn blue_estimate(phi: &CMatrix, y: &[C64], support: &SupportSet) -> Result<Vec<C64>> {
    check_dims(phi, y, support)?;
    let k = support.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k > phi.rows() {
        return Err(Error::RankDeficient { size: k, pivot: 0.0 });
    }
    let g = gram(phi, support.indices());
    let rhs: Vec<C64> = support.iter().map(|i| dot_h(phi.col(i), y)).collect();
    solve_hermitian(&g, k, &rhs)
}

/// `Φ_S c` for coefficients in support order.
pub fn synthesize(phi: &CMatrix, support: &SupportSet, coeffs: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; phi.rows()];
    for (i, c) in support.iter().zip(coeffs) {
        axpy(*c, phi.col(i), &mut out);
    }
    out
}

/// `‖P_S^⊥ y‖²`, clamped at zero.
pub fn residual_energy(phi: &CMatrix, y: &[C64], support: &SupportSet) -> Result<f64> {
    let coeffs = blue_estimate(phi, y, support)?;
    let projected = norm_sqr(&synthesize(phi, support, &coeffs));
    Ok((norm_sqr(y) - projected).max(0.0))
}

/// `|S| ln p + (N − |S|) ln(1 − p)`
pub fn log_support_prior(cardinality: usize, p: f64, n: usize) -> Result<f64> {
    check_rate(p)?;
    if cardinality > n {
        return Err(domain(format!("cardinality {cardinality} exceeds N = {n}")));
    }
    Ok(prior_unchecked(cardinality, p, n))
}

#[inline]
pub(crate) fn prior_unchecked(cardinality: usize, p: f64, n: usize) -> f64 {
    cardinality as f64 * p.ln() + (n - cardinality) as f64 * (-p).ln_1p()
}

/// Dominant support selection metric
/// `ν(S) = −‖P_S^⊥ y‖²/σ² + |S| ln p + (N − |S|) ln(1 − p)`.
pub fn metric_direct(instance: &ProblemInstance, support: &SupportSet) -> Result<f64> {
    let res = residual_energy(&instance.phi, &instance.y, support)?;
    Ok(-res / instance.sigma2 + log_support_prior(support.len(), instance.p, instance.n())?)
}

/// Trial-averaged normalized squared error in dB.
///
/// Returns `-inf` when every trial is reconstructed exactly.
pub fn nmse<'a, I>(trials: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [C64], &'a [C64])>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x_true, x_hat) in trials {
        if x_true.len() != x_hat.len() {
            return Err(Error::Dimension("estimate and truth lengths differ".into()));
        }
        let energy = norm_sqr(x_true);
        if energy == 0.0 {
            return Err(domain("NMSE undefined for an all-zero true signal"));
        }
        let err: f64 = x_true.iter().zip(x_hat).map(|(a, b)| (a - b).norm_sqr()).sum();
        sum += err / energy;
        count += 1;
    }
    if count == 0 {
        return Err(domain("NMSE needs at least one trial"));
    }
    Ok(ratio_to_db(sum / count as f64))
}

/// `10 log10(r)`, with `-inf` for zero.
pub fn ratio_to_db(r: f64) -> f64 {
    if r == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * r.log10()
    }
}

fn check_dims(phi: &CMatrix, y: &[C64], support: &SupportSet) -> Result<()> {
    if y.len() != phi.rows() {
        return Err(Error::Dimension(format!(
            "observation length {} does not match M = {}",
            y.len(),
            phi.rows()
        )));
    }
    support.check_bounds(phi.cols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_matrix;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn blue_single_unit_column() {
        let phi = CMatrix::from_real_col_major(3, 2, &[0.6, 0.8, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let y: Vec<C64> = phi.col(0).iter().map(|v| v * 3.0).collect();
        let s = SupportSet::new(vec![0]).unwrap();
        let e = blue_estimate(&phi, &y, &s).unwrap();
        assert!((e[0] - c(3.0)).norm() < 1e-14);
        assert!(blue_estimate(&phi, &y, &SupportSet::empty()).unwrap().is_empty());
    }

    #[test]
    fn residual_of_empty_support_is_total_energy() {
        let phi = gen_matrix(6, 10, 3);
        let y: Vec<C64> = (0..6).map(|i| C64::new(i as f64, -1.0)).collect();
        let r = residual_energy(&phi, &y, &SupportSet::empty()).unwrap();
        assert!((r - norm_sqr(&y)).abs() < 1e-12);
    }

    #[test]
    fn residual_vanishes_in_span() {
        let phi = gen_matrix(8, 12, 5);
        let s = SupportSet::new(vec![1, 4, 9]).unwrap();
        let y = synthesize(&phi, &s, &[C64::new(1.0, 2.0), c(-3.0), C64::new(0.0, 0.5)]);
        let r = residual_energy(&phi, &y, &s).unwrap();
        assert!(r <= 1e-10 * norm_sqr(&y));
    }

    #[test]
    fn rank_deficient_support_is_reported() {
        let phi = CMatrix::from_real_col_major(2, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = vec![c(1.0), c(1.0)];
        let s = SupportSet::new(vec![0, 1]).unwrap();
        assert!(matches!(blue_estimate(&phi, &y, &s), Err(Error::RankDeficient { .. })));
        let too_big = SupportSet::new(vec![0, 1, 2]).unwrap();
        assert!(matches!(blue_estimate(&phi, &y, &too_big), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn prior_values() {
        let n = 1024;
        assert!((log_support_prior(0, 0.2, n).unwrap() - n as f64 * 0.8f64.ln()).abs() < 1e-9);
        for k in [0, 3, 100, 1024] {
            assert!((log_support_prior(k, 0.5, n).unwrap() - n as f64 * 0.5f64.ln()).abs() < 1e-9);
        }
        let want = 5.0 * 0.005f64.ln() + 1019.0 * 0.995f64.ln();
        assert!((log_support_prior(5, 0.005, n).unwrap() - want).abs() < 1e-10);
        assert!(log_support_prior(1, 0.0, n).is_err());
        assert!(log_support_prior(1, 1.0, n).is_err());
        assert!(log_support_prior(n + 1, 0.5, n).is_err());
    }

    #[test]
    fn metric_of_empty_support() {
        let phi = gen_matrix(5, 7, 1);
        let y: Vec<C64> = (0..5).map(|i| C64::new(1.0, i as f64)).collect();
        let inst = ProblemInstance::new(phi, y.clone(), 0.7, 0.1).unwrap();
        let nu = metric_direct(&inst, &SupportSet::empty()).unwrap();
        let want = -norm_sqr(&y) / 0.7 + 7.0 * 0.9f64.ln();
        assert!((nu - want).abs() < 1e-10);
    }

    #[test]
    fn nmse_examples() {
        let x = [c(1.0), c(-2.0)];
        let zero = [ZERO; 2];
        assert!((nmse([(&x[..], &zero[..])]).unwrap()).abs() < 1e-12);

        // ‖x̂ − x‖² = 0.01 ‖x‖²
        let xh: Vec<C64> = x.iter().map(|v| v * 1.1).collect();
        assert!((nmse([(&x[..], &xh[..])]).unwrap() + 20.0).abs() < 1e-9);

        // ratios 0.1 and 0.001
        let a = [c(1.0)];
        let ah = [c(1.0 + 0.1f64.sqrt())];
        let bh = [c(1.0 + 0.001f64.sqrt())];
        let v = nmse([(&a[..], &ah[..]), (&a[..], &bh[..])]).unwrap();
        assert!((v - 10.0 * 0.0505f64.log10()).abs() < 1e-9);
        assert!((v + 12.967).abs() < 1e-3);

        assert_eq!(nmse([(&x[..], &x[..])]).unwrap(), f64::NEG_INFINITY);
        assert!(nmse([(&zero[..], &x[..])]).is_err());
    }
}
