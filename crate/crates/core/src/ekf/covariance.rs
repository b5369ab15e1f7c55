//! Covariance bookkeeping for block-structured error states.
//!
//! Transitions are block-diagonal and measurements touch only a few blocks,
//! so both propagation and the Joseph update are written against that
//! structure. The loops have a fixed summation order that does not depend on
//! the total state dimension: a block evolves bit-identically whether or not
//! unrelated (uncorrelated) blocks are present.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Transition of one contiguous block of the error state.
#[derive(Debug, Clone)]
pub struct BlockTransition {
    pub offset: usize,
    /// `None` means identity.
    pub phi: Option<DMatrix<f64>>,
    /// Discrete process noise added to the diagonal block.
    pub q: DMatrix<f64>,
}

impl BlockTransition {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    debug_assert_eq!(k, b.nrows());
    let mut out = DMatrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[(i, l)] * b[(l, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

fn mul_bt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    mul(a, &b.transpose())
}

/// `P <- Phi P Phi^T + Q` for a block-diagonal `Phi`; blocks must tile the state.
pub fn propagate_blocks(p: &mut DMatrix<f64>, blocks: &[BlockTransition]) {
    for (bi, a) in blocks.iter().enumerate() {
        for b in &blocks[bi..] {
            let (oa, ob, na, nb) = (a.offset, b.offset, a.dim(), b.dim());
            let block = p.view((oa, ob), (na, nb)).into_owned();
            if block.iter().all(|&x| x == 0.0) {
                continue;
            }
            let left = match &a.phi {
                Some(phi) => mul(phi, &block),
                None => block,
            };
            let full = match &b.phi {
                Some(phi) => mul_bt(&left, phi),
                None => left,
            };
            p.view_mut((oa, ob), (na, nb)).copy_from(&full);
            if oa != ob {
                p.view_mut((ob, oa), (nb, na)).copy_from(&full.transpose());
            }
        }
    }
    for b in blocks {
        let mut d = p.view_mut((b.offset, b.offset), (b.dim(), b.dim()));
        d += &b.q;
    }
}

/// Measurement Jacobian stored as dense `m x k` blocks at state offsets.
#[derive(Debug, Clone)]
pub struct SparseJacobian {
    pub rows: usize,
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl SparseJacobian {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            blocks: Vec::new(),
        }
    }

    pub fn with_block(mut self, offset: usize, block: DMatrix<f64>) -> Self {
        debug_assert_eq!(block.nrows(), self.rows);
        self.blocks.push((offset, block));
        self
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.rows, n);
        for (off, b) in &self.blocks {
            h.view_mut((0, *off), (self.rows, b.ncols())).copy_from(b);
        }
        h
    }

    /// `M H^T` for an `r x n` matrix `M`.
    fn right_mul_transpose(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), self.rows);
        for (off, b) in &self.blocks {
            for j in 0..self.rows {
                for i in 0..m.nrows() {
                    let mut s = 0.0;
                    for l in 0..b.ncols() {
                        s += m[(i, off + l)] * b[(j, l)];
                    }
                    out[(i, j)] += s;
                }
            }
        }
        out
    }

    /// `H X` for an `n x c` matrix `X`.
    fn left_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for (off, b) in &self.blocks {
            for j in 0..x.ncols() {
                for i in 0..self.rows {
                    let mut s = 0.0;
                    for l in 0..b.ncols() {
                        s += b[(i, l)] * x[(off + l, j)];
                    }
                    out[(i, j)] += s;
                }
            }
        }
        out
    }
}

/// Result of one Kalman measurement update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    /// Estimated error state (zero when gated).
    pub dx: DVector<f64>,
    /// Squared Mahalanobis distance of the innovation.
    pub mahalanobis2: f64,
    pub accepted: bool,
}

/// Joseph-form update with innovation `residual = h(x_hat) - z`.
///
/// The update is skipped (P untouched, `accepted = false`) when the squared
/// Mahalanobis distance exceeds `gate`.
pub fn joseph_update(
    p: &mut DMatrix<f64>,
    h: &SparseJacobian,
    r: &DMatrix<f64>,
    residual: &DVector<f64>,
    gate: Option<f64>,
) -> Result<UpdateOutcome> {
    let n = p.nrows();
    let m = h.rows;
    let pht = h.right_mul_transpose(p);
    let s = h.left_mul(&pht) + r;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Divergence("innovation covariance not positive definite".into()))?;
    let s_inv = chol.inverse();
    let md2 = (residual.transpose() * &s_inv * residual)[(0, 0)];
    if let Some(g) = gate {
        if !(md2 <= g) {
            return Ok(UpdateOutcome {
                dx: DVector::zeros(n),
                mahalanobis2: md2,
                accepted: false,
            });
        }
    }
    let k = mul(&pht, &s_inv);
    let mut dx = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..m {
            acc += k[(i, j)] * residual[j];
        }
        dx[i] = acc;
    }

    // A = P - K (H P); H P = (P H^T)^T by symmetry.
    let mut a = p.clone();
    for j in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for l in 0..m {
                s += k[(i, l)] * pht[(j, l)];
            }
            a[(i, j)] -= s;
        }
    }
    // P+ = A - (A H^T) K^T + K R K^T
    let aht = h.right_mul_transpose(&a);
    let kr = mul(&k, r);
    for j in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for l in 0..m {
                s += kr[(i, l)] * k[(j, l)] - aht[(i, l)] * k[(j, l)];
            }
            a[(i, j)] += s;
        }
    }
    symmetrize(&mut a);
    *p = a;
    Ok(UpdateOutcome {
        dx,
        mahalanobis2: md2,
        accepted: true,
    })
}

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = avg;
            p[(j, i)] = avg;
        }
    }
}

/// Relative asymmetry `max|P - P^T| / max|P|`.
pub fn asymmetry(p: &DMatrix<f64>) -> f64 {
    let scale = p.amax().max(f64::MIN_POSITIVE);
    (p - p.transpose()).amax() / scale
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Symmetry and positive-semidefiniteness check: asymmetry below `1e-9` and
/// smallest eigenvalue above `-1e-12 trace(P)`.
///
/// A shifted Cholesky factorization screens every call; the eigenvalue
/// decomposition only runs when the screen fails.
pub fn check_health(p: &DMatrix<f64>) -> Result<()> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence("covariance has non-finite entries".into()));
    }
    let asym = asymmetry(p);
    if asym > 1e-9 {
        return Err(Error::Divergence(format!("covariance asymmetry {asym:.3e}")));
    }
    let trace = p.trace();
    let tol = 1e-12 * trace.abs();
    let mut shifted = p.clone();
    for i in 0..p.nrows() {
        shifted[(i, i)] += tol;
    }
    if shifted.cholesky().is_some() {
        return Ok(());
    }
    let min_eig = min_eigenvalue(p);
    if min_eig < -tol {
        return Err(Error::Divergence(format!(
            "covariance not PSD: min eigenvalue {min_eig:.3e}, trace {trace:.3e}"
        )));
    }
    Ok(())
}

/// Chi-square (3 dof) gate equivalent to a two-sided `sigma` Gaussian tail.
pub fn chi2_3dof_gate(sigma: f64) -> f64 {
    let tail = erfc(sigma / std::f64::consts::SQRT_2);
    let survival = |x: f64| {
        erfc((x / 2.0).sqrt()) + (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp()
    };
    let (mut lo, mut hi) = (0.0, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if survival(mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Complementary error function (Chebyshev fit, relative error < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn joseph_matches_textbook_update() {
        let n = 9;
        let p0 = random_spd(n, 1);
        let hb = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.3 - 0.5);
        let h = SparseJacobian::new(3).with_block(3, hb);
        let r = DMatrix::identity(3, 3) * 0.2;
        let res = DVector::from_vec(vec![0.1, -0.2, 0.05]);

        let mut p = p0.clone();
        let out = joseph_update(&mut p, &h, &r, &res, None).unwrap();

        let hd = h.to_dense(n);
        let s = &hd * &p0 * hd.transpose() + &r;
        let k = &p0 * hd.transpose() * s.clone().try_inverse().unwrap();
        let i_kh = DMatrix::identity(n, n) - &k * &hd;
        let expected = &i_kh * &p0 * i_kh.transpose() + &k * &r * k.transpose();
        assert!((&p - &expected).amax() < 1e-12);
        assert!((&out.dx - &k * &res).amax() < 1e-12);
        let md2 = (res.transpose() * s.try_inverse().unwrap() * &res)[(0, 0)];
        assert!((out.mahalanobis2 - md2).abs() < 1e-12);
    }

    #[test]
    fn gate_skips_update() {
        let mut p = random_spd(6, 2);
        let before = p.clone();
        let h = SparseJacobian::new(3).with_block(0, DMatrix::identity(3, 3));
        let r = DMatrix::identity(3, 3) * 1e-6;
        let res = DVector::from_vec(vec![10.0, 0.0, 0.0]);
        let out = joseph_update(&mut p, &h, &r, &res, Some(chi2_3dof_gate(5.0))).unwrap();
        assert!(!out.accepted);
        assert_eq!(p, before);
        assert!(out.dx.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn propagation_matches_dense() {
        let n = 6;
        let p0 = random_spd(n, 3);
        let phi_a = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.1 * (i + j) as f64 });
        let q_a = DMatrix::identity(3, 3) * 0.01;
        let q_b = DMatrix::identity(3, 3) * 0.02;
        let mut p = p0.clone();
        propagate_blocks(
            &mut p,
            &[
                BlockTransition {
                    offset: 0,
                    phi: Some(phi_a.clone()),
                    q: q_a.clone(),
                },
                BlockTransition {
                    offset: 3,
                    phi: None,
                    q: q_b.clone(),
                },
            ],
        );
        let mut phi = DMatrix::identity(n, n);
        phi.view_mut((0, 0), (3, 3)).copy_from(&phi_a);
        let mut q = DMatrix::zeros(n, n);
        q.view_mut((0, 0), (3, 3)).copy_from(&q_a);
        q.view_mut((3, 3), (3, 3)).copy_from(&q_b);
        let expected = &phi * &p0 * phi.transpose() + q;
        assert!((p - expected).amax() < 1e-12);
    }

    #[test]
    fn joseph_stays_psd_over_noise_range() {
        for (i, scale) in [1e-4f64, 1e-2, 1.0, 1e2].iter().enumerate() {
            let mut p = random_spd(15, 10 + i as u64) * 1e-3;
            for step in 0..50 {
                let hb = DMatrix::from_fn(3, 15, |r, c| ((r * 7 + c * 3 + step) % 5) as f64 - 2.0);
                let h = SparseJacobian::new(3).with_block(0, hb);
                let r = DMatrix::identity(3, 3) * (1e-4 * scale).powi(2);
                let res = DVector::from_vec(vec![1e-3, -1e-3, 2e-3]);
                joseph_update(&mut p, &h, &r, &res, None).unwrap();
                check_health(&p).unwrap();
            }
        }
    }

    #[test]
    fn gate_constant() {
        // Two-sided 5-sigma tail mass 5.733e-7 for a 3-dof chi-square.
        let g = chi2_3dof_gate(5.0);
        assert!((g - 31.8).abs() < 0.2, "gate {g}");
        // 1-sigma: P(chi2_3 > x) = 0.3173 at x ~ 3.53.
        assert!((chi2_3dof_gate(1.0) - 3.527).abs() < 0.01);
    }

    #[test]
    fn health_check_flags_indefinite() {
        let mut p = DMatrix::identity(4, 4);
        check_health(&p).unwrap();
        p[(3, 3)] = -0.1;
        assert!(check_health(&p).is_err());
        p[(3, 3)] = 1.0;
        p[(0, 1)] = 0.5;
        assert!(check_health(&p).is_err());
    }
}
