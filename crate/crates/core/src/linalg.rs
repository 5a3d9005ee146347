//! Small dense helpers shared by the numerical modules.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

/// Standard symplectic matrix `[[0, -I], [I, 0]]` of size `2n`.
pub fn omega0(n: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        o[(i, n + i)] = -1.0;
        o[(n + i, i)] = 1.0;
    }
    o
}

/// Inverse of a symplectic matrix, `P^{-1} = -Ω₀ Pᵀ Ω₀`.
pub fn symplectic_inverse(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows() / 2;
    let o = omega0(n);
    -(&o * p.transpose() * &o)
}

/// Spectral condition number (ratio of extreme singular values).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `a x = b` by LU, failing on singularity.
pub fn solve(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>, what: &str) -> Result<nalgebra::DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::DegenerateFrame(format!("singular {what}")))
}

/// Eigenvalues and unit eigenvectors of a real square matrix.
///
/// Eigenvalues come from the real Schur form; each eigenvector is the right
/// singular vector of `A - σI` belonging to its smallest singular value.
pub fn eigenpairs(a: &DMatrix<f64>) -> Result<Vec<(Complex64, Vec<Complex64>)>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix passed to eigen solver".into()));
    }
    let n = a.nrows();
    let vals = a.clone().complex_eigenvalues();
    let ac: DMatrix<Complex64> = a.map(|x| Complex64::new(x, 0.0));
    let mut out = Vec::with_capacity(n);
    for &sigma in vals.iter() {
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * sigma;
        let svd = shifted.svd(false, true);
        let vt = svd
            .v_t
            .ok_or_else(|| Error::NoConvergence("eigenvector SVD".into()))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let v: Vec<Complex64> = (0..n).map(|j| vt[(imin, j)].conj()).collect();
        out.push((sigma, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symplectic_inverse_of_omega() {
        let o = omega0(3);
        let inv = symplectic_inverse(&o);
        let id = &o * inv;
        assert!((id - DMatrix::identity(6, 6)).amax() < 1e-15);
    }

    #[test]
    fn eigenpairs_of_rotation_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let pairs = eigenpairs(&a).unwrap();
        for (s, v) in pairs {
            assert!((s.im.abs() - 2.0).abs() < 1e-14);
            let r0 = Complex64::from(a[(0, 0)]) * v[0] + Complex64::from(a[(0, 1)]) * v[1] - s * v[0];
            assert!(r0.norm() < 1e-14);
        }
    }
}
