//! Affine-invariant geometry of symmetric positive definite matrices.
//!
//! `g_sym` at `h` is `⟨k1, k2⟩_h = tr(h⁻¹k1 h⁻¹k2)`. `GL(n)` acts by pull-back,
//! `q·h = q⁻ᵀ h q⁻¹`, and this action is isometric. Exponentials, logarithms and
//! square roots all go through a symmetric eigendecomposition.

use nalgebra::DMatrix;

use crate::linalg::{sym_eigen, sym_eigenvalues, sym_fn, symmetrize};
use crate::{Error, Result};

/// A point of `Sym²₊`, optionally on the unimodular slice `det = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdPoint {
    h: DMatrix<f64>,
    unit_det: bool,
}

impl SpdPoint {
    pub fn new(h: DMatrix<f64>, unit_det: bool) -> Result<Self> {
        check_spd(&h)?;
        let h = symmetrize(&h);
        if unit_det {
            let d = h.determinant();
            if (d - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("determinant {d} is not 1")));
            }
        }
        Ok(SpdPoint { h, unit_det })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }

    pub fn unit_det(&self) -> bool {
        self.unit_det
    }
}

/// Rejects non-square, asymmetric or indefinite input.
pub fn check_spd(h: &DMatrix<f64>) -> Result<()> {
    if !h.is_square() || h.nrows() == 0 {
        return Err(Error::invalid("SPD matrix must be non-empty and square"));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("SPD matrix has non-finite entries"));
    }
    let scale = h.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let asym = (h - h.transpose()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if asym > 1e-10 * scale {
        return Err(Error::invalid(format!("matrix is not symmetric (gap {asym:.3e})")));
    }
    if sym_eigenvalues(h)[0] <= 0.0 {
        return Err(Error::invalid("matrix is not positive definite"));
    }
    Ok(())
}

/// `tr(h⁻¹k1 h⁻¹k2)`.
pub fn gsym_inner(h: &DMatrix<f64>, k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> f64 {
    let hinv = sym_fn(h, |x| 1.0 / x);
    (&hinv * k1 * &hinv * k2).trace()
}

pub fn gsym_norm(h: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    gsym_inner(h, k, k).max(0.0).sqrt()
}

/// Cached square roots of a base point; all maps out of one point share them.
#[derive(Clone, Debug)]
pub struct SpdChart {
    pub h: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

impl SpdChart {
    pub fn new(h: &DMatrix<f64>) -> Self {
        let (lams, q) = sym_eigen(h);
        let q = &q;
        let mut s = q.clone();
        let mut si = q.clone();
        for (j, lam) in lams.iter().enumerate() {
            let r = lam.sqrt();
            s.column_mut(j).scale_mut(r);
            si.column_mut(j).scale_mut(1.0 / r);
        }
        SpdChart {
            h: h.clone(),
            sqrt: symmetrize(&(s * q.transpose())),
            inv_sqrt: symmetrize(&(si * q.transpose())),
        }
    }

    /// `h^{1/2} exp(h^{-1/2} v h^{-1/2}) h^{1/2}`.
    pub fn exp(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let inner = &self.inv_sqrt * v * &self.inv_sqrt;
        symmetrize(&(&self.sqrt * sym_fn(&inner, f64::exp) * &self.sqrt))
    }

    /// `h^{1/2} log(h^{-1/2} q h^{-1/2}) h^{1/2}`; NaN when `q` is not SPD.
    pub fn log(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let inner = &self.inv_sqrt * q * &self.inv_sqrt;
        symmetrize(&(&self.sqrt * sym_fn(&inner, f64::ln) * &self.sqrt))
    }

    pub fn dist(&self, q: &DMatrix<f64>) -> f64 {
        let inner = &self.inv_sqrt * q * &self.inv_sqrt;
        sym_eigenvalues(&inner)
            .iter()
            .map(|l| l.ln().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// The norm of a tangent vector at the base point.
    pub fn norm(&self, v: &DMatrix<f64>) -> f64 {
        (&self.inv_sqrt * v * &self.inv_sqrt).norm()
    }

    pub fn inner(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let wa = &self.inv_sqrt * a * &self.inv_sqrt;
        let wb = &self.inv_sqrt * b * &self.inv_sqrt;
        wa.dot(&wb)
    }
}

pub fn exp_map(h: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    SpdChart::new(h).exp(v)
}

pub fn log_map(h: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_spd(q)?;
    Ok(SpdChart::new(h).log(q))
}

/// `‖log(h^{-1/2} q h^{-1/2})‖_F`.
pub fn dist(h: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    check_spd(q)?;
    Ok(SpdChart::new(h).dist(q))
}

/// `q·h = q⁻ᵀ h q⁻¹`.
pub fn group_act(q: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qi = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("group element is not invertible".into()))?;
    Ok(act_with_inverse(&qi, h))
}

/// `q·h` given `q⁻¹` directly.
pub fn act_with_inverse(qinv: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(qinv.transpose() * h * qinv))
}

pub fn project_det1(h: &DMatrix<f64>) -> DMatrix<f64> {
    project_det(h, 1.0)
}

/// Rescales `h` to determinant `target`.
pub fn project_det(h: &DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let n = h.nrows() as f64;
    h * (target / h.determinant()).powf(1.0 / n)
}

/// `exp_h(t·log_h q)`.
pub fn geodesic(h: &DMatrix<f64>, q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let c = SpdChart::new(h);
    c.exp(&(c.log(q) * t))
}

/// Fixed-point iteration for the Riemannian centre of mass, started at the first point.
pub fn karcher_mean(points: &[DMatrix<f64>], iterations: usize) -> DMatrix<f64> {
    let mut m = points[0].clone();
    let w = 1.0 / points.len() as f64;
    for _ in 0..iterations {
        let c = SpdChart::new(&m);
        let mut v = DMatrix::zeros(m.nrows(), m.ncols());
        for p in points {
            v += c.log(p) * w;
        }
        m = c.exp(&v);
    }
    m
}

/// Sectional curvature of `g_sym` on the plane spanned by the tangent vectors `x`, `y`
/// at `h`.
///
/// Two geodesics of length `r` leave `h` at a right angle. Their endpoint distance is
/// matched against the right-angle law of cosines of the constant-curvature model, and
/// `K` is solved for by bisection. The result is exact on constant-curvature slices and
/// accurate to `O(r²)` otherwise.
pub fn sectional_curvature_probe(
    h: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    r: f64,
) -> f64 {
    let c = SpdChart::new(h);
    let nx = c.norm(x);
    let ex = x / nx;
    let yo = y - &ex * c.inner(&ex, y);
    let ey = &yo / c.norm(&yo);
    let d = c.exp(&(&ex * r)).clone();
    let d = SpdChart::new(&d).dist(&c.exp(&(&ey * r)));
    let model = |k: f64| -> f64 {
        if k < 0.0 {
            let s = (-k).sqrt();
            ((s * r).cosh().powi(2)).acosh() / s
        } else if k > 0.0 {
            let s = k.sqrt();
            ((s * r).cos().powi(2)).clamp(-1.0, 1.0).acos() / s
        } else {
            std::f64::consts::SQRT_2 * r
        }
    };
    // the model distance decreases with K
    let (mut lo, mut hi) = (-50.0 / (r * r), (std::f64::consts::FRAC_PI_2 / r).powi(2) * 0.99);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if model(mid) > d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))
    }

    #[test]
    fn gsym_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert!((gsym_inner(&id, &id, &id) - 2.0).abs() < 1e-15);
        let k = diag(&[1.0, -1.0]);
        assert!((gsym_inner(&id, &k, &k) - 2.0).abs() < 1e-15);
        let h = diag(&[4.0, 1.0]);
        let k = diag(&[1.0, 0.0]);
        assert!((gsym_inner(&h, &k, &k) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn distance_to_diag_e() {
        let id = DMatrix::<f64>::identity(2, 2);
        let q = diag(&[std::f64::consts::E, 1.0 / std::f64::consts::E]);
        assert!((dist(&id, &q).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert!(dist(&q, &q).unwrap().abs() < 1e-14);
        assert!(log_map(&q, &q).unwrap().norm() < 1e-14);
    }

    #[test]
    fn group_action_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let q = diag(&[2.0, 0.5]);
        let r = group_act(&q, &id).unwrap();
        assert!((r - diag(&[0.25, 4.0])).norm() < 1e-15);
        let th: f64 = 0.7;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert!((group_act(&rot, &id).unwrap() - &id).norm() < 1e-15);
        assert!(group_act(&DMatrix::zeros(2, 2), &id).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = project_det1(&diag(&[4.0, 1.0]));
        assert!((p - diag(&[2.0, 0.5])).norm() < 1e-15);
        let h = diag(&[2.0, 0.5]);
        assert!((project_det1(&h) - &h).norm() < 1e-15);
    }

    #[test]
    fn log_rejects_indefinite() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(log_map(&id, &diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn unimodular_2x2_slice_has_curvature_minus_half() {
        let id = DMatrix::<f64>::identity(2, 2);
        let x = diag(&[1.0, -1.0]);
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        for r in [0.1, 0.5, 1.0] {
            let k = sectional_curvature_probe(&id, &x, &y, r);
            assert!((k + 0.5).abs() < 1e-9, "r={r}: K={k}");
        }
        // homogeneity: same value at another point
        let h = diag(&[3.0, 1.0 / 3.0]);
        let c = SpdChart::new(&h);
        let xh = &c.sqrt * &x * &c.sqrt;
        let yh = &c.sqrt * &y * &c.sqrt;
        let k = sectional_curvature_probe(&h, &xh, &yh, 0.3);
        assert!((k + 0.5).abs() < 1e-9);
    }
}
