//! Structure-constant Lie algebras and the curvature of their left-invariant metrics.
//!
//! Conventions used throughout:
//!
//! - brackets: `[e_i, e_j] = Σ_k c[i][j][k] e_k`;
//! - Ricci endomorphism: `Ric^E = H⁻¹ Ric`, where `Ric` is the (0,2) Ricci form;
//! - nilsolitons: `Ric^E = λ·Id − D` with `D ∈ Der(n)`. Reports also carry the opposite
//!   sign `D_intro = −D`, which at `λ = −½` reads `Ric = −½h + h(D_intro·,·)`;
//! - derivation defect: `δ(E)(X,Y) = −E[X,Y] + [EX,Y] + [X,EY]`;
//! - `Λ²n*⊗n` inner product: sums over ordered pairs `i < j` in an h-orthonormal basis.
//!   This convention is calibrated against the Koszul oracle (factor 1; see
//!   [`moment_map_calibration`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg::{column_span, frob_dot, null_space, sym_eigenvalues, sym_fn, symmetrize};
use crate::{Error, Result};

/// Absolute Jacobi tolerance for brackets of unit scale.
pub const JACOBI_TOL: f64 = 1e-12;
/// Largest admissible condition number of a metric.
pub const MAX_CONDITION: f64 = 1e12;
/// Singular values below this (relative to max(1, σ_max)) span `Der(n)`.
pub const DERIVATION_TOL: f64 = 1e-10;
/// Human-readable label of the Λ² convention written into reports.
pub const LAMBDA2_CONVENTION: &str = "sum over ordered pairs i<j in an h-orthonormal basis";

/// A real Lie algebra given by structure constants.
#[derive(Clone, Debug, PartialEq)]
pub struct LieAlgebra {
    dim: usize,
    c: Vec<f64>,
    step: usize,
    lcs: Vec<usize>,
}

/// Result of [`validate_algebra`].
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraReport {
    pub antisymmetry_gap: f64,
    pub jacobi_gap: f64,
    /// Nilpotency step; 0 when the algebra is not nilpotent.
    pub step: usize,
    pub lower_central_series: Vec<usize>,
    pub valid: bool,
}

impl LieAlgebra {
    /// Builds an algebra and rejects antisymmetry or Jacobi violations.
    pub fn new(dim: usize, c: Vec<f64>) -> Result<Self> {
        let alg = Self::from_raw(dim, c)?;
        let rep = validate_algebra(&alg);
        if !rep.valid {
            return Err(Error::invalid(format!(
                "not a Lie algebra: antisymmetry gap {:.3e}, Jacobi gap {:.3e}",
                rep.antisymmetry_gap, rep.jacobi_gap
            )));
        }
        Ok(alg)
    }

    /// Builds an algebra without checking the Lie axioms (see [`validate_algebra`]).
    pub fn from_raw(dim: usize, c: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("algebra dimension must be positive"));
        }
        if c.len() != dim * dim * dim {
            return Err(Error::invalid(format!(
                "expected {} structure constants, got {}",
                dim * dim * dim,
                c.len()
            )));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("structure constants must be finite"));
        }
        let mut alg = LieAlgebra {
            dim,
            c,
            step: 0,
            lcs: Vec::new(),
        };
        alg.lcs = alg
            .lower_central_series_bases()
            .iter()
            .map(|b| b.ncols())
            .collect();
        alg.step = match alg.lcs.last() {
            Some(0) => alg.lcs.len() - 1,
            _ => 0,
        };
        Ok(alg)
    }

    /// `brackets` holds `(i, j, k, c)` with 0-based indices meaning `[e_i, e_j] ∋ c·e_k`;
    /// the antisymmetric partner is filled in.
    pub fn from_brackets(dim: usize, brackets: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut c = vec![0.0; dim * dim * dim];
        for &(i, j, k, v) in brackets {
            if i >= dim || j >= dim || k >= dim || i == j {
                return Err(Error::invalid(format!("bad bracket index ({i},{j},{k})")));
            }
            c[(i * dim + j) * dim + k] += v;
            c[(j * dim + i) * dim + k] -= v;
        }
        Self::new(dim, c)
    }

    pub fn abelian(dim: usize) -> Result<Self> {
        Self::new(dim, vec![0.0; dim * dim * dim])
    }

    /// Heisenberg algebra `[e1,e2] = μ e3`.
    pub fn heisenberg3(mu: f64) -> Self {
        Self::from_brackets(3, &[(0, 1, 2, mu)]).expect("heisenberg brackets are valid")
    }

    /// `heis3 ⊕ ℝ`.
    pub fn heisenberg3_plus_r() -> Self {
        Self::from_brackets(4, &[(0, 1, 2, 1.0)]).expect("heisenberg brackets are valid")
    }

    /// Built-in names: `abelian:n`, `heis3`, `heis3xR`.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "heis3" => Ok(Self::heisenberg3(1.0)),
            "heis3xR" => Ok(Self::heisenberg3_plus_r()),
            _ => {
                if let Some(n) = name.strip_prefix("abelian:") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad abelian dimension in {name:?}")))?;
                    Self::abelian(n)
                } else {
                    Err(Error::invalid(format!("unknown algebra {name:?}")))
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nilpotency step, 0 when not nilpotent.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_nilpotent(&self) -> bool {
        self.step > 0
    }

    pub fn is_abelian(&self) -> bool {
        self.c.iter().all(|&x| x == 0.0)
    }

    /// Dimensions of `n ⊇ [n,n] ⊇ [n,[n,n]] ⊇ …` until it vanishes or stabilises.
    pub fn lower_central_series(&self) -> &[usize] {
        &self.lcs
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    pub fn structure_constants(&self) -> &[f64] {
        &self.c
    }

    pub fn max_structure_constant(&self) -> f64 {
        self.c.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn bracket(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut w = DVector::zeros(n);
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let uv = u[i] * v[j];
                if uv == 0.0 {
                    continue;
                }
                for k in 0..n {
                    w[k] += uv * self.c(i, j, k);
                }
            }
        }
        w
    }

    /// Matrix of `ad_u = [u, ·]`.
    pub fn ad(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                for k in 0..n {
                    a[(k, j)] += u[i] * self.c(i, j, k);
                }
            }
        }
        a
    }

    pub fn ad_basis(&self, i: usize) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |k, j| self.c(i, j, k))
    }

    /// Re-expresses the algebra in the basis given by the columns of `g`.
    pub fn change_basis(&self, g: &DMatrix<f64>) -> Result<Self> {
        let n = self.dim;
        if g.shape() != (n, n) {
            return Err(Error::invalid("change of basis has wrong shape"));
        }
        let ginv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("change of basis is not invertible".into()))?;
        let mut out = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                let w = self.bracket(&g.column(a).into_owned(), &g.column(b).into_owned());
                let w = &ginv * w;
                for k in 0..n {
                    out[(a * n + b) * n + k] = w[k];
                }
            }
        }
        Self::from_raw(n, out)
    }

    /// Orthonormal bases (columns) of the lower central series terms, starting with `n`.
    pub fn lower_central_series_bases(&self) -> Vec<DMatrix<f64>> {
        let n = self.dim;
        let ads: Vec<DMatrix<f64>> = (0..n).map(|i| self.ad_basis(i)).collect();
        let mut out = vec![DMatrix::identity(n, n)];
        loop {
            let cur = out.last().unwrap();
            let d = cur.ncols();
            let mut m = DMatrix::zeros(n, n * d);
            for (i, ad) in ads.iter().enumerate() {
                m.view_mut((0, i * d), (n, d)).copy_from(&(ad * cur));
            }
            let next = column_span(&m, 1e-10);
            let nd = next.ncols();
            out.push(next);
            if nd == 0 || nd == d {
                break;
            }
        }
        out
    }
}

/// Antisymmetry, Jacobi and nilpotency diagnostics.
pub fn validate_algebra(alg: &LieAlgebra) -> AlgebraReport {
    let n = alg.dim;
    let mut anti: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                anti = anti.max((alg.c(i, j, k) + alg.c(j, i, k)).abs());
            }
        }
    }
    let mut jac: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                for m in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += alg.c(i, j, k) * alg.c(k, l, m)
                            + alg.c(j, l, k) * alg.c(k, i, m)
                            + alg.c(l, i, k) * alg.c(k, j, m);
                    }
                    jac = jac.max(s.abs());
                }
            }
        }
    }
    let scale = alg.max_structure_constant().max(1.0);
    AlgebraReport {
        antisymmetry_gap: anti,
        jacobi_gap: jac,
        step: alg.step,
        lower_central_series: alg.lcs.clone(),
        valid: anti <= JACOBI_TOL * scale && jac <= JACOBI_TOL * scale * scale,
    }
}

/// An inner product on the algebra, stored as its Gram matrix `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricData {
    h: DMatrix<f64>,
}

impl MetricData {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() || h.nrows() == 0 {
            return Err(Error::invalid("metric must be a non-empty square matrix"));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("metric entries must be finite"));
        }
        let scale = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let asym = (&h - h.transpose()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::invalid(format!("metric is not symmetric (gap {asym:.3e})")));
        }
        let h = symmetrize(&h);
        let ev = sym_eigenvalues(&h);
        if ev[0] <= 0.0 {
            return Err(Error::invalid("metric is not positive definite"));
        }
        Ok(MetricData { h })
    }

    pub fn identity(n: usize) -> Self {
        MetricData {
            h: DMatrix::identity(n, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn condition_number(&self) -> f64 {
        let ev = sym_eigenvalues(&self.h);
        ev[ev.len() - 1] / ev[0]
    }

    pub fn scaled(&self, t: f64) -> Self {
        MetricData { h: &self.h * t }
    }

    /// `P = H^{-1/2}`; its columns form an h-orthonormal basis.
    pub fn orthonormal_frame(&self) -> DMatrix<f64> {
        sym_fn(&self.h, |x| 1.0 / x.sqrt())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        sym_fn(&self.h, |x| 1.0 / x)
    }
}

fn check_pair(alg: &LieAlgebra, metric: &MetricData) -> Result<()> {
    if alg.dim() != metric.dim() {
        return Err(Error::invalid(format!(
            "metric dimension {} does not match algebra dimension {}",
            metric.dim(),
            alg.dim()
        )));
    }
    let cond = metric.condition_number();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    Ok(())
}

/// Ricci endomorphism from the Koszul formula; valid for any Lie algebra.
pub fn ricci_oracle(alg: &LieAlgebra, metric: &MetricData) -> Result<DMatrix<f64>> {
    check_pair(alg, metric)?;
    let n = alg.dim();
    let h = metric.matrix();
    let hinv = metric.inverse();
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;

    // lowered constants <[e_i,e_j], e_k>
    let mut cl = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                cl[idx(i, j, k)] = (0..n).map(|m| alg.c(i, j, m) * h[(m, k)]).sum();
            }
        }
    }
    // nabla[i][(m, j)] = Γ_ij^m with ∇_{e_i} e_j = Σ_m Γ_ij^m e_m
    let mut nabla = vec![DMatrix::<f64>::zeros(n, n); n];
    for i in 0..n {
        for j in 0..n {
            for m in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    let koszul = cl[idx(i, j, k)] - cl[idx(j, k, i)] + cl[idx(k, i, j)];
                    s += koszul * hinv[(k, m)];
                }
                nabla[i][(m, j)] = 0.5 * s;
            }
        }
    }
    let mut ric = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut r = &nabla[i] * &nabla[j] - &nabla[j] * &nabla[i];
            for k in 0..n {
                let c = alg.c(i, j, k);
                if c != 0.0 {
                    r -= &nabla[k] * c;
                }
            }
            for l in 0..n {
                ric[(j, l)] += r[(i, l)];
            }
        }
    }
    Ok(hinv * ric)
}

pub fn scalar_curvature(alg: &LieAlgebra, metric: &MetricData) -> Result<f64> {
    Ok(ricci_oracle(alg, metric)?.trace())
}

/// `δ(E)` as a dense `n³` array indexed `(i, j, k) ↦ δ(E)(e_i, e_j)_k`.
pub fn derivation_defect(alg: &LieAlgebra, e: &DMatrix<f64>) -> Vec<f64> {
    let n = alg.dim();
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += -alg.c(i, j, m) * e[(k, m)]
                        + e[(m, i)] * alg.c(m, j, k)
                        + e[(m, j)] * alg.c(i, m, k);
                }
                out[(i * n + j) * n + k] = s;
            }
        }
    }
    out
}

pub fn derivation_defect_norm(alg: &LieAlgebra, e: &DMatrix<f64>) -> f64 {
    derivation_defect(alg, e)
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Ricci endomorphism from the moment-map identity
/// `tr(Ric^E E) = −½⟨δ(E), [·,·]⟩_h` for all `E ∈ End(n)`.
pub fn ricci_moment_map(alg: &LieAlgebra, metric: &MetricData) -> Result<DMatrix<f64>> {
    if !alg.is_nilpotent() {
        return Err(Error::NotNilpotent);
    }
    check_pair(alg, metric)?;
    let n = alg.dim();
    let p = metric.orthonormal_frame();
    let pinv = sym_fn(metric.matrix(), f64::sqrt);
    let on = alg.change_basis(&p)?;
    let mut r = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut e = DMatrix::zeros(n, n);
            e[(a, b)] = 1.0;
            let d = derivation_defect(&on, &e);
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    for k in 0..n {
                        s += d[(i * n + j) * n + k] * on.c(i, j, k);
                    }
                }
            }
            // tr(R E_ab) = R_ba
            r[(b, a)] = -0.5 * s;
        }
    }
    Ok(&p * r * pinv)
}

/// Ratio `⟨oracle, moment map⟩ / ⟨moment map, moment map⟩` on orthonormal heis3;
/// equals 1 when the i<j convention agrees with the Koszul oracle.
pub fn moment_map_calibration() -> f64 {
    let alg = LieAlgebra::heisenberg3(1.0);
    let h = MetricData::identity(3);
    let o = ricci_oracle(&alg, &h).expect("identity metric");
    let m = ricci_moment_map(&alg, &h).expect("heis3 is nilpotent");
    frob_dot(&o, &m) / frob_dot(&m, &m)
}

/// Frobenius-orthonormal basis of `Der(n)`.
pub fn derivation_space(alg: &LieAlgebra) -> Vec<DMatrix<f64>> {
    let n = alg.dim();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let rows = pairs.len() * n;
    let mut a = DMatrix::zeros(rows, n * n);
    for col in 0..n * n {
        let mut e = DMatrix::zeros(n, n);
        e[(col / n, col % n)] = 1.0;
        let d = derivation_defect(alg, &e);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            for k in 0..n {
                a[(p * n + k, col)] = d[(i * n + j) * n + k];
            }
        }
    }
    let ns = null_space(&a, DERIVATION_TOL);
    (0..ns.ncols())
        .map(|c| DMatrix::from_fn(n, n, |r, s| ns[(r * n + s, c)]))
        .collect()
}

/// Best approximation `Ric^E ≈ λ·Id − D` with `D ∈ Der(n)`.
#[derive(Clone, Debug)]
pub struct SolitonFit {
    pub lambda: f64,
    pub derivation: DMatrix<f64>,
    pub residual: f64,
}

/// Least-squares projection of `ric` onto `span{Id} ⊕ Der(n)`. The Frobenius product is
/// taken in an h-orthonormal frame, which makes the residual invariant under isometries
/// and automorphisms.
pub fn soliton_fit(
    alg: &LieAlgebra,
    der: &[DMatrix<f64>],
    metric: &MetricData,
    ric: &DMatrix<f64>,
) -> SolitonFit {
    let n = alg.dim();
    if alg.is_abelian() {
        return SolitonFit {
            lambda: -0.5,
            derivation: DMatrix::identity(n, n) * -0.5,
            residual: ric.norm(),
        };
    }
    let p = metric.orthonormal_frame();
    let pinv = sym_fn(metric.matrix(), f64::sqrt);
    let to_frame = |m: &DMatrix<f64>| &pinv * m * &p;
    let r = to_frame(ric);
    let m = der.len();
    let mut a = DMatrix::zeros(n * n, m + 1);
    for i in 0..n {
        a[(i * n + i, 0)] = 1.0;
    }
    for (c, d) in der.iter().enumerate() {
        let df = to_frame(d);
        for i in 0..n {
            for j in 0..n {
                a[(i * n + j, c + 1)] = df[(i, j)];
            }
        }
    }
    let b = DVector::from_fn(n * n, |q, _| r[(q / n, q % n)]);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-12).expect("svd solve with u and v");
    let fitted = &a * &x;
    let residual = (&b - &fitted).norm();
    let lambda = x[0];
    let mut dmat = DMatrix::zeros(n, n);
    for (c, d) in der.iter().enumerate() {
        dmat -= d * x[c + 1];
    }
    SolitonFit {
        lambda,
        derivation: dmat,
        residual,
    }
}

/// Nilsoliton data attached to a metric.
#[derive(Clone, Debug)]
pub struct NilsolitonCertificate {
    pub metric: DMatrix<f64>,
    pub lambda: f64,
    /// `D` in `Ric^E = λ·Id − D`.
    pub derivation: DMatrix<f64>,
    pub ricci: DMatrix<f64>,
    pub scal: f64,
    /// GIT weight: `Ric^E` rescaled so that `tr β = −1`; zero for abelian algebras.
    pub beta: DMatrix<f64>,
    /// `Id + (tr β²)⁻¹ β`; undefined when β vanishes.
    pub beta_plus: Option<DMatrix<f64>>,
    pub beta_plus_min_eigenvalue: Option<f64>,
    pub residual: f64,
    pub trace_identity_gap: f64,
    pub norm_identity_gap: f64,
    pub derivation_defect: f64,
    pub tol: f64,
    pub certified: bool,
    pub iterations: usize,
}

impl NilsolitonCertificate {
    /// The derivation in the `Ric^E = λ·Id + D_intro` convention.
    pub fn derivation_intro(&self) -> DMatrix<f64> {
        -&self.derivation
    }

    /// Eigenvalues of `D`, sorted by absolute value.
    pub fn derivation_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .derivation
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect();
        ev.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
        ev
    }
}

/// Certifies `h` as a nilsoliton to tolerance `tol`.
pub fn certify_nilsoliton(
    alg: &LieAlgebra,
    metric: &MetricData,
    tol: f64,
) -> Result<NilsolitonCertificate> {
    if !alg.is_nilpotent() {
        return Err(Error::NotNilpotent);
    }
    let der = derivation_space(alg);
    let ric = ricci_oracle(alg, metric)?;
    Ok(certificate_from(alg, &der, metric, ric, tol, 0))
}

fn certificate_from(
    alg: &LieAlgebra,
    der: &[DMatrix<f64>],
    metric: &MetricData,
    ric: DMatrix<f64>,
    tol: f64,
    iterations: usize,
) -> NilsolitonCertificate {
    let n = alg.dim();
    let fit = soliton_fit(alg, der, metric, &ric);
    let scal = ric.trace();
    let lambda = fit.lambda;
    let d = fit.derivation;
    let trace_gap = ((&d * &d).trace() - lambda * d.trace()).abs();
    let norm_gap = ((&ric * &ric).trace() - lambda * scal).abs();
    let (beta, beta_plus, bp_min) = if alg.is_abelian() {
        (DMatrix::zeros(n, n), None, None)
    } else {
        let beta = &ric / (-scal);
        let tb2 = (&beta * &beta).trace();
        let bp = DMatrix::identity(n, n) + &beta / tb2;
        // β⁺ is h-self-adjoint; its spectrum is that of the congruent symmetric matrix
        let p = metric.orthonormal_frame();
        let pinv = sym_fn(metric.matrix(), f64::sqrt);
        let min = sym_eigenvalues(&(&pinv * &bp * &p))[0];
        (beta, Some(bp), Some(min))
    };
    let defect = derivation_defect_norm(alg, &d);
    let certified = fit.residual <= tol && trace_gap <= tol && norm_gap <= tol;
    NilsolitonCertificate {
        metric: metric.matrix().clone(),
        lambda,
        derivation: d,
        ricci: ric,
        scal,
        beta,
        beta_plus,
        beta_plus_min_eigenvalue: bp_min,
        residual: fit.residual,
        trace_identity_gap: trace_gap,
        norm_identity_gap: norm_gap,
        derivation_defect: defect,
        tol,
        certified,
        iterations,
    }
}

/// Options for [`find_nilsoliton`].
#[derive(Clone, Copy, Debug)]
pub struct FinderOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FinderOptions {
    fn default() -> Self {
        FinderOptions {
            tol: 1e-9,
            max_iters: 50_000,
        }
    }
}

fn normalize_scal(alg: &LieAlgebra, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = MetricData::new(symmetrize(h))?;
    let s = scalar_curvature(alg, &m)?;
    if !(s < 0.0) {
        return Err(Error::invalid("scalar curvature must be negative to normalise"));
    }
    // scal(t h) = scal(h) / t
    Ok(m.matrix() * (-s))
}

/// Scal-normalised Ricci flow on left-invariant metrics, run until the metric is a
/// nilsoliton to `opts.tol`. The result is normalised to `scal = −1`.
///
/// Each Euler step removes the component of the velocity tangent to the
/// `ℝ⁺·Aut(n)` orbit. That component is the best-fitting `λ·Id − D`. Removing it is a
/// gauge choice: the flow still follows Ricci flow up to scaling and automorphisms. It
/// keeps the metric from drifting towards degeneracy along the soliton's own
/// self-similar motion.
pub fn find_nilsoliton(
    alg: &LieAlgebra,
    init: &MetricData,
    opts: &FinderOptions,
) -> Result<NilsolitonCertificate> {
    if !alg.is_nilpotent() {
        return Err(Error::NotNilpotent);
    }
    check_pair(alg, init)?;
    let der = derivation_space(alg);
    if alg.is_abelian() {
        let ric = ricci_oracle(alg, init)?;
        return Ok(certificate_from(alg, &der, init, ric, opts.tol, 0));
    }
    let n = alg.dim();
    let mut h = normalize_scal(alg, init.matrix())?;
    let mut last = f64::INFINITY;
    let mut history = Vec::new();
    for it in 0..=opts.max_iters {
        let metric = MetricData::new(h.clone())?;
        check_pair(alg, &metric)?;
        let ric = ricci_oracle(alg, &metric)?;
        let fit = soliton_fit(alg, &der, &metric, &ric);
        last = fit.residual;
        if it % 100 == 0 {
            history.push(last);
        }
        if fit.residual < opts.tol {
            let cert = certificate_from(alg, &der, &metric, ric, opts.tol, it);
            return Ok(cert);
        }
        if it == opts.max_iters {
            break;
        }
        let dt = (0.1 / ric.norm()).min(0.01);
        let soliton_part = DMatrix::identity(n, n) * fit.lambda - &fit.derivation;
        let perp = &ric - soliton_part;
        let vel = symmetrize(&(&h * perp)) * -2.0;
        h = normalize_scal(alg, &(&h + vel * dt))?;
    }
    Err(Error::NoConvergence {
        what: "nilsoliton finder",
        iterations: opts.max_iters,
        residual: last,
        history,
    })
}

/// Re-certifies `cert.metric` rescaled so that its soliton constant becomes `target`
/// (`λ_t = λ/t` under `h → t·h`).
pub fn rescale_to_lambda(
    alg: &LieAlgebra,
    cert: &NilsolitonCertificate,
    target: f64,
) -> Result<NilsolitonCertificate> {
    if alg.is_abelian() {
        let m = MetricData::new(cert.metric.clone())?;
        let mut c = certify_nilsoliton(alg, &m, cert.tol)?;
        c.lambda = target;
        c.derivation = DMatrix::identity(alg.dim(), alg.dim()) * target;
        return Ok(c);
    }
    if !(cert.lambda < 0.0) || !(target < 0.0) {
        return Err(Error::invalid("soliton constants must be negative to rescale"));
    }
    let t = cert.lambda / target;
    let m = MetricData::new(&cert.metric * t)?;
    certify_nilsoliton(alg, &m, cert.tol)
}

/// Bases of `g = {E ∈ Der(n) : [E, β] = 0, tr E = 0}` and its Cartan pieces.
#[derive(Clone, Debug)]
pub struct SymmetryAlgebra {
    pub g: Vec<DMatrix<f64>>,
    /// `g ∩ skew(h)`.
    pub k: Vec<DMatrix<f64>>,
    /// `g ∩ sym(h)`.
    pub p: Vec<DMatrix<f64>>,
}

fn combine(basis: &[DMatrix<f64>], coeffs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    (0..coeffs.ncols())
        .map(|c| {
            basis
                .iter()
                .enumerate()
                .fold(DMatrix::zeros(basis[0].nrows(), basis[0].ncols()), |acc, (i, b)| {
                    acc + b * coeffs[(i, c)]
                })
        })
        .collect()
}

fn kernel_of_linear_map(
    basis: &[DMatrix<f64>],
    map: impl Fn(&DMatrix<f64>) -> Vec<f64>,
) -> Vec<DMatrix<f64>> {
    if basis.is_empty() {
        return Vec::new();
    }
    let images: Vec<Vec<f64>> = basis.iter().map(&map).collect();
    let rows = images[0].len();
    let a = DMatrix::from_fn(rows, basis.len(), |r, c| images[c][r]);
    combine(basis, &null_space(&a, 1e-9))
}

/// Lie algebra of the group preserving the nilsoliton structure of `cert`.
pub fn lie_of_g(alg: &LieAlgebra, cert: &NilsolitonCertificate) -> Result<SymmetryAlgebra> {
    if !cert.certified {
        return Err(Error::NotSoliton {
            residual: cert.residual,
            trace_gap: cert.trace_identity_gap,
            norm_gap: cert.norm_identity_gap,
        });
    }
    let der = derivation_space(alg);
    let beta = &cert.beta;
    let h = &cert.metric;
    let g = kernel_of_linear_map(&der, |e| {
        let mut v: Vec<f64> = (e * beta - beta * e).iter().cloned().collect();
        v.push(e.trace());
        v
    });
    let k = kernel_of_linear_map(&g, |e| (e.transpose() * h + h * e).iter().cloned().collect());
    let p = kernel_of_linear_map(&g, |e| (e.transpose() * h - h * e).iter().cloned().collect());
    if k.len() + p.len() != g.len() {
        return Err(Error::invalid(format!(
            "Cartan decomposition failed: dim g = {}, dim k = {}, dim p = {}",
            g.len(),
            k.len(),
            p.len()
        )));
    }
    Ok(SymmetryAlgebra { g, k, p })
}

/// Taylor coefficients `b_k = B_k / k!` of `z / (e^z − 1)` (so `b_1 = −½`).
pub fn bch_coefficients(count: usize) -> Vec<f64> {
    let mut fact = vec![1.0f64; count + 2];
    for i in 1..fact.len() {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut b = vec![0.0; count];
    for m in 0..count {
        if m == 0 {
            b[0] = 1.0;
            continue;
        }
        // (e^z − 1)/z = Σ z^k/(k+1)!, and the product with z/(e^z − 1) is 1
        let s: f64 = (0..m).map(|k| b[k] / fact[m - k + 1]).sum();
        b[m] = -s;
    }
    b
}

const MAX_BCH_STEP: usize = 30;

/// Right-invariant field generated by `y` at `exp(u)`, in exponential coordinates:
/// `F(u) = (ad_u / (e^{ad_u} − 1)) y = y − ½[u, y] + (1/12)[u,[u,y]] − …`
/// (the derivative of `log(exp(t y) exp(u))` at `t = 0`).
pub fn right_invariant_field(alg: &LieAlgebra, u: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let s = alg.step();
    if s == 0 {
        return Err(Error::NotNilpotent);
    }
    if s > MAX_BCH_STEP {
        return Err(Error::invalid(format!(
            "BCH series implemented up to step {MAX_BCH_STEP}, algebra has step {s}"
        )));
    }
    let b = bch_coefficients(s);
    let ad = alg.ad(u);
    let mut term = y.clone();
    let mut out = y * b[0];
    for bk in b.iter().skip(1) {
        term = &ad * term;
        out += &term * *bk;
    }
    Ok(out)
}

/// Zero of the soliton vector field `U ↦ D̃U + F(U)`, built level by level along the
/// lower central series.
pub fn find_soliton_vf_zero(
    alg: &LieAlgebra,
    dtilde: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = alg.dim();
    if !alg.is_nilpotent() {
        return Err(Error::NotNilpotent);
    }
    if dtilde.shape() != (n, n) || y.len() != n {
        return Err(Error::invalid("dimension mismatch"));
    }
    let scale = dtilde.norm().max(1.0);
    if derivation_defect_norm(alg, dtilde) > 1e-8 * scale {
        return Err(Error::invalid("D̃ must be a derivation"));
    }
    // induced maps on n^k / n^{k+1}
    let series = alg.lower_central_series_bases();
    for (k, w) in series.windows(2).enumerate() {
        let (cur, next) = (&w[0], &w[1]);
        let comp = if next.ncols() == 0 {
            cur.clone()
        } else {
            let proj = cur - next * (next.transpose() * cur);
            column_span(&proj, 1e-10)
        };
        let block = comp.transpose() * dtilde * &comp;
        let smin = block.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smin > 1e-12 * scale) {
            return Err(Error::Singular(format!(
                "induced map on level {} of the lower central series is singular",
                k + 1
            )));
        }
    }
    let lu = dtilde.clone().lu();
    let mut u = DVector::zeros(n);
    let target = 1e-10 * y.norm().max(1.0);
    let mut res = f64::INFINITY;
    for _ in 0..(4 * alg.step() + 2) {
        let r = dtilde * &u + right_invariant_field(alg, &u, y)?;
        res = r.norm();
        if res <= target {
            return Ok(u);
        }
        let v = lu
            .solve(&r)
            .ok_or_else(|| Error::Singular("D̃ is not invertible".into()))?;
        u -= v;
    }
    Err(Error::NoConvergence {
        what: "soliton vector field zero",
        iterations: 4 * alg.step() + 2,
        residual: res,
        history: vec![res],
    })
}

/// The rank-one solvable extension `ℝξ ⋉ n` of a `λ = −½` nilsoliton.
#[derive(Clone, Debug)]
pub struct EinsteinExtension {
    pub algebra: LieAlgebra,
    pub metric: DMatrix<f64>,
    /// `D_M = −(Ric^E + ½Id)`.
    pub d_m: DMatrix<f64>,
    /// `α·D_M`, the derivation used for `[ξ, ·]`.
    pub d_used: DMatrix<f64>,
    pub alpha: f64,
    pub ricci: DMatrix<f64>,
    /// `‖Ric^E + ½Id‖` of the extension.
    pub ricci_gap: f64,
    /// `tr((αD_M)²)`; equals ½.
    pub trace_square: f64,
    /// `|tr D_M² + ½ tr D_M|`.
    pub trace_identity_gap: f64,
    pub jacobi_gap: f64,
}

pub fn einstein_extension(
    alg: &LieAlgebra,
    cert: &NilsolitonCertificate,
) -> Result<EinsteinExtension> {
    if !cert.certified {
        return Err(Error::NotSoliton {
            residual: cert.residual,
            trace_gap: cert.trace_identity_gap,
            norm_gap: cert.norm_identity_gap,
        });
    }
    if (cert.lambda + 0.5).abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "extension needs λ = −½, got {} (rescale the metric first)",
            cert.lambda
        )));
    }
    let n = alg.dim();
    let metric = MetricData::new(cert.metric.clone())?;
    let ric = ricci_oracle(alg, &metric)?;
    let d_m = -(&ric + DMatrix::identity(n, n) * 0.5);
    let tr2 = (&d_m * &d_m).trace();
    let alpha = (2.0 * tr2).powf(-0.5);
    let d_used = &d_m * alpha;

    let m = n + 1;
    let mut c = vec![0.0; m * m * m];
    for j in 0..n {
        for k in 0..n {
            c[(j + 1) * m + k + 1] = d_used[(k, j)];
            c[((j + 1) * m) * m + k + 1] = -d_used[(k, j)];
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                c[((i + 1) * m + j + 1) * m + k + 1] = alg.c(i, j, k);
            }
        }
    }
    let ext = LieAlgebra::from_raw(m, c)?;
    let rep = validate_algebra(&ext);
    if !rep.valid {
        return Err(Error::invalid(format!(
            "extension violates Jacobi (gap {:.3e}); D_M is not a derivation",
            rep.jacobi_gap
        )));
    }
    let mut h = DMatrix::zeros(m, m);
    h[(0, 0)] = 1.0;
    h.view_mut((1, 1), (n, n)).copy_from(&cert.metric);
    let ricci = ricci_oracle(&ext, &MetricData::new(h.clone())?)?;
    let ricci_gap = (&ricci + DMatrix::identity(m, m) * 0.5).norm();
    Ok(EinsteinExtension {
        algebra: ext,
        metric: h,
        trace_square: (&d_used * &d_used).trace(),
        trace_identity_gap: (tr2 + 0.5 * d_m.trace()).abs(),
        d_m,
        d_used,
        alpha,
        ricci,
        ricci_gap,
        jacobi_gap: rep.jacobi_gap,
    })
}

/// Spectrum of an h-self-adjoint endomorphism, ascending.
pub fn self_adjoint_spectrum(metric: &MetricData, e: &DMatrix<f64>) -> Vec<f64> {
    let p = metric.orthonormal_frame();
    let pinv = sym_fn(metric.matrix(), f64::sqrt);
    let s = symmetrize(&(&pinv * e * &p));
    let mut v: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().cloned().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_taylor_coefficients() {
        let b = bch_coefficients(7);
        let want = [1.0, -0.5, 1.0 / 12.0, 0.0, -1.0 / 720.0, 0.0, 1.0 / 30240.0];
        for (x, w) in b.iter().zip(want) {
            assert!((x - w).abs() < 1e-15, "{x} vs {w}");
        }
    }

    #[test]
    fn heisenberg_ricci_closed_form() {
        let mu = 1.7;
        let alg = LieAlgebra::heisenberg3(mu);
        let ric = ricci_oracle(&alg, &MetricData::identity(3)).unwrap();
        let q = mu * mu / 2.0;
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![-q, -q, q]));
        assert!((ric - want).norm() < 1e-13);
        assert!((scalar_curvature(&alg, &MetricData::identity(3)).unwrap() + q).abs() < 1e-13);
    }

    #[test]
    fn lower_central_series_and_step() {
        let h = LieAlgebra::heisenberg3(1.0);
        assert_eq!(h.lower_central_series(), &[3, 1, 0]);
        assert_eq!(h.step(), 2);
        assert_eq!(LieAlgebra::abelian(3).unwrap().step(), 1);
        // [e1, e2] = e2 is solvable, not nilpotent
        let aff = LieAlgebra::from_brackets(2, &[(0, 1, 1, 1.0)]).unwrap();
        assert_eq!(aff.step(), 0);
        assert!(!aff.is_nilpotent());
    }

    #[test]
    fn rejects_non_lie_brackets() {
        assert!(LieAlgebra::from_brackets(3, &[(0, 1, 2, 1.0), (0, 2, 0, 1.0)]).is_err());
        assert!(LieAlgebra::from_brackets(2, &[(0, 0, 1, 1.0)]).is_err());
        assert!(LieAlgebra::from_raw(2, vec![0.0; 7]).is_err());
        assert!(LieAlgebra::from_raw(1, vec![f64::NAN]).is_err());
        assert!(LieAlgebra::named("abelian:x").is_err());
        assert!(LieAlgebra::named("sl2").is_err());
        assert_eq!(LieAlgebra::named("abelian:5").unwrap().dim(), 5);
    }

    #[test]
    fn derivation_space_dimensions() {
        // Der(heis3): arbitrary on span(e1, e2), trace-determined on e3, plus e1,e2 → e3
        assert_eq!(derivation_space(&LieAlgebra::heisenberg3(1.0)).len(), 6);
        assert_eq!(derivation_space(&LieAlgebra::abelian(3).unwrap()).len(), 9);
        for d in derivation_space(&LieAlgebra::heisenberg3(2.0)) {
            assert!(derivation_defect_norm(&LieAlgebra::heisenberg3(2.0), &d) < 1e-10);
        }
    }

    #[test]
    fn bracket_matches_ad() {
        let alg = LieAlgebra::heisenberg3_plus_r();
        let u = DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0]);
        let v = DVector::from_vec(vec![1.1, 0.4, -0.7, 0.2]);
        assert!((alg.bracket(&u, &v) - alg.ad(&u) * &v).norm() < 1e-15);
        assert!((alg.bracket(&u, &v) + alg.bracket(&v, &u)).norm() < 1e-15);
    }
}
