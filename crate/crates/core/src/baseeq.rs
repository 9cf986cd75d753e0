//! The conformal-factor equation `Δu = ½e^{2u} − 1 − ν` on a mesh.
//!
//! Writing `Δ = −A⁻¹W` (cotangent stiffness `W`, vertex areas `A`), Newton solves
//! `(W + A·diag(e^{2u})) δ = A·F(u)` with `F(u) = Δu − ½e^{2u} + 1 + ν`. The matrix is
//! symmetric positive definite whenever `W` is positive semidefinite. A dense LU
//! factorisation takes over if sparse Cholesky fails on a mesh with strongly negative
//! cotangent weights.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::surface::{AreaKind, ConformalFactor, MeshGeometry, TwistedSurfaceMesh};
use crate::{Error, Result};

/// Options of [`solve_base`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaseOptions {
    /// Stop when `‖F(u)‖_∞ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Constant initial value.
    pub u0: f64,
    /// Re-solve from `u0 + 1` and require agreement to `1e-8`.
    pub check_uniqueness: bool,
}

impl Default for BaseOptions {
    fn default() -> Self {
        BaseOptions { tol: 1e-10, max_iters: 100, u0: 0.0, check_uniqueness: true }
    }
}

/// Solution of the base equation with its Newton trace.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseSolution {
    pub u: ConformalFactor,
    pub iterations: usize,
    /// `‖F(u_k)‖_∞` per Newton iterate, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// `‖u − u'‖_∞` against the solve started from `u0 + 1`.
    pub uniqueness_gap: Option<f64>,
    /// `I[u_k]` per iterate.
    pub energy_history: Vec<f64>,
}

pub const UNIQUENESS_TOL: f64 = 1e-8;

struct System<'a> {
    mesh: &'a TwistedSurfaceMesh,
    geo: MeshGeometry,
    nu: DVector<f64>,
}

impl System<'_> {
    fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        let lap = self.geo.laplacian_apply(self.mesh, u);
        DVector::from_fn(u.len(), |v, _| lap[v] - 0.5 * (2.0 * u[v]).exp() + 1.0 + self.nu[v])
    }

    fn newton_matrix(&self, u: &DVector<f64>) -> CscMatrix<f64> {
        let nv = u.len();
        let mut coo = CooMatrix::new(nv, nv);
        for (e, edge) in self.mesh.edges().iter().enumerate() {
            if edge.i == edge.j {
                continue;
            }
            let w = self.geo.edge_weights[e];
            coo.push(edge.i, edge.i, w);
            coo.push(edge.j, edge.j, w);
            coo.push(edge.i, edge.j, -w);
            coo.push(edge.j, edge.i, -w);
        }
        for v in 0..nv {
            coo.push(v, v, self.geo.vertex_areas[v] * (2.0 * u[v]).exp());
        }
        CscMatrix::from(&coo)
    }

    fn solve_linear(&self, m: &CscMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match CscCholesky::factor(m) {
            Ok(ch) => Ok(ch.solve(rhs).column(0).into_owned()),
            Err(_) => {
                let dense = DMatrix::from(m);
                dense
                    .lu()
                    .solve(rhs)
                    .ok_or_else(|| Error::Singular("base-equation Jacobian is singular".into()))
            }
        }
    }

    fn solve_from(&self, u0: f64, opts: &BaseOptions) -> Result<(DVector<f64>, Vec<f64>, Vec<f64>)> {
        let nv = self.mesh.num_vertices();
        let mut u = DVector::from_element(nv, u0);
        let mut f = self.residual(&u);
        let mut history = vec![f.amax()];
        let mut energies = vec![energy_with(&self.geo, self.mesh, &u, &self.nu)];
        for _ in 0..opts.max_iters {
            if *history.last().unwrap() <= opts.tol {
                return Ok((u, history, energies));
            }
            let a = DVector::from_fn(nv, |v, _| self.geo.vertex_areas[v] * f[v]);
            let delta = self.solve_linear(&self.newton_matrix(&u), &a)?;
            let r0 = f.amax();
            let mut step = 1.0;
            let (mut u_new, mut f_new);
            loop {
                u_new = &u + &delta * step;
                f_new = self.residual(&u_new);
                if f_new.amax() <= r0 || step < 1e-10 {
                    break;
                }
                step *= 0.5;
            }
            u = u_new;
            f = f_new;
            history.push(f.amax());
            energies.push(energy_with(&self.geo, self.mesh, &u, &self.nu));
            if !f.amax().is_finite() {
                break;
            }
        }
        if *history.last().unwrap() <= opts.tol {
            return Ok((u, history, energies));
        }
        Err(Error::NoConvergence {
            what: "base-equation Newton",
            iterations: history.len() - 1,
            residual: *history.last().unwrap(),
            history,
        })
    }
}

/// Solves `Δu = ½e^{2u} − 1 − ν` by damped Newton.
pub fn solve_base(mesh: &TwistedSurfaceMesh, nu: &[f64], opts: &BaseOptions) -> Result<BaseSolution> {
    if nu.len() != mesh.num_vertices() {
        return Err(Error::invalid(format!("{} nu values for {} vertices", nu.len(), mesh.num_vertices())));
    }
    if let Some(v) = nu.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid(format!("nu[{v}] = {} is not a nonnegative number", nu[v])));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("base tolerance must be positive"));
    }
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    let mean_k = geo.defects.iter().sum::<f64>() / geo.total_area();
    if (mean_k + 1.0).abs() > 0.2 {
        log::warn!("mean background curvature {mean_k:.4} deviates from -1 by more than 20%");
    }
    let sys = System { mesh, geo, nu: DVector::from_column_slice(nu) };
    let (u, history, energies) = sys.solve_from(opts.u0, opts)?;
    let uniqueness_gap = if opts.check_uniqueness {
        let (u2, _, _) = sys.solve_from(opts.u0 + 1.0, opts)?;
        let gap = (&u - &u2).amax();
        if gap > UNIQUENESS_TOL {
            return Err(Error::NoConvergence {
                what: "base-equation uniqueness check",
                iterations: 2,
                residual: gap,
                history,
            });
        }
        Some(gap)
    } else {
        None
    };
    Ok(BaseSolution {
        u: ConformalFactor { u },
        iterations: history.len() - 1,
        residual_history: history,
        uniqueness_gap,
        energy_history: energies,
    })
}

/// `|2πχ + ½Σ e^{2u_v}A_v − Σ ν_v A_v|`.
pub fn gauss_bonnet_constraint(mesh: &TwistedSurfaceMesh, u: &[f64], nu: &[f64]) -> Result<f64> {
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    let mut s = 2.0 * std::f64::consts::PI * mesh.chi() as f64;
    for v in 0..mesh.num_vertices() {
        s += geo.vertex_areas[v] * (0.5 * (2.0 * u[v]).exp() - nu[v]);
    }
    Ok(s.abs())
}

/// `Σ_v A_v F_v(u)`, the area integral of the discrete equation residual.
pub fn integrated_residual(mesh: &TwistedSurfaceMesh, u: &[f64], nu: &[f64]) -> Result<f64> {
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    let sys = System { mesh, geo, nu: DVector::from_column_slice(nu) };
    let f = sys.residual(&DVector::from_column_slice(u));
    Ok(f.iter().zip(&sys.geo.vertex_areas).map(|(f, a)| f * a).sum())
}

fn energy_with(geo: &MeshGeometry, mesh: &TwistedSurfaceMesh, u: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    let dirichlet: f64 = mesh
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| geo.edge_weights[e] * (u[edge.i] - u[edge.j]).powi(2))
        .sum();
    let linear: f64 = (0..u.len()).map(|v| geo.vertex_areas[v] * u[v] * (1.0 + nu[v])).sum();
    dirichlet - linear
}

/// `I[u] = uᵀWu − Σ_v A_v u_v (1 + ν_v)`, the discrete `∫|du|² − u(1+ν)`.
pub fn energy_functional(mesh: &TwistedSurfaceMesh, u: &[f64], nu: &[f64]) -> Result<f64> {
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    Ok(energy_with(&geo, mesh, &DVector::from_column_slice(u), &DVector::from_column_slice(nu)))
}

/// `|e^{−2u}(−Δu − 1) + ½ − ν e^{−2u}|` per vertex: the scalar horizontal equation with
/// `K(g_B) = e^{−2u}(−Δu − 1)`.
pub fn check_base_equation(mesh: &TwistedSurfaceMesh, u: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    let uv = DVector::from_column_slice(u);
    let lap = geo.laplacian_apply(mesh, &uv);
    Ok((0..u.len())
        .map(|v| {
            let e = (-2.0 * u[v]).exp();
            (e * (-lap[v] - 1.0) + 0.5 - nu[v] * e).abs()
        })
        .collect())
}

/// `K(g_B)_v = e^{−2u_v}(−(Δu)_v − 1)`.
pub fn base_curvature(mesh: &TwistedSurfaceMesh, u: &[f64]) -> Result<Vec<f64>> {
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    let lap = geo.laplacian_apply(mesh, &DVector::from_column_slice(u));
    Ok((0..u.len()).map(|v| (-2.0 * u[v]).exp() * (-lap[v] - 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::build_genus2_mesh;

    #[test]
    fn zero_nu_gives_half_log_two() {
        let mesh = build_genus2_mesh(2);
        let nu = vec![0.0; mesh.num_vertices()];
        let sol = solve_base(&mesh, &nu, &BaseOptions::default()).unwrap();
        let target = 0.5 * 2f64.ln();
        assert!(sol.u.u.iter().all(|x| (x - target).abs() < 1e-10));
        assert!(sol.uniqueness_gap.unwrap() < 1e-8);
        let gb = gauss_bonnet_constraint(&mesh, sol.u.u.as_slice(), &nu).unwrap();
        assert!(gb < 1e-8, "{gb}");
    }

    #[test]
    fn constant_nu_closed_form() {
        let mesh = build_genus2_mesh(1);
        let c = 0.75;
        let nu = vec![c; mesh.num_vertices()];
        let sol = solve_base(&mesh, &nu, &BaseOptions::default()).unwrap();
        let target = 0.5 * (2.0 * (1.0 + c)).ln();
        assert!(sol.u.u.iter().all(|x| (x - target).abs() < 1e-10));
        let r = check_base_equation(&mesh, sol.u.u.as_slice(), &nu).unwrap();
        assert!(r.iter().all(|x| *x < 1e-9));
    }

    #[test]
    fn newton_terminal_phase_is_contracting() {
        let mesh = build_genus2_mesh(2);
        let nu: Vec<f64> = (0..mesh.num_vertices()).map(|v| (v % 7) as f64 * 0.3).collect();
        let sol = solve_base(&mesh, &nu, &BaseOptions::default()).unwrap();
        let h = &sol.residual_history;
        assert!(h.len() >= 4);
        for k in h.len() - 3..h.len() {
            assert!(h[k] < h[k - 1], "{h:?}");
        }
    }

    #[test]
    fn energy_functional_examples() {
        let mesh = build_genus2_mesh(1);
        let nv = mesh.num_vertices();
        assert_eq!(energy_functional(&mesh, &vec![0.0; nv], &vec![1.0; nv]).unwrap(), 0.0);
        let k = 0.37;
        let i = energy_functional(&mesh, &vec![k; nv], &vec![0.0; nv]).unwrap();
        assert!((i + k * 4.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn negative_nu_is_rejected() {
        let mesh = build_genus2_mesh(0);
        let mut nu = vec![0.0; mesh.num_vertices()];
        nu[2] = -0.1;
        assert!(solve_base(&mesh, &nu, &BaseOptions::default()).is_err());
    }
}
