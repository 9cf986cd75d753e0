//! Twisted harmonic maps into `Sym²₊`: tension, energy, heat flow, pull-back metric.
//!
//! A field stores one SPD matrix per mesh vertex. Neighbour values are always pulled
//! into the local frame first: across half-edge `v → j` the neighbour reads
//! `g_vj · h_j`.

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg::{null_space, symmetrize};
use crate::spdgeom::{act_with_inverse, check_spd, project_det1, SpdChart};
use crate::surface::{AreaKind, HalfEdge, MeshGeometry, TwistedSurfaceMesh};
use crate::{Error, Result};

/// Per-vertex bundle metric `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct HField {
    values: Vec<DMatrix<f64>>,
    unit_det: bool,
}

impl HField {
    pub fn new(mesh: &TwistedSurfaceMesh, values: Vec<DMatrix<f64>>, unit_det: bool) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::invalid(format!(
                "field has {} values for {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        for (v, h) in values.iter().enumerate() {
            if h.nrows() != mesh.n() {
                return Err(Error::invalid(format!("value at vertex {v} is not {0}x{0}", mesh.n())));
            }
            check_spd(h).map_err(|e| Error::invalid(format!("vertex {v}: {e}")))?;
            if unit_det && (h.determinant() - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("vertex {v} is off the det-1 slice")));
            }
        }
        Ok(HField { values: values.iter().map(symmetrize).collect(), unit_det })
    }

    pub fn constant(mesh: &TwistedSurfaceMesh, h: &DMatrix<f64>, unit_det: bool) -> Result<Self> {
        HField::new(mesh, vec![h.clone(); mesh.num_vertices()], unit_det)
    }

    pub fn identity(mesh: &TwistedSurfaceMesh, unit_det: bool) -> Self {
        let n = mesh.n();
        HField { values: vec![DMatrix::identity(n, n); mesh.num_vertices()], unit_det }
    }

    /// `exp_Id(S_v)` with symmetric `S_v` of entries uniform in `[−scale, scale]`
    /// (trace-free on the slice).
    pub fn random(mesh: &TwistedSurfaceMesh, seed: u64, scale: f64, unit_det: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mesh.n();
        let id = DMatrix::identity(n, n);
        let chart = SpdChart::new(&id);
        let values = (0..mesh.num_vertices())
            .map(|_| {
                let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..=scale));
                let mut s = symmetrize(&a);
                if unit_det {
                    let tr = s.trace() / n as f64;
                    s -= &id * tr;
                }
                chart.exp(&s)
            })
            .collect();
        HField { values, unit_det }
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn unit_det(&self) -> bool {
        self.unit_det
    }

    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    /// `q · h_v` at every vertex. The result is a section for the conjugated transports
    /// `q g q⁻¹`.
    pub fn group_acted(&self, q: &DMatrix<f64>) -> Result<Self> {
        let qi = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("group element is not invertible".into()))?;
        let values: Vec<_> = self.values.iter().map(|h| act_with_inverse(&qi, h)).collect();
        let unit_det = self.unit_det && (q.determinant().abs() - 1.0).abs() < 1e-12;
        Ok(HField { values, unit_det })
    }

    pub fn max_det_defect(&self) -> f64 {
        self.values.iter().map(|h| (h.determinant() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Mesh data shared by every flow iteration.
pub struct HarmonicContext<'a> {
    pub mesh: &'a TwistedSurfaceMesh,
    pub geo: MeshGeometry,
    halfedges: Vec<Vec<HalfEdge>>,
}

impl<'a> HarmonicContext<'a> {
    pub fn new(mesh: &'a TwistedSurfaceMesh) -> Result<Self> {
        Ok(HarmonicContext {
            mesh,
            geo: MeshGeometry::new(mesh, AreaKind::Barycentric)?,
            halfedges: mesh.halfedges(),
        })
    }

    fn check(&self, hf: &HField) -> Result<()> {
        if hf.values.len() != self.mesh.num_vertices() || hf.dim() != self.mesh.n() {
            return Err(Error::invalid("field does not match the mesh"));
        }
        Ok(())
    }

    /// Local data at `v`: `(Σ w log, Σ|w|, Σ w ‖log‖²)`.
    fn local(&self, values: &[DMatrix<f64>], v: usize, chart: &SpdChart) -> (DMatrix<f64>, f64, f64) {
        let n = values[v].nrows();
        let mut sum = DMatrix::zeros(n, n);
        let mut absw = 0.0;
        let mut e = 0.0;
        for he in &self.halfedges[v] {
            let w = self.geo.edge_weights[he.edge];
            let nb = act_with_inverse(he.transport_inv(self.mesh), &values[he.to]);
            let l = chart.log(&nb);
            e += w * chart.norm(&l).powi(2);
            sum += l * w;
            absw += w.abs();
        }
        (sum, absw, e)
    }

    /// `τ_v = (1/A_v) Σ_j w_vj log_{h_v}(g_vj · h_j)`.
    pub fn tension(&self, hf: &HField) -> Result<Vec<DMatrix<f64>>> {
        self.check(hf)?;
        Ok((0..self.mesh.num_vertices())
            .into_par_iter()
            .map(|v| {
                let chart = SpdChart::new(&hf.values[v]);
                self.local(&hf.values, v, &chart).0 / self.geo.vertex_areas[v]
            })
            .collect())
    }

    /// `‖τ_v‖` in `g_sym` at `h_v`.
    pub fn tension_norms(&self, hf: &HField) -> Result<Vec<f64>> {
        let t = self.tension(hf)?;
        Ok(t.iter()
            .zip(&hf.values)
            .map(|(tv, h)| SpdChart::new(h).norm(tv))
            .collect())
    }

    /// `Σ_e w_e d(h_i, g_ij·h_j)²`: the functional the flow decreases.
    pub fn edge_energy(&self, hf: &HField) -> f64 {
        self.mesh
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let nb = act_with_inverse(&edge.transport_inv, &hf.values[edge.j]);
                self.geo.edge_weights[e] * SpdChart::new(&hf.values[edge.i]).dist(&nb).powi(2)
            })
            .sum()
    }

    /// Per-triangle pull-back `Q_T` in the triangle's planar frame.
    ///
    /// The corner values, with transports applied, are mapped to log coordinates at their
    /// Karcher mid value. The linear interpolant's gradient is then contracted with
    /// `g_sym` there.
    pub fn pullback_metric(&self, hf: &HField) -> Result<Vec<Matrix2<f64>>> {
        self.check(hf)?;
        Ok((0..self.mesh.triangles().len())
            .into_par_iter()
            .map(|t| self.triangle_pullback(hf, t))
            .collect())
    }

    fn triangle_pullback(&self, hf: &HField, t: usize) -> Matrix2<f64> {
        let tri = self.mesh.triangles()[t];
        let g = self.mesh.corner_transports(t);
        let vals: Vec<DMatrix<f64>> = (0..3)
            .map(|k| {
                let gi = g[k].clone().try_inverse().expect("transport is invertible");
                act_with_inverse(&gi, &hf.values[tri[k]])
            })
            .collect();
        // one fixed-point step from the arithmetic mean
        let m0 = (&vals[0] + &vals[1] + &vals[2]) / 3.0;
        let c0 = SpdChart::new(&m0);
        let step = vals.iter().fold(DMatrix::zeros(m0.nrows(), m0.ncols()), |acc, h| acc + c0.log(h)) / 3.0;
        let chart = SpdChart::new(&c0.exp(&step));
        let x: Vec<DMatrix<f64>> = vals.iter().map(|h| chart.log(h)).collect();
        let p = self.geo.corner_coords[t];
        // solve G·(p_k − p_0) = x_k − x_0 for the two gradient components
        let (e1, e2) = ([p[1][0] - p[0][0], p[1][1] - p[0][1]], [p[2][0] - p[0][0], p[2][1] - p[0][1]]);
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        let d1 = &x[1] - &x[0];
        let d2 = &x[2] - &x[0];
        let gx = (&d1 * e2[1] - &d2 * e1[1]) / det;
        let gy = (&d2 * e1[0] - &d1 * e2[0]) / det;
        let xx = chart.inner(&gx, &gx);
        let xy = chart.inner(&gx, &gy);
        let yy = chart.inner(&gy, &gy);
        Matrix2::new(xx, xy, xy, yy)
    }

    /// `E = Σ_T area_T · tr Q_T`.
    pub fn energy(&self, hf: &HField) -> Result<f64> {
        let q = self.pullback_metric(hf)?;
        Ok(q.iter().zip(&self.geo.triangle_areas).map(|(q, a)| a * q.trace()).sum())
    }

    /// `‖Q_T − ½ tr Q_T · Id‖_F` per triangle.
    pub fn conformality_residual(&self, hf: &HField) -> Result<Vec<f64>> {
        Ok(self.pullback_metric(hf)?.iter().map(trace_free_norm).collect())
    }

    /// Area-weighted average of `½ tr Q_T` over the triangles incident to each vertex.
    pub fn nu_field(&self, hf: &HField) -> Result<Vec<f64>> {
        let q = self.pullback_metric(hf)?;
        Ok(self.vertex_average(&q.iter().map(|q| 0.5 * q.trace()).collect::<Vec<_>>()))
    }

    /// Area-weighted average of per-triangle values at each vertex.
    pub fn vertex_average(&self, per_triangle: &[f64]) -> Vec<f64> {
        let nv = self.mesh.num_vertices();
        let mut num = vec![0.0; nv];
        let mut den = vec![0.0; nv];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let a = self.geo.triangle_areas[t];
            for &v in tri {
                num[v] += a * per_triangle[t];
                den[v] += a;
            }
        }
        num.iter().zip(&den).map(|(n, d)| n / d).collect()
    }
}

pub fn trace_free_norm(q: &Matrix2<f64>) -> f64 {
    let half = 0.5 * q.trace();
    (q - Matrix2::identity() * half).norm()
}

pub fn tension(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<Vec<DMatrix<f64>>> {
    HarmonicContext::new(mesh)?.tension(hf)
}

pub fn energy(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<f64> {
    HarmonicContext::new(mesh)?.energy(hf)
}

pub fn pullback_metric(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<Vec<Matrix2<f64>>> {
    HarmonicContext::new(mesh)?.pullback_metric(hf)
}

pub fn conformality_residual(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<Vec<f64>> {
    HarmonicContext::new(mesh)?.conformality_residual(hf)
}

pub fn nu_field(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<Vec<f64>> {
    HarmonicContext::new(mesh)?.nu_field(hf)
}

/// Options of [`harmonic_flow`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowOptions {
    /// Relaxation factor of the normalized step; must lie in `(0, 1]`.
    pub dt: f64,
    /// Stop when `max_v ‖τ_v‖ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Record every k-th iterate in the trace.
    pub record_every: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { dt: 0.9, tol: 1e-8, max_iters: 200_000, record_every: 10 }
    }
}

/// Convergence trace of [`harmonic_flow`].
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_tension: f64,
    pub final_edge_energy: f64,
    pub final_energy: f64,
    pub rejected_steps: usize,
    /// `(iteration, edge energy, max tension)` samples.
    pub trace: Vec<(usize, f64, f64)>,
    pub diagnostics: Vec<String>,
}

/// Explicit Jacobi heat flow.
///
/// Each sweep moves every vertex simultaneously:
/// `h_v ← exp_{h_v}(dt · Σ_j w_vj log_{h_v}(g_vj·h_j) / Σ_j |w_vj|)`, then projects to
/// `det = 1` on the slice. A step that raises the edge energy is undone and `dt` halved.
pub fn harmonic_flow(mesh: &TwistedSurfaceMesh, hf: &HField, opts: &FlowOptions) -> Result<(HField, FlowReport)> {
    let ctx = HarmonicContext::new(mesh)?;
    harmonic_flow_with(&ctx, hf, opts)
}

pub fn harmonic_flow_with(ctx: &HarmonicContext, hf: &HField, opts: &FlowOptions) -> Result<(HField, FlowReport)> {
    ctx.check(hf)?;
    if !(opts.dt > 0.0 && opts.dt <= 1.0) {
        return Err(Error::invalid(format!("flow dt {} outside (0, 1]", opts.dt)));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("flow tolerance must be positive"));
    }
    let nv = ctx.mesh.num_vertices();
    let mut dt = opts.dt;
    let mut cur = hf.clone();
    let mut report = FlowReport::default();
    let mut prev_energy = f64::INFINITY;
    let mut prev: Option<HField> = None;
    let mut history = Vec::new();
    let mut iter = 0;
    loop {
        let local: Vec<(DMatrix<f64>, f64, f64, f64, SpdChart)> = (0..nv)
            .into_par_iter()
            .map(|v| {
                let chart = SpdChart::new(&cur.values[v]);
                let (sum, absw, e) = ctx.local(&cur.values, v, &chart);
                let tn = chart.norm(&sum) / ctx.geo.vertex_areas[v];
                (sum, absw, e, tn, chart)
            })
            .collect();
        let energy = 0.5 * local.iter().map(|l| l.2).sum::<f64>();
        let max_tension = local.iter().map(|l| l.3).fold(0.0, f64::max);
        if energy > prev_energy * (1.0 + 1e-12) + 1e-300 {
            // reject: restore and halve
            cur = prev.take().expect("a previous iterate exists after the first sweep");
            dt *= 0.5;
            report.rejected_steps += 1;
            if dt < 1e-12 {
                return Err(Error::NoConvergence {
                    what: "harmonic flow (step size collapsed)",
                    iterations: iter,
                    residual: max_tension,
                    history,
                });
            }
            prev_energy = f64::INFINITY;
            continue;
        }
        if iter % opts.record_every.max(1) == 0 {
            report.trace.push((iter, energy, max_tension));
            history.push(max_tension);
        }
        if max_tension <= opts.tol || iter >= opts.max_iters {
            report.iterations = iter;
            report.final_tension = max_tension;
            report.final_edge_energy = energy;
            report.converged = max_tension <= opts.tol;
            break;
        }
        let next: Vec<DMatrix<f64>> = local
            .par_iter()
            .map(|(sum, absw, _, _, chart)| {
                let h = if *absw > 0.0 { chart.exp(&(sum * (dt / absw))) } else { chart.h.clone() };
                if cur.unit_det {
                    project_det1(&h)
                } else {
                    h
                }
            })
            .collect();
        prev = Some(std::mem::replace(&mut cur, HField { values: next, unit_det: hf.unit_det }));
        if prev_energy.is_finite()
            && (prev_energy - energy).abs() <= 1e-15 * energy.max(1e-300)
            && iter > 1000
            && report.diagnostics.is_empty()
        {
            report.diagnostics.push(format!(
                "energy stalled at {energy:.6e} with tension {max_tension:.3e} (iteration {iter}); \
                 the representation may not be reductive"
            ));
        }
        prev_energy = energy;
        iter += 1;
    }
    report.final_energy = ctx.energy(&cur)?;
    if !report.converged {
        return Err(Error::NoConvergence {
            what: "harmonic flow",
            iterations: report.iterations,
            residual: report.final_tension,
            history,
        });
    }
    Ok((cur, report))
}

/// Basis of `{X : X g = g X for every transport g}`.
pub fn centralizer_basis(mesh: &TwistedSurfaceMesh) -> Vec<DMatrix<f64>> {
    let n = mesh.n();
    let gens: Vec<&DMatrix<f64>> = mesh.edges().iter().map(|e| &e.transport).collect();
    let mut rows = DMatrix::zeros(gens.len().max(1) * n * n, n * n);
    for (k, g) in gens.iter().enumerate() {
        for c in 0..n * n {
            let mut x = DMatrix::zeros(n, n);
            x[(c / n, c % n)] = 1.0;
            let comm = &x * *g - *g * &x;
            for r in 0..n * n {
                rows[(k * n * n + r, c)] = comm[(r / n, r % n)];
            }
        }
    }
    let ns = null_space(&rows, 1e-10);
    (0..ns.ncols())
        .map(|j| DMatrix::from_fn(n, n, |r, c| ns[(r * n + c, j)]))
        .collect()
}

/// Aligns `a` to `b` over the centralizer of the transports.
///
/// Minimizes `Σ_v d(q·a_v, b_v)²` over `q = exp(Σ c_i X_i)` by Gauss–Newton with
/// finite-difference Jacobians. Returns `q` and the largest remaining distance.
pub fn align_orbit(mesh: &TwistedSurfaceMesh, a: &HField, b: &HField, iterations: usize) -> Result<(DMatrix<f64>, f64)> {
    let basis = centralizer_basis(mesh);
    let n = mesh.n();
    let charts: Vec<SpdChart> = b.values.iter().map(SpdChart::new).collect();
    let residual = |c: &[f64]| -> Vec<f64> {
        let x = basis.iter().zip(c).fold(DMatrix::zeros(n, n), |acc, (xi, ci)| acc + xi * *ci);
        let qi = (-x).exp();
        let mut r = Vec::with_capacity(a.values.len() * n * n);
        for (h, ch) in a.values.iter().zip(&charts) {
            let moved = act_with_inverse(&qi, h);
            let l = &ch.inv_sqrt * ch.log(&moved) * &ch.inv_sqrt;
            r.extend(l.iter().cloned());
        }
        r
    };
    let mut c = vec![0.0; basis.len()];
    for _ in 0..iterations {
        if basis.is_empty() {
            break;
        }
        let r0 = residual(&c);
        let mut jac = DMatrix::zeros(r0.len(), basis.len());
        for k in 0..basis.len() {
            let step = 1e-6;
            let mut cp = c.clone();
            cp[k] += step;
            let mut cm = c.clone();
            cm[k] -= step;
            let (rp, rm) = (residual(&cp), residual(&cm));
            for i in 0..r0.len() {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        let rv = nalgebra::DVector::from_vec(r0);
        let delta = jac
            .svd(true, true)
            .solve(&(-&rv), 1e-12)
            .map_err(|e| Error::Singular(e.to_string()))?;
        for k in 0..c.len() {
            c[k] += delta[k];
        }
        if delta.norm() < 1e-13 {
            break;
        }
    }
    let x = basis.iter().zip(&c).fold(DMatrix::zeros(n, n), |acc, (xi, ci)| acc + xi * *ci);
    let q = x.exp();
    let qi = q.clone().try_inverse().expect("exponential is invertible");
    let worst = a
        .values
        .iter()
        .zip(&charts)
        .map(|(h, ch)| ch.dist(&act_with_inverse(&qi, h)))
        .fold(0.0, f64::max);
    Ok((q, worst))
}

/// Tension `h'' − h' h⁻¹ h'` of a closed chain `h_0, …, h_{N−1}` with the wrap-around
/// edge carrying `transport` (so the successor of `h_{N−1}` is `transport·h_0`), by
/// second-order central differences with spacing `ds`. Returns `g_sym` norms per sample.
///
/// Unlike the log-based mesh tension, which is exact on sampled geodesics, this
/// extrinsic stencil carries an `O(ds²)` truncation error.
pub fn cycle_tension(samples: &[DMatrix<f64>], transport: &DMatrix<f64>, ds: f64) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 3 || !(ds > 0.0) {
        return Err(Error::invalid("cycle needs at least 3 samples and positive spacing"));
    }
    let g_inv = transport
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("cycle transport".into()))?;
    let next = |k: usize| {
        if k + 1 == n {
            act_with_inverse(&g_inv, &samples[0])
        } else {
            samples[k + 1].clone()
        }
    };
    let prev = |k: usize| {
        if k == 0 {
            act_with_inverse(transport, &samples[n - 1])
        } else {
            samples[k - 1].clone()
        }
    };
    (0..n)
        .map(|k| {
            let h = &samples[k];
            check_spd(h)?;
            let (p, q) = (prev(k), next(k));
            let d1 = (&q - &p) / (2.0 * ds);
            let d2 = (&q - h * 2.0 + &p) / (ds * ds);
            let hinv = h.clone().try_inverse().ok_or_else(|| Error::Singular("sample".into()))?;
            let tau = d2 - &d1 * hinv * &d1;
            Ok(SpdChart::new(h).norm(&tau))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{build_torus_mesh, Representation};

    fn rot(a: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
    }

    #[test]
    fn constant_field_in_stabilizer_has_no_tension() {
        let mesh = build_torus_mesh(4, 4, 1.0, 1.0).unwrap();
        let rep = Representation::new(vec!["s".into(), "t".into()], vec![rot(0.4), rot(-1.3)]).unwrap();
        let mesh = crate::surface::attach_representation(&mesh, &rep).unwrap();
        let hf = HField::identity(&mesh, true);
        let ctx = HarmonicContext::new(&mesh).unwrap();
        assert!(ctx.tension_norms(&hf).unwrap().iter().all(|t| *t < 1e-14));
        assert!(ctx.energy(&hf).unwrap().abs() < 1e-20);
        assert!(ctx.nu_field(&hf).unwrap().iter().all(|x| x.abs() < 1e-20));
    }

    #[test]
    fn energy_bookkeeping_and_invariance() {
        let mesh = build_torus_mesh(5, 4, 1.0, 1.2).unwrap();
        let hf = HField::random(&mesh, 7, 0.3, false);
        let ctx = HarmonicContext::new(&mesh).unwrap();
        let q = ctx.pullback_metric(&hf).unwrap();
        let e: f64 = q.iter().zip(&ctx.geo.triangle_areas).map(|(q, a)| a * q.trace()).sum();
        assert!((e - ctx.energy(&hf).unwrap()).abs() < 1e-14 * e.max(1.0));
        let g = DMatrix::from_row_slice(2, 2, &[1.3, 0.4, -0.2, 0.9]);
        let e2 = ctx.energy(&hf.group_acted(&g).unwrap()).unwrap();
        assert!((e - e2).abs() < 1e-10 * e.max(1.0));
    }

    #[test]
    fn untwisted_flow_collapses() {
        let mesh = build_torus_mesh(6, 6, 1.0, 1.0).unwrap();
        let hf = HField::random(&mesh, 3, 0.5, true);
        let (out, rep) = harmonic_flow(&mesh, &hf, &FlowOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.final_energy < 1e-8);
        assert!(out.max_det_defect() < 1e-10);
        for w in rep.trace.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn alignment_recovers_centralizer_element() {
        let mesh = build_torus_mesh(4, 4, 1.0, 1.0).unwrap();
        let a = HField::random(&mesh, 11, 0.4, false);
        let q = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, -0.1, 0.8]);
        let b = a.group_acted(&q).unwrap();
        let (_, worst) = align_orbit(&mesh, &a, &b, 30).unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn sampled_geodesic_cycle_has_second_order_tension() {
        // D self-adjoint w.r.t. h0 makes s ↦ exp(sD)·h0 a geodesic.
        let h0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.8]);
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, -0.4]);
        let d = h0.clone().try_inverse().unwrap() * s;
        let g = d.clone().exp();
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let ds = 1.0 / n as f64;
            let samples: Vec<_> = (0..n)
                .map(|k| crate::spdgeom::group_act(&(&d * (k as f64 * ds)).exp(), &h0).unwrap())
                .collect();
            let t = cycle_tension(&samples, &g, ds).unwrap();
            errs.push(t.iter().cloned().fold(0.0, f64::max));
        }
        assert!(errs[0] > 1e-8);
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.8, "{errs:?}");
        }
    }
}
