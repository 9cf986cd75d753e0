//! Assembly of the soliton metric `g = g_B + h` and block-wise verification of
//! `Ric_g + ½g = D_M`-type structure through the submersion formulas.
//!
//! Blocks, for a flat connection:
//! - vertical: `Ric^E_g = Ric^E_h − ½τ` (fibres minimal), so harmonic `h` leaves the
//!   fibre Ricci, which must be `−½Id − D_M` with `D_M` a derivation;
//! - horizontal: `Ric_g = Ric_{g_B} − h*g_sym`, required to equal `−½ g_B`;
//! - mixed: `Ric_g(Û, X̄) = tr(ad U · L_X)`.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::baseeq::{base_curvature, check_base_equation, solve_base, BaseOptions, BaseSolution};
use crate::harmonicflow::{harmonic_flow_with, FlowOptions, FlowReport, HField, HarmonicContext};
use crate::linalg::{block_diag, sym_fn};
use crate::liealg::{
    derivation_space, find_nilsoliton, ricci_oracle, rescale_to_lambda, scalar_curvature, FinderOptions,
    LieAlgebra, MetricData, NilsolitonCertificate, LAMBDA2_CONVENTION,
};
use crate::spdgeom::{act_with_inverse, sectional_curvature_probe, SpdChart};
use crate::surface::{Representation, TwistedSurfaceMesh};
use crate::{Error, Result};

/// Orthogonality tolerance of the gradient test.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Shape operator `L_X = ½ h⁻¹ dh(X)` along one outgoing half-edge of a vertex, with
/// `dh(X)` taken as `log_{h_v}(g_vj·h_j)/ℓ` (the geodesic difference quotient).
#[derive(Clone, Debug)]
pub struct ShapeOperator {
    pub vertex: usize,
    pub edge: usize,
    pub forward: bool,
    pub l: DMatrix<f64>,
}

pub fn shape_operators(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<Vec<Vec<ShapeOperator>>> {
    if hf.values().len() != mesh.num_vertices() || hf.dim() != mesh.n() {
        return Err(Error::invalid("field does not match the mesh"));
    }
    let halfedges = mesh.halfedges();
    Ok((0..mesh.num_vertices())
        .map(|v| {
            let h = &hf.values()[v];
            let chart = SpdChart::new(h);
            let hinv = sym_fn(h, |x| 1.0 / x);
            halfedges[v]
                .iter()
                .map(|he| {
                    let nb = act_with_inverse(he.transport_inv(mesh), &hf.values()[he.to]);
                    let len = mesh.edges()[he.edge].length;
                    ShapeOperator {
                        vertex: v,
                        edge: he.edge,
                        forward: he.forward,
                        l: &hinv * chart.log(&nb) * (0.5 / len),
                    }
                })
                .collect()
        })
        .collect())
}

/// One row of the per-vertex residual table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRow {
    pub vertex: usize,
    pub cone: bool,
    pub u: f64,
    pub nu: f64,
    pub tension: f64,
    pub vertical: f64,
    pub base_residual: f64,
    pub conformality: f64,
    pub horizontal: f64,
    pub d_m_trace: f64,
    pub scal_submersion: f64,
    pub scal_direct: f64,
}

/// Per-vertex Ricci endomorphism blocks of the assembled metric, in `g_B`- and
/// `h`-frames respectively.
#[derive(Clone, Debug)]
pub struct RicciBlocks {
    pub horizontal: Matrix2<f64>,
    pub vertical: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

/// Block residuals of the expanding-soliton equation with `λ = −½`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolitonReport {
    pub vertical_residual: f64,
    pub horizontal_residual: f64,
    pub mixed_residual: f64,
    pub tension_residual: f64,
    pub conformality_residual: f64,
    pub lambda: f64,
    pub d_m_trace: Vec<f64>,
    pub d_m_trace_gap: f64,
    /// `2K(g_B) − tr_{g_B} h*g_sym + scal(h)` per vertex.
    pub scal_g: Vec<f64>,
    /// `−dim B/2 + scal(h)` per vertex.
    pub scal_g_direct: Vec<f64>,
    pub scal_constancy_gap: f64,
    /// `max |scal_g − scal_g_direct|`.
    pub scal_form_gap: f64,
    /// `−1/tr β²` for non-abelian fibres (logged, not asserted).
    pub scal_beta_closed_form: Option<f64>,
    pub conventions: Vec<String>,
    pub gradient_flag: bool,
    pub rows: Vec<VertexRow>,
    #[serde(skip)]
    pub blocks: Vec<RicciBlocks>,
}

/// Distance of `e` from `Der(n)` in an h-orthonormal frame.
fn derivation_distance(der: &[DMatrix<f64>], metric: &MetricData, e: &DMatrix<f64>) -> f64 {
    let n = e.nrows();
    let p = metric.orthonormal_frame();
    let pinv = sym_fn(metric.matrix(), f64::sqrt);
    let target = &pinv * e * &p;
    if der.is_empty() {
        return target.norm();
    }
    let mut a = DMatrix::zeros(n * n, der.len());
    for (c, d) in der.iter().enumerate() {
        let df = &pinv * d * &p;
        for q in 0..n * n {
            a[(q, c)] = df[(q / n, q % n)];
        }
    }
    let b = DVector::from_fn(n * n, |q, _| target[(q / n, q % n)]);
    let x = a.clone().svd(true, true).solve(&b, 1e-12).expect("svd with u and v");
    (&b - &a * x).norm()
}

fn sorted_spectrum(metric: &MetricData, e: &DMatrix<f64>) -> Vec<f64> {
    crate::liealg::self_adjoint_spectrum(metric, e)
}

/// Evaluates every block of the soliton equation for `(g_B = e^{2u}ǧ, flat transports, h)`.
pub fn soliton_residual(
    mesh: &TwistedSurfaceMesh,
    u: &[f64],
    hf: &HField,
    alg: &LieAlgebra,
    cert: &NilsolitonCertificate,
) -> Result<SolitonReport> {
    let n = alg.dim();
    if mesh.n() != n || hf.dim() != n || cert.metric.nrows() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: mesh {}, field {}, algebra {n}, certificate {}",
            mesh.n(),
            hf.dim(),
            cert.metric.nrows()
        )));
    }
    if u.len() != mesh.num_vertices() {
        return Err(Error::invalid("conformal factor does not match the mesh"));
    }
    if !alg.is_nilpotent() {
        return Err(Error::NotNilpotent);
    }
    let ctx = HarmonicContext::new(mesh)?;
    let tension = ctx.tension_norms(hf)?;
    let q = ctx.pullback_metric(hf)?;
    let conf_t: Vec<f64> = q.iter().map(crate::harmonicflow::trace_free_norm).collect();
    let nu = ctx.nu_field(hf)?;
    let conf_v = ctx.vertex_average(&conf_t);
    // per-vertex pull-back, area averaged
    let nv = mesh.num_vertices();
    let mut qv = vec![Matrix2::zeros(); nv];
    let mut wsum = vec![0.0; nv];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = ctx.geo.triangle_areas[t];
        for &v in tri {
            qv[v] += q[t] * a;
            wsum[v] += a;
        }
    }
    for v in 0..nv {
        qv[v] /= wsum[v];
    }
    let base_res = check_base_equation(mesh, u, &nu)?;
    let k_b = base_curvature(mesh, u)?;

    let der = derivation_space(alg);
    let ref_metric = MetricData::new(cert.metric.clone())?;
    let ref_spec = sorted_spectrum(&ref_metric, &cert.ricci);
    let shapes = shape_operators(mesh, hf)?;
    let ad: Vec<DMatrix<f64>> = (0..n).map(|i| alg.ad_basis(i)).collect();
    let dim_b = 2.0;
    let cones = mesh.cone_vertices();

    let mut rows = Vec::with_capacity(nv);
    let mut blocks = Vec::with_capacity(nv);
    let mut vertical_residual: f64 = 0.0;
    let mut mixed: f64 = 0.0;
    for v in 0..nv {
        let metric = MetricData::new(hf.values()[v].clone())?;
        let ric = ricci_oracle(alg, &metric)?;
        let scal_f = scalar_curvature(alg, &metric)?;
        let e = &ric + DMatrix::identity(n, n) * 0.5;
        let spec = sorted_spectrum(&metric, &ric);
        let spec_gap = spec.iter().zip(&ref_spec).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let vert = derivation_distance(&der, &metric, &e) + spec_gap;
        vertical_residual = vertical_residual.max(vert);
        for s in &shapes[v] {
            for a in &ad {
                mixed = mixed.max((a * &s.l).trace().abs());
            }
        }
        let e2u = (2.0 * u[v]).exp();
        let horizontal = (2.0 * base_res[v].powi(2) + (conf_v[v] / e2u).powi(2)).sqrt();
        let scal_sub = 2.0 * k_b[v] - qv[v].trace() / e2u + scal_f;
        let scal_dir = -dim_b / 2.0 + scal_f;
        rows.push(VertexRow {
            vertex: v,
            cone: cones.contains(&v),
            u: u[v],
            nu: nu[v],
            tension: tension[v],
            vertical: vert,
            base_residual: base_res[v],
            conformality: conf_v[v],
            horizontal,
            d_m_trace: -e.trace(),
            scal_submersion: scal_sub,
            scal_direct: scal_dir,
        });
        blocks.push(RicciBlocks {
            horizontal: Matrix2::identity() * k_b[v] - qv[v] / e2u,
            vertical: ric,
            metric: hf.values()[v].clone(),
        });
    }
    let spread = |xs: &[f64]| {
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        hi - lo
    };
    let regular = |r: &&VertexRow| !r.cone;
    let d_m_trace: Vec<f64> = rows.iter().map(|r| r.d_m_trace).collect();
    let scal_g: Vec<f64> = rows.iter().map(|r| r.scal_submersion).collect();
    let scal_g_direct: Vec<f64> = rows.iter().map(|r| r.scal_direct).collect();
    let tr_beta2 = (&cert.beta * &cert.beta).trace();
    let gradient_flag = alg.is_abelian()
        && mesh.edges().iter().all(|e| is_orthogonal(&e.transport));
    Ok(SolitonReport {
        vertical_residual,
        horizontal_residual: rows.iter().filter(regular).map(|r| r.horizontal).fold(0.0, f64::max),
        mixed_residual: mixed,
        tension_residual: tension.iter().cloned().fold(0.0, f64::max),
        conformality_residual: conf_t.iter().cloned().fold(0.0, f64::max),
        lambda: -0.5,
        d_m_trace_gap: spread(&d_m_trace),
        scal_constancy_gap: spread(&scal_g),
        scal_form_gap: scal_g.iter().zip(&scal_g_direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        scal_beta_closed_form: if alg.is_abelian() || tr_beta2 == 0.0 { None } else { Some(-1.0 / tr_beta2) },
        d_m_trace,
        scal_g,
        scal_g_direct,
        conventions: vec![
            format!("Lambda^2 inner product: {LAMBDA2_CONVENTION}"),
            "g_sym(k,k) = tr(h^-1 k h^-1 k); pull-back action q.h = q^-T h q^-1".into(),
            "D_M = -(Ric^E + Id/2) on fibres, 0 on the base".into(),
            "horizontal residual = |(K + 1/2 - nu e^-2u) g_B - tracefree(h*g_sym)|_{g_B}, cone vertices excluded".into(),
            "scal_g = 2K(g_B) - tr_{g_B} h*g_sym + scal(h)".into(),
        ],
        gradient_flag,
        rows,
        blocks,
    })
}

fn is_orthogonal(g: &DMatrix<f64>) -> bool {
    (g.transpose() * g - DMatrix::identity(g.nrows(), g.ncols())).amax() <= ORTHOGONALITY_TOL
}

/// Outcome of [`is_gradient`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVerdict {
    pub gradient: bool,
    /// Why not: the offending generator, or the non-abelian algebra.
    pub witness: Option<String>,
}

/// Gradient solitons from this construction are exactly those with abelian fibres and
/// orthogonal monodromy.
pub fn is_gradient(alg: &LieAlgebra, rep: &Representation) -> GradientVerdict {
    if !alg.is_abelian() {
        return GradientVerdict { gradient: false, witness: Some("algebra is not abelian".into()) };
    }
    for (name, m) in rep.names().iter().zip(rep.matrices()) {
        if !is_orthogonal(m) {
            return GradientVerdict { gradient: false, witness: Some(name.clone()) };
        }
    }
    GradientVerdict { gradient: true, witness: None }
}

/// Data of the `ℝ × M` Einstein extension check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub alpha: f64,
    /// `tr((α D_M)²)`.
    pub trace_square: f64,
    /// `|tr D_M² + ½ tr D_M|`.
    pub trace_identity_gap: f64,
    pub einstein_constant: f64,
    /// `max_v ‖Ric^E_g − ((tr D) D − tr(D²) Id)‖` with the assembled block Ricci.
    pub identity_residual: f64,
    /// Spread of the sorted `D_M` spectra across vertices.
    pub eigenvalue_spread: f64,
    pub scal_constancy_gap: f64,
    /// `‖Ric^E + ½Id‖` of the fibre extension `ℝ ⋉ n` (oracle), when `n` is not abelian.
    pub fiber_oracle_gap: Option<f64>,
}

pub fn einstein_extension_check(
    report: &SolitonReport,
    alg: &LieAlgebra,
    cert: &NilsolitonCertificate,
) -> Result<ExtensionReport> {
    let n = alg.dim();
    if report.blocks.is_empty() {
        return Err(Error::invalid("report carries no Ricci blocks"));
    }
    let mut alpha = 0.0;
    let mut trace_square = 0.0;
    let mut gap: f64 = 0.0;
    let mut identity_residual: f64 = 0.0;
    let mut spectra: Vec<Vec<f64>> = Vec::new();
    for b in &report.blocks {
        let d_v = -(&b.vertical + DMatrix::identity(n, n) * 0.5);
        let d_m = block_diag(&DMatrix::zeros(2, 2), &d_v);
        let tr2 = (&d_m * &d_m).trace();
        let tr = d_m.trace();
        gap = gap.max((tr2 + 0.5 * tr).abs());
        let a = (2.0 * tr2).powf(-0.5);
        let d = &d_m * a;
        let rhs = &d * d.trace() - DMatrix::identity(n + 2, n + 2) * (&d * &d).trace();
        let hor = DMatrix::from_iterator(2, 2, b.horizontal.iter().cloned());
        let ric = block_diag(&hor, &b.vertical);
        identity_residual = identity_residual.max((ric - rhs).norm());
        let metric = MetricData::new(b.metric.clone())?;
        spectra.push(sorted_spectrum(&metric, &d_v));
        alpha = a;
        trace_square = (&d * &d).trace();
    }
    if gap > 1e-9 {
        return Err(Error::NotSoliton { residual: report.vertical_residual, trace_gap: gap, norm_gap: f64::NAN });
    }
    let eigenvalue_spread = spectra
        .iter()
        .map(|s| s.iter().zip(&spectra[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let fiber_oracle_gap = if alg.is_abelian() {
        None
    } else {
        Some(crate::liealg::einstein_extension(alg, cert)?.ricci_gap)
    };
    Ok(ExtensionReport {
        alpha,
        trace_square,
        trace_identity_gap: gap,
        einstein_constant: -trace_square,
        identity_residual,
        eigenvalue_spread,
        scal_constancy_gap: report.scal_constancy_gap,
        fiber_oracle_gap,
    })
}

/// The 5-dimensional data obtained from 4-dimensional data by co-restriction to the
/// Heisenberg automorphisms `A ↦ blockdiag(A, det A)`.
#[derive(Clone, Debug)]
pub struct HeisenbergLift {
    pub mesh: TwistedSurfaceMesh,
    pub field: HField,
    pub c1: f64,
    pub c2: f64,
    pub algebra: LieAlgebra,
    pub certificate: NilsolitonCertificate,
}

/// Reference `λ = −½` heis3 nilsoliton `blockdiag(c₁Id₂, c₂)` from the finder.
pub fn heisenberg_reference() -> Result<(LieAlgebra, NilsolitonCertificate, f64, f64)> {
    let alg = LieAlgebra::heisenberg3(1.0);
    let found = find_nilsoliton(&alg, &MetricData::identity(3), &FinderOptions::default())?;
    let cert = rescale_to_lambda(&alg, &found, -0.5)?;
    let h = &cert.metric;
    let (c1, c2) = (h[(0, 0)], h[(2, 2)]);
    let expected = block_diag(&(DMatrix::identity(2, 2) * c1), &DMatrix::from_element(1, 1, c2));
    if (h - &expected).amax() > 1e-8 * c1.max(c2) {
        return Err(Error::invalid("reference nilsoliton is not of the form blockdiag(c1 Id, c2)"));
    }
    Ok((alg, cert, c1, c2))
}

pub fn lift_to_heisenberg(mesh: &TwistedSurfaceMesh, hf: &HField) -> Result<HeisenbergLift> {
    if mesh.n() != 2 || hf.dim() != 2 {
        return Err(Error::invalid("Heisenberg lift needs 2-dimensional fibres"));
    }
    for (k, e) in mesh.edges().iter().enumerate() {
        let d = e.transport.determinant();
        if (d - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("edge {k} transport has det {d}; SL2 transports required")));
        }
    }
    if hf.max_det_defect() > 1e-10 {
        return Err(Error::invalid("Heisenberg lift needs a det-1 field"));
    }
    let (algebra, certificate, c1, c2) = heisenberg_reference()?;
    let embed = |a: &DMatrix<f64>| block_diag(a, &DMatrix::from_element(1, 1, a.determinant()));
    let mesh5 = mesh.map_transports(embed)?;
    let values = hf
        .values()
        .iter()
        .map(|h| block_diag(&(h * c1), &DMatrix::from_element(1, 1, c2)))
        .collect();
    let field = HField::new(&mesh5, values, false)?;
    Ok(HeisenbergLift { mesh: mesh5, field, c1, c2, algebra, certificate })
}

/// Homothety constants of the uniformizing gold case, derived from the probed sectional
/// curvature `κ_sym` of the det-1 slice: `K = μ − ½` and `K = κ_sym·μ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldConstants {
    pub kappa_sym: f64,
    pub mu: f64,
    pub k: f64,
    /// Predicted constant `e^{2u}` over a curvature −1 background.
    pub e2u: f64,
    /// Predicted constant `ν = μ e^{2u}`.
    pub nu: f64,
}

impl GoldConstants {
    pub fn from_probe() -> Self {
        let id = DMatrix::identity(2, 2);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let kappa = sectional_curvature_probe(&id, &x, &y, 0.5);
        let mu = 1.0 / (2.0 * (1.0 - kappa));
        let k = kappa * mu;
        let e2u = -1.0 / k;
        GoldConstants { kappa_sym: kappa, mu, k, e2u, nu: mu * e2u }
    }
}

/// Initial field of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldInit {
    Identity,
    Random { seed: u64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub flow: FlowOptions,
    pub base: BaseOptions,
    pub init: FieldInit,
    pub unit_det: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            flow: FlowOptions::default(),
            base: BaseOptions::default(),
            init: FieldInit::Identity,
            unit_det: true,
        }
    }
}

/// Everything one outer pass produces.
#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub field: HField,
    pub flow: FlowReport,
    pub nu: Vec<f64>,
    pub base: BaseSolution,
    pub report: SolitonReport,
}

/// One outer pass: flow `h` → extract `ν` → solve `u` → report.
pub fn run_pipeline(
    mesh: &TwistedSurfaceMesh,
    alg: &LieAlgebra,
    cert: &NilsolitonCertificate,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    let ctx = HarmonicContext::new(mesh)?;
    let init = match opts.init {
        FieldInit::Identity => HField::identity(mesh, opts.unit_det),
        FieldInit::Random { seed, scale } => HField::random(mesh, seed, scale, opts.unit_det),
    };
    let (field, flow) = harmonic_flow_with(&ctx, &init, &opts.flow)?;
    let nu: Vec<f64> = ctx.nu_field(&field)?.iter().map(|x| x.max(0.0)).collect();
    let base = solve_base(mesh, &nu, &opts.base)?;
    let report = soliton_residual(mesh, base.u.u.as_slice(), &field, alg, cert)?;
    Ok(PipelineResult { field, flow, nu, base, report })
}

/// Agreement of a uniformizing pipeline run with the predicted constants, cone vertices
/// excluded.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoldCheck {
    pub constants: GoldConstants,
    pub max_u_error: f64,
    pub max_nu_error: f64,
    /// `max_v d(h_v, developing map)`, when the mesh carries one.
    pub max_developing_distance: Option<f64>,
}

pub fn gold_check(mesh: &TwistedSurfaceMesh, result: &PipelineResult) -> GoldCheck {
    let c = GoldConstants::from_probe();
    let u_exp = 0.5 * c.e2u.ln();
    let regular: Vec<usize> = (0..mesh.num_vertices()).filter(|v| !mesh.cone_vertices().contains(v)).collect();
    let max_u_error = regular.iter().map(|&v| (result.base.u.u[v] - u_exp).abs()).fold(0.0, f64::max);
    let max_nu_error = regular.iter().map(|&v| (result.nu[v] - c.nu).abs()).fold(0.0, f64::max);
    let max_developing_distance = mesh.developing_map().map(|dev| {
        dev.iter()
            .zip(result.field.values())
            .map(|(d, h)| SpdChart::new(d).dist(h))
            .fold(0.0, f64::max)
    });
    GoldCheck { constants: c, max_u_error, max_nu_error, max_developing_distance }
}
