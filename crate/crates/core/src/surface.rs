//! Discrete closed surfaces with a flat twisted connection.
//!
//! A mesh is intrinsic: triangles, edge lengths and per-edge transports, nothing else.
//! Edges are indexed separately from their endpoints, so two vertices may be joined by
//! several edges (the coarse octagon fan needs this).
//!
//! Transport convention: edge `e = (i, j)` stores `g_ij`. The value of a twisted section
//! at `j`, seen from `i`, is `g_ij · h_j` (pull-back action). Also `g_ji = g_ij⁻¹`. Along
//! a path `v0 → v1 → … → vk` the holonomy is `g_{v0 v1} g_{v1 v2} ⋯ g_{v(k-1) vk}`: it
//! multiplies right-to-left as the path is walked backwards from `vk`.
//!
//! Edges built from a fundamental domain also carry a word in the surface-group
//! generators. `attach_representation` evaluates these words.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest admissible triangle angle.
pub const MIN_ANGLE: f64 = 1e-8;
/// Relator tolerance of [`attach_representation`].
pub const RELATOR_TOL: f64 = 1e-10;
/// Per-triangle flatness tolerance, relative to the size of the transports involved.
pub const FLATNESS_TOL: f64 = 1e-12;

/// A reduced word in the free group: `(generator, ±1)` letters, applied left to right.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word(pub Vec<(usize, i8)>);

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn generator(g: usize) -> Self {
        Word(vec![(g, 1)])
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Word(self.0.iter().rev().map(|&(g, s)| (g, -s)).collect())
    }

    /// Free reduction of `self · other`.
    pub fn mul(&self, other: &Word) -> Self {
        let mut out = self.0.clone();
        for &(g, s) in &other.0 {
            match out.last() {
                Some(&(h, t)) if h == g && t == -s => {
                    out.pop();
                }
                _ => out.push((g, s)),
            }
        }
        Word(out)
    }

    pub fn pow(g: usize, k: i64) -> Self {
        let s = if k >= 0 { 1 } else { -1 };
        Word(vec![(g, s); k.unsigned_abs() as usize])
    }
}

/// Images of the surface-group generators.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    names: Vec<String>,
    matrices: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
}

impl Representation {
    /// Rejects non-square, mismatched or singular generator images.
    pub fn new(names: Vec<String>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if names.len() != matrices.len() || names.is_empty() {
            return Err(Error::invalid("representation needs one matrix per generator"));
        }
        let n = matrices[0].nrows();
        let mut inverses = Vec::with_capacity(matrices.len());
        for (name, m) in names.iter().zip(&matrices) {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid(format!("generator {name} is not {n}x{n}")));
            }
            let inv = m
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular(format!("generator {name} is not invertible")))?;
            inverses.push(inv);
        }
        Ok(Representation { names, matrices, inverses })
    }

    pub fn trivial(names: &[String], n: usize) -> Self {
        let id = DMatrix::identity(n, n);
        Representation {
            names: names.to_vec(),
            matrices: vec![id.clone(); names.len()],
            inverses: vec![id; names.len()],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn eval(&self, w: &Word) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim(), self.dim());
        for &(g, s) in &w.0 {
            m = if s > 0 { m * &self.matrices[g] } else { m * &self.inverses[g] };
        }
        m
    }

    /// `‖ρ(relator) − Id‖_F`.
    pub fn relator_residual(&self, relator: &Word) -> f64 {
        (self.eval(relator) - DMatrix::identity(self.dim(), self.dim())).norm()
    }

    /// Conjugates every generator: `ρ'(γ) = q ρ(γ) q⁻¹`.
    pub fn conjugated(&self, q: &DMatrix<f64>) -> Result<Self> {
        let qi = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("conjugating matrix is singular".into()))?;
        let m = self.matrices.iter().map(|g| q * g * &qi).collect();
        Representation::new(self.names.clone(), m)
    }
}

/// One (unoriented) mesh edge with its stored orientation `i → j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshEdge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
    pub word: Option<Word>,
    /// `g_ij`.
    pub transport: DMatrix<f64>,
    /// `g_ji = g_ij⁻¹`.
    pub transport_inv: DMatrix<f64>,
}

/// Reference from a triangle side to an edge; `forward` means the side runs `i → j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SideRef {
    pub edge: usize,
    pub forward: bool,
}

/// Conformal factor `u` of `g_B = e^{2u} ǧ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalFactor {
    pub u: DVector<f64>,
}

impl ConformalFactor {
    pub fn max_abs(&self) -> f64 {
        self.u.amax()
    }
}

/// Triangulated closed surface with intrinsic lengths and a flat connection.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistedSurfaceMesh {
    n: usize,
    chi: i64,
    num_vertices: usize,
    triangles: Vec<[usize; 3]>,
    /// Side `k` of a triangle joins corner `k` to corner `k + 1`.
    sides: Vec<[SideRef; 3]>,
    edges: Vec<MeshEdge>,
    background_curvature: f64,
    generators: Vec<String>,
    relator: Option<Word>,
    cone_vertices: Vec<usize>,
    developing: Option<Vec<DMatrix<f64>>>,
}

/// Summary of [`validate_mesh`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub vertices: usize,
    pub edges: usize,
    pub triangles: usize,
    pub chi: i64,
    pub min_angle: f64,
    pub max_flatness_defect: f64,
    pub max_det_defect: f64,
    pub defect_sum: f64,
    pub total_area: f64,
}

impl TwistedSurfaceMesh {
    /// Assembles a mesh from raw parts and validates it.
    ///
    /// `sides` may be omitted when every vertex pair is joined by at most one edge; it
    /// is then recovered from the edge endpoints.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: usize,
        chi: i64,
        num_vertices: usize,
        triangles: Vec<[usize; 3]>,
        edges: Vec<MeshEdge>,
        sides: Option<Vec<[SideRef; 3]>>,
        background_curvature: f64,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= num_vertices) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
        }
        for (e, edge) in edges.iter().enumerate() {
            if edge.i >= num_vertices || edge.j >= num_vertices {
                return Err(Error::invalid(format!("edge {e} references a missing vertex")));
            }
            if edge.transport.nrows() != n || edge.transport.ncols() != n {
                return Err(Error::invalid(format!("edge {e} transport is not {n}x{n}")));
            }
        }
        let sides = match sides {
            Some(s) => {
                if s.len() != triangles.len() {
                    return Err(Error::invalid("one side triple per triangle required"));
                }
                for (t, tri) in s.iter().enumerate() {
                    for (k, r) in tri.iter().enumerate() {
                        let Some(edge) = edges.get(r.edge) else {
                            return Err(Error::invalid(format!("triangle {t} references a missing edge")));
                        };
                        let (a, b) = (triangles[t][k], triangles[t][(k + 1) % 3]);
                        let ok = if r.forward { edge.i == a && edge.j == b } else { edge.i == b && edge.j == a };
                        if !ok {
                            return Err(Error::invalid(format!("triangle {t} side {k} does not match its edge")));
                        }
                    }
                }
                s
            }
            None => infer_sides(&triangles, &edges)?,
        };
        let mesh = TwistedSurfaceMesh {
            n,
            chi,
            num_vertices,
            triangles,
            sides,
            edges,
            background_curvature,
            generators: Vec::new(),
            relator: None,
            cone_vertices: Vec::new(),
            developing: None,
        };
        validate_mesh(&mesh)?;
        Ok(mesh)
    }

    pub fn with_group_data(mut self, generators: Vec<String>, relator: Option<Word>) -> Self {
        self.generators = generators;
        self.relator = relator;
        self
    }

    pub fn with_cone_vertices(mut self, cones: Vec<usize>) -> Self {
        self.cone_vertices = cones;
        self
    }

    /// Attaches per-vertex positions of an equivariant developing map; they must be SPD
    /// and one per vertex.
    pub fn with_developing_map(mut self, positions: Vec<DMatrix<f64>>) -> Result<Self> {
        if positions.len() != self.num_vertices {
            return Err(Error::invalid("one developing position per vertex required"));
        }
        for p in &positions {
            crate::spdgeom::check_spd(p)?;
        }
        self.developing = Some(positions);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn chi(&self) -> i64 {
        self.chi
    }
    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn sides(&self) -> &[[SideRef; 3]] {
        &self.sides
    }
    pub fn edges(&self) -> &[MeshEdge] {
        &self.edges
    }
    pub fn background_curvature(&self) -> f64 {
        self.background_curvature
    }
    pub fn generators(&self) -> &[String] {
        &self.generators
    }
    pub fn relator(&self) -> Option<&Word> {
        self.relator.as_ref()
    }
    /// Vertices where the construction is not locally regular (fundamental-domain
    /// vertices); excluded from pointwise error norms.
    pub fn cone_vertices(&self) -> &[usize] {
        &self.cone_vertices
    }
    /// Hyperboloid position of each vertex inside the fundamental domain (built-in
    /// genus-2 meshes only).
    pub fn developing_map(&self) -> Option<&[DMatrix<f64>]> {
        self.developing.as_deref()
    }

    pub fn is_untwisted(&self) -> bool {
        let id = DMatrix::identity(self.n, self.n);
        self.edges.iter().all(|e| (&e.transport - &id).amax() == 0.0)
    }

    /// Transport across side `k` of triangle `t`, oriented from corner `k` to `k + 1`.
    pub fn side_transport(&self, t: usize, k: usize) -> &DMatrix<f64> {
        let r = self.sides[t][k];
        let e = &self.edges[r.edge];
        if r.forward {
            &e.transport
        } else {
            &e.transport_inv
        }
    }

    pub fn side_length(&self, t: usize, k: usize) -> f64 {
        self.edges[self.sides[t][k].edge].length
    }

    /// Transports from corner 0 of triangle `t` to each of its corners.
    pub fn corner_transports(&self, t: usize) -> [DMatrix<f64>; 3] {
        let id = DMatrix::identity(self.n, self.n);
        let g1 = self.side_transport(t, 0).clone();
        let g2 = &g1 * self.side_transport(t, 1);
        [id, g1, g2]
    }

    /// Outgoing half-edges per vertex: `(neighbour, edge, g_{v,neighbour})` for every
    /// edge end at `v` (a loop contributes twice).
    pub fn halfedges(&self) -> Vec<Vec<HalfEdge>> {
        let mut out: Vec<Vec<HalfEdge>> = vec![Vec::new(); self.num_vertices];
        for (e, edge) in self.edges.iter().enumerate() {
            out[edge.i].push(HalfEdge { to: edge.j, edge: e, forward: true });
            out[edge.j].push(HalfEdge { to: edge.i, edge: e, forward: false });
        }
        out
    }

    /// Applies a group homomorphism `f` to every transport; the fibre dimension becomes
    /// that of the image.
    pub fn map_transports(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        let mut out = self.clone();
        for e in &mut out.edges {
            e.transport = f(&e.transport);
            e.transport_inv = f(&e.transport_inv);
        }
        out.n = out.edges.first().map(|e| e.transport.nrows()).unwrap_or(self.n);
        validate_mesh(&out)?;
        Ok(out)
    }

    /// Replaces every transport by `q g q⁻¹`.
    pub fn conjugated(&self, q: &DMatrix<f64>) -> Result<Self> {
        let qi = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("conjugating matrix is singular".into()))?;
        let mut out = self.clone();
        for e in &mut out.edges {
            e.transport = q * &e.transport * &qi;
            e.transport_inv = q * &e.transport_inv * &qi;
        }
        Ok(out)
    }
}

/// Outgoing half-edge at a vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HalfEdge {
    pub to: usize,
    pub edge: usize,
    pub forward: bool,
}

impl HalfEdge {
    /// `g_{v,to}`.
    pub fn transport<'a>(&self, mesh: &'a TwistedSurfaceMesh) -> &'a DMatrix<f64> {
        let e = &mesh.edges[self.edge];
        if self.forward {
            &e.transport
        } else {
            &e.transport_inv
        }
    }

    /// `g_{v,to}⁻¹`, the matrix used by the pull-back action.
    pub fn transport_inv<'a>(&self, mesh: &'a TwistedSurfaceMesh) -> &'a DMatrix<f64> {
        let e = &mesh.edges[self.edge];
        if self.forward {
            &e.transport_inv
        } else {
            &e.transport
        }
    }
}

fn infer_sides(triangles: &[[usize; 3]], edges: &[MeshEdge]) -> Result<Vec<[SideRef; 3]>> {
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for (e, edge) in edges.iter().enumerate() {
        let key = (edge.i.min(edge.j), edge.i.max(edge.j));
        if lookup.insert(key, e).is_some() {
            return Err(Error::invalid(format!(
                "vertices {} and {} share several edges; triangle-edge incidence must be given",
                key.0, key.1
            )));
        }
    }
    triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let mut s = [SideRef { edge: 0, forward: true }; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let e = *lookup
                    .get(&(a.min(b), a.max(b)))
                    .ok_or_else(|| Error::invalid(format!("triangle {t} side {k} has no edge")))?;
                s[k] = SideRef { edge: e, forward: edges[e].i == a };
            }
            Ok(s)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// validation and geometry

/// Checks lengths, Euler characteristic, edge incidences, transport determinants and
/// flatness of every triangle.
pub fn validate_mesh(mesh: &TwistedSurfaceMesh) -> Result<MeshReport> {
    let v = mesh.num_vertices as i64;
    let e = mesh.edges.len() as i64;
    let f = mesh.triangles.len() as i64;
    if v - e + f != mesh.chi {
        return Err(Error::invalid(format!("V - E + F = {} but chi = {}", v - e + f, mesh.chi)));
    }
    let mut uses = vec![(0usize, 0usize); mesh.edges.len()];
    for s in &mesh.sides {
        for r in s {
            if r.forward {
                uses[r.edge].0 += 1;
            } else {
                uses[r.edge].1 += 1;
            }
        }
    }
    for (k, &(fw, bw)) in uses.iter().enumerate() {
        let edge = &mesh.edges[k];
        let ok = if edge.i == edge.j { fw + bw == 2 } else { fw == 1 && bw == 1 };
        if !ok {
            return Err(Error::invalid(format!(
                "edge {k} is not shared by two consistently oriented triangles"
            )));
        }
        if !(edge.length > 0.0 && edge.length.is_finite()) {
            return Err(Error::invalid(format!("edge {k} has non-positive length")));
        }
    }
    let mut max_det: f64 = 0.0;
    for (k, edge) in mesh.edges.iter().enumerate() {
        let d = edge.transport.determinant();
        max_det = max_det.max((d.abs() - 1.0).abs());
        if (d.abs() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("edge {k} transport has det {d}, not ±1")));
        }
    }
    let mut max_flat: f64 = 0.0;
    let id = DMatrix::identity(mesh.n, mesh.n);
    for t in 0..mesh.triangles.len() {
        let g0 = mesh.side_transport(t, 0);
        let g1 = mesh.side_transport(t, 1);
        let g2 = mesh.side_transport(t, 2);
        let scale = (g0.norm() * g1.norm() * g2.norm()).max(1.0);
        let defect = (g0 * g1 * g2 - &id).norm();
        max_flat = max_flat.max(defect);
        if defect > FLATNESS_TOL * scale {
            return Err(Error::invalid(format!(
                "transport around triangle {t} is not flat (defect {defect:.3e})"
            )));
        }
    }
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    Ok(MeshReport {
        vertices: mesh.num_vertices,
        edges: mesh.edges.len(),
        triangles: mesh.triangles.len(),
        chi: mesh.chi,
        min_angle: geo.angles.iter().flatten().cloned().fold(f64::INFINITY, f64::min),
        max_flatness_defect: max_flat,
        max_det_defect: max_det,
        defect_sum: geo.defects.iter().sum(),
        total_area: geo.triangle_areas.iter().sum(),
    })
}

/// How triangle area is split among its corners.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AreaKind {
    #[default]
    Barycentric,
    MixedVoronoi,
}

/// Intrinsic per-triangle and per-vertex quantities derived from edge lengths.
#[derive(Clone, Debug)]
pub struct MeshGeometry {
    /// Euclidean corner angles.
    pub angles: Vec<[f64; 3]>,
    /// Cotangents of the corner angles.
    pub cot: Vec<[f64; 3]>,
    /// Triangle areas in the background model (hyperbolic when the background
    /// curvature is negative, Euclidean when it is zero).
    pub triangle_areas: Vec<f64>,
    pub vertex_areas: Vec<f64>,
    /// `½(cot α + cot β)` per edge.
    pub edge_weights: Vec<f64>,
    /// `2π − Σ angles` per vertex.
    pub defects: Vec<f64>,
    /// `defect / area` per vertex.
    pub curvature: Vec<f64>,
    /// Planar corner coordinates of each triangle (corner 0 at the origin, corner 1 on
    /// the positive x-axis).
    pub corner_coords: Vec<[[f64; 2]; 3]>,
}

impl MeshGeometry {
    pub fn new(mesh: &TwistedSurfaceMesh, kind: AreaKind) -> Result<Self> {
        let nt = mesh.triangles.len();
        let mut angles = Vec::with_capacity(nt);
        let mut cot = Vec::with_capacity(nt);
        let mut triangle_areas = Vec::with_capacity(nt);
        let mut corner_coords = Vec::with_capacity(nt);
        let mut vertex_areas = vec![0.0; mesh.num_vertices];
        let mut edge_weights = vec![0.0; mesh.edges.len()];
        let mut angle_sum = vec![0.0; mesh.num_vertices];
        let kappa = mesh.background_curvature;
        if kappa > 0.0 {
            return Err(Error::invalid("positive background curvature is not supported"));
        }
        for t in 0..nt {
            // l[k] is the side opposite corner k
            let l = [mesh.side_length(t, 1), mesh.side_length(t, 2), mesh.side_length(t, 0)];
            for k in 0..3 {
                if l[k] >= l[(k + 1) % 3] + l[(k + 2) % 3] {
                    return Err(Error::DegenerateTriangle {
                        triangle: t,
                        reason: "triangle inequality fails".into(),
                    });
                }
            }
            let area_e = heron(l[0], l[1], l[2]);
            let mut ang = [0.0; 3];
            let mut ct = [0.0; 3];
            for k in 0..3 {
                let (a, b, c) = (l[k], l[(k + 1) % 3], l[(k + 2) % 3]);
                let cos = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0);
                ang[k] = cos.acos();
                ct[k] = (b * b + c * c - a * a) / (4.0 * area_e);
                if ang[k] < MIN_ANGLE {
                    return Err(Error::DegenerateTriangle {
                        triangle: t,
                        reason: format!("angle {:.3e} below {MIN_ANGLE:e}", ang[k]),
                    });
                }
            }
            let area = if kappa < 0.0 { hyperbolic_area(l, -kappa) } else { area_e };
            let tri = mesh.triangles[t];
            for k in 0..3 {
                angle_sum[tri[k]] += ang[k];
                // side (k+1, k+2) is opposite corner k
                edge_weights[mesh.sides[t][(k + 1) % 3].edge] += 0.5 * ct[k];
            }
            let parts = match kind {
                AreaKind::Barycentric => [area / 3.0; 3],
                AreaKind::MixedVoronoi => {
                    let p = mixed_voronoi(l, ang, ct, area_e);
                    [p[0] * area / area_e, p[1] * area / area_e, p[2] * area / area_e]
                }
            };
            for k in 0..3 {
                vertex_areas[tri[k]] += parts[k];
            }
            // corner 0 at origin, corner 1 along x; l[2] = |01|, l[1] = |02|
            let c2 = [l[1] * ang[0].cos(), l[1] * ang[0].sin()];
            corner_coords.push([[0.0, 0.0], [l[2], 0.0], c2]);
            angles.push(ang);
            cot.push(ct);
            triangle_areas.push(area);
        }
        if let Some(v) = vertex_areas.iter().position(|&a| a <= 0.0) {
            return Err(Error::invalid(format!("vertex {v} has no incident area")));
        }
        let defects: Vec<f64> = angle_sum.iter().map(|s| 2.0 * PI - s).collect();
        let curvature = defects.iter().zip(&vertex_areas).map(|(d, a)| d / a).collect();
        Ok(MeshGeometry {
            angles,
            cot,
            triangle_areas,
            vertex_areas,
            edge_weights,
            defects,
            curvature,
            corner_coords,
        })
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas.iter().sum()
    }

    /// Stiffness matrix `W` with `(Wf)_v = Σ_e w_e (f_v − f_j)`; `Δ = −A⁻¹W`.
    pub fn stiffness(&self, mesh: &TwistedSurfaceMesh) -> CsrMatrix<f64> {
        let nv = mesh.num_vertices;
        let mut coo = CooMatrix::new(nv, nv);
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.i == edge.j {
                continue;
            }
            let w = self.edge_weights[e];
            coo.push(edge.i, edge.i, w);
            coo.push(edge.j, edge.j, w);
            coo.push(edge.i, edge.j, -w);
            coo.push(edge.j, edge.i, -w);
        }
        CsrMatrix::from(&coo)
    }

    /// Cotangent Laplacian `(Δf)_v = (1/A_v) Σ_e w_e (f_j − f_v)`.
    pub fn laplacian_apply(&self, mesh: &TwistedSurfaceMesh, f: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(mesh.num_vertices);
        for (e, edge) in mesh.edges.iter().enumerate() {
            let d = self.edge_weights[e] * (f[edge.j] - f[edge.i]);
            out[edge.i] += d;
            out[edge.j] -= d;
        }
        for v in 0..mesh.num_vertices {
            out[v] /= self.vertex_areas[v];
        }
        out
    }
}

fn heron(a: f64, b: f64, c: f64) -> f64 {
    // numerically stable ordering
    let mut s = [a, b, c];
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let (a, b, c) = (s[0], s[1], s[2]);
    0.25 * ((a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))).max(0.0).sqrt()
}

/// Area of the geodesic triangle with side lengths `l` in curvature `−k`.
fn hyperbolic_area(l: [f64; 3], k: f64) -> f64 {
    let s = k.sqrt();
    let (ch, sh): (Vec<f64>, Vec<f64>) = l.iter().map(|x| ((s * x).cosh(), (s * x).sinh())).unzip();
    let mut sum = 0.0;
    for k in 0..3 {
        let (a, b, c) = (k, (k + 1) % 3, (k + 2) % 3);
        let cos = ((ch[b] * ch[c] - ch[a]) / (sh[b] * sh[c])).clamp(-1.0, 1.0);
        sum += cos.acos();
    }
    (PI - sum) / k
}

fn mixed_voronoi(l: [f64; 3], ang: [f64; 3], ct: [f64; 3], area: f64) -> [f64; 3] {
    if let Some(o) = (0..3).find(|&k| ang[k] > 0.5 * PI) {
        let mut p = [0.25 * area; 3];
        p[o] = 0.5 * area;
        return p;
    }
    let mut p = [0.0; 3];
    for k in 0..3 {
        // sides adjacent to corner k are opposite corners k+1, k+2
        let (b, c) = ((k + 1) % 3, (k + 2) % 3);
        p[k] = 0.125 * (l[b] * l[b] * ct[b] + l[c] * l[c] * ct[c]);
    }
    p
}

pub fn vertex_areas(mesh: &TwistedSurfaceMesh) -> Result<Vec<f64>> {
    Ok(MeshGeometry::new(mesh, AreaKind::Barycentric)?.vertex_areas)
}

pub fn gauss_curvature(mesh: &TwistedSurfaceMesh) -> Result<Vec<f64>> {
    Ok(MeshGeometry::new(mesh, AreaKind::Barycentric)?.curvature)
}

/// Cotangent Laplacian as a sparse operator together with the vertex areas.
pub fn laplacian(mesh: &TwistedSurfaceMesh) -> Result<(CsrMatrix<f64>, Vec<f64>)> {
    let geo = MeshGeometry::new(mesh, AreaKind::Barycentric)?;
    Ok((geo.stiffness(mesh), geo.vertex_areas))
}

/// Holonomy along a vertex path given as a sequence of edges.
pub fn path_holonomy(mesh: &TwistedSurfaceMesh, start: usize, path: &[usize]) -> Result<DMatrix<f64>> {
    let mut at = start;
    let mut g = DMatrix::identity(mesh.n, mesh.n);
    for &e in path {
        let edge = mesh
            .edges
            .get(e)
            .ok_or_else(|| Error::invalid(format!("edge {e} does not exist")))?;
        if edge.i == at {
            g *= &edge.transport;
            at = edge.j;
        } else if edge.j == at {
            g *= &edge.transport_inv;
            at = edge.i;
        } else {
            return Err(Error::invalid(format!("edge {e} does not continue the path at {at}")));
        }
    }
    Ok(g)
}

/// Evaluates the edge words under `rep` and installs the resulting transports.
pub fn attach_representation(mesh: &TwistedSurfaceMesh, rep: &Representation) -> Result<TwistedSurfaceMesh> {
    if rep.names() != mesh.generators() {
        return Err(Error::invalid(format!(
            "representation generators {:?} do not match mesh generators {:?}",
            rep.names(),
            mesh.generators()
        )));
    }
    for (name, m) in rep.names().iter().zip(rep.matrices()) {
        let d = m.determinant();
        if (d.abs() - 1.0).abs() > RELATOR_TOL {
            return Err(Error::invalid(format!("generator {name} has det {d}, not ±1")));
        }
    }
    let relator = mesh
        .relator
        .as_ref()
        .ok_or_else(|| Error::invalid("mesh carries no surface relator"))?;
    let residual = rep.relator_residual(relator);
    if residual > RELATOR_TOL {
        return Err(Error::RelatorMismatch { residual });
    }
    let mut out = mesh.clone();
    out.n = rep.dim();
    for (k, e) in out.edges.iter_mut().enumerate() {
        let w = e
            .word
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("edge {k} carries no generator word")))?;
        e.transport = rep.eval(w);
        e.transport_inv = rep.eval(&w.inverse());
    }
    validate_mesh(&out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// flat torus

/// Flat `ns × nt` torus of size `ls × lt`, generators `s` (x-translation) and `t`.
///
/// Vertex `(i, j)` has index `i + ns·j` and sits at `(i·ls/ns, j·lt/nt)`.
pub fn build_torus_mesh(ns: usize, nt: usize, ls: f64, lt: f64) -> Result<TwistedSurfaceMesh> {
    if ns < 3 || nt < 3 {
        return Err(Error::invalid("torus needs at least 3 vertices per direction"));
    }
    if !(ls > 0.0 && lt > 0.0) {
        return Err(Error::invalid("torus side lengths must be positive"));
    }
    let (hs, ht) = (ls / ns as f64, lt / nt as f64);
    let idx = |i: usize, j: usize| (i % ns) + ns * (j % nt);
    let id = DMatrix::identity(2, 2);
    let mut edges: Vec<MeshEdge> = Vec::new();
    let mut lookup: HashMap<(usize, usize, i64, i64), usize> = HashMap::new();
    let mut triangles = Vec::new();
    let mut sides = Vec::new();
    // corners as unwrapped lattice points
    let mut side = |a: (usize, usize), b: (usize, usize), edges: &mut Vec<MeshEdge>| -> SideRef {
        let (va, vb) = (idx(a.0, a.1), idx(b.0, b.1));
        // offset of b's lift relative to a's lift, in periods
        let di = (b.0 / ns) as i64 - (a.0 / ns) as i64;
        let dj = (b.1 / nt) as i64 - (a.1 / nt) as i64;
        if let Some(&e) = lookup.get(&(vb, va, -di, -dj)) {
            return SideRef { edge: e, forward: false };
        }
        let dx = (b.0 as f64 - a.0 as f64) * hs;
        let dy = (b.1 as f64 - a.1 as f64) * ht;
        let e = edges.len();
        edges.push(MeshEdge {
            i: va,
            j: vb,
            length: dx.hypot(dy),
            word: Some(Word::pow(0, di).mul(&Word::pow(1, dj))),
            transport: id.clone(),
            transport_inv: id.clone(),
        });
        lookup.insert((va, vb, di, dj), e);
        SideRef { edge: e, forward: true }
    };
    for j in 0..nt {
        for i in 0..ns {
            let (p00, p10, p11, p01) = ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1));
            for tri in [[p00, p10, p11], [p00, p11, p01]] {
                let s = [
                    side(tri[0], tri[1], &mut edges),
                    side(tri[1], tri[2], &mut edges),
                    side(tri[2], tri[0], &mut edges),
                ];
                triangles.push([idx(tri[0].0, tri[0].1), idx(tri[1].0, tri[1].1), idx(tri[2].0, tri[2].1)]);
                sides.push(s);
            }
        }
    }
    let relator = Word(vec![(0, 1), (1, 1), (0, -1), (1, -1)]);
    Ok(TwistedSurfaceMesh::from_parts(2, 0, ns * nt, triangles, edges, Some(sides), 0.0)?
        .with_group_data(vec!["s".into(), "t".into()], Some(relator)))
}

// ---------------------------------------------------------------------------
// genus-2 octagon

/// Circumradius of the regular octagon with interior angles π/4: `cosh R = cot²(π/8)`.
pub fn octagon_circumradius() -> f64 {
    (1.0 / (PI / 8.0).tan().powi(2)).acosh()
}

/// Hyperboloid point at distance `d` from `Id` in direction `φ`, as a det-1 SPD matrix.
fn hpoint(d: f64, phi: f64) -> Matrix2<f64> {
    let (c, s) = (d.cosh(), d.sinh());
    Matrix2::new(c + s * phi.cos(), s * phi.sin(), s * phi.sin(), c - s * phi.cos())
}

fn hmid(a: &Matrix2<f64>, b: &Matrix2<f64>) -> Matrix2<f64> {
    let s = a + b;
    s / s.determinant().sqrt()
}

fn hact(q: &Matrix2<f64>, h: &Matrix2<f64>) -> Matrix2<f64> {
    let qi = q.try_inverse().expect("SL2 element");
    let r = qi.transpose() * h * qi;
    (r + r.transpose()) * 0.5
}

/// Hyperbolic distance between two det-1 SPD matrices: `2 cosh d = tr(a⁻¹b)`.
fn hdist(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    let adj = Matrix2::new(a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]);
    (0.5 * (adj * b).trace()).max(1.0).acosh()
}

fn rot(a: f64) -> Matrix2<f64> {
    Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos())
}

/// Hyperbolic half-turn about the det-1 SPD point `m`.
fn halfturn(m: &Matrix2<f64>) -> Matrix2<f64> {
    // m^{-1/2} for det-1 SPD 2×2: (m⁻¹ + I)/sqrt(tr m⁻¹ + 2)
    let mi = m.try_inverse().expect("SPD");
    let a = (mi + Matrix2::identity()) / (mi.trace() + 2.0).sqrt();
    a * rot(0.5 * PI) * a.try_inverse().expect("SPD")
}

struct Octagon {
    corners: Vec<Matrix2<f64>>,
    /// (target side, source side, generator) per pairing.
    pairings: Vec<(usize, usize, Matrix2<f64>)>,
    /// Word and matrix with `P_k = γ_k · P_0`.
    corner_words: Vec<Word>,
}

const GENUS2_NAMES: [&str; 4] = ["a1", "b1", "a2", "b2"];

impl Octagon {
    fn new() -> Self {
        let r = octagon_circumradius();
        let corners: Vec<_> = (0..8).map(|k| hpoint(r, 2.0 * PI * k as f64 / 8.0)).collect();
        let mids: Vec<_> = (0..8).map(|k| hmid(&corners[k], &corners[(k + 1) % 8])).collect();
        // maps side j onto side i, reversing endpoints
        let pairing = |i: usize, j: usize| -> Matrix2<f64> {
            halfturn(&mids[i]) * rot(PI * (i as f64 - j as f64) / 8.0)
        };
        let pairings: Vec<_> = [(0, 2), (3, 1), (4, 6), (7, 5)]
            .iter()
            .map(|&(i, j)| (i, j, pairing(i, j)))
            .collect();
        let mut corner_words: Vec<Option<Word>> = vec![None; 8];
        corner_words[0] = Some(Word::identity());
        let mut queue = VecDeque::from([0usize]);
        while let Some(k) = queue.pop_front() {
            let wk = corner_words[k].clone().unwrap();
            for (g, &(i, j, _)) in pairings.iter().enumerate() {
                // T P_j = P_{i+1},  T P_{j+1} = P_i
                let links = [
                    (j, (i + 1) % 8, Word::generator(g)),
                    ((j + 1) % 8, i, Word::generator(g)),
                ];
                for (from, to, t) in links {
                    for (src, dst, w) in [(from, to, t.clone()), (to, from, t.inverse())] {
                        if src == k && corner_words[dst].is_none() {
                            corner_words[dst] = Some(w.mul(&wk));
                            queue.push_back(dst);
                        }
                    }
                }
            }
        }
        Octagon {
            corners,
            pairings,
            corner_words: corner_words.into_iter().map(Option::unwrap).collect(),
        }
    }

    fn eval(&self, w: &Word) -> Matrix2<f64> {
        let mut m = Matrix2::identity();
        for &(g, s) in &w.0 {
            let t = self.pairings[g].2;
            m *= if s > 0 { t } else { t.try_inverse().unwrap() };
        }
        m
    }
}

/// The side pairings of the regular π/4 octagon as an `SL₂(ℝ)` representation; the
/// developing map of the built-in genus-2 mesh is equivariant for it.
pub fn uniformizing_representation() -> Representation {
    let oct = Octagon::new();
    let mats = oct
        .pairings
        .iter()
        .map(|p| DMatrix::from_iterator(2, 2, p.2.iter().cloned()))
        .collect();
    Representation::new(GENUS2_NAMES.iter().map(|s| s.to_string()).collect(), mats)
        .expect("side pairings are invertible")
}

pub fn genus2_relator() -> Word {
    Word(vec![(0, 1), (1, 1), (0, -1), (1, -1), (2, 1), (3, 1), (2, -1), (3, -1)])
}

pub fn genus2_generator_names() -> Vec<String> {
    GENUS2_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone)]
struct FPoint {
    pos: Matrix2<f64>,
    /// Bitmask of octagon sides the point lies on.
    sides: u8,
}

/// Spatial hash for points of the hyperboloid, keyed by `((h00 − h11)/2, h01)`.
struct PointIndex {
    cell: f64,
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl PointIndex {
    fn new(cell: f64) -> Self {
        PointIndex { cell, map: HashMap::new() }
    }

    fn key(&self, p: &Matrix2<f64>) -> (f64, f64) {
        (0.5 * (p[(0, 0)] - p[(1, 1)]) / self.cell, p[(0, 1)] / self.cell)
    }

    fn find(&self, p: &Matrix2<f64>, pts: &[Matrix2<f64>]) -> Option<usize> {
        let (x, y) = self.key(p);
        let (cx, cy) = (x.floor() as i64, y.floor() as i64);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = self.map.get(&(cx + dx, cy + dy)) {
                    for &i in list {
                        if (pts[i] - p).amax() < 1e-3 * self.cell {
                            return Some(i);
                        }
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, p: &Matrix2<f64>, id: usize) {
        let (x, y) = self.key(p);
        self.map.entry((x.floor() as i64, y.floor() as i64)).or_default().push(id);
    }
}

/// Regular π/4 octagon with Bolza-type side pairings, fan-triangulated about its centre
/// and side midpoints, then subdivided `subdiv` times by geodesic midpoints.
///
/// Edge lengths are hyperbolic distances; triangle areas are hyperbolic. The level-0
/// vertices (centre, the single corner class and four side-midpoint classes) are the
/// cone vertices. Transports default to `Id₂` and are set by [`attach_representation`].
pub fn build_genus2_mesh(subdiv: usize) -> TwistedSurfaceMesh {
    let oct = Octagon::new();
    let corner_mask = |k: usize| -> u8 { (1 << k) | (1 << ((k + 7) % 8)) };

    // points of the closed fundamental domain
    let mut fpts: Vec<FPoint> = Vec::new();
    let mut fpos: Vec<Matrix2<f64>> = Vec::new();
    let mut findex = PointIndex::new(1e-6);
    let mut add = |p: FPoint, fpts: &mut Vec<FPoint>, fpos: &mut Vec<Matrix2<f64>>| -> usize {
        if let Some(i) = findex.find(&p.pos, fpos) {
            return i;
        }
        let i = fpts.len();
        findex.insert(&p.pos, i);
        fpos.push(p.pos);
        fpts.push(p);
        i
    };
    let c = add(FPoint { pos: Matrix2::identity(), sides: 0 }, &mut fpts, &mut fpos);
    let corners: Vec<usize> = (0..8)
        .map(|k| add(FPoint { pos: oct.corners[k], sides: corner_mask(k) }, &mut fpts, &mut fpos))
        .collect();
    let mids: Vec<usize> = (0..8)
        .map(|k| {
            let pos = hmid(&oct.corners[k], &oct.corners[(k + 1) % 8]);
            add(FPoint { pos, sides: 1 << k }, &mut fpts, &mut fpos)
        })
        .collect();
    let level0 = fpts.len();
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for k in 0..8 {
        tris.push([c, corners[k], mids[k]]);
        tris.push([c, mids[k], corners[(k + 1) % 8]]);
    }
    for _ in 0..subdiv {
        let mut next = Vec::with_capacity(4 * tris.len());
        for t in &tris {
            let mut m = |a: usize, b: usize, fpts: &mut Vec<FPoint>, fpos: &mut Vec<Matrix2<f64>>| {
                let p = FPoint {
                    pos: hmid(&fpts[a].pos, &fpts[b].pos),
                    sides: fpts[a].sides & fpts[b].sides,
                };
                add(p, fpts, fpos)
            };
            let m01 = m(t[0], t[1], &mut fpts, &mut fpos);
            let m12 = m(t[1], t[2], &mut fpts, &mut fpos);
            let m20 = m(t[2], t[0], &mut fpts, &mut fpos);
            next.push([t[0], m01, m20]);
            next.push([m01, t[1], m12]);
            next.push([m20, m12, t[2]]);
            next.push([m01, m12, m20]);
        }
        tris = next;
    }

    // canonical representatives: x = γ_x · p
    let target_of: HashMap<usize, (usize, usize)> =
        oct.pairings.iter().enumerate().map(|(g, &(i, j, _))| (j, (i, g))).collect();
    let mut canon_of = vec![0usize; fpts.len()];
    let mut word_of = vec![Word::identity(); fpts.len()];
    let mut vpos: Vec<Matrix2<f64>> = Vec::new();
    let mut vindex = PointIndex::new(1e-6);
    for (f, p) in fpts.iter().enumerate() {
        let (pos, w) = match p.sides.count_ones() {
            0 => (p.pos, Word::identity()),
            1 => {
                let side = p.sides.trailing_zeros() as usize;
                match target_of.get(&side) {
                    Some(&(_, g)) => (hact(&oct.pairings[g].2, &p.pos), Word(vec![(g, -1)])),
                    None => (p.pos, Word::identity()),
                }
            }
            _ => {
                let k = (0..8).find(|&k| corner_mask(k) == p.sides).expect("corner");
                (oct.corners[0], oct.corner_words[k].clone())
            }
        };
        debug_assert!((hact(&oct.eval(&w), &pos) - p.pos).amax() < 1e-9);
        let v = match vindex.find(&pos, &vpos) {
            Some(v) => v,
            None => {
                vindex.insert(&pos, vpos.len());
                vpos.push(pos);
                vpos.len() - 1
            }
        };
        canon_of[f] = v;
        word_of[f] = w;
    }
    let cone_vertices: Vec<usize> = {
        let mut c: Vec<usize> = (0..level0).map(|f| canon_of[f]).collect();
        c.sort_unstable();
        c.dedup();
        c
    };

    // edges keyed by endpoints and the relative position of the far endpoint
    let id = DMatrix::identity(2, 2);
    let mut edges: Vec<MeshEdge> = Vec::new();
    let mut by_pair: HashMap<(usize, usize), Vec<(usize, Matrix2<f64>)>> = HashMap::new();
    let mut triangles = Vec::with_capacity(tris.len());
    let mut sides = Vec::with_capacity(tris.len());
    for t in &tris {
        let mut s = [SideRef { edge: 0, forward: true }; 3];
        for k in 0..3 {
            let (fa, fb) = (t[k], t[(k + 1) % 3]);
            let (a, b) = (canon_of[fa], canon_of[fb]);
            let w = word_of[fa].inverse().mul(&word_of[fb]);
            let rel_b = hact(&oct.eval(&w), &vpos[b]);
            let rel_a = hact(&oct.eval(&w.inverse()), &vpos[a]);
            let list = by_pair.entry((a.min(b), a.max(b))).or_default();
            let mut found = None;
            for &(e, q) in list.iter() {
                let edge = &edges[e];
                if edge.i == a && edge.j == b && (q - rel_b).amax() < 1e-7 {
                    found = Some(SideRef { edge: e, forward: true });
                } else if edge.i == b && edge.j == a && (q - rel_a).amax() < 1e-7 {
                    found = Some(SideRef { edge: e, forward: false });
                }
                if found.is_some() {
                    break;
                }
            }
            s[k] = match found {
                Some(r) => r,
                None => {
                    let e = edges.len();
                    edges.push(MeshEdge {
                        i: a,
                        j: b,
                        length: hdist(&fpts[fa].pos, &fpts[fb].pos),
                        word: Some(w),
                        transport: id.clone(),
                        transport_inv: id.clone(),
                    });
                    list.push((e, rel_b));
                    SideRef { edge: e, forward: true }
                }
            };
        }
        triangles.push([canon_of[t[0]], canon_of[t[1]], canon_of[t[2]]]);
        sides.push(s);
    }
    let mut mesh = TwistedSurfaceMesh::from_parts(2, -2, vpos.len(), triangles, edges, Some(sides), -1.0)
        .expect("built-in octagon mesh is valid")
        .with_group_data(genus2_generator_names(), Some(genus2_relator()))
        .with_cone_vertices(cone_vertices);
    mesh.developing = Some(
        vpos.iter()
            .map(|p| DMatrix::from_iterator(2, 2, p.iter().cloned()))
            .collect(),
    );
    mesh
}


#[cfg(test)]
mod refinement {
    use super::*;

    fn curvature_spread(level: usize) -> f64 {
        let m = build_genus2_mesh(level);
        let geo = MeshGeometry::new(&m, AreaKind::Barycentric).unwrap();
        (0..m.num_vertices())
            .filter(|v| !m.cone_vertices().contains(v))
            .map(|v| (geo.curvature[v] + 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn curvature_approaches_minus_one_away_from_cones() {
        let spreads: Vec<f64> = (2..=4).map(curvature_spread).collect();
        eprintln!("max |K_v + 1| at levels 2..4: {spreads:?}");
        assert!(spreads[1] < 0.15);
        assert!(spreads[2] <= spreads[1]);
    }

    #[test]
    fn gauss_bonnet_at_every_level() {
        for level in 0..=4 {
            let m = build_genus2_mesh(level);
            let geo = MeshGeometry::new(&m, AreaKind::Barycentric).unwrap();
            let s: f64 = geo.defects.iter().sum();
            assert!((s + 4.0 * PI).abs() < 1e-10, "level {level}: {s}");
            assert!((geo.total_area() - 4.0 * PI).abs() < 1e-9);
        }
    }
}
