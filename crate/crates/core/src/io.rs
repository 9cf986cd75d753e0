//! JSON artifact formats.
//!
//! Every artifact is a flat JSON object. Payload fields follow the documented formats;
//! the `meta` block (tool version, config echo, upstream hashes) is optional on input so
//! hand-written files load.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::harmonicflow::HField;
use crate::liealg::{LieAlgebra, NilsolitonCertificate, LAMBDA2_CONVENTION};
use crate::surface::{MeshEdge, Representation, SideRef, TwistedSurfaceMesh, Word};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn from_rows(rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid("matrix rows are empty or ragged"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Provenance embedded in every written artifact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    #[serde(default)]
    pub config: serde_json::Value,
    /// Upstream artifact hashes, keyed by role.
    #[serde(default)]
    pub upstream: BTreeMap<String, String>,
}

impl Meta {
    pub fn new(config: serde_json::Value) -> Self {
        Meta { tool_version: env!("CARGO_PKG_VERSION").to_string(), config, upstream: BTreeMap::new() }
    }

    pub fn with_upstream(mut self, role: &str, hash: &str) -> Self {
        self.upstream.insert(role.to_string(), hash.to_string());
        self
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------- algebra

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub c: f64,
}

/// Structure constants `[e_i, e_j] = Σ c e_k`, 1-indexed, `i < j` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraFile {
    pub version: u32,
    pub dim: usize,
    pub brackets: Vec<Bracket>,
}

impl AlgebraFile {
    pub fn from_algebra(alg: &LieAlgebra) -> Self {
        let n = alg.dim();
        let mut brackets = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..n {
                    let c = alg.c(i, j, k);
                    if c != 0.0 {
                        brackets.push(Bracket { i: i + 1, j: j + 1, k: k + 1, c });
                    }
                }
            }
        }
        AlgebraFile { version: FORMAT_VERSION, dim: n, brackets }
    }

    pub fn to_algebra(&self) -> Result<LieAlgebra> {
        let mut b = Vec::with_capacity(self.brackets.len());
        for br in &self.brackets {
            let ok = |x: usize| x >= 1 && x <= self.dim;
            if !ok(br.i) || !ok(br.j) || !ok(br.k) || br.i >= br.j {
                return Err(Error::invalid(format!(
                    "bracket ({}, {}, {}) out of range or not i<j",
                    br.i, br.j, br.k
                )));
            }
            b.push((br.i - 1, br.j - 1, br.k - 1, br.c));
        }
        LieAlgebra::from_brackets(self.dim, &b)
    }
}

/// Built-in name (`abelian:n`, `heis3`, `heis3xR`) or path to an algebra file.
pub fn load_algebra(spec: &str) -> Result<LieAlgebra> {
    match LieAlgebra::named(spec) {
        Ok(a) => Ok(a),
        Err(named_err) => {
            let path = Path::new(spec);
            if path.exists() {
                read_json::<AlgebraFile>(path)?.to_algebra()
            } else {
                Err(named_err)
            }
        }
    }
}

// ---------------------------------------------------------------- certificate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub version: u32,
    #[serde(default)]
    pub meta: Meta,
    pub algebra: AlgebraFile,
    pub metric: Rows,
    pub lambda: f64,
    /// `D` in `Ric^E = λ Id − D`.
    pub derivation: Rows,
    pub derivation_eigenvalues: Vec<f64>,
    pub ricci: Rows,
    pub scal: f64,
    pub beta: Rows,
    pub beta_plus: Option<Rows>,
    pub beta_plus_min_eigenvalue: Option<f64>,
    pub residual: f64,
    pub trace_identity_gap: f64,
    pub norm_identity_gap: f64,
    pub derivation_defect: f64,
    pub tol: f64,
    pub certified: bool,
    pub iterations: usize,
    pub conventions: Vec<String>,
}

impl CertificateFile {
    pub fn new(alg: &LieAlgebra, cert: &NilsolitonCertificate, meta: Meta) -> Self {
        CertificateFile {
            version: FORMAT_VERSION,
            meta,
            algebra: AlgebraFile::from_algebra(alg),
            metric: to_rows(&cert.metric),
            lambda: cert.lambda,
            derivation: to_rows(&cert.derivation),
            derivation_eigenvalues: cert.derivation_eigenvalues(),
            ricci: to_rows(&cert.ricci),
            scal: cert.scal,
            beta: to_rows(&cert.beta),
            beta_plus: cert.beta_plus.as_ref().map(to_rows),
            beta_plus_min_eigenvalue: cert.beta_plus_min_eigenvalue,
            residual: cert.residual,
            trace_identity_gap: cert.trace_identity_gap,
            norm_identity_gap: cert.norm_identity_gap,
            derivation_defect: cert.derivation_defect,
            tol: cert.tol,
            certified: cert.certified,
            iterations: cert.iterations,
            conventions: vec![
                format!("Lambda^2 inner product: {LAMBDA2_CONVENTION}"),
                "Ric^E = lambda Id - derivation".into(),
                "derivation_eigenvalues: eigenvalues of derivation, sorted by magnitude".into(),
            ],
        }
    }

    pub fn to_certificate(&self) -> Result<NilsolitonCertificate> {
        Ok(NilsolitonCertificate {
            metric: from_rows(&self.metric)?,
            lambda: self.lambda,
            derivation: from_rows(&self.derivation)?,
            ricci: from_rows(&self.ricci)?,
            scal: self.scal,
            beta: from_rows(&self.beta)?,
            beta_plus: self.beta_plus.as_ref().map(from_rows).transpose()?,
            beta_plus_min_eigenvalue: self.beta_plus_min_eigenvalue,
            residual: self.residual,
            trace_identity_gap: self.trace_identity_gap,
            norm_identity_gap: self.norm_identity_gap,
            derivation_defect: self.derivation_defect,
            tol: self.tol,
            certified: self.certified,
            iterations: self.iterations,
        })
    }
}

// ---------------------------------------------------------------- mesh

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLength {
    pub i: usize,
    pub j: usize,
    pub l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTransport {
    pub i: usize,
    pub j: usize,
    pub m: Rows,
    /// Index into `edge_lengths`; needed only when `(i, j)` is joined by several edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<usize>,
}

/// Mesh file. The optional fields carry what a vertex-pair format cannot: multi-edges
/// (`triangle_sides` as `[edge, forward]` per side), edge words in the surface group,
/// and the built-in meshes' group data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub version: u32,
    pub n: usize,
    pub chi: i64,
    pub vertices: usize,
    pub triangles: Vec<[usize; 3]>,
    pub edge_lengths: Vec<EdgeLength>,
    #[serde(default)]
    pub edge_transport: Vec<EdgeTransport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triangle_sides: Option<Vec<[(usize, bool); 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_words: Option<Vec<Option<Word>>>,
    /// Curvature of the background metric the lengths sample (default 0: Euclidean).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relator: Option<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone_vertices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub developing: Option<Vec<Rows>>,
}

impl MeshFile {
    pub fn from_mesh(mesh: &TwistedSurfaceMesh) -> Self {
        let n = mesh.n();
        let id = DMatrix::<f64>::identity(n, n);
        let edges = mesh.edges();
        let words: Vec<Option<Word>> = edges.iter().map(|e| e.word.clone()).collect();
        MeshFile {
            version: FORMAT_VERSION,
            n,
            chi: mesh.chi(),
            vertices: mesh.num_vertices(),
            triangles: mesh.triangles().to_vec(),
            edge_lengths: edges.iter().map(|e| EdgeLength { i: e.i, j: e.j, l: e.length }).collect(),
            edge_transport: edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.transport != id)
                .map(|(k, e)| EdgeTransport { i: e.i, j: e.j, m: to_rows(&e.transport), edge: Some(k) })
                .collect(),
            triangle_sides: Some(
                mesh.sides().iter().map(|s| [0, 1, 2].map(|k| (s[k].edge, s[k].forward))).collect(),
            ),
            edge_words: words.iter().any(Option::is_some).then_some(words),
            background_curvature: Some(mesh.background_curvature()),
            generators: (!mesh.generators().is_empty()).then(|| mesh.generators().to_vec()),
            relator: mesh.relator().cloned(),
            cone_vertices: (!mesh.cone_vertices().is_empty()).then(|| mesh.cone_vertices().to_vec()),
            developing: mesh.developing_map().map(|d| d.iter().map(to_rows).collect()),
        }
    }

    pub fn to_mesh(&self) -> Result<TwistedSurfaceMesh> {
        if self.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported mesh version {}", self.version)));
        }
        let n = self.n;
        if n == 0 {
            return Err(Error::invalid("fibre dimension must be positive"));
        }
        let id = DMatrix::<f64>::identity(n, n);
        let mut transports: Vec<Option<DMatrix<f64>>> = vec![None; self.edge_lengths.len()];
        for t in &self.edge_transport {
            let m = from_rows(&t.m)?;
            if m.shape() != (n, n) {
                return Err(Error::invalid(format!("transport on ({}, {}) is not {n}x{n}", t.i, t.j)));
            }
            let (k, forward) = match t.edge {
                Some(k) => {
                    let e = self
                        .edge_lengths
                        .get(k)
                        .ok_or_else(|| Error::invalid(format!("transport references missing edge {k}")))?;
                    if (e.i, e.j) == (t.i, t.j) {
                        (k, true)
                    } else if (e.j, e.i) == (t.i, t.j) {
                        (k, false)
                    } else {
                        return Err(Error::invalid(format!("transport endpoints do not match edge {k}")));
                    }
                }
                None => {
                    let hits: Vec<(usize, bool)> = self
                        .edge_lengths
                        .iter()
                        .enumerate()
                        .filter_map(|(k, e)| {
                            if (e.i, e.j) == (t.i, t.j) {
                                Some((k, true))
                            } else if (e.j, e.i) == (t.i, t.j) {
                                Some((k, false))
                            } else {
                                None
                            }
                        })
                        .collect();
                    match hits.as_slice() {
                        [one] => *one,
                        [] => return Err(Error::invalid(format!("transport on missing edge ({}, {})", t.i, t.j))),
                        _ => {
                            return Err(Error::invalid(format!(
                                "transport on ({}, {}) is ambiguous; give an edge index",
                                t.i, t.j
                            )))
                        }
                    }
                }
            };
            let m = if forward {
                m
            } else {
                m.try_inverse().ok_or_else(|| Error::Singular(format!("transport on edge {k}")))?
            };
            if transports[k].replace(m).is_some() {
                return Err(Error::invalid(format!("edge {k} has two transports")));
            }
        }
        if let Some(w) = &self.edge_words {
            if w.len() != self.edge_lengths.len() {
                return Err(Error::invalid("edge_words must have one entry per edge"));
            }
        }
        let edges = self
            .edge_lengths
            .iter()
            .zip(transports)
            .enumerate()
            .map(|(k, (e, t))| {
                let transport = t.unwrap_or_else(|| id.clone());
                let transport_inv = transport
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Singular(format!("transport on edge {k}")))?;
                Ok(MeshEdge {
                    i: e.i,
                    j: e.j,
                    length: e.l,
                    word: self.edge_words.as_ref().and_then(|w| w[k].clone()),
                    transport,
                    transport_inv,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sides = self
            .triangle_sides
            .as_ref()
            .map(|s| s.iter().map(|t| t.map(|(edge, forward)| SideRef { edge, forward })).collect());
        let mut mesh = TwistedSurfaceMesh::from_parts(
            n,
            self.chi,
            self.vertices,
            self.triangles.clone(),
            edges,
            sides,
            self.background_curvature.unwrap_or(0.0),
        )?;
        if let Some(g) = &self.generators {
            mesh = mesh.with_group_data(g.clone(), self.relator.clone());
        }
        if let Some(c) = &self.cone_vertices {
            if c.iter().any(|&v| v >= self.vertices) {
                return Err(Error::invalid("cone vertex out of range"));
            }
            mesh = mesh.with_cone_vertices(c.clone());
        }
        if let Some(d) = &self.developing {
            mesh = mesh.with_developing_map(d.iter().map(from_rows).collect::<Result<_>>()?)?;
        }
        Ok(mesh)
    }
}

/// SHA-256 of the canonical (compact) JSON encoding of the mesh.
pub fn mesh_hash(mesh: &TwistedSurfaceMesh) -> String {
    let bytes = serde_json::to_vec(&MeshFile::from_mesh(mesh)).expect("mesh serializes");
    sha256_hex(&bytes)
}

pub fn check_hash(expected: &str, found: &str, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::invalid(format!("{what} was computed on mesh {found}, not {expected}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- representation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorImage {
    pub name: String,
    pub m: Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationFile {
    pub generators: Vec<GeneratorImage>,
}

impl RepresentationFile {
    pub fn from_rep(rep: &Representation) -> Self {
        RepresentationFile {
            generators: rep
                .names()
                .iter()
                .zip(rep.matrices())
                .map(|(name, m)| GeneratorImage { name: name.clone(), m: to_rows(m) })
                .collect(),
        }
    }

    pub fn to_rep(&self) -> Result<Representation> {
        let names = self.generators.iter().map(|g| g.name.clone()).collect();
        let mats = self.generators.iter().map(|g| from_rows(&g.m)).collect::<Result<_>>()?;
        Representation::new(names, mats)
    }
}

// ---------------------------------------------------------------- fields

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HFieldFile {
    pub version: u32,
    #[serde(default)]
    pub meta: Meta,
    pub mesh_hash: String,
    pub unit_det: bool,
    pub values: Vec<Rows>,
}

impl HFieldFile {
    pub fn new(mesh: &TwistedSurfaceMesh, hf: &HField, meta: Meta) -> Self {
        HFieldFile {
            version: FORMAT_VERSION,
            meta,
            mesh_hash: mesh_hash(mesh),
            unit_det: hf.unit_det(),
            values: hf.values().iter().map(to_rows).collect(),
        }
    }

    pub fn to_field(&self, mesh: &TwistedSurfaceMesh) -> Result<HField> {
        check_hash(&mesh_hash(mesh), &self.mesh_hash, "field")?;
        let values = self.values.iter().map(from_rows).collect::<Result<_>>()?;
        HField::new(mesh, values, self.unit_det)
    }
}

/// Per-vertex scalar field (`u` or `ν`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarFieldFile {
    pub version: u32,
    #[serde(default)]
    pub meta: Meta,
    pub mesh_hash: String,
    pub kind: String,
    pub values: Vec<f64>,
}

impl ScalarFieldFile {
    pub fn new(mesh: &TwistedSurfaceMesh, kind: &str, values: &[f64], meta: Meta) -> Self {
        ScalarFieldFile {
            version: FORMAT_VERSION,
            meta,
            mesh_hash: mesh_hash(mesh),
            kind: kind.to_string(),
            values: values.to_vec(),
        }
    }

    pub fn values_for(&self, mesh: &TwistedSurfaceMesh) -> Result<&[f64]> {
        check_hash(&mesh_hash(mesh), &self.mesh_hash, &self.kind)?;
        if self.values.len() != mesh.num_vertices() || self.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{} has wrong length or non-finite values", self.kind)));
        }
        Ok(&self.values)
    }
}
