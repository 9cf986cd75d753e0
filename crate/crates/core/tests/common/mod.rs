//! Shared fixtures: random nilpotent metric algebras and a manufactured base solution.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solitonlab::liealg::{LieAlgebra, MetricData};
use solitonlab::surface::TwistedSurfaceMesh;

/// Nilpotent algebras of dimension ≤ 6 whose Jacobi identity is known by hand.
pub fn nilpotent_family() -> Vec<LieAlgebra> {
    let b = |dim, br: &[(usize, usize, usize, f64)]| LieAlgebra::from_brackets(dim, br).unwrap();
    vec![
        LieAlgebra::heisenberg3(1.0),
        LieAlgebra::heisenberg3_plus_r(),
        // filiform: [e0, e_i] = e_{i+1}
        b(4, &[(0, 1, 2, 1.0), (0, 2, 3, 1.0)]),
        b(5, &[(0, 1, 2, 1.0), (0, 2, 3, 1.0), (0, 3, 4, 1.0)]),
        // 5-dim Heisenberg
        b(5, &[(0, 1, 4, 1.0), (2, 3, 4, 1.0)]),
        // [e0,e1]=e2, [e0,e2]=e3, [e1,e2]=e4
        b(5, &[(0, 1, 2, 1.0), (0, 2, 3, 1.0), (1, 2, 4, 1.0)]),
        // free 2-step nilpotent on three generators
        b(6, &[(0, 1, 3, 1.0), (0, 2, 4, 1.0), (1, 2, 5, 1.0)]),
        b(6, &[(0, 1, 2, 1.0), (0, 2, 3, 1.0), (0, 3, 4, 1.0), (0, 4, 5, 1.0)]),
    ]
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..scale))
}

/// A random member of [`nilpotent_family`] in a random basis, with a random metric.
pub fn random_metric_algebra(seed: u64) -> (LieAlgebra, MetricData) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = nilpotent_family();
    let alg = &family[rng.gen_range(0..family.len())];
    let n = alg.dim();
    let g = DMatrix::identity(n, n) + random_matrix(&mut rng, n, 0.3);
    let alg = alg.change_basis(&g).unwrap();
    let a = random_matrix(&mut rng, n, 0.5);
    let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
    (alg, MetricData::new(h).unwrap())
}

/// Radial bump `u* = c0 + a (1 − (d/r0)²)⁴` around the octagon centre, with `ν*` chosen
/// so that `u*` solves the base equation exactly in the continuum.
pub struct Manufactured {
    pub a: f64,
    pub r0: f64,
    pub c0: f64,
}

impl Default for Manufactured {
    fn default() -> Self {
        // r0 stays inside the octagon's inradius (acosh cot(π/8) ≈ 1.53)
        Manufactured { a: 0.6, r0: 1.4, c0: 0.8 }
    }
}

impl Manufactured {
    pub fn u(&self, d: f64) -> f64 {
        if d >= self.r0 {
            return self.c0;
        }
        self.c0 + self.a * (1.0 - (d / self.r0).powi(2)).powi(4)
    }

    /// Hyperbolic Laplacian `f'' + coth(d) f'` of the radial profile.
    pub fn laplacian(&self, d: f64) -> f64 {
        let (a, r0) = (self.a, self.r0);
        if d >= r0 {
            return 0.0;
        }
        let w = 1.0 - (d / r0).powi(2);
        let fpp_at_0 = -8.0 * a / (r0 * r0);
        let fp = a * 4.0 * w.powi(3) * (-2.0 * d / (r0 * r0));
        let fpp = a * (12.0 * w * w * (2.0 * d / (r0 * r0)).powi(2) - 8.0 * w.powi(3) / (r0 * r0));
        // coth(d) f'(d) → f''(0) as d → 0
        let radial = if d < 1e-12 { fpp_at_0 } else { fp / d.tanh() };
        fpp + radial
    }

    pub fn nu(&self, d: f64) -> f64 {
        0.5 * (2.0 * self.u(d)).exp() - 1.0 - self.laplacian(d)
    }

    /// Hyperbolic distance of every vertex from the octagon centre.
    pub fn radii(mesh: &TwistedSurfaceMesh) -> Vec<f64> {
        mesh.developing_map()
            .expect("built-in genus-2 mesh")
            .iter()
            .map(|p| (0.5 * p.trace()).max(1.0).acosh())
            .collect()
    }
}
