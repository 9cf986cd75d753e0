//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so the verdict lines land in `cargo test` output.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use solitonlab::assemble::{
    einstein_extension_check, is_gradient, lift_to_heisenberg, run_pipeline, soliton_residual, FieldInit,
    PipelineOptions,
};
use solitonlab::baseeq::{gauss_bonnet_constraint, solve_base, BaseOptions};
use solitonlab::harmonicflow::{align_orbit, cycle_tension, harmonic_flow, FlowOptions, HField, HarmonicContext};
use solitonlab::liealg::{
    certify_nilsoliton, einstein_extension, find_nilsoliton, lie_of_g, rescale_to_lambda, ricci_moment_map,
    ricci_oracle, FinderOptions, LieAlgebra, MetricData,
};
use solitonlab::spdgeom::group_act;
use solitonlab::surface::{
    attach_representation, build_genus2_mesh, build_torus_mesh, genus2_generator_names, uniformizing_representation,
    AreaKind, MeshGeometry, Representation, TwistedSurfaceMesh,
};

use common::{random_metric_algebra, Manufactured};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn c1_oracle_equivalence() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (alg, metric) = random_metric_algebra(seed);
        let a = ricci_oracle(&alg, &metric).unwrap();
        let b = ricci_moment_map(&alg, &metric).unwrap();
        worst = worst.max(max_abs(&(a - b)));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(worst <= 1e-9 && secs < 5.0, format!("max |Ric_oracle - Ric_moment| = {worst:.2e} over 20 algebras, {secs:.2}s"))
}

fn c2_heisenberg_nilsoliton() -> Verdict {
    let t = Instant::now();
    let alg = LieAlgebra::heisenberg3(1.0);
    let found = find_nilsoliton(&alg, &MetricData::identity(3), &FinderOptions::default()).unwrap();
    let ev = found.derivation_eigenvalues();
    let ratio_gap = (ev[1] / ev[0] - 1.0).abs().max((ev[2] / ev[0] - 2.0).abs());
    let d = &found.derivation;
    let trace_gap = ((d * d).trace() - found.lambda * d.trace()).abs();
    let norm_gap = ((&found.ricci * &found.ricci).trace() - found.lambda * found.scal).abs();
    let half = rescale_to_lambda(&alg, &found, -0.5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = ratio_gap <= 1e-7 && trace_gap <= 1e-9 && norm_gap <= 1e-9 && half.certified && secs < 1.0;
    verdict(
        pass,
        format!(
            "D eigenvalues {ev:.6?} (ratio gap {ratio_gap:.1e}), |trD^2 - l trD| = {trace_gap:.1e}, \
             ||Ric|^2 - l scal| = {norm_gap:.1e}, certified at lambda=-1/2: {}, {secs:.3}s",
            half.certified
        ),
    )
}

fn c3_symmetry_dimensions() -> Verdict {
    let dim_g = |alg: &LieAlgebra| {
        let found = find_nilsoliton(alg, &MetricData::identity(alg.dim()), &FinderOptions::default()).unwrap();
        lie_of_g(alg, &found).unwrap().g.len()
    };
    let h = dim_g(&LieAlgebra::heisenberg3(1.0));
    let a2 = dim_g(&LieAlgebra::abelian(2).unwrap());
    let a3 = dim_g(&LieAlgebra::abelian(3).unwrap());
    verdict(h == 3 && a2 == 3 && a3 == 8, format!("dim g: heis3 {h}, R^2 {a2}, R^3 {a3}"))
}

fn c4_gauss_bonnet() -> Verdict {
    let mut worst: f64 = 0.0;
    for level in 0..=4 {
        let mesh = build_genus2_mesh(level);
        let geo = MeshGeometry::new(&mesh, AreaKind::Barycentric).unwrap();
        let s: f64 = geo.defects.iter().sum();
        worst = worst.max((s + 4.0 * PI).abs());
    }
    verdict(worst <= 1e-10, format!("max |sum defects + 4 pi| over levels 0-4 = {worst:.2e}"))
}

/// Every `(mesh, u, ν, Newton tol)` solved by criteria 5 and 9, for criterion 6.
type Solved = Vec<(TwistedSurfaceMesh, Vec<f64>, Vec<f64>, f64)>;

fn c5_base_equation(solved: &mut Solved) -> Verdict {
    let opts = BaseOptions::default();
    let target = 0.5 * 2f64.ln();
    let mut const_err: f64 = 0.0;
    let mut uniq: f64 = 0.0;
    for level in 0..=3 {
        let mesh = build_genus2_mesh(level);
        let nu = vec![0.0; mesh.num_vertices()];
        let sol = solve_base(&mesh, &nu, &opts).unwrap();
        const_err = const_err.max(sol.u.u.iter().map(|u| (u - target).abs()).fold(0.0, f64::max));
        uniq = uniq.max(sol.uniqueness_gap.unwrap());
        solved.push((mesh, sol.u.u.as_slice().to_vec(), nu, opts.tol));
    }
    let m = Manufactured::default();
    let mut errs = Vec::new();
    for level in 1..=4 {
        let mesh = build_genus2_mesh(level);
        let d = Manufactured::radii(&mesh);
        let nu: Vec<f64> = d.iter().map(|&d| m.nu(d)).collect();
        let sol = solve_base(&mesh, &nu, &opts).unwrap();
        errs.push(sol.u.u.iter().zip(&d).map(|(u, &d)| (u - m.u(d)).abs()).fold(0.0, f64::max));
        uniq = uniq.max(sol.uniqueness_gap.unwrap());
        solved.push((mesh, sol.u.u.as_slice().to_vec(), nu, opts.tol));
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let errs_s = sci(&errs);
    verdict(
        const_err <= 1e-10 && monotone && uniq <= 1e-8,
        format!(
            "nu=0: max |u - ln2/2| = {const_err:.1e}; manufactured L-inf errors L1-L4 {errs_s}; \
             max uniqueness gap {uniq:.1e}"
        ),
    )
}

fn c6_gauss_bonnet_constraint(solved: &Solved) -> Verdict {
    let mut worst_ratio: f64 = 0.0;
    for (mesh, u, nu, tol) in solved {
        let area = MeshGeometry::new(mesh, AreaKind::Barycentric).unwrap().total_area();
        let r = gauss_bonnet_constraint(mesh, u, nu).unwrap().abs();
        worst_ratio = worst_ratio.max(r / (area * tol));
    }
    verdict(
        worst_ratio <= 1.0 && !solved.is_empty(),
        format!("max |GB residual| / (area x tol) = {worst_ratio:.3} over {} solves", solved.len()),
    )
}

fn c7_untwisted_collapse() -> Verdict {
    let mesh = build_genus2_mesh(1);
    let mut worst: f64 = 0.0;
    for seed in [1u64, 2, 3] {
        let hf = HField::random(&mesh, seed, 0.5, true);
        let (out, _) = harmonic_flow(&mesh, &hf, &FlowOptions::default()).unwrap();
        worst = worst.max(HarmonicContext::new(&mesh).unwrap().energy(&out).unwrap());
    }
    verdict(worst <= 1e-8, format!("max final energy over 3 seeds (trivial monodromy, genus 2) = {worst:.2e}"))
}

fn geodesic_data() -> (DMatrix<f64>, DMatrix<f64>) {
    // D self-adjoint for h0, so s ↦ exp(sD)·h0 is a geodesic; trace-free keeps e^D in SL2
    let h0 = DMatrix::from_row_slice(2, 2, &[1.6, 0.4, 0.4, 0.725]);
    let s = DMatrix::from_row_slice(2, 2, &[0.45, 0.25, 0.25, -0.35]);
    let d = h0.clone().try_inverse().unwrap() * s;
    let d = &d - DMatrix::identity(2, 2) * (0.5 * d.trace());
    (h0, d)
}

fn c8_geodesic_cycle() -> Verdict {
    let (h0, d) = geodesic_data();
    let g = d.clone().exp();
    let sample = |s: f64| group_act(&(&d * s).exp(), &h0).unwrap();
    let mut errs = Vec::new();
    for n in [16usize, 32, 64] {
        let ds = 1.0 / n as f64;
        let samples: Vec<_> = (0..n).map(|k| sample(k as f64 * ds)).collect();
        errs.push(cycle_tension(&samples, &g, ds).unwrap().iter().cloned().fold(0.0, f64::max));
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let errs_s = sci(&errs);

    // on a twisted torus the log-based discrete tension vanishes on the sampled geodesic,
    // and the flow reproduces it from a perturbed start
    let (ns, nt) = (12, 3);
    let torus = build_torus_mesh(ns, nt, 1.0, 0.25).unwrap();
    let id = DMatrix::identity(2, 2);
    let rep = Representation::new(vec!["s".into(), "t".into()], vec![g.clone(), id]).unwrap();
    let torus = attach_representation(&torus, &rep).unwrap();
    let exact: Vec<_> = (0..ns * nt).map(|v| sample((v % ns) as f64 / ns as f64)).collect();
    let exact = HField::new(&torus, exact, false).unwrap();
    let ctx = HarmonicContext::new(&torus).unwrap();
    let mesh_tension = ctx.tension_norms(&exact).unwrap().iter().cloned().fold(0.0, f64::max);
    let start = HField::random(&torus, 5, 0.3, false);
    let opts = FlowOptions { tol: 1e-11, ..FlowOptions::default() };
    let (flowed, _) = harmonic_flow(&torus, &start, &opts).unwrap();
    let (_, orbit_gap) = align_orbit(&torus, &flowed, &exact, 50).unwrap();

    let pass = orders.iter().all(|&p| p >= 1.8) && mesh_tension <= 1e-12 && orbit_gap <= 1e-6;
    verdict(
        pass,
        format!(
            "cycle tension N=16,32,64 {errs_s}, orders {orders:.3?}; mesh tension on samples {mesh_tension:.1e}; \
             flow limit vs exp(sD).h0 up to centralizer {orbit_gap:.1e}"
        ),
    )
}

fn c9_gold_case(solved: &mut Solved) -> Verdict {
    let t = Instant::now();
    let alg = LieAlgebra::abelian(2).unwrap();
    let cert = certify_nilsoliton(&alg, &MetricData::identity(2), 1e-9).unwrap();
    let cert = rescale_to_lambda(&alg, &cert, -0.5).unwrap();
    let opts = PipelineOptions::default();
    let (mut conf, mut hor, mut scal_gap) = (Vec::new(), Vec::new(), 0.0f64);
    let mut level3 = Duration::ZERO;
    for level in 1..=3 {
        let lt = Instant::now();
        let mesh = attach_representation(&build_genus2_mesh(level), &uniformizing_representation()).unwrap();
        let res = run_pipeline(&mesh, &alg, &cert, &opts).unwrap();
        conf.push(res.report.conformality_residual);
        hor.push(res.report.horizontal_residual);
        for (a, b) in res.report.scal_g.iter().zip(&res.report.scal_g_direct) {
            scal_gap = scal_gap.max((a + 1.0).abs()).max((b + 1.0).abs());
        }
        solved.push((mesh, res.base.u.u.as_slice().to_vec(), res.nu.clone(), opts.base.tol));
        if level == 3 {
            level3 = lt.elapsed();
        }
    }
    let ratio = |v: &[f64]| v.windows(2).map(|w| w[1] / w[0]).collect::<Vec<_>>();
    let (rc, rh) = (ratio(&conf), ratio(&hor));
    let (conf_s, hor_s) = (sci(&conf), sci(&hor));
    let pass = rc.iter().chain(&rh).all(|&r| r <= 0.6) && scal_gap <= 1e-8 && level3.as_secs() < 600;
    verdict(
        pass,
        format!(
            "conformality L1-L3 {conf_s} (ratios {rc:.2?}); horizontal {hor_s} (ratios {rh:.2?}); \
             max |scal_g + 1| = {scal_gap:.1e}; level 3 {:.1}s, total {:.1}s",
            level3.as_secs_f64(),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c10_mixed_block() -> Verdict {
    let mesh = attach_representation(&build_genus2_mesh(1), &uniformizing_representation()).unwrap();
    let alg2 = LieAlgebra::abelian(2).unwrap();
    let cert2 = rescale_to_lambda(&alg2, &certify_nilsoliton(&alg2, &MetricData::identity(2), 1e-9).unwrap(), -0.5).unwrap();
    let opts = PipelineOptions { init: FieldInit::Random { seed: 9, scale: 0.3 }, ..PipelineOptions::default() };
    let res = run_pipeline(&mesh, &alg2, &cert2, &opts).unwrap();
    let lift = lift_to_heisenberg(&mesh, &res.field).unwrap();
    let report = soliton_residual(&lift.mesh, res.base.u.u.as_slice(), &lift.field, &lift.algebra, &lift.certificate).unwrap();
    verdict(
        report.mixed_residual <= 1e-10,
        format!(
            "heis3 lift (c1 = {:.6}, c2 = {:.6}): max |tr(ad U L_X)| = {:.1e}, vertical {:.1e}",
            lift.c1, lift.c2, report.mixed_residual, report.vertical_residual
        ),
    )
}

fn c11_einstein_extension() -> Verdict {
    let alg = LieAlgebra::heisenberg3(1.0);
    let found = find_nilsoliton(&alg, &MetricData::identity(3), &FinderOptions::default()).unwrap();
    let cert = rescale_to_lambda(&alg, &found, -0.5).unwrap();
    let ext = einstein_extension(&alg, &cert).unwrap();
    let sq = (ext.trace_square - 0.5).abs();
    verdict(
        ext.ricci_gap <= 1e-8 && sq <= 1e-12 && ext.trace_identity_gap <= 1e-10,
        format!(
            "|Ric^E + Id/2| = {:.1e}, |tr(aD_M)^2 - 1/2| = {sq:.1e}, |trD_M^2 + trD_M/2| = {:.1e}",
            ext.ricci_gap, ext.trace_identity_gap
        ),
    )
}

fn c11_assembled_identity() -> f64 {
    // trace identity tr(aD)^2 = 1/2 on an assembled abelian soliton, reported alongside criterion 11
    let mesh = build_genus2_mesh(1);
    let alg = LieAlgebra::abelian(2).unwrap();
    let cert = certify_nilsoliton(&alg, &MetricData::identity(2), 1e-9).unwrap();
    let hf = HField::identity(&mesh, true);
    let nu = vec![0.0; mesh.num_vertices()];
    let u = solve_base(&mesh, &nu, &BaseOptions::default()).unwrap();
    let r = soliton_residual(&mesh, u.u.u.as_slice(), &hf, &alg, &cert).unwrap();
    einstein_extension_check(&r, &alg, &cert).unwrap().identity_residual
}

fn c12_gradient_predicate() -> Verdict {
    let names = genus2_generator_names();
    let rot = |a: f64| DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()]);
    let so2 = Representation::new(names.clone(), vec![rot(0.3), rot(-0.7), rot(1.1), rot(0.2)]).unwrap();
    let stretch = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
    let skewed = Representation::new(names, vec![rot(0.3), rot(-0.7), stretch, rot(0.2)]).unwrap();
    let ab = LieAlgebra::abelian(2).unwrap();
    let a = is_gradient(&ab, &so2);
    let b = is_gradient(&ab, &skewed);
    let c = is_gradient(&LieAlgebra::heisenberg3(1.0), &uniformizing_representation());
    let pass = a.gradient && !b.gradient && b.witness.as_deref() == Some("a2") && !c.gradient;
    verdict(
        pass,
        format!(
            "abelian+SO(2): {}; abelian+diag(2,1/2): {} (witness {:?}); heis3: {}",
            a.gradient, b.gradient, b.witness, c.gradient
        ),
    )
}

struct Line {
    n: usize,
    name: &'static str,
    verdict: Verdict,
    secs: f64,
}

fn run(n: usize, name: &'static str, f: impl FnOnce() -> Verdict) -> Line {
    let t = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Verdict { pass: false, detail: format!("panicked: {msg}") }
    });
    Line { n, name, verdict, secs: t.elapsed().as_secs_f64() }
}

fn main() {
    // libtest flags (e.g. --list from IDEs) are ignored; this target always runs everything
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut solved = Solved::new();
    // criterion 6 audits the solves of criteria 5 and 9, so those run first
    let mut lines = vec![
        run(1, "moment map vs oracle Ricci", c1_oracle_equivalence),
        run(2, "Heisenberg nilsoliton", c2_heisenberg_nilsoliton),
        run(3, "symmetry algebra dimensions", c3_symmetry_dimensions),
        run(4, "combinatorial Gauss-Bonnet", c4_gauss_bonnet),
        run(5, "base equation", || c5_base_equation(&mut solved)),
        run(9, "gold case (uniformizing, genus 2)", || c9_gold_case(&mut solved)),
    ];
    lines.push(run(6, "Gauss-Bonnet constraint at solved u", || c6_gauss_bonnet_constraint(&solved)));
    lines.push(run(7, "untwisted flow collapses", c7_untwisted_collapse));
    lines.push(run(8, "geodesic twisted cycle", c8_geodesic_cycle));
    lines.push(run(10, "mixed block on the Heisenberg lift", c10_mixed_block));
    lines.push(run(11, "Einstein extension", || {
        let mut v = c11_einstein_extension();
        let id = c11_assembled_identity();
        v.pass &= id <= 1e-9;
        v.detail.push_str(&format!("; assembled trace identity residual {id:.1e}"));
        v
    }));
    lines.push(run(12, "gradient predicate", c12_gradient_predicate));
    lines.sort_by_key(|l| l.n);
    for l in &lines {
        println!(
            "criterion {:2} {}: {} -- {} [{:.2}s]",
            l.n,
            if l.verdict.pass { "PASS" } else { "FAIL" },
            l.name,
            l.verdict.detail,
            l.secs
        );
    }
    let failed = lines.iter().filter(|l| !l.verdict.pass).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
