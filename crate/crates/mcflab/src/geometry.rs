//! Differential geometry of moving graphs: unit normal, area element,
//! generalized mean curvature in divergence form, normal velocity, and the
//! discrete divergence-form identity.
//!
//! The mean curvature uses a staggered flux stencil: the flux
//! `F = slope / sqrt(1 + |grad f|^2)` lives on cell faces, with the transverse
//! slope face-averaged from the two adjacent nodes. Pairing that flux with
//! face difference quotients of a node-sampled test function makes
//! `int grad(psi) . flux + int psi H = 0` an exact algebraic identity, not an
//! asymptotic one.

use crate::error::{LabError, Result};
use crate::grid::{self, GraphFlow, SpaceTimeGrid};
use crate::testfn::TestFunction;
use crate::vecn::{self, VecN};

/// Scalar mean curvature H, curvature vector h = H nu, and unit normal per node.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    pub h: Vec<f64>,
    pub hvec: Vec<VecN>,
    pub nu: Vec<VecN>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeStencil {
    Centered,
    OneSided,
}

/// Normal speed and velocity vector v = vn nu per node at one time step.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub vn: Vec<f64>,
    pub vvec: Vec<VecN>,
    pub stencil: TimeStencil,
}

/// Unit normal (-grad f, 1)/W and area element W = sqrt(1 + |grad f|^2).
pub fn normal_and_area(gf: &GraphFlow, j: usize) -> (Vec<VecN>, Vec<f64>) {
    let g = &gf.grid;
    let slice = gf.slice(j);
    let sdim = g.sdim();
    let mut nu = Vec::with_capacity(g.nodes_per_step());
    let mut area = Vec::with_capacity(g.nodes_per_step());
    for idx in 0..g.nodes_per_step() {
        let gr = grid::gradient_at(g, slice, idx);
        let w = (1.0 + gr[0] * gr[0] + gr[1] * gr[1]).sqrt();
        let mut v = vecn::ZERO;
        for a in 0..sdim {
            v[a] = -gr[a] / w;
        }
        v[sdim] = 1.0 / w;
        nu.push(v);
        area.push(w);
    }
    (nu, area)
}

/// Face fluxes along one axis. `faces1` has an entry per x1-face (cells x
/// nodes transverse), `faces2` per x2-face; for n = 2 only `faces1` is used.
struct Fluxes {
    faces1: Vec<f64>,
    faces2: Vec<f64>,
}

fn transverse_slope(g: &SpaceTimeGrid, slice: &[f64], i: usize, k: usize, axis: usize) -> f64 {
    // centered d/dx_axis at node (i,k), one-sided 2nd order at the ends
    let m = [i, k];
    let h = g.hx;
    let last = g.cells;
    let at = |v: usize| {
        let mut mm = m;
        mm[axis] = v;
        slice[g.index(&mm)]
    };
    let p = m[axis];
    if p == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if p == last {
        (3.0 * at(last) - 4.0 * at(last - 1) + at(last - 2)) / (2.0 * h)
    } else {
        (at(p + 1) - at(p - 1)) / (2.0 * h)
    }
}

fn fluxes(g: &SpaceTimeGrid, slice: &[f64]) -> Fluxes {
    let n1 = g.nodes_per_axis();
    let h = g.hx;
    if g.sdim() == 1 {
        let mut faces1 = Vec::with_capacity(g.cells);
        for i in 0..g.cells {
            let s = (slice[i + 1] - slice[i]) / h;
            faces1.push(s / (1.0 + s * s).sqrt());
        }
        return Fluxes { faces1, faces2: Vec::new() };
    }
    // axis-1 faces: (i+1/2, k)
    let mut faces1 = vec![0.0; g.cells * n1];
    for i in 0..g.cells {
        for k in 0..n1 {
            let s1 = (slice[g.index(&[i + 1, k])] - slice[g.index(&[i, k])]) / h;
            let s2 = 0.5
                * (transverse_slope(g, slice, i, k, 1) + transverse_slope(g, slice, i + 1, k, 1));
            faces1[i * n1 + k] = s1 / (1.0 + s1 * s1 + s2 * s2).sqrt();
        }
    }
    // axis-2 faces: (i, k+1/2)
    let mut faces2 = vec![0.0; n1 * g.cells];
    for i in 0..n1 {
        for k in 0..g.cells {
            let s2 = (slice[g.index(&[i, k + 1])] - slice[g.index(&[i, k])]) / h;
            let s1 = 0.5
                * (transverse_slope(g, slice, i, k, 0) + transverse_slope(g, slice, i, k + 1, 0));
            faces2[i * g.cells + k] = s2 / (1.0 + s1 * s1 + s2 * s2).sqrt();
        }
    }
    Fluxes { faces1, faces2 }
}

/// Scalar mean curvature H = div(grad f / W) by staggered flux differences.
/// Boundary nodes use the nearest interior flux pair (first order); they only
/// feed diagnostics, never the exact identities.
pub fn mean_curvature(gf: &GraphFlow, j: usize) -> CurvatureField {
    let g = &gf.grid;
    let slice = gf.slice(j);
    let fl = fluxes(g, slice);
    let n1 = g.nodes_per_axis();
    let h = g.hx;
    let mut hval = vec![0.0; g.nodes_per_step()];
    if g.sdim() == 1 {
        for i in 0..=g.cells {
            let ic = i.clamp(1, g.cells - 1);
            hval[i] = (fl.faces1[ic] - fl.faces1[ic - 1]) / h;
        }
    } else {
        for i in 0..n1 {
            for k in 0..n1 {
                let ic = i.clamp(1, g.cells - 1);
                let kc = k.clamp(1, g.cells - 1);
                let d1 = (fl.faces1[ic * n1 + k] - fl.faces1[(ic - 1) * n1 + k]) / h;
                let d2 = (fl.faces2[i * g.cells + kc] - fl.faces2[i * g.cells + kc - 1]) / h;
                hval[g.index(&[i, k])] = d1 + d2;
            }
        }
    }
    let (nu, _) = normal_and_area(gf, j);
    let hvec = hval.iter().zip(&nu).map(|(&s, &n)| vecn::scale(n, s)).collect();
    CurvatureField { h: hval, hvec, nu }
}

/// Normal velocity v = (dt f / W) nu with the shared time stencil.
pub fn velocity(gf: &GraphFlow, j: usize) -> Result<VelocityField> {
    let g = &gf.grid;
    if g.steps < 2 {
        return Err(LabError::Invalid(
            "velocity needs at least two time steps for a 2nd-order stencil".into(),
        ));
    }
    if j > g.steps {
        return Err(LabError::Invalid(format!("time index {j} out of range")));
    }
    let stencil = if j == 0 || j == g.steps {
        TimeStencil::OneSided
    } else {
        TimeStencil::Centered
    };
    let (nu, area) = normal_and_area(gf, j);
    let mut vn = Vec::with_capacity(g.nodes_per_step());
    let mut vvec = Vec::with_capacity(g.nodes_per_step());
    for idx in 0..g.nodes_per_step() {
        let ft = grid::time_derivative_at(gf, j, idx);
        let s = ft / area[idx];
        vn.push(s);
        vvec.push(vecn::scale(nu[idx], s));
    }
    Ok(VelocityField { vn, vvec, stencil })
}

/// Discrete residual of the divergence-form identity:
/// `sum_faces grad(psi).flux + sum_nodes psi H`, with psi sampled at nodes and
/// differentiated by the same face quotients as the flux. Zero to round-off
/// for interior-supported psi.
pub fn divergence_identity_residual(gf: &GraphFlow, j: usize, psi: &TestFunction) -> Result<f64> {
    let g = &gf.grid;
    psi.check_space_support(g)?;
    let slice = gf.slice(j);
    let t = g.t(j);
    let n1 = g.nodes_per_axis();
    let h = g.hx;
    let vol = g.cell_volume();

    // node samples of psi on the graph
    let psi_node: Vec<f64> = (0..g.nodes_per_step())
        .map(|idx| {
            let c = g.coords(idx);
            psi.value(&c[..g.sdim()], slice[idx], t)
        })
        .collect();

    let fl = fluxes(g, slice);
    let curv = mean_curvature(gf, j);

    let mut term_grad = 0.0;
    if g.sdim() == 1 {
        for i in 0..g.cells {
            let dpsi = (psi_node[i + 1] - psi_node[i]) / h;
            term_grad += vol * dpsi * fl.faces1[i];
        }
    } else {
        for i in 0..g.cells {
            for k in 0..n1 {
                let dpsi = (psi_node[g.index(&[i + 1, k])] - psi_node[g.index(&[i, k])]) / h;
                term_grad += vol * dpsi * fl.faces1[i * n1 + k];
            }
        }
        for i in 0..n1 {
            for k in 0..g.cells {
                let dpsi = (psi_node[g.index(&[i, k + 1])] - psi_node[g.index(&[i, k])]) / h;
                term_grad += vol * dpsi * fl.faces2[i * g.cells + k];
            }
        }
    }

    // psi vanishes on the boundary ring, so the plain interior sum is the
    // trapezoid rule
    let mut term_psi_h = 0.0;
    for idx in 0..g.nodes_per_step() {
        if !g.is_boundary(idx) {
            term_psi_h += vol * psi_node[idx] * curv.h[idx];
        }
    }
    Ok(term_grad + term_psi_h)
}

/// Per-step entries of the interior a priori diagnostic.
#[derive(Debug, Clone)]
pub struct W22Step {
    pub hess_inner: f64,
    pub f_full: f64,
    pub h_full: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct W22Report {
    pub per_step: Vec<W22Step>,
    pub max_ratio: f64,
    /// L2-in-time aggregates of the three per-step norms.
    pub hess_l2t: f64,
    pub f_l2t: f64,
    pub h_l2t: f64,
}

/// L2 norms of the Hessian on the inner cube [-(1-s), 1-s]^{n-1}, and of f and
/// H on the full cube, per time step, with the ratio ||D2 f|| / (||f|| + ||H||).
pub fn w22_diagnostic(gf: &GraphFlow, s: f64) -> Result<W22Report> {
    let g = &gf.grid;
    if !(s > 0.0 && s < 1.0) {
        return Err(LabError::Invalid(format!("margin s must lie in (0,1), got {s}")));
    }
    if s * (g.cells as f64) < 2.0 - 1e-12 {
        return Err(LabError::Invalid(format!(
            "inner region too thin: s*N = {} < 2",
            s * g.cells as f64
        )));
    }
    let i_lo = (s / g.hx - 1e-9).ceil() as usize;
    let i_hi = g.cells - i_lo;
    let vol = g.cell_volume();
    let inner_weight = |m: &[usize; 2]| -> f64 {
        let mut w = 1.0;
        for a in 0..g.sdim() {
            if m[a] == i_lo || m[a] == i_hi {
                w *= 0.5;
            }
        }
        w
    };

    let mut per_step = Vec::with_capacity(g.steps + 1);
    let mut max_ratio: f64 = 0.0;
    let (mut sh, mut sf, mut shh) = (0.0, 0.0, 0.0);
    for j in 0..=g.steps {
        let slice = gf.slice(j);
        let curv = mean_curvature(gf, j);
        let mut hess2 = 0.0;
        for idx in 0..g.nodes_per_step() {
            let m = g.multi(idx);
            let inside = (0..g.sdim()).all(|a| m[a] >= i_lo && m[a] <= i_hi);
            if !inside {
                continue;
            }
            let d = grid::second_derivs_at(g, slice, idx);
            let frob2 = d.d11 * d.d11 + d.d22 * d.d22 + 2.0 * d.d12 * d.d12;
            hess2 += inner_weight(&m) * vol * frob2;
        }
        let mut f2 = 0.0;
        let mut h2 = 0.0;
        for idx in 0..g.nodes_per_step() {
            let w = g.trapezoid_weight(idx) * vol;
            f2 += w * slice[idx] * slice[idx];
            h2 += w * curv.h[idx] * curv.h[idx];
        }
        let (hess_inner, f_full, h_full) = (hess2.sqrt(), f2.sqrt(), h2.sqrt());
        let denom = f_full + h_full;
        let ratio = if denom > 0.0 { hess_inner / denom } else { 0.0 };
        max_ratio = max_ratio.max(ratio);
        let wt = g.time_weight(j) * g.dt;
        sh += wt * hess2;
        sf += wt * f2;
        shh += wt * h2;
        per_step.push(W22Step { hess_inner, f_full, h_full, ratio });
    }
    Ok(W22Report {
        per_step,
        max_ratio,
        hess_l2t: sh.sqrt(),
        f_l2t: sf.sqrt(),
        h_l2t: shh.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::grid::{build_grid, sample_graph};
    use crate::testfn::Profile;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flow(src: &str, n: usize, cells: usize, steps: usize, t1: f64) -> GraphFlow {
        let g = build_grid(n, cells, steps, 0.0, t1).unwrap();
        sample_graph(&Expr::parse(src).unwrap(), &g).unwrap()
    }

    #[test]
    fn flat_graph_normal_and_area() {
        let gf = flow("0", 2, 8, 2, 1.0);
        let (nu, area) = normal_and_area(&gf, 0);
        for (n, a) in nu.iter().zip(&area) {
            assert_eq!(*n, [0.0, 1.0, 0.0]);
            assert_eq!(*a, 1.0);
        }
    }

    #[test]
    fn tilted_plane_normal() {
        let gf = flow("x1", 2, 8, 2, 1.0);
        let (nu, area) = normal_and_area(&gf, 1);
        let r = 2.0_f64.sqrt();
        for (n, a) in nu.iter().zip(&area) {
            assert!((n[0] + 1.0 / r).abs() < 1e-13);
            assert!((n[1] - 1.0 / r).abs() < 1e-13);
            assert!((a - r).abs() < 1e-13);
        }
    }

    #[test]
    fn cap_apex_normal_is_vertical() {
        // f = sqrt(R^2 - x^2), R = 2: at x = 0 the symbolic gradient vanishes
        // and the centered stencil reproduces it exactly by symmetry.
        let gf = flow("sqrt(4 - x1^2)", 2, 8, 2, 1.0);
        let (nu, area) = normal_and_area(&gf, 0);
        let apex = 4; // x = 0
        assert!((nu[apex][0]).abs() < 1e-14);
        assert!((nu[apex][1] - 1.0).abs() < 1e-14);
        assert!((area[apex] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flat_graph_curvature_vanishes() {
        let gf = flow("0.3 * x1 + 0.1", 2, 16, 2, 1.0);
        let curv = mean_curvature(&gf, 0);
        for v in &curv.h {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn circle_cap_curvature_converges_second_order() {
        // |H| -> 1/R at the apex for the circle of radius 4
        let mut errs = Vec::new();
        for cells in [16usize, 32, 64] {
            let gf = flow("sqrt(16 - x1^2)", 2, cells, 2, 1.0);
            let curv = mean_curvature(&gf, 0);
            let apex = cells / 2;
            errs.push((curv.h[apex].abs() - 0.25_f64).abs());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!((3.5..=4.5).contains(&r1), "ratio {r1}");
        assert!((3.5..=4.5).contains(&r2), "ratio {r2}");
        assert!(errs[2] / 0.25 < 0.01);
    }

    #[test]
    fn sphere_cap_curvature_approaches_two_over_r() {
        let gf = flow("sqrt(16 - x1^2 - x2^2)", 3, 32, 2, 1.0);
        let curv = mean_curvature(&gf, 0);
        let g = &gf.grid;
        let apex = g.index(&[16, 16]);
        assert!((curv.h[apex].abs() - 0.5).abs() < 0.5 * 0.01);
        // concave-down cap: negative H with upward normal
        assert!(curv.h[apex] < 0.0);
        assert!(curv.nu[apex][2] > 0.0);
    }

    #[test]
    fn normals_unit_and_curvature_vector_perpendicular_to_tangents() {
        let gf = flow("0.2 * sin(2*x1) * cos(x2) + 0.1 * t", 3, 12, 4, 1.0);
        for j in [0, 2, 4] {
            let curv = mean_curvature(&gf, j);
            let slice = gf.slice(j);
            for idx in 0..gf.grid.nodes_per_step() {
                assert!((vecn::norm(curv.nu[idx]) - 1.0).abs() < 1e-14);
                let grad = grid::gradient_at(&gf.grid, slice, idx);
                for a in 0..gf.grid.sdim() {
                    let mut tangent = vecn::ZERO;
                    tangent[a] = 1.0;
                    tangent[gf.grid.sdim()] = grad[a];
                    let dot = vecn::dot(curv.hvec[idx], tangent);
                    assert!(dot.abs() < 1e-14, "node {idx}: {dot}");
                }
            }
        }
    }

    #[test]
    fn velocity_of_static_and_translating_graphs() {
        let gf = flow("x1^2", 2, 8, 4, 1.0);
        let v = velocity(&gf, 2).unwrap();
        for s in &v.vn {
            assert!(s.abs() < 1e-13);
        }

        let gf = flow("0.3 * t", 2, 8, 4, 1.0);
        let v = velocity(&gf, 2).unwrap();
        for (s, vv) in v.vn.iter().zip(&v.vvec) {
            assert!((s - 0.3).abs() < 1e-13);
            assert!((vv[1] - 0.3).abs() < 1e-13);
        }
        assert_eq!(v.stencil, TimeStencil::Centered);
        assert_eq!(velocity(&gf, 0).unwrap().stencil, TimeStencil::OneSided);
    }

    #[test]
    fn velocity_rejects_single_step_flows() {
        let gf = flow("0.3 * t", 2, 8, 1, 1.0);
        assert!(velocity(&gf, 0).is_err());
    }

    #[test]
    fn grim_reaper_unit_speed_at_center() {
        let gf = flow("t - log(cos(x1))", 2, 32, 4, 0.5);
        let v = velocity(&gf, 2).unwrap();
        let center = 16;
        assert!((v.vn[center] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_identity_zero_psi() {
        let gf = flow("x1^2", 2, 16, 2, 1.0);
        // a bump so far in time that its trace at t_0 vanishes identically
        let psi = TestFunction::bump(1, [0.0, 0.0], 0.0, 0.9, 0.2, Profile::SmoothBump);
        let r = divergence_identity_residual(&gf, 0, &psi).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn divergence_identity_exact_for_smooth_and_random_flows() {
        let g = build_grid(2, 32, 2, 0.0, 1.0).unwrap();
        let smooth = sample_graph(&Expr::parse("x1^2").unwrap(), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise: Vec<f64> = (0..g.total_nodes()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let random = GraphFlow::from_samples(g.clone(), noise).unwrap();
        let psi = TestFunction::bump(1, [0.1, 0.0], 0.0, 0.5, 0.4, Profile::SmoothBump);
        for gf in [&smooth, &random] {
            let r = divergence_identity_residual(gf, 0, &psi).unwrap();
            assert!(r.abs() <= 1e-12, "residual {r}");
        }
    }

    #[test]
    fn divergence_identity_support_gate() {
        let gf = flow("x1^2", 2, 16, 2, 1.0);
        let psi = TestFunction::bump(1, [0.9, 0.0], 0.0, 0.5, 0.4, Profile::SmoothBump);
        assert!(divergence_identity_residual(&gf, 0, &psi).is_err());
    }

    #[test]
    fn w22_norms() {
        let gf = flow("0", 2, 8, 2, 1.0);
        let rep = w22_diagnostic(&gf, 0.5).unwrap();
        for s in &rep.per_step {
            assert_eq!(s.hess_inner, 0.0);
            assert_eq!(s.f_full, 0.0);
            assert_eq!(s.h_full, 0.0);
        }

        // f = x1^2 on [-1,1], s = 1/2: D2 f = 2 exactly, inner length 1
        let gf = flow("x1^2", 2, 8, 2, 1.0);
        let rep = w22_diagnostic(&gf, 0.5).unwrap();
        assert!((rep.per_step[0].hess_inner - 2.0).abs() < 1e-13);
    }

    #[test]
    fn w22_ratio_bounded_under_refinement() {
        let mut ratios = Vec::new();
        for cells in [16usize, 32, 64] {
            let gf = flow("sqrt(16 - x1^2)", 2, cells, 2, 1.0);
            ratios.push(w22_diagnostic(&gf, 0.25).unwrap().max_ratio);
        }
        for r in &ratios {
            assert!(*r < 2.0 * ratios[0] + 1.0, "ratios {ratios:?}");
        }
    }

    #[test]
    fn w22_margin_gate() {
        let gf = flow("x1^2", 2, 8, 2, 1.0);
        assert!(w22_diagnostic(&gf, 0.1).is_err()); // s*N = 0.8 < 2
    }
}
