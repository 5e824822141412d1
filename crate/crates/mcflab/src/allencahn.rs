//! Phase-field approximation of the transported flow: the Allen-Cahn equation
//! dt phi + u.grad phi = lap phi - W'(phi)/eps^2 on the periodic box of side 2,
//! its Modica-Mortola energy measure, the phase function w = Phi(phi), and
//! interface extraction back to a graph flow.
//!
//! Time stepping is IMEX: implicit Laplacian by conjugate gradients, explicit
//! reaction gated by dt <= eps^2 / max W'', first-order upwind transport.
//! Phase orientation: initial data uses a signed distance that is positive
//! above the interface, so {w = 1} lies above the graph.

use crate::error::{LabError, Result};
use crate::expr::Expr;
use crate::geometry;
use crate::grid::{build_grid, GraphFlow};
use crate::testfn::TestFunction;
use serde::Serialize;

// ---------------------------------------------------------------------------
// Double well
// ---------------------------------------------------------------------------

/// Double-well potential vanishing exactly at +-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DoubleWell {
    /// W(s) = (1 - s^2)^2 / 2: sigma = 4/3, standing profile tanh(d/eps).
    Standard,
    /// W(s) = c (1 - s^2)^2.
    ScaledQuartic { c: f64 },
}

impl DoubleWell {
    fn scale(&self) -> f64 {
        match self {
            DoubleWell::Standard => 0.5,
            DoubleWell::ScaledQuartic { c } => *c,
        }
    }

    pub fn w(&self, s: f64) -> f64 {
        let r = 1.0 - s * s;
        self.scale() * r * r
    }

    pub fn dw(&self, s: f64) -> f64 {
        -4.0 * self.scale() * s * (1.0 - s * s)
    }

    pub fn ddw(&self, s: f64) -> f64 {
        4.0 * self.scale() * (3.0 * s * s - 1.0)
    }

    /// Unstable critical value between the wells.
    pub fn gamma(&self) -> f64 {
        0.0
    }

    /// Convexity threshold: W'' >= kappa for alpha_w <= |s| <= 1.
    pub fn alpha_w(&self) -> f64 {
        0.8
    }

    pub fn kappa(&self) -> f64 {
        self.ddw(self.alpha_w())
    }

    /// Max W'' over the admissible phase range (with overshoot allowance).
    pub fn max_ddw(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..=200 {
            let s = -1.05 + k as f64 * 0.0105;
            m = m.max(self.ddw(s).abs());
        }
        m
    }

    /// Decay rate of the standing profile tanh(rate * d / eps).
    pub fn profile_rate(&self) -> f64 {
        (2.0 * self.scale()).sqrt()
    }

    /// Sampling checks of the structural assumptions.
    pub fn validate(&self) -> Result<()> {
        if self.w(1.0).abs() > 1e-12 || self.w(-1.0).abs() > 1e-12 {
            return Err(LabError::Invalid("double well must vanish at +-1".into()));
        }
        let gamma = self.gamma();
        for k in 0..=400 {
            let s = -1.5 + k as f64 * (3.0 / 400.0);
            if self.w(s) < -1e-14 {
                return Err(LabError::Invalid(format!("double well negative at {s}")));
            }
            if s > gamma + 1e-3 && s < 1.0 - 1e-3 && self.dw(s) >= 0.0 {
                return Err(LabError::Invalid(format!("W' not negative at {s}")));
            }
            if s > -1.0 + 1e-3 && s < gamma - 1e-3 && self.dw(s) <= 0.0 {
                return Err(LabError::Invalid(format!("W' not positive at {s}")));
            }
            if (self.alpha_w()..=1.0).contains(&s.abs()) && self.ddw(s) < self.kappa() - 1e-12 {
                return Err(LabError::Invalid(format!("W'' below kappa at {s}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// sigma and Phi
// ---------------------------------------------------------------------------

/// Normalized phase rescaling Phi(s) = (1/sigma) int_{-1}^s sqrt(2 W).
/// Tabulated with anchored endpoints: Phi(-1) = 0 and Phi(1) = 1 exactly.
#[derive(Debug, Clone)]
pub struct Phi {
    pub sigma: f64,
    table_lo: f64,
    table_h: f64,
    cumulative: Vec<f64>,
    at_minus1: f64,
    at_plus1: f64,
    well: DoubleWell,
}

const PHI_TABLE_CELLS: usize = 10_000;
const PHI_OVERHANG: f64 = 0.05;

impl Phi {
    fn cumulative_at(&self, s: f64) -> f64 {
        let hi = self.table_lo + self.table_h * (self.cumulative.len() - 1) as f64;
        let s = s.clamp(self.table_lo, hi);
        let pos = (s - self.table_lo) / self.table_h;
        let i = (pos.floor() as usize).min(self.cumulative.len() - 2);
        let frac = pos - i as f64;
        self.cumulative[i] * (1.0 - frac) + self.cumulative[i + 1] * frac
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.cumulative_at(s) - self.at_minus1) / (self.at_plus1 - self.at_minus1)
    }

    /// Phi'(s) = sqrt(2 W(s)) / sigma.
    pub fn deriv(&self, s: f64) -> f64 {
        (2.0 * self.well.w(s)).sqrt() / self.sigma
    }
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let simpson = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    };
    let whole = simpson(a, b);
    let left = simpson(a, m);
    let right = simpson(m, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, tol / 2.0, depth - 1)
            + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

/// Surface tension sigma = int_{-1}^{1} sqrt(2 W) by adaptive quadrature, and
/// the tabulated Phi with exact endpoint normalization.
pub fn sigma_and_phi(well: DoubleWell) -> Result<(f64, Phi)> {
    well.validate()?;
    let integrand = |s: f64| (2.0 * well.w(s)).sqrt();
    let sigma = adaptive_simpson(&integrand, -1.0, 1.0, 1e-10, 40);
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(LabError::Invalid(format!("bad surface tension {sigma}")));
    }
    let lo = -1.0 - PHI_OVERHANG;
    let hi = 1.0 + PHI_OVERHANG;
    let h = (hi - lo) / PHI_TABLE_CELLS as f64;
    let mut cumulative = Vec::with_capacity(PHI_TABLE_CELLS + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    let mut prev = integrand(lo);
    for k in 1..=PHI_TABLE_CELLS {
        let s = lo + k as f64 * h;
        let cur = integrand(s);
        acc += 0.5 * (prev + cur) * h;
        cumulative.push(acc);
        prev = cur;
    }
    let mut phi = Phi {
        sigma,
        table_lo: lo,
        table_h: h,
        cumulative,
        at_minus1: 0.0,
        at_plus1: 1.0,
        well,
    };
    phi.at_minus1 = phi.cumulative_at(-1.0);
    phi.at_plus1 = phi.cumulative_at(1.0);
    Ok((sigma, phi))
}

// ---------------------------------------------------------------------------
// Periodic grid and fields
// ---------------------------------------------------------------------------

/// Periodic cube of side 2 with `cells` nodes per axis (no duplicate endpoint).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcGrid {
    pub dim: usize,
    pub cells: usize,
    pub hx: f64,
}

impl AcGrid {
    pub fn new(dim: usize, cells: usize) -> Result<AcGrid> {
        if !(1..=2).contains(&dim) {
            return Err(LabError::Invalid(format!(
                "phase-field dimension must be 1 or 2, got {dim}"
            )));
        }
        if cells < 8 {
            return Err(LabError::Invalid("need at least 8 cells per axis".into()));
        }
        Ok(AcGrid { dim, cells, hx: 2.0 / cells as f64 })
    }

    pub fn nodes(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn x(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.hx
    }

    pub fn index(&self, m: &[usize]) -> usize {
        match self.dim {
            1 => m[0],
            _ => m[0] * self.cells + m[1],
        }
    }

    pub fn multi(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.cells, idx % self.cells],
        }
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let m = self.multi(idx);
        [self.x(m[0]), if self.dim == 2 { self.x(m[1]) } else { 0.0 }]
    }

    fn shift(&self, idx: usize, axis: usize, by: isize) -> usize {
        let mut m = self.multi(idx);
        let n = self.cells as isize;
        m[axis] = ((m[axis] as isize + by).rem_euclid(n)) as usize;
        self.index(&m[..self.dim])
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx.powi(self.dim as i32)
    }
}

/// Transport field on the periodic box, closed form in (x, t).
#[derive(Debug, Clone)]
pub enum AcField {
    Zero,
    ClosedForm(Vec<Expr>),
}

impl AcField {
    pub fn closed_form(comps: Vec<Expr>, dim: usize) -> Result<AcField> {
        if comps.len() != dim {
            return Err(LabError::Invalid(format!(
                "transport field needs {dim} components, got {}",
                comps.len()
            )));
        }
        for c in &comps {
            c.validate(dim, true)?;
        }
        Ok(AcField::ClosedForm(comps))
    }

    pub fn at(&self, grid: &AcGrid, idx: usize, t: f64) -> [f64; 2] {
        match self {
            AcField::Zero => [0.0, 0.0],
            AcField::ClosedForm(comps) => {
                let c = grid.coords(idx);
                let mut out = [0.0, 0.0];
                for (a, e) in comps.iter().enumerate() {
                    out[a] = e.eval_ambient(&c[..grid.dim], c[grid.dim - 1], t);
                }
                out
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, AcField::Zero)
    }
}

/// Initial phase from a closed-form signed distance (positive above/outside);
/// the well's own standing profile shape.
pub fn initial_profile(d0: &Expr, grid: &AcGrid, well: DoubleWell, eps: f64) -> Result<Vec<f64>> {
    d0.validate(grid.dim, true)?;
    let rate = well.profile_rate();
    let mut out = Vec::with_capacity(grid.nodes());
    for idx in 0..grid.nodes() {
        let c = grid.coords(idx);
        let d = d0.eval_ambient(&c[..grid.dim], c[grid.dim - 1], 0.0);
        if !d.is_finite() {
            return Err(LabError::NonFinite(format!("initial distance at node {idx}")));
        }
        out.push((rate * d / eps).tanh().clamp(-1.0, 1.0));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Time stepping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AcParams {
    pub eps: f64,
    pub dt: f64,
    pub well: DoubleWell,
    pub u: AcField,
    pub lin_tol: f64,
    pub lin_maxiter: usize,
}

impl AcParams {
    pub fn new(eps: f64, dt: f64, well: DoubleWell, u: AcField) -> AcParams {
        AcParams { eps, dt, well, u, lin_tol: 1e-12, lin_maxiter: 4000 }
    }
}

fn laplacian(grid: &AcGrid, phi: &[f64], idx: usize) -> f64 {
    let h2 = grid.hx * grid.hx;
    let mut acc = 0.0;
    for a in 0..grid.dim {
        acc += (phi[grid.shift(idx, a, 1)] - 2.0 * phi[idx] + phi[grid.shift(idx, a, -1)]) / h2;
    }
    acc
}

/// Plain conjugate gradients on (I - dt lap); the operator is SPD with a
/// constant diagonal, so preconditioning is a no-op.
fn cg_helmholtz(
    grid: &AcGrid,
    dt: f64,
    rhs: &[f64],
    x0: Vec<f64>,
    tol: f64,
    maxiter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        for idx in 0..n {
            out[idx] = v[idx] - dt * laplacian(grid, v, idx);
        }
    };
    let mut x = x0;
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    if rs.sqrt() <= tol * bnorm {
        return Ok((x, 0));
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=maxiter {
        apply(&p, &mut ap);
        let alpha = rs / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new.sqrt() <= tol * bnorm {
            return Ok((x, it));
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(LabError::LinearSolve(format!("cg did not converge in {maxiter} iterations")))
}

/// One IMEX step: implicit Laplacian, explicit reaction and upwind transport.
pub fn ac_step(grid: &AcGrid, phi: &[f64], t: f64, p: &AcParams) -> Result<(Vec<f64>, usize)> {
    let eps2 = p.eps * p.eps;
    let gate = eps2 / p.well.max_ddw();
    if p.dt > gate + 1e-15 {
        return Err(LabError::TimeStep(format!(
            "explicit reaction needs dt <= eps^2/maxW'' = {gate}, got {}",
            p.dt
        )));
    }
    let mut rhs = Vec::with_capacity(phi.len());
    let mut max_u: f64 = 0.0;
    for idx in 0..phi.len() {
        let mut v = phi[idx] - p.dt * p.well.dw(phi[idx]) / eps2;
        if !p.u.is_zero() {
            let uv = p.u.at(grid, idx, t);
            for a in 0..grid.dim {
                max_u = max_u.max(uv[a].abs());
                // upwind difference against the transport direction
                let d = if uv[a] > 0.0 {
                    (phi[idx] - phi[grid.shift(idx, a, -1)]) / grid.hx
                } else {
                    (phi[grid.shift(idx, a, 1)] - phi[idx]) / grid.hx
                };
                v -= p.dt * uv[a] * d;
            }
        }
        rhs.push(v);
    }
    if max_u * p.dt > grid.hx {
        return Err(LabError::TimeStep(format!(
            "upwind transport needs |u| dt <= hx, got {}",
            max_u * p.dt
        )));
    }
    let (next, iters) = cg_helmholtz(grid, p.dt, &rhs, phi.to_vec(), p.lin_tol, p.lin_maxiter)?;
    let overshoot = next.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    if overshoot > 1.05 {
        return Err(LabError::Invalid(format!(
            "phase overshoot |phi| = {overshoot} beyond 1.05"
        )));
    }
    Ok((next, iters))
}

/// Discrete Modica-Mortola energy with forward-difference gradients.
pub fn energy(grid: &AcGrid, phi: &[f64], well: DoubleWell, eps: f64) -> f64 {
    let vol = grid.cell_volume();
    let mut e = 0.0;
    for idx in 0..phi.len() {
        let mut g2 = 0.0;
        for a in 0..grid.dim {
            let d = (phi[grid.shift(idx, a, 1)] - phi[idx]) / grid.hx;
            g2 += d * d;
        }
        e += vol * (eps * g2 / 2.0 + well.w(phi[idx]) / eps);
    }
    e
}

/// Normalized energy density (the interface measure): (eps|grad|^2/2 + W/eps)/sigma.
pub fn energy_density(grid: &AcGrid, phi: &[f64], well: DoubleWell, eps: f64, sigma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(phi.len());
    for idx in 0..phi.len() {
        let mut g2 = 0.0;
        for a in 0..grid.dim {
            let d = (phi[grid.shift(idx, a, 1)] - phi[idx]) / grid.hx;
            g2 += d * d;
        }
        out.push((eps * g2 / 2.0 + well.w(phi[idx]) / eps) / sigma);
    }
    out
}

pub fn phase_function(phi: &[f64], rescale: &Phi) -> Vec<f64> {
    phi.iter().map(|&s| rescale.eval(s)).collect()
}

// ---------------------------------------------------------------------------
// Runs and extraction
// ---------------------------------------------------------------------------

/// Interface tracking along the last axis: upward (- to +) zero crossing
/// nearest to the previous height per column.
#[derive(Debug, Clone)]
pub struct TrackCfg {
    pub init_height: f64,
    pub window: f64,
}

#[derive(Debug, Clone)]
pub struct AcRun {
    pub grid: AcGrid,
    pub eps: f64,
    pub well: DoubleWell,
    pub sigma: f64,
    pub phi_fn: Phi,
    /// Snapshot times (uniform spacing).
    pub times: Vec<f64>,
    pub snaps: Vec<Vec<f64>>,
    /// Energy at every time step, not only snapshots.
    pub energies: Vec<f64>,
    pub dissipation_ok: bool,
    pub max_overshoot: f64,
    /// Extracted interface where tracking was requested and stayed graphical.
    pub track: Option<GraphFlow>,
    pub cg_iters_max: usize,
}

/// March the phase field to t_end, keeping a snapshot every `snap_every`
/// steps, checking energy dissipation (u = 0) at every step, and extracting
/// the tracked interface when requested.
pub fn run_and_extract(
    grid: &AcGrid,
    phi0: Vec<f64>,
    params: &AcParams,
    t_end: f64,
    snap_every: usize,
    track: Option<TrackCfg>,
) -> Result<AcRun> {
    if phi0.len() != grid.nodes() {
        return Err(LabError::Invalid("initial phase has wrong shape".into()));
    }
    if snap_every == 0 {
        return Err(LabError::Invalid("snap_every must be positive".into()));
    }
    let steps = (t_end / params.dt).round() as usize;
    if steps == 0 || ((steps as f64) * params.dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(LabError::Invalid(format!(
            "t_end = {t_end} is not an integer number of steps of dt = {}",
            params.dt
        )));
    }
    if steps % snap_every != 0 {
        return Err(LabError::Invalid("snap_every must divide the step count".into()));
    }
    let (sigma, phi_fn) = sigma_and_phi(params.well)?;
    let e0 = energy(grid, &phi0, params.well, params.eps);
    let mut energies = vec![e0];
    let mut dissipation_ok = true;
    let mut max_overshoot = phi0.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    let mut snaps = vec![phi0.clone()];
    let mut times = vec![0.0];
    let mut phi = phi0;
    let mut cg_iters_max = 0;
    for k in 0..steps {
        let t = k as f64 * params.dt;
        let (next, iters) = ac_step(grid, &phi, t, params)?;
        cg_iters_max = cg_iters_max.max(iters);
        let e = energy(grid, &next, params.well, params.eps);
        if params.u.is_zero() && e > energies.last().unwrap() + 1e-10 * e0.max(1.0) {
            dissipation_ok = false;
        }
        energies.push(e);
        max_overshoot = max_overshoot.max(next.iter().map(|v| v.abs()).fold(0.0_f64, f64::max));
        phi = next;
        if (k + 1) % snap_every == 0 {
            snaps.push(phi.clone());
            times.push((k + 1) as f64 * params.dt);
        }
    }

    let track = match track {
        None => None,
        Some(cfg) => Some(extract_graph(grid, &snaps, &times, &cfg)?),
    };
    Ok(AcRun {
        grid: grid.clone(),
        eps: params.eps,
        well: params.well,
        sigma,
        phi_fn,
        times,
        snaps,
        energies,
        dissipation_ok,
        max_overshoot,
        track,
        cg_iters_max,
    })
}

/// Upward zero crossings of one column, by linear interpolation on the edges.
fn column_crossings(grid: &AcGrid, phi: &[f64], col: usize) -> Vec<f64> {
    let n = grid.cells;
    let mut out = Vec::new();
    for k in 0..n {
        let idx = grid.index(&[col, k]);
        let up = grid.index(&[col, (k + 1) % n]);
        let (a, b) = (phi[idx], phi[up]);
        if a < 0.0 && b >= 0.0 {
            let theta = a / (a - b);
            out.push(grid.x(k) + theta * grid.hx);
        }
    }
    out
}

fn extract_graph(
    grid: &AcGrid,
    snaps: &[Vec<f64>],
    times: &[f64],
    cfg: &TrackCfg,
) -> Result<GraphFlow> {
    if grid.dim != 2 {
        return Err(LabError::Tracking("graph extraction needs a 2-d phase field".into()));
    }
    let n = grid.cells;
    let mut prev = vec![cfg.init_height; n];
    let mut heights = Vec::with_capacity(snaps.len() * (n + 1));
    for (k, snap) in snaps.iter().enumerate() {
        for (col, prev_h) in prev.iter_mut().enumerate() {
            let crossings = column_crossings(grid, snap, col);
            let best = crossings
                .iter()
                .cloned()
                .filter(|h| (*h - *prev_h).abs() <= cfg.window)
                .min_by(|a, b| {
                    (a - *prev_h).abs().partial_cmp(&(b - *prev_h).abs()).unwrap()
                });
            match best {
                Some(h) => {
                    *prev_h = h;
                    heights.push(h);
                }
                None => {
                    return Err(LabError::Tracking(format!(
                        "interface left the graphical window at t = {} (column {col})",
                        times[k]
                    )));
                }
            }
        }
        // duplicate the periodic seam so the heights live on the closed cube
        let first = heights[heights.len() - n];
        heights.push(first);
    }
    let steps = times.len() - 1;
    if steps == 0 {
        return Err(LabError::Tracking("need at least two snapshots to build a flow".into()));
    }
    let g = build_grid(2, n, steps, times[0], *times.last().unwrap())?;
    GraphFlow::from_samples(g, heights)
}

/// Mean distance of all zero crossings from a center point (radius of a
/// shrinking circle).
pub fn mean_radius(grid: &AcGrid, phi: &[f64], center: [f64; 2]) -> Option<f64> {
    if grid.dim != 2 {
        return None;
    }
    let n = grid.cells;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut edge = |a: f64, b: f64, ax: f64, ay: f64, bx: f64, by: f64| {
        if (a < 0.0) != (b < 0.0) {
            let theta = a / (a - b);
            let x = ax + theta * (bx - ax);
            let y = ay + theta * (by - ay);
            sum += ((x - center[0]).powi(2) + (y - center[1]).powi(2)).sqrt();
            count += 1;
        }
    };
    for i in 0..n {
        for k in 0..n {
            let here = phi[grid.index(&[i, k])];
            let right = phi[grid.index(&[(i + 1) % n, k])];
            let up = phi[grid.index(&[i, (k + 1) % n])];
            let (x, y) = (grid.x(i), grid.x(k));
            edge(here, right, x, y, x + grid.hx, y);
            edge(here, up, x, y, x, y + grid.hx);
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

// ---------------------------------------------------------------------------
// Weak checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TderivReport {
    pub lhs: f64,
    pub middle: f64,
    pub rhs: f64,
    /// 2 sigma^{-1/2} D with D the dissipation factor; middle <= constant * rhs.
    pub chain_constant: f64,
    /// Empirical constant lhs / rhs, bounded across an eps sweep.
    pub empirical: f64,
}

/// Half-step discrete form of the time-derivative bound for w = Phi(phi):
/// iint |psi dt w| <= 2/sigma (iint psi^2 W/eps)^{1/2} (iint eps (dt phi)^2/2)^{1/2}
/// <= C (iint psi^2 dmu dt)^{1/2}. Both inequalities are exact discrete
/// Cauchy-Schwarz when every factor is evaluated at snapshot midpoints.
pub fn tderiv_bound_check(run: &AcRun, psi: &TestFunction) -> Result<TderivReport> {
    let g = &run.grid;
    if g.dim != psi.sdim() + 1 {
        return Err(LabError::Invalid("test function dimension mismatch".into()));
    }
    let vol = g.cell_volume();
    let eps = run.eps;
    let sigma = run.sigma;
    let mut lhs = 0.0;
    let mut s_w = 0.0;
    let mut s_d = 0.0;
    let mut s_mu = 0.0;
    for k in 0..run.times.len() - 1 {
        let dt = run.times[k + 1] - run.times[k];
        let tmid = 0.5 * (run.times[k] + run.times[k + 1]);
        let (a, b) = (&run.snaps[k], &run.snaps[k + 1]);
        for idx in 0..g.nodes() {
            let c = g.coords(idx);
            let pv = psi.value(&c[..g.dim - 1], c[g.dim - 1], tmid);
            if pv == 0.0 {
                continue;
            }
            let mid = 0.5 * (a[idx] + b[idx]);
            let dphi = (b[idx] - a[idx]) / dt;
            let wmid = run.well.w(mid);
            let m = vol * dt;
            lhs += pv.abs() * (2.0 * wmid).sqrt() / sigma * dphi.abs() * m;
            s_w += pv * pv * wmid / eps * m;
            let mut g2 = 0.0;
            for ax in 0..g.dim {
                let nb = g.shift(idx, ax, 1);
                let d = (0.5 * (a[nb] + b[nb]) - mid) / g.hx;
                g2 += d * d;
            }
            s_mu += pv * pv * (eps * g2 / 2.0 + wmid / eps) / sigma * m;
            s_d += eps * dphi * dphi / 2.0 * m;
        }
    }
    // the dissipation factor integrates over the whole domain, not psi's support
    s_d = 0.0;
    for k in 0..run.times.len() - 1 {
        let dt = run.times[k + 1] - run.times[k];
        let (a, b) = (&run.snaps[k], &run.snaps[k + 1]);
        for idx in 0..g.nodes() {
            let dphi = (b[idx] - a[idx]) / dt;
            s_d += eps * dphi * dphi / 2.0 * vol * dt;
        }
    }
    let middle = 2.0 / sigma * s_w.sqrt() * s_d.sqrt();
    let rhs = s_mu.sqrt();
    let chain_constant = 2.0 / sigma.sqrt() * s_d.sqrt();
    let empirical = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(TderivReport { lhs, middle, rhs, chain_constant, empirical })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VelocityFormulaReport {
    /// iint psi dt(w) dx dt (half-step pairing).
    pub pairing: f64,
    /// -iint w dt(psi) dx dt with matching half-step differences.
    pub byparts: f64,
    pub byparts_gap: f64,
    /// Sharp-interface pairing iint psi vn W dx dt on the extracted graph.
    pub sharp: f64,
    /// |pairing + sharp|: with {w = 1} above the graph the signs are opposite.
    pub sharp_gap: f64,
}

pub fn velocity_formula_check(run: &AcRun, psi: &TestFunction) -> Result<VelocityFormulaReport> {
    let g = &run.grid;
    if g.dim != psi.sdim() + 1 {
        return Err(LabError::Invalid("test function dimension mismatch".into()));
    }
    if !psi.cylindrical {
        return Err(LabError::Invalid(
            "sharp-interface comparison needs a cylindrical psi".into(),
        ));
    }
    let k_last = run.times.len() - 1;
    if k_last < 2 {
        return Err(LabError::Invalid("need at least three snapshots".into()));
    }
    let delta = run.times[1] - run.times[0];
    // support strictly inside the half-step lattice so the Abel sum telescopes
    let lo = run.times[0] + 0.5 * delta;
    let hi = run.times[k_last] - 0.5 * delta;
    if psi.center_t - psi.time_halfwidth() <= lo || psi.center_t + psi.time_halfwidth() >= hi {
        return Err(LabError::Support(
            "time support must stay inside the interior snapshot half-steps".into(),
        ));
    }
    let vol = g.cell_volume();
    let w_fields: Vec<Vec<f64>> =
        run.snaps.iter().map(|s| phase_function(s, &run.phi_fn)).collect();

    let psi_at = |idx: usize, t: f64| {
        let c = g.coords(idx);
        psi.value(&c[..g.dim - 1], c[g.dim - 1], t)
    };

    let mut pairing = 0.0;
    for k in 0..k_last {
        let tmid = 0.5 * (run.times[k] + run.times[k + 1]);
        for idx in 0..g.nodes() {
            let pv = psi_at(idx, tmid);
            if pv != 0.0 {
                pairing += pv * (w_fields[k + 1][idx] - w_fields[k][idx]) * vol;
            }
        }
    }
    let mut byparts = 0.0;
    for k in 1..k_last {
        let t_plus = 0.5 * (run.times[k] + run.times[k + 1]);
        let t_minus = 0.5 * (run.times[k - 1] + run.times[k]);
        for idx in 0..g.nodes() {
            let dpsi = psi_at(idx, t_plus) - psi_at(idx, t_minus);
            if dpsi != 0.0 {
                byparts -= w_fields[k][idx] * dpsi * vol;
            }
        }
    }

    let sharp = match &run.track {
        None => f64::NAN,
        Some(flow) => {
            let fg = &flow.grid;
            let mut acc = 0.0;
            for j in 0..=fg.steps {
                let t = fg.t(j);
                let vel = geometry::velocity(flow, j)?;
                let (_, area) = geometry::normal_and_area(flow, j);
                let wt = fg.time_weight(j) * fg.dt;
                for idx in 0..fg.nodes_per_step() {
                    let c = fg.coords(idx);
                    let pv = psi.value(&c[..1], flow.value(j, idx), t);
                    acc += wt
                        * fg.trapezoid_weight(idx)
                        * fg.cell_volume()
                        * pv
                        * vel.vn[idx]
                        * area[idx];
                }
            }
            acc
        }
    };
    Ok(VelocityFormulaReport {
        pairing,
        byparts,
        byparts_gap: (pairing - byparts).abs(),
        sharp,
        sharp_gap: (pairing + sharp).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::Profile;

    #[test]
    fn sigma_of_standard_well() {
        let (sigma, phi) = sigma_and_phi(DoubleWell::Standard).unwrap();
        assert!((sigma - 4.0 / 3.0).abs() < 1e-8, "{sigma}");
        assert_eq!(phi.eval(-1.0), 0.0);
        assert_eq!(phi.eval(1.0), 1.0);
        assert!((phi.eval(0.0) - 0.5).abs() < 1e-8);
        let (s2, _) = sigma_and_phi(DoubleWell::ScaledQuartic { c: 2.0 }).unwrap();
        assert!((s2 - 8.0 / 3.0).abs() < 1e-8, "{s2}");
    }

    #[test]
    fn phi_monotone() {
        let (_, phi) = sigma_and_phi(DoubleWell::Standard).unwrap();
        let mut prev = phi.eval(-1.05);
        for k in 0..=420 {
            let s = -1.05 + k as f64 * 0.005;
            let v = phi.eval(s);
            assert!(v >= prev - 1e-14, "not monotone at {s}");
            prev = v;
        }
    }

    #[test]
    fn well_shape_checks() {
        DoubleWell::Standard.validate().unwrap();
        DoubleWell::ScaledQuartic { c: 0.25 }.validate().unwrap();
        let w = DoubleWell::Standard;
        assert_eq!(w.w(1.0), 0.0);
        assert_eq!(w.w(-1.0), 0.0);
        assert!((w.kappa() - 1.84).abs() < 1e-12);
        assert!((w.profile_rate() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn initial_profile_saturation_and_zero() {
        let grid = AcGrid::new(1, 64).unwrap();
        let d0 = Expr::parse("xn").unwrap(); // flat interface at xn = 0
        let phi = initial_profile(&d0, &grid, DoubleWell::Standard, 0.05).unwrap();
        let zero_node = 32; // x = 0
        assert!(phi[zero_node].abs() < 1e-12);
        assert!((phi[48] - 1.0).abs() < 1e-8); // x = 0.5, far above
        assert!((phi[16] + 1.0).abs() < 1e-8); // x = -0.5
    }

    #[test]
    fn profile_energy_approaches_sigma() {
        // band configuration, two interfaces; energy ~ 2 sigma
        let grid = AcGrid::new(1, 2000).unwrap();
        let d0 = Expr::parse("min(x1 + 0.5, 0.5 - x1)").unwrap();
        let eps = 0.02;
        let phi = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
        let e = energy(&grid, &phi, DoubleWell::Standard, eps);
        let sigma = 4.0 / 3.0;
        assert!((e / 2.0 - sigma).abs() < 0.02 * sigma, "E/2 = {}", e / 2.0);
    }

    #[test]
    fn equipartition_of_the_standing_profile() {
        let grid = AcGrid::new(1, 2000).unwrap();
        let d0 = Expr::parse("min(x1 + 0.5, 0.5 - x1)").unwrap();
        let mut defects = Vec::new();
        for eps in [0.04, 0.02] {
            let phi = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
            let mut defect = 0.0;
            for idx in 0..grid.nodes() {
                let d = (phi[grid.shift(idx, 0, 1)] - phi[idx]) / grid.hx;
                defect +=
                    grid.cell_volume() * (eps * d * d / 2.0 - DoubleWell::Standard.w(phi[idx]) / eps).abs();
            }
            defects.push(defect);
        }
        assert!(defects[1] < defects[0], "{defects:?}");
        assert!(defects[1] < 0.05, "{defects:?}");
    }

    #[test]
    fn equilibria_are_preserved() {
        let grid = AcGrid::new(1, 64).unwrap();
        let p = AcParams::new(0.1, 0.002, DoubleWell::Standard, AcField::Zero);
        for init in [1.0, -1.0, 0.0] {
            let phi = vec![init; grid.nodes()];
            let (next, _) = ac_step(&grid, &phi, 0.0, &p).unwrap();
            for v in &next {
                assert!((v - init).abs() < 1e-12, "init {init}");
            }
        }
    }

    #[test]
    fn time_step_gate() {
        let grid = AcGrid::new(1, 64).unwrap();
        let p = AcParams::new(0.05, 0.01, DoubleWell::Standard, AcField::Zero);
        let phi = vec![0.5; grid.nodes()];
        assert!(matches!(ac_step(&grid, &phi, 0.0, &p), Err(LabError::TimeStep(_))));
    }

    #[test]
    fn standing_profile_zero_stays_pinned() {
        let grid = AcGrid::new(1, 256).unwrap();
        let eps = 0.05;
        let d0 = Expr::parse("min(x1 + 0.5, 0.5 - x1)").unwrap();
        let phi0 = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
        let dt = eps * eps / DoubleWell::Standard.max_ddw() * 0.9;
        let p = AcParams::new(eps, dt, DoubleWell::Standard, AcField::Zero);
        let mut phi = phi0;
        for k in 0..100 {
            let (next, _) = ac_step(&grid, &phi, k as f64 * dt, &p).unwrap();
            phi = next;
        }
        let n = grid.cells;
        let mut crossings = Vec::new();
        for k in 0..n {
            let (a, b) = (phi[k], phi[(k + 1) % n]);
            if (a < 0.0) != (b < 0.0) {
                crossings.push(grid.x(k) + grid.hx * a / (a - b));
            }
        }
        assert_eq!(crossings.len(), 2, "{crossings:?}");
        for c in crossings {
            assert!((c.abs() - 0.5).abs() <= grid.hx, "crossing {c} drifted more than hx");
        }
    }

    #[test]
    fn maximum_principle_and_dissipation() {
        let grid = AcGrid::new(2, 48).unwrap();
        let eps = 0.12;
        let d0 = Expr::parse("sqrt(x1^2 + xn^2) - 0.5").unwrap();
        let phi0 = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
        let dt = eps * eps / DoubleWell::Standard.max_ddw() * 0.95;
        let p = AcParams::new(eps, dt, DoubleWell::Standard, AcField::Zero);
        let run = run_and_extract(&grid, phi0, &p, 20.0 * dt, 5, None).unwrap();
        assert!(run.dissipation_ok);
        assert!(run.max_overshoot <= 1.0 + 1e-12, "{}", run.max_overshoot);
        for w in run.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * run.energies[0]);
        }
    }

    #[test]
    fn flat_interface_extraction_stays_flat() {
        let grid = AcGrid::new(2, 64).unwrap();
        let eps = 0.1;
        let d0 = Expr::parse("min(xn + 0.25, 0.75 - xn)").unwrap();
        let phi0 = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
        let dt = eps * eps / DoubleWell::Standard.max_ddw() * 0.9;
        let p = AcParams::new(eps, dt, DoubleWell::Standard, AcField::Zero);
        let run = run_and_extract(
            &grid,
            phi0,
            &p,
            20.0 * dt,
            5,
            Some(TrackCfg { init_height: -0.25, window: 0.2 }),
        )
        .unwrap();
        let flow = run.track.unwrap();
        for j in 0..=flow.grid.steps {
            for idx in 0..flow.grid.nodes_per_step() {
                assert!(
                    (flow.value(j, idx) + 0.25).abs() <= grid.hx,
                    "height {} at ({j}, {idx})",
                    flow.value(j, idx)
                );
            }
        }
    }

    #[test]
    fn byparts_gap_is_roundoff() {
        let grid = AcGrid::new(2, 48).unwrap();
        let eps = 0.12;
        let d0 = Expr::parse("min(xn + 0.25, 0.75 - xn)").unwrap();
        let phi0 = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
        let dt = eps * eps / DoubleWell::Standard.max_ddw() * 0.9;
        let u = AcField::closed_form(
            vec![Expr::parse("0").unwrap(), Expr::parse("0.2").unwrap()],
            2,
        )
        .unwrap();
        let p = AcParams::new(eps, dt, DoubleWell::Standard, u);
        let steps = 40;
        let run = run_and_extract(
            &grid,
            phi0,
            &p,
            steps as f64 * dt,
            2,
            Some(TrackCfg { init_height: -0.25, window: 0.2 }),
        )
        .unwrap();
        let t_end = steps as f64 * dt;
        let psi = TestFunction::cylindrical(
            1,
            [0.0, 0.0],
            0.5 * t_end,
            (0.3 * t_end).sqrt(),
            Profile::SmoothBump,
        );
        let rep = velocity_formula_check(&run, &psi).unwrap();
        assert!(rep.byparts_gap <= 1e-12 * rep.pairing.abs().max(1.0), "{rep:?}");
    }

    #[test]
    fn tderiv_chain_is_exact_cauchy_schwarz() {
        let grid = AcGrid::new(2, 48).unwrap();
        let eps = 0.12;
        let d0 = Expr::parse("sqrt(x1^2 + xn^2) - 0.5").unwrap();
        let phi0 = initial_profile(&d0, &grid, DoubleWell::Standard, eps).unwrap();
        let dt = eps * eps / DoubleWell::Standard.max_ddw() * 0.9;
        let p = AcParams::new(eps, dt, DoubleWell::Standard, AcField::Zero);
        let steps = 20;
        let run = run_and_extract(&grid, phi0, &p, steps as f64 * dt, 5, None).unwrap();
        let t_end = steps as f64 * dt;
        let psi = TestFunction::cylindrical(
            1,
            [0.0, 0.0],
            0.5 * t_end,
            (0.3 * t_end).sqrt(),
            Profile::SmoothBump,
        );
        let rep = tderiv_bound_check(&run, &psi).unwrap();
        assert!(rep.lhs <= rep.middle * (1.0 + 1e-12), "{rep:?}");
        assert!(rep.middle <= rep.chain_constant * rep.rhs * (1.0 + 1e-12), "{rep:?}");
        assert!(rep.lhs > 0.0);
    }

    #[test]
    fn stationary_phase_gives_zero_pairings() {
        let grid = AcGrid::new(2, 48).unwrap();
        let eps = 0.12;
        let phi0 = vec![1.0; grid.nodes()];
        let dt = eps * eps / DoubleWell::Standard.max_ddw() * 0.9;
        let p = AcParams::new(eps, dt, DoubleWell::Standard, AcField::Zero);
        let run = run_and_extract(&grid, phi0, &p, 20.0 * dt, 5, None).unwrap();
        let t_end = 20.0 * dt;
        let psi = TestFunction::cylindrical(
            1,
            [0.0, 0.0],
            0.5 * t_end,
            (0.3 * t_end).sqrt(),
            Profile::SmoothBump,
        );
        let rep = tderiv_bound_check(&run, &psi).unwrap();
        assert_eq!(rep.lhs, 0.0);
    }
}
