//! Space-time grids on the cube [-1,1]^{n-1}, sampled height functions, and
//! the discrete parabolic Hölder seminorm.
//!
//! One stencil convention is shared by every module: 2nd-order centered
//! differences in the interior, 2nd-order one-sided at the boundary.

use crate::error::{LabError, Result};
use crate::expr::Expr;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const MIN_CELLS: usize = 4;

/// Tensor-product discretization of [-1,1]^{n-1} x [t0,t1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeGrid {
    /// Ambient dimension, 2 or 3 (surface dimension n-1).
    pub n: usize,
    /// Cells per spatial axis; hx = 2/N exactly.
    pub cells: usize,
    /// Time steps; dt = (t1-t0)/M.
    pub steps: usize,
    pub hx: f64,
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
}

pub fn build_grid(n: usize, cells: usize, steps: usize, t0: f64, t1: f64) -> Result<SpaceTimeGrid> {
    if n != 2 && n != 3 {
        return Err(LabError::Invalid(format!("ambient dimension must be 2 or 3, got {n}")));
    }
    if cells < MIN_CELLS {
        return Err(LabError::Invalid(format!("need at least {MIN_CELLS} cells per axis, got {cells}")));
    }
    if steps == 0 {
        return Err(LabError::Invalid("need at least one time step".into()));
    }
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(LabError::Invalid(format!("bad time span [{t0}, {t1}]")));
    }
    Ok(SpaceTimeGrid {
        n,
        cells,
        steps,
        hx: 2.0 / cells as f64,
        dt: (t1 - t0) / steps as f64,
        t0,
        t1,
    })
}

impl SpaceTimeGrid {
    /// Spatial dimension of the graph domain (n-1).
    pub fn sdim(&self) -> usize {
        self.n - 1
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    /// Spatial nodes per time slice.
    pub fn nodes_per_step(&self) -> usize {
        self.nodes_per_axis().pow(self.sdim() as u32)
    }

    pub fn total_nodes(&self) -> usize {
        (self.steps + 1) * self.nodes_per_step()
    }

    pub fn x(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.hx
    }

    pub fn t(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    /// Flattened spatial index for a multi-index (i1 slow, i2 fast).
    pub fn index(&self, m: &[usize]) -> usize {
        match self.sdim() {
            1 => m[0],
            2 => m[0] * self.nodes_per_axis() + m[1],
            _ => unreachable!(),
        }
    }

    pub fn multi(&self, idx: usize) -> [usize; 2] {
        match self.sdim() {
            1 => [idx, 0],
            2 => [idx / self.nodes_per_axis(), idx % self.nodes_per_axis()],
            _ => unreachable!(),
        }
    }

    /// Spatial coordinates of a flattened node index (second entry unused for n=2).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let m = self.multi(idx);
        match self.sdim() {
            1 => [self.x(m[0]), 0.0],
            _ => [self.x(m[0]), self.x(m[1])],
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let m = self.multi(idx);
        let last = self.cells;
        (0..self.sdim()).any(|a| m[a] == 0 || m[a] == last)
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.nodes_per_step()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Trapezoid weight of a spatial node (product of per-axis 1 or 1/2).
    pub fn trapezoid_weight(&self, idx: usize) -> f64 {
        let m = self.multi(idx);
        let mut w = 1.0;
        for a in 0..self.sdim() {
            if m[a] == 0 || m[a] == self.cells {
                w *= 0.5;
            }
        }
        w
    }

    /// Trapezoid weight of a time index.
    pub fn time_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.steps {
            0.5
        } else {
            1.0
        }
    }

    /// Spatial volume element hx^{n-1}.
    pub fn cell_volume(&self) -> f64 {
        self.hx.powi(self.sdim() as i32)
    }
}

/// Dirichlet boundary trace recorded per time step, in `boundary_indices` order.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryTrace {
    pub values: Vec<f64>,
}

/// A sampled moving graph: height samples f indexed by (time step, spatial node).
#[derive(Debug, Clone)]
pub struct GraphFlow {
    pub grid: SpaceTimeGrid,
    f: Vec<f64>,
    boundary: Vec<BoundaryTrace>,
}

impl GraphFlow {
    pub fn from_samples(grid: SpaceTimeGrid, f: Vec<f64>) -> Result<GraphFlow> {
        let expect = grid.total_nodes();
        if f.len() != expect {
            return Err(LabError::Invalid(format!(
                "sample array has {} entries, grid needs {expect}",
                f.len()
            )));
        }
        if let Some(k) = f.iter().position(|v| !v.is_finite()) {
            let j = k / grid.nodes_per_step();
            let idx = k % grid.nodes_per_step();
            let c = grid.coords(idx);
            return Err(LabError::NonFinite(format!(
                "sample at t={} x=({}, {})",
                grid.t(j),
                c[0],
                c[1]
            )));
        }
        let bidx = grid.boundary_indices();
        let boundary = (0..=grid.steps)
            .map(|j| BoundaryTrace {
                values: bidx.iter().map(|&i| f[j * grid.nodes_per_step() + i]).collect(),
            })
            .collect();
        Ok(GraphFlow { grid, f, boundary })
    }

    pub fn value(&self, j: usize, idx: usize) -> f64 {
        self.f[j * self.grid.nodes_per_step() + idx]
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let s = self.grid.nodes_per_step();
        &self.f[j * s..(j + 1) * s]
    }

    pub fn samples(&self) -> &[f64] {
        &self.f
    }

    pub fn boundary_trace(&self, j: usize) -> &BoundaryTrace {
        &self.boundary[j]
    }

    /// The recorded trace must agree with the interior array at boundary nodes.
    pub fn boundary_consistent(&self) -> bool {
        let bidx = self.grid.boundary_indices();
        (0..=self.grid.steps).all(|j| {
            bidx.iter()
                .zip(&self.boundary[j].values)
                .all(|(&i, &v)| self.value(j, i) == v)
        })
    }

    pub fn map_values(&self, op: impl Fn(f64) -> f64) -> Result<GraphFlow> {
        GraphFlow::from_samples(self.grid.clone(), self.f.iter().map(|&v| op(v)).collect())
    }
}

/// Transport vector field u with n components, evaluated at graph points
/// (x, f(x,t), t). A grid sample is interpreted as already composed with f.
#[derive(Debug, Clone)]
pub enum AmbientField {
    Zero,
    ClosedForm(Vec<Expr>),
    Samples { data: Vec<f64>, n: usize },
}

impl AmbientField {
    pub fn closed_form(components: Vec<Expr>, n: usize) -> Result<AmbientField> {
        if components.len() != n {
            return Err(LabError::Invalid(format!(
                "ambient field needs {n} components, got {}",
                components.len()
            )));
        }
        for c in &components {
            c.validate(n - 1, true)?;
        }
        Ok(AmbientField::ClosedForm(components))
    }

    pub fn from_samples(grid: &SpaceTimeGrid, data: Vec<f64>) -> Result<AmbientField> {
        let expect = grid.total_nodes() * grid.n;
        if data.len() != expect {
            return Err(LabError::Invalid(format!(
                "ambient sample array has {} entries, grid needs {expect}",
                data.len()
            )));
        }
        Ok(AmbientField::Samples { data, n: grid.n })
    }

    /// Value at the graph point over node `idx` at step `j`, where `fval` is
    /// the height there.
    pub fn at_graph(&self, grid: &SpaceTimeGrid, j: usize, idx: usize, fval: f64) -> crate::vecn::VecN {
        match self {
            AmbientField::Zero => crate::vecn::ZERO,
            AmbientField::ClosedForm(comps) => {
                let c = grid.coords(idx);
                let t = grid.t(j);
                let mut v = crate::vecn::ZERO;
                for (a, e) in comps.iter().enumerate() {
                    v[a] = e.eval_ambient(&c[..grid.sdim()], fval, t);
                }
                v
            }
            AmbientField::Samples { data, n } => {
                let base = (j * grid.nodes_per_step() + idx) * n;
                let mut v = crate::vecn::ZERO;
                v[..*n].copy_from_slice(&data[base..base + n]);
                v
            }
        }
    }
}

/// Sample a closed-form height descriptor f(x, t) on every node.
pub fn sample_graph(expr: &Expr, grid: &SpaceTimeGrid) -> Result<GraphFlow> {
    expr.validate(grid.sdim(), false)?;
    let s = grid.nodes_per_step();
    let mut f = vec![0.0; grid.total_nodes()];
    for j in 0..=grid.steps {
        let t = grid.t(j);
        for idx in 0..s {
            let c = grid.coords(idx);
            let v = expr.eval_graph(&c[..grid.sdim()], t);
            if !v.is_finite() {
                return Err(LabError::NonFinite(format!(
                    "descriptor at t={t} x=({}, {})",
                    c[0], c[1]
                )));
            }
            f[j * s + idx] = v;
        }
    }
    GraphFlow::from_samples(grid.clone(), f)
}

// ---------------------------------------------------------------------------
// Shared stencils
// ---------------------------------------------------------------------------

/// First derivative along one axis: centered interior, one-sided 2nd order at
/// the ends.
fn d1_axis(slice: &[f64], grid: &SpaceTimeGrid, m: &[usize; 2], axis: usize) -> f64 {
    let h = grid.hx;
    let last = grid.cells;
    let at = |i: usize| {
        let mut mm = *m;
        mm[axis] = i;
        slice[grid.index(&mm[..grid.sdim()])]
    };
    let i = m[axis];
    if i == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if i == last {
        (3.0 * at(last) - 4.0 * at(last - 1) + at(last - 2)) / (2.0 * h)
    } else {
        (at(i + 1) - at(i - 1)) / (2.0 * h)
    }
}

/// Spatial gradient at a node (second component zero for n=2).
pub fn gradient_at(grid: &SpaceTimeGrid, slice: &[f64], idx: usize) -> [f64; 2] {
    let m = grid.multi(idx);
    let mut g = [0.0; 2];
    for a in 0..grid.sdim() {
        g[a] = d1_axis(slice, grid, &m, a);
    }
    g
}

pub fn gradient_field(grid: &SpaceTimeGrid, slice: &[f64]) -> Vec<[f64; 2]> {
    (0..grid.nodes_per_step()).map(|i| gradient_at(grid, slice, i)).collect()
}

/// Second derivatives at an interior node (centered; 4-point cross for the
/// mixed term).
pub struct SecondDerivs {
    pub d11: f64,
    pub d22: f64,
    pub d12: f64,
}

pub fn second_derivs_at(grid: &SpaceTimeGrid, slice: &[f64], idx: usize) -> SecondDerivs {
    let m = grid.multi(idx);
    let h2 = grid.hx * grid.hx;
    debug_assert!(!grid.is_boundary(idx), "second_derivs_at needs an interior node");
    let at = |di: isize, dk: isize| {
        let mm = [
            (m[0] as isize + di) as usize,
            (m[1] as isize + dk) as usize,
        ];
        slice[grid.index(&mm[..grid.sdim()])]
    };
    let d11 = (at(1, 0) - 2.0 * at(0, 0) + at(-1, 0)) / h2;
    if grid.sdim() == 1 {
        return SecondDerivs { d11, d22: 0.0, d12: 0.0 };
    }
    let d22 = (at(0, 1) - 2.0 * at(0, 0) + at(0, -1)) / h2;
    let d12 = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h2);
    SecondDerivs { d11, d22, d12 }
}

/// Time derivative of the height at (j, idx): centered in the interior,
/// one-sided 2nd order at the temporal ends. Needs at least two steps.
pub fn time_derivative_at(gf: &GraphFlow, j: usize, idx: usize) -> f64 {
    let m = gf.grid.steps;
    let dt = gf.grid.dt;
    debug_assert!(m >= 2);
    if j == 0 {
        (-3.0 * gf.value(0, idx) + 4.0 * gf.value(1, idx) - gf.value(2, idx)) / (2.0 * dt)
    } else if j == m {
        (3.0 * gf.value(m, idx) - 4.0 * gf.value(m - 1, idx) + gf.value(m - 2, idx)) / (2.0 * dt)
    } else {
        (gf.value(j + 1, idx) - gf.value(j - 1, idx)) / (2.0 * dt)
    }
}

// ---------------------------------------------------------------------------
// Parabolic Hölder seminorm
// ---------------------------------------------------------------------------

/// Above this node count the pair scan switches to seeded sampling.
pub const SEMINORM_EXHAUSTIVE_LIMIT: usize = 10_000;
pub const SEMINORM_SAMPLE_PAIRS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScanMode {
    Exhaustive,
    /// Seeded random pairs, stratified by quotient family.
    Sampled { pairs: usize, seed: u64 },
}

/// Lower-bound estimate of the parabolic C^{1,alpha} seminorm: the sup of the
/// gradient quotients plus the sup of the same-point time quotients, scanned
/// over node pairs.
#[derive(Debug, Clone, Serialize)]
pub struct SeminormEstimate {
    pub value: f64,
    pub grad_quotient_sup: f64,
    pub time_quotient_sup: f64,
    pub mode: ScanMode,
}

struct NodeData {
    x: [f64; 2],
    t: f64,
    f: f64,
    g: [f64; 2],
    spatial: usize,
}

fn collect_nodes(gf: &GraphFlow) -> Vec<NodeData> {
    let grid = &gf.grid;
    let s = grid.nodes_per_step();
    let mut out = Vec::with_capacity(grid.total_nodes());
    for j in 0..=grid.steps {
        let slice = gf.slice(j);
        let grads = gradient_field(grid, slice);
        for idx in 0..s {
            out.push(NodeData {
                x: grid.coords(idx),
                t: grid.t(j),
                f: slice[idx],
                g: grads[idx],
                spatial: idx,
            });
        }
    }
    out
}

fn pair_quotients(a: &NodeData, b: &NodeData, alpha: f64, sup_g: &mut f64, sup_t: &mut f64) {
    let dx = ((a.x[0] - b.x[0]).powi(2) + (a.x[1] - b.x[1]).powi(2)).sqrt();
    let dt = (a.t - b.t).abs();
    if dx == 0.0 && dt == 0.0 {
        return;
    }
    let den = dx.powf(alpha).max(dt.powf(alpha / 2.0));
    let dg = ((a.g[0] - b.g[0]).powi(2) + (a.g[1] - b.g[1]).powi(2)).sqrt();
    let q = dg / den;
    if q > *sup_g {
        *sup_g = q;
    }
    if a.spatial == b.spatial && dt > 0.0 {
        let q2 = (a.f - b.f).abs() / dt.powf((1.0 + alpha) / 2.0);
        if q2 > *sup_t {
            *sup_t = q2;
        }
    }
}

pub fn parabolic_seminorm(gf: &GraphFlow, alpha: f64) -> Result<SeminormEstimate> {
    parabolic_seminorm_seeded(gf, alpha, 0x5eed)
}

pub fn parabolic_seminorm_seeded(gf: &GraphFlow, alpha: f64, seed: u64) -> Result<SeminormEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::Invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let nodes = collect_nodes(gf);
    let n = nodes.len();
    let mut sup_g = 0.0;
    let mut sup_t = 0.0;
    let mode;
    if n <= SEMINORM_EXHAUSTIVE_LIMIT {
        for i in 0..n {
            for k in (i + 1)..n {
                pair_quotients(&nodes[i], &nodes[k], alpha, &mut sup_g, &mut sup_t);
            }
        }
        mode = ScanMode::Exhaustive;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = SEMINORM_SAMPLE_PAIRS;
        // general pairs feed the gradient family
        for _ in 0..pairs {
            let i = rng.gen_range(0..n);
            let k = rng.gen_range(0..n);
            if i != k {
                pair_quotients(&nodes[i], &nodes[k], alpha, &mut sup_g, &mut sup_t);
            }
        }
        // same-column pairs feed the time family
        let grid = &gf.grid;
        let s = grid.nodes_per_step();
        for _ in 0..pairs / 4 {
            let idx = rng.gen_range(0..s);
            let j1 = rng.gen_range(0..=grid.steps);
            let j2 = rng.gen_range(0..=grid.steps);
            if j1 != j2 {
                pair_quotients(
                    &nodes[j1 * s + idx],
                    &nodes[j2 * s + idx],
                    alpha,
                    &mut sup_g,
                    &mut sup_t,
                );
            }
        }
        mode = ScanMode::Sampled { pairs, seed };
    }
    Ok(SeminormEstimate {
        value: sup_g + sup_t,
        grad_quotient_sup: sup_g,
        time_quotient_sup: sup_t,
        mode,
    })
}
