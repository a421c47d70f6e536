//! Implicit finite-volume solver for `du/dt = Laplacian(f(x, u))`.
//!
//! Space is discretized by cell averages on a uniform grid, the Laplacian of
//! the flux by the second difference of cell fluxes, and time by backward
//! Euler. Each step solves the monotone system
//!
//! ```text
//! u_i - u_i^n = lambda * (F_{i+1} - 2 F_i + F_{i-1}),   F_i = f(x_i, u_i),
//! ```
//!
//! with `lambda = dt / h^2`, by damped Newton iteration. The Jacobian is a
//! strictly diagonally dominant tridiagonal (or cyclic tridiagonal) M-matrix,
//! so the linear solves need no pivoting and the scheme inherits the L1
//! contraction and comparison properties of the continuous flow up to the
//! Newton tolerance. Backward Euler puts no stability restriction on the
//! step size, so `dt` is chosen by accuracy alone.
//!
//! Boundary conditions are periodic wrap-around, or Dirichlet ghost cells
//! pinned to the stationary profile `u = g(x, level)` of a prescribed flux
//! level. With matching initial data the Dirichlet variant preserves the
//! stationary state to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{CoefficientTriple, ScalarFlux};
use crate::grid::{Field, Grid1D, Trajectory};
use crate::medium::{MediumKind, MediumRealization};

/// How a coefficient field was produced; carried into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Ensemble family name, or "explicit" for hand-built fields.
    pub kind: String,
    /// Seed of the underlying realization, if any.
    pub seed: Option<u64>,
    /// Oscillation scale the field was sampled at, if any.
    pub epsilon: Option<f64>,
}

impl Provenance {
    fn explicit() -> Self {
        Provenance { kind: "explicit".into(), seed: None, epsilon: None }
    }
}

/// Flux coefficients frozen onto a grid: one triple per cell plus one ghost
/// triple beyond each boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    triples: Vec<CoefficientTriple>,
    ghost: (CoefficientTriple, CoefficientTriple),
    provenance: Provenance,
}

impl CoefficientField {
    /// Builds a field from explicit per-cell triples.
    pub fn from_triples(
        triples: Vec<CoefficientTriple>,
        ghost: (CoefficientTriple, CoefficientTriple),
    ) -> Result<Self> {
        if triples.len() < 4 {
            return Err(Error::config("coefficient field needs at least 4 cells"));
        }
        for t in triples.iter().chain([&ghost.0, &ghost.1]) {
            t.validate()?;
        }
        Ok(CoefficientField { triples, ghost, provenance: Provenance::explicit() })
    }

    /// A field with the same triple in every cell and ghost.
    pub fn uniform(triple: CoefficientTriple, n: usize) -> Result<Self> {
        Self::from_triples(vec![triple; n], (triple, triple))
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    /// True when the field has no cells (never holds for validated fields).
    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Per-cell triples.
    pub fn triples(&self) -> &[CoefficientTriple] {
        &self.triples
    }

    /// Triple of cell `i`.
    pub fn triple(&self, i: usize) -> &CoefficientTriple {
        &self.triples[i]
    }

    /// Ghost triples (left, right).
    pub fn ghost(&self) -> (&CoefficientTriple, &CoefficientTriple) {
        (&self.ghost.0, &self.ghost.1)
    }

    /// Provenance record.
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Boundary treatment of the flux Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Wrap-around; total mass is conserved exactly up to the Newton
    /// tolerance.
    Periodic,
    /// Ghost cells hold the stationary profile `u = g(x, level)`, so the
    /// ghost flux equals `level` to rounding.
    DirichletStationary {
        /// Flux level of the stationary profile the boundary is pinned to.
        level: f64,
    },
}

/// Time-stepping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Nominal time step; individual steps shrink to land on snapshot times
    /// and halve on Newton failures.
    pub dt: f64,
    /// Final time.
    pub t_end: f64,
    /// Newton tolerance on the l1 residual `sum_i |r_i|`; `None` resolves to
    /// `1e-10 * n` ("1e-10 per cell").
    pub newton_tol: Option<f64>,
    /// Newton iteration cap per step.
    pub newton_max: usize,
    /// Boundary condition.
    pub bc: BoundaryCondition,
}

impl SolverConfig {
    /// Config with default Newton settings (tolerance 1e-10 per cell, at
    /// most 50 iterations).
    pub fn new(dt: f64, t_end: f64, bc: BoundaryCondition) -> Self {
        SolverConfig { dt, t_end, newton_tol: None, newton_max: 50, bc }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if let Some(tol) = self.newton_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::config("newton_tol must be positive"));
            }
        }
        if self.newton_max == 0 {
            return Err(Error::config("newton_max must be >= 1"));
        }
        Ok(())
    }

    fn resolved_tol(&self, n: usize) -> f64 {
        self.newton_tol.unwrap_or(1e-10 * n as f64)
    }
}

/// Boundary side selector for ghost data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Ghost cell left of cell 0.
    Left,
    /// Ghost cell right of the last cell.
    Right,
}

/// Spatial flux seen by the solver: per-cell flux, its `u`-derivative, its
/// inverse, and the flux of the Dirichlet ghost cells.
pub trait FluxField {
    /// Flux in cell `i` at state `u`.
    fn f(&self, i: usize, u: f64) -> f64;
    /// Derivative of the flux with respect to `u` in cell `i`.
    fn df(&self, i: usize, u: f64) -> f64;
    /// Inverse flux in cell `i`: the state with flux value `p`.
    fn g(&self, i: usize, p: f64) -> f64;
    /// Flux of the ghost cell pinned to the stationary profile at `level`.
    fn ghost_flux(&self, side: Side, level: f64) -> f64;
}

impl FluxField for CoefficientField {
    #[inline]
    fn f(&self, i: usize, u: f64) -> f64 {
        self.triples[i].f(u)
    }

    #[inline]
    fn df(&self, i: usize, u: f64) -> f64 {
        self.triples[i].df_du(u)
    }

    #[inline]
    fn g(&self, i: usize, p: f64) -> f64 {
        self.triples[i].g(p)
    }

    fn ghost_flux(&self, side: Side, level: f64) -> f64 {
        let t = match side {
            Side::Left => &self.ghost.0,
            Side::Right => &self.ghost.1,
        };
        t.f(t.g(level))
    }
}

/// Adapter running a spatially constant scalar flux (a single coefficient
/// triple, or the effective flux) through the solver.
#[derive(Debug, Clone, Copy)]
pub struct UniformFlux<'a, S: ScalarFlux>(pub &'a S);

impl<S: ScalarFlux> FluxField for UniformFlux<'_, S> {
    #[inline]
    fn f(&self, _i: usize, u: f64) -> f64 {
        self.0.f(u)
    }

    #[inline]
    fn df(&self, _i: usize, u: f64) -> f64 {
        self.0.df(u)
    }

    #[inline]
    fn g(&self, _i: usize, p: f64) -> f64 {
        self.0.g(p)
    }

    fn ghost_flux(&self, _side: Side, level: f64) -> f64 {
        self.0.f(self.0.g(level))
    }
}

/// Freezes a medium realization onto a grid at oscillation scale `eps`:
/// cell `i` gets the coefficients at `center(i) / eps`, ghosts the
/// coefficients half a cell beyond each boundary.
///
/// Resolution policy: fewer than 8 cells per oscillation scale is an error,
/// fewer than 16 logs a warning.
pub fn assemble_coefficients(
    r: &MediumRealization,
    eps: f64,
    grid: &Grid1D,
) -> Result<CoefficientField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("oscillation scale must be positive, got {eps}")));
    }
    let h = grid.h();
    let cells_per_eps = eps / h;
    if cells_per_eps < 8.0 {
        return Err(Error::config(format!(
            "under-resolved oscillation: {cells_per_eps:.2} cells per scale eps={eps}, need >= 8"
        )));
    }
    if cells_per_eps < 16.0 {
        log::warn!(
            "marginal resolution: {cells_per_eps:.2} cells per scale eps={eps}, recommend >= 16"
        );
    }
    let triples: Vec<CoefficientTriple> =
        (0..grid.n()).map(|i| r.evaluate(grid.center(i) / eps)).collect();
    let ghost_left = r.evaluate(-0.5 * h / eps);
    let ghost_right = r.evaluate((grid.length() + 0.5 * h) / eps);
    for t in triples.iter().chain([&ghost_left, &ghost_right]) {
        t.validate()?;
    }
    let kind = match &r.spec().kind {
        MediumKind::Constant => "constant",
        MediumKind::Periodic { .. } => "periodic",
        MediumKind::AlmostPeriodic => "almost_periodic",
        MediumKind::RandomFourier { .. } => "random_fourier",
        MediumKind::Atoms { .. } => "atoms",
    };
    Ok(CoefficientField {
        triples,
        ghost: (ghost_left, ghost_right),
        provenance: Provenance {
            kind: kind.into(),
            seed: Some(r.seed()),
            epsilon: Some(eps),
        },
    })
}

/// Well-prepared initial state `u0_i = g(x_i, phi_i)` for a flux profile
/// `phi`. The profile must be flat (equal to its edge value) on the outer
/// 10 percent of cells on each side, so that boundary data stays compatible
/// during the evolution.
pub fn well_prepared_initial(
    coeffs: &CoefficientField,
    phi: &[f64],
    grid: &Grid1D,
) -> Result<Vec<f64>> {
    let n = grid.n();
    if phi.len() != n || coeffs.len() != n {
        return Err(Error::config(format!(
            "profile ({}), coefficients ({}) and grid ({n}) sizes must agree",
            phi.len(),
            coeffs.len()
        )));
    }
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::config("flux profile must be finite"));
    }
    let margin = ((n as f64) * 0.1).ceil() as usize;
    let flat = |edge: f64, cells: std::ops::Range<usize>| -> bool {
        let tol = 1e-13 * edge.abs().max(1.0);
        cells.into_iter().all(|i| (phi[i] - edge).abs() <= tol)
    };
    if !flat(phi[0], 0..margin) || !flat(phi[n - 1], n - margin..n) {
        return Err(Error::config(format!(
            "flux profile must be flat on the outer {margin} cells of each side"
        )));
    }
    Ok((0..n).map(|i| coeffs.g(i, phi[i])).collect())
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Residual of the backward Euler system at state `u`, written into `r`;
/// `fbuf` receives the cell fluxes.
fn residual_into(
    u: &[f64],
    u_prev: &[f64],
    flux: &impl FluxField,
    lambda: f64,
    bc: &BoundaryCondition,
    fbuf: &mut [f64],
    r: &mut [f64],
) {
    let n = u.len();
    for i in 0..n {
        fbuf[i] = flux.f(i, u[i]);
    }
    match bc {
        BoundaryCondition::Periodic => {
            for i in 0..n {
                let fm = fbuf[(i + n - 1) % n];
                let fp = fbuf[(i + 1) % n];
                r[i] = u[i] - u_prev[i] - lambda * (fp - 2.0 * fbuf[i] + fm);
            }
        }
        BoundaryCondition::DirichletStationary { level } => {
            let gl = flux.ghost_flux(Side::Left, *level);
            let gr = flux.ghost_flux(Side::Right, *level);
            for i in 0..n {
                let fm = if i == 0 { gl } else { fbuf[i - 1] };
                let fp = if i == n - 1 { gr } else { fbuf[i + 1] };
                r[i] = u[i] - u_prev[i] - lambda * (fp - 2.0 * fbuf[i] + fm);
            }
        }
    }
}

/// Thomas elimination for a tridiagonal system; `diag` and `rhs` are
/// consumed as workspace and `rhs` holds the solution afterwards. `sub[i]`
/// is the entry left of the diagonal in row `i` (`sub[0]` unused), `sup[i]`
/// the entry right of it (`sup[n-1]` unused). Stable without pivoting for
/// the strictly diagonally dominant systems assembled here.
fn solve_tridiag(sub: &[f64], diag: &mut [f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    for i in 1..n {
        if diag[i - 1].abs() < 1e-300 {
            return Err(Error::numerics("vanishing pivot in tridiagonal solve"));
        }
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if diag[n - 1].abs() < 1e-300 {
        return Err(Error::numerics("vanishing pivot in tridiagonal solve"));
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
    }
    Ok(())
}

/// Cyclic tridiagonal solve via a rank-one update of the open-chain system.
/// `top_right` and `bottom_left` are the wrap-around entries `A[0][n-1]` and
/// `A[n-1][0]`.
fn solve_cyclic(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    top_right: f64,
    bottom_left: f64,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    // Rank-one split A = A' + w v^T with w = (gamma, 0, .., bottom_left),
    // v = (1, 0, .., top_right / gamma); gamma = -diag[0] keeps A' dominant.
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] = diag[0] - gamma;
    d[n - 1] = diag[n - 1] - top_right * bottom_left / gamma;

    let mut y = rhs.to_vec();
    let mut d1 = d.clone();
    solve_tridiag(sub, &mut d1, sup, &mut y)?;

    let mut z = vec![0.0; n];
    z[0] = gamma;
    z[n - 1] = bottom_left;
    solve_tridiag(sub, &mut d, sup, &mut z)?;

    let vy = y[0] + top_right * y[n - 1] / gamma;
    let vz = z[0] + top_right * z[n - 1] / gamma;
    let denom = 1.0 + vz;
    if denom.abs() < 1e-300 {
        return Err(Error::numerics("singular rank-one update in cyclic solve"));
    }
    let fact = vy / denom;
    Ok((0..n).map(|i| y[i] - fact * z[i]).collect())
}

/// One backward Euler step by damped Newton iteration. Returns the new state
/// and the iteration count; stationary states return unchanged after zero
/// iterations.
fn newton_step(
    u_prev: &[f64],
    flux: &impl FluxField,
    lambda: f64,
    bc: &BoundaryCondition,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = u_prev.len();
    let mut u = u_prev.to_vec();
    let mut fbuf = vec![0.0; n];
    let mut r = vec![0.0; n];
    residual_into(&u, u_prev, flux, lambda, bc, &mut fbuf, &mut r);
    let mut rnorm = l1(&r);
    if !rnorm.is_finite() {
        return Err(Error::numerics("non-finite residual at step start"));
    }

    let mut iterations = 0;
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut rt = vec![0.0; n];
    while rnorm > tol {
        if iterations >= max_iter {
            return Err(Error::NonConvergence { residual: rnorm, iterations, dt });
        }
        // Jacobian I - lambda * L * diag(f'(u)); f' >= 0 keeps it an
        // M-matrix with unit column dominance.
        let d: Vec<f64> = (0..n).map(|i| flux.df(i, u[i]).max(0.0)).collect();
        for i in 0..n {
            diag[i] = 1.0 + 2.0 * lambda * d[i];
            sub[i] = if i > 0 { -lambda * d[i - 1] } else { 0.0 };
            sup[i] = if i + 1 < n { -lambda * d[i + 1] } else { 0.0 };
        }
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = match bc {
            BoundaryCondition::Periodic => {
                solve_cyclic(&sub, &diag, &sup, -lambda * d[n - 1], -lambda * d[0], &neg_r)?
            }
            BoundaryCondition::DirichletStationary { .. } => {
                let mut x = neg_r;
                solve_tridiag(&sub, &mut diag, &sup, &mut x)?;
                x
            }
        };

        // Damped line search: strict l1 residual decrease.
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            for i in 0..n {
                trial[i] = u[i] + s * delta[i];
            }
            residual_into(&trial, u_prev, flux, lambda, bc, &mut fbuf, &mut rt);
            let rtn = l1(&rt);
            if rtn < rnorm {
                u.copy_from_slice(&trial);
                r.copy_from_slice(&rt);
                rnorm = rtn;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { residual: rnorm, iterations, dt });
        }
        iterations += 1;
    }
    Ok((u, iterations))
}

/// Advances `u_prev` by one implicit step of size `dt`.
pub fn step_implicit(
    u_prev: &[f64],
    flux: &impl FluxField,
    grid: &Grid1D,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if u_prev.len() != grid.n() {
        return Err(Error::config("state length must match the grid"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("step size must be positive, got {dt}")));
    }
    let lambda = dt / (grid.h() * grid.h());
    let tol = cfg.resolved_tol(grid.n());
    let (u, _) = newton_step(u_prev, flux, lambda, &cfg.bc, dt, tol, cfg.newton_max)?;
    Ok(u)
}

/// Number of times a failing step is halved before giving up.
const MAX_DT_HALVINGS: u32 = 6;

/// Runs the implicit scheme from `u0` to `cfg.t_end`, recording the initial
/// state, every requested snapshot time in `(0, t_end]`, and the final time.
/// Steps land on snapshot times exactly; a step whose Newton iteration fails
/// is retried with up to six halvings.
pub fn solve(
    u0: &[f64],
    flux: &impl FluxField,
    grid: &Grid1D,
    cfg: &SolverConfig,
    snapshots: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    if u0.len() != grid.n() {
        return Err(Error::config(format!(
            "initial state has {} cells, grid has {}",
            u0.len(),
            grid.n()
        )));
    }
    if u0.iter().any(|u| !u.is_finite()) {
        return Err(Error::config("initial state must be finite"));
    }
    let mut targets: Vec<f64> = snapshots
        .iter()
        .copied()
        .filter(|s| *s > 0.0 && *s <= cfg.t_end)
        .chain((cfg.t_end > 0.0).then_some(cfg.t_end))
        .collect();
    targets.sort_by(|a, b| a.total_cmp(b));
    targets.dedup();

    let tol = cfg.resolved_tol(grid.n());
    let h2 = grid.h() * grid.h();
    let mut fields = vec![Field { t: 0.0, values: u0.to_vec() }];
    let mut u = u0.to_vec();
    let mut t = 0.0;
    for target in targets {
        while t < target {
            let mut dt = cfg.dt.min(target - t);
            let lands = dt >= target - t;
            let mut halvings = 0;
            let next = loop {
                match newton_step(&u, flux, dt / h2, &cfg.bc, dt, tol, cfg.newton_max) {
                    Ok((next, _)) => break next,
                    Err(e @ Error::NonConvergence { .. }) => {
                        if halvings >= MAX_DT_HALVINGS {
                            return Err(e);
                        }
                        halvings += 1;
                        dt *= 0.5;
                        log::warn!("step at t={t} failed, retrying with dt={dt}");
                    }
                    Err(e) => return Err(e),
                }
            };
            u = next;
            t = if lands && halvings == 0 { target } else { t + dt };
        }
        fields.push(Field { t: target, values: u.clone() });
    }
    Ok(Trajectory { grid: *grid, fields })
}

/// Runs the spatially homogeneous scheme for a scalar flux; the initial
/// state is the stationary-profile preparation `u0 = g(phi)` of the flux
/// profile `phi`.
pub fn solve_homogenized(
    eff: &impl ScalarFlux,
    phi: &[f64],
    grid: &Grid1D,
    cfg: &SolverConfig,
    snapshots: &[f64],
) -> Result<Trajectory> {
    if phi.len() != grid.n() {
        return Err(Error::config("profile length must match the grid"));
    }
    let u0: Vec<f64> = phi.iter().map(|p| eff.g(*p)).collect();
    solve(&u0, &UniformFlux(eff), grid, cfg, snapshots)
}
