//! Scale sweeps over seeded media: heterogeneous solves against the
//! homogenized limit, corrector fields, L1 errors, two-scale pairings, and
//! the convergence report.
//!
//! The central quantity is `E(eps)`, the seed-averaged space-time L1
//! distance between the oscillatory solution and the corrector
//! `U = g(x/eps, fbar(ubar))` built from the homogenized solution. The
//! sweep holds the cell count per oscillation fixed, so refining `eps`
//! refines the grid with it.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{effective_g, graded_p_grid, CoefficientTriple, EffectiveFlux};
use crate::grid::{Field, Grid1D};
use crate::interp::MonotoneCubic;
use crate::kinetic::SmoothBump;
use crate::medium::{sample_realization, MediumRealization, MediumSpec};
use crate::solver::{
    assemble_coefficients, solve, solve_homogenized, well_prepared_initial, BoundaryCondition,
    SolverConfig,
};

/// Offset folded into the base seed for the effective-flux table so its
/// Monte Carlo draws never reuse the per-trajectory medium seeds.
const TABLE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Named initial flux profile `phi`. The solver preparation maps it through
/// the local inverse, `u0 = g(x, phi(x))`, so `phi` lives in the flux
/// variable and its supremum controls the effective-flux table range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InitialProfile {
    /// `amplitude * exp(1 - 1/(1 - s^2))` with `s = (x - center)/width`,
    /// identically zero for `|s| >= 1`. Smooth and compactly supported.
    Bump { amplitude: f64, center: f64, width: f64 },
    /// Flat level of the given amplitude with C1 ramps of the given length
    /// down to zero on both sides; support radius `half_width`.
    Plateau { amplitude: f64, center: f64, half_width: f64, ramp: f64 },
    /// Superposition of two bumps with a common amplitude and width.
    TwoBumps { amplitude: f64, centers: (f64, f64), width: f64 },
    /// Spatially constant level (a stationary state after preparation).
    Constant { level: f64 },
}

impl InitialProfile {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        match self {
            InitialProfile::Bump { amplitude, center, width } => {
                if !finite(*amplitude) || !finite(*center) || !(*width > 0.0 && width.is_finite())
                {
                    return Err(Error::config("bump profile needs finite data and width > 0"));
                }
            }
            InitialProfile::Plateau { amplitude, center, half_width, ramp } => {
                if !finite(*amplitude)
                    || !finite(*center)
                    || !finite(*half_width)
                    || !finite(*ramp)
                {
                    return Err(Error::config("plateau profile needs finite data"));
                }
                if *half_width <= 0.0 || *ramp <= 0.0 || *ramp > *half_width {
                    return Err(Error::config(
                        "plateau profile needs 0 < ramp <= half_width",
                    ));
                }
            }
            InitialProfile::TwoBumps { amplitude, centers, width } => {
                if !finite(*amplitude)
                    || !finite(centers.0)
                    || !finite(centers.1)
                    || !(*width > 0.0 && width.is_finite())
                {
                    return Err(Error::config("two-bump profile needs finite data and width > 0"));
                }
            }
            InitialProfile::Constant { level } => {
                if !finite(*level) {
                    return Err(Error::config("constant profile needs a finite level"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        fn bump(x: f64, center: f64, width: f64) -> f64 {
            let s = (x - center) / width;
            if s.abs() < 1.0 {
                (1.0 - 1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        }
        match self {
            InitialProfile::Bump { amplitude, center, width } => {
                amplitude * bump(x, *center, *width)
            }
            InitialProfile::Plateau { amplitude, center, half_width, ramp } => {
                let d = (x - center).abs();
                if d >= *half_width {
                    0.0
                } else if d <= half_width - ramp {
                    *amplitude
                } else {
                    let s = (half_width - d) / ramp;
                    amplitude * s * s * (3.0 - 2.0 * s)
                }
            }
            InitialProfile::TwoBumps { amplitude, centers, width } => {
                amplitude * (bump(x, centers.0, *width) + bump(x, centers.1, *width))
            }
            InitialProfile::Constant { level } => *level,
        }
    }

    /// Supremum of `|phi|`. Exact for single-extremum shapes; the two-bump
    /// shape is scanned densely because overlapping supports can stack.
    pub fn sup(&self) -> f64 {
        match self {
            InitialProfile::Bump { amplitude, .. } => amplitude.abs(),
            InitialProfile::Plateau { amplitude, .. } => amplitude.abs(),
            InitialProfile::Constant { level } => level.abs(),
            InitialProfile::TwoBumps { centers, width, .. } => {
                let lo = centers.0.min(centers.1) - width;
                let hi = centers.0.max(centers.1) + width;
                (0..=4096)
                    .map(|k| self.eval(lo + (hi - lo) * k as f64 / 4096.0).abs())
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Full description of a homogenization sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationConfig {
    pub medium: MediumSpec,
    pub profile: InitialProfile,
    /// Oscillation scales, strictly decreasing.
    pub eps_list: Vec<f64>,
    /// Independent medium seeds per scale.
    pub seeds_per_eps: usize,
    /// Grid resolution policy: cells per oscillation length.
    pub cells_per_eps: usize,
    pub domain_length: f64,
    pub t_end: f64,
    /// Snapshot count; times are uniform over `(0, t_end]` and the initial
    /// state is always included, so time integrals use `n_snapshots + 1`
    /// trapezoid nodes.
    pub n_snapshots: usize,
    pub dt: f64,
    /// Monte Carlo samples for the effective-flux table (ignored for atom
    /// media, which average exactly).
    pub mc_samples: usize,
    pub base_seed: u64,
    /// Cells for the homogenized reference solve; its solution is smooth,
    /// so this can stay fixed while the oscillatory grids refine.
    pub n_hom_cells: usize,
    /// Nodes of the effective-flux table over `[-p_max, p_max]`.
    pub p_table_nodes: usize,
}

impl HomogenizationConfig {
    /// Sweep with library defaults: 16 cells per scale, 512-cell
    /// homogenized reference, 513-node flux table.
    pub fn new(medium: MediumSpec, profile: InitialProfile, eps_list: Vec<f64>) -> Self {
        HomogenizationConfig {
            medium,
            profile,
            eps_list,
            seeds_per_eps: 8,
            cells_per_eps: 16,
            domain_length: 4.0,
            t_end: 0.25,
            n_snapshots: 16,
            dt: 5e-4,
            mc_samples: 4096,
            base_seed: 1,
            n_hom_cells: 512,
            p_table_nodes: 513,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.medium.validate()?;
        self.profile.validate()?;
        if self.eps_list.is_empty() {
            return Err(Error::config("eps_list must not be empty"));
        }
        if self.eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::config("eps_list entries must be finite and positive"));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("eps_list must be strictly decreasing"));
        }
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(Error::config("domain length must be positive"));
        }
        if self.eps_list[0] > self.domain_length / 8.0 {
            return Err(Error::config(format!(
                "largest scale {} exceeds an eighth of the domain {}",
                self.eps_list[0], self.domain_length
            )));
        }
        if self.seeds_per_eps == 0 {
            return Err(Error::config("need at least one seed per scale"));
        }
        if self.cells_per_eps < 8 {
            return Err(Error::config(format!(
                "under-resolved oscillation: {} cells per scale, need at least 8",
                self.cells_per_eps
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite())
        {
            return Err(Error::config("t_end and dt must be positive"));
        }
        if self.n_snapshots < 2 {
            return Err(Error::config("need at least two snapshots for time integrals"));
        }
        if self.n_hom_cells < 16 {
            return Err(Error::config("homogenized reference needs at least 16 cells"));
        }
        if self.p_table_nodes < 9 {
            return Err(Error::config("effective-flux table needs at least 9 nodes"));
        }
        Ok(())
    }

    fn snapshot_times(&self) -> Vec<f64> {
        (1..=self.n_snapshots)
            .map(|k| self.t_end * k as f64 / self.n_snapshots as f64)
            .collect()
    }

    fn fine_grid(&self, eps: f64) -> Result<Grid1D> {
        let n = (self.domain_length / eps * self.cells_per_eps as f64).round() as usize;
        Grid1D::new(n, self.domain_length)
    }
}

/// Builds the effective-flux table sized to the sweep's profile: the table
/// spans `1.2 * sup|phi|`, so every flux value reached by comparison with
/// the stationary envelopes stays strictly inside it. The grid is graded
/// toward zero because compactly supported profiles drive the table hardest
/// near the degenerate point.
pub fn build_effective(cfg: &HomogenizationConfig) -> Result<EffectiveFlux> {
    let sup = cfg.profile.sup();
    let p_max = if sup > 0.0 { 1.2 * sup } else { 1.0 };
    let p_grid = graded_p_grid(p_max, cfg.p_table_nodes);
    effective_g(
        &cfg.medium,
        &p_grid,
        cfg.mc_samples.max(2),
        cfg.base_seed.wrapping_add(TABLE_SEED_OFFSET),
    )
}

/// Corrector field `U_i = g(x_i/eps, fbar(ubar_i))`: the homogenized state
/// pushed back through the local stationary profiles of one realization.
pub fn corrector_field(
    r: &MediumRealization,
    eps: f64,
    ubar: &Field,
    eff: &EffectiveFlux,
    grid: &Grid1D,
) -> Result<Field> {
    if ubar.values.len() != grid.n() {
        return Err(Error::config("corrector: homogenized state must live on the given grid"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("corrector: eps must be positive"));
    }
    let values = grid
        .centers()
        .iter()
        .zip(&ubar.values)
        .map(|(x, ub)| r.evaluate(x / eps).g(eff.fbar(*ub)))
        .collect();
    Ok(Field { t: ubar.t, values })
}

/// Numerical two-scale pairing for a separable test `phi1(x) * h(omega)`:
/// the seed average of `h_cell * sum_i w_i phi1(x_i) h(triple(x_i/eps))`.
pub fn two_scale_pairing(
    states: &[Field],
    realizations: &[MediumRealization],
    eps: f64,
    grid: &Grid1D,
    phi1: impl Fn(f64) -> f64,
    h_omega: impl Fn(&CoefficientTriple) -> f64,
) -> Result<f64> {
    if states.is_empty() || states.len() != realizations.len() {
        return Err(Error::config("pairing needs matching nonempty state and realization lists"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("pairing: eps must be positive"));
    }
    let h = grid.h();
    let centers = grid.centers();
    let mut per_seed = Vec::with_capacity(states.len());
    for (w, r) in states.iter().zip(realizations) {
        if w.values.len() != grid.n() {
            return Err(Error::config("pairing: state must live on the given grid"));
        }
        let mut acc = 0.0;
        for (x, wi) in centers.iter().zip(&w.values) {
            acc += wi * phi1(*x) * h_omega(&r.evaluate(x / eps));
        }
        per_seed.push(h * acc);
    }
    Ok(sorted_mean_stderr(&per_seed).0)
}

/// One row of the convergence report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// Seed mean of the space-time L1 corrector error.
    pub e_mean: f64,
    /// Sample standard error of `e_mean`.
    pub e_stderr: f64,
    /// Time-integrated weak-star pairing gap against the standard test.
    pub w_pairing: f64,
    pub n_cells: usize,
    /// Seeds that solved successfully (failures up to 20 percent are
    /// tolerated and excluded from the averages).
    pub n_seeds_ok: usize,
    /// Wall time of the row; excluded from the CSV so artifacts stay
    /// byte-reproducible, reported in the JSON manifest only.
    pub wall_ms: u64,
}

/// Outcome of a full sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<EpsilonRow>,
    /// True when `e_mean` is non-increasing along the sweep within one
    /// combined standard error and the finest scale at most halves the
    /// coarsest error. Trend-based on purpose: no convergence rate is
    /// asserted.
    pub passed: bool,
    pub table_p_max: f64,
    pub table_nodes: usize,
}

impl ConvergenceReport {
    /// CSV rows of the report. Wall times are deliberately omitted: the
    /// CSV is the reproducibility artifact and must be byte-identical
    /// across reruns and thread counts.
    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,E_mean,E_stderr,W,n_cells,n_seeds_ok,pass")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.epsilon,
                row.e_mean,
                row.e_stderr,
                row.w_pairing,
                row.n_cells,
                row.n_seeds_ok,
                self.passed
            )?;
        }
        Ok(())
    }
}

struct SeedOutcome {
    /// Space-time L1 corrector error of this seed.
    error: f64,
    /// Spatial pairing `<u, phi1>` per snapshot.
    pairings: Vec<f64>,
}

struct EpsilonRun {
    e_mean: f64,
    e_stderr: f64,
    w_pairing: f64,
    n_cells: usize,
    per_seed_e: Vec<f64>,
}

/// Mean and sample standard error with a deterministic reduction: values
/// are sorted before summation, so the result is independent of seed order
/// and parallel scheduling.
fn sorted_mean_stderr(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Trapezoid weights for the snapshot times (first node is t = 0).
fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let half = 0.5 * (times[k + 1] - times[k]);
        w[k] += half;
        w[k + 1] += half;
    }
    w
}

/// Interpolant of one homogenized snapshot with periodic ghost nodes, so
/// evaluation in the boundary half-cells wraps instead of extrapolating.
fn periodic_interpolant(grid: &Grid1D, values: &[f64]) -> Result<MonotoneCubic> {
    let centers = grid.centers();
    let l = grid.length();
    let n = centers.len();
    let mut x = Vec::with_capacity(n + 2);
    let mut y = Vec::with_capacity(n + 2);
    x.push(centers[n - 1] - l);
    y.push(values[n - 1]);
    x.extend_from_slice(&centers);
    y.extend_from_slice(values);
    x.push(centers[0] + l);
    y.push(values[0]);
    MonotoneCubic::new(x, y)
}

/// The standard spatial test function for weak-star pairings: a C2 bump
/// supported on the middle half of the domain.
pub fn standard_test_function(domain_length: f64) -> SmoothBump {
    SmoothBump { lo: 0.25 * domain_length, hi: 0.75 * domain_length }
}

#[allow(clippy::too_many_arguments)]
fn run_seed(
    cfg: &HomogenizationConfig,
    eps: f64,
    seed: u64,
    grid: &Grid1D,
    phi_fine: &[f64],
    times: &[f64],
    scfg: &SolverConfig,
    eff: &EffectiveFlux,
    ubar_fine: &[Field],
    phi1: &SmoothBump,
    weights: &[f64],
) -> Result<SeedOutcome> {
    let r = sample_realization(&cfg.medium, seed)?;
    let coeffs = assemble_coefficients(&r, eps, grid)?;
    let u0 = well_prepared_initial(&coeffs, phi_fine, grid)?;
    let traj = solve(&u0, &coeffs, grid, scfg, times)?;
    if traj.fields.len() != ubar_fine.len() {
        return Err(Error::internal("snapshot counts diverged between the two solves"));
    }
    let h = grid.h();
    let centers = grid.centers();
    let mut error = 0.0;
    let mut pairings = Vec::with_capacity(traj.fields.len());
    for (k, field) in traj.fields.iter().enumerate() {
        let u_corr = corrector_field(&r, eps, &ubar_fine[k], eff, grid)?;
        let l1: f64 =
            field.values.iter().zip(&u_corr.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * h;
        error += weights[k] * l1;
        let pair: f64 =
            field.values.iter().zip(&centers).map(|(u, x)| u * phi1.value(*x)).sum::<f64>() * h;
        pairings.push(pair);
    }
    Ok(SeedOutcome { error, pairings })
}

fn sweep_one_epsilon(
    cfg: &HomogenizationConfig,
    eps: f64,
    eff: &EffectiveFlux,
) -> Result<EpsilonRun> {
    let grid = cfg.fine_grid(eps)?;
    let centers = grid.centers();
    let phi_fine: Vec<f64> = centers.iter().map(|x| cfg.profile.eval(*x)).collect();
    let times = cfg.snapshot_times();
    let scfg = SolverConfig::new(cfg.dt, cfg.t_end, BoundaryCondition::Periodic);

    // Homogenized reference: one coarse solve shared by all seeds, each
    // snapshot interpolated onto the oscillatory grid.
    let hom_grid = Grid1D::new(cfg.n_hom_cells, cfg.domain_length)?;
    let phi_hom: Vec<f64> = hom_grid.centers().iter().map(|x| cfg.profile.eval(*x)).collect();
    let hom = solve_homogenized(eff, &phi_hom, &hom_grid, &scfg, &times)?;
    let ubar_fine: Vec<Field> = hom
        .fields
        .iter()
        .map(|f| {
            let interp = periodic_interpolant(&hom_grid, &f.values)?;
            Ok(Field { t: f.t, values: centers.iter().map(|x| interp.eval(*x)).collect() })
        })
        .collect::<Result<_>>()?;
    let weights = trapezoid_weights(
        &hom.fields.iter().map(|f| f.t).collect::<Vec<f64>>(),
    );

    let phi1 = standard_test_function(cfg.domain_length);
    let hom_h = hom_grid.h();
    let hom_pair: Vec<f64> = hom
        .fields
        .iter()
        .map(|f| {
            f.values.iter().zip(hom_grid.centers().iter()).map(|(u, x)| u * phi1.value(*x)).sum::<f64>()
                * hom_h
        })
        .collect();

    let outcomes: Vec<(u64, Result<SeedOutcome>)> = (0..cfg.seeds_per_eps as u64)
        .into_par_iter()
        .map(|s| {
            let seed = cfg.base_seed.wrapping_add(s);
            (
                seed,
                run_seed(
                    cfg, eps, seed, &grid, &phi_fine, &times, &scfg, eff, &ubar_fine, &phi1,
                    &weights,
                ),
            )
        })
        .collect();

    let mut per_seed_e = Vec::new();
    let mut per_seed_pairs: Vec<Vec<f64>> = Vec::new();
    let mut failures = 0usize;
    let mut first_failure: Option<Error> = None;
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                per_seed_e.push(o.error);
                per_seed_pairs.push(o.pairings);
            }
            Err(e) => {
                failures += 1;
                log::warn!("seed {seed} failed at eps={eps}: {e}");
                if first_failure.is_none() {
                    first_failure = Some(e);
                }
            }
        }
    }
    if failures * 5 > cfg.seeds_per_eps {
        let detail = first_failure.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::internal(format!(
            "sweep at eps={eps}: {failures} of {} seed solves failed; first failure: {detail}",
            cfg.seeds_per_eps
        )));
    }

    let (e_mean, e_stderr) = sorted_mean_stderr(&per_seed_e);
    let mut w_pairing = 0.0;
    for k in 0..hom_pair.len() {
        let snap: Vec<f64> = per_seed_pairs.iter().map(|p| p[k]).collect();
        w_pairing += weights[k] * (sorted_mean_stderr(&snap).0 - hom_pair[k]).abs();
    }
    Ok(EpsilonRun { e_mean, e_stderr, w_pairing, n_cells: grid.n(), per_seed_e })
}

/// Seed-averaged space-time L1 corrector error at one scale, with its
/// sample standard error. Builds the effective-flux table internally; for
/// sweeps over several scales prefer `run_homogenization`, which builds it
/// once.
pub fn l1_error(cfg: &HomogenizationConfig, eps: f64) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !cfg.eps_list.iter().any(|e| (e - eps).abs() <= 1e-12 * eps.abs()) {
        return Err(Error::config(format!("eps={eps} is not in the configured eps_list")));
    }
    let eff = build_effective(cfg)?;
    let run = sweep_one_epsilon(cfg, eps, &eff)?;
    Ok((run.e_mean, run.e_stderr))
}

/// Runs the full sweep: one effective-flux table, then every scale in
/// `eps_list` with `seeds_per_eps` independent media each.
pub fn run_homogenization(cfg: &HomogenizationConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let eff = build_effective(cfg)?;
    let mut rows = Vec::with_capacity(cfg.eps_list.len());
    for eps in &cfg.eps_list {
        let started = Instant::now();
        let run = sweep_one_epsilon(cfg, *eps, &eff)?;
        rows.push(EpsilonRow {
            epsilon: *eps,
            e_mean: run.e_mean,
            e_stderr: run.e_stderr,
            w_pairing: run.w_pairing,
            n_cells: run.n_cells,
            n_seeds_ok: run.per_seed_e.len(),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let passed = trend_pass(&rows);
    let p_grid = eff.p_grid();
    Ok(ConvergenceReport {
        rows,
        passed,
        table_p_max: p_grid[p_grid.len() - 1],
        table_nodes: p_grid.len(),
    })
}

/// Trend check: `e_mean` non-increasing within one combined standard error
/// between consecutive scales, and the finest error at most half the
/// coarsest. Vacuously true for a single row.
fn trend_pass(rows: &[EpsilonRow]) -> bool {
    if rows.len() <= 1 {
        return true;
    }
    let monotone = rows
        .windows(2)
        .all(|w| w[1].e_mean <= w[0].e_mean + w[0].e_stderr + w[1].e_stderr);
    let halved = rows[rows.len() - 1].e_mean <= 0.5 * rows[0].e_mean;
    monotone && halved
}
