//! The four batch commands: artifact generation and property checks.

use std::fs;
use std::path::Path;

use serde::Serialize;

use pmh_core::experiment::run_homogenization;
use pmh_core::flux::{check_fbar_properties, effective_g, graded_p_grid};
use pmh_core::kinetic::{
    check_defect_bound, defect_histogram, entropy_identity_gap, kinetic_residual,
    DefectBoundReport, ProductTest, SmoothBump,
};
use pmh_core::medium::sample_realization;
use pmh_core::solver::{assemble_coefficients, solve, well_prepared_initial};
use pmh_core::{Error, Grid1D, Result, Trajectory};

use crate::build::{
    homogenization_config, initial_profile, medium_spec, snapshot_times, solve_settings,
};
use crate::config::RawConfig;
use crate::plot::convergence_svg;

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdOutcome {
    /// Artifacts written, all checks (if any) passed.
    Ok,
    /// Artifacts written, but a property check failed (exit code 4).
    CheckFailed,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::internal(format!("serializing {}: {e}", path.display())))?;
    write_file(path, text.as_bytes())
}

/// Tabulates the effective flux and reports its structure.
pub fn cmd_effective_flux(cfg: &RawConfig, out: &Path) -> Result<CmdOutcome> {
    let spec = medium_spec(cfg)?;
    let p_max = cfg.f64_or("flux.p_max", 8.0)?;
    let nodes = cfg.usize_or("flux.nodes", 513)?;
    let mc_samples = cfg.usize_or("flux.mc_samples", 4096)?;
    let seed = cfg.u64_or("medium.seed", 0)?;
    let probes = cfg.get_list("flux.probes")?.unwrap_or_else(|| vec![1.0]);
    let probe_range = cfg.pair_or("flux.probe_range", (-1.5, 1.5))?;
    let probe_points = cfg.usize_or("flux.probe_points", 1001)?;
    cfg.finish()?;

    let eff = effective_g(&spec, &graded_p_grid(p_max, nodes), mc_samples, seed)?;
    let mut csv = Vec::new();
    eff.to_csv(&mut csv)?;
    write_file(&out.join("gbar.csv"), &csv)?;

    let probe_grid_ok =
        probe_points >= 2 && probe_range.0 < probe_range.1 && probe_range.0.is_finite();
    if !probe_grid_ok {
        return Err(Error::config("flux.probe_range/flux.probe_points must define a grid"));
    }
    let v_grid: Vec<f64> = (0..probe_points)
        .map(|k| {
            probe_range.0 + (probe_range.1 - probe_range.0) * k as f64 / (probe_points - 1) as f64
        })
        .collect();
    let v_reachable = (eff.gbar(-p_max), eff.gbar(p_max));
    if probe_range.0 < v_reachable.0 || probe_range.1 > v_reachable.1 {
        log::warn!(
            "probe range [{}, {}] exceeds the table's value range [{:.4}, {:.4}]; \
             the inverse saturates outside it",
            probe_range.0,
            probe_range.1,
            v_reachable.0,
            v_reachable.1
        );
    }
    let properties = check_fbar_properties(&eff, &v_grid)?;
    let fbar_probes: Vec<serde_json::Value> = probes
        .iter()
        .map(|v| serde_json::json!({ "v": v, "fbar": eff.fbar(*v) }))
        .collect();

    #[derive(Serialize)]
    struct Summary<'a> {
        p_max: f64,
        nodes: usize,
        mc_samples: usize,
        properties: &'a pmh_core::flux::FluxPropertyReport,
        fbar_probes: &'a [serde_json::Value],
    }
    write_json(
        &out.join("summary.json"),
        &Summary { p_max, nodes, mc_samples, properties: &properties, fbar_probes: &fbar_probes },
    )?;

    println!(
        "effective flux: monotone over {} probes: {} ({} violations), local slope in [{:.4}, {:.4}]",
        v_grid.len(),
        properties.monotone,
        properties.violations,
        properties.min_slope,
        properties.max_lipschitz
    );
    for (v, row) in probes.iter().zip(&fbar_probes) {
        println!("  fbar({v}) = {}", row["fbar"]);
    }
    Ok(CmdOutcome::Ok)
}

fn run_single_trajectory(cfg: &RawConfig) -> Result<(Trajectory, pmh_core::CoefficientField)> {
    let spec = medium_spec(cfg)?;
    let settings = solve_settings(cfg)?;
    let profile = initial_profile(cfg, settings.domain_length)?;
    let grid = Grid1D::new(settings.cells, settings.domain_length)?;
    let r = sample_realization(&spec, settings.seed)?;
    let coeffs = assemble_coefficients(&r, settings.epsilon, &grid)?;
    let phi: Vec<f64> = grid.centers().iter().map(|x| profile.eval(*x)).collect();
    let u0 = well_prepared_initial(&coeffs, &phi, &grid)?;
    let times = snapshot_times(settings.solver.t_end, settings.snapshots);
    let traj = solve(&u0, &coeffs, &grid, &settings.solver, &times)?;
    Ok((traj, coeffs))
}

/// Runs one heterogeneous trajectory and writes it with a mass manifest.
pub fn cmd_solve(cfg: &RawConfig, out: &Path) -> Result<CmdOutcome> {
    // Consume the keys first so unknown-key reporting sees all lookups even
    // when validation fails midway.
    let (traj, coeffs) = run_single_trajectory(cfg)?;
    cfg.finish()?;

    let mut csv = Vec::new();
    traj.to_csv(&mut csv)?;
    write_file(&out.join("trajectory.csv"), &csv)?;

    let masses = traj.mass();
    #[derive(Serialize)]
    struct Snapshot {
        t: f64,
        mass: f64,
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a std::collections::BTreeMap<String, String>,
        cells: usize,
        domain_length: f64,
        provenance: &'a pmh_core::solver::Provenance,
        snapshots: Vec<Snapshot>,
    }
    let snapshots: Vec<Snapshot> = traj
        .fields
        .iter()
        .zip(&masses)
        .map(|(f, m)| Snapshot { t: f.t, mass: *m })
        .collect();
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            config: cfg.entries(),
            cells: traj.grid.n(),
            domain_length: traj.grid.length(),
            provenance: coeffs.provenance(),
            snapshots,
        },
    )?;
    let drift = masses
        .iter()
        .map(|m| (m - masses[0]).abs())
        .fold(0.0f64, f64::max);
    println!(
        "solved {} snapshots on {} cells; largest mass drift {drift:.3e}",
        traj.fields.len(),
        traj.grid.n()
    );
    Ok(CmdOutcome::Ok)
}

/// Full scale sweep with the convergence report and optional plot.
pub fn cmd_homogenize(cfg: &RawConfig, out: &Path, plot_flag: bool) -> Result<CmdOutcome> {
    let hcfg = homogenization_config(cfg)?;
    let plot = cfg.bool_or("output.plot", false)? || plot_flag;
    cfg.finish()?;

    let report = run_homogenization(&hcfg)?;

    let mut csv = Vec::new();
    report.to_csv(&mut csv)?;
    write_file(&out.join("report.csv"), &csv)?;

    #[derive(Serialize)]
    struct FullReport<'a> {
        config: &'a pmh_core::HomogenizationConfig,
        report: &'a pmh_core::ConvergenceReport,
    }
    write_json(&out.join("report.json"), &FullReport { config: &hcfg, report: &report })?;

    if plot {
        let svg = convergence_svg(&report)?;
        write_file(&out.join("plot.svg"), svg.as_bytes())?;
    }

    for row in &report.rows {
        println!(
            "eps {:>9.6}: E = {:.4e} +- {:.1e}, W = {:.3e}  ({} cells, {} seeds, {} ms)",
            row.epsilon,
            row.e_mean,
            row.e_stderr,
            row.w_pairing,
            row.n_cells,
            row.n_seeds_ok,
            row.wall_ms
        );
    }
    println!("trend: {}", if report.passed { "PASS" } else { "FAIL" });
    Ok(if report.passed { CmdOutcome::Ok } else { CmdOutcome::CheckFailed })
}

/// Defect histogram with the bound check plus weak-form residuals.
pub fn cmd_kinetic_check(cfg: &RawConfig, out: &Path) -> Result<CmdOutcome> {
    let spec = medium_spec(cfg)?;
    let settings = solve_settings(cfg)?;
    let profile = initial_profile(cfg, settings.domain_length)?;
    let sup = profile.sup();
    if !(sup > 0.0 && sup.is_finite()) {
        return Err(Error::config("kinetic-check needs a profile with positive supremum"));
    }
    let p_min = cfg.f64_or("kinetic.p_min", 0.02 * sup)?;
    let p_max = cfg.f64_or("kinetic.p_max", 1.3 * sup)?;
    let bins = cfg.usize_or("kinetic.bins", 40)?;
    let inflation = cfg.f64_or("kinetic.inflation", 1.0)?;
    let sigma = cfg.f64_or("kinetic.sigma", 0.1 * sup)?;
    let level = cfg.f64_or("kinetic.level", 0.5 * sup)?;
    let xi_range = cfg.pair_or("kinetic.xi_range", (0.4 * sup, 0.85 * sup))?;
    let p_nodes = cfg.usize_or("kinetic.p_nodes", 33)?;
    cfg.finish()?;
    let bin_range_ok = bins >= 2 && p_min < p_max && p_min.is_finite() && p_max.is_finite();
    if !bin_range_ok {
        return Err(Error::config("kinetic bins must define an increasing range"));
    }

    // Dense snapshots for the time quadrature of the deposits; the
    // configured snapshot count is ignored here on purpose.
    let steps = (settings.solver.t_end / settings.solver.dt).ceil() as usize;
    let stride = steps.div_ceil(2048).max(1);
    let mut times: Vec<f64> =
        (1..=steps / stride).map(|k| (k * stride) as f64 * settings.solver.dt).collect();
    if times.last().is_none_or(|t| *t < settings.solver.t_end) {
        times.push(settings.solver.t_end);
    }

    let grid = Grid1D::new(settings.cells, settings.domain_length)?;
    let r = sample_realization(&spec, settings.seed)?;
    let coeffs = assemble_coefficients(&r, settings.epsilon, &grid)?;
    let phi: Vec<f64> = grid.centers().iter().map(|x| profile.eval(*x)).collect();
    let u0 = well_prepared_initial(&coeffs, &phi, &grid)?;
    let traj = solve(&u0, &coeffs, &grid, &settings.solver, &times)?;

    let edges: Vec<f64> =
        (0..=bins).map(|k| p_min + (p_max - p_min) * k as f64 / bins as f64).collect();
    let mut kd = defect_histogram(&traj, &coeffs, &edges)?;
    if inflation != 1.0 {
        // Injection fixture for checker sanity runs.
        for v in &mut kd.n_values {
            *v *= inflation;
        }
    }
    let report = check_defect_bound(&kd);

    let mut csv = Vec::new();
    kd.to_csv(&mut csv)?;
    write_file(&out.join("defect.csv"), &csv)?;

    let l = settings.domain_length;
    let t_end = settings.solver.t_end;
    let phi_test = ProductTest {
        time: SmoothBump { lo: -t_end, hi: t_end },
        space: SmoothBump { lo: 0.25 * l, hi: 0.75 * l },
    };
    let xi = SmoothBump { lo: xi_range.0, hi: xi_range.1 };
    if p_nodes < 2 {
        return Err(Error::config("kinetic.p_nodes must be at least 2"));
    }
    let p_quad: Vec<f64> = (0..p_nodes)
        .map(|k| xi_range.0 + (xi_range.1 - xi_range.0) * k as f64 / (p_nodes - 1) as f64)
        .collect();
    let residual = kinetic_residual(&traj, &coeffs, &phi_test, &xi, &p_quad)?;
    let entropy_gap = entropy_identity_gap(&traj, &coeffs, level, sigma, &phi_test)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        defect: &'a DefectBoundReport,
        kinetic_residual: f64,
        entropy_gap: f64,
        entropy_level: f64,
        sigma: f64,
        inflation: f64,
        bins: usize,
        p_min: f64,
        p_max: f64,
    }
    write_json(
        &out.join("summary.json"),
        &Summary {
            defect: &report,
            kinetic_residual: residual,
            entropy_gap,
            entropy_level: level,
            sigma,
            inflation,
            bins,
            p_min,
            p_max,
        },
    )?;

    println!(
        "defect bound: {} (mollified max violation {:.3e} vs tol {:.3e}, raw {:.3e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_violation,
        report.tol_bin,
        report.raw_max_violation
    );
    println!("kinetic residual {residual:.3e}; entropy gap at level {level}: {entropy_gap:.3e}");
    Ok(if report.passed { CmdOutcome::Ok } else { CmdOutcome::CheckFailed })
}
