//! Builders from flat configuration keys to library types.

use pmh_core::flux::CoefficientTriple;
use pmh_core::medium::{Atom, MediumKind, MediumSpec};
use pmh_core::solver::BoundaryCondition;
use pmh_core::{Error, HomogenizationConfig, InitialProfile, Result, SolverConfig};

use crate::config::RawConfig;

/// Medium description from the `medium.*` namespace.
pub fn medium_spec(cfg: &RawConfig) -> Result<MediumSpec> {
    let kind = cfg.require("medium.kind")?.to_string();
    let spec = match kind.as_str() {
        "constant" => MediumSpec::constant(
            cfg.req_f64("medium.a")?,
            cfg.req_f64("medium.b")?,
            cfg.req_f64("medium.gamma")?,
        ),
        "two_atom" => MediumSpec::atoms(vec![
            Atom { triple: CoefficientTriple::new(1.0, 0.0, 1.0)?, weight: 0.5 },
            Atom { triple: CoefficientTriple::new(4.0, 0.0, 1.0)?, weight: 0.5 },
        ]),
        "atoms" => {
            let text = cfg.require("medium.atoms")?;
            let mut atoms = Vec::new();
            for (k, part) in text.split(';').enumerate() {
                let nums: Vec<f64> = part
                    .split(',')
                    .map(|c| {
                        c.trim().parse::<f64>().map_err(|_| {
                            Error::config(format!(
                                "medium.atoms entry {}: '{}' is not a number",
                                k + 1,
                                c.trim()
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                if nums.len() != 4 {
                    return Err(Error::config(format!(
                        "medium.atoms entry {}: expected 'a,b,gamma,weight'",
                        k + 1
                    )));
                }
                atoms.push(Atom {
                    triple: CoefficientTriple::new(nums[0], nums[1], nums[2])?,
                    weight: nums[3],
                });
            }
            MediumSpec::atoms(atoms)
        }
        seeded @ ("periodic" | "almost_periodic" | "random_fourier") => {
            let kind = match seeded {
                "periodic" => MediumKind::Periodic { period: cfg.req_f64("medium.period")? },
                "almost_periodic" => MediumKind::AlmostPeriodic,
                _ => MediumKind::RandomFourier { freq_range: cfg.req_pair("medium.freq_range")? },
            };
            MediumSpec {
                kind,
                dimension: 1,
                a_range: cfg.req_pair("medium.a_range")?,
                b_range: cfg.pair_or("medium.b_range", (0.0, 0.0))?,
                gamma_range: cfg.pair_or("medium.gamma_range", (1.0, 1.0))?,
                modes: cfg.usize_or("medium.modes", 3)?,
                frequencies: cfg.get_list("medium.frequencies")?,
            }
        }
        other => {
            return Err(Error::config(format!(
                "medium.kind '{other}' is not one of constant, periodic, almost_periodic, \
                 random_fourier, two_atom, atoms"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Initial flux profile from the `experiment.profile*` keys. Position
/// defaults are relative to the domain so minimal configs stay small.
pub fn initial_profile(cfg: &RawConfig, domain_length: f64) -> Result<InitialProfile> {
    let shape = cfg.string_or("experiment.profile", "bump").to_string();
    let center = cfg.f64_or("experiment.center", 0.5 * domain_length)?;
    let profile = match shape.as_str() {
        "bump" => InitialProfile::Bump {
            amplitude: cfg.f64_or("experiment.amplitude", 1.0)?,
            center,
            width: cfg.f64_or("experiment.width", 0.25 * domain_length)?,
        },
        "plateau" => {
            let half_width = cfg.f64_or("experiment.half_width", 0.25 * domain_length)?;
            InitialProfile::Plateau {
                amplitude: cfg.f64_or("experiment.amplitude", 1.0)?,
                center,
                half_width,
                ramp: cfg.f64_or("experiment.ramp", 0.25 * half_width)?,
            }
        }
        "two_bumps" => {
            let centers = cfg.pair_or(
                "experiment.centers",
                (0.3 * domain_length, 0.7 * domain_length),
            )?;
            InitialProfile::TwoBumps {
                amplitude: cfg.f64_or("experiment.amplitude", 1.0)?,
                centers,
                width: cfg.f64_or("experiment.width", 0.125 * domain_length)?,
            }
        }
        "constant" => InitialProfile::Constant { level: cfg.f64_or("experiment.level", 1.0)? },
        other => {
            return Err(Error::config(format!(
                "experiment.profile '{other}' is not one of bump, plateau, two_bumps, constant"
            )))
        }
    };
    profile.validate()?;
    Ok(profile)
}

/// Settings shared by the single-trajectory commands (`solve`,
/// `kinetic-check`).
pub struct SolveSettings {
    pub solver: SolverConfig,
    pub domain_length: f64,
    pub cells: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub snapshots: usize,
}

pub fn solve_settings(cfg: &RawConfig) -> Result<SolveSettings> {
    let dt = cfg.req_f64("solver.dt")?;
    let t_end = cfg.req_f64("solver.t_end")?;
    let bc = match cfg.string_or("solver.bc", "periodic") {
        "periodic" => BoundaryCondition::Periodic,
        "dirichlet" => {
            BoundaryCondition::DirichletStationary { level: cfg.f64_or("solver.bc_level", 0.0)? }
        }
        other => {
            return Err(Error::config(format!(
                "solver.bc '{other}' is not one of periodic, dirichlet"
            )))
        }
    };
    let mut solver = SolverConfig::new(dt, t_end, bc);
    solver.newton_tol = cfg.get_f64("solver.newton_tol")?;
    solver.newton_max = cfg.usize_or("solver.newton_max", solver.newton_max)?;
    Ok(SolveSettings {
        solver,
        domain_length: cfg.req_f64("solver.domain_length")?,
        cells: cfg.req_usize("solver.cells")?,
        epsilon: cfg.req_f64("solver.epsilon")?,
        seed: cfg.u64_or("medium.seed", 0)?,
        snapshots: cfg.usize_or("solver.snapshots", 16)?,
    })
}

/// Uniform snapshot times over `(0, t_end]`.
pub fn snapshot_times(t_end: f64, count: usize) -> Vec<f64> {
    (1..=count.max(1)).map(|k| t_end * k as f64 / count.max(1) as f64).collect()
}

/// Sweep description for `homogenize` from `experiment.*`, time stepping
/// from `solver.*`, and the effective-flux table from `flux.*`.
pub fn homogenization_config(cfg: &RawConfig) -> Result<HomogenizationConfig> {
    let medium = medium_spec(cfg)?;
    let domain_length = cfg.f64_or("experiment.domain_length", 4.0)?;
    let profile = initial_profile(cfg, domain_length)?;
    let eps_list = cfg.req_list("experiment.eps_list")?;
    let hcfg = HomogenizationConfig {
        seeds_per_eps: cfg.usize_or("experiment.seeds_per_eps", 8)?,
        cells_per_eps: cfg.usize_or("experiment.cells_per_eps", 16)?,
        domain_length,
        t_end: cfg.req_f64("solver.t_end")?,
        n_snapshots: cfg.usize_or("solver.snapshots", 16)?,
        dt: cfg.req_f64("solver.dt")?,
        mc_samples: cfg.usize_or("flux.mc_samples", 4096)?,
        base_seed: cfg.u64_or("experiment.base_seed", 1)?,
        n_hom_cells: cfg.usize_or("experiment.hom_cells", 512)?,
        p_table_nodes: cfg.usize_or("flux.nodes", 513)?,
        ..HomogenizationConfig::new(medium, profile, eps_list)
    };
    hcfg.validate()?;
    Ok(hcfg)
}
