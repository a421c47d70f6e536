//! Stationary random coefficient fields on the line.
//!
//! A medium assigns to every point `y` a coefficient triple `(a, b, gamma)`
//! for the pointwise flux. Realizations are finite trigonometric sums mapped
//! affinely into the configured ranges, so every generated value is bounded
//! inside its range by construction. The probability space is the seed space
//! of a counter-based generator (ChaCha8, one stream per coefficient);
//! sampling twice with the same seed reproduces the realization exactly.
//!
//! Shifting a realization commutes with evaluation (`evaluate(shift(r, z), y)
//! = evaluate(r, y + z)`), which is the discrete form of stationarity. For
//! the periodic kind the ensemble is the uniform phase shift on one cell
//! (Haar measure on the torus); for the almost-periodic and random-Fourier
//! kinds the phases are independent and uniform. In all three cases spatial
//! averages of a fixed realization converge to ensemble averages, provided
//! the combined frequency set is rationally independent; the default
//! frequency assignment guarantees that.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::CoefficientTriple;

/// Seed of the generator that draws canonical (seed-independent) mode
/// amplitudes, so that the shape of periodic and almost-periodic media is a
/// function of the spec alone.
const CANONICAL_SEED: u64 = 0x706d_685f_6d65_6469;

/// One outcome of a finite probability space: a coefficient triple with its
/// probability weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// The spatially constant coefficients of this outcome.
    pub triple: CoefficientTriple,
    /// Probability weight; weights must sum to one.
    pub weight: f64,
}

/// The structural family a medium is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumKind {
    /// Coefficients constant in space; each seed draws one uniform value per
    /// coefficient from its range.
    Constant,
    /// Trigonometric polynomials with common period `period`; the ensemble
    /// shifts the cell by a uniform random offset.
    Periodic {
        /// Spatial period of every coefficient.
        period: f64,
    },
    /// Trigonometric sums over rationally independent frequencies with
    /// independent uniform phases per seed.
    AlmostPeriodic,
    /// Fixed amplitude profile; frequencies (uniform in `freq_range`) and
    /// phases are redrawn per seed.
    RandomFourier {
        /// Angular frequency window the modes are drawn from.
        freq_range: (f64, f64),
    },
    /// Finite probability space given explicitly; realizations are constant
    /// in space and ensemble averages can be computed exactly.
    Atoms {
        /// The outcomes with their weights.
        atoms: Vec<Atom>,
    },
}

/// Declarative description of a medium ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    /// Structural family.
    pub kind: MediumKind,
    /// Spatial dimension; only 1 is implemented.
    pub dimension: usize,
    /// Range of the multiplicative coefficient; the lower end must be > 0.
    pub a_range: (f64, f64),
    /// Range of the additive offset.
    pub b_range: (f64, f64),
    /// Range of the degeneracy exponent; the lower end must be > 0.
    pub gamma_range: (f64, f64),
    /// Number of modes per coefficient (ignored by constant and atom kinds).
    pub modes: usize,
    /// Optional explicit angular frequencies, shared by all coefficients.
    ///
    /// When `None`, the kind-specific defaults apply. Caution: sharing one
    /// frequency across coefficients with independent phases breaks joint
    /// ergodicity of the almost-periodic ensemble; the default assignment
    /// (disjoint, rationally independent lists) avoids this.
    pub frequencies: Option<Vec<f64>>,
}

impl MediumSpec {
    /// Medium with fixed coefficients everywhere, for any seed.
    pub fn constant(a: f64, b: f64, gamma: f64) -> Self {
        MediumSpec {
            kind: MediumKind::Constant,
            dimension: 1,
            a_range: (a, a),
            b_range: (b, b),
            gamma_range: (gamma, gamma),
            modes: 0,
            frequencies: None,
        }
    }

    /// Finite-atom medium; the coefficient ranges are set to the envelope of
    /// the atom values.
    pub fn atoms(atoms: Vec<Atom>) -> Self {
        let fold = |f: fn(&Atom) -> f64, init: (f64, f64)| {
            atoms.iter().fold(init, |(lo, hi), a| (lo.min(f(a)), hi.max(f(a))))
        };
        let a_range = fold(|a| a.triple.a, (f64::MAX, f64::MIN));
        let b_range = fold(|a| a.triple.b, (f64::MAX, f64::MIN));
        let gamma_range = fold(|a| a.triple.gamma, (f64::MAX, f64::MIN));
        MediumSpec {
            kind: MediumKind::Atoms { atoms },
            dimension: 1,
            a_range,
            b_range,
            gamma_range,
            modes: 0,
            frequencies: None,
        }
    }

    /// Checks ranges, dimension and kind-specific parameters.
    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 {
            return Err(Error::config(format!(
                "only dimension 1 is implemented, got {}",
                self.dimension
            )));
        }
        for (name, (lo, hi)) in [
            ("a_range", self.a_range),
            ("b_range", self.b_range),
            ("gamma_range", self.gamma_range),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::config(format!("{name} must be a finite ordered pair")));
            }
        }
        if self.a_range.0 <= 0.0 {
            return Err(Error::config("a_range lower bound must be > 0"));
        }
        if self.gamma_range.0 <= 0.0 {
            return Err(Error::config("gamma_range lower bound must be > 0"));
        }
        match &self.kind {
            MediumKind::Constant => {}
            MediumKind::Periodic { period } => {
                if !(*period > 0.0 && period.is_finite()) {
                    return Err(Error::config("period must be positive"));
                }
                self.check_modes()?;
                if let Some(freqs) = &self.frequencies {
                    let base = 2.0 * std::f64::consts::PI / period;
                    for w in freqs {
                        let k = w / base;
                        if (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) || k.round() < 1.0 {
                            return Err(Error::config(format!(
                                "frequency {w} is not a positive multiple of 2*pi/period"
                            )));
                        }
                    }
                }
            }
            MediumKind::AlmostPeriodic => self.check_modes()?,
            MediumKind::RandomFourier { freq_range } => {
                self.check_modes()?;
                if !(freq_range.0 > 0.0 && freq_range.1 > freq_range.0 && freq_range.1.is_finite())
                {
                    return Err(Error::config("freq_range must satisfy 0 < lo < hi"));
                }
            }
            MediumKind::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::config("atom medium needs at least one atom"));
                }
                let mut total = 0.0;
                for atom in atoms {
                    atom.triple.validate()?;
                    if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                        return Err(Error::config("atom weights must be positive"));
                    }
                    total += atom.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("atom weights sum to {total}, expected 1")));
                }
            }
        }
        if let Some(freqs) = &self.frequencies {
            if freqs.len() != self.modes {
                return Err(Error::config("explicit frequency list must have `modes` entries"));
            }
            if freqs.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::config("explicit frequencies must be positive and finite"));
            }
        }
        Ok(())
    }

    fn check_modes(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::config("oscillatory media need modes >= 1"));
        }
        Ok(())
    }
}

/// Mode data of one scalar coefficient: a trigonometric sum with amplitudes
/// normalized to unit total, mapped affinely into `[lo, hi]`. An empty mode
/// list encodes the constant value `lo` (= `hi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModes {
    /// Lower end of the affine range.
    pub lo: f64,
    /// Upper end of the affine range.
    pub hi: f64,
    /// Mode amplitudes; their absolute values must sum to at most one.
    pub amplitudes: Vec<f64>,
    /// Angular frequencies, one per mode.
    pub frequencies: Vec<f64>,
    /// Phases, one per mode.
    pub phases: Vec<f64>,
}

impl CoefficientModes {
    /// Constant coefficient.
    pub fn constant(value: f64) -> Self {
        CoefficientModes {
            lo: value,
            hi: value,
            amplitudes: Vec::new(),
            frequencies: Vec::new(),
            phases: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.amplitudes.len() != self.frequencies.len()
            || self.amplitudes.len() != self.phases.len()
        {
            return Err(Error::config("mode arrays must have equal length"));
        }
        let total: f64 = self.amplitudes.iter().map(|a| a.abs()).sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::config(
                "mode amplitudes must sum to at most one so values stay in range",
            ));
        }
        if self.lo > self.hi || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::config("coefficient range must be ordered and finite"));
        }
        Ok(())
    }

    #[inline]
    fn eval(&self, y: f64) -> f64 {
        let mut raw = 0.0;
        for k in 0..self.amplitudes.len() {
            raw += self.amplitudes[k] * (self.frequencies[k] * y + self.phases[k]).sin();
        }
        self.lo + (self.hi - self.lo) * 0.5 * (1.0 + raw)
    }

    /// Longest mode period, if any mode is present.
    fn longest_period(&self) -> Option<f64> {
        self.frequencies
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, w| {
                let t = 2.0 * std::f64::consts::PI / w;
                Some(acc.map_or(t, |a| a.max(t)))
            })
    }
}

/// One sampled medium: frozen mode data for the three coefficients plus the
/// accumulated spatial shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumRealization {
    spec: MediumSpec,
    seed: u64,
    base_shift: f64,
    a: CoefficientModes,
    b: CoefficientModes,
    gamma: CoefficientModes,
}

impl MediumRealization {
    /// Builds a realization from explicit mode data (used for controlled
    /// studies and tests; `sample_realization` is the seeded path).
    pub fn from_parts(
        spec: MediumSpec,
        seed: u64,
        a: CoefficientModes,
        b: CoefficientModes,
        gamma: CoefficientModes,
    ) -> Result<Self> {
        a.validate()?;
        b.validate()?;
        gamma.validate()?;
        if a.lo <= 0.0 {
            return Err(Error::config("coefficient a must stay positive"));
        }
        if gamma.lo <= 0.0 {
            return Err(Error::config("exponent gamma must stay positive"));
        }
        Ok(MediumRealization { spec, seed, base_shift: 0.0, a, b, gamma })
    }

    /// The spec the realization was drawn from.
    pub fn spec(&self) -> &MediumSpec {
        &self.spec
    }

    /// The seed it was drawn with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Accumulated shift applied by [`MediumRealization::shift`].
    pub fn base_shift(&self) -> f64 {
        self.base_shift
    }

    /// Mode data of the three coefficients, in the order `a`, `b`, `gamma`.
    pub fn coefficient_modes(&self) -> [&CoefficientModes; 3] {
        [&self.a, &self.b, &self.gamma]
    }

    /// Coefficients at the point `y`.
    #[inline]
    pub fn evaluate(&self, y: f64) -> CoefficientTriple {
        let z = y + self.base_shift;
        CoefficientTriple { a: self.a.eval(z), b: self.b.eval(z), gamma: self.gamma.eval(z) }
    }

    /// The realization translated by `z`: evaluating the result at `y` gives
    /// the original field at `y + z` (group law in `z`).
    pub fn shift(&self, z: f64) -> Self {
        let mut out = self.clone();
        out.base_shift += z;
        out
    }

    /// Longest period among all modes of all coefficients, if oscillatory.
    pub fn longest_period(&self) -> Option<f64> {
        [&self.a, &self.b, &self.gamma]
            .iter()
            .filter_map(|c| c.longest_period())
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
    }
}

/// Pool of rationally independent frequency multipliers: 1, sqrt2, sqrt3,
/// the golden ratio, then square roots of squarefree integers >= 6. sqrt5 is
/// skipped because the golden ratio already spans {1, sqrt5} rationally.
fn incommensurate_pool(n: usize) -> Vec<f64> {
    let mut pool = vec![1.0, 2f64.sqrt(), 3f64.sqrt(), 0.5 * (1.0 + 5f64.sqrt())];
    let mut d: u64 = 6;
    while pool.len() < n {
        if is_squarefree(d) {
            pool.push((d as f64).sqrt());
        }
        d += 1;
    }
    pool.truncate(n);
    pool
}

fn is_squarefree(mut d: u64) -> bool {
    let mut p = 2;
    while p * p <= d {
        if d.is_multiple_of(p * p) {
            return false;
        }
        while d.is_multiple_of(p) {
            d /= p;
        }
        p += 1;
    }
    true
}

/// Draws amplitudes that are a function of the spec alone (not the seed) and
/// sum to one in absolute value.
fn canonical_amplitudes(modes: usize, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(CANONICAL_SEED);
    rng.set_stream(stream);
    let mut amps: Vec<f64> = (0..modes).map(|_| rng.gen_range(0.5..1.0)).collect();
    let total: f64 = amps.iter().sum();
    for a in &mut amps {
        *a /= total;
    }
    amps
}

/// Samples one realization. The same `(spec, seed)` pair always yields the
/// same realization.
pub fn sample_realization(spec: &MediumSpec, seed: u64) -> Result<MediumRealization> {
    spec.validate()?;
    let ranges = [spec.a_range, spec.b_range, spec.gamma_range];
    let coeff_rng = |j: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j + 1);
        rng
    };

    let coeffs: [CoefficientModes; 3] = match &spec.kind {
        MediumKind::Constant => {
            let mut out = Vec::with_capacity(3);
            for (j, (lo, hi)) in ranges.iter().enumerate() {
                let u: f64 = coeff_rng(j as u64).gen();
                out.push(CoefficientModes::constant(lo + (hi - lo) * u));
            }
            [out[0].clone(), out[1].clone(), out[2].clone()]
        }
        MediumKind::Atoms { atoms } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = atoms[atoms.len() - 1].triple;
            for atom in atoms {
                acc += atom.weight;
                if u < acc {
                    chosen = atom.triple;
                    break;
                }
            }
            [
                CoefficientModes::constant(chosen.a),
                CoefficientModes::constant(chosen.b),
                CoefficientModes::constant(chosen.gamma),
            ]
        }
        MediumKind::Periodic { period } => {
            let base = 2.0 * std::f64::consts::PI / period;
            let freqs: Vec<f64> = spec
                .frequencies
                .clone()
                .unwrap_or_else(|| (1..=spec.modes).map(|k| base * k as f64).collect());
            // Common uniform shift of the periodicity cell: the ensemble is
            // the torus with Haar measure.
            let mut rng0 = ChaCha8Rng::seed_from_u64(seed);
            rng0.set_stream(0);
            let s: f64 = rng0.gen::<f64>() * period;
            let mut out = Vec::with_capacity(3);
            for (j, (lo, hi)) in ranges.iter().enumerate() {
                let amplitudes = canonical_amplitudes(spec.modes, j as u64);
                let mut canon = ChaCha8Rng::seed_from_u64(CANONICAL_SEED);
                canon.set_stream(16 + j as u64);
                let phases: Vec<f64> = (0..spec.modes)
                    .map(|k| {
                        let theta: f64 = canon.gen_range(0.0..std::f64::consts::TAU);
                        theta + freqs[k] * s
                    })
                    .collect();
                out.push(CoefficientModes {
                    lo: *lo,
                    hi: *hi,
                    amplitudes,
                    frequencies: freqs.clone(),
                    phases,
                });
            }
            [out[0].clone(), out[1].clone(), out[2].clone()]
        }
        MediumKind::AlmostPeriodic => {
            let pool = incommensurate_pool(3 * spec.modes);
            let mut out = Vec::with_capacity(3);
            for (j, (lo, hi)) in ranges.iter().enumerate() {
                let freqs: Vec<f64> = match &spec.frequencies {
                    Some(list) => list.clone(),
                    None => (0..spec.modes)
                        .map(|k| std::f64::consts::TAU * pool[j * spec.modes + k])
                        .collect(),
                };
                let amplitudes = canonical_amplitudes(spec.modes, j as u64);
                let mut rng = coeff_rng(j as u64);
                let phases: Vec<f64> =
                    (0..spec.modes).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
                out.push(CoefficientModes {
                    lo: *lo,
                    hi: *hi,
                    amplitudes,
                    frequencies: freqs,
                    phases,
                });
            }
            [out[0].clone(), out[1].clone(), out[2].clone()]
        }
        MediumKind::RandomFourier { freq_range } => {
            let mut out = Vec::with_capacity(3);
            for (j, (lo, hi)) in ranges.iter().enumerate() {
                let amplitudes = canonical_amplitudes(spec.modes, j as u64);
                let mut rng = coeff_rng(j as u64);
                let freqs: Vec<f64> = match &spec.frequencies {
                    Some(list) => list.clone(),
                    None => (0..spec.modes)
                        .map(|_| rng.gen_range(freq_range.0..freq_range.1))
                        .collect(),
                };
                let phases: Vec<f64> =
                    (0..spec.modes).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
                out.push(CoefficientModes {
                    lo: *lo,
                    hi: *hi,
                    amplitudes,
                    frequencies: freqs,
                    phases,
                });
            }
            [out[0].clone(), out[1].clone(), out[2].clone()]
        }
    };

    let [a, b, gamma] = coeffs;
    Ok(MediumRealization { spec: spec.clone(), seed, base_shift: 0.0, a, b, gamma })
}

/// Monte Carlo ensemble mean and standard error of `h(coefficients at 0)`
/// over `samples` consecutive seeds starting at `seed0`.
pub fn ensemble_mean(
    spec: &MediumSpec,
    h: impl Fn(&CoefficientTriple) -> f64,
    samples: usize,
    seed0: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::config("ensemble mean needs at least two samples"));
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for k in 0..samples {
        let r = sample_realization(spec, seed0.wrapping_add(k as u64))?;
        let v = h(&r.evaluate(0.0));
        sum += v;
        sumsq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sumsq - sum * sum / m) / (m - 1.0)).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

/// Composite midpoint average of `h(coefficients)` over the box `[0, extent]`.
pub fn spatial_mean(
    r: &MediumRealization,
    h: impl Fn(&CoefficientTriple) -> f64,
    extent: f64,
    n_points: usize,
) -> Result<f64> {
    if !(extent > 0.0 && extent.is_finite()) || n_points == 0 {
        return Err(Error::config("spatial mean needs extent > 0 and n_points >= 1"));
    }
    let dx = extent / n_points as f64;
    let mut sum = 0.0;
    for i in 0..n_points {
        let y = (i as f64 + 0.5) * dx;
        sum += h(&r.evaluate(y));
    }
    Ok(sum / n_points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_spec(modes: usize) -> MediumSpec {
        MediumSpec {
            kind: MediumKind::Periodic { period: 1.0 },
            dimension: 1,
            a_range: (1.5, 2.5),
            b_range: (-0.25, 0.25),
            gamma_range: (0.75, 1.25),
            modes,
            frequencies: None,
        }
    }

    fn fourier_spec() -> MediumSpec {
        MediumSpec {
            kind: MediumKind::RandomFourier {
                freq_range: (std::f64::consts::PI, 5.0 * std::f64::consts::PI),
            },
            dimension: 1,
            a_range: (1.0, 3.0),
            b_range: (-0.5, 0.5),
            gamma_range: (0.5, 2.0),
            modes: 4,
            frequencies: None,
        }
    }

    #[test]
    fn degenerate_constant_spec_is_deterministic() {
        let spec = MediumSpec::constant(2.0, 0.0, 1.0);
        for seed in [0u64, 1, 99, u64::MAX] {
            let r = sample_realization(&spec, seed).unwrap();
            for y in [-3.0, 0.0, 7.5] {
                let c = r.evaluate(y);
                assert_eq!((c.a, c.b, c.gamma), (2.0, 0.0, 1.0));
            }
        }
    }

    #[test]
    fn single_mode_sine_hits_its_crest() {
        // a(y) = 2 + 0.5*sin(2*pi*y) built explicitly; at y = 1/4 the mode
        // sits at its crest, so a = 2.5.
        let spec = periodic_spec(1);
        let a = CoefficientModes {
            lo: 1.5,
            hi: 2.5,
            amplitudes: vec![1.0],
            frequencies: vec![std::f64::consts::TAU],
            phases: vec![0.0],
        };
        let r = MediumRealization::from_parts(
            spec,
            0,
            a,
            CoefficientModes::constant(0.0),
            CoefficientModes::constant(1.0),
        )
        .unwrap();
        assert!((r.evaluate(0.25).a - 2.5).abs() < 1e-14);
        assert!((r.evaluate(0.0).a - 2.0).abs() < 1e-14);
        assert!((r.evaluate(0.75).a - 1.5).abs() < 1e-14);
    }

    #[test]
    fn same_seed_reproduces_realization() {
        for spec in [periodic_spec(3), fourier_spec()] {
            let r1 = sample_realization(&spec, 42).unwrap();
            let r2 = sample_realization(&spec, 42).unwrap();
            assert_eq!(r1, r2);
            let r3 = sample_realization(&spec, 43).unwrap();
            assert_ne!(r1, r3);
        }
    }

    #[test]
    fn shift_commutes_with_evaluation() {
        // Single shift from a freshly sampled realization is bit-exact.
        for spec in [periodic_spec(2), fourier_spec()] {
            for seed in 0..8u64 {
                let r = sample_realization(&spec, seed).unwrap();
                for k in 0..32 {
                    let y = -4.0 + 0.27 * k as f64;
                    let z = 2.5 - 0.13 * k as f64;
                    let lhs = r.shift(z).evaluate(y);
                    let rhs = r.evaluate(y + z);
                    assert!((lhs.a - rhs.a).abs() <= 1e-14 * (1.0 + rhs.a.abs()));
                    assert!((lhs.b - rhs.b).abs() <= 1e-14 * (1.0 + rhs.b.abs()));
                    assert!((lhs.gamma - rhs.gamma).abs() <= 1e-14 * (1.0 + rhs.gamma.abs()));
                }
            }
        }
    }

    #[test]
    fn shifts_compose_as_a_group() {
        let r = sample_realization(&periodic_spec(2), 5).unwrap();
        let r0 = r.shift(0.0);
        assert_eq!(r, r0);
        let once = r.shift(1.25).shift(-0.5);
        let direct = r.shift(0.75);
        assert!((once.base_shift() - direct.base_shift()).abs() < 1e-15);
        let back = r.shift(1.25).shift(-1.25);
        assert_eq!(back.base_shift(), 0.0);
        let c1 = back.evaluate(0.3);
        let c2 = r.evaluate(0.3);
        assert_eq!((c1.a, c1.b, c1.gamma), (c2.a, c2.b, c2.gamma));
    }

    #[test]
    fn values_stay_inside_ranges() {
        for spec in [periodic_spec(4), fourier_spec()] {
            for seed in 0..20u64 {
                let r = sample_realization(&spec, seed).unwrap();
                for k in 0..200 {
                    let c = r.evaluate(-7.0 + 0.07 * k as f64);
                    assert!(c.a >= spec.a_range.0 - 1e-12 && c.a <= spec.a_range.1 + 1e-12);
                    assert!(c.b >= spec.b_range.0 - 1e-12 && c.b <= spec.b_range.1 + 1e-12);
                    assert!(
                        c.gamma >= spec.gamma_range.0 - 1e-12
                            && c.gamma <= spec.gamma_range.1 + 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn ensemble_mean_of_constant_h_has_no_error() {
        let (mean, err) = ensemble_mean(&periodic_spec(2), |_| 1.0, 64, 0).unwrap();
        assert_eq!(mean, 1.0);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn ensemble_mean_of_degenerate_spec() {
        let spec = MediumSpec::constant(2.0, 0.0, 1.0);
        let (mean, err) = ensemble_mean(&spec, |c| c.a, 32, 7).unwrap();
        assert_eq!(mean, 2.0);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn random_phase_mean_approaches_range_midpoint() {
        // The phase average of an affine image of zero-mean sines is the
        // midpoint of the range; for a_range (1.5, 2.5) that is 2.
        let (mean, stderr) = ensemble_mean(&periodic_spec(1), |c| c.a, 4000, 11).unwrap();
        assert!(
            (mean - 2.0).abs() <= 3.0 * stderr,
            "mean {mean} deviates from 2 by more than 3 stderr ({stderr})"
        );
    }

    #[test]
    fn spatial_mean_over_whole_periods_is_exact() {
        // Midpoint quadrature of a trigonometric polynomial over a whole
        // number of periods is exact to rounding.
        let r = sample_realization(&periodic_spec(3), 9).unwrap();
        let mean = spatial_mean(&r, |c| c.a, 4.0, 512).unwrap();
        assert!((mean - 2.0).abs() < 1e-12, "{mean}");
    }

    #[test]
    fn spatial_and_ensemble_means_agree_for_ergodic_kinds() {
        let ap = MediumSpec {
            kind: MediumKind::AlmostPeriodic,
            dimension: 1,
            a_range: (1.0, 3.0),
            b_range: (-0.5, 0.5),
            gamma_range: (0.5, 1.5),
            modes: 3,
            frequencies: None,
        };
        for spec in [ap, fourier_spec()] {
            let r = sample_realization(&spec, 3).unwrap();
            let h = |c: &CoefficientTriple| c.g(0.8);
            let space = spatial_mean(&r, h, 400.0, 40_000).unwrap();
            let (ens, stderr) = ensemble_mean(&spec, h, 4000, 100).unwrap();
            let period = r.longest_period().unwrap();
            let box_corr = period / 400.0;
            assert!(
                (space - ens).abs() <= 3.0 * (stderr + box_corr),
                "spatial {space} vs ensemble {ens} (stderr {stderr}, box {box_corr})"
            );
        }
    }

    #[test]
    fn atom_sampling_respects_weights() {
        let spec = MediumSpec::atoms(vec![
            Atom { triple: CoefficientTriple::new(1.0, 0.0, 1.0).unwrap(), weight: 0.25 },
            Atom { triple: CoefficientTriple::new(4.0, 0.0, 1.0).unwrap(), weight: 0.75 },
        ]);
        let mut hits = 0;
        let n = 4000;
        for seed in 0..n {
            let r = sample_realization(&spec, seed).unwrap();
            if r.evaluate(0.0).a == 4.0 {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.03, "atom frequency {frac}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut bad = periodic_spec(2);
        bad.a_range = (0.0, 1.0);
        assert!(sample_realization(&bad, 0).is_err());

        let mut bad = periodic_spec(2);
        bad.gamma_range = (-0.5, 1.0);
        assert!(sample_realization(&bad, 0).is_err());

        let mut bad = periodic_spec(2);
        bad.dimension = 2;
        assert!(sample_realization(&bad, 0).is_err());

        let mut bad = periodic_spec(0);
        bad.modes = 0;
        assert!(sample_realization(&bad, 0).is_err());

        let bad = MediumSpec::atoms(vec![Atom {
            triple: CoefficientTriple::new(1.0, 0.0, 1.0).unwrap(),
            weight: 0.5,
        }]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pool_is_distinct_and_positive() {
        let pool = incommensurate_pool(24);
        for (i, v) in pool.iter().enumerate() {
            assert!(*v > 0.0);
            for w in &pool[i + 1..] {
                assert!((v - w).abs() > 1e-9);
            }
        }
    }
}
