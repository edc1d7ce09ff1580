//! Speed measures `μ` on `X = (-∞, -c*] ∪ [c*, ∞) ∪ {∞}`, the solutions
//! `u_μ` they generate, and the pointwise lower/upper bounds on `u_μ`.
//!
//! `u_μ` is the monotone limit of Cauchy problems started at `t = -n` from
//! the lower-bound expression. The continuous part of `μ` is replaced by an
//! adaptive Gauss–Legendre rule, so every bound becomes a finite sum over
//! weighted front profiles.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{FrontTrace, TraceObserver};
use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::nonlinearity::{critical_speed, Nonlinearity};
use crate::pde::{
    evolve, Boundary, Coefficients, Field, Grid1D, Observer, Snapshots, SolverConfig, Window,
};
use crate::profile_bank::ProfileBank;
use crate::profiles::{decay_rate, FrontProfile};
use crate::quadrature::{adaptive_rule, GaussLegendre};

/// Tail mass (relative to `M`) dropped when truncating unbounded pieces.
pub const TRUNCATION_MASS: f64 = 1e-12;
/// Absolute accuracy target of the speed quadrature.
pub const QUADRATURE_TOL: f64 = 1e-9;
const SPEED_RTOL: f64 = 1e-12;
/// Relative width of the sliver `[c*, c*(1 + CRITICAL_GAP)]` left out of
/// densities that start at the critical speed.
const CRITICAL_GAP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum DensityShape {
    /// Constant density.
    Uniform { value: f64 },
    /// `amplitude · e^{-rate (c - origin)}`.
    Exponential {
        amplitude: f64,
        rate: f64,
        origin: f64,
    },
    /// Monotone-cubic interpolation of `(c, ρ)` samples.
    Table(Arc<MonotoneCubic>),
}

/// A density on an interval of speeds; `hi` may be infinite (and `lo` may be
/// `-∞` on the negative half).
#[derive(Debug, Clone)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub shape: DensityShape,
}

impl DensityPiece {
    pub fn uniform(lo: f64, hi: f64, value: f64) -> Self {
        Self {
            lo,
            hi,
            shape: DensityShape::Uniform { value },
        }
    }

    pub fn exponential(lo: f64, hi: f64, amplitude: f64, rate: f64, origin: f64) -> Self {
        Self {
            lo,
            hi,
            shape: DensityShape::Exponential {
                amplitude,
                rate,
                origin,
            },
        }
    }

    pub fn table(points: &[(f64, f64)]) -> Result<Self> {
        let t = MonotoneCubic::new(points)?;
        let (lo, hi) = t.domain();
        Ok(Self {
            lo,
            hi,
            shape: DensityShape::Table(Arc::new(t)),
        })
    }

    pub fn density(&self, c: f64) -> f64 {
        if c < self.lo || c > self.hi {
            return 0.0;
        }
        match &self.shape {
            DensityShape::Uniform { value } => *value,
            DensityShape::Exponential {
                amplitude,
                rate,
                origin,
            } => amplitude * (-rate * (c - origin)).exp(),
            DensityShape::Table(t) => t.eval(c).max(0.0),
        }
    }

    /// Mass on `[a, b] ∩ [lo, hi]`.
    fn mass_between(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if !(a < b) {
            return 0.0;
        }
        match &self.shape {
            DensityShape::Uniform { value } => value * (b - a),
            DensityShape::Exponential {
                amplitude,
                rate,
                origin,
            } => {
                let f = |c: f64| {
                    if c.is_infinite() {
                        0.0
                    } else {
                        (-rate * (c - origin)).exp()
                    }
                };
                if *rate == 0.0 {
                    amplitude * (b - a)
                } else {
                    amplitude / rate * (f(a) - f(b))
                }
            }
            DensityShape::Table(_) => {
                let gl = GaussLegendre::new(8);
                let panels = 64;
                let h = (b - a) / panels as f64;
                (0..panels)
                    .map(|k| {
                        let l = a + k as f64 * h;
                        gl.integrate(|c| self.density(c), l, l + h)
                    })
                    .sum()
            }
        }
    }

    pub fn mass(&self) -> f64 {
        self.mass_between(self.lo, self.hi)
    }

    /// Finite interval carrying all but `drop` of the mass.
    fn truncated(&self, drop: f64) -> Result<(f64, f64)> {
        let total = self.mass();
        let mut lo = self.lo;
        let mut hi = self.hi;
        let bisect = |inner: f64, dir: f64, tail: &dyn Fn(f64) -> f64| -> f64 {
            let mut step = 1.0;
            let mut outer = inner + dir * step;
            while tail(outer) > drop {
                step *= 2.0;
                outer = inner + dir * step;
                if step > 1e6 {
                    break;
                }
            }
            let (mut a, mut b) = (inner, outer);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if tail(m) > drop {
                    a = m;
                } else {
                    b = m;
                }
            }
            b
        };
        if hi.is_infinite() {
            let anchor = if lo.is_finite() { lo } else { 0.0 };
            hi = bisect(anchor, 1.0, &|c| self.mass_between(c, f64::INFINITY));
        }
        if lo.is_infinite() {
            let anchor = if self.hi.is_finite() { self.hi } else { 0.0 };
            lo = bisect(anchor, -1.0, &|c| self.mass_between(f64::NEG_INFINITY, c));
        }
        if !(total.is_finite()) || !(lo < hi) {
            return Err(Error::InvalidInput(format!(
                "density piece on [{}, {}] has infinite or empty mass",
                self.lo, self.hi
            )));
        }
        Ok((lo, hi))
    }
}

/// A finite measure on speeds: atoms, densities and a mass at `∞`.
#[derive(Debug, Clone)]
pub struct SpeedMeasure {
    atoms: Vec<(f64, f64)>,
    pieces: Vec<DensityPiece>,
    mass_at_infinity: f64,
    fprime0: f64,
}

/// Extent of the positive part of the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportInfo {
    pub c_minus: Option<f64>,
    pub c_plus: Option<f64>,
    pub compact: bool,
    pub right_only: bool,
    pub has_infinity: bool,
}

/// Predictions about `u_μ` read off the measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub is_transition_front: bool,
    pub predicted_c_minus: Option<f64>,
    pub predicted_c_plus: Option<f64>,
    pub shift_bounded_past: bool,
    pub shift_bounded_future: bool,
}

impl SpeedMeasure {
    /// Validates and assembles a measure. Atoms at `±∞` are folded into the
    /// mass at infinity; atoms within 1e-12 (relative) of `±c*` snap onto it.
    pub fn new(
        atoms: &[(f64, f64)],
        pieces: Vec<DensityPiece>,
        mass_at_infinity: f64,
        fprime0: f64,
    ) -> Result<Self> {
        let cstar = critical_speed(fprime0);
        let mut inf = mass_at_infinity;
        if !(inf >= 0.0) || !inf.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mass at infinity must be finite and nonnegative, got {inf}"
            )));
        }
        let mut finite = Vec::new();
        for &(c, m) in atoms {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidInput(format!("atom at {c} has mass {m}")));
            }
            if c.is_infinite() {
                inf += m;
                continue;
            }
            if c.is_nan() || c.abs() < cstar * (1.0 - SPEED_RTOL) {
                return Err(Error::InvalidInput(format!(
                    "atom at {c} lies inside (-c*, c*) = (-{cstar}, {cstar})"
                )));
            }
            let c = if (c.abs() - cstar).abs() <= cstar * SPEED_RTOL {
                cstar.copysign(c)
            } else {
                c
            };
            if finite.iter().any(|&(d, _): &(f64, f64)| d == c) {
                return Err(Error::InvalidInput(format!("duplicate atom at {c}")));
            }
            finite.push((c, m));
        }
        finite.sort_by(|a, b| a.0.total_cmp(&b.0));
        for p in &pieces {
            let positive = p.lo >= cstar * (1.0 - SPEED_RTOL);
            let negative = p.hi <= -cstar * (1.0 - SPEED_RTOL);
            if !(p.lo < p.hi) || !(positive || negative) {
                return Err(Error::InvalidInput(format!(
                    "density piece [{}, {}] must be a nonempty interval outside (-c*, c*)",
                    p.lo, p.hi
                )));
            }
            let m = p.mass();
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "density piece [{}, {}] has mass {m}",
                    p.lo, p.hi
                )));
            }
            let (a, b) = p.truncated(TRUNCATION_MASS)?;
            for k in 0..=64 {
                let c = a + (b - a) * k as f64 / 64.0;
                let d = p.density(c);
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "density {d} at c = {c} is negative or not finite"
                    )));
                }
            }
        }
        let mu = Self {
            atoms: finite,
            pieces,
            mass_at_infinity: inf,
            fprime0,
        };
        let total = mu.total_mass();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(format!("total mass {total} must be positive")));
        }
        Ok(mu)
    }

    pub fn dirac(c: f64, mass: f64, fprime0: f64) -> Result<Self> {
        Self::new(&[(c, mass)], Vec::new(), 0.0, fprime0)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    pub fn mass_at_infinity(&self) -> f64 {
        self.mass_at_infinity
    }

    pub fn fprime0(&self) -> f64 {
        self.fprime0
    }

    pub fn cstar(&self) -> f64 {
        critical_speed(self.fprime0)
    }

    /// Mass of the atom at `c` (0 if none).
    pub fn atom_mass(&self, c: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.0 == c)
            .map(|a| a.1)
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>()
            + self.pieces.iter().map(|p| p.mass()).sum::<f64>()
            + self.mass_at_infinity
    }

    /// `M = μ(X \ {-c*, c*})`.
    pub fn reduced_mass(&self) -> f64 {
        let c = self.cstar();
        self.total_mass() - self.atom_mass(c) - self.atom_mass(-c)
    }

    /// Adds an atom (or increases an existing one).
    pub fn with_atom(&self, c: f64, mass: f64) -> Result<Self> {
        let mut atoms = self.atoms.clone();
        if let Some(a) = atoms.iter_mut().find(|a| a.0 == c) {
            a.1 += mass;
        } else {
            atoms.push((c, mass));
        }
        Self::new(&atoms, self.pieces.clone(), self.mass_at_infinity, self.fprime0)
    }

    /// Restriction to the speeds in `[lo, hi]`.
    pub fn restricted(&self, lo: f64, hi: f64) -> Result<Self> {
        let atoms: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .copied()
            .filter(|a| a.0 >= lo && a.0 <= hi)
            .collect();
        let pieces = self
            .pieces
            .iter()
            .filter(|p| p.hi > lo && p.lo < hi)
            .map(|p| DensityPiece {
                lo: p.lo.max(lo),
                hi: p.hi.min(hi),
                shape: p.shape.clone(),
            })
            .collect();
        let inf = if hi.is_infinite() {
            self.mass_at_infinity
        } else {
            0.0
        };
        Self::new(&atoms, pieces, inf, self.fprime0)
    }

    pub fn support_info(&self) -> SupportInfo {
        let cstar = self.cstar();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut negative = false;
        let mut bounded = self.mass_at_infinity == 0.0;
        for &(c, _) in &self.atoms {
            if c > 0.0 {
                lo = lo.min(c);
                hi = hi.max(c);
            } else {
                negative = true;
            }
        }
        for p in &self.pieces {
            if p.mass() <= 0.0 {
                continue;
            }
            if p.lo.is_infinite() || p.hi.is_infinite() {
                bounded = false;
            }
            if p.lo >= cstar * (1.0 - SPEED_RTOL) {
                lo = lo.min(p.lo);
                hi = hi.max(p.hi);
            } else {
                negative = true;
            }
        }
        SupportInfo {
            c_minus: lo.is_finite().then_some(lo),
            c_plus: (hi > f64::NEG_INFINITY).then_some(hi),
            compact: bounded,
            right_only: !negative && self.mass_at_infinity == 0.0,
            has_infinity: self.mass_at_infinity > 0.0,
        }
    }

    pub fn classify(&self) -> Classification {
        let s = self.support_info();
        let atom = |c: Option<f64>| c.map(|c| self.atom_mass(c) > 0.0).unwrap_or(false);
        Classification {
            is_transition_front: s.compact && s.right_only,
            predicted_c_minus: s.c_minus,
            predicted_c_plus: s.c_plus,
            shift_bounded_past: atom(s.c_minus),
            shift_bounded_future: atom(s.c_plus),
        }
    }
}

/// Where and when the quadrature in `c` must be accurate.
#[derive(Debug, Clone)]
pub struct ProbeSpec {
    pub times: Vec<f64>,
    /// Extra room around the range of front positions.
    pub pad: f64,
    pub spacing: f64,
    pub tol: f64,
}

impl ProbeSpec {
    pub fn for_horizon(t_start: f64, t_end: f64) -> Self {
        Self {
            times: vec![t_start, 0.5 * (t_start + t_end), t_end],
            pad: 60.0,
            spacing: 0.5,
            tol: QUADRATURE_TOL,
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    c: f64,
    weight: f64,
    lambda: f64,
    profile: Arc<FrontProfile>,
}

/// Pointwise lower and upper bounds on `u_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichBounds {
    pub lower: f64,
    pub upper: f64,
}

/// A measure resolved into weighted profiles, able to evaluate the bounds
/// and the initial data of the approximating Cauchy problems.
#[derive(Debug)]
pub struct MeasureField {
    mu: SpeedMeasure,
    nl: Nonlinearity,
    big_m: f64,
    ln_m: f64,
    critical: Option<Arc<FrontProfile>>,
    crit_plus: Option<f64>,
    crit_minus: Option<f64>,
    components: Vec<Component>,
    quadrature_error: f64,
}

impl MeasureField {
    pub fn build(mu: &SpeedMeasure, bank: &ProfileBank, probes: &ProbeSpec) -> Result<Self> {
        let nl = bank.nonlinearity().clone();
        if (nl.fprime0() - mu.fprime0).abs() > 1e-12 * mu.fprime0 {
            return Err(Error::InvalidInput(format!(
                "measure built for f'(0) = {} used with f'(0) = {}",
                mu.fprime0,
                nl.fprime0()
            )));
        }
        let cstar = mu.cstar();
        let big_m = mu.reduced_mass();
        let ln_m = if big_m > 0.0 { big_m.ln() } else { f64::NAN };
        let mp = mu.atom_mass(cstar);
        let mm = mu.atom_mass(-cstar);
        let critical = if mp > 0.0 || mm > 0.0 {
            Some(bank.get(cstar)?)
        } else {
            None
        };
        let mut nodes: Vec<(f64, f64)> = mu
            .atoms
            .iter()
            .copied()
            .filter(|a| a.0.abs() != cstar)
            .collect();
        let mut quadrature_error = 0.0;
        if big_m > 0.0 {
            for piece in &mu.pieces {
                let (a, b) = piece.truncated(TRUNCATION_MASS * big_m)?;
                let xs = probe_points(probes, a, b, ln_m);
                // Profiles depend on sqrt(|c| - c*) near the critical speed;
                // integrating in s with |c| = c* + s² keeps the integrand smooth.
                let map = SpeedMap::for_interval(a, b, cstar);
                let (sa, sb) = map.parameter_range(a, b);
                let sa = sa.max(map.parameter_floor(cstar));
                let breaks: Vec<f64> = if b - a > 1.0 {
                    (1..(b - a).ceil() as usize)
                        .map(|k| map.parameter(a + k as f64))
                        .collect()
                } else {
                    Vec::new()
                };
                let rule = adaptive_rule(sa, sb, &breaks, probes.tol, 60, |ss| {
                    let cs: Vec<f64> = ss.iter().map(|&s| map.speed(s)).collect();
                    let profiles = bank.get_many(&cs)?;
                    Ok(ss
                        .par_iter()
                        .zip(cs.par_iter())
                        .zip(profiles.par_iter())
                        .map(|((&s, &c), p)| {
                            let rho = piece.density(c) * map.jacobian(s) / big_m;
                            let abs = c.abs();
                            xs.iter()
                                .map(|&(t, x)| {
                                    rho * p.value(c.signum() * x - abs * t - abs * ln_m)
                                })
                                .collect()
                        })
                        .collect())
                })?;
                quadrature_error += rule.error_estimate;
                nodes.extend(
                    rule.nodes
                        .iter()
                        .map(|&(s, w)| {
                            let c = map.speed(s);
                            (c, w * map.jacobian(s) * piece.density(c))
                        })
                        .filter(|n| n.1 > 0.0),
                );
            }
        }
        let speeds: Vec<f64> = nodes.iter().map(|n| n.0.abs()).collect();
        let profiles = bank.get_many(&speeds)?;
        let components = nodes
            .iter()
            .zip(profiles)
            .map(|(&(c, weight), profile)| {
                Ok(Component {
                    c,
                    weight,
                    lambda: decay_rate(c.abs(), mu.fprime0)?,
                    profile,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mu: mu.clone(),
            nl,
            big_m,
            ln_m,
            critical,
            crit_plus: (mp > 0.0).then(|| mp.ln()),
            crit_minus: (mm > 0.0).then(|| mm.ln()),
            components,
            quadrature_error,
        })
    }

    pub fn measure(&self) -> &SpeedMeasure {
        &self.mu
    }

    pub fn reduced_mass(&self) -> f64 {
        self.big_m
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.components.len()
    }

    pub fn quadrature_error(&self) -> f64 {
        self.quadrature_error
    }

    /// Critical-front terms `φ_{c*}(±x - c*t - c* ln μ(±c*))`.
    fn critical_terms(&self, t: f64, x: f64) -> (f64, f64) {
        let Some(p) = &self.critical else {
            return (0.0, 0.0);
        };
        let cs = p.speed();
        let plus = self
            .crit_plus
            .map(|l| p.value(x - cs * t - cs * l))
            .unwrap_or(0.0);
        let minus = self
            .crit_minus
            .map(|l| p.value(-x - cs * t - cs * l))
            .unwrap_or(0.0);
        (plus, minus)
    }

    /// The superposed branch `M⁻¹∫φ dμ + M⁻¹θ(t + ln M) μ(∞)`.
    fn superposition(&self, t: f64, x: f64) -> f64 {
        if !(self.big_m > 0.0) {
            return 0.0;
        }
        let tm = t + self.ln_m;
        let mut s = 0.0;
        for k in &self.components {
            let a = k.c.abs();
            s += k.weight * k.profile.value(k.c.signum() * x - a * tm);
        }
        if self.mu.mass_at_infinity > 0.0 {
            s += self.nl.theta(tm).value * self.mu.mass_at_infinity;
        }
        s / self.big_m
    }

    pub fn lower(&self, t: f64, x: f64) -> f64 {
        let (p, m) = self.critical_terms(t, x);
        p.max(m).max(self.superposition(t, x)).min(1.0)
    }

    pub fn upper(&self, t: f64, x: f64) -> f64 {
        let (p, m) = self.critical_terms(t, x);
        let mut s = 0.0;
        if self.big_m > 0.0 {
            let tm = t + self.ln_m;
            for k in &self.components {
                let a = k.c.abs();
                s += k.weight * (-k.lambda * (k.c.signum() * x - a * tm)).exp();
            }
            if self.mu.mass_at_infinity > 0.0 {
                s += (self.mu.fprime0 * tm).exp() * self.mu.mass_at_infinity;
            }
            s /= self.big_m;
        }
        (p + m + s).min(1.0)
    }

    pub fn bounds(&self, t: f64, x: f64) -> SandwichBounds {
        SandwichBounds {
            lower: self.lower(t, x),
            upper: self.upper(t, x),
        }
    }

    /// Initial datum of the Cauchy problem started at `t = -n`.
    pub fn initial_condition(&self, n: f64, grid: Grid1D) -> Result<Field> {
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| self.lower(-n, grid.x(i)))
            .collect();
        Field::new(grid, values, -n)
    }

    /// Leftmost point where the lower bound crosses 1/2 at time `t`.
    pub fn lower_half_position(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.position_range(t);
        let step = 0.25;
        let mut x = lo - 100.0;
        let mut prev = self.lower(t, x);
        while x < hi + 100.0 {
            let nx = x + step;
            let v = self.lower(t, nx);
            if prev >= 0.5 && v < 0.5 {
                let (mut a, mut b) = (x, nx);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if self.lower(t, m) >= 0.5 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return Ok(0.5 * (a + b));
            }
            x = nx;
            prev = v;
        }
        Err(Error::NotBracketed { level: 0.5 })
    }

    /// Range of front centers `c (t + ln M)` over the resolved speeds.
    fn position_range(&self, t: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut add = |x: f64| {
            lo = lo.min(x);
            hi = hi.max(x);
        };
        if self.big_m > 0.0 {
            for k in &self.components {
                add(k.c * (t + self.ln_m));
            }
        }
        if let Some(p) = &self.critical {
            let cs = p.speed();
            if let Some(l) = self.crit_plus {
                add(cs * (t + l));
            }
            if let Some(l) = self.crit_minus {
                add(-cs * (t + l));
            }
        }
        if !lo.is_finite() {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    /// Largest violations `max(lower - u)` and `max(u - upper)` on a field.
    pub fn sandwich_violation(&self, u: &Field) -> (f64, f64) {
        (0..u.values.len())
            .into_par_iter()
            .map(|i| {
                let b = self.bounds(u.time, u.x(i));
                (b.lower - u.values[i], u.values[i] - b.upper)
            })
            .reduce(
                || (f64::NEG_INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.max(b.0), a.1.max(b.1)),
            )
    }
}

/// Integration variable for a density piece.
#[derive(Debug, Clone, Copy)]
enum SpeedMap {
    Identity,
    /// `c = origin + sign·s²`, for pieces touching `±c*`.
    Critical { origin: f64, sign: f64 },
}

impl SpeedMap {
    fn for_interval(a: f64, b: f64, cstar: f64) -> Self {
        let near = |c: f64| (c.abs() - cstar).abs() <= cstar * SPEED_RTOL;
        if a > 0.0 && near(a) {
            SpeedMap::Critical {
                origin: a,
                sign: 1.0,
            }
        } else if b < 0.0 && near(b) {
            SpeedMap::Critical {
                origin: b,
                sign: -1.0,
            }
        } else {
            SpeedMap::Identity
        }
    }

    fn speed(&self, s: f64) -> f64 {
        match *self {
            SpeedMap::Identity => s,
            SpeedMap::Critical { origin, sign } => origin + sign * s * s,
        }
    }

    fn parameter(&self, c: f64) -> f64 {
        match *self {
            SpeedMap::Identity => c,
            SpeedMap::Critical { origin, sign } => (sign * (c - origin)).max(0.0).sqrt(),
        }
    }

    fn jacobian(&self, s: f64) -> f64 {
        match *self {
            SpeedMap::Identity => 1.0,
            SpeedMap::Critical { .. } => 2.0 * s,
        }
    }

    /// Smallest parameter used: speeds closer to `c*` than `CRITICAL_GAP`
    /// would snap to the critical front, whose normalization differs.
    fn parameter_floor(&self, cstar: f64) -> f64 {
        match self {
            SpeedMap::Identity => f64::NEG_INFINITY,
            SpeedMap::Critical { .. } => (CRITICAL_GAP * cstar).sqrt(),
        }
    }

    fn parameter_range(&self, a: f64, b: f64) -> (f64, f64) {
        let (p, q) = (self.parameter(a), self.parameter(b));
        (p.min(q), p.max(q))
    }
}

fn probe_points(probes: &ProbeSpec, a: f64, b: f64, ln_m: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &t in &probes.times {
        let ends = [a * (t + ln_m), b * (t + ln_m)];
        let lo = ends[0].min(ends[1]) - probes.pad;
        let hi = ends[0].max(ends[1]) + probes.pad;
        let n = ((hi - lo) / probes.spacing).ceil() as usize;
        out.extend((0..=n).map(|k| (t, lo + k as f64 * probes.spacing)));
    }
    out
}

/// Numerical settings for runs of `u_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSettings {
    pub dx: f64,
    pub dt: f64,
    /// The window is `[X - half_width, X + half_width]` around the front.
    pub half_width: f64,
    /// Spacing of trace samples.
    pub trace_every: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            dx: 0.05,
            dt: 1e-3,
            half_width: 150.0,
            trace_every: 0.1,
        }
    }
}

/// One evolution of the Cauchy problem started at `t = -n`.
#[derive(Debug, Clone)]
pub struct MeasureRun {
    pub n: f64,
    pub snapshots: Vec<Field>,
    pub trace: FrontTrace,
    pub final_field: Field,
}

/// Evolves the approximation started at `t = -n` to `t_end`, recording a
/// trace from `trace_from` on and full fields at `snapshot_times`.
pub fn run_measure(
    mf: &Arc<MeasureField>,
    n: f64,
    t_end: f64,
    settings: &RunSettings,
    trace_from: f64,
    snapshot_times: &[f64],
) -> Result<MeasureRun> {
    let x_half = mf.lower_half_position(-n)?;
    let grid = Grid1D::covering(
        x_half - settings.half_width,
        x_half + settings.half_width,
        settings.dx,
    )?;
    let u0 = mf.initial_condition(n, grid)?;
    let co = Coefficients::homogeneous(mf.nl.clone());
    let (g, h) = (mf.clone(), mf.clone());
    let cfg = SolverConfig::new(
        settings.dt,
        Boundary::Split {
            left: Arc::new(move |t, x| g.upper(t, x)),
            right: Arc::new(move |t, x| h.lower(t, x)),
        },
        Window::FollowHalfLevel,
        0.0,
    );
    let from = trace_from.max(-n);
    let mut tracer = TraceObserver::uniform(from, t_end, settings.trace_every);
    let mut snaps = Snapshots::at(snapshot_times);
    let observers: &mut [&mut dyn Observer] = &mut [&mut tracer, &mut snaps];
    let final_field = evolve(&u0, &co, &cfg, t_end, observers)?;
    Ok(MeasureRun {
        n,
        snapshots: snaps.fields,
        trace: tracer.trace,
        final_field,
    })
}

/// Outcome of the ladder of approximations `u_μⁿ`.
#[derive(Debug, Clone)]
pub struct ApproximationReport {
    pub n_list: Vec<f64>,
    pub targets: Vec<f64>,
    /// `fields[k][j]`: run `n_list[k]` at `targets[j]`.
    pub fields: Vec<Vec<Field>>,
    /// Largest decrease `u^{n_k} - u^{n_{k+1}}` over targets and common points.
    pub max_decrease: f64,
    /// `sup_differences[k][j] = sup |u^{n_{k+1}} - u^{n_k}|` at `targets[j]`.
    pub sup_differences: Vec<Vec<f64>>,
    /// Worst `(lower - u, u - upper)` over every field.
    pub sandwich_violation: (f64, f64),
}

/// Largest `a - b` over the common points of two aligned fields.
pub fn max_excess(a: &Field, b: &Field) -> Result<f64> {
    let (i, j, len) = a
        .grid
        .overlap(&b.grid)
        .ok_or_else(|| Error::InvalidInput("fields do not overlap on a common grid".into()))?;
    Ok((0..len)
        .map(|k| a.values[i + k] - b.values[j + k])
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Evolves the approximations for every `n` in `n_list` (in parallel) to the
/// target times and checks that they increase with `n` within `tolerance`.
pub fn approximate_u_mu(
    mf: &Arc<MeasureField>,
    n_list: &[f64],
    targets: &[f64],
    settings: &RunSettings,
    tolerance: f64,
) -> Result<ApproximationReport> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.is_empty() {
        return Err(Error::InvalidInput("n_list must be increasing and nonempty".into()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("no target times".into()));
    }
    let t_end = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &n in n_list {
        if targets.iter().any(|&t| t <= -n) {
            return Err(Error::InvalidInput(format!(
                "target times must exceed the start time -{n}"
            )));
        }
    }
    let runs: Vec<MeasureRun> = n_list
        .par_iter()
        .map(|&n| run_measure(mf, n, t_end, settings, t_end, targets))
        .collect::<Result<_>>()?;
    let fields: Vec<Vec<Field>> = runs.into_iter().map(|r| r.snapshots).collect();
    let mut max_decrease = f64::NEG_INFINITY;
    let mut sup_differences = Vec::new();
    for k in 0..fields.len() - 1 {
        let mut row = Vec::new();
        for j in 0..targets.len() {
            let dec = max_excess(&fields[k][j], &fields[k + 1][j])?;
            let inc = max_excess(&fields[k + 1][j], &fields[k][j])?;
            max_decrease = max_decrease.max(dec);
            row.push(dec.max(inc));
        }
        sup_differences.push(row);
    }
    let mut sandwich = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for f in fields.iter().flatten() {
        let v = mf.sandwich_violation(f);
        sandwich = (sandwich.0.max(v.0), sandwich.1.max(v.1));
    }
    if max_decrease > tolerance {
        return Err(Error::SchemeInconsistency(format!(
            "approximations decrease by {max_decrease:e} between consecutive n (tolerance {tolerance:e}); refine dt/dx"
        )));
    }
    Ok(ApproximationReport {
        n_list: n_list.to_vec(),
        targets: targets.to_vec(),
        fields,
        max_decrease,
        sup_differences,
        sandwich_violation: sandwich,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> ProfileBank {
        ProfileBank::new(Nonlinearity::logistic())
    }

    fn two_speed() -> SpeedMeasure {
        SpeedMeasure::new(&[(2.5, 1.0), (4.0, 1.0)], vec![], 0.0, 1.0).unwrap()
    }

    fn box_measure() -> SpeedMeasure {
        SpeedMeasure::new(&[], vec![DensityPiece::uniform(2.5, 4.0, 1.0)], 0.0, 1.0).unwrap()
    }

    fn exp_tail() -> SpeedMeasure {
        SpeedMeasure::new(
            &[],
            vec![DensityPiece::exponential(2.0, f64::INFINITY, 1.0, 1.0, 2.0)],
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn validation_rules() {
        assert!(SpeedMeasure::dirac(1.5, 1.0, 1.0).is_err());
        assert!(SpeedMeasure::new(&[(3.0, 1.0), (3.0, 2.0)], vec![], 0.0, 1.0).is_err());
        assert!(SpeedMeasure::new(&[], vec![DensityPiece::uniform(1.0, 3.0, 1.0)], 0.0, 1.0).is_err());
        assert!(SpeedMeasure::new(&[], vec![], 0.0, 1.0).is_err());
        assert!(SpeedMeasure::new(
            &[],
            vec![DensityPiece::uniform(2.0, f64::INFINITY, 1.0)],
            0.0,
            1.0
        )
        .is_err());
        let m = SpeedMeasure::new(&[(f64::INFINITY, 0.3), (2.5, 1.0)], vec![], 0.0, 1.0).unwrap();
        assert_eq!(m.mass_at_infinity(), 0.3);
        assert!((m.reduced_mass() - 1.3).abs() < 1e-15);
    }

    #[test]
    fn support_examples() {
        let s = two_speed().support_info();
        assert_eq!((s.c_minus, s.c_plus), (Some(2.5), Some(4.0)));
        assert!(s.compact && s.right_only && !s.has_infinity);
        assert!(!exp_tail().support_info().compact);
        let m = SpeedMeasure::new(&[(2.5, 1.0), (f64::INFINITY, 0.3)], vec![], 0.0, 1.0).unwrap();
        let s = m.support_info();
        assert!(!s.right_only && s.has_infinity);
    }

    #[test]
    fn classification_examples() {
        let c = two_speed().classify();
        assert!(c.is_transition_front && c.shift_bounded_past && c.shift_bounded_future);
        let c = box_measure().classify();
        assert!(c.is_transition_front && !c.shift_bounded_past && !c.shift_bounded_future);
        assert!(!exp_tail().classify().is_transition_front);
    }

    #[test]
    fn single_atom_initial_data_is_a_shifted_front() {
        let b = bank();
        for m in [1.0, 0.3] {
            let mu = SpeedMeasure::dirac(2.5, m, 1.0).unwrap();
            let mf = MeasureField::build(&mu, &b, &ProbeSpec::for_horizon(-10.0, 0.0)).unwrap();
            let p = b.get(2.5).unwrap();
            let g = Grid1D::new(-60.0, 0.1, 801).unwrap();
            let u = mf.initial_condition(10.0, g).unwrap();
            for i in 0..g.len() {
                let expected = p.value(g.x(i) + 25.0 - 2.5 * m.ln());
                assert!((u.values[i] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn critical_atom_initial_data() {
        let b = bank();
        let mu = SpeedMeasure::dirac(2.0, 1.0, 1.0).unwrap();
        let mf = MeasureField::build(&mu, &b, &ProbeSpec::for_horizon(-10.0, 0.0)).unwrap();
        let p = b.get(2.0).unwrap();
        for x in [-30.0, -20.0, -5.0, 3.0] {
            assert_eq!(mf.lower(-10.0, x), p.value(x + 20.0));
        }
    }

    #[test]
    fn uniform_density_quadrature_matches_direct_integration() {
        let b = bank();
        let mu = box_measure();
        let mf = MeasureField::build(&mu, &b, &ProbeSpec::for_horizon(-20.0, 10.0)).unwrap();
        // reference: brute-force midpoint rule with 6000 cells
        let big_m = 1.5f64;
        for (t, x) in [(-20.0, -50.0), (0.0, 1.0), (10.0, 35.0)] {
            let cells = 6000;
            let h = 1.5 / cells as f64;
            let cs: Vec<f64> = (0..cells).map(|k| 2.5 + (k as f64 + 0.5) * h).collect();
            let ps = b.get_many(&cs).unwrap();
            let reference: f64 = cs
                .iter()
                .zip(&ps)
                .map(|(c, p)| h * p.value(x - c * t - c * big_m.ln()))
                .sum::<f64>()
                / big_m;
            assert!((mf.lower(t, x) - reference).abs() < 1e-6);
        }
    }

    #[test]
    fn bounds_are_ordered_and_have_the_right_limits() {
        let b = bank();
        for mu in [two_speed(), box_measure()] {
            let mf = MeasureField::build(&mu, &b, &ProbeSpec::for_horizon(-10.0, 10.0)).unwrap();
            for t in [-10.0, 0.0, 10.0] {
                for k in -40..=40 {
                    let x = 2.0 * k as f64;
                    let s = mf.bounds(t, x);
                    assert!(s.lower <= s.upper + 1e-12, "t={t} x={x}: {s:?}");
                }
                assert!(mf.upper(t, 1000.0) < 1e-12);
                assert!(mf.lower(t, -1000.0) > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn single_atom_bounds_coincide_with_front() {
        let b = bank();
        let mu = SpeedMeasure::dirac(3.0, 0.5, 1.0).unwrap();
        let mf = MeasureField::build(&mu, &b, &ProbeSpec::for_horizon(-5.0, 5.0)).unwrap();
        let p = b.get(3.0).unwrap();
        let x = 4.0;
        let t = 1.0;
        assert_eq!(mf.lower(t, x), p.value(x - 3.0 * t - 3.0 * 0.5f64.ln()));
    }

    #[test]
    fn right_only_initial_data_is_nonincreasing() {
        let b = bank();
        let mf = MeasureField::build(&box_measure(), &b, &ProbeSpec::for_horizon(-20.0, 0.0)).unwrap();
        let g = Grid1D::new(-120.0, 0.05, 3001).unwrap();
        let u = mf.initial_condition(20.0, g).unwrap();
        assert!(u.is_nonincreasing(0.0));
    }

    #[test]
    fn density_touching_the_critical_speed_is_integrated() {
        let b = bank();
        let mf = MeasureField::build(&exp_tail(), &b, &ProbeSpec::for_horizon(-10.0, 10.0)).unwrap();
        assert!(mf.quadrature_error() < 1e-8);
        let total: f64 = mf.components.iter().map(|k| k.weight).sum();
        assert!((total - 1.0).abs() < 1e-8, "{total}");
        assert!(mf.components.iter().all(|k| k.c > 2.0));
    }

    #[test]
    fn exponential_tail_is_truncated_at_small_mass() {
        let p = DensityPiece::exponential(2.0, f64::INFINITY, 1.0, 1.0, 2.0);
        let (a, b) = p.truncated(1e-12).unwrap();
        assert_eq!(a, 2.0);
        assert!((b - (2.0 + 1e12f64.ln())).abs() < 1e-6);
        assert!((p.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dirac_ladder_reproduces_the_front() {
        let b = bank();
        let mu = SpeedMeasure::dirac(2.5, 1.0, 1.0).unwrap();
        let mf = Arc::new(
            MeasureField::build(&mu, &b, &ProbeSpec::for_horizon(-20.0, 0.0)).unwrap(),
        );
        let settings = RunSettings {
            dx: 0.1,
            dt: 5e-3,
            half_width: 60.0,
            trace_every: 0.5,
        };
        let rep = approximate_u_mu(&mf, &[10.0, 20.0], &[0.0], &settings, 1e-6).unwrap();
        let p = b.get(2.5).unwrap();
        for row in &rep.fields {
            let u = &row[0];
            let err = (0..u.values.len())
                .map(|i| (u.values[i] - p.value(u.x(i))).abs())
                .fold(0.0, f64::max);
            assert!(err < 2e-3, "error {err:e}");
        }
    }
}
