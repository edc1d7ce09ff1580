//! Intersection counting and steepness sandwiches between a solution and a
//! front profile.
//!
//! `u` is *steeper* than `φ` when, after anchoring both at a point where they
//! take the same value, `u` lies above `φ` on the left and below it on the
//! right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::level_position;
use crate::error::{Error, Result};
use crate::pde::{evolve_pair, Coefficients, Field, Grid1D, SolverConfig};
use crate::profiles::FrontProfile;

/// Default dead band for [`sign_changes`].
pub const DEAD_BAND: f64 = 1e-9;
/// Anchor levels used by the bundled checks.
pub const ANCHOR_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const MONOTONE_SLACK: f64 = 1e-9;

/// Number of sign alternations of `u - v`, ignoring differences within
/// `dead_band` (those points keep the last confirmed sign).
pub fn sign_changes(u: &Field, v: &Field, dead_band: f64) -> Result<usize> {
    if u.grid != v.grid {
        return Err(Error::InvalidInput("sign_changes needs identical grids".into()));
    }
    if !(dead_band >= 0.0) {
        return Err(Error::InvalidInput(format!("dead band {dead_band} must be >= 0")));
    }
    let mut last = 0i8;
    let mut count = 0;
    for (a, b) in u.values.iter().zip(&v.values) {
        let d = a - b;
        let s = if d > dead_band {
            1
        } else if d < -dead_band {
            -1
        } else {
            0
        };
        if s != 0 {
            if last != 0 && s != last {
                count += 1;
            }
            last = s;
        }
    }
    Ok(count)
}

/// Sign-change counts of an evolving pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionSeries {
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    pub nonincreasing: bool,
}

/// Evolves `u0` and `v0` with the same scheme and counts their crossings at
/// `check_times`.
pub fn intersection_monotonicity(
    u0: &Field,
    v0: &Field,
    co: &Coefficients,
    cfg: &SolverConfig,
    check_times: &[f64],
) -> Result<IntersectionSeries> {
    let mut times: Vec<f64> = check_times.to_vec();
    times.sort_by(|a, b| a.total_cmp(b));
    let mut counts = Vec::with_capacity(times.len());
    let mut seen = Vec::with_capacity(times.len());
    let t_end = *times
        .last()
        .ok_or_else(|| Error::InvalidInput("no check times".into()))?;
    if times.first().copied().unwrap_or(t_end) < u0.time {
        return Err(Error::InvalidInput("check times precede the initial time".into()));
    }
    if t_end <= u0.time {
        counts.push(sign_changes(u0, v0, DEAD_BAND)?);
        seen.push(u0.time);
    } else {
        evolve_pair(
            u0,
            v0,
            co,
            cfg,
            t_end,
            &times,
            |_, _| Ok(()),
            |u, v| {
                counts.push(sign_changes(u, v, DEAD_BAND)?);
                seen.push(u.time);
                Ok(())
            },
        )?;
    }
    let nonincreasing = counts.windows(2).all(|w| w[1] <= w[0]);
    Ok(IntersectionSeries {
        times: seen,
        counts,
        nonincreasing,
    })
}

/// A front-like field and a perturbed copy, reproducible from `seed`. The
/// perturbation is a few localized oscillations, so the pair crosses
/// several times.
pub fn seeded_perturbation_pair(grid: Grid1D, seed: u64) -> Result<(Field, Field)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = 0.5 * (grid.x0() + grid.x_end());
    let width = rng.gen_range(2.0..5.0);
    let amp = rng.gen_range(0.02..0.08);
    let k = rng.gen_range(0.6..1.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let spread = rng.gen_range(4.0..8.0);
    let base = move |x: f64| 0.5 * (1.0 - ((x - center) / width).tanh());
    let u = Field::from_fn(grid, 0.0, base)?;
    let v = Field::from_fn(grid, 0.0, move |x| {
        let y = x - center;
        let bump = (-(y / spread).powi(2)).exp();
        (base(x) + amp * bump * (k * y + phase).sin()).clamp(0.0, 1.0)
    })?;
    Ok((u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Steeper,
    LessSteep,
}

/// Worst violation recorded at one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Offender {
    pub t: f64,
    pub anchor: f64,
    pub x: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub points_checked: usize,
    pub max_violation_left: f64,
    pub max_violation_right: f64,
    /// Steeper mode only: `max(u'(X) - φ'(φ⁻¹(u(X))))` over anchors.
    pub max_slope_violation: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub offenders: Vec<Offender>,
}

impl SandwichReport {
    fn empty(tolerance: f64) -> Self {
        Self {
            points_checked: 0,
            max_violation_left: f64::NEG_INFINITY,
            max_violation_right: f64::NEG_INFINITY,
            max_slope_violation: None,
            tolerance,
            pass: true,
            offenders: Vec::new(),
        }
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: &SandwichReport) {
        self.points_checked += other.points_checked;
        self.max_violation_left = self.max_violation_left.max(other.max_violation_left);
        self.max_violation_right = self.max_violation_right.max(other.max_violation_right);
        self.max_slope_violation = match (self.max_slope_violation, other.max_slope_violation) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.tolerance = self.tolerance.max(other.tolerance);
        self.pass &= other.pass;
        self.offenders.extend_from_slice(&other.offenders);
    }

    pub fn worst(&self) -> f64 {
        self.max_violation_left
            .max(self.max_violation_right)
            .max(self.max_slope_violation.unwrap_or(f64::NEG_INFINITY))
    }
}

/// `5e-3 + 2 dx max|φ'|`.
pub fn sandwich_tolerance(dx: f64, p: &FrontProfile) -> f64 {
    5e-3 + 2.0 * dx * p.max_slope()
}

/// Positions where `u` crosses the given levels.
pub fn anchors_at_levels(u: &Field, levels: &[f64]) -> Result<Vec<f64>> {
    levels.iter().map(|&m| level_position(u, m)).collect()
}

/// Checks the steepness sandwich of `u` against `p` at each anchor.
pub fn steepness_check(
    u: &Field,
    p: &FrontProfile,
    anchors: &[f64],
    direction: Direction,
    tol: f64,
) -> Result<SandwichReport> {
    if !u.is_nonincreasing(MONOTONE_SLACK) {
        return Err(Error::Domain(
            "steepness checks need a nonincreasing field".into(),
        ));
    }
    let dx = u.grid.dx();
    let per_anchor: Vec<(f64, f64, Option<f64>, Offender)> = anchors
        .par_iter()
        .map(|&a| -> Result<_> {
            if a < u.grid.x0() || a > u.grid.x_end() {
                return Err(Error::Domain(format!("anchor {a} lies outside the grid")));
            }
            // Snap to the nearest node so the anchor level is a sample, not an
            // interpolant.
            let k = (((a - u.grid.x0()) / dx).round() as usize).min(u.values.len() - 1);
            let a = u.x(k);
            let s = p.inverse(u.values[k])?;
            let mut left = f64::NEG_INFINITY;
            let mut right = f64::NEG_INFINITY;
            let mut worst = Offender {
                t: u.time,
                anchor: a,
                x: a,
                violation: f64::NEG_INFINITY,
            };
            for (i, &ui) in u.values.iter().enumerate() {
                let y = u.x(i) - a;
                let r = p.value(s + y);
                let (lv, rv) = match direction {
                    Direction::Steeper => (r - ui, ui - r),
                    Direction::LessSteep => (ui - r, r - ui),
                };
                if y <= 0.0 && lv > left {
                    left = lv;
                    if lv > worst.violation {
                        worst.x = u.x(i);
                        worst.violation = lv;
                    }
                }
                if y >= 0.0 && rv > right {
                    right = rv;
                    if rv > worst.violation {
                        worst.x = u.x(i);
                        worst.violation = rv;
                    }
                }
            }
            let slope = match direction {
                Direction::Steeper => {
                    let lo = k.saturating_sub(1);
                    let hi = (k + 1).min(u.values.len() - 1);
                    let du = (u.values[hi] - u.values[lo]) / (u.x(hi) - u.x(lo));
                    Some(du - p.slope(s))
                }
                Direction::LessSteep => None,
            };
            Ok((left, right, slope, worst))
        })
        .collect::<Result<_>>()?;
    let mut report = SandwichReport::empty(tol);
    report.points_checked = anchors.len() * u.values.len();
    for (l, r, s, o) in per_anchor {
        report.max_violation_left = report.max_violation_left.max(l);
        report.max_violation_right = report.max_violation_right.max(r);
        if let Some(s) = s {
            report.max_slope_violation = Some(report.max_slope_violation.unwrap_or(s).max(s));
        }
        report.offenders.push(o);
    }
    report.pass = report.worst() <= tol;
    Ok(report)
}

/// Checks that `u` is no steeper than the critical front.
pub fn critical_steepest_check(
    u: &Field,
    p_star: &FrontProfile,
    anchors: &[f64],
    tol: f64,
) -> Result<SandwichReport> {
    if !p_star.is_critical() {
        return Err(Error::InvalidInput(format!(
            "reference speed {} is not critical",
            p_star.speed()
        )));
    }
    if u.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("critical steepness check needs 0 <= u <= 1".into()));
    }
    steepness_check(u, p_star, anchors, Direction::LessSteep, tol)
}
