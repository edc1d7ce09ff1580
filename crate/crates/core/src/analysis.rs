//! Front positions, interface widths, speed fits and tail decay rates
//! extracted from evolved fields.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pde::{Field, Observer};
use crate::profiles::{psi, FrontProfile};

/// Fraction of the horizon used by the past and future speed windows.
pub const SPEED_WINDOW_FRACTION: f64 = 0.25;
/// Relative threshold for declaring a global mean speed.
pub const GLOBAL_SPEED_RTOL: f64 = 0.05;
/// Width-growth slope (space/time) above which a trace counts as spreading.
pub const WIDTH_SLOPE_LIMIT: f64 = 1e-2;
pub const DEFAULT_TAIL_LEVELS: (f64, f64) = (1e-8, 1e-3);

/// Leftmost point where `u = m`, by linear interpolation between grid points.
pub fn level_position(u: &Field, m: f64) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Domain(format!("level {m} is outside (0, 1)")));
    }
    let v = &u.values;
    for i in 0..v.len() - 1 {
        let (a, b) = (v[i] - m, v[i + 1] - m);
        if a == 0.0 {
            return Ok(u.x(i));
        }
        if (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0) {
            let s = a / (a - b);
            return Ok(u.x(i) + s * u.grid.dx());
        }
    }
    if *v.last().unwrap() == m {
        return Ok(u.grid.x_end());
    }
    Err(Error::NotBracketed { level: m })
}

/// Diameter of `{x_i : a ≤ u_i ≤ b}`; zero when the set is empty.
pub fn interface_width(u: &Field, a: f64, b: f64) -> f64 {
    let inside = |v: &f64| *v >= a && *v <= b;
    let first = u.values.iter().position(inside);
    let last = u.values.iter().rposition(inside);
    match (first, last) {
        (Some(i), Some(j)) => u.x(j) - u.x(i),
        _ => 0.0,
    }
}

/// Time series of level positions and widths.
#[derive(Debug, Clone, Serialize)]
pub struct FrontTrace {
    pub levels: Vec<f64>,
    pub width_levels: (f64, f64),
    pub times: Vec<f64>,
    /// `positions[k][j]` is `X_{levels[k]}(times[j])`, NaN where not bracketed.
    pub positions: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
}

impl Default for FrontTrace {
    fn default() -> Self {
        Self::new(&[0.1, 0.5, 0.9], (0.1, 0.9))
    }
}

impl FrontTrace {
    pub fn new(levels: &[f64], width_levels: (f64, f64)) -> Self {
        Self {
            levels: levels.to_vec(),
            width_levels,
            times: Vec::new(),
            positions: vec![Vec::new(); levels.len()],
            widths: Vec::new(),
        }
    }

    pub fn record(&mut self, u: &Field) {
        self.times.push(u.time);
        for (k, &m) in self.levels.iter().enumerate() {
            self.positions[k].push(level_position(u, m).unwrap_or(f64::NAN));
        }
        self.widths
            .push(interface_width(u, self.width_levels.0, self.width_levels.1));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Position series for level `m`, if it was recorded.
    pub fn series(&self, m: f64) -> Option<&[f64]> {
        self.levels
            .iter()
            .position(|&l| (l - m).abs() < 1e-12)
            .map(|k| self.positions[k].as_slice())
    }

    pub fn horizon(&self) -> (f64, f64) {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (f64::NAN, f64::NAN),
        }
    }

    /// Samples with `t` in `[lo, hi]`.
    pub fn restricted(&self, lo: f64, hi: f64) -> FrontTrace {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&j| self.times[j] >= lo && self.times[j] <= hi)
            .collect();
        FrontTrace {
            levels: self.levels.clone(),
            width_levels: self.width_levels,
            times: keep.iter().map(|&j| self.times[j]).collect(),
            positions: self
                .positions
                .iter()
                .map(|p| keep.iter().map(|&j| p[j]).collect())
                .collect(),
            widths: keep.iter().map(|&j| self.widths[j]).collect(),
        }
    }

    /// CSV with a `t` column, one `X_m` column per level and the width.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for m in &self.levels {
            write!(w, ",X_{m}")?;
        }
        writeln!(w, ",width_{}_{}", self.width_levels.0, self.width_levels.1)?;
        for j in 0..self.len() {
            write!(w, "{:.10e}", self.times[j])?;
            for p in &self.positions {
                write!(w, ",{:.10e}", p[j])?;
            }
            writeln!(w, ",{:.10e}", self.widths[j])?;
        }
        Ok(())
    }
}

/// Records a [`FrontTrace`] at the requested times during an evolution.
#[derive(Debug, Clone)]
pub struct TraceObserver {
    pub trace: FrontTrace,
    pub requested: Vec<f64>,
}

impl TraceObserver {
    /// Samples every `every` time units on `[t0, t1]`.
    pub fn uniform(t0: f64, t1: f64, every: f64) -> Self {
        let n = ((t1 - t0) / every).round() as usize;
        Self {
            trace: FrontTrace::default(),
            requested: (0..=n).map(|k| t0 + k as f64 * every).collect(),
        }
    }
}

impl Observer for TraceObserver {
    fn times(&self) -> Vec<f64> {
        self.requested.clone()
    }

    fn observe(&mut self, field: &Field) -> Result<()> {
        self.trace.record(field);
        Ok(())
    }
}

/// Least-squares line through `(t, X)` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub residual_rms: f64,
}

pub fn fit_line(ts: &[f64], xs: &[f64]) -> Result<SpeedFit> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(xs)
        .filter(|(_, x)| x.is_finite())
        .map(|(t, x)| (*t, *x))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable samples for a line fit",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mx)).sum();
    if stt <= 0.0 {
        return Err(Error::InsufficientData("all samples at one time".into()));
    }
    let slope = stx / stt;
    let intercept = mx - slope * mt;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(SpeedFit {
        slope,
        intercept,
        window: (pts[0].0, pts[pts.len() - 1].0),
        residual_rms: (rss / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedEstimates {
    pub global: Option<SpeedFit>,
    pub past: SpeedFit,
    pub future: SpeedFit,
}

/// Past and future speeds from the outer quarters of the horizon, and a
/// global mean speed when both agree within 5%.
pub fn speed_estimates(trace: &FrontTrace, m: f64) -> Result<SpeedEstimates> {
    let xs = trace
        .series(m)
        .ok_or_else(|| Error::InvalidInput(format!("level {m} was not traced")))?;
    let ts = &trace.times;
    let neg = ts.iter().filter(|&&t| t < 0.0).count();
    let pos = ts.iter().filter(|&&t| t > 0.0).count();
    if neg < 20 || pos < 20 {
        return Err(Error::InsufficientData(format!(
            "need 20 samples on each side of t = 0, have {neg} and {pos}"
        )));
    }
    let (t0, t1) = trace.horizon();
    let span = SPEED_WINDOW_FRACTION * (t1 - t0);
    let window = |lo: f64, hi: f64| -> Result<SpeedFit> {
        let (a, b): (Vec<f64>, Vec<f64>) = ts
            .iter()
            .zip(xs)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(t, x)| (*t, *x))
            .unzip();
        if a.len() < 5 {
            return Err(Error::InsufficientData(format!(
                "only {} samples in window [{lo}, {hi}]",
                a.len()
            )));
        }
        fit_line(&a, &b)
    };
    let past = window(t0, t0 + span)?;
    let future = window(t1 - span, t1)?;
    let scale = future.slope.abs().max(1.0);
    let global = if (past.slope - future.slope).abs() <= GLOBAL_SPEED_RTOL * scale {
        let all = fit_line(ts, xs)?;
        (all.residual_rms <= GLOBAL_SPEED_RTOL * all.slope.abs().max(1.0) * span).then_some(all)
    } else {
        None
    };
    Ok(SpeedEstimates {
        global,
        past,
        future,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillationReport {
    /// `sup_{|t-s| ≤ τ} |X(t) - X(s)|` over sampled pairs.
    pub bound: f64,
    /// `sup |X(t)|/|t|` over the outer quarters of the horizon.
    pub speed_bound: f64,
}

/// Local oscillation of the half-level position.
pub fn oscillation_bound(trace: &FrontTrace, tau: f64) -> Result<OscillationReport> {
    let xs = trace
        .series(0.5)
        .ok_or_else(|| Error::InvalidInput("level 1/2 was not traced".into()))?;
    let ts = &trace.times;
    let (t0, t1) = trace.horizon();
    if !(tau > 0.0) || tau > t1 - t0 {
        return Err(Error::InvalidInput(format!(
            "lag {tau} must lie in (0, horizon = {}]",
            t1 - t0
        )));
    }
    let mut bound = 0.0f64;
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            if ts[j] - ts[i] > tau * (1.0 + 1e-12) {
                break;
            }
            if xs[i].is_finite() && xs[j].is_finite() {
                bound = bound.max((xs[j] - xs[i]).abs());
            }
        }
    }
    let span = SPEED_WINDOW_FRACTION * (t1 - t0);
    let speed_bound = ts
        .iter()
        .zip(xs)
        .filter(|(t, x)| (**t <= t0 + span || **t >= t1 - span) && **t != 0.0 && x.is_finite())
        .map(|(t, x)| x.abs() / t.abs())
        .fold(0.0f64, f64::max);
    Ok(OscillationReport { bound, speed_bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionVerdict {
    pub verdict: bool,
    /// Largest observed width.
    pub sup_width: f64,
    /// Fitted width slope over the last half of the horizon.
    pub growth_slope: f64,
}

/// Bounded-width test of the transition-front property.
pub fn is_transition_front(trace: &FrontTrace, c_max: f64) -> Result<TransitionVerdict> {
    let (t0, t1) = trace.horizon();
    if !(t1 - t0 >= 10.0) {
        return Err(Error::InsufficientData(format!(
            "horizon {} is shorter than 10 time units",
            t1 - t0
        )));
    }
    let sup_width = trace.widths.iter().copied().fold(0.0, f64::max);
    let mid = 0.5 * (t0 + t1);
    let late = trace.restricted(mid, t1);
    let growth_slope = fit_line(&late.times, &late.widths)?.slope;
    Ok(TransitionVerdict {
        verdict: sup_width <= c_max && growth_slope < WIDTH_SLOPE_LIMIT,
        sup_width,
        growth_slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub lambda: f64,
    /// `Ψ(λ)` when `0 < λ < √f'(0)`; `None` when out of range.
    pub predicted_c_plus: Option<f64>,
    pub fit_residual: f64,
    pub points: usize,
}

/// Decay rate of the right tail from a fit of `ln u` against `x` over the
/// points right of the half-level crossing with `u_lo ≤ u ≤ u_hi`.
pub fn tail_decay_rate(u: &Field, levels: (f64, f64), fprime0: f64) -> Result<TailFit> {
    let (lo, hi) = levels;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::InvalidInput(format!("bad tail levels {levels:?}")));
    }
    let start = level_position(u, 0.5).unwrap_or(u.grid.x0());
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..u.values.len())
        .filter(|&i| u.x(i) > start && u.values[i] >= lo && u.values[i] <= hi)
        .map(|i| (u.x(i), u.values[i].ln()))
        .unzip();
    if xs.len() < 5 {
        return Err(Error::Resolution(format!(
            "tail window [{lo:e}, {hi:e}] holds only {} grid points",
            xs.len()
        )));
    }
    let fit = fit_line(&xs, &ys)?;
    let lambda = -fit.slope;
    let predicted_c_plus = (lambda > 0.0 && lambda < fprime0.sqrt()).then(|| psi(lambda, fprime0));
    Ok(TailFit {
        lambda,
        predicted_c_plus,
        fit_residual: fit.residual_rms,
        points: xs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub error: f64,
    /// Translation applied to the profile.
    pub shift: f64,
}

/// Sup-norm distance to `P(· - s)`, with `s` chosen so the half levels match.
pub fn profile_convergence_error(u: &Field, p: &FrontProfile) -> Result<ConvergenceReport> {
    let x_u = level_position(u, 0.5)?;
    let shift = x_u - p.inverse(0.5)?;
    Ok(profile_convergence_error_at(u, p, shift))
}

/// Sup-norm distance to `P(· - shift)` for a prescribed shift.
pub fn profile_convergence_error_at(u: &Field, p: &FrontProfile, shift: f64) -> ConvergenceReport {
    let error = (0..u.values.len())
        .map(|i| (u.values[i] - p.value(u.x(i) - shift)).abs())
        .fold(0.0, f64::max);
    ConvergenceReport { error, shift }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::Nonlinearity;
    use crate::pde::Grid1D;
    use crate::profiles::solve_profile_auto;

    fn synthetic(ts: &[f64], f: impl Fn(f64) -> f64) -> FrontTrace {
        let mut tr = FrontTrace::default();
        tr.times = ts.to_vec();
        tr.positions = vec![ts.iter().map(|&t| f(t)).collect(); 3];
        tr.widths = vec![1.0; ts.len()];
        tr
    }

    #[test]
    fn level_position_of_shifted_profile() {
        let p = solve_profile_auto(&Nonlinearity::logistic(), 2.5).unwrap();
        let g = Grid1D::new(-40.0, 0.05, 1601).unwrap();
        let u = Field::from_fn(g, 0.0, |x| p.value(x - 7.0)).unwrap();
        let x = level_position(&u, 0.5).unwrap();
        assert!((x - 7.0 - p.inverse(0.5).unwrap()).abs() < 0.05);
        let flat = Field::from_fn(g, 0.0, |_| 0.3).unwrap();
        assert!(matches!(
            level_position(&flat, 0.5),
            Err(Error::NotBracketed { .. })
        ));
    }

    #[test]
    fn leftmost_crossing_of_two_fronts() {
        let g = Grid1D::new(-20.0, 0.1, 401).unwrap();
        let u = Field::from_fn(g, 0.0, |x| {
            let a = 1.0 / (1.0 + (x + 5.0).exp());
            let b = 1.0 / (1.0 + (-(x - 5.0)).exp());
            a.max(b)
        })
        .unwrap();
        assert!((level_position(&u, 0.5).unwrap() + 5.0).abs() < 1e-9);
    }

    #[test]
    fn widths_of_profiles() {
        let nl = Nonlinearity::logistic();
        let p = solve_profile_auto(&nl, 2.5).unwrap();
        let g = Grid1D::new(-40.0, 0.05, 1601).unwrap();
        let u = Field::from_fn(g, 0.0, |x| p.value(x)).unwrap();
        let expected = p.inverse(0.1).unwrap() - p.inverse(0.9).unwrap();
        assert!((interface_width(&u, 0.1, 0.9) - expected).abs() <= 0.1);
        let zero = Field::from_fn(g, 0.0, |_| 0.0).unwrap();
        assert_eq!(interface_width(&zero, 0.1, 0.9), 0.0);
        let w = |c: f64| {
            let q = solve_profile_auto(&nl, c).unwrap();
            q.inverse(0.1).unwrap() - q.inverse(0.9).unwrap()
        };
        assert!(w(2.0) < w(4.0));
    }

    #[test]
    fn speeds_of_synthetic_traces() {
        let ts: Vec<f64> = (0..=400).map(|k| -50.0 + 0.25 * k as f64).collect();
        let tr = synthetic(&ts, |t| 2.0 * t + t.sin());
        let est = speed_estimates(&tr, 0.5).unwrap();
        let g = est.global.expect("global speed");
        assert!((g.slope - 2.0).abs() < 1e-2);
        let bent = synthetic(&ts, |t| if t < 0.0 { 2.5 * t } else { 4.0 * t });
        let est = speed_estimates(&bent, 0.5).unwrap();
        assert!(est.global.is_none());
        assert!((est.past.slope - 2.5).abs() < 1e-9 && (est.future.slope - 4.0).abs() < 1e-9);
        let short = synthetic(&ts[..150], |t| t);
        assert!(matches!(
            speed_estimates(&short, 0.5),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn oscillation_of_synthetic_traces() {
        let ts: Vec<f64> = (0..=1000).map(|k| -50.0 + 0.1 * k as f64).collect();
        let lin = synthetic(&ts, |t| 2.5 * t);
        let r = oscillation_bound(&lin, 1.0).unwrap();
        assert!((r.bound - 2.5).abs() < 1e-9);
        let wavy = synthetic(&ts, |t| 3.0 * t + t.sin());
        let r = oscillation_bound(&wavy, 1.0).unwrap();
        assert!(r.bound <= 5.0 && r.bound >= 1.0);
    }

    #[test]
    fn tail_rate_of_pure_exponential_and_profile() {
        let g = Grid1D::new(-10.0, 0.05, 1201).unwrap();
        let u = Field::from_fn(g, 0.0, |x| (-0.5 * x).exp().min(1.0)).unwrap();
        let fit = tail_decay_rate(&u, DEFAULT_TAIL_LEVELS, 1.0).unwrap();
        assert!((fit.lambda - 0.5).abs() < 1e-9);
        assert!((fit.predicted_c_plus.unwrap() - 2.5).abs() < 1e-8);
        let p = solve_profile_auto(&Nonlinearity::logistic(), 4.0).unwrap();
        let g = Grid1D::new(-40.0, 0.05, 2401).unwrap();
        let u = Field::from_fn(g, 0.0, |x| p.value(x)).unwrap();
        let fit = tail_decay_rate(&u, DEFAULT_TAIL_LEVELS, 1.0).unwrap();
        let l4 = 2.0 - 3f64.sqrt();
        assert!((fit.lambda / l4 - 1.0).abs() < 0.02);
        assert!((fit.predicted_c_plus.unwrap() / 4.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn convergence_error_of_pure_shift() {
        let p = solve_profile_auto(&Nonlinearity::logistic(), 2.5).unwrap();
        let g = Grid1D::new(-40.0, 0.05, 2001).unwrap();
        let u = Field::from_fn(g, 0.0, |x| p.value(x - 13.0)).unwrap();
        let r = profile_convergence_error(&u, &p).unwrap();
        assert!(r.error <= 2.0 * 0.05 * p.max_slope());
        assert!((r.shift - 13.0).abs() < 0.05);
    }

    #[test]
    fn constant_width_trace_is_a_transition_front() {
        let ts: Vec<f64> = (0..=200).map(|k| -10.0 + 0.1 * k as f64).collect();
        let tr = synthetic(&ts, |t| 3.0 * t);
        let v = is_transition_front(&tr, 5.0).unwrap();
        assert!(v.verdict && v.sup_width == 1.0);
        let mut growing = tr.clone();
        growing.widths = ts.iter().map(|t| 1.0 + 0.5 * (t + 10.0)).collect();
        let v = is_transition_front(&growing, 100.0).unwrap();
        assert!(!v.verdict && v.growth_slope > 0.4);
        let short = synthetic(&ts[..50], |t| t);
        assert!(is_transition_front(&short, 5.0).is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let ts = [0.0, 1.0];
        let tr = synthetic(&ts, |t| t);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,X_0.1,X_0.5,X_0.9,width_0.1_0.9");
        assert_eq!(text.lines().count(), 3);
    }
}
