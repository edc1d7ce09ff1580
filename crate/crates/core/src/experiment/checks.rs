//! Named verification checks. Each id maps to one module operation so the
//! theorem-to-test mapping can be listed from the command line.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    fit_line, is_transition_front, oscillation_bound, profile_convergence_error,
    profile_convergence_error_at, speed_estimates, tail_decay_rate, FrontTrace,
};
use crate::error::{Error, Result};
use crate::measures::{approximate_u_mu, run_measure, MeasureField, MeasureRun, ProbeSpec};
use crate::nonlinearity::Nonlinearity;
use crate::pde::{Boundary, Coefficients, Field, Grid1D, SolverConfig, Window};
use crate::profiles::{decay_rate, psi, solve_profile, uniform_decay_constant, FrontProfile};
use crate::steepness::{
    anchors_at_levels, critical_steepest_check, intersection_monotonicity,
    sandwich_tolerance, seeded_perturbation_pair, steepness_check, Direction, SandwichReport,
};

use super::runner::Experiment;

/// What a check needs from the experiment besides the nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Requirement {
    Nothing,
    MeasureRun,
    MediumRun,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckSpec {
    pub id: &'static str,
    pub description: &'static str,
    /// Module operation the check exercises.
    pub operation: &'static str,
    pub requires: Requirement,
}

const fn spec(
    id: &'static str,
    operation: &'static str,
    requires: Requirement,
    description: &'static str,
) -> CheckSpec {
    CheckSpec {
        id,
        description,
        operation,
        requires,
    }
}

use Requirement::*;

pub const CHECKS: &[CheckSpec] = &[
    spec("exact-front", "profiles::solve_profile", Nothing,
        "logistic front of speed 5/sqrt(6) matches (1+e^{x/sqrt6})^-2 to 1e-6, ODE residual <= 1e-8"),
    spec("decay-rate", "profiles::decay_rate", Nothing,
        "decay rate matches (c - sqrt(c^2 - 4f'(0)))/2 and inverts psi to 1e-12"),
    spec("profile-inequalities", "profiles::uniform_decay_constant", Nothing,
        "phi <= e^{-lambda x} and -lambda < phi'/phi < 0 on every table; finite uniform decay constant"),
    spec("steepness-power", "steepness::steepness_check", Nothing,
        "a flatter front checked as steeper than the critical front is rejected"),
    spec("intersection-monotonicity", "steepness::intersection_monotonicity", Nothing,
        "crossing counts of seeded perturbation pairs never increase"),
    spec("transport", "measures::run_measure", MeasureRun,
        "a single atom evolves as the translated front, away from the window ends"),
    spec("global-speed", "analysis::speed_estimates", MeasureRun,
        "global mean speed exists iff the support has one speed, and matches it"),
    spec("past-speed", "analysis::speed_estimates", MeasureRun,
        "past-window speed matches the leftmost support point"),
    spec("future-speed", "analysis::speed_estimates", MeasureRun,
        "future-window speed matches the rightmost support point"),
    spec("profile-convergence", "analysis::profile_convergence_error", MeasureRun,
        "final field is close to a translate of the fastest front"),
    spec("shift-law", "analysis::profile_convergence_error_at", MeasureRun,
        "final (and earliest) field match the fronts at the shifts predicted by the extreme atoms"),
    spec("sandwich", "measures::MeasureField::sandwich_violation", MeasureRun,
        "every stored field lies between the lower and upper bounds"),
    spec("monotone", "pde::Field::is_nonincreasing", MeasureRun,
        "every stored field is nonincreasing in x"),
    spec("support-dichotomy", "analysis::is_transition_front", MeasureRun,
        "interface width stays bounded iff the support is compact"),
    spec("shift-dichotomy", "analysis::fit_line", MeasureRun,
        "X - c t stays bounded on a window iff the extreme speed carries an atom"),
    spec("tail-lambda", "analysis::tail_decay_rate", MeasureRun,
        "tail decay rate at t = 0 predicts the future speed"),
    spec("steepness", "steepness::steepness_check", MeasureRun,
        "fields are steeper than the fastest front and less steep than the slowest"),
    spec("critical-steepest", "steepness::critical_steepest_check", MeasureRun,
        "fields are less steep than the critical front"),
    spec("spreading-floor", "analysis::speed_estimates", MeasureRun,
        "no fitted level-set speed falls below c*"),
    spec("approximation-ladder", "measures::approximate_u_mu", MeasureRun,
        "approximations increase with the start time offset n"),
    spec("critical-perturbation", "measures::SpeedMeasure::with_atom", MeasureRun,
        "adding sigma at c* raises u by at most the critical front shifted by c* ln sigma"),
    spec("restriction-splitting", "measures::SpeedMeasure::restricted", MeasureRun,
        "restriction and splitting inequalities at a cut speed"),
    spec("oscillation-bound", "analysis::oscillation_bound", MediumRun,
        "local oscillation of the front in a periodic medium is stable under doubling the horizon"),
];

pub fn find_check(id: &str) -> Option<&'static CheckSpec> {
    CHECKS.iter().find(|c| c.id == id)
}

/// Result of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub id: String,
    pub pass: bool,
    pub detail: String,
    pub metrics: Value,
}

impl CheckOutcome {
    fn new(id: &str, pass: bool, detail: String, metrics: Value) -> Self {
        Self {
            id: id.to_string(),
            pass,
            detail,
            metrics,
        }
    }
}

/// Runs check `id` against a prepared experiment.
pub fn run_check(id: &str, e: &Experiment) -> Result<CheckOutcome> {
    let spec = find_check(id).ok_or_else(|| Error::Config(format!("unknown check id '{id}'")))?;
    match spec.id {
        "exact-front" => exact_front(e),
        "decay-rate" => decay_rate_check(e),
        "profile-inequalities" => profile_inequalities(e),
        "steepness-power" => steepness_power(e),
        "intersection-monotonicity" => intersections(e),
        "transport" => transport(e),
        "global-speed" => global_speed(e),
        "past-speed" => window_speed(e, false),
        "future-speed" => window_speed(e, true),
        "profile-convergence" => profile_convergence(e),
        "shift-law" => shift_law(e),
        "sandwich" => sandwich(e),
        "monotone" => monotone(e),
        "support-dichotomy" => support_dichotomy(e),
        "shift-dichotomy" => shift_dichotomy(e),
        "tail-lambda" => tail_lambda(e),
        "steepness" => steepness(e),
        "critical-steepest" => critical_steepest(e),
        "spreading-floor" => spreading_floor(e),
        "approximation-ladder" => approximation_ladder(e),
        "critical-perturbation" => critical_perturbation(e),
        "restriction-splitting" => restriction_splitting(e),
        "oscillation-bound" => oscillation(e),
        other => Err(Error::Config(format!("check '{other}' has no implementation"))),
    }
}

/// Extra snapshot times the requested checks read from the main run.
pub fn required_snapshot_times(id: &str, e: &super::config::ExperimentConfig) -> Vec<f64> {
    match id {
        "tail-lambda" => vec![0.0],
        "restriction-splitting" => e.params.slice_times.clone(),
        _ => vec![],
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn main_run(e: &Experiment) -> Result<(&Arc<MeasureField>, &MeasureRun)> {
    match (&e.field, &e.run) {
        (Some(f), Some(r)) => Ok((f, r)),
        _ => Err(Error::Config("check needs a measure run".into())),
    }
}

fn stored_fields(run: &MeasureRun) -> impl Iterator<Item = &Field> {
    run.snapshots.iter().chain(std::iter::once(&run.final_field))
}

fn snapshot_at(run: &MeasureRun, t: f64) -> Result<&Field> {
    stored_fields(run)
        .find(|f| (f.time - t).abs() <= 1e-9 * (1.0 + t.abs()))
        .ok_or_else(|| Error::InvalidInput(format!("no stored field at t = {t}")))
}

fn support_ends(e: &Experiment) -> Result<(f64, f64)> {
    let cls = e.measure()?.classify();
    match (cls.predicted_c_minus, cls.predicted_c_plus) {
        (Some(a), Some(b)) if b.is_finite() => Ok((a, b)),
        _ => Err(Error::InvalidInput(
            "check needs a compact support of positive speeds".into(),
        )),
    }
}

fn worst_pair<'a>(pairs: impl Iterator<Item = (&'a Field, &'a Field)>, mut f: impl FnMut(&Field, &Field, usize, usize) -> f64) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for (a, b) in pairs {
        let (i, j, len) = a
            .grid
            .overlap(&b.grid)
            .ok_or_else(|| Error::InvalidInput("fields share no grid points".into()))?;
        for k in 0..len {
            worst = worst.max(f(a, b, i + k, j + k));
        }
    }
    Ok(worst)
}

fn exact_front(_e: &Experiment) -> Result<CheckOutcome> {
    let nl = Nonlinearity::logistic();
    let s6 = 6f64.sqrt();
    let p = solve_profile(&nl, 5.0 / s6, (-45.0, 30.0), 1e-8)?;
    let sup = (-3000..=3000)
        .map(|k| {
            let xi = k as f64 * 0.01;
            (p.value(xi) - (1.0 + (xi / s6).exp()).powi(-2)).abs()
        })
        .fold(0.0, f64::max);
    let residual = p.compute_ode_residual(&nl);
    Ok(CheckOutcome::new(
        "exact-front",
        sup <= 1e-6 && residual <= 1e-8,
        format!("sup error {sup:.2e}, ODE residual {residual:.2e}"),
        json!({ "sup_error": sup, "ode_residual": residual }),
    ))
}

fn decay_rate_check(e: &Experiment) -> Result<CheckOutcome> {
    let f0 = e.nl.fprime0();
    let mut worst_formula = 0.0f64;
    let mut worst_psi = 0.0f64;
    for c in [2.0, 2.5, 3.0, 4.0, 10.0].map(|c| c * f0.sqrt()) {
        let l = decay_rate(c, f0)?;
        let direct = (c - (c * c - 4.0 * f0).max(0.0).sqrt()) / 2.0;
        worst_formula = worst_formula.max((l - direct).abs());
        worst_psi = worst_psi.max((psi(l, f0) - c).abs());
    }
    Ok(CheckOutcome::new(
        "decay-rate",
        worst_formula <= 1e-12 && worst_psi <= 1e-12,
        format!("formula {worst_formula:.1e}, psi inverse {worst_psi:.1e}"),
        json!({ "formula_error": worst_formula, "psi_error": worst_psi }),
    ))
}

fn profile_inequalities(e: &Experiment) -> Result<CheckOutcome> {
    let p = &e.config.params;
    let cstar = e.nl.critical_speed();
    let gamma = p.decay_gamma * cstar / 2.0;
    let grid: Vec<f64> = (0..9).map(|k| cstar + (gamma - cstar) * k as f64 / 8.0).collect();
    let mut speeds: Vec<f64> = p.profile_speeds.iter().map(|c| c * cstar / 2.0).collect();
    speeds.extend(&grid);
    let profiles = e.bank.get_many(&speeds)?;
    let mut bad = Vec::new();
    let mut checked = 0;
    for prof in &profiles {
        if prof.is_critical() {
            continue;
        }
        checked += 1;
        let d = prof.diagnostics();
        if d.decay_bound_ok != Some(true) || !d.logderiv_ok || !d.monotone_ok {
            bad.push(prof.speed());
        }
    }
    let refs: Vec<&FrontProfile> = profiles[speeds.len() - grid.len()..]
        .iter()
        .map(|p| p.as_ref())
        .collect();
    let a = uniform_decay_constant(&refs, gamma, p.decay_eps);
    let a_value = a.as_ref().ok().copied();
    Ok(CheckOutcome::new(
        "profile-inequalities",
        bad.is_empty() && a_value.is_some_and(f64::is_finite),
        match &a {
            Ok(a) => format!("{checked} supercritical profiles, {} failing; A = {a:.3}", bad.len()),
            Err(err) => format!("{checked} profiles, {} failing; uniform constant: {err}", bad.len()),
        },
        json!({ "profiles": checked, "failing_speeds": bad, "uniform_decay_constant": a_value }),
    ))
}

fn steepness_power(e: &Experiment) -> Result<CheckOutcome> {
    let cstar = e.nl.critical_speed();
    let fast = e.bank.get(2.0 * cstar)?;
    let crit = e.bank.get(cstar)?;
    let dx = e.config.grid.dx;
    let g = Grid1D::covering(-40.0, 80.0, dx)?;
    let u = Field::from_fn(g, 0.0, |x| fast.value(x))?;
    let anchors = anchors_at_levels(&u, &e.config.params.anchor_levels)?;
    let tol = sandwich_tolerance(dx, &crit);
    let r = steepness_check(&u, &crit, &anchors, Direction::Steeper, tol)?;
    Ok(CheckOutcome::new(
        "steepness-power",
        !r.pass,
        format!("mismatched check rejected: worst violation {:.3e} vs tol {tol:.1e}", r.worst()),
        json!({ "rejected": !r.pass, "worst_violation": r.worst(), "tolerance": tol }),
    ))
}

fn intersections(e: &Experiment) -> Result<CheckOutcome> {
    let p = &e.config.params;
    let g = &e.config.grid;
    let grid = Grid1D::covering(-40.0, 40.0, g.dx)?;
    let co = Coefficients::homogeneous(e.nl.clone());
    let cfg = SolverConfig::new(
        g.dt,
        Boundary::Dirichlet {
            left: 1.0,
            right: 0.0,
        },
        Window::Fixed,
        0.0,
    );
    let m = p.check_times.max(2);
    let times: Vec<f64> = (0..m)
        .map(|k| p.pair_horizon * k as f64 / (m - 1) as f64)
        .collect();
    let series: Vec<_> = (0..p.pairs as u64)
        .into_par_iter()
        .map(|k| {
            let (u, v) = seeded_perturbation_pair(grid, e.config.seed.wrapping_add(k))?;
            intersection_monotonicity(&u, &v, &co, &cfg, &times)
        })
        .collect::<Result<_>>()?;
    let violations: usize = series
        .iter()
        .map(|s| s.counts.windows(2).filter(|w| w[1] > w[0]).count())
        .sum();
    let initial: Vec<usize> = series.iter().map(|s| s.counts[0]).collect();
    Ok(CheckOutcome::new(
        "intersection-monotonicity",
        violations == 0,
        format!("{} pairs x {m} times, {violations} increases; initial crossings {initial:?}", p.pairs),
        json!({ "violations": violations, "initial_counts": initial,
                "counts": series.iter().map(|s| s.counts.clone()).collect::<Vec<_>>() }),
    ))
}

fn transport(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let mu = e.measure()?;
    let (c, m) = match (mu.atoms(), mu.pieces().len(), mu.mass_at_infinity()) {
        ([(c, m)], 0, z) if z == 0.0 && *c > 0.0 => (*c, *m),
        _ => return Err(Error::InvalidInput("transport needs a single positive atom".into())),
    };
    let prof = e.bank.get(c)?;
    let margin = e.config.params.transport_margin;
    let mut worst = 0.0f64;
    for u in stored_fields(run) {
        let (lo, hi) = (u.grid.x0() + margin, u.grid.x_end() - margin);
        let shift = c * u.time + c * m.ln();
        for i in 0..u.values.len() {
            let x = u.x(i);
            if x >= lo && x <= hi {
                worst = worst.max((u.values[i] - prof.value(x - shift)).abs());
            }
        }
    }
    let tol = e.config.params.transport_tol;
    Ok(CheckOutcome::new(
        "transport",
        worst <= tol,
        format!("sup error {worst:.3e} (tol {tol:.0e})"),
        json!({ "sup_error": worst, "tolerance": tol }),
    ))
}

fn global_speed(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let est = speed_estimates(&run.trace, 0.5)?;
    let cls = e.measure()?.classify();
    let single = match (cls.predicted_c_minus, cls.predicted_c_plus) {
        (Some(a), Some(b)) if (a - b).abs() <= 1e-12 * b.abs() => Some(a),
        _ => None,
    };
    let rtol = e.config.params.global_speed_rtol;
    let (pass, detail) = match (single, est.global) {
        (Some(c), Some(g)) => (
            rel(g.slope, c) <= rtol,
            format!("global speed {:.4} vs {c} ({:.2}%)", g.slope, 100.0 * rel(g.slope, c)),
        ),
        (Some(c), None) => (false, format!("no global speed detected, expected {c}")),
        (None, None) => (true, "no global mean speed, as predicted".into()),
        (None, Some(g)) => (false, format!("unexpected global speed {:.4}", g.slope)),
    };
    Ok(CheckOutcome::new(
        "global-speed",
        pass,
        detail,
        json!({ "expected": single, "global": est.global.map(|g| g.slope) }),
    ))
}

fn window_speed(e: &Experiment, future: bool) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let est = speed_estimates(&run.trace, 0.5)?;
    let cls = e.measure()?.classify();
    let (id, fit, expected) = if future {
        ("future-speed", est.future, cls.predicted_c_plus)
    } else {
        ("past-speed", est.past, cls.predicted_c_minus)
    };
    let expected = expected
        .filter(|c| c.is_finite())
        .ok_or_else(|| Error::InvalidInput(format!("{id} needs a finite predicted speed")))?;
    let rtol = e.config.params.window_speed_rtol;
    let err = rel(fit.slope, expected);
    Ok(CheckOutcome::new(
        id,
        err <= rtol,
        format!(
            "fitted {:.4} on [{:.1}, {:.1}] vs {expected} ({:.2}%)",
            fit.slope, fit.window.0, fit.window.1, 100.0 * err
        ),
        json!({ "fitted": fit.slope, "expected": expected, "relative_error": err, "window": [fit.window.0, fit.window.1] }),
    ))
}

fn profile_convergence(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let (_, c_plus) = support_ends(e)?;
    let p = e.bank.get(c_plus)?;
    let r = profile_convergence_error(&run.final_field, &p)?;
    let tol = e.config.params.convergence_tol;
    Ok(CheckOutcome::new(
        "profile-convergence",
        r.error <= tol,
        format!("sup distance to phi_{c_plus} at t = {}: {:.3e}", run.final_field.time, r.error),
        json!({ "error": r.error, "shift": r.shift, "time": run.final_field.time }),
    ))
}

/// Shift of the front of speed `c` carrying mass `m` in a measure of total
/// mass `big_m`.
fn predicted_shift(c: f64, lambda: f64, m: f64, big_m: f64, t: f64) -> f64 {
    c * t + (c - 1.0 / lambda) * big_m.ln() + m.ln() / lambda
}

fn shift_law(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let mu = e.measure()?;
    let (c_minus, c_plus) = support_ends(e)?;
    let f0 = mu.fprime0();
    let big_m = mu.total_mass();
    let tol = e.config.params.convergence_tol;
    let mut metrics = serde_json::Map::new();
    let mut pass = true;
    let mut parts = Vec::new();
    let earliest = stored_fields(run)
        .min_by(|a, b| a.time.total_cmp(&b.time))
        .expect("runs store a final field");
    for (label, c, u) in [("future", c_plus, &run.final_field), ("past", c_minus, earliest)] {
        let m = mu.atom_mass(c);
        if m <= 0.0 {
            continue;
        }
        let p = e.bank.get(c)?;
        let shift = predicted_shift(c, decay_rate(c, f0)?, m, big_m, u.time);
        let r = profile_convergence_error_at(u, &p, shift);
        pass &= r.error <= tol;
        parts.push(format!("{label} phi_{c} at t = {}: {:.3e}", u.time, r.error));
        metrics.insert(label.into(), json!({ "time": u.time, "shift": shift, "error": r.error }));
    }
    if parts.is_empty() {
        return Err(Error::InvalidInput("shift-law needs an atom at an extreme speed".into()));
    }
    Ok(CheckOutcome::new("shift-law", pass, parts.join("; "), Value::Object(metrics)))
}

fn sandwich(e: &Experiment) -> Result<CheckOutcome> {
    let (mf, run) = main_run(e)?;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut count = 0;
    for u in stored_fields(run) {
        let (a, b) = mf.sandwich_violation(u);
        lo = lo.max(a);
        hi = hi.max(b);
        count += 1;
    }
    let tol = e.config.params.sandwich_tol;
    Ok(CheckOutcome::new(
        "sandwich",
        lo <= tol && hi <= tol,
        format!("{count} fields: max(lower - u) = {lo:.3e}, max(u - upper) = {hi:.3e}"),
        json!({ "lower_violation": lo, "upper_violation": hi, "fields": count, "tolerance": tol }),
    ))
}

fn monotone(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let bad: Vec<f64> = stored_fields(run)
        .filter(|u| !u.is_nonincreasing(1e-12))
        .map(|u| u.time)
        .collect();
    Ok(CheckOutcome::new(
        "monotone",
        bad.is_empty(),
        format!("{} non-monotone fields", bad.len()),
        json!({ "non_monotone_times": bad }),
    ))
}

fn support_dichotomy(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let p = &e.config.params;
    let predicted = e.measure()?.classify().is_transition_front;
    let tr = run.trace.restricted(p.width_window[0], p.width_window[1]);
    if tr.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} trace samples in the width window",
            tr.len()
        )));
    }
    let (wmin, wmax) = tr
        .widths
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &w| (a.min(w), b.max(w)));
    let ratio = wmax / wmin;
    let growth = tr.widths[tr.len() - 1] / tr.widths[0];
    let slope = is_transition_front(&tr, f64::INFINITY)?.growth_slope;
    let (pass, detail) = if predicted {
        (
            ratio <= p.width_ratio_max,
            format!("bounded width predicted: max/min = {ratio:.3}"),
        )
    } else {
        (
            growth >= p.width_growth_min && slope > 0.0,
            format!("spreading predicted: width grew x{growth:.3}, late slope {slope:.4}"),
        )
    };
    Ok(CheckOutcome::new(
        "support-dichotomy",
        pass,
        detail,
        json!({ "transition_front_predicted": predicted, "width_ratio": ratio,
                "width_growth": growth, "growth_slope": slope }),
    ))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShiftWindow {
    pub speed: f64,
    pub bounded_predicted: bool,
    pub range: f64,
    pub drift: f64,
    pub monotone: bool,
    pub pass: bool,
}

fn shift_window(tr: &FrontTrace, c: f64, bounded: bool, range_max: f64, drift_min: f64) -> Result<ShiftWindow> {
    let xs = tr
        .series(0.5)
        .ok_or_else(|| Error::InvalidInput("level 1/2 was not traced".into()))?;
    let s: Vec<f64> = tr.times.iter().zip(xs).map(|(t, x)| x - c * t).collect();
    if s.len() < 10 {
        return Err(Error::InsufficientData("shift window holds fewer than 10 samples".into()));
    }
    let range = s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - s.iter().copied().fold(f64::INFINITY, f64::min);
    let drift = s[s.len() - 1] - s[0];
    // Coarse samples so that grid-scale jitter does not count against monotonicity.
    let coarse: Vec<f64> = (0..=10).map(|k| s[k * (s.len() - 1) / 10]).collect();
    let monotone = coarse.windows(2).all(|w| (w[1] - w[0]) * drift.signum() >= 0.0);
    let pass = if bounded {
        range <= range_max
    } else {
        monotone && drift.abs() >= drift_min
    };
    Ok(ShiftWindow {
        speed: c,
        bounded_predicted: bounded,
        range,
        drift: drift.abs(),
        monotone,
        pass,
    })
}

fn shift_dichotomy(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let p = &e.config.params;
    let cls = e.measure()?.classify();
    let (c_minus, c_plus) = support_ends(e)?;
    let (t0, t1) = run.trace.horizon();
    let span = crate::analysis::SPEED_WINDOW_FRACTION * (t1 - t0);
    let past = shift_window(
        &run.trace.restricted(t0, t0 + span),
        c_minus,
        cls.shift_bounded_past,
        p.shift_range_max,
        p.shift_drift_min,
    )?;
    let future = shift_window(
        &run.trace.restricted(t1 - span, t1),
        c_plus,
        cls.shift_bounded_future,
        p.shift_range_max,
        p.shift_drift_min,
    )?;
    let describe = |w: &ShiftWindow| {
        if w.bounded_predicted {
            format!("bounded predicted, range {:.2}", w.range)
        } else {
            format!("drift predicted, drift {:.2} (monotone: {})", w.drift, w.monotone)
        }
    };
    Ok(CheckOutcome::new(
        "shift-dichotomy",
        past.pass && future.pass,
        format!("past: {}; future: {}", describe(&past), describe(&future)),
        json!({ "past": past, "future": future }),
    ))
}

fn tail_lambda(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let (_, c_plus) = support_ends(e)?;
    let p = &e.config.params;
    let f0 = e.nl.fprime0();
    let u = snapshot_at(run, 0.0)?;
    let fit = tail_decay_rate(u, (p.tail_levels[0], p.tail_levels[1]), f0)?;
    let lambda_plus = decay_rate(c_plus, f0)?;
    let future = speed_estimates(&run.trace, 0.5)?.future.slope;
    let rtol = p.tail_rtol;
    let pass = rel(fit.lambda, lambda_plus) <= rtol
        && fit
            .predicted_c_plus
            .is_some_and(|c| rel(c, c_plus) <= rtol && rel(c, future) <= rtol);
    Ok(CheckOutcome::new(
        "tail-lambda",
        pass,
        format!(
            "lambda {:.4} vs {lambda_plus:.4}; predicted c+ {:?} vs {c_plus} (observed future speed {future:.4})",
            fit.lambda, fit.predicted_c_plus
        ),
        json!({ "lambda": fit.lambda, "expected_lambda": lambda_plus,
                "predicted_c_plus": fit.predicted_c_plus, "future_speed": future,
                "fit_points": fit.points, "fit_residual": fit.fit_residual }),
    ))
}

fn report_json(r: &SandwichReport) -> Value {
    json!({
        "points_checked": r.points_checked,
        "max_violation_left": r.max_violation_left,
        "max_violation_right": r.max_violation_right,
        "max_slope_violation": r.max_slope_violation,
        "tolerance": r.tolerance,
        "pass": r.pass,
        "offenders": r.offenders.iter().take(5).collect::<Vec<_>>(),
    })
}

fn steepness(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let (c_minus, c_plus) = support_ends(e)?;
    let levels = &e.config.params.anchor_levels;
    let dx = e.config.grid.dx;
    let fast = e.bank.get(c_plus)?;
    let slow = e.bank.get(c_minus)?;
    let mut steeper: Option<SandwichReport> = None;
    let mut less: Option<SandwichReport> = None;
    for u in &run.snapshots {
        let anchors = anchors_at_levels(u, levels)?;
        let a = steepness_check(u, &fast, &anchors, Direction::Steeper, sandwich_tolerance(dx, &fast))?;
        let b = steepness_check(u, &slow, &anchors, Direction::LessSteep, sandwich_tolerance(dx, &slow))?;
        match &mut steeper {
            Some(r) => r.merge(&a),
            None => steeper = Some(a),
        }
        match &mut less {
            Some(r) => r.merge(&b),
            None => less = Some(b),
        }
    }
    let (Some(s), Some(l)) = (steeper, less) else {
        return Err(Error::InsufficientData("no snapshots to check".into()));
    };
    Ok(CheckOutcome::new(
        "steepness",
        s.pass && l.pass,
        format!(
            "{} anchors: steeper than phi_{c_plus} worst {:.2e}, less steep than phi_{c_minus} worst {:.2e} (tol {:.1e})",
            s.points_checked, s.worst(), l.worst(), s.tolerance
        ),
        json!({ "steeper": report_json(&s), "less_steep": report_json(&l) }),
    ))
}

fn critical_steepest(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let crit = e.bank.get(e.nl.critical_speed())?;
    let tol = sandwich_tolerance(e.config.grid.dx, &crit);
    let mut total: Option<SandwichReport> = None;
    for u in &run.snapshots {
        let anchors = anchors_at_levels(u, &e.config.params.anchor_levels)?;
        let r = critical_steepest_check(u, &crit, &anchors, tol)?;
        match &mut total {
            Some(t) => t.merge(&r),
            None => total = Some(r),
        }
    }
    let r = total.ok_or_else(|| Error::InsufficientData("no snapshots to check".into()))?;
    Ok(CheckOutcome::new(
        "critical-steepest",
        r.pass,
        format!("{} anchors, worst {:.2e} (tol {tol:.1e})", r.points_checked, r.worst()),
        report_json(&r),
    ))
}

fn spreading_floor(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let floor = e.nl.critical_speed() - e.config.params.floor_slack;
    let mut slowest = f64::INFINITY;
    let mut fits = serde_json::Map::new();
    for &m in &run.trace.levels {
        let est = speed_estimates(&run.trace, m)?;
        let mut speeds = vec![est.past.slope, est.future.slope];
        speeds.extend(est.global.map(|g| g.slope));
        slowest = speeds.iter().copied().fold(slowest, f64::min);
        fits.insert(format!("{m}"), json!(speeds));
    }
    Ok(CheckOutcome::new(
        "spreading-floor",
        slowest >= floor,
        format!("slowest fitted level-set speed {slowest:.4} (floor {floor:.4})"),
        json!({ "slowest": slowest, "floor": floor, "fits": fits }),
    ))
}

fn approximation_ladder(e: &Experiment) -> Result<CheckOutcome> {
    let p = &e.config.params;
    let mu = e.measure()?;
    let n_max = p.ladder_n.iter().copied().fold(0.0, f64::max);
    let t_max = p.ladder_targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mf = Arc::new(MeasureField::build(mu, &e.bank, &ProbeSpec::for_horizon(-n_max, t_max))?);
    let settings = e.config.grid.settings();
    match approximate_u_mu(&mf, &p.ladder_n, &p.ladder_targets, &settings, p.ladder_tol) {
        Ok(r) => Ok(CheckOutcome::new(
            "approximation-ladder",
            true,
            format!(
                "n = {:?}: largest decrease {:.2e} (tol {:.0e}); successive sup differences {:?}",
                r.n_list, r.max_decrease, p.ladder_tol, r.sup_differences
            ),
            json!({ "max_decrease": r.max_decrease, "sup_differences": r.sup_differences,
                    "sandwich_violation": [r.sandwich_violation.0, r.sandwich_violation.1] }),
        )),
        Err(Error::SchemeInconsistency(msg)) => Ok(CheckOutcome::new(
            "approximation-ladder",
            false,
            msg,
            json!({ "n_list": p.ladder_n }),
        )),
        Err(other) => Err(other),
    }
}

fn critical_perturbation(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let mu = e.measure()?;
    let cstar = e.nl.critical_speed();
    if mu.atom_mass(cstar) > 0.0 {
        return Err(Error::InvalidInput("critical-perturbation needs no atom at c*".into()));
    }
    let h = e.horizon()?;
    let times: Vec<f64> = run.snapshots.iter().map(|f| f.time).collect();
    let crit = e.bank.get(cstar)?;
    let tol = e.config.params.sandwich_tol;
    let settings = e.config.grid.settings();
    let probes = ProbeSpec::for_horizon(h.start(), h.t_end);
    let rows: Vec<(f64, f64, f64)> = e
        .config
        .params
        .sigmas
        .par_iter()
        .map(|&sigma| {
            let mk = mu.with_atom(cstar, sigma)?;
            let fk = Arc::new(MeasureField::build(&mk, &e.bank, &probes)?);
            let rk = run_measure(&fk, -h.start(), h.t_end, &settings, h.t_end, &times)?;
            let pairs = rk.snapshots.iter().zip(&run.snapshots).chain([(&rk.final_field, &run.final_field)]);
            let below = worst_pair(pairs.clone(), |a, b, i, j| b.values[j] - a.values[i])?;
            let above = worst_pair(pairs, |a, b, i, j| {
                let bound = crit.value(a.x(i) - cstar * a.time - cstar * sigma.ln());
                a.values[i] - b.values[j] - bound
            })?;
            Ok((sigma, below, above))
        })
        .collect::<Result<_>>()?;
    let pass = rows.iter().all(|r| r.1 <= tol && r.2 <= tol);
    Ok(CheckOutcome::new(
        "critical-perturbation",
        pass,
        rows.iter()
            .map(|(s, b, a)| format!("sigma {s}: max(u - u_k) {b:.2e}, max excess over bound {a:.2e}"))
            .collect::<Vec<_>>()
            .join("; "),
        json!(rows.iter().map(|(s, b, a)| json!({ "sigma": s, "order_violation": b, "bound_violation": a })).collect::<Vec<_>>()),
    ))
}

fn restriction_splitting(e: &Experiment) -> Result<CheckOutcome> {
    let (_, run) = main_run(e)?;
    let mu = e.measure()?;
    let (c_minus, c_plus) = support_ends(e)?;
    let p = &e.config.params;
    let cut = p.split_speed;
    if !(c_minus < cut && cut < c_plus) {
        return Err(Error::InvalidInput(format!(
            "cut speed {cut} must lie inside ({c_minus}, {c_plus})"
        )));
    }
    let h = e.horizon()?;
    let mut slices = p.slice_times.clone();
    slices.sort_by(|a, b| a.total_cmp(b));
    let t_end = *slices.last().ok_or_else(|| Error::InvalidInput("no slice times".into()))?;
    let mu1 = mu.restricted(c_minus, cut)?;
    let mu2 = mu.restricted(cut, c_plus)?;
    let (m1, m2, big_m) = (mu1.reduced_mass(), mu2.reduced_mass(), mu.reduced_mass());
    let settings = e.config.grid.settings();
    let probes = ProbeSpec::for_horizon(h.start(), t_end);
    let runs: Vec<MeasureRun> = [&mu1, &mu2]
        .par_iter()
        .map(|m| {
            let f = Arc::new(MeasureField::build(m, &e.bank, &probes)?);
            run_measure(&f, -h.start(), t_end, &settings, t_end, &slices)
        })
        .collect::<Result<_>>()?;
    let xi1 = cut * (m1 / big_m).ln();
    let xi2 = c_plus * (m2 / big_m).ln();
    let mut restriction = f64::NEG_INFINITY;
    let mut splitting = f64::NEG_INFINITY;
    for &t in &slices {
        let u = snapshot_at(run, t)?;
        let u1 = snapshot_at(&runs[0], t)?;
        let u2 = snapshot_at(&runs[1], t)?;
        restriction = restriction.max(worst_pair(std::iter::once((u1, u)), |a, b, i, j| {
            m1 / big_m * a.values[i] - b.values[j]
        })?);
        let inside = |f: &Field, x: f64| x >= f.grid.x0() && x <= f.grid.x_end();
        for i in 0..u.values.len() {
            let x = u.x(i);
            if inside(u1, x + xi1) && inside(u2, x + xi2) {
                let bound = (u1.value_at(x + xi1) + u2.value_at(x + xi2)).min(1.0);
                splitting = splitting.max(u.values[i] - bound);
            }
        }
    }
    let tol = p.sandwich_tol;
    Ok(CheckOutcome::new(
        "restriction-splitting",
        restriction <= tol && splitting <= tol,
        format!(
            "cut {cut}, slices {slices:?}: restriction excess {restriction:.2e}, splitting excess {splitting:.2e}"
        ),
        json!({ "cut": cut, "m1": m1, "m2": m2, "xi1": xi1, "xi2": xi2,
                "restriction_excess": restriction, "splitting_excess": splitting, "tolerance": tol }),
    ))
}

fn oscillation(e: &Experiment) -> Result<CheckOutcome> {
    let tr = &e
        .medium
        .as_ref()
        .ok_or_else(|| Error::Config("oscillation-bound needs a medium run".into()))?
        .trace;
    let p = &e.config.params;
    let (t0, t1) = tr.horizon();
    let half = oscillation_bound(&tr.restricted(t0, 0.5 * (t0 + t1)), p.oscillation_tau)?;
    let full = oscillation_bound(tr, p.oscillation_tau)?;
    let change = rel(full.bound, half.bound);
    let finite = full.bound.is_finite() && half.bound.is_finite();
    let slope = fit_line(&tr.times, tr.series(0.5).unwrap_or(&[]))?.slope;
    Ok(CheckOutcome::new(
        "oscillation-bound",
        finite && change <= p.oscillation_rtol,
        format!(
            "tau = {}: bound {:.4} on half horizon, {:.4} on full ({:.2}% change)",
            p.oscillation_tau,
            half.bound,
            full.bound,
            100.0 * change
        ),
        json!({ "half_horizon": half.bound, "full_horizon": full.bound, "relative_change": change,
                "mean_speed": slope }),
    ))
}
