//! TOML experiment definitions.
//!
//! ```toml
//! schema_version = 1
//! name = "two-speed"
//! nonlinearity = "logistic"
//! checks = ["past-speed", "future-speed"]
//!
//! [measure]
//! atoms = [{ speed = 2.5, mass = 1.0 }, { speed = 4.0, mass = 1.0 }]
//!
//! [horizon]
//! t_start = -40.0
//! t_end = 40.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DensityPiece, RunSettings, SpeedMeasure};
use crate::nonlinearity::Nonlinearity;

use super::checks::{find_check, Requirement};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub measure: Option<MeasureSpec>,
    #[serde(default)]
    pub medium: Option<MediumSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub horizon: Option<HorizonSpec>,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub params: CheckParams,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum NonlinearitySpec {
    Id(String),
    Table {
        name: Option<String>,
        fprime0: f64,
        /// `(s, f(s))` pairs covering `[0, 1]`.
        table: Vec<[f64; 2]>,
    },
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        NonlinearitySpec::Id("logistic".into())
    }
}

/// A speed: a number, `"inf"`, `"cstar"` or `"-cstar"`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum SpeedValue {
    Number(f64),
    Named(String),
}

impl SpeedValue {
    pub fn resolve(&self, cstar: f64) -> Result<f64> {
        match self {
            SpeedValue::Number(c) => Ok(*c),
            SpeedValue::Named(s) => match s.trim() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "cstar" | "+cstar" => Ok(cstar),
                "-cstar" => Ok(-cstar),
                other => Err(Error::Config(format!(
                    "unknown speed '{other}' (use a number, inf, cstar or -cstar)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub speed: SpeedValue,
    pub mass: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform {
        lo: SpeedValue,
        hi: SpeedValue,
        value: f64,
    },
    Exponential {
        lo: SpeedValue,
        hi: SpeedValue,
        amplitude: f64,
        rate: f64,
        origin: f64,
    },
    /// `(c, ρ(c))` samples.
    Table { points: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub density: Vec<DensitySpec>,
    #[serde(default)]
    pub mass_at_infinity: f64,
}

/// Heterogeneous medium started from step data.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    /// `"oscillating"`: `a = 1 + 0.2 sin t`, `b = 0.1 cos x`.
    pub id: String,
    /// Location of the initial step `u0 = 1_{x < step}`.
    #[serde(default)]
    pub step: f64,
    /// Fixed window `[lo, hi]`.
    pub window: [f64; 2],
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_trace_every")]
    pub trace_every: f64,
}

fn default_dx() -> f64 {
    RunSettings::default().dx
}
fn default_dt() -> f64 {
    RunSettings::default().dt
}
fn default_half_width() -> f64 {
    RunSettings::default().half_width
}
fn default_trace_every() -> f64 {
    RunSettings::default().trace_every
}

impl Default for GridSpec {
    fn default() -> Self {
        let r = RunSettings::default();
        Self {
            dx: r.dx,
            dt: r.dt,
            half_width: r.half_width,
            trace_every: r.trace_every,
        }
    }
}

impl GridSpec {
    pub fn settings(&self) -> RunSettings {
        RunSettings {
            dx: self.dx,
            dt: self.dt,
            half_width: self.half_width,
            trace_every: self.trace_every,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    /// Start time; measure runs start at `t = -n` with `n = -t_start`.
    pub t_start: f64,
    pub t_end: f64,
    /// Measure runs start this long before `t_start`, so the traced horizon
    /// sees `u_μ` rather than the relaxation of the initial datum.
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    /// Times at which full fields are kept; nine evenly spaced times by
    /// default.
    #[serde(default)]
    pub snapshots: Option<Vec<f64>>,
}

fn default_warmup() -> f64 {
    20.0
}

impl HorizonSpec {
    /// Start time `-n` of measure runs.
    pub fn start(&self) -> f64 {
        self.t_start - self.warmup
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        match &self.snapshots {
            Some(s) => s.clone(),
            None => {
                let span = self.t_end - self.t_start;
                (1..=9).map(|k| self.t_start + span * k as f64 / 9.0).collect()
            }
        }
    }
}

/// Parameters of individual checks; every field has a default. Speeds in
/// `profile_speeds` and `decay_gamma` are in units of `c*/2 = √f'(0)`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckParams {
    /// Points closer than this to either window end are ignored by `transport`.
    pub transport_margin: f64,
    pub transport_tol: f64,
    pub global_speed_rtol: f64,
    pub window_speed_rtol: f64,
    pub convergence_tol: f64,
    pub sandwich_tol: f64,
    pub tail_levels: [f64; 2],
    pub tail_rtol: f64,
    pub anchor_levels: Vec<f64>,
    pub steepness_floor: f64,
    pub width_ratio_max: f64,
    pub width_growth_min: f64,
    pub width_window: [f64; 2],
    pub shift_range_max: f64,
    pub shift_drift_min: f64,
    pub ladder_n: Vec<f64>,
    pub ladder_targets: Vec<f64>,
    pub ladder_tol: f64,
    pub sigmas: Vec<f64>,
    pub split_speed: f64,
    pub slice_times: Vec<f64>,
    pub floor_slack: f64,
    pub oscillation_tau: f64,
    pub oscillation_rtol: f64,
    pub pairs: usize,
    pub check_times: usize,
    pub pair_horizon: f64,
    pub profile_speeds: Vec<f64>,
    pub decay_gamma: f64,
    pub decay_eps: f64,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            transport_margin: 20.0,
            transport_tol: 2e-3,
            global_speed_rtol: 0.02,
            window_speed_rtol: 0.05,
            convergence_tol: 0.02,
            sandwich_tol: 5e-3,
            tail_levels: [1e-8, 1e-3],
            tail_rtol: 0.05,
            anchor_levels: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            steepness_floor: 5e-3,
            width_ratio_max: 1.5,
            width_growth_min: 2.0,
            width_window: [0.0, 40.0],
            shift_range_max: 5.0,
            shift_drift_min: 5.0,
            ladder_n: vec![20.0, 40.0, 60.0],
            ladder_targets: vec![0.0],
            ladder_tol: 1e-6,
            sigmas: vec![0.1, 0.01],
            split_speed: 3.2,
            slice_times: vec![-10.0, 0.0, 10.0],
            floor_slack: 0.05,
            oscillation_tau: 1.0,
            oscillation_rtol: 0.10,
            pairs: 10,
            check_times: 20,
            pair_horizon: 10.0,
            profile_speeds: vec![2.0, 2.25, 2.5, 3.0, 3.5, 4.0, 5.0, 7.0, 10.0],
            decay_gamma: 4.0,
            decay_eps: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
    /// Any of `"csv"`, `"plot"`, `"fields"`; `"none"` (or an empty list)
    /// writes the summary only.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "plot".into()]
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

impl OutputSpec {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        match &self.nonlinearity {
            NonlinearitySpec::Id(id) => Nonlinearity::by_id(id)
                .map_err(|e| Error::Config(format!("nonlinearity: {e}"))),
            NonlinearitySpec::Table {
                name,
                fprime0,
                table,
            } => {
                let pts: Vec<(f64, f64)> = table.iter().map(|p| (p[0], p[1])).collect();
                Nonlinearity::from_table(name.clone().unwrap_or("table".into()), &pts, *fprime0)
                    .map_err(|e| Error::Config(format!("nonlinearity.table: {e}")))
            }
        }
    }

    /// The configured measure, if any.
    pub fn speed_measure(&self, nl: &Nonlinearity) -> Result<Option<SpeedMeasure>> {
        let Some(spec) = &self.measure else {
            return Ok(None);
        };
        let cstar = nl.critical_speed();
        let mut atoms = Vec::new();
        for (i, a) in spec.atoms.iter().enumerate() {
            let c = a
                .speed
                .resolve(cstar)
                .map_err(|e| Error::Config(format!("measure.atoms[{i}].speed: {e}")))?;
            atoms.push((c, a.mass));
        }
        let mut pieces = Vec::new();
        for (i, d) in spec.density.iter().enumerate() {
            let path = format!("measure.density[{i}]");
            let speed = |v: &SpeedValue, field: &str| {
                v.resolve(cstar)
                    .map_err(|e| Error::Config(format!("{path}.{field}: {e}")))
            };
            pieces.push(match d {
                DensitySpec::Uniform { lo, hi, value } => {
                    DensityPiece::uniform(speed(lo, "lo")?, speed(hi, "hi")?, *value)
                }
                DensitySpec::Exponential {
                    lo,
                    hi,
                    amplitude,
                    rate,
                    origin,
                } => DensityPiece::exponential(
                    speed(lo, "lo")?,
                    speed(hi, "hi")?,
                    *amplitude,
                    *rate,
                    *origin,
                ),
                DensitySpec::Table { points } => {
                    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                    DensityPiece::table(&pts)
                        .map_err(|e| Error::Config(format!("{path}.points: {e}")))?
                }
            });
        }
        SpeedMeasure::new(&atoms, pieces, spec.mass_at_infinity, nl.fprime0())
            .map(Some)
            .map_err(|e| Error::Config(format!("measure: {e}")))
    }

    /// Structural checks: schema, known check ids, horizon, and that each
    /// requested check has what it needs.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.name.trim().is_empty() {
            return Err(Error::Config("name: must not be empty".into()));
        }
        let g = &self.grid;
        if !(g.dx > 0.0) || !(g.dt > 0.0) || !(g.half_width > 10.0 * g.dx) || !(g.trace_every > 0.0)
        {
            return Err(Error::Config(format!(
                "grid: dx, dt, trace_every must be positive and half_width > 10 dx, got {g:?}"
            )));
        }
        if let Some(h) = &self.horizon {
            if !(h.t_start < h.t_end) {
                return Err(Error::Config(format!(
                    "horizon: t_start = {} must be below t_end = {}",
                    h.t_start, h.t_end
                )));
            }
            if !(h.warmup >= 0.0) {
                return Err(Error::Config(format!("horizon.warmup must be >= 0, got {}", h.warmup)));
            }
            if self.measure.is_some() && !(h.start() < 0.0) {
                return Err(Error::Config(
                    "horizon: measure runs start at t = t_start - warmup = -n < 0".into(),
                ));
            }
            for (k, &t) in h.snapshot_times().iter().enumerate() {
                if t < h.t_start || t > h.t_end {
                    return Err(Error::Config(format!(
                        "horizon.snapshots[{k}] = {t} lies outside [{}, {}]",
                        h.t_start, h.t_end
                    )));
                }
            }
        }
        if self.measure.is_some() && self.medium.is_some() {
            return Err(Error::Config("measure and medium are mutually exclusive".into()));
        }
        if let Some(m) = &self.medium {
            if m.id != "oscillating" {
                return Err(Error::Config(format!(
                    "medium.id: unknown medium '{}' (known: oscillating)",
                    m.id
                )));
            }
            if !(m.window[0] < m.step && m.step < m.window[1]) {
                return Err(Error::Config("medium.window must contain medium.step".into()));
            }
        }
        let p = &self.params;
        if let Some(&n) = p.ladder_n.first() {
            if p.ladder_n.windows(2).any(|w| w[1] <= w[0]) || !(n > 0.0) {
                return Err(Error::Config("params.ladder_n must be positive and increasing".into()));
            }
            if p.ladder_targets.iter().any(|&t| t <= -n) {
                return Err(Error::Config(format!(
                    "params.ladder_targets must exceed the earliest start -{n}"
                )));
            }
        }
        for (i, id) in self.checks.iter().enumerate() {
            let spec = find_check(id).ok_or_else(|| {
                Error::Config(format!("checks[{i}]: unknown check id '{id}' (see list-checks)"))
            })?;
            let missing = match spec.requires {
                Requirement::Nothing => None,
                Requirement::MeasureRun => (self.measure.is_none() || self.horizon.is_none())
                    .then_some("a [measure] and a [horizon]"),
                Requirement::MediumRun => (self.medium.is_none() || self.horizon.is_none())
                    .then_some("a [medium] and a [horizon]"),
            };
            if let Some(what) = missing {
                return Err(Error::Config(format!("checks[{i}]: '{id}' needs {what}")));
            }
        }
        if (self.measure.is_some() || self.medium.is_some()) && self.horizon.is_none() {
            return Err(Error::Config("horizon: required when a measure or medium is given".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_SPEED: &str = r#"
schema_version = 1
name = "t"
checks = ["past-speed"]
[measure]
atoms = [{ speed = 2.5, mass = 1.0 }, { speed = "inf", mass = 0.5 }]
[[measure.density]]
shape = "exponential"
lo = "cstar"
hi = "inf"
amplitude = 1.0
rate = 1.0
origin = 2.0
[horizon]
t_start = -10.0
t_end = 10.0
"#;

    #[test]
    fn parses_atoms_densities_and_named_speeds() {
        let cfg = ExperimentConfig::from_toml(TWO_SPEED).unwrap();
        let nl = cfg.nonlinearity().unwrap();
        let mu = cfg.speed_measure(&nl).unwrap().unwrap();
        assert_eq!(mu.atoms(), &[(2.5, 1.0)]);
        assert_eq!(mu.mass_at_infinity(), 0.5);
        assert_eq!(mu.pieces()[0].lo, 2.0);
        assert!(mu.pieces()[0].hi.is_infinite());
        assert_eq!(cfg.horizon.unwrap().snapshot_times().len(), 9);
    }

    #[test]
    fn unknown_check_is_a_config_error_with_path() {
        let text = TWO_SPEED.replace("\"past-speed\"", "\"past-speed\", \"no-such-check\"");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config(m)) => assert!(m.contains("checks[1]") && m.contains("no-such-check")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let bad = TWO_SPEED.replace("[horizon]", "[horizon]\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = TWO_SPEED.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = TWO_SPEED.replace("t_start = -10.0", "t_start = 20.0\nwarmup = 0.0");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let inside = TWO_SPEED.replace("speed = 2.5", "speed = 1.5");
        let cfg = ExperimentConfig::from_toml(&inside).unwrap();
        let nl = cfg.nonlinearity().unwrap();
        assert!(matches!(cfg.speed_measure(&nl), Err(Error::Config(_))));
    }

    #[test]
    fn checks_needing_a_run_require_a_measure() {
        let text = "schema_version = 1\nname = \"x\"\nchecks = [\"sandwich\"]\n";
        match ExperimentConfig::from_toml(text) {
            Err(Error::Config(m)) => assert!(m.contains("needs")),
            other => panic!("{other:?}"),
        }
    }
}
