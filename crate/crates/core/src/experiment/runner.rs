//! Executes experiment configs and writes their artifacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{speed_estimates, FrontTrace, TraceObserver};
use crate::error::{Error, Result};
use crate::measures::{run_measure, MeasureField, MeasureRun, ProbeSpec, SpeedMeasure};
use crate::nonlinearity::Nonlinearity;
use crate::pde::{evolve, Boundary, Coefficients, Field, Grid1D, Observer, Snapshots, SolverConfig, Window};
use crate::profile_bank::ProfileBank;

use super::checks::{required_snapshot_times, run_check, CheckOutcome};
use super::config::{ExperimentConfig, HorizonSpec, MediumSpec};

/// Bundled experiment definitions, `(name, toml)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("profiles", include_str!("../../configs/profiles.toml")),
    ("intersections", include_str!("../../configs/intersections.toml")),
    ("dirac-2.5", include_str!("../../configs/dirac-2.5.toml")),
    ("dirac-3", include_str!("../../configs/dirac-3.toml")),
    ("two-speed", include_str!("../../configs/two-speed.toml")),
    ("uniform-box", include_str!("../../configs/uniform-box.toml")),
    ("box-atom-left", include_str!("../../configs/box-atom-left.toml")),
    ("box-atom-right", include_str!("../../configs/box-atom-right.toml")),
    ("box-atoms-both", include_str!("../../configs/box-atoms-both.toml")),
    ("critical-plus-three", include_str!("../../configs/critical-plus-three.toml")),
    ("exp-tail", include_str!("../../configs/exp-tail.toml")),
    ("oscillating", include_str!("../../configs/oscillating.toml")),
];

pub fn bundled_config(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("no bundled config named '{name}'")))?;
    ExperimentConfig::from_toml(text)
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dx: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<(f64, f64)>,
}

impl ExperimentConfig {
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(dx) = o.dx {
            self.grid.dx = dx;
        }
        if let Some(dt) = o.dt {
            self.grid.dt = dt;
        }
        if let Some((a, b)) = o.horizon {
            let snapshots = self.horizon.as_ref().and_then(|h| h.snapshots.clone()).map(|s| {
                s.into_iter().filter(|&t| t >= a && t <= b).collect::<Vec<_>>()
            }).filter(|s| !s.is_empty());
            let warmup = self.horizon.as_ref().map(|h| h.warmup).unwrap_or(20.0);
            self.horizon = Some(HorizonSpec {
                t_start: a,
                t_end: b,
                warmup,
                snapshots,
            });
        }
        self.validate()?;
        Ok(self)
    }
}

/// Evolution in a heterogeneous medium from step data.
#[derive(Debug, Clone)]
pub struct MediumRun {
    pub trace: FrontTrace,
    pub snapshots: Vec<Field>,
    pub final_field: Field,
}

/// A config with everything its checks read: the resolved nonlinearity and
/// measure, a profile cache, and the main evolution.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub nl: Nonlinearity,
    pub bank: ProfileBank,
    pub measure: Option<SpeedMeasure>,
    pub field: Option<Arc<MeasureField>>,
    pub run: Option<MeasureRun>,
    pub medium: Option<MediumRun>,
}

impl Experiment {
    /// Resolves the config and performs the main evolution, if any.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let nl = config.nonlinearity()?;
        let bank = ProfileBank::new(nl.clone());
        let measure = config.speed_measure(&nl)?;
        let mut e = Experiment {
            config,
            nl,
            bank,
            measure,
            field: None,
            run: None,
            medium: None,
        };
        if let Some(mu) = &e.measure {
            let h = e.horizon()?.clone();
            let probes = ProbeSpec::for_horizon(h.start(), h.t_end);
            let mf = Arc::new(MeasureField::build(mu, &e.bank, &probes)?);
            let mut times = h.snapshot_times();
            for id in &e.config.checks {
                times.extend(required_snapshot_times(id, &e.config));
            }
            times.retain(|&t| t > h.t_start && t < h.t_end);
            times.sort_by(|a, b| a.total_cmp(b));
            times.dedup();
            let settings = e.config.grid.settings();
            let run = run_measure(&mf, -h.start(), h.t_end, &settings, h.t_start, &times)?;
            e.field = Some(mf);
            e.run = Some(run);
        }
        if let Some(m) = e.config.medium.clone() {
            let h = e.horizon()?.clone();
            e.medium = Some(run_medium(&e.nl, &m, &h, &e.config)?);
        }
        Ok(e)
    }

    pub fn measure(&self) -> Result<&SpeedMeasure> {
        self.measure
            .as_ref()
            .ok_or_else(|| Error::Config("check needs a [measure]".into()))
    }

    pub fn horizon(&self) -> Result<&HorizonSpec> {
        self.config
            .horizon
            .as_ref()
            .ok_or_else(|| Error::Config("check needs a [horizon]".into()))
    }

    /// The main trace, from either kind of run.
    pub fn trace(&self) -> Option<&FrontTrace> {
        self.run
            .as_ref()
            .map(|r| &r.trace)
            .or(self.medium.as_ref().map(|m| &m.trace))
    }

    pub fn final_field(&self) -> Option<&Field> {
        self.run
            .as_ref()
            .map(|r| &r.final_field)
            .or(self.medium.as_ref().map(|m| &m.final_field))
    }

    pub fn snapshots(&self) -> &[Field] {
        match (&self.run, &self.medium) {
            (Some(r), _) => &r.snapshots,
            (None, Some(m)) => &m.snapshots,
            _ => &[],
        }
    }
}

fn run_medium(nl: &Nonlinearity, m: &MediumSpec, h: &HorizonSpec, cfg: &ExperimentConfig) -> Result<MediumRun> {
    let co = Coefficients::with_reaction(
        Arc::new(|t: f64, _x: f64| 1.0 + 0.2 * t.sin()),
        Arc::new(|_t: f64, x: f64| 0.1 * x.cos()),
        nl.clone(),
        (0.8, 1.2),
        0.1,
    )?;
    let grid = Grid1D::covering(m.window[0], m.window[1], cfg.grid.dx)?;
    let step = m.step;
    let u0 = Field::from_fn(grid, h.t_start, move |x| if x < step { 1.0 } else { 0.0 })?;
    let solver = SolverConfig::new(
        cfg.grid.dt,
        Boundary::Dirichlet {
            left: 1.0,
            right: 0.0,
        },
        Window::FollowHalfLevel,
        0.0,
    );
    let mut tracer = TraceObserver::uniform(h.t_start, h.t_end, cfg.grid.trace_every);
    let mut snaps = Snapshots::at(&h.snapshot_times());
    let observers: &mut [&mut dyn Observer] = &mut [&mut tracer, &mut snaps];
    let final_field = evolve(&u0, &co, &solver, h.t_end, observers)?;
    Ok(MediumRun {
        trace: tracer.trace,
        snapshots: snaps.fields,
        final_field,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    CheckFailure,
    ConfigError,
    NumericalFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::CheckFailure => 1,
            RunStatus::ConfigError => 2,
            RunStatus::NumericalFailure => 3,
        }
    }

    /// Status of an error: configuration and I/O problems versus numerics.
    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Io(_) | Error::Parse(_) => RunStatus::ConfigError,
            _ => RunStatus::NumericalFailure,
        }
    }

    fn severity(self) -> u8 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::CheckFailure => 1,
            RunStatus::NumericalFailure => 2,
            RunStatus::ConfigError => 3,
        }
    }

    pub fn worst(self, other: Self) -> Self {
        if other.severity() > self.severity() {
            other
        } else {
            self
        }
    }
}

/// A check that could not be evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct CheckError {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub status: RunStatus,
    pub checks: Vec<CheckOutcome>,
    pub errors: Vec<CheckError>,
    pub metrics: Value,
}

impl RunSummary {
    pub fn check(&self, id: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

/// Run-level metrics: measure classification, quadrature and speed fits.
pub fn run_metrics(e: &Experiment) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("nonlinearity".into(), json!(e.nl.name()));
    m.insert("fprime0".into(), json!(e.nl.fprime0()));
    m.insert("critical_speed".into(), json!(e.nl.critical_speed()));
    if let Some(mu) = &e.measure {
        m.insert("classification".into(), json!(mu.classify()));
        m.insert("total_mass".into(), json!(mu.total_mass()));
    }
    if let Some(f) = &e.field {
        m.insert("quadrature_nodes".into(), json!(f.quadrature_nodes()));
        m.insert("quadrature_error".into(), json!(f.quadrature_error()));
    }
    if let Some(tr) = e.trace() {
        m.insert("trace_samples".into(), json!(tr.len()));
        if let Ok(s) = speed_estimates(tr, 0.5) {
            m.insert("speeds".into(), json!(s));
        }
    }
    Value::Object(m)
}

/// Runs the requested checks on a prepared experiment.
pub fn verify(e: &Experiment) -> RunSummary {
    let mut status = RunStatus::Pass;
    let mut checks = Vec::new();
    let mut errors = Vec::new();
    for id in &e.config.checks {
        match run_check(id, e) {
            Ok(c) => {
                if !c.pass {
                    status = status.worst(RunStatus::CheckFailure);
                }
                checks.push(c);
            }
            Err(err) => {
                status = status.worst(RunStatus::of_error(&err));
                errors.push(CheckError {
                    id: id.clone(),
                    error: err.to_string(),
                });
            }
        }
    }
    RunSummary {
        name: e.config.name.clone(),
        status,
        checks,
        errors,
        metrics: run_metrics(e),
    }
}

/// Prepares and verifies a config. Failures during preparation are turned
/// into a summary with the matching status.
pub fn run_experiment(cfg: ExperimentConfig) -> (Option<Experiment>, RunSummary) {
    let name = cfg.name.clone();
    match Experiment::prepare(cfg) {
        Ok(e) => {
            let s = verify(&e);
            (Some(e), s)
        }
        Err(err) => (
            None,
            RunSummary {
                name,
                status: RunStatus::of_error(&err),
                checks: Vec::new(),
                errors: vec![CheckError {
                    id: "prepare".into(),
                    error: err.to_string(),
                }],
                metrics: Value::Null,
            },
        ),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_columns(path: &Path, header: &str, rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    use std::io::Write;
    let mut w = create(path)?;
    writeln!(w, "# {header}")?;
    for (a, b) in rows {
        if a.is_finite() && b.is_finite() {
            writeln!(w, "{a:.10e} {b:.10e}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.json` and, per `formats`, the trace CSV (`csv`),
/// two-column plot files (`plot`) and checkpoint files of the stored
/// fields (`fields`). Returns the paths written.
pub fn emit_outputs(e: Option<&Experiment>, summary: &RunSummary, dir: &Path, formats: &[String]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .map_err(|err| Error::Config(format!("cannot create {}: {err}", dir.display())))?;
    let wants = |f: &str| formats.iter().any(|x| x == f);
    let mut written = Vec::new();
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).map_err(|err| Error::Parse(err.to_string()))?;
    fs::write(&path, text + "\n")
        .map_err(|err| Error::Config(format!("cannot write {}: {err}", path.display())))?;
    written.push(path);
    let Some(e) = e else {
        return Ok(written);
    };
    if let Some(tr) = e.trace() {
        if wants("csv") {
            let path = dir.join("trace.csv");
            let mut w = create(&path)?;
            tr.write_csv(&mut w)?;
            std::io::Write::flush(&mut w)?;
            written.push(path);
        }
        if wants("plot") {
            let xs = tr.series(0.5).unwrap_or(&[]);
            let t = &tr.times;
            let mut files = vec![
                ("position.dat", "t X_0.5(t)", t.iter().copied().zip(xs.iter().copied()).collect::<Vec<_>>()),
                (
                    "mean_speed.dat",
                    "t X_0.5(t)/t",
                    t.iter()
                        .zip(xs)
                        .filter(|(t, _)| t.abs() >= 1.0)
                        .map(|(t, x)| (*t, x / t))
                        .collect(),
                ),
                ("width.dat", "t width(0.1,0.9)", t.iter().copied().zip(tr.widths.iter().copied()).collect()),
            ];
            if let Some(u) = e.final_field() {
                files.push((
                    "tail.dat",
                    "x ln u(t_end, x)",
                    (0..u.values.len())
                        .filter(|&i| u.values[i] > 0.0)
                        .map(|i| (u.x(i), u.values[i].ln()))
                        .collect(),
                ));
            }
            for (name, header, rows) in files {
                let path = dir.join(name);
                write_columns(&path, header, rows.into_iter())?;
                written.push(path);
            }
        }
    }
    if wants("fields") {
        for u in e.snapshots().iter().chain(e.final_field()) {
            let path = dir.join(format!("field_t{:+.3}.txt", u.time));
            let mut w = create(&path)?;
            u.write_checkpoint(&mut w)?;
            std::io::Write::flush(&mut w)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Output directory for a run: the explicit one, the config's, or
/// `out/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    match (explicit, &cfg.output.dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => Path::new("out").join(&cfg.name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_config_parses() {
        for (name, text) in BUNDLED {
            let cfg = ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&cfg.name, name);
        }
    }

    #[test]
    fn profile_checks_pass_without_a_run() {
        let (e, s) = run_experiment(bundled_config("profiles").unwrap());
        assert!(e.is_some());
        assert_eq!(s.status, RunStatus::Pass, "{s:#?}");
        assert_eq!(s.exit_code(), 0);
    }

    #[test]
    fn summary_only_output() {
        let cfg = ExperimentConfig::from_toml(
            "schema_version = 1\nname = \"tiny\"\nchecks = [\"decay-rate\"]\n",
        )
        .unwrap();
        let (e, s) = run_experiment(cfg);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_outputs(e.as_ref(), &s, dir.path(), &[]).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("summary.json"));
    }

    #[test]
    fn overrides_replace_grid_and_horizon() {
        let cfg = bundled_config("dirac-3")
            .unwrap()
            .with_overrides(&Overrides {
                dx: Some(0.1),
                dt: Some(2e-3),
                horizon: Some((-5.0, 5.0)),
            })
            .unwrap();
        assert_eq!(cfg.grid.dx, 0.1);
        let h = cfg.horizon.unwrap();
        assert_eq!((h.t_start, h.t_end), (-5.0, 5.0));
        assert!(h.snapshot_times().iter().all(|&t| (-5.0..=5.0).contains(&t)));
        let bad = bundled_config("dirac-3").unwrap().with_overrides(&Overrides {
            horizon: Some((5.0, -5.0)),
            ..Default::default()
        });
        assert!(matches!(bad, Err(Error::Config(_))));
    }
}
