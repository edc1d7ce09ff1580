//! Reaction terms of KPP type and the spatially homogeneous solution θ.
//!
//! A [`Nonlinearity`] couples the reaction rate `f` on `[0, 1]` with its
//! declared slope at zero and the class it was validated into. Everything
//! downstream (critical speed, profile shooting, PDE reaction step) reads the
//! reaction term through this type.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::interp::{hermite, MonotoneCubic};

/// Step used to cross-check the declared `f'(0)` against `f(h)/h`.
const SLOPE_CHECK_STEP: f64 = 1e-6;
const SLOPE_CHECK_RTOL: f64 = 1e-3;
/// Relative floor (in units of `max |f|`) for the concavity test.
const CONCAVITY_RTOL: f64 = 1e-9;
/// θ is reported as saturated once it is this close to 1.
pub const THETA_SATURATION: f64 = 1e-12;

/// The two admissible classes of reaction terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KppClass {
    /// `f` is C², concave, positive on `(0, 1)` and vanishes at 0 and 1.
    ConcaveKpp,
    /// The weaker hypothesis `0 < f(u) ≤ f'(0) u` on `(0, 1)`.
    SubTangential,
}

impl fmt::Display for KppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KppClass::ConcaveKpp => write!(f, "concave-kpp"),
            KppClass::SubTangential => write!(f, "sub-tangential"),
        }
    }
}

/// One failed condition found by [`validate_kpp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EndpointNotZero { at: f64, value: f64 },
    NotPositive { at: f64, value: f64 },
    SlopeNotPositive { declared: f64 },
    SlopeMismatch { declared: f64, estimated: f64 },
    NotConcave { at: f64, second_difference: f64 },
    AboveTangent { at: f64, value: f64, tangent: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EndpointNotZero { at, value } => write!(f, "f({at}) = {value} != 0"),
            Violation::NotPositive { at, value } => write!(f, "f({at}) = {value} <= 0"),
            Violation::SlopeNotPositive { declared } => write!(f, "f'(0) = {declared} <= 0"),
            Violation::SlopeMismatch {
                declared,
                estimated,
            } => write!(f, "declared f'(0) = {declared} but f(h)/h = {estimated}"),
            Violation::NotConcave {
                at,
                second_difference,
            } => write!(f, "second difference {second_difference:e} > 0 at s = {at}"),
            Violation::AboveTangent { at, value, tangent } => {
                write!(f, "f({at}) = {value} exceeds f'(0) s = {tangent}")
            }
        }
    }
}

/// Outcome of [`validate_kpp`].
#[derive(Debug, Clone, PartialEq)]
pub struct KppValidation {
    /// `None` when the candidate is rejected.
    pub class: Option<KppClass>,
    pub violations: Vec<Violation>,
}

impl KppValidation {
    pub fn is_rejected(&self) -> bool {
        self.class.is_none()
    }
}

/// Classifies a candidate reaction term on a uniform sample grid of
/// `n_samples` points in `[0, 1]`.
///
/// Violations of the concavity test alone do not reject the candidate: it
/// is then checked against the sub-tangential bound.
pub fn validate_kpp(
    f: &dyn Fn(f64) -> f64,
    fprime0: f64,
    n_samples: usize,
) -> Result<KppValidation> {
    if n_samples < 16 {
        return Err(Error::InvalidInput(format!(
            "need at least 16 samples, got {n_samples}"
        )));
    }
    if !fprime0.is_finite() {
        return Err(Error::InvalidInput("f'(0) is not finite".into()));
    }
    let h = 1.0 / (n_samples - 1) as f64;
    let s: Vec<f64> = (0..n_samples).map(|i| i as f64 * h).collect();
    let values: Vec<f64> = s.iter().map(|&x| f(x)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "f({}) is not finite",
            s[i]
        )));
    }
    let probe = f(SLOPE_CHECK_STEP);
    if !probe.is_finite() {
        return Err(Error::InvalidInput("f(h) is not finite near 0".into()));
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let zero_tol = 1e-12 * scale.max(1.0);

    let mut base = Vec::new();
    for &i in &[0, n_samples - 1] {
        if values[i].abs() > zero_tol {
            base.push(Violation::EndpointNotZero {
                at: s[i],
                value: values[i],
            });
        }
    }
    for i in 1..n_samples - 1 {
        if values[i] <= 0.0 {
            base.push(Violation::NotPositive {
                at: s[i],
                value: values[i],
            });
        }
    }
    if fprime0 <= 0.0 {
        base.push(Violation::SlopeNotPositive { declared: fprime0 });
    } else {
        let estimated = probe / SLOPE_CHECK_STEP;
        if ((estimated - fprime0) / fprime0).abs() > SLOPE_CHECK_RTOL {
            base.push(Violation::SlopeMismatch {
                declared: fprime0,
                estimated,
            });
        }
    }
    if !base.is_empty() {
        return Ok(KppValidation {
            class: None,
            violations: base,
        });
    }

    let concave_tol = CONCAVITY_RTOL * scale;
    let concavity: Vec<Violation> = (1..n_samples - 1)
        .filter_map(|i| {
            let d2 = values[i - 1] - 2.0 * values[i] + values[i + 1];
            (d2 > concave_tol).then_some(Violation::NotConcave {
                at: s[i],
                second_difference: d2,
            })
        })
        .collect();
    if concavity.is_empty() {
        return Ok(KppValidation {
            class: Some(KppClass::ConcaveKpp),
            violations: Vec::new(),
        });
    }
    let tangent: Vec<Violation> = (1..n_samples - 1)
        .filter_map(|i| {
            let t = fprime0 * s[i];
            (values[i] > t * (1.0 + 1e-12) + zero_tol).then_some(Violation::AboveTangent {
                at: s[i],
                value: values[i],
                tangent: t,
            })
        })
        .collect();
    if tangent.is_empty() {
        Ok(KppValidation {
            class: Some(KppClass::SubTangential),
            violations: concavity,
        })
    } else {
        let mut violations = concavity;
        violations.extend(tangent);
        Ok(KppValidation {
            class: None,
            violations,
        })
    }
}

#[derive(Clone)]
enum Reaction {
    Logistic,
    Closure(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Table(Arc<MonotoneCubic>),
}

/// A validated reaction term.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    reaction: Reaction,
    fprime0: f64,
    fprime1: f64,
    lipschitz: f64,
    class: KppClass,
    theta: Arc<OnceLock<ThetaTable>>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("fprime0", &self.fprime0)
            .field("class", &self.class)
            .finish()
    }
}

impl Nonlinearity {
    /// `f(s) = s (1 - s)`.
    pub fn logistic() -> Self {
        Self::build("logistic".into(), Reaction::Logistic, 1.0)
            .expect("logistic reaction is KPP")
    }

    /// Looks up a built-in reaction term by id.
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "logistic" => Ok(Self::logistic()),
            other => Err(Error::InvalidInput(format!(
                "unknown nonlinearity id '{other}' (known: logistic)"
            ))),
        }
    }

    /// Wraps an arbitrary reaction term with its declared slope at zero.
    pub fn from_fn(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        fprime0: f64,
    ) -> Result<Self> {
        Self::build(name.into(), Reaction::Closure(Arc::new(f)), fprime0)
    }

    /// Reaction term given by `(s, f(s))` pairs covering `[0, 1]`, with
    /// monotone-cubic interpolation between them.
    pub fn from_table(
        name: impl Into<String>,
        points: &[(f64, f64)],
        fprime0: f64,
    ) -> Result<Self> {
        let table = MonotoneCubic::new(points)?;
        let (lo, hi) = table.domain();
        if lo > 0.0 || hi < 1.0 {
            return Err(Error::InvalidInput(format!(
                "table covers [{lo}, {hi}], must cover [0, 1]"
            )));
        }
        Self::build(name.into(), Reaction::Table(Arc::new(table)), fprime0)
    }

    fn build(name: String, reaction: Reaction, fprime0: f64) -> Result<Self> {
        let eval = {
            let reaction = reaction.clone();
            move |s: f64| eval_reaction(&reaction, s)
        };
        let report = validate_kpp(&eval, fprime0, 1001)?;
        let Some(class) = report.class else {
            let reasons: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidInput(format!(
                "'{name}' is not a KPP nonlinearity: {}",
                reasons.join("; ")
            )));
        };
        let h = 1e-4;
        let fprime1 = (3.0 * eval(1.0) - 4.0 * eval(1.0 - h) + eval(1.0 - 2.0 * h)) / (2.0 * h);
        let n = 2000;
        let lipschitz = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64;
                let b = (i + 1) as f64 / n as f64;
                ((eval(b) - eval(a)) / (b - a)).abs()
            })
            .fold(0.0f64, f64::max)
            .max(fprime0);
        Ok(Self {
            name,
            reaction,
            fprime0,
            fprime1,
            lipschitz,
            class,
            theta: Arc::new(OnceLock::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class(&self) -> KppClass {
        self.class
    }

    pub fn fprime0(&self) -> f64 {
        self.fprime0
    }

    /// Numerical estimate of `f'(1)` (nonpositive for admissible terms).
    pub fn fprime1(&self) -> f64 {
        self.fprime1
    }

    /// Upper bound of `|f'|` on `[0, 1]`, sampled.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        eval_reaction(&self.reaction, s)
    }

    pub fn is_logistic(&self) -> bool {
        matches!(self.reaction, Reaction::Logistic)
    }

    /// Minimal front speed `c* = 2 √f'(0)`.
    pub fn critical_speed(&self) -> f64 {
        critical_speed(self.fprime0)
    }

    /// The homogeneous solution `θ' = f(θ)` with `θ(t) ~ e^{f'(0) t}` as
    /// `t → -∞`.
    pub fn theta(&self, t: f64) -> ThetaValue {
        if self.is_logistic() {
            let v = if t < 0.0 {
                let e = t.exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + (-t).exp())
            };
            return ThetaValue::saturate(v);
        }
        self.theta
            .get_or_init(|| ThetaTable::integrate(self))
            .eval(t)
    }
}

#[inline]
fn eval_reaction(r: &Reaction, s: f64) -> f64 {
    match r {
        Reaction::Logistic => s * (1.0 - s),
        Reaction::Closure(f) => f(s),
        Reaction::Table(t) => t.eval(s),
    }
}

/// `c* = 2 √f'(0)`.
pub fn critical_speed(fprime0: f64) -> f64 {
    2.0 * fprime0.sqrt()
}

/// Value of θ together with a flag telling whether it was clipped below 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaValue {
    pub value: f64,
    pub saturated: bool,
}

impl ThetaValue {
    fn saturate(v: f64) -> Self {
        if 1.0 - v < THETA_SATURATION {
            Self {
                value: 1.0 - THETA_SATURATION,
                saturated: true,
            }
        } else {
            Self {
                value: v,
                saturated: false,
            }
        }
    }
}

/// Tabulated θ for reaction terms without a closed form.
#[derive(Debug)]
struct ThetaTable {
    t0: f64,
    h: f64,
    rate: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl ThetaTable {
    fn integrate(nl: &Nonlinearity) -> Self {
        let rate = nl.fprime0;
        let t0 = -40.0 / rate;
        let h = 0.0025 / rate;
        let mut y = (rate * t0).exp();
        let mut values = vec![y];
        let mut slopes = vec![nl.eval(y)];
        let max_steps = 2_000_000;
        while 1.0 - y > THETA_SATURATION && values.len() < max_steps {
            let k1 = nl.eval(y);
            let k2 = nl.eval(y + 0.5 * h * k1);
            let k3 = nl.eval(y + 0.5 * h * k2);
            let k4 = nl.eval(y + h * k3);
            let next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if next <= y {
                // f vanishes to rounding before reaching the saturation level
                break;
            }
            y = next.min(1.0);
            values.push(y);
            slopes.push(nl.eval(y));
        }
        Self {
            t0,
            h,
            rate,
            values,
            slopes,
        }
    }

    fn eval(&self, t: f64) -> ThetaValue {
        if t <= self.t0 {
            return ThetaValue::saturate((self.rate * t).exp());
        }
        let pos = (t - self.t0) / self.h;
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return ThetaValue {
                value: 1.0 - THETA_SATURATION,
                saturated: true,
            };
        }
        let s = pos - i as f64;
        ThetaValue::saturate(hermite(
            self.values[i],
            self.values[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
            self.h,
            s,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logistic(s: f64) -> f64 {
        s * (1.0 - s)
    }

    #[test]
    fn logistic_is_concave_kpp_for_all_sample_counts() {
        for n in [16, 17, 100, 1001, 4096] {
            let r = validate_kpp(&logistic, 1.0, n).unwrap();
            assert_eq!(r.class, Some(KppClass::ConcaveKpp), "n = {n}");
        }
    }

    #[test]
    fn square_is_rejected() {
        let r = validate_kpp(&|s: f64| s * s, 0.0, 64).unwrap();
        assert!(r.is_rejected());
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EndpointNotZero { at, .. } if *at == 1.0)));
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SlopeNotPositive { .. })));
    }

    #[test]
    fn cubic_perturbation_of_logistic_is_concave() {
        // s(1-s)(1+s/2) = s - s²/2 - s³/2 has f'' = -1 - 3s < 0.
        let f = |s: f64| s * (1.0 - s) * (1.0 + 0.5 * s);
        let r = validate_kpp(&f, 1.0, 257).unwrap();
        assert_eq!(r.class, Some(KppClass::ConcaveKpp));
    }

    #[test]
    fn sub_tangential_but_not_concave() {
        // f'' = -2 + 18 s - 36 s² is positive near s = 1/4, yet (1-s)(1+3s²) ≤ 1.
        let f = |s: f64| s * (1.0 - s) * (1.0 + 3.0 * s * s);
        let r = validate_kpp(&f, 1.0, 257).unwrap();
        assert_eq!(r.class, Some(KppClass::SubTangential));
        assert!(r
            .violations
            .iter()
            .all(|v| matches!(v, Violation::NotConcave { .. })));
    }

    #[test]
    fn above_tangent_is_rejected() {
        // (1-s)(1+8s²) exceeds 1 for mid-range s.
        let f = |s: f64| s * (1.0 - s) * (1.0 + 8.0 * s * s);
        let r = validate_kpp(&f, 1.0, 257).unwrap();
        assert!(r.is_rejected());
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::AboveTangent { .. })));
    }

    #[test]
    fn declared_slope_is_cross_checked() {
        let r = validate_kpp(&logistic, 1.1, 64).unwrap();
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SlopeMismatch { .. })));
    }

    #[test]
    fn non_finite_values_are_invalid_input() {
        let f = |s: f64| if s > 0.5 { f64::NAN } else { s };
        assert!(matches!(
            validate_kpp(&f, 1.0, 32),
            Err(Error::InvalidInput(_))
        ));
        assert!(validate_kpp(&logistic, 1.0, 8).is_err());
    }

    #[test]
    fn critical_speed_closed_form() {
        assert_eq!(critical_speed(1.0), 2.0);
        assert_eq!(critical_speed(4.0), 4.0);
        assert_eq!(critical_speed(0.25), 1.0);
        assert_eq!(Nonlinearity::logistic().critical_speed(), 2.0);
    }

    #[test]
    fn logistic_theta_closed_form() {
        let nl = Nonlinearity::logistic();
        assert_eq!(nl.theta(0.0).value, 0.5);
        let far = nl.theta(-20.0).value;
        assert!((far / (-20.0f64).exp() - 1.0).abs() < 1e-8);
        let sat = nl.theta(40.0);
        assert!(sat.saturated);
        assert_eq!(sat.value, 1.0 - THETA_SATURATION);
    }

    #[test]
    fn tabulated_theta_matches_closed_form() {
        let nl = Nonlinearity::from_fn("logistic-closure", logistic, 1.0).unwrap();
        for t in [-30.0, -5.0, -1.0, 0.0, 0.7, 3.0, 10.0] {
            let exact = 1.0 / (1.0 + f64::exp(-t));
            let got = nl.theta(t).value;
            assert!((got - exact).abs() < 1e-9 * exact.max(1e-3), "t = {t}: {got} vs {exact}");
        }
    }

    #[test]
    fn tabulated_reaction_round_trips_logistic() {
        let pts: Vec<(f64, f64)> = (0..=2000)
            .map(|i| {
                let s = i as f64 / 2000.0;
                (s, logistic(s))
            })
            .collect();
        let nl = Nonlinearity::from_table("table", &pts, 1.0).unwrap();
        assert!((nl.eval(0.333) - logistic(0.333)).abs() < 1e-5);
        assert_eq!(nl.class(), KppClass::ConcaveKpp);
        assert!((nl.fprime1() + 1.0).abs() < 1e-2);
    }

    #[test]
    fn unknown_id_is_rejected() {
        assert!(Nonlinearity::by_id("bistable").is_err());
        assert!(Nonlinearity::by_id("logistic").is_ok());
    }

    proptest! {
        #[test]
        fn superadditivity(a in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let b = (1.0 - a) * frac;
            prop_assert!(logistic(a) + logistic(b) >= logistic(a + b) - 1e-15);
        }

        #[test]
        fn scaled_reaction_is_subsolution(m in 1e-6f64..=1.0, s in 0.0f64..=1.0) {
            let nl = Nonlinearity::logistic();
            prop_assert!(nl.eval(m * s) >= m * nl.eval(s) - 1e-15);
        }

        #[test]
        fn theta_is_increasing(t in -60.0f64..25.0, dt in 1e-3f64..5.0) {
            let nl = Nonlinearity::from_fn("logistic-closure", logistic, 1.0).unwrap();
            let a = nl.theta(t);
            let b = nl.theta(t + dt);
            prop_assert!(b.value > a.value || b.saturated);
            prop_assert!(a.value > 0.0 && a.value < 1.0);
        }
    }
}
