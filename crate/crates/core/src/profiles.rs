//! Traveling-front profiles `φ_c` solving `φ'' + c φ' + f(φ) = 0`,
//! `φ(-∞) = 1`, `φ(+∞) = 0`, normalized by their right tail:
//! `φ_c(ξ) ~ e^{-λ_c ξ}` for `c > c*` and `φ_{c*}(ξ) ~ ξ e^{-λ_{c*} ξ}`.
//!
//! Profiles are computed by shooting forward from the saddle at `φ = 1`
//! along its unstable eigenvector. The node at 0 attracts this trajectory,
//! so errors made near 1 are damped on the way down. The trajectory is
//! continued far into the linear regime (`φ ~ 1e-40`), where the tail is
//! fitted to the two-mode form `e^{-λξ}(A + B g_δ(ξ))` with
//! `g_δ(u) = (1 - e^{-δu})/δ`, `δ = √(c² - 4 f'(0))`. The same basis
//! degenerates smoothly to `{1, ξ}` at the critical speed. The fitted
//! amplitude fixes the shift; no free translation remains.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::interp::{hermite5, hermite5_slope};
use crate::nonlinearity::{critical_speed, Nonlinearity};

/// Distance below 1 at which the shooting starts.
const SEED_GAP: f64 = 1e-9;
/// Window (in values of φ) used for the tail fit. The table runs through
/// the whole window, so the fitted tail formula is only used beyond it.
const FIT_WINDOW: (f64, f64) = (1e-40, 1e-30);
/// Grid spacing for speeds of order `c*`; scaled up for faster, flatter fronts.
pub const BASE_STORE_STEP: f64 = 0.05;
const RK_SUBSTEPS: usize = 8;
/// Relative distance to `c*` below which a speed is treated as critical.
const CRITICAL_RTOL: f64 = 1e-12;
/// Tolerance of the pointwise diagnostics.
pub const DIAGNOSTIC_TOL: f64 = 1e-8;

/// `Ψ(λ) = λ + f'(0)/λ`, with `Ψ(0) = ∞`.
pub fn psi(lambda: f64, fprime0: f64) -> f64 {
    if lambda == 0.0 {
        f64::INFINITY
    } else {
        lambda + fprime0 / lambda
    }
}

/// `Ψ⁻¹(c) = (|c| - √(c² - 4 f'(0))) sgn(c) / 2`, and 0 for `c = ±∞`.
///
/// Speeds strictly inside `(-c*, c*)` are outside the domain.
pub fn decay_rate(c: f64, fprime0: f64) -> Result<f64> {
    if c.is_nan() || fprime0 <= 0.0 || !fprime0.is_finite() {
        return Err(Error::Domain(format!(
            "decay rate undefined for c = {c}, f'(0) = {fprime0}"
        )));
    }
    if c.is_infinite() {
        return Ok(0.0);
    }
    let cstar = critical_speed(fprime0);
    let a = c.abs();
    if a < cstar * (1.0 - CRITICAL_RTOL) {
        return Err(Error::Domain(format!(
            "speed {c} lies inside (-c*, c*) with c* = {cstar}"
        )));
    }
    let disc = (c * c - 4.0 * fprime0).max(0.0).sqrt();
    // 2 f'(0) / (|c| + √(c² - 4 f'(0))) avoids cancellation for large |c|.
    Ok(c.signum() * 2.0 * fprime0 / (a + disc))
}

/// Either side of a profile lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Query {
    /// Evaluate `φ(ξ)`.
    Abscissa(f64),
    /// Evaluate `φ⁻¹(u)`.
    Level(f64),
}

/// Right-tail model `φ(ξ) ≈ e^{-λξ} (a + b g_δ(ξ - anchor))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub anchor: f64,
}

impl TailModel {
    #[inline]
    fn g(&self, u: f64) -> f64 {
        if self.delta == 0.0 {
            u
        } else if (self.delta * u).abs() < 1e-8 {
            u * (1.0 - 0.5 * self.delta * u)
        } else {
            -(-self.delta * u).exp_m1() / self.delta
        }
    }

    #[inline]
    fn g_prime(&self, u: f64) -> f64 {
        if self.delta == 0.0 {
            1.0
        } else {
            (-self.delta * u).exp()
        }
    }

    /// The bracket `a + b g_δ(ξ - anchor)`.
    #[inline]
    fn prefactor(&self, xi: f64) -> f64 {
        self.a + self.b * self.g(xi - self.anchor)
    }
}

/// A tabulated, normalized, decreasing traveling-front profile.
#[derive(Debug, Clone)]
pub struct FrontProfile {
    c: f64,
    lambda: f64,
    fprime0: f64,
    critical: bool,
    xi0: f64,
    h: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    ddphi: Vec<f64>,
    tail: TailModel,
    left_rate: f64,
    normalization_residual: f64,
    ode_residual: f64,
}

/// Pointwise checks of a profile against the tail bound and the
/// log-derivative bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileDiagnostics {
    /// `φ(ξ) ≤ e^{-λξ}` everywhere; `None` for the critical profile, where
    /// the pure exponential bound is not claimed.
    pub decay_bound_ok: Option<bool>,
    /// `-λ < φ'/φ < 0` at every grid point.
    pub logderiv_ok: bool,
    pub monotone_ok: bool,
    /// Stored ODE residual (NaN for imported profiles).
    pub residual: f64,
}

impl FrontProfile {
    /// Assembles a profile from raw tabulated data. Used by importers and
    /// by tests that need deliberately perturbed profiles.
    #[allow(clippy::too_many_arguments)]
    pub fn from_table(
        c: f64,
        fprime0: f64,
        xi0: f64,
        h: f64,
        phi: Vec<f64>,
        dphi: Vec<f64>,
        tail: TailModel,
        left_rate: f64,
    ) -> Result<Self> {
        if phi.len() != dphi.len() || phi.len() < 8 {
            return Err(Error::InvalidInput(
                "profile table needs matching φ and φ' columns of length >= 8".into(),
            ));
        }
        if !(h > 0.0) || !xi0.is_finite() {
            return Err(Error::InvalidInput("profile grid must be uniform and increasing".into()));
        }
        let lambda = decay_rate(c, fprime0)?;
        let cstar = critical_speed(fprime0);
        let ddphi = (0..dphi.len()).map(|i| derivative_any(&dphi, i, h)).collect();
        Ok(Self {
            c,
            lambda,
            fprime0,
            critical: c <= cstar * (1.0 + CRITICAL_RTOL),
            xi0,
            h,
            phi,
            dphi,
            ddphi,
            tail,
            left_rate,
            normalization_residual: f64::NAN,
            ode_residual: f64::NAN,
        })
    }

    pub fn speed(&self) -> f64 {
        self.c
    }

    pub fn decay_rate(&self) -> f64 {
        self.lambda
    }

    pub fn fprime0(&self) -> f64 {
        self.fprime0
    }

    pub fn is_critical(&self) -> bool {
        self.critical
    }

    pub fn grid_step(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn xi(&self, i: usize) -> f64 {
        self.xi0 + i as f64 * self.h
    }

    pub fn xi_range(&self) -> (f64, f64) {
        (self.xi0, self.xi(self.phi.len() - 1))
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn slopes(&self) -> &[f64] {
        &self.dphi
    }

    pub fn tail(&self) -> TailModel {
        self.tail
    }

    /// Exponential rate of `1 - φ` on the left tail.
    pub fn left_rate(&self) -> f64 {
        self.left_rate
    }

    pub fn normalization_residual(&self) -> f64 {
        self.normalization_residual
    }

    pub fn ode_residual(&self) -> f64 {
        self.ode_residual
    }

    /// Largest value of `|φ'|` on the grid.
    pub fn max_slope(&self) -> f64 {
        self.dphi.iter().fold(0.0f64, |m, d| m.max(d.abs()))
    }

    /// `φ(ξ)`, with analytic tails beyond the table.
    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        let pos = (xi - self.xi0) / self.h;
        let last = self.phi.len() - 1;
        if pos < 0.0 {
            return 1.0 - (1.0 - self.phi[0]) * (self.left_rate * (xi - self.xi0)).exp();
        }
        if pos >= last as f64 {
            if pos == last as f64 {
                return self.phi[last];
            }
            return (-self.lambda * xi).exp() * self.tail.prefactor(xi);
        }
        let i = pos as usize;
        let s = pos - i as f64;
        hermite5(
            self.phi[i],
            self.phi[i + 1],
            self.dphi[i],
            self.dphi[i + 1],
            self.ddphi[i],
            self.ddphi[i + 1],
            self.h,
            s,
        )
    }

    /// `φ'(ξ)`.
    pub fn slope(&self, xi: f64) -> f64 {
        let pos = (xi - self.xi0) / self.h;
        let last = self.phi.len() - 1;
        if pos < 0.0 {
            return -(1.0 - self.phi[0])
                * self.left_rate
                * (self.left_rate * (xi - self.xi0)).exp();
        }
        if pos >= last as f64 {
            let e = (-self.lambda * xi).exp();
            return e
                * (self.tail.b * self.tail.g_prime(xi - self.tail.anchor)
                    - self.lambda * self.tail.prefactor(xi));
        }
        let i = pos as usize;
        let s = pos - i as f64;
        hermite5_slope(
            self.phi[i],
            self.phi[i + 1],
            self.dphi[i],
            self.dphi[i + 1],
            self.ddphi[i],
            self.ddphi[i + 1],
            self.h,
            s,
        )
    }

    /// `φ⁻¹(u)` for `u ∈ (0, 1)`.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("level {u} is outside (0, 1)")));
        }
        let last = self.phi.len() - 1;
        if u >= self.phi[0] {
            return Ok(self.xi0 + ((1.0 - u) / (1.0 - self.phi[0])).ln() / self.left_rate);
        }
        if u <= self.phi[last] {
            return Ok(self.invert_tail(u));
        }
        // φ is decreasing: find i with φ[i] >= u > φ[i+1].
        let (mut lo, mut hi) = (0usize, last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.phi[mid] >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (mut a, mut b) = (self.xi(lo), self.xi(hi));
        let mut x = a + (b - a) * (self.phi[lo] - u) / (self.phi[lo] - self.phi[hi]);
        for _ in 0..60 {
            let r = self.value(x) - u;
            if r > 0.0 {
                a = x;
            } else {
                b = x;
            }
            let d = self.slope(x);
            let mut next = if d < 0.0 { x - r / d } else { 0.5 * (a + b) };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                x = next;
                break;
            }
            x = next;
        }
        Ok(x)
    }

    fn invert_tail(&self, u: f64) -> f64 {
        // ln φ is decreasing and nearly linear beyond the table.
        let target = u.ln();
        let last = self.xi(self.phi.len() - 1);
        let logv = |x: f64| -self.lambda * x + self.tail.prefactor(x).ln();
        let mut a = last;
        let mut step = 1.0 / self.lambda;
        let mut b = a + step;
        while logv(b) > target {
            a = b;
            step *= 2.0;
            b += step;
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..200 {
            let r = logv(x) - target;
            if r > 0.0 {
                a = x;
            } else {
                b = x;
            }
            let d = -self.lambda
                + self.tail.b * self.tail.g_prime(x - self.tail.anchor) / self.tail.prefactor(x);
            let mut next = x - r / d;
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }

    /// Dispatches on the query kind.
    pub fn evaluate(&self, query: Query) -> Result<f64> {
        match query {
            Query::Abscissa(xi) => Ok(self.value(xi)),
            Query::Level(u) => self.inverse(u),
        }
    }

    /// Pointwise checks with tolerance [`DIAGNOSTIC_TOL`].
    pub fn diagnostics(&self) -> ProfileDiagnostics {
        let n = self.phi.len();
        let monotone_ok = self.phi.windows(2).all(|w| w[1] < w[0]);
        let decay_bound_ok = if self.critical {
            None
        } else {
            Some((0..n).all(|i| {
                self.phi[i] * (self.lambda * self.xi(i)).exp() <= 1.0 + DIAGNOSTIC_TOL
            }))
        };
        let logderiv_ok = (1..n - 1).all(|i| {
            let r = self.dphi[i] / self.phi[i];
            r > -self.lambda - DIAGNOSTIC_TOL && self.dphi[i] < 0.0
        });
        ProfileDiagnostics {
            decay_bound_ok,
            logderiv_ok,
            monotone_ok,
            residual: self.ode_residual,
        }
    }

    /// Max-norm residual of `φ'' + cφ' + f(φ)` and of `φ' - dφ/dξ` on the
    /// table, with sixth-order centered differences.
    pub fn compute_ode_residual(&self, nl: &Nonlinearity) -> f64 {
        let n = self.phi.len();
        let mut worst = 0.0f64;
        for i in 3..n.saturating_sub(3) {
            let d2 = sixth_order_derivative(&self.dphi, i, self.h);
            let d1 = sixth_order_derivative(&self.phi, i, self.h);
            let r1 = (d2 + self.c * self.dphi[i] + nl.eval(self.phi[i])).abs();
            let r2 = (d1 - self.dphi[i]).abs();
            worst = worst.max(r1).max(r2);
        }
        worst
    }

    /// Writes the two-column text form: metadata lines starting with `#`,
    /// then one `ξ φ` pair per line with 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# kpp-front-profile v1")?;
        writeln!(w, "# c = {:.16e}", self.c)?;
        writeln!(w, "# lambda_c = {:.16e}", self.lambda)?;
        writeln!(w, "# fprime0 = {:.16e}", self.fprime0)?;
        writeln!(w, "# critical = {}", self.critical)?;
        writeln!(w, "# h = {:.16e}", self.h)?;
        writeln!(w, "# tail_a = {:.16e}", self.tail.a)?;
        writeln!(w, "# tail_b = {:.16e}", self.tail.b)?;
        writeln!(w, "# tail_delta = {:.16e}", self.tail.delta)?;
        writeln!(w, "# tail_anchor = {:.16e}", self.tail.anchor)?;
        writeln!(w, "# left_rate = {:.16e}", self.left_rate)?;
        writeln!(w, "# columns: xi phi")?;
        for (i, v) in self.phi.iter().enumerate() {
            writeln!(w, "{:.16e} {:.16e}", self.xi(i), v)?;
        }
        Ok(())
    }

    /// Reads the format produced by [`FrontProfile::write_text`]. The
    /// derivative column is rebuilt with sixth-order differences.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let mut it = t.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse(format!("line {}: missing column", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            xs.push(parse(it.next())?);
            ys.push(parse(it.next())?);
        }
        let get = |k: &str| -> Result<f64> {
            meta.get(k)
                .ok_or_else(|| Error::Parse(format!("missing header field '{k}'")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("header field '{k}': {e}")))
        };
        let c = get("c")?;
        let fprime0 = get("fprime0")?;
        let h = get("h")?;
        let tail = TailModel {
            a: get("tail_a")?,
            b: get("tail_b")?,
            delta: get("tail_delta")?,
            anchor: get("tail_anchor")?,
        };
        let left_rate = get("left_rate")?;
        if xs.len() < 8 {
            return Err(Error::Parse("profile needs at least 8 rows".into()));
        }
        let xi0 = xs[0];
        for (i, &x) in xs.iter().enumerate() {
            if x != xi0 + i as f64 * h {
                return Err(Error::Parse(format!(
                    "row {i}: abscissa {x} is off the uniform grid"
                )));
            }
        }
        let dphi: Vec<f64> = (0..ys.len()).map(|i| derivative_any(&ys, i, h)).collect();
        let mut p = Self::from_table(c, fprime0, xi0, h, ys, dphi, tail, left_rate)?;
        if let Ok(l) = get("lambda_c") {
            if (l - p.lambda).abs() > 1e-12 * l.abs().max(1.0) {
                return Err(Error::Parse(format!(
                    "lambda_c = {l} inconsistent with c = {c} (expected {})",
                    p.lambda
                )));
            }
        }
        p.normalization_residual = f64::NAN;
        Ok(p)
    }
}

const D6: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];

fn sixth_order_derivative(v: &[f64], i: usize, h: f64) -> f64 {
    (D6[0] * (v[i + 1] - v[i - 1]) + D6[1] * (v[i + 2] - v[i - 2]) + D6[2] * (v[i + 3] - v[i - 3]))
        / h
}

fn derivative_any(v: &[f64], i: usize, h: f64) -> f64 {
    let n = v.len();
    if i >= 3 && i + 3 < n {
        sixth_order_derivative(v, i, h)
    } else if i + 4 < n && i < 3 {
        // fourth-order forward
        (-25.0 * v[i] + 48.0 * v[i + 1] - 36.0 * v[i + 2] + 16.0 * v[i + 3] - 3.0 * v[i + 4])
            / (12.0 * h)
    } else {
        (25.0 * v[i] - 48.0 * v[i - 1] + 36.0 * v[i - 2] - 16.0 * v[i - 3] + 3.0 * v[i - 4])
            / (12.0 * h)
    }
}

/// Grid spacing used for a front of speed `c`: fronts widen linearly in `c`
/// once `c` exceeds `c*`.
pub fn store_step(c: f64, fprime0: f64) -> f64 {
    BASE_STORE_STEP * (c.abs() / critical_speed(fprime0)).max(1.0)
}

/// Computes `φ_c` on an automatically chosen range: from `1 - 1e-9` down to
/// `1e-40`, with analytic tails beyond.
pub fn solve_profile_auto(nl: &Nonlinearity, c: f64) -> Result<FrontProfile> {
    let h = store_step(c, nl.fprime0());
    shoot(nl, c, h)
}

/// Computes `φ_c` and checks that `xi_range` resolves both tails
/// (`φ < 1e-6` at the right end, `φ > 1 - 1e-6` at the left end) and that the
/// ODE residual of the table stays below `tol`.
pub fn solve_profile(
    nl: &Nonlinearity,
    c: f64,
    xi_range: (f64, f64),
    tol: f64,
) -> Result<FrontProfile> {
    let (lo, hi) = xi_range;
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("empty range [{lo}, {hi}]")));
    }
    let full = solve_profile_auto(nl, c)?;
    let suggest = |p: &FrontProfile| -> (f64, f64) {
        let l = p.inverse(1.0 - 1e-7).unwrap_or(lo).floor();
        let r = p.inverse(1e-7).unwrap_or(hi).ceil();
        (l.min(lo), r.max(hi))
    };
    if !(full.value(hi) < 1e-6) || !(full.value(lo) > 1.0 - 1e-6) {
        let (slo, shi) = suggest(&full);
        return Err(Error::Range {
            message: format!(
                "φ({lo}) = {}, φ({hi}) = {}",
                full.value(lo),
                full.value(hi)
            ),
            suggested_lo: slo,
            suggested_hi: shi,
        });
    }
    let mut p = full;
    let mut h = p.h;
    for _ in 0..3 {
        if p.ode_residual <= tol {
            return Ok(crop(p, lo, hi));
        }
        h *= 0.5;
        p = shoot(nl, c, h)?;
    }
    Err(Error::Accuracy(format!(
        "ODE residual {:e} exceeds tolerance {tol:e} after refinement",
        p.ode_residual
    )))
}

fn crop(mut p: FrontProfile, lo: f64, hi: f64) -> FrontProfile {
    let first = ((lo - p.xi0) / p.h).ceil().max(0.0) as usize;
    let last = (((hi - p.xi0) / p.h).floor() as isize).min(p.phi.len() as isize - 1);
    if last >= first as isize + 8 {
        let last = last as usize;
        p.xi0 += first as f64 * p.h;
        p.phi = p.phi[first..=last].to_vec();
        p.dphi = p.dphi[first..=last].to_vec();
        p.ddphi = p.ddphi[first..=last].to_vec();
    }
    p
}

fn shoot(nl: &Nonlinearity, c_in: f64, h_store: f64) -> Result<FrontProfile> {
    let fprime0 = nl.fprime0();
    let cstar = critical_speed(fprime0);
    if !c_in.is_finite() || c_in < cstar * (1.0 - CRITICAL_RTOL) {
        return Err(Error::NoFront {
            speed: c_in,
            cstar,
        });
    }
    let critical = c_in <= cstar * (1.0 + CRITICAL_RTOL);
    let c = if critical { cstar } else { c_in };
    let lambda = decay_rate(c, fprime0)?;
    let delta = if critical {
        0.0
    } else {
        (c * c - 4.0 * fprime0).sqrt()
    };
    let k1 = (-nl.fprime1()).max(1e-10);
    let left_rate = 2.0 * k1 / (c + (c * c + 4.0 * k1).sqrt());

    let hs = h_store / RK_SUBSTEPS as f64;
    let rhs = |p: f64, q: f64| -> (f64, f64) { (q, -c * q - nl.eval(p)) };
    let mut p = 1.0 - SEED_GAP;
    let mut q = -SEED_GAP * left_rate;
    let mut phi = vec![p];
    let mut dphi = vec![q];
    let max_points = 5_000_000usize;
    while p > FIT_WINDOW.0 {
        for _ in 0..RK_SUBSTEPS {
            let (a1, b1) = rhs(p, q);
            let (a2, b2) = rhs(p + 0.5 * hs * a1, q + 0.5 * hs * b1);
            let (a3, b3) = rhs(p + 0.5 * hs * a2, q + 0.5 * hs * b2);
            let (a4, b4) = rhs(p + hs * a3, q + hs * b3);
            p += hs / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            q += hs / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        if !(p > 0.0) || !(q < 0.0) || !p.is_finite() {
            return Err(Error::Numeric(format!(
                "shooting trajectory for c = {c} left the monotone branch at φ = {p:e}, φ' = {q:e}"
            )));
        }
        phi.push(p);
        dphi.push(q);
        if phi.len() > max_points {
            return Err(Error::Numeric(format!(
                "shooting for c = {c} did not reach the tail window"
            )));
        }
    }

    // Tail fit in raw coordinates, ξ_i = i h.
    let idx: Vec<usize> = (0..phi.len())
        .filter(|&i| phi[i] >= FIT_WINDOW.0 && phi[i] <= FIT_WINDOW.1)
        .collect();
    if idx.len() < 8 {
        return Err(Error::Resolution(format!(
            "only {} points in the tail fit window for c = {c}",
            idx.len()
        )));
    }
    let xi_w = idx[0] as f64 * h_store;
    let proto = TailModel {
        a: 0.0,
        b: 0.0,
        delta,
        anchor: xi_w,
    };
    let ys: Vec<f64> = idx
        .iter()
        .map(|&i| phi[i] * (lambda * i as f64 * h_store).exp())
        .collect();
    let gs: Vec<f64> = idx
        .iter()
        .map(|&i| proto.g(i as f64 * h_store - xi_w))
        .collect();
    let window_len = (idx[idx.len() - 1] - idx[0]) as f64 * h_store;
    let (a_raw, b_raw) = if critical || delta * window_len < 30.0 {
        linear_fit(&gs, &ys)
    } else {
        // fast mode already extinct: constant fit on the far half
        let half = &ys[ys.len() / 2..];
        (half.iter().sum::<f64>() / half.len() as f64, 0.0)
    };
    let amplitude = if critical {
        b_raw
    } else {
        a_raw + b_raw * proto.g(f64::INFINITY)
    };
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::Numeric(format!(
            "tail amplitude {amplitude} for c = {c} is not positive"
        )));
    }
    let fit_rms = (ys
        .iter()
        .zip(&gs)
        .map(|(y, g)| (y - a_raw - b_raw * g).powi(2))
        .sum::<f64>()
        / ys.len() as f64)
        .sqrt();
    let shift = amplitude.ln() / lambda;
    let scale = (-lambda * shift).exp();
    let tail = TailModel {
        a: scale * a_raw,
        b: scale * b_raw,
        delta,
        anchor: xi_w - shift,
    };

    let ddphi = phi
        .iter()
        .zip(&dphi)
        .map(|(&v, &d)| -c * d - nl.eval(v))
        .collect();
    let mut profile = FrontProfile {
        c,
        lambda,
        fprime0,
        critical,
        xi0: -shift,
        h: h_store,
        phi,
        dphi,
        ddphi,
        tail,
        left_rate,
        normalization_residual: fit_rms / amplitude,
        ode_residual: 0.0,
    };
    profile.ode_residual = profile.compute_ode_residual(nl);
    Ok(profile)
}

/// Least squares `y ≈ a + b x`, centered for conditioning.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 1e-300 {
        return (my, 0.0);
    }
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Smallest abscissa `A` such that `φ_c'(x) < -λ_{γ+ε} φ_c(x)` for every
/// tabulated `x ≥ A` and every `c` in `c_grid ⊂ [c*, γ]`.
pub fn uniform_decay_constant(
    profiles: &[&FrontProfile],
    gamma: f64,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let Some(first) = profiles.first() else {
        return Err(Error::InvalidInput("empty speed grid".into()));
    };
    let fprime0 = first.fprime0;
    let cstar = critical_speed(fprime0);
    let rate = decay_rate(gamma + eps, fprime0)?;
    let mut a = f64::NEG_INFINITY;
    for p in profiles {
        if p.c < cstar * (1.0 - CRITICAL_RTOL) || p.c > gamma * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "speed {} outside [c*, gamma] = [{cstar}, {gamma}]",
                p.c
            )));
        }
        let n = p.phi.len();
        let ok = |i: usize| p.dphi[i] < -rate * p.phi[i];
        if !ok(n - 1) {
            return Err(Error::Resolution(format!(
                "inequality fails at the end of the table for c = {}; extend the grid",
                p.c
            )));
        }
        let mut i = n - 1;
        while i > 0 && ok(i - 1) {
            i -= 1;
        }
        a = a.max(p.xi(i));
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic() -> Nonlinearity {
        Nonlinearity::logistic()
    }

    #[test]
    fn decay_rate_examples() {
        assert_eq!(decay_rate(2.0, 1.0).unwrap(), 1.0);
        assert!((decay_rate(2.5, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((decay_rate(4.0, 1.0).unwrap() - (2.0 - 3f64.sqrt())).abs() < 1e-15);
        assert_eq!(decay_rate(f64::INFINITY, 1.0).unwrap(), 0.0);
        assert!((decay_rate(-2.5, 1.0).unwrap() + 0.5).abs() < 1e-15);
        assert!(matches!(decay_rate(1.5, 1.0), Err(Error::Domain(_))));
        assert!((psi(0.5, 1.0) - 2.5).abs() < 1e-15);
        assert!(psi(0.0, 1.0).is_infinite());
    }

    #[test]
    fn below_critical_speed_has_no_front() {
        assert!(matches!(
            solve_profile_auto(&logistic(), 1.5),
            Err(Error::NoFront { .. })
        ));
    }

    #[test]
    fn exact_logistic_front() {
        let c = 5.0 / 6f64.sqrt();
        let p = solve_profile_auto(&logistic(), c).unwrap();
        assert!((p.value(0.0) - 0.25).abs() < 1e-7);
        let mut worst = 0.0f64;
        for k in -300..=300 {
            let xi = k as f64 * 0.1;
            let exact = (1.0 + (xi / 6f64.sqrt()).exp()).powi(-2);
            worst = worst.max((p.value(xi) - exact).abs());
        }
        assert!(worst < 1e-6, "sup error {worst:e}");
        assert!(p.ode_residual() < 1e-8, "residual {:e}", p.ode_residual());
    }

    #[test]
    fn critical_tail_has_linear_prefactor() {
        let p = solve_profile_auto(&logistic(), 2.0).unwrap();
        assert!(p.is_critical());
        for xi in [40.0, 80.0, 200.0, 600.0] {
            let ratio = p.value(xi) * xi.exp() / xi;
            assert!((ratio - 1.0).abs() < 0.1, "xi = {xi}: {ratio}");
        }
        assert!((p.tail().b - 1.0).abs() < 1e-9);
        assert!(p.tail().delta == 0.0);
    }

    #[test]
    fn supercritical_tail_extrapolation() {
        let p = solve_profile_auto(&logistic(), 3.0).unwrap();
        let xi = p.xi_range().1 + 10.0;
        let bound = (-p.decay_rate() * xi).exp();
        assert!((p.value(xi) / bound - 1.0).abs() < 1e-3);
    }

    #[test]
    fn inverse_round_trip() {
        let p = solve_profile_auto(&logistic(), 2.5).unwrap();
        for u in [1e-5, 1e-3, 0.1, 0.3, 0.5, 0.9, 1.0 - 1e-5, 1e-14, 1.0 - 1e-11] {
            let xi = p.evaluate(Query::Level(u)).unwrap();
            let back = p.evaluate(Query::Abscissa(xi)).unwrap();
            assert!((back - u).abs() < 1e-8 * u.max(1e-3), "u = {u}: {back}");
        }
        assert!(p.inverse(0.0).is_err());
        assert!(p.inverse(1.0).is_err());
    }

    #[test]
    fn diagnostics_pass_for_supercritical_profiles() {
        for c in [2.05, 2.5, 3.0, 4.0, 10.0] {
            let p = solve_profile_auto(&logistic(), c).unwrap();
            let d = p.diagnostics();
            assert_eq!(d.decay_bound_ok, Some(true), "c = {c}");
            assert!(d.logderiv_ok, "c = {c}");
            assert!(d.monotone_ok, "c = {c}");
        }
    }

    #[test]
    fn critical_diagnostics_skip_decay_bound() {
        let p = solve_profile_auto(&logistic(), 2.0).unwrap();
        let d = p.diagnostics();
        assert_eq!(d.decay_bound_ok, None);
        assert!(d.logderiv_ok);
    }

    #[test]
    fn profile_values_are_smooth_in_speed_beyond_the_table() {
        // The tail fit switches form near c = 2.18; values past the table
        // end must stay positive and vary smoothly with c.
        let nl = logistic();
        let cs: Vec<f64> = (0..7).map(|k| 2.1764 + k as f64 * 1e-4).collect();
        let ps: Vec<FrontProfile> = cs.iter().map(|&c| solve_profile_auto(&nl, c).unwrap()).collect();
        for xi in [40.0, 150.0, 400.0] {
            let v: Vec<f64> = ps.iter().map(|p| p.value(xi)).collect();
            for (p, &x) in ps.iter().zip(&v) {
                assert!(x > 0.0 && x <= (-p.decay_rate() * xi).exp() * (1.0 + 1e-6));
            }
            // second differences of ln φ minus the part explained by λ(c)
            let r: Vec<f64> = v
                .iter()
                .zip(&ps)
                .map(|(x, p)| x.ln() + p.decay_rate() * xi)
                .collect();
            for w in r.windows(3) {
                assert!((w[0] - 2.0 * w[1] + w[2]).abs() <= 1e-6, "{w:?}");
            }
        }
    }

    #[test]
    fn inflated_tail_breaks_decay_bound() {
        let p = solve_profile_auto(&logistic(), 3.0).unwrap();
        let phi: Vec<f64> = p
            .values()
            .iter()
            .map(|&v| if v < 0.1 { 1.5 * v } else { v })
            .collect();
        let dphi: Vec<f64> = p
            .values()
            .iter()
            .zip(p.slopes())
            .map(|(&v, &d)| if v < 0.1 { 1.5 * d } else { d })
            .collect();
        let bad = FrontProfile::from_table(
            p.speed(),
            p.fprime0(),
            p.xi_range().0,
            p.grid_step(),
            phi,
            dphi,
            p.tail(),
            p.left_rate(),
        )
        .unwrap();
        assert_eq!(bad.diagnostics().decay_bound_ok, Some(false));
    }

    #[test]
    fn narrow_range_is_rejected_with_suggestion() {
        let err = solve_profile(&logistic(), 2.5, (-5.0, 5.0), 1e-6).unwrap_err();
        match err {
            Error::Range {
                suggested_lo,
                suggested_hi,
                ..
            } => {
                assert!(suggested_lo < -5.0 && suggested_hi > 5.0);
                let p = solve_profile(&logistic(), 2.5, (suggested_lo, suggested_hi), 1e-6)
                    .unwrap();
                assert!(p.values()[0] > 1.0 - 1e-6);
                assert!(*p.values().last().unwrap() < 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_decay_constant_grows_as_eps_shrinks() {
        let nl = logistic();
        let p = solve_profile_auto(&nl, 4.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for eps in [1.0, 0.5, 0.25] {
            let a = uniform_decay_constant(&[&p], 4.0, eps).unwrap();
            assert!(a >= prev, "eps = {eps}: {a} < {prev}");
            prev = a;
        }
        assert!(uniform_decay_constant(&[&p], 4.0, 0.0).is_err());
    }

    #[test]
    fn steepness_ordering_of_profiles() {
        let nl = logistic();
        for (c, g) in [(2.0, 3.0), (2.5, 4.0)] {
            let pc = solve_profile_auto(&nl, c).unwrap();
            let pg = solve_profile_auto(&nl, g).unwrap();
            for k in -20..=20 {
                let x_anchor = k as f64;
                let v = pc.value(x_anchor);
                let xi = pg.inverse(v).unwrap();
                for j in -200..=200 {
                    let x = j as f64 * 0.1;
                    let lhs = pc.value(x_anchor + x);
                    let rhs = pg.value(xi + x);
                    if x <= 0.0 {
                        assert!(lhs >= rhs - 1e-9, "({c},{g}) X={x_anchor} x={x}");
                    } else {
                        assert!(lhs <= rhs + 1e-9, "({c},{g}) X={x_anchor} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let p = solve_profile_auto(&logistic(), 3.0).unwrap();
        let mut buf = Vec::new();
        p.write_text(&mut buf).unwrap();
        let q = FrontProfile::read_text(buf.as_slice()).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(p.xi_range(), q.xi_range());
        let mut again = Vec::new();
        q.write_text(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!((q.value(0.37) - p.value(0.37)).abs() < 1e-8);
    }
}
