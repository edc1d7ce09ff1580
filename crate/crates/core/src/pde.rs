//! Time integration of `u_t = a(t,x) u_xx + b(t,x) u_x + f(t,x,u)` on a
//! uniform window that may follow the front by whole cells.
//!
//! Each step is a Strang splitting: half a step of reaction (Heun), a full
//! step of diffusion/advection with a θ-scheme, and another half step of
//! reaction. θ is 1/2 (Crank–Nicolson) whenever that keeps the explicit part
//! monotone and grows towards backward Euler otherwise, so the scheme is
//! order preserving and keeps values in `[0, 1]`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;

/// Bound on `dt · Lip(f)` for the explicit reaction stage.
pub const REACTION_STEP_BOUND: f64 = 0.5;
/// Allowed overshoot of field values outside `[0, 1]`.
pub const RANGE_SLACK: f64 = 1e-12;

/// Uniform grid `x_i = (start + i)·dx`. Storing the integer offset keeps grids
/// of different runs exactly aligned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    start: i64,
    dx: f64,
    n: usize,
}

impl Grid1D {
    pub fn from_index(start: i64, dx: f64, n: usize) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {dx}")));
        }
        if n < 3 {
            return Err(Error::InvalidInput(format!("grid needs at least 3 points, got {n}")));
        }
        Ok(Self { start, dx, n })
    }

    /// Grid with `n` points starting at `x0`, which must be a multiple of `dx`
    /// up to 1e-9 relative.
    pub fn new(x0: f64, dx: f64, n: usize) -> Result<Self> {
        let k = (x0 / dx).round();
        if (k - x0 / dx).abs() > 1e-9 * (1.0 + k.abs()) {
            return Err(Error::InvalidInput(format!(
                "left endpoint {x0} is not a multiple of dx = {dx}"
            )));
        }
        Self::from_index(k as i64, dx, n)
    }

    /// Smallest aligned grid containing `[lo, hi]`.
    pub fn covering(lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!("empty interval [{lo}, {hi}]")));
        }
        let start = (lo / dx).floor() as i64;
        let end = (hi / dx).ceil() as i64;
        Self::from_index(start, dx, (end - start + 1) as usize)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (self.start + i as i64) as f64 * self.dx
    }

    pub fn x0(&self) -> f64 {
        self.x(0)
    }

    pub fn x_end(&self) -> f64 {
        self.x(self.n - 1)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn shifted(&self, cells: i64) -> Self {
        Self {
            start: self.start + cells,
            ..*self
        }
    }

    pub fn coordinates(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.x(i))
    }

    /// Index ranges `(i_self, i_other, len)` of the common points of two
    /// grids with identical spacing.
    pub fn overlap(&self, other: &Grid1D) -> Option<(usize, usize, usize)> {
        if self.dx.to_bits() != other.dx.to_bits() {
            return None;
        }
        let lo = self.start.max(other.start);
        let hi = (self.start + self.n as i64).min(other.start + other.n as i64);
        if hi <= lo {
            return None;
        }
        Some((
            (lo - self.start) as usize,
            (lo - other.start) as usize,
            (hi - lo) as usize,
        ))
    }
}

/// One time slice `u(t, ·)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < -RANGE_SLACK || **v > 1.0 + RANGE_SLACK)
        {
            return Err(Error::InvalidInput(format!(
                "value {v} at x = {} is outside [0, 1]",
                grid.x(i)
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub fn from_fn(grid: Grid1D, time: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.coordinates().map(f).collect();
        Self::new(grid, values, time)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.grid.x(i)
    }

    /// Linear interpolation, holding end values outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let pos = (x - self.grid.x0()) / self.grid.dx();
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let i = pos as usize;
        let s = pos - i as f64;
        self.values[i] * (1.0 - s) + self.values[i + 1] * s
    }

    /// Whether values never increase from left to right, up to `tol`.
    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    /// Writes the checkpoint format: `#`-prefixed header with time, x0, dx,
    /// n, then one value per line at full precision.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# kpp-field v1")?;
        writeln!(w, "# time = {:.16e}", self.time)?;
        writeln!(w, "# x0 = {:.16e}", self.grid.x0())?;
        writeln!(w, "# dx = {:.16e}", self.grid.dx())?;
        writeln!(w, "# n = {}", self.grid.len())?;
        for v in &self.values {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut values = Vec::new();
        for line in r.lines() {
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
            values.push(
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("field value '{t}': {e}")))?,
            );
        }
        let get = |k: &str| -> Result<f64> {
            meta.get(k)
                .ok_or_else(|| Error::Parse(format!("missing header field '{k}'")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("header field '{k}': {e}")))
        };
        let n = get("n")? as usize;
        if n != values.len() {
            return Err(Error::Parse(format!(
                "header announces {n} values, found {}",
                values.len()
            )));
        }
        let grid = Grid1D::new(get("x0")?, get("dx")?, n)?;
        Self::new(grid, values, get("time")?)
    }
}

pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum CoefficientKind {
    Homogeneous(Nonlinearity),
    Heterogeneous {
        a: SpaceTimeFn,
        b: SpaceTimeFn,
        reaction: ReactionFn,
    },
}

/// Coefficients of the equation. The homogeneous case `a = 1, b = 0,
/// f = f(u)` has a dedicated fast path.
#[derive(Clone)]
pub struct Coefficients {
    kind: CoefficientKind,
    a_bounds: (f64, f64),
    b_bound: f64,
    lipschitz: f64,
}

impl std::fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coefficients")
            .field("homogeneous", &self.is_homogeneous())
            .field("a_bounds", &self.a_bounds)
            .field("b_bound", &self.b_bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Coefficients {
    pub fn homogeneous(nl: Nonlinearity) -> Self {
        let lipschitz = nl.lipschitz();
        Self {
            kind: CoefficientKind::Homogeneous(nl),
            a_bounds: (1.0, 1.0),
            b_bound: 0.0,
            lipschitz,
        }
    }

    /// General coefficients. `a_bounds` and `b_bound` are the caller's bounds
    /// `inf a`, `sup a`, `sup |b|`; `lipschitz` bounds `|∂f/∂u|`.
    pub fn heterogeneous(
        a: SpaceTimeFn,
        b: SpaceTimeFn,
        reaction: ReactionFn,
        a_bounds: (f64, f64),
        b_bound: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        if !(a_bounds.0 > 0.0) || !(a_bounds.1 >= a_bounds.0) || !a_bounds.1.is_finite() {
            return Err(Error::InvalidInput(format!(
                "diffusion bounds {a_bounds:?} must satisfy 0 < inf a <= sup a < inf"
            )));
        }
        if !(b_bound >= 0.0) || !b_bound.is_finite() || !(lipschitz >= 0.0) {
            return Err(Error::InvalidInput("advection and reaction bounds must be finite".into()));
        }
        Ok(Self {
            kind: CoefficientKind::Heterogeneous { a, b, reaction },
            a_bounds,
            b_bound,
            lipschitz,
        })
    }

    /// Heterogeneous transport with a spatially homogeneous reaction.
    pub fn with_reaction(
        a: SpaceTimeFn,
        b: SpaceTimeFn,
        nl: Nonlinearity,
        a_bounds: (f64, f64),
        b_bound: f64,
    ) -> Result<Self> {
        let lip = nl.lipschitz();
        Self::heterogeneous(
            a,
            b,
            Arc::new(move |_, _, u| nl.eval(u)),
            a_bounds,
            b_bound,
            lip,
        )
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.kind, CoefficientKind::Homogeneous(_))
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

pub type BoundaryFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Values imposed at both ends of the window and in cells entered by a shift.
#[derive(Clone)]
pub enum Boundary {
    Dirichlet { left: f64, right: f64 },
    /// `g(t, x)` evaluated at the boundary coordinates.
    Function(BoundaryFn),
    /// Separate functions for the left and right ends.
    Split { left: BoundaryFn, right: BoundaryFn },
}

impl std::fmt::Debug for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Dirichlet { left, right } => {
                write!(f, "Dirichlet({left}, {right})")
            }
            Boundary::Function(_) => write!(f, "Function"),
            Boundary::Split { .. } => write!(f, "Split"),
        }
    }
}

impl Boundary {
    fn value(&self, t: f64, x: f64, left_side: bool) -> f64 {
        match self {
            Boundary::Dirichlet { left, right } => {
                if left_side {
                    *left
                } else {
                    *right
                }
            }
            Boundary::Function(g) => g(t, x).clamp(0.0, 1.0),
            Boundary::Split { left, right } => {
                if left_side {
                    left(t, x).clamp(0.0, 1.0)
                } else {
                    right(t, x).clamp(0.0, 1.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Fixed,
    /// Shift the grid by whole cells to keep the leftmost `u = 1/2` crossing
    /// near the center.
    FollowHalfLevel,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub dt: f64,
    pub boundary: Boundary,
    pub window: Window,
    /// Minimal distance between the half-level crossing and either end of
    /// the window; 0 disables the check.
    pub margin: f64,
}

impl SolverConfig {
    pub fn new(dt: f64, boundary: Boundary, window: Window, margin: f64) -> Self {
        Self {
            dt,
            boundary,
            window,
            margin,
        }
    }

    /// Default step for spacing `dx`: `0.25 dx²`, capped at 1e-2.
    pub fn default_dt(dx: f64) -> f64 {
        (0.25 * dx * dx).min(1e-2)
    }

    pub fn validate(&self, co: &Coefficients) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt * co.lipschitz > REACTION_STEP_BOUND {
            return Err(Error::Config(format!(
                "dt = {} violates the reaction bound dt·Lip(f) <= {REACTION_STEP_BOUND} (Lip = {})",
                self.dt, co.lipschitz
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Index `i` of the leftmost downward crossing `u_i ≥ 1/2 > u_{i+1}`.
pub fn half_crossing_index(values: &[f64]) -> Option<usize> {
    values.windows(2).position(|w| w[0] >= 0.5 && w[1] < 0.5)
}

/// Factorized tridiagonal system for the constant-coefficient case.
#[derive(Debug, Clone)]
struct Factor {
    n: usize,
    dt_bits: u64,
    lower: f64,
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
}

/// Reusable stepping state: scratch buffers and cached factorizations.
pub struct Stepper {
    co: Coefficients,
    cfg: SolverConfig,
    factor: Option<Factor>,
    rhs: Vec<f64>,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    l: Vec<f64>,
    d: Vec<f64>,
    r: Vec<f64>,
}

impl Stepper {
    pub fn new(co: &Coefficients, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate(co)?;
        Ok(Self {
            co: co.clone(),
            cfg: cfg.clone(),
            factor: None,
            rhs: Vec::new(),
            sub: Vec::new(),
            diag: Vec::new(),
            sup: Vec::new(),
            l: Vec::new(),
            d: Vec::new(),
            r: Vec::new(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn react(&self, u: &mut Field, h: f64) {
        let t = u.time;
        match &self.co.kind {
            CoefficientKind::Homogeneous(nl) => {
                if nl.is_logistic() {
                    for v in u.values.iter_mut() {
                        let s = *v;
                        let k1 = s * (1.0 - s);
                        let s1 = s + h * k1;
                        let k2 = s1 * (1.0 - s1);
                        *v = (s + 0.5 * h * (k1 + k2)).clamp(0.0, 1.0);
                    }
                } else {
                    for v in u.values.iter_mut() {
                        let s = *v;
                        let k1 = nl.eval(s);
                        let s1 = s + h * k1;
                        let k2 = nl.eval(s1.clamp(0.0, 1.0));
                        *v = (s + 0.5 * h * (k1 + k2)).clamp(0.0, 1.0);
                    }
                }
            }
            CoefficientKind::Heterogeneous { reaction, .. } => {
                let grid = u.grid;
                for (i, v) in u.values.iter_mut().enumerate() {
                    let x = grid.x(i);
                    let s = *v;
                    let k1 = reaction(t, x, s);
                    let s1 = (s + h * k1).clamp(0.0, 1.0);
                    let k2 = reaction(t + h, x, s1);
                    *v = (s + 0.5 * h * (k1 + k2)).clamp(0.0, 1.0);
                }
            }
        }
    }

    fn diffuse(&mut self, u: &mut Field, dt: f64, g_left: f64, g_right: f64) -> Result<()> {
        let n = u.values.len();
        let dx = u.grid.dx();
        let inv_dx2 = 1.0 / (dx * dx);
        self.rhs.resize(n, 0.0);
        match &self.co.kind {
            CoefficientKind::Homogeneous(_) => {
                let r = dt * inv_dx2;
                let theta = (1.0 - 1.0 / (2.0 * r)).max(0.5);
                let needs = match &self.factor {
                    Some(f) => f.n != n || f.dt_bits != dt.to_bits(),
                    None => true,
                };
                if needs {
                    self.factor = Some(factorize_constant(n, theta * r, dt));
                }
                let f = self.factor.as_ref().unwrap();
                let v = &u.values;
                self.rhs[0] = g_left - v[0];
                self.rhs[n - 1] = g_right - v[n - 1];
                for i in 1..n - 1 {
                    self.rhs[i] = r * (v[i - 1] - 2.0 * v[i] + v[i + 1]);
                }
                self.rhs[1] += f.lower * self.rhs[0];
                self.rhs[n - 2] += f.lower * self.rhs[n - 1];
                // forward sweep on interior unknowns 1..n-2
                let m = n - 2;
                let d = &mut self.rhs[1..n - 1];
                d[0] *= f.inv_denom[0];
                for i in 1..m {
                    d[i] = (d[i] + f.lower * d[i - 1]) * f.inv_denom[i];
                }
                for i in (0..m - 1).rev() {
                    d[i] -= f.cprime[i] * d[i + 1];
                }
            }
            CoefficientKind::Heterogeneous { a, b, .. } => {
                let tm = u.time + 0.5 * dt;
                self.l.resize(n, 0.0);
                self.d.resize(n, 0.0);
                self.r.resize(n, 0.0);
                let mut dmax = 0.0f64;
                for i in 1..n - 1 {
                    let x = u.grid.x(i);
                    let ai = a(tm, x);
                    let bi = b(tm, x);
                    let li = ai * inv_dx2 - bi / (2.0 * dx);
                    let ri = ai * inv_dx2 + bi / (2.0 * dx);
                    if !(ai > 0.0) || li < 0.0 || ri < 0.0 {
                        return Err(Error::Numeric(format!(
                            "degenerate transport at x = {x}: a = {ai}, b = {bi} (cell Péclet > 2 or a <= 0)"
                        )));
                    }
                    self.l[i] = li;
                    self.r[i] = ri;
                    self.d[i] = li + ri;
                    dmax = dmax.max(li + ri);
                }
                let theta = (1.0 - 1.0 / (dt * dmax)).max(0.5);
                let v = &u.values;
                self.sub.resize(n, 0.0);
                self.diag.resize(n, 0.0);
                self.sup.resize(n, 0.0);
                self.rhs[0] = g_left - v[0];
                self.rhs[n - 1] = g_right - v[n - 1];
                for i in 1..n - 1 {
                    self.rhs[i] =
                        dt * (self.l[i] * v[i - 1] - self.d[i] * v[i] + self.r[i] * v[i + 1]);
                    self.sub[i] = -theta * dt * self.l[i];
                    self.diag[i] = 1.0 + theta * dt * self.d[i];
                    self.sup[i] = -theta * dt * self.r[i];
                }
                self.rhs[1] -= self.sub[1] * self.rhs[0];
                self.rhs[n - 2] -= self.sup[n - 2] * self.rhs[n - 1];
                thomas(
                    &self.sub[1..n - 1],
                    &self.diag[1..n - 1],
                    &self.sup[1..n - 1],
                    &mut self.rhs[1..n - 1],
                )?;
            }
        }
        for (v, dlt) in u.values.iter_mut().zip(&self.rhs) {
            *v = (*v + dlt).clamp(0.0, 1.0);
        }
        Ok(())
    }

    /// Advances `u` in place by `dt`.
    pub fn step_by(&mut self, u: &mut Field, dt: f64) -> Result<()> {
        let t_new = u.time + dt;
        let n = u.values.len();
        let (xl, xr) = (u.grid.x0(), u.grid.x_end());
        let gl = self.cfg.boundary.value(t_new, xl, true);
        let gr = self.cfg.boundary.value(t_new, xr, false);
        self.react(u, 0.5 * dt);
        self.diffuse(u, dt, gl, gr)?;
        u.time += 0.5 * dt;
        self.react(u, 0.5 * dt);
        u.time = t_new;
        u.values[0] = gl;
        u.values[n - 1] = gr;
        if u.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at t = {t_new}")));
        }
        Ok(())
    }

    pub fn step(&mut self, u: &mut Field) -> Result<()> {
        let dt = self.cfg.dt;
        self.step_by(u, dt)
    }

    /// Shifts the window of `u` by `cells` and fills entered cells from the
    /// boundary policy.
    pub fn shift_window(&self, u: &mut Field, cells: i64) {
        if cells == 0 {
            return;
        }
        let n = u.values.len();
        let k = cells.unsigned_abs() as usize;
        let new_grid = u.grid.shifted(cells);
        if cells > 0 {
            if k < n {
                u.values.copy_within(k.., 0);
            }
            for i in n.saturating_sub(k)..n {
                u.values[i] = self.cfg.boundary.value(u.time, new_grid.x(i), false);
            }
        } else {
            if k < n {
                u.values.copy_within(..n - k, k);
            }
            for i in 0..k.min(n) {
                u.values[i] = self.cfg.boundary.value(u.time, new_grid.x(i), true);
            }
        }
        u.grid = new_grid;
    }

    /// Window update after a step: returns the number of cells shifted.
    pub fn track(&self, u: &mut Field) -> Result<i64> {
        let n = u.values.len();
        match self.cfg.window {
            Window::Fixed => {
                if self.cfg.margin > 0.0 {
                    if let Some(i) = half_crossing_index(&u.values) {
                        let x = u.grid.x(i);
                        if x - u.grid.x0() < self.cfg.margin || u.grid.x_end() - x < self.cfg.margin
                        {
                            return Err(Error::TrackingLost {
                                time: u.time,
                                reason: format!(
                                    "half-level crossing at x = {x} is within the margin {} of the boundary",
                                    self.cfg.margin
                                ),
                            });
                        }
                    }
                }
                Ok(0)
            }
            Window::FollowHalfLevel => {
                let Some(i) = half_crossing_index(&u.values) else {
                    return Err(Error::TrackingLost {
                        time: u.time,
                        reason: "no half-level crossing on the window".into(),
                    });
                };
                let center = n / 2;
                let off = i as i64 - center as i64;
                let threshold = ((n / 50).max(1)) as i64;
                if off.abs() >= threshold {
                    self.shift_window(u, off);
                    Ok(off)
                } else {
                    Ok(0)
                }
            }
        }
    }
}

fn factorize_constant(n: usize, theta_r: f64, dt: f64) -> Factor {
    // interior system: -θr δ_{i-1} + (1 + 2θr) δ_i - θr δ_{i+1}
    let m = n - 2;
    let a = -theta_r;
    let b = 1.0 + 2.0 * theta_r;
    let mut cprime = vec![0.0; m];
    let mut inv_denom = vec![0.0; m];
    let mut prev = 0.0;
    for i in 0..m {
        let denom = b - a * prev;
        inv_denom[i] = 1.0 / denom;
        prev = a * inv_denom[i];
        cprime[i] = prev;
    }
    Factor {
        n,
        dt_bits: dt.to_bits(),
        lower: theta_r,
        cprime,
        inv_denom,
    }
}

/// Solves a tridiagonal system in place (`sub[0]` and `sup[m-1]` unused).
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], d: &mut [f64]) -> Result<()> {
    let m = d.len();
    let mut c = vec![0.0; m];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(Error::Numeric("singular tridiagonal system".into()));
    }
    c[0] = sup[0] / denom;
    d[0] /= denom;
    for i in 1..m {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::Numeric("singular tridiagonal system".into()));
        }
        c[i] = sup[i] / denom;
        d[i] = (d[i] - sub[i] * d[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(())
}

/// One step of the scheme, returning a new field.
pub fn step(u: &Field, co: &Coefficients, cfg: &SolverConfig) -> Result<Field> {
    let mut s = Stepper::new(co, cfg)?;
    let mut v = u.clone();
    s.step(&mut v)?;
    Ok(v)
}

/// Receives fields at requested times during [`evolve`].
pub trait Observer {
    /// Requested observation times.
    fn times(&self) -> Vec<f64>;
    fn observe(&mut self, field: &Field) -> Result<()>;
}

/// Stores full fields at the requested times.
#[derive(Debug, Clone, Default)]
pub struct Snapshots {
    pub requested: Vec<f64>,
    pub fields: Vec<Field>,
}

impl Snapshots {
    pub fn at(times: &[f64]) -> Self {
        Self {
            requested: times.to_vec(),
            fields: Vec::new(),
        }
    }
}

impl Observer for Snapshots {
    fn times(&self) -> Vec<f64> {
        self.requested.clone()
    }

    fn observe(&mut self, field: &Field) -> Result<()> {
        self.fields.push(field.clone());
        Ok(())
    }
}

/// Streams `t, X_m(t)` rows for a set of levels to a writer.
pub struct LevelStream<W: Write> {
    pub sink: W,
    pub levels: Vec<f64>,
    pub requested: Vec<f64>,
}

impl<W: Write> Observer for LevelStream<W> {
    fn times(&self) -> Vec<f64> {
        self.requested.clone()
    }

    fn observe(&mut self, field: &Field) -> Result<()> {
        write!(self.sink, "{:.10e}", field.time)?;
        for &m in &self.levels {
            match crate::analysis::level_position(field, m) {
                Ok(x) => write!(self.sink, ",{x:.10e}")?,
                Err(_) => write!(self.sink, ",nan")?,
            }
        }
        writeln!(self.sink)?;
        Ok(())
    }
}

fn stop_times(t0: f64, t_end: f64, requested: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut stops: Vec<f64> = requested
        .filter(|&t| t > t0 && t < t_end)
        .collect();
    stops.push(t_end);
    stops.sort_by(|a, b| a.total_cmp(b));
    stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    stops
}

fn matches_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + b.abs())
}

/// Advances `u` to `target` with steps of `dt`, shortening the last one so
/// the target is hit exactly; calls `after_step` after each step.
fn advance_to(
    stepper: &mut Stepper,
    u: &mut Field,
    target: f64,
    mut after_step: impl FnMut(&mut Stepper, &mut Field, i64) -> Result<()>,
) -> Result<()> {
    let dt = stepper.cfg.dt;
    while u.time < target && !matches_time(u.time, target) {
        let remaining = target - u.time;
        let h = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
        stepper.step_by(u, h)?;
        if matches_time(u.time, target) {
            u.time = target;
        }
        let shifted = stepper.track(u)?;
        after_step(stepper, u, shifted)?;
    }
    Ok(())
}

/// Evolves `u0` to `t_end`, landing exactly on every observer time.
pub fn evolve(
    u0: &Field,
    co: &Coefficients,
    cfg: &SolverConfig,
    t_end: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Field> {
    if !(t_end > u0.time) {
        return Err(Error::InvalidInput(format!(
            "t_end = {t_end} must exceed the initial time {}",
            u0.time
        )));
    }
    let mut stepper = Stepper::new(co, cfg)?;
    let mut u = u0.clone();
    let requested: Vec<Vec<f64>> = observers.iter().map(|o| o.times()).collect();
    for (o, ts) in observers.iter_mut().zip(&requested) {
        if ts.iter().any(|&t| matches_time(t, u.time)) {
            o.observe(&u)?;
        }
    }
    let stops = stop_times(u.time, t_end, requested.iter().flatten().copied());
    for stop in stops {
        advance_to(&mut stepper, &mut u, stop, |_, _, _| Ok(()))?;
        for (o, ts) in observers.iter_mut().zip(&requested) {
            if ts.iter().any(|&t| matches_time(t, stop)) {
                o.observe(&u)?;
            }
        }
    }
    Ok(u)
}

/// Evolves two fields on the same grid in lockstep. The window follows the
/// first field; both are shifted together. `on_step` sees both after every
/// step, `on_stop` at each requested stop time.
pub fn evolve_pair(
    u0: &Field,
    v0: &Field,
    co: &Coefficients,
    cfg: &SolverConfig,
    t_end: f64,
    stops: &[f64],
    mut on_step: impl FnMut(&Field, &Field) -> Result<()>,
    mut on_stop: impl FnMut(&Field, &Field) -> Result<()>,
) -> Result<(Field, Field)> {
    if u0.grid != v0.grid || !matches_time(u0.time, v0.time) {
        return Err(Error::InvalidInput("paired fields need the same grid and time".into()));
    }
    if !(t_end > u0.time) {
        return Err(Error::InvalidInput(format!(
            "t_end = {t_end} must exceed the initial time {}",
            u0.time
        )));
    }
    let mut su = Stepper::new(co, cfg)?;
    let mut sv = Stepper::new(co, cfg)?;
    let mut u = u0.clone();
    let mut v = v0.clone();
    if stops.iter().any(|&t| matches_time(t, u.time)) {
        on_stop(&u, &v)?;
    }
    let dt = cfg.dt;
    for stop in stop_times(u.time, t_end, stops.iter().copied()) {
        while u.time < stop && !matches_time(u.time, stop) {
            let remaining = stop - u.time;
            let h = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
            su.step_by(&mut u, h)?;
            sv.step_by(&mut v, h)?;
            if matches_time(u.time, stop) {
                u.time = stop;
                v.time = stop;
            }
            let shifted = su.track(&mut u)?;
            sv.shift_window(&mut v, shifted);
            on_step(&u, &v)?;
        }
        if stops.iter().any(|&t| matches_time(t, stop)) {
            on_stop(&u, &v)?;
        }
    }
    Ok((u, v))
}

/// Outcome of evolving an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonReport {
    pub ordered_initially: bool,
    /// `max (u - v)_+` over all steps and grid points.
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Scheme tolerance for discrete comparison: `1e-6 + 10 dx²`.
pub fn comparison_tolerance(dx: f64) -> f64 {
    1e-6 + 10.0 * dx * dx
}

/// Evolves `u0` and `v0` and records how far `u` rises above `v`.
pub fn comparison_check(
    u0: &Field,
    v0: &Field,
    co: &Coefficients,
    cfg: &SolverConfig,
    t_end: f64,
) -> Result<ComparisonReport> {
    if u0.grid != v0.grid {
        return Err(Error::InvalidInput("comparison needs identical grids".into()));
    }
    let excess = |u: &Field, v: &Field| {
        u.values
            .iter()
            .zip(&v.values)
            .fold(0.0f64, |m, (a, b)| m.max(a - b))
    };
    let initial = excess(u0, v0);
    let mut worst = initial.max(0.0);
    evolve_pair(
        u0,
        v0,
        co,
        cfg,
        t_end,
        &[],
        |u, v| {
            worst = worst.max(excess(u, v));
            Ok(())
        },
        |_, _| Ok(()),
    )?;
    let tolerance = comparison_tolerance(u0.grid.dx());
    let ordered_initially = initial <= 0.0;
    Ok(ComparisonReport {
        ordered_initially,
        max_violation: worst,
        tolerance,
        pass: !ordered_initially || worst <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::solve_profile_auto;
    use proptest::prelude::*;

    fn logistic_setup(dt: f64) -> (Coefficients, SolverConfig) {
        let co = Coefficients::homogeneous(Nonlinearity::logistic());
        let cfg = SolverConfig::new(
            dt,
            Boundary::Dirichlet { left: 1.0, right: 0.0 },
            Window::Fixed,
            0.0,
        );
        (co, cfg)
    }

    #[test]
    fn grid_coordinates_are_integer_multiples() {
        let g = Grid1D::new(-10.0, 0.05, 401).unwrap();
        assert_eq!(g.start(), -200);
        assert_eq!(g.x(200), 0.0);
        assert!(Grid1D::new(0.01, 0.05, 10).is_err());
        assert!(Grid1D::from_index(0, 0.1, 2).is_err());
        let h = g.shifted(7);
        assert_eq!(g.overlap(&h), Some((7, 0, 394)));
    }

    #[test]
    fn equilibria_are_exact() {
        let (co, _) = logistic_setup(1e-3);
        let g = Grid1D::new(-5.0, 0.05, 201).unwrap();
        for c in [0.0, 1.0] {
            let cfg = SolverConfig::new(
                1e-3,
                Boundary::Dirichlet { left: c, right: c },
                Window::Fixed,
                0.0,
            );
            let mut u = Field::from_fn(g, 0.0, |_| c).unwrap();
            let mut s = Stepper::new(&co, &cfg).unwrap();
            for _ in 0..100 {
                s.step(&mut u).unwrap();
            }
            assert!(u.values.iter().all(|&v| v == c));
        }
    }

    #[test]
    fn reaction_bound_is_enforced() {
        let (co, mut cfg) = logistic_setup(1e-3);
        cfg.dt = 0.6;
        assert!(matches!(cfg.validate(&co), Err(Error::Config(_))));
    }

    #[test]
    fn traveling_front_is_transported() {
        let p = solve_profile_auto(&Nonlinearity::logistic(), 2.5).unwrap();
        let (co, cfg) = logistic_setup(1e-3);
        let g = Grid1D::new(-60.0, 0.05, 2401).unwrap();
        let u0 = Field::from_fn(g, 0.0, |x| p.value(x)).unwrap();
        let mut snaps = Snapshots::at(&[1.0]);
        let u = evolve(&u0, &co, &cfg, 10.0, &mut [&mut snaps]).unwrap();
        let after_one = &snaps.fields[0];
        let err = (0..g.len())
            .filter(|&i| g.x(i).abs() < 30.0)
            .map(|i| (after_one.values[i] - p.value(g.x(i) - 2.5)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "transport error {err:e}");
        let x_half = crate::analysis::level_position(&u, 0.5).unwrap();
        let expected = p.inverse(0.5).unwrap() + 25.0;
        assert!((x_half - expected).abs() < 1e-2, "{x_half} vs {expected}");
    }

    #[test]
    fn observers_land_on_requested_times() {
        let (co, cfg) = logistic_setup(0.3e-2);
        let g = Grid1D::new(-20.0, 0.1, 401).unwrap();
        let u0 = Field::from_fn(g, 0.0, |x| if x < 0.0 { 1.0 } else { 0.0 }).unwrap();
        let mut snaps = Snapshots::at(&[1.0, 2.0, 3.0]);
        evolve(&u0, &co, &cfg, 3.0, &mut [&mut snaps]).unwrap();
        let times: Vec<f64> = snaps.fields.iter().map(|f| f.time).collect();
        assert_eq!(times, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn heaviside_data_spreads_slightly_below_critical_speed() {
        let (co, mut cfg) = logistic_setup(5e-3);
        cfg.window = Window::FollowHalfLevel;
        let g = Grid1D::new(-100.0, 0.1, 2001).unwrap();
        let u0 = Field::from_fn(g, 0.0, |x| if x < 0.0 { 1.0 } else { 0.0 }).unwrap();
        let times: Vec<f64> = (1..=16).map(|k| 10.0 * k as f64).collect();
        let mut stream = LevelStream {
            sink: Vec::new(),
            levels: vec![0.5],
            requested: times.clone(),
        };
        evolve(&u0, &co, &cfg, 160.0, &mut [&mut stream]).unwrap();
        let text = String::from_utf8(stream.sink).unwrap();
        let xs: Vec<f64> = text
            .lines()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let late_speed = (xs[15] - xs[11]) / 40.0;
        assert!(late_speed < 2.0 && late_speed > 1.9, "speed {late_speed}");
        // Bramson drift: speed deficit ≈ 3/(c* t)
        let predicted = 2.0 - 1.5 * (160.0f64 / 120.0).ln() / 40.0;
        assert!((late_speed - predicted).abs() < 0.03, "{late_speed} vs {predicted}");
    }

    #[test]
    fn comparison_of_ordered_data() {
        let p = solve_profile_auto(&Nonlinearity::logistic(), 3.0).unwrap();
        let (co, cfg) = logistic_setup(1e-3);
        let g = Grid1D::new(-40.0, 0.1, 801).unwrap();
        let v0 = Field::from_fn(g, 0.0, |x| p.value(x)).unwrap();
        let u0 = Field::from_fn(g, 0.0, |x| 0.9 * p.value(x)).unwrap();
        let rep = comparison_check(&u0, &v0, &co, &cfg, 5.0).unwrap();
        assert!(rep.ordered_initially && rep.pass, "{rep:?}");
        let same = comparison_check(&v0, &v0, &co, &cfg, 2.0).unwrap();
        assert_eq!(same.max_violation, 0.0);
    }

    #[test]
    fn scaled_front_stays_below_solution() {
        let p = solve_profile_auto(&Nonlinearity::logistic(), 3.0).unwrap();
        let (co, cfg) = logistic_setup(1e-3);
        let g = Grid1D::new(-40.0, 0.1, 801).unwrap();
        let m = 0.6;
        let u0 = Field::from_fn(g, 0.0, |x| m * p.value(x)).unwrap();
        let mut snaps = Snapshots::at(&[4.0]);
        evolve(&u0, &co, &cfg, 4.0, &mut [&mut snaps]).unwrap();
        let u = &snaps.fields[0];
        let worst = (1..g.len() - 1)
            .map(|i| m * p.value(g.x(i) - 12.0) - u.values[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= comparison_tolerance(0.1), "{worst}");
    }

    #[test]
    fn grid_refinement_reduces_transport_error() {
        let p = solve_profile_auto(&Nonlinearity::logistic(), 2.5).unwrap();
        let err = |dx: f64, dt: f64| {
            let (co, cfg) = logistic_setup(dt);
            let g = Grid1D::covering(-40.0, 40.0, dx).unwrap();
            let u0 = Field::from_fn(g, 0.0, |x| p.value(x)).unwrap();
            let u = evolve(&u0, &co, &cfg, 4.0, &mut []).unwrap();
            (0..g.len())
                .filter(|&i| g.x(i).abs() < 20.0)
                .map(|i| (u.values[i] - p.value(g.x(i) - 10.0)).abs())
                .fold(0.0, f64::max)
        };
        let coarse = err(0.4, 0.04);
        let fine = err(0.2, 0.02);
        assert!(coarse / fine >= 3.0, "{coarse:e} -> {fine:e}");
    }

    #[test]
    fn heterogeneous_step_preserves_equilibria() {
        let co = Coefficients::with_reaction(
            Arc::new(|t, _| 1.0 + 0.2 * t.sin()),
            Arc::new(|_, x| 0.1 * x.cos()),
            Nonlinearity::logistic(),
            (0.8, 1.2),
            0.1,
        )
        .unwrap();
        let cfg = SolverConfig::new(
            1e-2,
            Boundary::Dirichlet { left: 1.0, right: 1.0 },
            Window::Fixed,
            0.0,
        );
        let g = Grid1D::new(-5.0, 0.1, 101).unwrap();
        let mut u = Field::from_fn(g, 0.0, |_| 1.0).unwrap();
        let mut s = Stepper::new(&co, &cfg).unwrap();
        for _ in 0..50 {
            s.step(&mut u).unwrap();
        }
        assert!(u.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = Grid1D::new(-1.0, 0.25, 9).unwrap();
        let u = Field::from_fn(g, 1.5, |x| 0.5 + 0.3 * x.tanh()).unwrap();
        let mut buf = Vec::new();
        u.write_checkpoint(&mut buf).unwrap();
        let v = Field::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(u, v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn order_and_monotonicity_are_preserved(
            s1 in -5.0f64..5.0, s2 in 0.0f64..3.0, k in 0.3f64..2.0, steps in 20usize..120
        ) {
            let (co, cfg) = logistic_setup(5e-3);
            let g = Grid1D::new(-20.0, 0.1, 401).unwrap();
            let lower = Field::from_fn(g, 0.0, |x| 1.0 / (1.0 + (k * (x - s1)).exp())).unwrap();
            let upper = Field::from_fn(g, 0.0, |x| 1.0 / (1.0 + (k * (x - s1 - s2)).exp())).unwrap();
            let mut s = Stepper::new(&co, &cfg).unwrap();
            let (mut u, mut v) = (lower, upper);
            for _ in 0..steps {
                s.step(&mut u).unwrap();
                s.step(&mut v).unwrap();
            }
            prop_assert!(u.is_nonincreasing(1e-10));
            prop_assert!(v.is_nonincreasing(1e-10));
            let excess = u.values.iter().zip(&v.values).fold(0.0f64, |m, (a, b)| m.max(a - b));
            prop_assert!(excess <= comparison_tolerance(0.1));
        }
    }
}
