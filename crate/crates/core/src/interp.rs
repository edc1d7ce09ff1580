//! Small interpolation helpers shared by the profile tables, the θ table and
//! tabulated reaction terms.

use crate::error::{Error, Result};

/// Cubic Hermite interpolation on one cell of width `h`, `s ∈ [0, 1]`.
#[inline]
pub fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

/// Derivative (with respect to the physical abscissa) of [`hermite`].
#[inline]
pub fn hermite_slope(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let dh00 = 6.0 * s2 - 6.0 * s;
    let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
    let dh01 = -6.0 * s2 + 6.0 * s;
    let dh11 = 3.0 * s2 - 2.0 * s;
    (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1
}

/// Quintic Hermite interpolation on one cell of width `h` from values, first
/// and second derivatives at both ends, `s ∈ [0, 1]`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn hermite5(y0: f64, y1: f64, d0: f64, d1: f64, dd0: f64, dd1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h3 = 0.5 * (s3 - 2.0 * s4 + s5);
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    y0 * h0 + y1 * h5 + h * (d0 * h1 + d1 * h4) + h * h * (dd0 * h2 + dd1 * h3)
}

/// Derivative (with respect to the physical abscissa) of [`hermite5`].
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn hermite5_slope(
    y0: f64,
    y1: f64,
    d0: f64,
    d1: f64,
    dd0: f64,
    dd1: f64,
    h: f64,
    s: f64,
) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let h0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
    let h1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
    let h2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
    let h3 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
    let h4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
    (y0 * h0 - y1 * h0) / h + d0 * h1 + d1 * h4 + h * (dd0 * h2 + dd1 * h3)
}

/// Fritsch–Carlson monotone piecewise-cubic interpolant.
///
/// Preserves monotonicity of the data on every interval, so tabulated
/// reaction terms and densities do not acquire spurious oscillations.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(
                "monotone cubic needs at least two points".into(),
            ));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite table entry".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "table abscissae must be strictly increasing".into(),
            ));
        }
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            if secants[i - 1] * secants[i] <= 0.0 {
                slopes[i] = 0.0;
            } else {
                slopes[i] = 0.5 * (secants[i - 1] + secants[i]);
            }
        }
        for i in 0..n - 1 {
            if secants[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / secants[i];
            let b = slopes[i + 1] / secants[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * a * secants[i];
                slopes[i + 1] = tau * b * secants[i];
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// Evaluates the interpolant; outside the table the end values are held.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|probe| probe.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        hermite(
            self.ys[i],
            self.ys[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
            h,
            s,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quintic_hermite_reproduces_quintics() {
        let f = |x: f64| 0.3 - x + 2.0 * x.powi(2) - 0.7 * x.powi(3) + 0.2 * x.powi(4) - 0.1 * x.powi(5);
        let df = |x: f64| -1.0 + 4.0 * x - 2.1 * x.powi(2) + 0.8 * x.powi(3) - 0.5 * x.powi(4);
        let ddf = |x: f64| 4.0 - 4.2 * x + 2.4 * x.powi(2) - 2.0 * x.powi(3);
        let (a, h) = (0.4, 0.9);
        let b = a + h;
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let x = a + s * h;
            let v = hermite5(f(a), f(b), df(a), df(b), ddf(a), ddf(b), h, s);
            let d = hermite5_slope(f(a), f(b), df(a), df(b), ddf(a), ddf(b), h, s);
            assert!((v - f(x)).abs() < 1e-13);
            assert!((d - df(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| 1.0 + 2.0 * x - x * x + 0.5 * x * x * x;
        let df = |x: f64| 2.0 - 2.0 * x + 1.5 * x * x;
        let (a, h) = (0.3, 0.7);
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let x = a + s * h;
            let v = hermite(f(a), f(a + h), df(a), df(a + h), h, s);
            assert!((v - f(x)).abs() < 1e-13);
            let d = hermite_slope(f(a), f(a + h), df(a), df(a + h), h, s);
            assert!((d - df(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_cubic_keeps_monotone_data_monotone() {
        let pts = [(0.0, 0.0), (0.1, 0.0), (0.2, 0.9), (0.3, 1.0), (1.0, 1.0)];
        let m = MonotoneCubic::new(&pts).unwrap();
        let mut prev = m.eval(0.0);
        for k in 1..=1000 {
            let v = m.eval(k as f64 / 1000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        assert_eq!(m.eval(0.2), 0.9);
    }

    #[test]
    fn monotone_cubic_rejects_unsorted() {
        assert!(MonotoneCubic::new(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
    }
}
