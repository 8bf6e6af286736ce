//! Interpolation helpers.

use crate::error::{Error, Result};

/// Index `i` with `xs[i] <= x <= xs[i+1]`, clamped to the table.
pub fn bracket(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    match xs.partition_point(|v| *v <= x) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    }
}

/// Log-log linear interpolation of y(x); falls back to linear in y when
/// either neighbour is zero. Outside the table the end values are held.
pub fn loglog(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = bracket(xs, x);
    let (x0, x1, y0, y1) = (xs[i], xs[i + 1], ys[i], ys[i + 1]);
    let t = (x / x0).ln() / (x1 / x0).ln();
    if y0 > 0.0 && y1 > 0.0 {
        (y0.ln() + t * (y1 / y0).ln()).exp()
    } else {
        y0 + t * (y1 - y0)
    }
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch–Carlson).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InvalidInput("pchip needs at least two matching points".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::NotMonotone);
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for i in 1..n - 1 {
                if del[i - 1] * del[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = bracket(&self.x, t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_exact_for_power_law() {
        let xs: Vec<f64> = (0..10).map(|i| 10f64.powf(i as f64 * 0.3)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(2.7)).collect();
        let x = 7.3;
        assert!((loglog(&xs, &ys, x) / (3.0 * x.powf(2.7)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pchip_reproduces_nodes_and_stays_monotone() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![0.0, 0.1, 0.15, 2.0, 2.05];
        let p = Pchip::new(x.clone(), y.clone()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-14);
        }
        let mut prev = -1.0;
        for k in 0..=400 {
            let v = p.eval(k as f64 / 100.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }
}
