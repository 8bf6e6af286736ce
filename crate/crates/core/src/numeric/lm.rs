//! Box-constrained Levenberg–Marquardt with finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 400, ftol: 1e-12, xtol: 1e-10, gtol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn ssr(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn eval<F: Fn(&[f64], &mut [f64])>(f: &F, x: &[f64], m: usize) -> Vec<f64> {
    let mut r = vec![0.0; m];
    f(x, &mut r);
    if r.iter().any(|v| !v.is_finite()) {
        r.iter_mut().for_each(|v| *v = 1e150);
    }
    r
}

fn jacobian<F: Fn(&[f64], &mut [f64])>(
    f: &F,
    x: &[f64],
    r0: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> DMatrix<f64> {
    let m = r0.len();
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for k in 0..n {
        let h = 1e-7 * x[k].abs().max(1.0);
        let up = x[k] + h <= hi[k];
        let dn = x[k] - h >= lo[k];
        let col: Vec<f64> = if up && dn {
            xp[k] = x[k] + h;
            let rp = eval(f, &xp, m);
            xp[k] = x[k] - h;
            let rm = eval(f, &xp, m);
            rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        } else {
            let s = if up { h } else { -h };
            xp[k] = x[k] + s;
            let rp = eval(f, &xp, m);
            rp.iter().zip(r0).map(|(a, b)| (a - b) / s).collect()
        };
        xp[k] = x[k];
        for i in 0..m {
            j[(i, k)] = col[i];
        }
    }
    j
}

/// Minimise `sum r_i(x)^2` subject to `lo <= x <= hi`.
pub fn minimize<F: Fn(&[f64], &mut [f64])>(
    f: F,
    m: usize,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &LmOptions,
) -> LmResult {
    let n = x0.len();
    let mut x: Vec<f64> = (0..n).map(|k| x0[k].clamp(lo[k], hi[k])).collect();
    let mut r = eval(&f, &x, m);
    let mut cost = ssr(&r);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let j = jacobian(&f, &x, &r, lo, hi);
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= opts.gtol * (1.0 + cost) {
            converged = true;
            break;
        }
        // parameters pinned at a bound with the gradient pushing outward stay put
        let active: Vec<bool> = (0..n).map(|k| (x[k] <= lo[k] && g[k] > 0.0) || (x[k] >= hi[k] && g[k] < 0.0)).collect();
        let mut g = g;
        let mut a = a;
        for k in 0..n {
            if active[k] {
                g[k] = 0.0;
                for i in 0..n {
                    a[(k, i)] = 0.0;
                    a[(i, k)] = 0.0;
                }
                a[(k, k)] = 1.0;
            }
        }
        if g.amax() <= opts.gtol * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut aa = a.clone();
            for k in 0..n {
                aa[(k, k)] += mu * a[(k, k)].max(1e-12);
            }
            let step = match aa.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match aa.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        mu *= 10.0;
                        continue;
                    }
                },
            };
            let xn: Vec<f64> = (0..n).map(|k| (x[k] + step[k]).clamp(lo[k], hi[k])).collect();
            let rn = eval(&f, &xn, m);
            let cn = ssr(&rn);
            if cn < cost {
                let dx: f64 = (0..n).map(|k| (xn[k] - x[k]).abs() / (x[k].abs() + 1e-10)).fold(0.0, f64::max);
                let rel = (cost - cn) / cost.max(1e-300);
                x = xn;
                r = rn;
                cost = cn;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < opts.ftol || dx < opts.xtol {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if !improved {
            // no descent direction left: a stationary point within the box
            converged = true;
            break;
        }
        if converged || cost == 0.0 {
            converged = true;
            break;
        }
    }
    LmResult { x, residuals: r, ssr: cost, iterations: it, converged }
}
