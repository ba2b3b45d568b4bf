//! Small numerical building blocks shared by the modules: 1D optimizers,
//! quadrature and a tridiagonal solver for diagonal-plus-path-Laplacian systems.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
///
/// Stops when the bracket is narrower than `tol * (1 + |x|)`.
pub fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..400 {
        if (b - a).abs() <= tol * (1.0 + c.abs().max(d.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimize a convex-ish `f` over the real line, starting from `x0`.
///
/// The bracket is grown geometrically from `step`; if the objective is still
/// decreasing when `|x|` exceeds `bound` an [`Error::Unbounded`] is returned.
pub fn minimize_scalar<F: Fn(f64) -> f64>(
    f: F,
    x0: f64,
    step: f64,
    bound: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let f0 = f(x0);
    let fp = f(x0 + step);
    let fm = f(x0 - step);
    if f0 <= fp && f0 <= fm {
        return Ok(golden_min(&f, x0 - step, x0 + step, tol));
    }
    let dir = if fp < fm { 1.0 } else { -1.0 };
    let mut prev = x0;
    let mut cur = x0 + dir * step;
    let mut fcur = if dir > 0.0 { fp } else { fm };
    let mut h = step;
    loop {
        h *= 2.0;
        let next = cur + dir * h;
        if next.abs() > bound {
            let edge = dir * bound;
            let fe = f(edge);
            if fe < fcur {
                return Err(Error::Unbounded(format!(
                    "objective still decreasing at search bound {bound:e}"
                )));
            }
            let (lo, hi) = if dir > 0.0 { (prev, edge) } else { (edge, prev) };
            return Ok(golden_min(&f, lo, hi, tol));
        }
        let fnext = f(next);
        if !fnext.is_finite() || fnext >= fcur {
            let (lo, hi) = if dir > 0.0 { (prev, next) } else { (next, prev) };
            return Ok(golden_min(&f, lo, hi, tol));
        }
        prev = cur;
        cur = next;
        fcur = fnext;
    }
}

/// Solve `(diag(s) + L) v = rhs`, where `L` is the weighted Laplacian of a path
/// graph with nonnegative edge weights `kappa[i]` coupling `i` and `i + 1`.
///
/// The elimination never subtracts, so for `s, kappa, rhs >= 0` every entry of
/// the solution carries full relative precision even when `kappa / s` spans
/// many orders of magnitude.
pub fn solve_path_laplacian(s: &[f64], kappa: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = s.len();
    assert_eq!(kappa.len() + 1, n, "edge weights must have length n - 1");
    assert_eq!(rhs.len(), n);
    let mut e = vec![0.0; n];
    let mut r = vec![0.0; n];
    e[0] = s[0];
    r[0] = rhs[0];
    for i in 1..n {
        let k = kappa[i - 1];
        if k > 0.0 {
            let denom = e[i - 1] + k;
            e[i] = s[i] + k * e[i - 1] / denom;
            r[i] = rhs[i] + k * r[i - 1] / denom;
        } else {
            e[i] = s[i];
            r[i] = rhs[i];
        }
    }
    let mut v = vec![0.0; n];
    v[n - 1] = r[n - 1] / e[n - 1];
    for i in (0..n - 1).rev() {
        v[i] = (r[i] + kappa[i] * v[i + 1]) / (e[i] + kappa[i]);
    }
    v
}

/// Thomas algorithm for a general tridiagonal system with sub-diagonal `a`
/// (length n-1), diagonal `b` and super-diagonal `c` (length n-1).
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    if b[0] == 0.0 {
        return None;
    }
    cp[0] = if n > 1 { c[0] / b[0] } else { 0.0 };
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i - 1] * cp[i - 1];
        if m == 0.0 || !m.is_finite() {
            return None;
        }
        cp[i] = if i < n - 1 { c[i] / m } else { 0.0 };
        dp[i] = (d[i] - a[i - 1] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Some(x)
}

const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss-Legendre rule with `pieces` equal subintervals.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for k in 0..pieces {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += s * half;
    }
    total
}

/// `n` points spaced logarithmically between `lo` and `hi` (inclusive).
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Trapezoid rule on a possibly nonuniform grid.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tt, yy)| 0.5 * (tt[1] - tt[0]) * (yy[0] + yy[1]))
        .sum()
}

/// Nodal time derivative of a sampled path, second order on nonuniform grids.
pub fn time_derivative(t: &[f64], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = t.len();
    let dim = y.first().map_or(0, |v| v.len());
    let mut out = vec![vec![0.0; dim]; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        let h = t[1] - t[0];
        for i in 0..dim {
            let d = (y[1][i] - y[0][i]) / h;
            out[0][i] = d;
            out[1][i] = d;
        }
        return out;
    }
    // three-point formulas through (t0,t1,t2) evaluated at the requested node
    let stencil = |k0: usize, at: usize, i: usize| {
        let (t0, t1, t2) = (t[k0], t[k0 + 1], t[k0 + 2]);
        let (y0, y1, y2) = (y[k0][i], y[k0 + 1][i], y[k0 + 2][i]);
        let x = t[at];
        y0 * (2.0 * x - t1 - t2) / ((t0 - t1) * (t0 - t2))
            + y1 * (2.0 * x - t0 - t2) / ((t1 - t0) * (t1 - t2))
            + y2 * (2.0 * x - t0 - t1) / ((t2 - t0) * (t2 - t1))
    };
    for i in 0..dim {
        out[0][i] = stencil(0, 0, i);
        for k in 1..n - 1 {
            out[k][i] = stencil(k - 1, k, i);
        }
        out[n - 1][i] = stencil(n - 3, n - 1, i);
    }
    out
}
