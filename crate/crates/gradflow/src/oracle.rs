//! Closed-form value functions of the one-dimensional layer problems and
//! brute-force discretized minimizations that check them.
//!
//! `G(alpha, u0, u1) = min ∫ (alpha^2 + u'^2)/(2u)` over positive profiles with
//! fixed endpoints, its weighted variant `G_hat`, and the inf-sup value
//! `N(delta, v0, v1) = inf_v sup_zeta ∫ v'^2/(2v) - zeta'^2 v/2`.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::numerics::{gauss_legendre, golden_min, minimize_scalar};
use crate::potentials::{cosh_c, cosh_star, legendre_with};

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Boundary data of a layer problem with optional coefficient profiles on `[0, 1]`.
#[derive(Clone)]
pub struct ProfileProblem {
    pub alpha: f64,
    pub u0: f64,
    pub u1: f64,
    pub a_fun: Option<Coefficient>,
    pub w_fun: Option<Coefficient>,
}

impl std::fmt::Debug for ProfileProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProfileProblem")
            .field("alpha", &self.alpha)
            .field("u0", &self.u0)
            .field("u1", &self.u1)
            .field("a_fun", &self.a_fun.is_some())
            .field("w_fun", &self.w_fun.is_some())
            .finish()
    }
}

const COEF_SAMPLES: usize = 257;

impl ProfileProblem {
    pub fn new(alpha: f64, u0: f64, u1: f64) -> Self {
        Self { alpha, u0, u1, a_fun: None, w_fun: None }
    }

    pub fn with_coefficients(mut self, a: Coefficient, w: Coefficient) -> Self {
        self.a_fun = Some(a);
        self.w_fun = Some(w);
        self
    }

    fn a(&self, y: f64) -> f64 {
        self.a_fun.as_ref().map_or(1.0, |f| f(y))
    }
    fn w(&self, y: f64) -> f64 {
        self.w_fun.as_ref().map_or(1.0, |f| f(y))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u0 > 0.0 && self.u1 > 0.0) || !self.alpha.is_finite() {
            return domain("boundary values must be positive and alpha finite");
        }
        for k in 0..COEF_SAMPLES {
            let y = k as f64 / (COEF_SAMPLES - 1) as f64;
            if !(self.a(y) > 0.0 && self.w(y) > 0.0) {
                return domain(format!("coefficient not positive at y = {y}"));
            }
        }
        Ok(())
    }

    /// `A_* = (∫ 1/(A W))^{-1}`.
    pub fn a_star(&self) -> f64 {
        1.0 / gauss_legendre(|y| 1.0 / (self.a(y) * self.w(y)), 0.0, 1.0, 64)
    }

    pub fn closed(&self) -> Result<f64> {
        self.validate()?;
        Ok(g_hat_closed(self.alpha, self.u0, self.u1, self.a_star(), self.w(0.0), self.w(1.0)))
    }

    /// Minimize the discretized weighted functional over the relative density
    /// `v = U/W`, with midpoint values of `A W` as cell weights.
    pub fn brute(&self, m: usize) -> Result<BruteResult> {
        self.validate()?;
        if m < 50 {
            return domain("brute force needs at least 50 cells");
        }
        let h = 1.0 / m as f64;
        let kappa: Vec<f64> = (0..m).map(|c| {
            let y = (c as f64 + 0.5) * h;
            self.a(y) * self.w(y)
        }).collect();
        let obj = CellObjective { alpha: self.alpha, kappa, harm_weight: 0.0 };
        obj.minimize(self.u0 / self.w(0.0), self.u1 / self.w(1.0))
    }
}

/// `G(alpha, u0, u1) = sqrt(u0 u1) [C(alpha/sqrt(u0 u1)) + C*(ln u1 - ln u0)]`.
pub fn g_closed(alpha: f64, u0: f64, u1: f64) -> f64 {
    let g = (u0 * u1).sqrt();
    g * cosh_c(alpha / g) + g * cosh_star(u1.ln() - u0.ln())
}

/// Weighted value function with transmission coefficient `a_star` and end weights `w0, w1`.
pub fn g_hat_closed(alpha: f64, u0: f64, u1: f64, a_star: f64, w0: f64, w1: f64) -> f64 {
    let g = (u0 * u1 / (w0 * w1)).sqrt();
    a_star * g * cosh_c(alpha / (a_star * g)) + a_star * g * cosh_star((u0 * w1 / (u1 * w0)).ln())
}

/// Parabola `(1-x)u0 + x u1 + b(x^2 - x)` minimizing the constant-coefficient problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Parabola {
    pub u0: f64,
    pub u1: f64,
    pub b: f64,
}

impl Parabola {
    pub fn eval(&self, x: f64) -> f64 {
        (1.0 - x) * self.u0 + x * self.u1 + self.b * (x * x - x)
    }
}

pub fn g_minimizer(alpha: f64, u0: f64, u1: f64) -> Parabola {
    Parabola { u0, u1, b: u0 + u1 - (alpha * alpha + 4.0 * u0 * u1).sqrt() }
}

pub fn g_brute(alpha: f64, u0: f64, u1: f64, m: usize) -> Result<BruteResult> {
    ProfileProblem::new(alpha, u0, u1).brute(m)
}

/// `N(delta, v0, v1) = sqrt(v0 v1) [C*(ln v1 - ln v0) - C*(delta)]`.
pub fn n_closed(delta: f64, v0: f64, v1: f64) -> f64 {
    let g = (v0 * v1).sqrt();
    g * cosh_star(v1.ln() - v0.ln()) - g * cosh_star(delta)
}

/// `M(delta, v) = ∫ v'^2/(2v) - (delta^2/2) Harm(v)` by quadrature.
pub fn m_of_profile<V, D>(delta: f64, v: V, dv: D) -> f64
where
    V: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let kinetic = gauss_legendre(|z| dv(z).powi(2) / (2.0 * v(z)), 0.0, 1.0, 32);
    let harm = 1.0 / gauss_legendre(|z| 1.0 / v(z), 0.0, 1.0, 32);
    kinetic - 0.5 * delta * delta * harm
}

/// `sup_zeta N(v, zeta)` over piecewise-linear `zeta` on `cells` cells with
/// `zeta(1) - zeta(0) = delta`, found by a bracketed search on the
/// multiplier of the endpoint constraint.
pub fn m_sup_discrete<V, D>(delta: f64, v: V, dv: D, cells: usize) -> f64
where
    V: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let h = 1.0 / cells as f64;
    // cell averages of v; the slope s_c maximizes -s^2 vbar_c/2 + lambda s
    let vbar: Vec<f64> = (0..cells)
        .map(|c| gauss_legendre(&v, c as f64 * h, (c + 1) as f64 * h, 1) / h)
        .collect();
    let constraint = |lam: f64| vbar.iter().map(|vb| lam / vb * h).sum::<f64>() - delta;
    let value = |lam: f64| -vbar.iter().map(|vb| 0.5 * (lam / vb).powi(2) * vb * h).sum::<f64>();
    let kinetic = gauss_legendre(|z| dv(z).powi(2) / (2.0 * v(z)), 0.0, 1.0, 32);
    if delta == 0.0 {
        return kinetic;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while constraint(lo) > 0.0 {
        lo *= 2.0;
    }
    while constraint(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if constraint(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    kinetic + value(0.5 * (lo + hi))
}

/// `min_alpha ∫ (alpha^2 + v'^2)/(2v) - alpha delta` by quadrature and scalar search.
pub fn m_via_g<V, D>(delta: f64, v: V, dv: D) -> Result<f64>
where
    V: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let inv = gauss_legendre(|z| 1.0 / v(z), 0.0, 1.0, 32);
    let kinetic = gauss_legendre(|z| dv(z).powi(2) / (2.0 * v(z)), 0.0, 1.0, 32);
    let (_, val) = minimize_scalar(|a| 0.5 * a * a * inv + kinetic - a * delta, 0.0, 0.1, 1e6, 1e-13)?;
    Ok(val)
}

/// Brute-force value of `N`: outer minimization over discretized positive
/// profiles, inner supremum in closed form through the harmonic mean.
pub fn n_brute(delta: f64, v0: f64, v1: f64, m: usize) -> Result<BruteResult> {
    if !(v0 > 0.0 && v1 > 0.0) {
        return domain("boundary values must be positive");
    }
    let obj = CellObjective { alpha: 0.0, kappa: vec![1.0; m], harm_weight: delta * delta };
    obj.minimize(v0, v1)
}

/// `-G*(delta) = -sup_alpha (alpha delta - G(alpha))` by numeric conjugation.
pub fn minus_g_conjugate(delta: f64, v0: f64, v1: f64) -> Result<f64> {
    Ok(-legendre_with(|a| g_closed(a, v0, v1), delta, 1e6, 1e-13)?)
}

#[derive(Clone, Debug)]
pub struct BruteResult {
    pub value: f64,
    /// nodal values on the uniform grid, endpoints included
    pub profile: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Discrete objective
/// `sum_c h [alpha^2/(2 k_c vbar) + k_c (dv)^2/(2 h^2 vbar)] - (q/2) / sum_c (h/vbar)`.
struct CellObjective {
    alpha: f64,
    kappa: Vec<f64>,
    harm_weight: f64,
}

struct Derivs {
    grad: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
    /// rank-one correction `-rho q q^T` of the Hessian
    rho: f64,
    q: Vec<f64>,
}

impl CellObjective {
    fn cells(&self) -> usize {
        self.kappa.len()
    }

    fn value(&self, v: &[f64]) -> f64 {
        let h = 1.0 / self.cells() as f64;
        let mut total = 0.0;
        let mut s = 0.0;
        for c in 0..self.cells() {
            let vb = 0.5 * (v[c] + v[c + 1]);
            let d = v[c + 1] - v[c];
            let k = self.kappa[c];
            total += h * self.alpha * self.alpha / (2.0 * k * vb) + k * d * d / (2.0 * h * vb);
            s += h / vb;
        }
        if self.harm_weight > 0.0 {
            total -= 0.5 * self.harm_weight / s;
        }
        total
    }

    /// Gradient and Hessian with respect to all nodal values.
    fn derivs(&self, v: &[f64]) -> Derivs {
        let m = self.cells();
        let h = 1.0 / m as f64;
        let n = m + 1;
        let mut grad = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; m];
        let mut s = 0.0;
        let mut ds = vec![0.0; n];
        let mut harm_cell = vec![0.0; m];
        for c in 0..m {
            let vb = 0.5 * (v[c] + v[c + 1]);
            let d = v[c + 1] - v[c];
            let k = self.kappa[c];
            let a = h * self.alpha * self.alpha / (2.0 * k);
            let b = k / (2.0 * h);
            let num = a + b * d * d;
            let f_m = -num / (vb * vb);
            let f_d = 2.0 * b * d / vb;
            let f_mm = 2.0 * num / (vb * vb * vb);
            let f_md = -2.0 * b * d / (vb * vb);
            let f_dd = 2.0 * b / vb;
            grad[c] += 0.5 * f_m - f_d;
            grad[c + 1] += 0.5 * f_m + f_d;
            diag[c] += 0.25 * f_mm - f_md + f_dd;
            diag[c + 1] += 0.25 * f_mm + f_md + f_dd;
            off[c] += 0.25 * f_mm - f_dd;
            s += h / vb;
            let dsm = -h / (2.0 * vb * vb);
            ds[c] += dsm;
            ds[c + 1] += dsm;
            harm_cell[c] = h / (2.0 * vb * vb * vb);
        }
        let mut rho = 0.0;
        if self.harm_weight > 0.0 {
            let qw = self.harm_weight;
            let c1 = 0.5 * qw / (s * s);
            for i in 0..n {
                grad[i] += c1 * ds[i];
            }
            for c in 0..m {
                diag[c] += c1 * harm_cell[c];
                diag[c + 1] += c1 * harm_cell[c];
                off[c] += c1 * harm_cell[c];
            }
            rho = qw / (s * s * s);
        }
        Derivs { grad, diag, off, rho, q: ds }
    }

    /// Damped Newton in log variables with a Levenberg shift.
    fn minimize(&self, v0: f64, v1: f64) -> Result<BruteResult> {
        let m = self.cells();
        let mut s: Vec<f64> = (0..=m)
            .map(|i| {
                let x = i as f64 / m as f64;
                ((1.0 - x) * v0 + x * v1).ln()
            })
            .collect();
        s[0] = v0.ln();
        s[m] = v1.ln();
        let to_v = |s: &[f64]| s.iter().map(|x| x.exp()).collect::<Vec<f64>>();
        let mut v = to_v(&s);
        let mut f = self.value(&v);
        let mut lambda = 1e-6;
        let mut converged = false;
        let mut it = 0;
        while it < 400 {
            it += 1;
            let d = self.derivs(&v);
            // interior unknowns 1..m-1 in log variables
            let ni = m - 1;
            let gs: Vec<f64> = (1..m).map(|i| v[i] * d.grad[i]).collect();
            let gnorm = gs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if gnorm < 1e-11 * (1.0 + f.abs()) {
                converged = true;
                break;
            }
            let base_diag: Vec<f64> = (1..m).map(|i| v[i] * v[i] * d.diag[i] + v[i] * d.grad[i]).collect();
            let base_off: Vec<f64> = (1..m - 1).map(|i| v[i] * v[i + 1] * d.off[i]).collect();
            let q: Vec<f64> = (1..m).map(|i| v[i] * d.q[i]).collect();
            let mut accepted = false;
            for _ in 0..60 {
                let dd: Vec<f64> = base_diag.iter().map(|x| x + lambda).collect();
                let rhs: Vec<f64> = gs.iter().map(|x| -x).collect();
                let Some(step) = shifted_solve(&dd, &base_off, d.rho, &q, &rhs) else {
                    lambda = (lambda * 10.0).max(1e-8);
                    continue;
                };
                let mut trial = s.clone();
                for k in 0..ni {
                    trial[k + 1] += step[k].clamp(-2.0, 2.0);
                }
                let tv = to_v(&trial);
                let tf = self.value(&tv);
                if tf.is_finite() && tf <= f {
                    let decrease = f - tf;
                    s = trial;
                    v = tv;
                    f = tf;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if decrease <= 1e-16 * (1.0 + f.abs()) {
                        converged = true;
                    }
                    break;
                }
                lambda = (lambda * 10.0).max(1e-8);
            }
            if !accepted || converged {
                converged = converged || gnorm < 1e-7 * (1.0 + f.abs());
                break;
            }
        }
        Ok(BruteResult { value: f, profile: v, iterations: it, converged })
    }
}

/// Solve `(T - rho q q^T) x = r` for symmetric tridiagonal `T`; `None` unless
/// the matrix is positive definite.
fn shifted_solve(diag: &[f64], off: &[f64], rho: f64, q: &[f64], r: &[f64]) -> Option<Vec<f64>> {
    let ldl = SymTridiagonal::factor(diag, off)?;
    let x = ldl.solve(r);
    if rho == 0.0 {
        return Some(x);
    }
    let y = ldl.solve(q);
    let qy: f64 = q.iter().zip(&y).map(|(a, b)| a * b).sum();
    let denom = 1.0 - rho * qy;
    if denom <= 0.0 {
        return None;
    }
    let qx: f64 = q.iter().zip(&x).map(|(a, b)| a * b).sum();
    let c = rho * qx / denom;
    Some(x.iter().zip(&y).map(|(a, b)| a + c * b).collect())
}

struct SymTridiagonal {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl SymTridiagonal {
    fn factor(diag: &[f64], off: &[f64]) -> Option<Self> {
        let n = diag.len();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = diag[0];
        if !(d[0] > 0.0) {
            return None;
        }
        for i in 1..n {
            l[i - 1] = off[i - 1] / d[i - 1];
            d[i] = diag[i] - l[i - 1] * off[i - 1];
            if !(d[i] > 0.0) || !d[i].is_finite() {
                return None;
            }
        }
        Some(Self { d, l })
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut y = r.to_vec();
        for i in 1..n {
            y[i] -= self.l[i - 1] * y[i - 1];
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n - 1).rev() {
            y[i] -= self.l[i] * y[i + 1];
        }
        y
    }
}

/// One random instance of the oracle comparison.
#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub alpha: f64,
    pub u0: f64,
    pub u1: f64,
    pub g_closed: f64,
    pub g_brute: f64,
    pub g_gap: f64,
    pub parabola_gap: f64,
    pub delta: f64,
    pub n_closed: f64,
    pub n_brute: f64,
    pub n_gap: f64,
    pub bridge_gap: f64,
    pub converged: bool,
}

/// Draw `n` random instances from `seed` and compare closed forms with brute force.
pub fn oracle_sweep(n: usize, seed: u64, m: usize) -> Result<Vec<OracleRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-4.0..4.0),
                (rng.gen_range(-2.0f64..1.5)).exp(),
                (rng.gen_range(-2.0f64..1.5)).exp(),
                rng.gen_range(-3.0..3.0),
            ]
        })
        .collect();
    draws
        .par_iter()
        .map(|&[alpha, u0, u1, delta]| {
            let gc = g_closed(alpha, u0, u1);
            let gb = g_brute(alpha, u0, u1, m)?;
            let par = g_minimizer(alpha, u0, u1);
            let parabola_gap = gb
                .profile
                .iter()
                .enumerate()
                .fold(0.0f64, |a, (i, &x)| a.max((x - par.eval(i as f64 / m as f64)).abs()));
            let nc = n_closed(delta, u0, u1);
            let nb = n_brute(delta, u0, u1, m)?;
            let bridge = minus_g_conjugate(delta, u0, u1)?;
            Ok(OracleRow {
                alpha,
                u0,
                u1,
                g_closed: gc,
                g_brute: gb.value,
                g_gap: (gb.value - gc).abs() / (1.0 + gc),
                parabola_gap,
                delta,
                n_closed: nc,
                n_brute: nb.value,
                n_gap: (nb.value - nc).abs() / (1.0 + nc.abs()),
                bridge_gap: (bridge - nc).abs(),
                converged: gb.converged && nb.converged,
            })
        })
        .collect()
}

pub fn write_rows_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Largest sampled second difference deficit of `alpha -> G(alpha, u0, u1)`.
pub fn g_convexity_defect(u0: f64, u1: f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (1..n)
        .map(|k| {
            let a = lo + k as f64 * h;
            g_closed(a - h, u0, u1) - 2.0 * g_closed(a, u0, u1) + g_closed(a + h, u0, u1)
        })
        .fold(0.0f64, |m, d| m.max(-d))
}

/// Golden-section check that `alpha -> G - alpha delta` attains `N`; returns the minimizing `alpha`.
pub fn bridge_alpha(delta: f64, v0: f64, v1: f64) -> f64 {
    golden_min(|a| g_closed(a, v0, v1) - a * delta, -1e3, 1e3, 1e-13).0
}
