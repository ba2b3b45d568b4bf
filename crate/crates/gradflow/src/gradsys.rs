//! Finite-dimensional generalized gradient systems `u' = D_xi R*(u, -DE(u))`:
//! time integration, De Giorgi and rate functionals, mass-action reaction
//! structures and two small counterexample demos.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{self, time_derivative, trapezoid};
use crate::potentials::{self, cosh_star, dcosh_star, log_mean_unchecked, DissipationPair};

/// Floor applied to densities inside logarithms only.
pub const LOG_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Whole space.
    Free,
    /// Componentwise positive.
    Positive,
    /// Probability vectors; rates live in the sum-zero tangent space.
    Simplex,
    /// Scalar in `[0, 1]`.
    UnitInterval,
}

impl Constraint {
    pub fn admissible(self, u: &[f64]) -> bool {
        if u.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match self {
            Self::Free => true,
            Self::Positive | Self::Simplex => u.iter().all(|&x| x > 0.0),
            Self::UnitInterval => u.iter().all(|&x| x > 0.0 && x < 1.0),
        }
    }
}

/// A gradient system given through its energy and dual dissipation potential.
pub trait GradientSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn constraint(&self) -> Constraint {
        Constraint::Free
    }
    fn energy(&self, u: &[f64]) -> Result<f64>;
    fn d_energy(&self, u: &[f64]) -> Result<Vec<f64>>;
    fn r_star(&self, u: &[f64], xi: &[f64]) -> f64;
    fn d_r_star(&self, u: &[f64], xi: &[f64]) -> Vec<f64>;

    /// Induced vector field `D_xi R*(u, -DE(u))`.
    fn field(&self, u: &[f64]) -> Result<Vec<f64>> {
        let xi: Vec<f64> = self.d_energy(u)?.iter().map(|x| -x).collect();
        Ok(self.d_r_star(u, &xi))
    }

    /// Primal potential `R(u, v)`; by default the numeric conjugate of `R*(u, .)`.
    fn r_primal(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        numeric_primal(self, u, v)
    }
}

/// `sup_xi <xi, v> - R*(u, xi)` over the constraint's dual space.
///
/// Scalar problems use bracketing plus golden section; otherwise a damped
/// Newton iteration with a finite-difference Hessian of `D_xi R*`. On the
/// simplex the last force component is pinned to 0.
pub fn numeric_primal<G: GradientSystem + ?Sized>(gs: &G, u: &[f64], v: &[f64]) -> Result<f64> {
    let n = gs.dim();
    if v.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    if n == 1 {
        return potentials::legendre(|x| gs.r_star(u, &[x]), v[0]);
    }
    let free = if gs.constraint() == Constraint::Simplex { n - 1 } else { n };
    let lift = |x: &[f64]| {
        let mut xi = x.to_vec();
        xi.resize(n, 0.0);
        xi
    };
    let objective = |x: &[f64]| {
        let xi = lift(x);
        let lin: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
        lin - gs.r_star(u, &xi)
    };
    let grad = |x: &[f64]| -> Vec<f64> {
        let d = gs.d_r_star(u, &lift(x));
        (0..free).map(|i| v[i] - d[i]).collect()
    };
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut x = vec![0.0; free];
    let mut fx = objective(&x);
    let mut g = grad(&x);
    for _ in 0..200 {
        let gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if gnorm <= 1e-14 * (1.0 + scale) {
            return Ok(fx);
        }
        // negative Hessian of the objective = Hessian of R*
        let mut hess = DMatrix::<f64>::zeros(free, free);
        for j in 0..free {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let dp = gs.d_r_star(u, &lift(&xp));
            let dm = gs.d_r_star(u, &lift(&xm));
            for i in 0..free {
                hess[(i, j)] = (dp[i] - dm[i]) / (2.0 * h);
            }
        }
        let hess = 0.5 * (&hess + hess.transpose());
        let rhs = DVector::from_vec(g.clone());
        let mut shift = 0.0;
        let step = loop {
            let mut m = hess.clone();
            for i in 0..free {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&rhs);
            }
            shift = if shift == 0.0 { 1e-10 * (1.0 + hess.amax()) } else { shift * 10.0 };
            if shift > 1e20 {
                return Err(Error::NoConvergence("primal potential: Hessian not positive".into()));
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let ft = objective(&trial);
            if ft.is_finite() && ft >= fx - 1e-15 * (1.0 + fx.abs()) {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no further ascent possible at machine precision
            return Ok(fx);
        }
        g = grad(&x);
    }
    Err(Error::NoConvergence(format!("primal potential at u = {u:?}")))
}

/// Sampled path with per-sample diagnostics.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// `E(t) - E(0) + int_0^t <-DE, u'> ds`, accumulated by the trapezoid rule.
    pub edb_residual: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn last_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Path given by samples only; energies and residuals are filled from `gs`.
    pub fn from_samples<G: GradientSystem + ?Sized>(
        gs: &G,
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let energies = states.iter().map(|u| gs.energy(u)).collect::<Result<Vec<_>>>()?;
        let n = times.len();
        Ok(Self { times, states, energies, edb_residual: vec![0.0; n] })
    }

    /// Same path traversed backwards in time.
    pub fn reversed(&self) -> Self {
        let t_end = self.times.last().copied().unwrap_or(0.0);
        let mut times: Vec<f64> = self.times.iter().rev().map(|t| t_end - t).collect();
        if let Some(first) = times.first_mut() {
            *first = 0.0;
        }
        Self {
            times,
            states: self.states.iter().rev().cloned().collect(),
            energies: self.energies.iter().rev().copied().collect(),
            edb_residual: vec![0.0; self.times.len()],
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("u_{i}")));
        header.push("E".into());
        header.push("edb_residual".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![format!("{:.12e}", self.times[k])];
            row.extend(self.states[k].iter().map(|x| format!("{x:.12e}")));
            row.push(format!("{:.12e}", self.energies[k]));
            row.push(format!("{:.6e}", self.edb_residual[k]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Classical RK4 with step-doubling error control.
    Rk4,
    /// Backward Euler with Newton iterations.
    ImplicitEuler,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub t_end: f64,
    /// Output spacing; also the initial internal step.
    pub dt: f64,
    pub integrator: Integrator,
    /// Local error tolerance of the RK4 controller.
    pub tol: f64,
    pub dt_min: f64,
}

impl EvolveOptions {
    pub fn rk4(t_end: f64, dt: f64) -> Self {
        Self { t_end, dt, integrator: Integrator::Rk4, tol: 1e-12, dt_min: 1e-13 }
    }
    pub fn implicit(t_end: f64, dt: f64) -> Self {
        Self { integrator: Integrator::ImplicitEuler, ..Self::rk4(t_end, dt) }
    }
}

fn axpy(u: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    u.iter().zip(k).map(|(x, y)| x + a * y).collect()
}

fn rk4_step<G: GradientSystem + ?Sized>(gs: &G, u: &[f64], h: f64) -> Option<Vec<f64>> {
    let c = gs.constraint();
    let eval = |x: &[f64]| -> Option<Vec<f64>> {
        if !c.admissible(x) {
            return None;
        }
        gs.field(x).ok()
    };
    let k1 = eval(u)?;
    let k2 = eval(&axpy(u, 0.5 * h, &k1))?;
    let k3 = eval(&axpy(u, 0.5 * h, &k2))?;
    let k4 = eval(&axpy(u, h, &k3))?;
    let out: Vec<f64> = (0..u.len())
        .map(|i| u[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    c.admissible(&out).then_some(out)
}

fn implicit_euler_step<G: GradientSystem + ?Sized>(gs: &G, u: &[f64], h: f64) -> Option<Vec<f64>> {
    let n = u.len();
    let c = gs.constraint();
    let mut x = u.to_vec();
    let residual = |x: &[f64]| -> Option<Vec<f64>> {
        if !c.admissible(x) {
            return None;
        }
        let f = gs.field(x).ok()?;
        Some((0..n).map(|i| x[i] - u[i] - h * f[i]).collect())
    };
    let mut r = residual(&x)?;
    for _ in 0..50 {
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rn < 1e-14 {
            return Some(x);
        }
        let mut jac = DMatrix::<f64>::identity(n, n);
        for j in 0..n {
            let d = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += d;
            xm[j] -= d;
            let fp = gs.field(&xp).ok()?;
            let fm = gs.field(&xm).ok()?;
            for i in 0..n {
                jac[(i, j)] -= h * (fp[i] - fm[i]) / (2.0 * d);
            }
        }
        let dx = jac.lu().solve(&DVector::from_vec(r.clone()))?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let trial: Vec<f64> = (0..n).map(|i| x[i] - t * dx[i]).collect();
            if let Some(rt) = residual(&trial) {
                let rtn = rt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if rtn < rn || rtn < 1e-14 {
                    next = Some((trial, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        let (xn, rnew) = next?;
        let stalled = xn.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        x = xn;
        r = rnew;
        if stalled {
            return Some(x);
        }
    }
    None
}

/// Integrate the rate equation and record samples every `opts.dt`.
pub fn evolve<G: GradientSystem + ?Sized>(gs: &G, u0: &[f64], opts: &EvolveOptions) -> Result<Trajectory> {
    if opts.dt <= 0.0 || opts.t_end < 0.0 {
        return domain("evolve needs dt > 0 and T >= 0");
    }
    if u0.len() != gs.dim() || !gs.constraint().admissible(u0) {
        return domain(format!("initial state {u0:?} is not admissible"));
    }
    let steps = (opts.t_end / opts.dt).round().max(0.0) as usize;
    let mut traj = Trajectory::default();
    let mut u = u0.to_vec();
    let power = |x: &[f64]| -> Result<f64> {
        let de = gs.d_energy(x)?;
        let f = gs.field(x)?;
        Ok(-de.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>())
    };
    let e0 = gs.energy(&u)?;
    let mut p_prev = power(&u)?;
    let mut dissipated = 0.0;
    traj.times.push(0.0);
    traj.states.push(u.clone());
    traj.energies.push(e0);
    traj.edb_residual.push(0.0);
    let mut h = opts.dt;
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * opts.dt;
        let t_next = k as f64 * opts.dt;
        let mut t = t_prev;
        while t < t_next - 1e-14 * t_next.max(1.0) {
            h = h.min(t_next - t);
            let next = match opts.integrator {
                Integrator::Rk4 => {
                    let full = rk4_step(gs, &u, h);
                    let half = rk4_step(gs, &u, 0.5 * h).and_then(|m| rk4_step(gs, &m, 0.5 * h));
                    match (full, half) {
                        (Some(a), Some(b)) => {
                            let err = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                            if err <= opts.tol {
                                Some((b, err))
                            } else {
                                None
                            }
                        }
                        _ => None,
                    }
                }
                Integrator::ImplicitEuler => implicit_euler_step(gs, &u, h).map(|x| (x, 0.0)),
            };
            match next {
                Some((x, err)) => {
                    u = x;
                    t += h;
                    if opts.integrator == Integrator::Rk4 && err < opts.tol / 64.0 {
                        h = (2.0 * h).min(opts.dt);
                    }
                }
                None => {
                    h *= 0.5;
                    if h < opts.dt_min {
                        return Err(Error::StepUnderflow { t, dt: h });
                    }
                }
            }
        }
        let p = power(&u)?;
        dissipated += 0.5 * opts.dt * (p + p_prev);
        p_prev = p;
        let e = gs.energy(&u)?;
        traj.times.push(t_next);
        traj.states.push(u.clone());
        traj.energies.push(e);
        traj.edb_residual.push(e - e0 + dissipated);
    }
    Ok(traj)
}

/// Pointwise integrand of the De Giorgi functional, `R(u, v) + R*(u, -DE(u))`.
pub fn degiorgi_integrand<G: GradientSystem + ?Sized>(gs: &G, u: &[f64], v: &[f64]) -> Result<f64> {
    let xi: Vec<f64> = gs.d_energy(u)?.iter().map(|x| -x).collect();
    Ok(gs.r_primal(u, v)? + gs.r_star(u, &xi))
}

/// De Giorgi dissipation of a sampled path; velocities by finite differences.
pub fn degiorgi<G: GradientSystem + ?Sized>(gs: &G, traj: &Trajectory) -> Result<f64> {
    let vel = time_derivative(&traj.times, &traj.states);
    let vals = traj
        .states
        .iter()
        .zip(&vel)
        .map(|(u, v)| degiorgi_integrand(gs, u, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&traj.times, &vals))
}

/// Time integral of `R(u, u') + R*(u, -DE(u)) + <DE(u), u'>`, nonnegative and
/// zero exactly on solutions.
pub fn rate_functional<G: GradientSystem + ?Sized>(gs: &G, traj: &Trajectory) -> Result<f64> {
    let vel = time_derivative(&traj.times, &traj.states);
    let vals = traj
        .states
        .iter()
        .zip(&vel)
        .map(|(u, v)| {
            let de = gs.d_energy(u)?;
            let xi: Vec<f64> = de.iter().map(|x| -x).collect();
            let pair: f64 = de.iter().zip(v).map(|(a, b)| a * b).sum();
            Ok(gs.r_primal(u, v)? + gs.r_star(u, &xi) + pair)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&traj.times, &vals))
}

/// `E(T) + D - E(0)` for a sampled path.
pub fn edb_gap<G: GradientSystem + ?Sized>(gs: &G, traj: &Trajectory) -> Result<f64> {
    let d = degiorgi(gs, traj)?;
    let e0 = gs.energy(&traj.states[0])?;
    let e1 = gs.energy(traj.last_state())?;
    Ok(e1 + d - e0)
}

/// `E = a (p - 1/2)^2` with `R* = xi^2 / (2a)`.
#[derive(Clone, Copy, Debug)]
pub struct TwoStateQuadratic {
    pub a: f64,
}

impl GradientSystem for TwoStateQuadratic {
    fn dim(&self) -> usize {
        1
    }
    fn constraint(&self) -> Constraint {
        Constraint::UnitInterval
    }
    fn energy(&self, u: &[f64]) -> Result<f64> {
        Ok(self.a * (u[0] - 0.5).powi(2))
    }
    fn d_energy(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![2.0 * self.a * (u[0] - 0.5)])
    }
    fn r_star(&self, _u: &[f64], xi: &[f64]) -> f64 {
        xi[0] * xi[0] / (2.0 * self.a)
    }
    fn d_r_star(&self, _u: &[f64], xi: &[f64]) -> Vec<f64> {
        vec![xi[0] / self.a]
    }
    fn r_primal(&self, _u: &[f64], v: &[f64]) -> Result<f64> {
        Ok(0.5 * self.a * v[0] * v[0])
    }
}

/// `E = a (p ln p + (1-p) ln(1-p))` with `R* = a sqrt(p(1-p)) C*(xi/a)`.
#[derive(Clone, Copy, Debug)]
pub struct TwoStateEntropic {
    pub a: f64,
}

impl GradientSystem for TwoStateEntropic {
    fn dim(&self) -> usize {
        1
    }
    fn constraint(&self) -> Constraint {
        Constraint::UnitInterval
    }
    fn energy(&self, u: &[f64]) -> Result<f64> {
        let p = u[0];
        if !(0.0..=1.0).contains(&p) {
            return domain(format!("p = {p} outside [0, 1]"));
        }
        let xlx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
        Ok(self.a * (xlx(p) + xlx(1.0 - p)))
    }
    fn d_energy(&self, u: &[f64]) -> Result<Vec<f64>> {
        let p = u[0];
        if p <= 0.0 || p >= 1.0 {
            return domain(format!("energy gradient undefined at p = {p}"));
        }
        Ok(vec![self.a * (p.ln() - (1.0 - p).ln())])
    }
    fn r_star(&self, u: &[f64], xi: &[f64]) -> f64 {
        let p = u[0];
        self.a * (p * (1.0 - p)).sqrt() * cosh_star(xi[0] / self.a)
    }
    fn d_r_star(&self, u: &[f64], xi: &[f64]) -> Vec<f64> {
        let p = u[0];
        vec![(p * (1.0 - p)).sqrt() * dcosh_star(xi[0] / self.a)]
    }
    fn r_primal(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let s = (u[0] * (1.0 - u[0])).sqrt();
        Ok(self.a * s * potentials::cosh_c(v[0] / s))
    }
}

/// One mass-action reaction `alpha -> beta` with forward/backward rates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reaction {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub k_forward: f64,
    pub k_backward: f64,
}

/// Entropic gradient structure of a detailed-balanced mass-action network
/// (reaction part only, no spatial transport).
#[derive(Clone, Debug)]
pub struct ReactionSystem {
    reactions: Vec<Reaction>,
    w: Vec<f64>,
    pair: DissipationPair,
}

fn monomial(c: &[f64], exps: &[u32]) -> f64 {
    c.iter().zip(exps).map(|(x, &e)| x.powi(e as i32)).product()
}

/// Check detailed balance and assemble the reaction gradient system.
pub fn build_reaction_gs(reactions: Vec<Reaction>, w: Vec<f64>, pair: DissipationPair) -> Result<ReactionSystem> {
    let n = w.len();
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Setup("equilibrium must be positive".into()));
    }
    for (r, rx) in reactions.iter().enumerate() {
        if rx.alpha.len() != n || rx.beta.len() != n {
            return Err(Error::Setup(format!("reaction {r}: stoichiometry length != {n}")));
        }
        if !(rx.k_forward > 0.0 && rx.k_backward > 0.0) {
            return Err(Error::Setup(format!("reaction {r}: rates must be positive")));
        }
        let f = rx.k_forward * monomial(&w, &rx.alpha);
        let b = rx.k_backward * monomial(&w, &rx.beta);
        if (f - b).abs() > 1e-10 * f.max(b) {
            return Err(Error::Setup(format!(
                "reaction {r} violates detailed balance: {f:e} vs {b:e}"
            )));
        }
    }
    Ok(ReactionSystem { reactions, w, pair })
}

impl ReactionSystem {
    /// Prefactor `H^r(c) = (B - F)/(psi*)'(ln B - ln F)` with `F = k_f c^alpha`,
    /// `B = k_b c^beta`; near equilibrium the linearization `Lambda(B, F)/(psi*)''(0)`.
    pub fn prefactor(&self, r: usize, c: &[f64]) -> f64 {
        let rx = &self.reactions[r];
        let f = rx.k_forward * monomial(c, &rx.alpha);
        let b = rx.k_backward * monomial(c, &rx.beta);
        let d = b.max(LOG_FLOOR).ln() - f.max(LOG_FLOOR).ln();
        if d.abs() < 1e-6 {
            log_mean_unchecked(b.max(LOG_FLOOR), f.max(LOG_FLOOR)) / self.pair.ddpsi_star0
        } else {
            (b - f) / self.pair.dpsi_star(d)
        }
    }

    /// Mass-action right-hand side `-sum_r (F - B)(alpha - beta)`.
    pub fn mass_action_rhs(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; c.len()];
        for rx in &self.reactions {
            let flux = rx.k_forward * monomial(c, &rx.alpha) - rx.k_backward * monomial(c, &rx.beta);
            for i in 0..c.len() {
                out[i] -= flux * (rx.alpha[i] as f64 - rx.beta[i] as f64);
            }
        }
        out
    }

    fn stoich_dot(rx: &Reaction, mu: &[f64]) -> f64 {
        mu.iter()
            .enumerate()
            .map(|(i, m)| (rx.alpha[i] as f64 - rx.beta[i] as f64) * m)
            .sum()
    }
}

impl GradientSystem for ReactionSystem {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn constraint(&self) -> Constraint {
        Constraint::Positive
    }
    fn energy(&self, c: &[f64]) -> Result<f64> {
        let mut e = 0.0;
        for (ci, wi) in c.iter().zip(&self.w) {
            e += wi * potentials::boltzmann(ci / wi)?;
        }
        Ok(e)
    }
    fn d_energy(&self, c: &[f64]) -> Result<Vec<f64>> {
        c.iter().zip(&self.w).map(|(ci, wi)| potentials::boltzmann_prime(ci / wi)).collect()
    }
    fn r_star(&self, c: &[f64], mu: &[f64]) -> f64 {
        (0..self.reactions.len())
            .map(|r| self.prefactor(r, c) * self.pair.psi_star(Self::stoich_dot(&self.reactions[r], mu)))
            .sum()
    }
    fn d_r_star(&self, c: &[f64], mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; c.len()];
        for (r, rx) in self.reactions.iter().enumerate() {
            let s = self.prefactor(r, c) * self.pair.dpsi_star(Self::stoich_dot(rx, mu));
            for i in 0..c.len() {
                out[i] += s * (rx.alpha[i] as f64 - rx.beta[i] as f64);
            }
        }
        out
    }
}

/// Output of the wiggly-energy demo.
#[derive(Clone, Debug, Serialize)]
pub struct WigglyReport {
    pub times: Vec<f64>,
    pub load: Vec<f64>,
    pub u: Vec<f64>,
    /// Play-operator solution driven by the same load.
    pub play: Vec<f64>,
    pub sup_gap_to_play: f64,
}

/// Play operator with threshold `r` applied to a sampled load, started at `z0`.
pub fn play_operator(load: &[f64], r: f64, z0: f64) -> Vec<f64> {
    let mut z = z0;
    load.iter()
        .map(|&l| {
            z = z.clamp(l - r, l + r);
            z
        })
        .collect()
}

/// Integrate `eps u' = -(u - l(t) + r cos(u/eps))` from `u(0) = 0`, sampling
/// every `sample_dt`, and compare with the play operator.
pub fn demo_wiggly<L>(eps: f64, r: f64, load: L, t_end: f64, sample_dt: f64) -> Result<WigglyReport>
where
    L: Fn(f64) -> f64,
{
    if !(eps > 0.0 && eps <= 1.0) {
        return domain("wiggly demo needs eps in (0, 1]");
    }
    let rhs = |t: f64, u: f64| -(u - load(t) + r * (u / eps).cos()) / eps;
    let step = |t: f64, u: f64, h: f64| {
        let k1 = rhs(t, u);
        let k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1);
        let k3 = rhs(t + 0.5 * h, u + 0.5 * h * k2);
        let k4 = rhs(t + h, u + h * k3);
        u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let tol = 1e-10;
    let dt_min = 1e-14;
    let n = (t_end / sample_dt).round() as usize;
    let mut times = vec![0.0];
    let mut us = vec![0.0];
    let mut u = 0.0;
    let mut h = sample_dt.min(eps);
    for k in 1..=n {
        let (t0, t1) = ((k - 1) as f64 * sample_dt, k as f64 * sample_dt);
        let mut t = t0;
        while t < t1 - 1e-14 {
            h = h.min(t1 - t);
            let full = step(t, u, h);
            let half = step(t + 0.5 * h, step(t, u, 0.5 * h), 0.5 * h);
            let err = (full - half).abs();
            if err <= tol && half.is_finite() {
                u = half;
                t += h;
                if err < tol / 64.0 {
                    h *= 2.0;
                }
            } else {
                h *= 0.5;
                if h < dt_min {
                    return Err(Error::StepUnderflow { t, dt: h });
                }
            }
        }
        times.push(t1);
        us.push(u);
    }
    let load_s: Vec<f64> = times.iter().map(|&t| load(t)).collect();
    let play = play_operator(&load_s, r, 0.0);
    let sup_gap_to_play = us.iter().zip(&play).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(WigglyReport { times, load: load_s, u: us, play, sup_gap_to_play })
}

/// Width in load of the hysteresis loop at level `u = level`: the difference
/// between the load at which the rising branch and the falling branch cross it.
pub fn hysteresis_width(load: &[f64], u: &[f64], level: f64) -> Option<f64> {
    let mut rising = None;
    let mut falling = None;
    for k in 1..u.len() {
        let (a, b) = (u[k - 1] - level, u[k] - level);
        if a == b || a * b > 0.0 || (a == 0.0 && k > 1) {
            continue;
        }
        let s = a / (a - b);
        let l = load[k - 1] + s * (load[k] - load[k - 1]);
        if b > a {
            rising = Some(l);
        } else {
            falling = Some(l);
        }
    }
    Some(rising? - falling?)
}

/// Outcome of the two-structures demo at one scale.
#[derive(Clone, Debug, Serialize)]
pub struct TwoStructuresRow {
    pub eps: f64,
    /// min over x of u(t,x)/u0(x)
    pub min_ratio: f64,
    /// max over x of u(t,x)/u0(x)
    pub max_ratio: f64,
    /// `E_eps(u_eps) - E_0(u)` for data concentrated at the minimizer of the coefficient
    pub e_gap_min_seq: f64,
    /// `Ehat_eps(u_eps) - Ehat_0(u)` for the same data
    pub ehat_gap_min_seq: f64,
    /// `Ehat_eps - Ehat_0` for data concentrated at the maximizer
    pub ehat_gap_max_seq: f64,
    /// `E_eps - E_0` for data concentrated at the maximizer
    pub e_gap_max_seq: f64,
}

/// Evolve `u' = -a(x/eps) u` on `[0, 1]` and test recovery sequences for the
/// two energies `int a_eps u` and `int u / a_eps`.
///
/// `points_per_period` controls the x-grid; `y_min`, `y_max` locate the
/// extrema of `a` in the unit period.
pub fn demo_two_structures<A>(
    a: A,
    y_min: f64,
    y_max: f64,
    eps_list: &[f64],
    t: f64,
    points_per_period: usize,
) -> Result<Vec<TwoStructuresRow>>
where
    A: Fn(f64) -> f64 + Sync,
{
    let a_min = a(y_min);
    let a_max = a(y_max);
    if !(a_min > 0.0 && a_max >= a_min) {
        return domain("coefficient must satisfy 0 < a_min <= a_max");
    }
    let u0 = |x: f64| 1.0 + 0.5 * (std::f64::consts::PI * x).cos();
    let mass_u: f64 = numerics::gauss_legendre(u0, 0.0, 1.0, 8);
    let mut rows = Vec::new();
    for &eps in eps_list {
        let n = ((points_per_period as f64) / eps).ceil() as usize;
        let xs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let mut min_ratio = f64::INFINITY;
        let mut max_ratio = 0.0f64;
        for &x in &xs {
            // pointwise linear ODE: exact propagator
            let ratio = (-a(x / eps) * t).exp();
            min_ratio = min_ratio.min(ratio);
            max_ratio = max_ratio.max(ratio);
        }
        // concentration width shrinks with eps
        let kappa = 1.0 / eps.sqrt();
        let bump = |y: f64, y0: f64| (kappa * ((2.0 * std::f64::consts::PI * (y - y0)).cos() - 1.0)).exp();
        let norm = |y0: f64| numerics::gauss_legendre(|y| bump(y, y0), 0.0, 1.0, 64);
        let (nmin, nmax) = (norm(y_min), norm(y_max));
        let h = 1.0 / n as f64;
        let mut sums = [0.0f64; 4];
        for &x in &xs {
            let y = x / eps;
            let ay = a(y);
            let umin = u0(x) * bump(y, y_min) / nmin;
            let umax = u0(x) * bump(y, y_max) / nmax;
            sums[0] += h * ay * umin;
            sums[1] += h * umin / ay;
            sums[2] += h * ay * umax;
            sums[3] += h * umax / ay;
        }
        rows.push(TwoStructuresRow {
            eps,
            min_ratio,
            max_ratio,
            e_gap_min_seq: sums[0] - a_min * mass_u,
            ehat_gap_min_seq: sums[1] - mass_u / a_max,
            e_gap_max_seq: sums[2] - a_min * mass_u,
            ehat_gap_max_seq: sums[3] - mass_u / a_max,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(t: f64) -> f64 {
        0.5 + 0.4 * (-2.0 * t).exp()
    }

    #[test]
    fn two_state_trajectories_match_closed_form() {
        let opts = EvolveOptions::rk4(3.0, 1e-3);
        for gs in [&TwoStateQuadratic { a: 1.0 } as &dyn GradientSystem, &TwoStateEntropic { a: 0.5 }] {
            let tr = evolve(gs, &[0.9], &opts).unwrap();
            let err = tr.times.iter().zip(&tr.states).fold(0.0f64, |m, (t, u)| m.max((u[0] - exact(*t)).abs()));
            assert!(err < 1e-6, "err {err}");
            for w in tr.energies.windows(2) {
                assert!(w[1] <= w[0] + 1e-8);
            }
        }
    }

    #[test]
    fn implicit_euler_converges() {
        let gs = TwoStateEntropic { a: 0.5 };
        let tr = evolve(&gs, &[0.9], &EvolveOptions::implicit(1.0, 1e-3)).unwrap();
        // first order: error ~ dt
        assert!((tr.last_state()[0] - exact(1.0)).abs() < 1e-3);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let gs = TwoStateEntropic { a: 0.5 };
        let tr = evolve(&gs, &[0.5], &EvolveOptions::rk4(1.0, 1e-2)).unwrap();
        assert!(tr.states.iter().all(|u| (u[0] - 0.5).abs() < 1e-15));
        assert!(degiorgi(&gs, &tr).unwrap().abs() < 1e-14);
        assert!(rate_functional(&gs, &tr).unwrap().abs() < 1e-14);
    }

    #[test]
    fn edb_and_rate_functional() {
        let gs = TwoStateEntropic { a: 0.5 };
        let tr = evolve(&gs, &[0.9], &EvolveOptions::rk4(2.0, 1e-3)).unwrap();
        assert!(edb_gap(&gs, &tr).unwrap().abs() < 1e-4);
        assert!(rate_functional(&gs, &tr).unwrap().abs() < 1e-4);
        assert!(tr.edb_residual.last().unwrap().abs() < 1e-6);
        assert!(rate_functional(&gs, &tr.reversed()).unwrap() > 1e-2);
        // frozen non-solution
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let states = vec![vec![0.9]; times.len()];
        let frozen = Trajectory::from_samples(&gs, times, states).unwrap();
        assert!(edb_gap(&gs, &frozen).unwrap() > 1e-3);
    }

    #[test]
    fn numeric_primal_matches_closed_form() {
        let gs = TwoStateEntropic { a: 0.5 };
        for &(p, v) in &[(0.3, 0.2), (0.8, -1.5), (0.5, 3.0)] {
            let num = numeric_primal(&gs, &[p], &[v]).unwrap();
            assert!((num - gs.r_primal(&[p], &[v]).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn single_reaction_matches_explicit_form() {
        let rx = Reaction { alpha: vec![1, 0], beta: vec![0, 1], k_forward: 1.0, k_backward: 1.0 };
        let cosh = build_reaction_gs(vec![rx.clone()], vec![0.5, 0.5], DissipationPair::cosh()).unwrap();
        let quad = build_reaction_gs(vec![rx], vec![0.5, 0.5], DissipationPair::quadratic()).unwrap();
        for &(c1, c2) in &[(0.2, 0.7), (1.3, 0.1), (0.5, 0.5), (0.4, 0.4 + 1e-9)] {
            let c = [c1, c2];
            let mu = [0.3, -1.1];
            let rs = cosh.r_star(&c, &mu);
            assert!((rs - (c1 * c2).sqrt() * cosh_star(mu[1] - mu[0])).abs() < 1e-12);
            let f = cosh.field(&c).unwrap();
            let g = quad.field(&c).unwrap();
            for i in 0..2 {
                let want = if i == 0 { c2 - c1 } else { c1 - c2 };
                assert!((f[i] - want).abs() < 1e-12);
                assert!((g[i] - want).abs() < 1e-12);
            }
        }
        let eq = cosh.field(&[0.5, 0.5]).unwrap();
        assert!(eq.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn detailed_balance_violation_rejected() {
        let rx = Reaction { alpha: vec![1, 0], beta: vec![0, 1], k_forward: 2.0, k_backward: 1.0 };
        assert!(build_reaction_gs(vec![rx], vec![0.5, 0.5], DissipationPair::cosh()).is_err());
    }

    fn dimerization() -> ReactionSystem {
        // 2 A <-> B and A + B <-> C with w = (1, 2, 0.5)
        let w = vec![1.0, 2.0, 0.5];
        let r1 = Reaction { alpha: vec![2, 0, 0], beta: vec![0, 1, 0], k_forward: 2.0, k_backward: 1.0 };
        let r2 = Reaction { alpha: vec![1, 1, 0], beta: vec![0, 0, 1], k_forward: 0.75, k_backward: 3.0 };
        build_reaction_gs(vec![r1, r2], w, DissipationPair::cosh()).unwrap()
    }

    proptest! {
        #[test]
        fn reaction_field_is_mass_action(c in proptest::collection::vec(0.05f64..3.0, 3)) {
            let gs = dimerization();
            let f = gs.field(&c).unwrap();
            let m = gs.mass_action_rhs(&c);
            for i in 0..3 {
                prop_assert!((f[i] - m[i]).abs() <= 1e-10 * (1.0 + m[i].abs()));
            }
        }

        #[test]
        fn fenchel_statement_iii(p in 0.02f64..0.98) {
            let gs = TwoStateEntropic { a: 0.5 };
            let xi = -gs.d_energy(&[p]).unwrap()[0];
            let v = gs.d_r_star(&[p], &[xi])[0];
            let gap = numeric_primal(&gs, &[p], &[v]).unwrap() + gs.r_star(&[p], &[xi]) - xi * v;
            prop_assert!(gap.abs() <= 1e-6);
        }

        #[test]
        fn r_star_axioms(c in proptest::collection::vec(0.05f64..3.0, 3), dir in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let gs = dimerization();
            prop_assert_eq!(gs.r_star(&c, &[0.0; 3]), 0.0);
            prop_assert!(gs.d_r_star(&c, &[0.0; 3]).iter().all(|x| x.abs() < 1e-15));
            let at = |s: f64| gs.r_star(&c, &dir.iter().map(|d| s * d).collect::<Vec<_>>());
            for k in -5..5 {
                let s = k as f64 * 0.3;
                prop_assert!(at(s + 0.3) - 2.0 * at(s) + at(s - 0.3) >= -1e-10);
            }
        }

        #[test]
        fn rate_functional_nonnegative(
            p0 in 0.1f64..0.9,
            amp in -0.08f64..0.08,
            freq in 0.5f64..4.0,
            slope in -0.2f64..0.2,
        ) {
            let gs = TwoStateEntropic { a: 0.5 };
            let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.005).collect();
            let states: Vec<Vec<f64>> = times
                .iter()
                .map(|&t| vec![p0 + slope * t * (1.0 - p0) * p0 + amp * (freq * t).sin()])
                .collect();
            prop_assume!(states.iter().all(|u| u[0] > 0.01 && u[0] < 0.99));
            let tr = Trajectory::from_samples(&gs, times, states).unwrap();
            prop_assert!(rate_functional(&gs, &tr).unwrap() >= -1e-8);
        }
    }

    #[test]
    fn wiggly_monotone_loading_follows_play() {
        let rep = demo_wiggly(1e-3, 0.5, |t| t, 2.0, 1e-3).unwrap();
        assert!(rep.sup_gap_to_play < 2e-2, "gap {}", rep.sup_gap_to_play);
        let free = demo_wiggly(1e-3, 0.0, |t| t, 1.0, 1e-3).unwrap();
        let lag = free.u.iter().zip(&free.load).fold(0.0f64, |m, (u, l)| m.max((u - l).abs()));
        assert!(lag < 2e-3);
    }

    #[test]
    fn wiggly_hysteresis_loop() {
        let tri = |t: f64| if t < 2.0 { t } else if t < 6.0 { 4.0 - t } else { t - 8.0 };
        let rep = demo_wiggly(1e-3, 0.5, tri, 8.0, 1e-3).unwrap();
        let w = hysteresis_width(&rep.load, &rep.u, 0.0).unwrap();
        assert!((w - 1.0).abs() < 0.05, "width {w}");
    }

    #[test]
    fn two_structures_envelopes_and_exclusivity() {
        let a = |y: f64| 2.0 + (2.0 * std::f64::consts::PI * y).sin();
        let rows = demo_two_structures(a, 0.75, 0.25, &[0.1, 0.01], 1.0, 200).unwrap();
        let last = rows.last().unwrap();
        assert!((last.min_ratio / (-3f64).exp() - 1.0).abs() < 1e-2);
        assert!((last.max_ratio / (-1f64).exp() - 1.0).abs() < 1e-2);
        assert!(rows[1].e_gap_min_seq.abs() < rows[0].e_gap_min_seq.abs());
        assert!(last.ehat_gap_min_seq > 0.1);
        assert!(last.e_gap_max_seq > 0.5);
        let flat = demo_two_structures(|_| 2.0, 0.0, 0.5, &[0.1], 1.0, 10).unwrap();
        assert!((flat[0].min_ratio - flat[0].max_ratio).abs() < 1e-15);
    }
}
