//! The three-state family whose middle state is visited ever more briefly as
//! `eps -> 0`, its `(phi, psi)` gradient structures, and the reduced
//! two-state limit quantities obtained by EDP-convergence.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gradsys::{evolve, Constraint, EvolveOptions, GradientSystem, Trajectory};
use crate::numerics::{golden_min, log_space, time_derivative, trapezoid};
use crate::potentials::{cosh_star, inf_convolution_cosh, inf_convolution_numeric, log_mean_unchecked, DissipationPair, EntropyDensity, PairKind};

/// The three combinations of entropy density and dissipation treated in detail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// `phi = r^2/2`, `psi = v^2/2`
    Quadratic,
    /// Boltzmann entropy with `psi* = C*`
    Cosh,
    /// Boltzmann entropy with `psi* = xi^2/2`
    EntropicQuadratic,
}

impl std::str::FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "cosh" => Ok(Self::Cosh),
            "entropic-quadratic" => Ok(Self::EntropicQuadratic),
            other => Err(Error::Setup(format!("unknown case {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FamilyConfig {
    pub phi: EntropyDensity,
    pub pair: DissipationPair,
    pub eps: f64,
}

impl FamilyConfig {
    pub fn new(case: Case, eps: f64) -> Self {
        let (phi, pair) = match case {
            Case::Quadratic => (EntropyDensity::Quadratic, DissipationPair::quadratic()),
            Case::Cosh => (EntropyDensity::Boltzmann, DissipationPair::cosh()),
            Case::EntropicQuadratic => (EntropyDensity::Boltzmann, DissipationPair::quadratic()),
        };
        Self { phi, pair, eps }
    }
}

/// `(r - s)/(phi'(r) - phi'(s))`, evaluated without cancellation.
fn secant_inverse(phi: EntropyDensity, r: f64, s: f64) -> f64 {
    match phi {
        EntropyDensity::Quadratic => 1.0,
        EntropyDensity::Boltzmann => log_mean_unchecked(r, s),
    }
}

/// `d / (psi*)'(d)`, continuous at 0 with value `1/(psi*)''(0)`.
fn force_ratio(pair: &DissipationPair, d: f64) -> f64 {
    if d.abs() < 1e-6 {
        return match pair.kind {
            PairKind::Cosh => {
                let h = 0.5 * d;
                1.0 / (1.0 + h * h / 6.0)
            }
            _ => 1.0 / pair.ddpsi_star0,
        };
    }
    d / pair.dpsi_star(d)
}

/// Mobility `(r - s)/(psi*)'(phi'(r) - phi'(s))` linking two relative densities.
fn edge_mobility(phi: EntropyDensity, pair: &DissipationPair, r: f64, s: f64) -> Result<f64> {
    if (r <= 0.0 || s <= 0.0) && phi == EntropyDensity::Boltzmann {
        return domain("mobility needs positive relative densities");
    }
    let d = phi.dphi(r)? - phi.dphi(s)?;
    Ok(secant_inverse(phi, r, s) * force_ratio(pair, d))
}

/// Gradient system of the family at fixed `eps` on the 3-simplex.
#[derive(Clone, Debug)]
pub struct FamilyGs {
    cfg: FamilyConfig,
    w: [f64; 3],
}

pub fn family_gs(cfg: FamilyConfig) -> Result<FamilyGs> {
    if !(cfg.eps > 0.0 && cfg.eps <= 1.0) {
        return domain(format!("eps = {} outside (0, 1]", cfg.eps));
    }
    let s = 2.0 + cfg.eps;
    let w = [1.0 / s, cfg.eps / s, 1.0 / s];
    Ok(FamilyGs { cfg, w })
}

impl FamilyGs {
    pub fn equilibrium(&self) -> [f64; 3] {
        self.w
    }

    /// Edge mobilities `(a_1, a_2)` for the edges 1-2 and 2-3.
    pub fn mobilities(&self, u: &[f64]) -> Result<[f64; 2]> {
        let f: Vec<f64> = (0..3).map(|i| u[i] / self.w[i]).collect();
        Ok([
            edge_mobility(self.cfg.phi, &self.cfg.pair, f[1], f[0])?,
            edge_mobility(self.cfg.phi, &self.cfg.pair, f[2], f[1])?,
        ])
    }

    /// Right-hand side `(2+eps) M u` of the linear equation.
    pub fn linear_rhs(&self, u: &[f64]) -> [f64; 3] {
        let e = self.cfg.eps;
        let s = 2.0 + e;
        [
            s * (-u[0] + u[1] / e),
            s * (u[0] - 2.0 * u[1] / e + u[2]),
            s * (u[1] / e - u[2]),
        ]
    }

    /// Primal potential in closed form,
    /// `a_1 psi(v_1/a_1) + a_2 psi(v_3/a_2)` for tangent `v`.
    pub fn r_eps_primal(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let a = self.mobilities(u)?;
        let term = |aj: f64, vj: f64| {
            if aj == 0.0 {
                if vj == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                aj * self.cfg.pair.psi(vj / aj)
            }
        };
        Ok(term(a[0], v[0]) + term(a[1], v[2]))
    }
}

impl GradientSystem for FamilyGs {
    fn dim(&self) -> usize {
        3
    }
    fn constraint(&self) -> Constraint {
        Constraint::Simplex
    }
    fn energy(&self, u: &[f64]) -> Result<f64> {
        let mut e = 0.0;
        for i in 0..3 {
            e += self.w[i] * self.cfg.phi.phi(u[i] / self.w[i])?;
        }
        Ok(e)
    }
    fn d_energy(&self, u: &[f64]) -> Result<Vec<f64>> {
        (0..3).map(|i| self.cfg.phi.dphi(u[i] / self.w[i])).collect()
    }
    fn r_star(&self, u: &[f64], xi: &[f64]) -> f64 {
        match self.mobilities(u) {
            Ok(a) => a[0] * self.cfg.pair.psi_star(xi[1] - xi[0]) + a[1] * self.cfg.pair.psi_star(xi[2] - xi[1]),
            Err(_) => f64::NAN,
        }
    }
    fn d_r_star(&self, u: &[f64], xi: &[f64]) -> Vec<f64> {
        let a = match self.mobilities(u) {
            Ok(a) => a,
            Err(_) => return vec![f64::NAN; 3],
        };
        let j1 = a[0] * self.cfg.pair.dpsi_star(xi[1] - xi[0]);
        let j2 = a[1] * self.cfg.pair.dpsi_star(xi[2] - xi[1]);
        vec![-j1, j1 - j2, j2]
    }
    fn r_primal(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.r_eps_primal(u, v)
    }
}

/// Reduced limit quantities on `p in (0, 1)`.
#[derive(Clone, Debug)]
pub struct ReducedQuantities {
    phi: EntropyDensity,
    pair: DissipationPair,
    case: Option<Case>,
}

/// Scan range and resolution for the optimizations over `z > 0`.
const Z_LO: f64 = 1e-6;
const Z_HI: f64 = 1e6;
const Z_POINTS: usize = 61;
const Z_EXTEND: f64 = 1e3;
const Z_MAX: f64 = 1e300;
const Z_MIN: f64 = 1e-300;

pub fn reduced(cfg: &FamilyConfig) -> ReducedQuantities {
    let case = match (cfg.phi, cfg.pair.kind) {
        (EntropyDensity::Quadratic, PairKind::Quadratic) => Some(Case::Quadratic),
        (EntropyDensity::Boltzmann, PairKind::Cosh) => Some(Case::Cosh),
        (EntropyDensity::Boltzmann, PairKind::Quadratic) => Some(Case::EntropicQuadratic),
        _ => None,
    };
    ReducedQuantities { phi: cfg.phi, pair: cfg.pair.clone(), case }
}

/// Maximize `f(z)` over `z > 0` by a log-grid scan, widening the range while
/// the best grid point sits on its boundary, then golden section in `ln z`.
fn sup_over_z<F: Fn(f64) -> f64>(f: F) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (Z_LO, Z_HI);
    loop {
        let grid = log_space(lo, hi, Z_POINTS);
        let vals: Vec<f64> = grid.iter().map(|&z| f(z)).collect();
        let (k, &best) = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::NoConvergence("objective not finite on the z grid".into()))?;
        if k == Z_POINTS - 1 && hi < Z_MAX && vals[k] > vals[k - 1] {
            lo = grid[Z_POINTS - 3];
            hi = (hi * Z_EXTEND).min(Z_MAX);
            continue;
        }
        if k == 0 && lo > Z_MIN && vals[0] > vals[1] {
            hi = grid[2];
            lo = (lo / Z_EXTEND).max(Z_MIN);
            continue;
        }
        let a = grid[k.saturating_sub(1)].ln();
        let b = grid[(k + 1).min(Z_POINTS - 1)].ln();
        let (x, v) = golden_min(|s| -f(s.exp()), a, b, 1e-12);
        let v = -v;
        return Ok(if v >= best { (x.exp(), v) } else { (grid[k], best) });
    }
}

impl ReducedQuantities {
    pub fn case(&self) -> Option<Case> {
        self.case
    }

    /// `a_hat(p, r) = (2p - r)/(psi*)'(phi'(2p) - phi'(r))`.
    pub fn a_hat(&self, p: f64, r: f64) -> f64 {
        edge_mobility(self.phi, &self.pair, 2.0 * p, r).unwrap_or(f64::NAN)
    }

    /// `Sigma(p, z)`.
    pub fn sigma_pz(&self, p: f64, z: f64) -> f64 {
        let dz = self.phi.dphi(z).unwrap_or(f64::NAN);
        let d0 = self.phi.dphi(2.0 * p).unwrap_or(f64::NAN) - dz;
        let d1 = self.phi.dphi(2.0 - 2.0 * p).unwrap_or(f64::NAN) - dz;
        self.a_hat(p, z) * self.pair.psi_star(d0) + self.a_hat(1.0 - p, z) * self.pair.psi_star(d1)
    }

    /// `sigma(p) = inf_z Sigma(p, z)` and the minimizing `z`.
    pub fn sigma_with_argmin(&self, p: f64) -> Result<(f64, f64)> {
        let (z, v) = sup_over_z(|z| -self.sigma_pz(p, z))?;
        Ok((-v, z))
    }

    pub fn sigma(&self, p: f64) -> Result<f64> {
        self.sigma_with_argmin(p).map(|x| x.0)
    }

    /// `inf_tau (a_hat(p,z) psi*(eta - tau) + a_hat(1-p,z) psi*(tau))` by golden section.
    pub fn inner_inf(&self, p: f64, z: f64, eta: f64) -> f64 {
        let a = self.a_hat(p, z);
        let b = self.a_hat(1.0 - p, z);
        inf_convolution_numeric(|t| a * self.pair.psi_star(t), |t| b * self.pair.psi_star(t), eta, 1e-13)
    }

    /// Same inner infimum using the closed forms available for quadratic and
    /// cosh duals.
    fn inner_inf_fast(&self, p: f64, z: f64, eta: f64) -> f64 {
        let a = self.a_hat(p, z);
        let b = self.a_hat(1.0 - p, z);
        match self.pair.kind {
            PairKind::Quadratic => a * b / (2.0 * (a + b)) * eta * eta,
            PairKind::Cosh => inf_convolution_cosh(a, b, eta),
            PairKind::Custom => self.inner_inf(p, z, eta),
        }
    }

    fn r_star_impl(&self, p: f64, eta: f64, fast: bool) -> Result<f64> {
        let sigma = self.sigma(p)?;
        let (_, v) = sup_over_z(|z| {
            let inner = if fast { self.inner_inf_fast(p, z, eta) } else { self.inner_inf(p, z, eta) };
            inner - self.sigma_pz(p, z)
        })?;
        Ok(sigma + v)
    }

    /// Generic evaluator of the reduced dual potential: golden section for
    /// the inner infimum, log-grid scan plus refinement for the outer supremum.
    pub fn r_star(&self, p: f64, eta: f64) -> Result<f64> {
        self.r_star_impl(p, eta, false)
    }

    /// Reduced dual potential with the inner infimum in closed form where
    /// one exists; used for large sweeps.
    pub fn r_star_fast(&self, p: f64, eta: f64) -> Result<f64> {
        self.r_star_impl(p, eta, true)
    }

    /// Closed-form `(sigma, R*)` for the two cases where they are known.
    pub fn closed_form(&self, p: f64, eta: f64) -> Option<(f64, f64)> {
        match self.case? {
            Case::Quadratic => Some(((1.0 - 2.0 * p).powi(2), 0.25 * eta * eta)),
            Case::Cosh => {
                let s = 2.0 * (p.sqrt() - (1.0 - p).sqrt()).powi(2);
                Some((s, (p * (1.0 - p)).sqrt() * cosh_star(eta)))
            }
            Case::EntropicQuadratic => None,
        }
    }

    /// `E(p) = phi(2p)/2 + phi(2-2p)/2`.
    pub fn energy(&self, p: f64) -> Result<f64> {
        Ok(0.5 * self.phi.phi(2.0 * p)? + 0.5 * self.phi.phi(2.0 - 2.0 * p)?)
    }

    pub fn d_energy(&self, p: f64) -> Result<f64> {
        Ok(self.phi.dphi(2.0 * p)? - self.phi.dphi(2.0 - 2.0 * p)?)
    }

    /// `m(p, v)` together with its minimizing `z`.
    pub fn m_with_argmin(&self, p: f64, v: f64) -> Result<(f64, f64)> {
        let (z, val) = sup_over_z(|z| {
            let a = self.a_hat(p, z);
            let b = self.a_hat(1.0 - p, z);
            -(a * self.pair.psi(v / a) + b * self.pair.psi(v / b) + self.sigma_pz(p, z))
        })?;
        Ok((-val, z))
    }

    pub fn m(&self, p: f64, v: f64) -> Result<f64> {
        self.m_with_argmin(p, v).map(|x| x.0)
    }

    /// Reduced primal potential `R(p, v) = m(p, v) - sigma(p)`.
    pub fn r_primal(&self, p: f64, v: f64) -> Result<f64> {
        Ok(self.m(p, v)? - self.sigma(p)?)
    }

    /// `M_0 = R(p, v) + R*(p, -E'(p))`.
    pub fn m0(&self, p: f64, v: f64) -> Result<f64> {
        Ok(self.r_primal(p, v)? + self.r_star_fast(p, -self.d_energy(p)?)?)
    }

    /// Limit field `D_eta R*(p, -E'(p))` by a central difference.
    pub fn limit_field(&self, p: f64) -> Result<f64> {
        let eta = -self.d_energy(p)?;
        let h = 1e-4 * (1.0 + eta.abs());
        Ok((self.r_star_fast(p, eta + h)? - self.r_star_fast(p, eta - h)?) / (2.0 * h))
    }

    /// Recovery-sequence correction: `zeta = z*/2` with `z*` the minimizer in `m(p, v)`.
    pub fn recovery_zeta(&self, p: f64, v: f64) -> Result<f64> {
        Ok(0.5 * self.m_with_argmin(p, v)?.1)
    }
}

/// Well-prepared initial state `(p, 0, 1-p) + eps zeta (-p, 1, p-1)`.
pub fn recovery_state(p: f64, eps: f64, zeta: f64) -> [f64; 3] {
    [p - eps * zeta * p, eps * zeta, 1.0 - p - eps * zeta * (1.0 - p)]
}

/// Solution of the limit equation `p' = 1 - 2p`.
pub fn limit_solution(p0: f64, t: f64) -> f64 {
    0.5 + (p0 - 0.5) * (-2.0 * t).exp()
}

/// Growth diagnostics of the reduced dual potential.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub p: f64,
    pub eta: Vec<f64>,
    pub r_star: Vec<f64>,
    /// `R*(p, 2 eta)/R*(p, eta)` at each grid point
    pub doubling_ratio: Vec<f64>,
    /// smallest grid eta from which every doubling ratio is at least 8
    pub superquadratic_from: Option<f64>,
    pub b: f64,
    /// `0.5 (1/(4b) - b) eta e^{b eta}` at each grid point
    pub lower_bound: Vec<f64>,
}

/// Evaluate the entropic-quadratic reduced `R*` on `eta_grid` (and at twice
/// each value) and compare with the exponential lower bound.
pub fn entropic_quadratic_growth(p: f64, eta_grid: &[f64], b: f64) -> Result<GrowthReport> {
    if !(p > 0.0 && p < 1.0) {
        return domain("p must lie in (0, 1)");
    }
    if eta_grid.iter().any(|&e| e > 40.0) || eta_grid.windows(2).any(|w| w[1] <= w[0]) {
        return domain("eta grid must be increasing with max <= 40");
    }
    let rq = reduced(&FamilyConfig::new(Case::EntropicQuadratic, 1.0));
    let mut r_star = Vec::new();
    let mut ratio = Vec::new();
    let mut lower = Vec::new();
    for &eta in eta_grid {
        let r1 = rq.r_star_fast(p, eta)?;
        let r2 = rq.r_star_fast(p, 2.0 * eta)?;
        r_star.push(r1);
        ratio.push(if r1 > 0.0 { r2 / r1 } else { f64::NAN });
        let growth = (b * eta).exp();
        if !growth.is_finite() {
            return Err(Error::OutOfRange(format!("e^(b eta) overflows at eta = {eta}")));
        }
        lower.push(0.5 * (1.0 / (4.0 * b) - b) * eta * growth);
    }
    let mut from = None;
    for k in (0..eta_grid.len()).rev() {
        if ratio[k] >= 8.0 {
            from = Some(eta_grid[k]);
        } else {
            break;
        }
    }
    Ok(GrowthReport { p, eta: eta_grid.to_vec(), r_star, doubling_ratio: ratio, superquadratic_from: from, b, lower_bound: lower })
}

/// One row of the EDP sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub sup_error: f64,
    pub dissipation_eps: f64,
    pub dissipation_limit: f64,
    pub dissipation_gap: f64,
    pub energy_gap_initial: f64,
}

/// Evolve the family from recovery data at each `eps`, and compare with the
/// limit `p' = 1 - 2p`.
///
/// The limit dissipation is taken as `E(p0) - E(p(T))`, which equals the
/// reduced De Giorgi functional on limit solutions.
pub fn edp_sweep(case: Case, eps_list: &[f64], p0: f64, t_end: f64, dt: f64) -> Result<Vec<SweepRow>> {
    let rq = reduced(&FamilyConfig::new(case, 1.0));
    let zeta = rq.recovery_zeta(p0, 1.0 - 2.0 * p0)?;
    let d0 = rq.energy(p0)? - rq.energy(limit_solution(p0, t_end))?;
    let mut rows = Vec::new();
    for &eps in eps_list {
        let gs = family_gs(FamilyConfig::new(case, eps))?;
        let u0 = recovery_state(p0, eps, zeta);
        let traj = evolve(&gs, &u0, &EvolveOptions::rk4(t_end, dt))?;
        let sup_error = traj
            .times
            .iter()
            .zip(&traj.states)
            .fold(0.0f64, |m, (t, u)| m.max((u[0] - limit_solution(p0, *t)).abs()));
        let d_eps = family_dissipation(&gs, &traj)?;
        rows.push(SweepRow {
            eps,
            sup_error,
            dissipation_eps: d_eps,
            dissipation_limit: d0,
            dissipation_gap: (d_eps - d0).abs(),
            energy_gap_initial: (gs.energy(&u0)? - rq.energy(p0)?).abs(),
        });
    }
    Ok(rows)
}

/// De Giorgi functional of the family along a sampled path using the closed-form primal potential.
pub fn family_dissipation(gs: &FamilyGs, traj: &Trajectory) -> Result<f64> {
    let vel = time_derivative(&traj.times, &traj.states);
    let vals = traj
        .states
        .iter()
        .zip(&vel)
        .map(|(u, v)| {
            let xi: Vec<f64> = gs.d_energy(u)?.iter().map(|x| -x).collect();
            Ok(gs.r_eps_primal(u, v)? + gs.r_star(u, &xi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&traj.times, &vals))
}

/// Reduced De Giorgi functional `int M_0(p, p') dt` along the limit solution,
/// sampled at `n` intervals.
pub fn limit_dissipation(rq: &ReducedQuantities, p0: f64, t_end: f64, n: usize) -> Result<f64> {
    let times: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
    let vals = times
        .iter()
        .map(|&t| {
            let p = limit_solution(p0, t);
            rq.m0(p, 1.0 - 2.0 * p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(simpson(&times, &vals))
}

fn simpson(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() - 1;
    if n % 2 == 1 {
        return trapezoid(t, y);
    }
    let h = (t[n] - t[0]) / n as f64;
    let mut s = y[0] + y[n];
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * y[k];
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradsys::numeric_primal;
    use proptest::prelude::*;

    const CASES: [Case; 3] = [Case::Quadratic, Case::Cosh, Case::EntropicQuadratic];

    #[test]
    fn field_matches_linear_equation() {
        for case in CASES {
            let gs = family_gs(FamilyConfig::new(case, 0.3)).unwrap();
            for u in [[0.2, 0.3, 0.5], [0.7, 0.05, 0.25], [0.4, 1e-3, 0.599]] {
                let f = gs.field(&u).unwrap();
                let m = gs.linear_rhs(&u);
                for i in 0..3 {
                    assert!((f[i] - m[i]).abs() < 1e-9 * (1.0 + m[i].abs()), "{case:?} {u:?}");
                }
            }
            let eq = gs.field(&gs.equilibrium()).unwrap();
            assert!(eq.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn boundary_state_rejected_for_entropy() {
        let gs = family_gs(FamilyConfig::new(Case::Cosh, 0.1)).unwrap();
        assert!(gs.d_energy(&[0.5, 0.0, 0.5]).is_err());
    }

    #[test]
    fn primal_matches_numeric_conjugate() {
        for case in CASES {
            let gs = family_gs(FamilyConfig::new(case, 0.2)).unwrap();
            let u = [0.3, 0.1, 0.6];
            assert_eq!(gs.r_eps_primal(&u, &[0.0; 3]).unwrap(), 0.0);
            for v in [[0.2, -0.5, 0.3], [-1.0, 0.4, 0.6], [0.05, 0.0, -0.05]] {
                let closed = gs.r_eps_primal(&u, &v).unwrap();
                let num = numeric_primal(&gs, &u, &v).unwrap();
                assert!((closed - num).abs() < 1e-7 * (1.0 + closed), "{case:?}: {closed} vs {num}");
            }
        }
        let gs = family_gs(FamilyConfig::new(Case::Quadratic, 0.2)).unwrap();
        let u = [0.3, 0.1, 0.6];
        let a = gs.mobilities(&u).unwrap();
        let v = [0.2, -0.5, 0.3];
        let want = v[0] * v[0] / (2.0 * a[0]) + v[2] * v[2] / (2.0 * a[1]);
        assert!((gs.r_eps_primal(&u, &v).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn reduced_closed_forms() {
        for case in [Case::Quadratic, Case::Cosh] {
            let rq = reduced(&FamilyConfig::new(case, 1.0));
            for &p in &[0.05, 0.3, 0.5, 0.77, 0.95] {
                for &eta in &[-6.0, -1.0, 0.0, 0.5, 6.0] {
                    let (s, r) = rq.closed_form(p, eta).unwrap();
                    assert!((rq.sigma(p).unwrap() - s).abs() < 1e-7);
                    assert!((rq.r_star(p, eta).unwrap() - r).abs() < 1e-7, "{case:?} p={p} eta={eta}");
                }
            }
        }
    }

    #[test]
    fn equilibrium_values() {
        for case in CASES {
            let rq = reduced(&FamilyConfig::new(case, 1.0));
            assert!(rq.sigma(0.5).unwrap().abs() < 1e-10);
            assert!(rq.r_star(0.5, 0.0).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn cosh_a_hat_is_geometric() {
        let rq = reduced(&FamilyConfig::new(Case::Cosh, 1.0));
        for &(p, z) in &[(0.3, 0.6), (0.2, 0.4 + 1e-9), (0.9, 3.0)] {
            assert!((rq.a_hat(p, z) - (2.0 * p * z).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_field_in_all_cases() {
        for case in CASES {
            let rq = reduced(&FamilyConfig::new(case, 1.0));
            for &p in &[0.2, 0.45, 0.8] {
                let f = rq.limit_field(p).unwrap();
                assert!((f - (1.0 - 2.0 * p)).abs() < 1e-8, "{case:?} p={p} field={f}");
            }
        }
    }

    #[test]
    fn sigma_equals_m_at_zero() {
        for case in CASES {
            let rq = reduced(&FamilyConfig::new(case, 1.0));
            for &p in &[0.1, 0.35, 0.6, 0.9] {
                assert!((rq.sigma(p).unwrap() - rq.m(p, 0.0).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn m0_even_and_above_power() {
        for case in CASES {
            let rq = reduced(&FamilyConfig::new(case, 1.0));
            for &(p, v) in &[(0.3, 0.4), (0.7, -1.2), (0.5, 0.1)] {
                let a = rq.m0(p, v).unwrap();
                let b = rq.m0(p, -v).unwrap();
                assert!((a - b).abs() < 1e-8);
                assert!(a >= -rq.d_energy(p).unwrap() * v - 1e-8);
            }
        }
    }

    #[test]
    fn entropic_quadratic_growth_is_superquadratic() {
        let rep = entropic_quadratic_growth(0.5, &[10.0, 15.0, 20.0], 0.25).unwrap();
        for r in &rep.doubling_ratio {
            assert!(*r >= 7.5, "{r}");
        }
        assert!(rep.r_star[2] >= rep.lower_bound[2]);
        // small eta: quadratic with the coefficient at the sigma minimizer
        let rq = reduced(&FamilyConfig::new(Case::EntropicQuadratic, 1.0));
        let p = 0.3;
        let (_, z) = rq.sigma_with_argmin(p).unwrap();
        let (a, b) = (rq.a_hat(p, z), rq.a_hat(1.0 - p, z));
        let eta = 1e-2;
        let approx = a * b / (2.0 * (a + b)) * eta * eta;
        assert!((rq.r_star(p, eta).unwrap() / approx - 1.0).abs() < 1e-3);
        assert!(rq.r_star(p, 0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn limit_dissipation_matches_energy_drop() {
        for case in CASES {
            let rq = reduced(&FamilyConfig::new(case, 1.0));
            let d0 = limit_dissipation(&rq, 0.9, 1.0, 40).unwrap();
            let drop = rq.energy(0.9).unwrap() - rq.energy(limit_solution(0.9, 1.0)).unwrap();
            assert!((d0 - drop).abs() < 1e-4, "{case:?}: {d0} vs {drop}");
        }
    }

    #[test]
    fn recovery_shape() {
        let rq = reduced(&FamilyConfig::new(Case::Quadratic, 1.0));
        // quadratic: a_hat = 1 so the minimizer of Sigma is z = 1
        assert!((rq.recovery_zeta(0.8, -0.6).unwrap() - 0.5).abs() < 1e-8);
        let u = recovery_state(0.8, 0.1, 0.5);
        assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_sweep_converges() {
        let rows = edp_sweep(Case::Cosh, &[0.3, 0.1], 0.9, 1.0, 1e-3).unwrap();
        assert!(rows[1].sup_error < rows[0].sup_error);
        assert!(rows[1].dissipation_gap < rows[0].dissipation_gap);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn cosh_reduced_matches_generic(p in 0.05f64..0.95, eta in -6.0f64..6.0) {
            let rq = reduced(&FamilyConfig::new(Case::Cosh, 1.0));
            let (_, r) = rq.closed_form(p, eta).unwrap();
            prop_assert!((rq.r_star(p, eta).unwrap() - r).abs() < 1e-7);
        }
    }
}
