//! Fokker-Planck equation on `Q = Omega x Upsilon` with a Kramers-scaled
//! double well in the reaction coordinate `y`, its two-species
//! reaction-diffusion limit, the `Z_eps` rescaling of the reaction path and
//! the dual (`B`) functionals used to compare dissipations.
//!
//! `Omega = [0, 1]`, `Upsilon = [0, 7]`, wells at `y = 2, 6`, barrier at `y = 5`.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gradsys::GradientSystem;
use crate::markov::{detailed_balance, entropic_gs, MarkovGenerator, Normalization};
use crate::numerics::{gauss_legendre, solve_path_laplacian};
use crate::oracle::{n_brute, n_closed};
use crate::potentials::{boltzmann, cosh_star, log_mean_unchecked};

pub const Y_MAX: f64 = 7.0;
pub const LEFT_WELL: f64 = 2.0;
pub const RIGHT_WELL: f64 = 6.0;
pub const BARRIER: f64 = 5.0;

/// Value, slope and curvature of the potential at a spline knot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub y: f64,
    pub v: f64,
    pub dv: f64,
    pub ddv: f64,
}

/// Quintic Hermite spline through `(value, slope, curvature)` knots, hence C².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplinePotential {
    pub knots: Vec<Knot>,
}

fn hermite5(t: f64) -> [[f64; 6]; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    [
        [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * t3 - t4 + 0.5 * t5,
        ],
        [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            1.5 * t2 - 4.0 * t3 + 2.5 * t4,
        ],
        [
            -60.0 * t + 180.0 * t2 - 120.0 * t3,
            -36.0 * t + 96.0 * t2 - 60.0 * t3,
            1.0 - 9.0 * t + 18.0 * t2 - 10.0 * t3,
            60.0 * t - 180.0 * t2 + 120.0 * t3,
            -24.0 * t + 84.0 * t2 - 60.0 * t3,
            3.0 * t - 12.0 * t2 + 10.0 * t3,
        ],
    ]
}

impl SplinePotential {
    /// Double well that is exactly quadratic near both wells and the barrier
    /// (barrier height 1), joined by quintic pieces.
    pub fn double_well(k_left: f64, k_barrier: f64, k_right: f64) -> Self {
        let well = |k: f64, c: f64, s: f64| Knot { y: c + s, v: 0.5 * k * s * s, dv: k * s, ddv: k };
        let top = |s: f64| Knot { y: BARRIER + s, v: 1.0 - 0.5 * k_barrier * s * s, dv: -k_barrier * s, ddv: -k_barrier };
        Self {
            knots: vec![
                well(k_left, LEFT_WELL, -2.0),
                well(k_left, LEFT_WELL, 0.0),
                well(k_left, LEFT_WELL, 1.5),
                Knot { y: 4.1, v: 0.45, dv: 0.7, ddv: 0.0 },
                top(-0.25),
                top(0.0),
                top(0.25),
                well(k_right, RIGHT_WELL, -0.45),
                well(k_right, RIGHT_WELL, 0.0),
                well(k_right, RIGHT_WELL, 1.0),
            ],
        }
    }

    fn locate(&self, y: f64) -> (usize, f64, f64) {
        let n = self.knots.len();
        let k = self.knots.partition_point(|k| k.y <= y).clamp(1, n - 1) - 1;
        let h = self.knots[k + 1].y - self.knots[k].y;
        (k, h, ((y - self.knots[k].y) / h).clamp(0.0, 1.0))
    }

    fn derivative(&self, y: f64, order: usize) -> f64 {
        let (k, h, t) = self.locate(y);
        let (a, b) = (self.knots[k], self.knots[k + 1]);
        let basis = hermite5(t)[order];
        let s = basis[0] * a.v
            + basis[1] * h * a.dv
            + basis[2] * h * h * a.ddv
            + basis[3] * b.v
            + basis[4] * h * b.dv
            + basis[5] * h * h * b.ddv;
        s / h.powi(order as i32)
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.derivative(y, 0)
    }
    pub fn slope(&self, y: f64) -> f64 {
        self.derivative(y, 1)
    }
    pub fn curvature(&self, y: f64) -> f64 {
        self.derivative(y, 2)
    }

    /// Checks the double-well shape: zero non-degenerate minima at the wells,
    /// positive elsewhere, strict non-degenerate maximum at the barrier.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Setup(m.to_string()));
        if self.knots.len() < 2 || self.knots.iter().any(|k| !(k.y.is_finite() && k.v.is_finite() && k.dv.is_finite() && k.ddv.is_finite())) {
            return bad("potential needs at least two finite knots");
        }
        if self.knots.windows(2).any(|w| w[1].y <= w[0].y) {
            return bad("knots must be strictly increasing");
        }
        if self.knots[0].y != 0.0 || self.knots[self.knots.len() - 1].y != Y_MAX {
            return bad("knots must span [0, 7]");
        }
        for c in [LEFT_WELL, RIGHT_WELL] {
            if self.eval(c).abs() > 1e-12 || self.slope(c).abs() > 1e-12 {
                return bad("potential must vanish with zero slope at both wells");
            }
            if self.curvature(c) <= 0.0 {
                return bad("degenerate curvature at a well");
            }
        }
        if self.slope(BARRIER).abs() > 1e-12 || self.curvature(BARRIER) >= 0.0 {
            return bad("barrier must be a non-degenerate critical point");
        }
        let top = self.eval(BARRIER);
        let n = 14_000;
        for k in 0..=n {
            let y = Y_MAX * k as f64 / n as f64;
            let v = self.eval(y);
            let at = |c: f64| (y - c).abs() < 1e-9;
            if !(at(LEFT_WELL) || at(RIGHT_WELL)) && v <= 0.0 {
                return bad("potential must be positive away from the wells");
            }
            if !at(BARRIER) && v >= top {
                return bad("barrier must be the strict global maximum");
            }
        }
        Ok(())
    }

    fn max_abs_curvature(&self) -> f64 {
        self.knots.iter().map(|k| k.ddv.abs()).fold(1e-3, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactionSetup {
    pub potential: SplinePotential,
    pub m_omega: f64,
    pub m_upsilon: f64,
    pub omega_cells: usize,
    pub upsilon_cells: usize,
    pub epsilon: f64,
}

impl Default for ReactionSetup {
    fn default() -> Self {
        Self {
            potential: SplinePotential::double_well(0.2, 5.0, 1.5),
            m_omega: 1.0,
            m_upsilon: 1.0,
            omega_cells: 40,
            upsilon_cells: 350,
            epsilon: 0.05,
        }
    }
}

impl ReactionSetup {
    pub fn with_epsilon(&self, eps: f64) -> Self {
        Self { epsilon: eps, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_omega >= 0.0 && self.m_upsilon > 0.0 && self.m_omega.is_finite() && self.m_upsilon.is_finite()) {
            return Err(Error::Setup("mobilities must be finite, m_Upsilon > 0, m_Omega >= 0".into()));
        }
        if self.omega_cells == 0 || self.upsilon_cells < 8 {
            return Err(Error::Setup("mesh too coarse".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Setup("epsilon must be positive".into()));
        }
        self.potential.validate()
    }

    /// Limit well weights `(alpha_0, alpha_1)` from the curvatures.
    pub fn alphas(&self) -> (f64, f64) {
        let (s0, s1) = (self.potential.curvature(LEFT_WELL).sqrt(), self.potential.curvature(RIGHT_WELL).sqrt());
        (s1 / (s0 + s1), s0 / (s0 + s1))
    }

    /// Laplace limit of `(tau_eps / eps) e^{-V(5)/eps}`.
    pub fn kramers_limit(&self) -> f64 {
        let k0 = self.potential.curvature(LEFT_WELL);
        let k1 = self.potential.curvature(RIGHT_WELL);
        let kb = -self.potential.curvature(BARRIER);
        self.m_upsilon * 2.0 * std::f64::consts::PI * (k0.sqrt() + k1.sqrt()) / (kb.sqrt() * (k0 * k1).sqrt())
    }

    fn quad_pieces(&self, eps: f64) -> usize {
        let width = (eps / self.potential.max_abs_curvature()).sqrt();
        ((5.0 * Y_MAX / width).ceil() as usize).max(700)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Kramers {
    pub eps: f64,
    /// `tau_eps = m_Upsilon ∫ 1/w_eps`; infinite once it leaves the float range
    pub tau: f64,
    /// `(tau_eps / eps) e^{-V(5)/eps}`
    pub scaled_tau: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// `scaled_tau` over its Laplace limit
    pub ratio: f64,
}

/// `∫ e^{-V/eps}` and `∫ e^{(V - V(5))/eps}` over `Upsilon`.
fn partition_integrals(setup: &ReactionSetup, eps: f64) -> (f64, f64) {
    let v = &setup.potential;
    let top = v.eval(BARRIER);
    let n = setup.quad_pieces(eps);
    let zi = gauss_legendre(|y| (-v.eval(y) / eps).exp(), 0.0, Y_MAX, n);
    let inv = gauss_legendre(|y| ((v.eval(y) - top) / eps).exp(), 0.0, Y_MAX, n);
    (zi, inv)
}

pub fn kramers(setup: &ReactionSetup) -> Result<Kramers> {
    setup.validate()?;
    let eps = setup.epsilon;
    let (zi, inv) = partition_integrals(setup, eps);
    let top = setup.potential.eval(BARRIER);
    let scaled = setup.m_upsilon * zi * inv / eps;
    let (alpha0, alpha1) = setup.alphas();
    Ok(Kramers {
        eps,
        tau: eps * scaled * (top / eps).exp(),
        scaled_tau: scaled,
        alpha0,
        alpha1,
        ratio: scaled / setup.kramers_limit(),
    })
}

pub fn kramers_sweep(setup: &ReactionSetup, eps_list: &[f64]) -> Result<Vec<Kramers>> {
    eps_list.iter().map(|&e| kramers(&setup.with_epsilon(e))).collect()
}

fn lmean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        log_mean_unchecked(a, b)
    }
}

/// Finite-volume discretization of the Fokker-Planck operator; states are
/// cell averages stored column by column, `u[i * ny + j]` for x-cell `i`
/// and y-cell `j`.
#[derive(Clone, Debug)]
pub struct FpGrid {
    pub eps: f64,
    pub m_omega: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub xc: Vec<f64>,
    pub yc: Vec<f64>,
    /// `e^{-V(y_j)/eps}` at cell centres
    pub g: Vec<f64>,
    /// discrete equilibrium density in y, `sum_j hy w_j = 1`
    pub w: Vec<f64>,
    /// y-face conductances per unit x-length, exponentially fitted
    pub ky: Vec<f64>,
    /// discrete reaction coordinate `Z_eps` at the cell centres
    pub z: Vec<f64>,
    pub tau: f64,
}

impl FpGrid {
    pub fn new(setup: &ReactionSetup) -> Result<Self> {
        setup.validate()?;
        let eps = setup.epsilon;
        let (nx, ny) = (setup.omega_cells, setup.upsilon_cells);
        let hx = 1.0 / nx as f64;
        let hy = Y_MAX / ny as f64;
        let xc: Vec<f64> = (0..nx).map(|i| (i as f64 + 0.5) * hx).collect();
        let yc: Vec<f64> = (0..ny).map(|j| (j as f64 + 0.5) * hy).collect();
        let pot = &setup.potential;
        let top = pot.eval(BARRIER);
        let g: Vec<f64> = yc.iter().map(|&y| (-pot.eval(y) / eps).exp()).collect();
        if g.contains(&0.0) {
            return Err(Error::OutOfRange(format!("equilibrium underflows at eps = {eps}")));
        }
        let mass: f64 = g.iter().sum::<f64>() * hy;
        let w: Vec<f64> = g.iter().map(|x| x / mass).collect();
        let (zi, inv) = partition_integrals(setup, eps);
        let pieces = (setup.quad_pieces(eps) / ny).max(4);
        // face integrals of e^{(V - V(5))/eps} between neighbouring centres
        let segs: Vec<f64> = yc
            .windows(2)
            .map(|p| gauss_legendre(|y| ((pot.eval(y) - top) / eps).exp(), p[0], p[1], pieces))
            .collect();
        let ky: Vec<f64> = segs.iter().map(|s| setup.m_upsilon * zi * inv / s).collect();
        if ky.iter().any(|k| !k.is_finite()) {
            return Err(Error::OutOfRange(format!("y-conductance overflows at eps = {eps}")));
        }
        let total: f64 = segs.iter().sum();
        let mut z = Vec::with_capacity(ny);
        let mut acc = 0.0;
        z.push(0.0);
        for s in &segs {
            acc += s;
            z.push(acc / total);
        }
        let tau = setup.m_upsilon * zi * inv * (top / eps).exp();
        Ok(Self { eps, m_omega: setup.m_omega, nx, ny, hx, hy, xc, yc, g, w, ky, z, tau })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn mass(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.cell_area()
    }

    pub fn equilibrium(&self) -> Vec<f64> {
        (0..self.nx).flat_map(|_| self.w.iter().copied()).collect()
    }

    /// `sum A w lambda_B(u / w)`.
    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        let mut e = 0.0;
        for col in u.chunks(self.ny) {
            for (x, w) in col.iter().zip(&self.w) {
                e += w * boltzmann(x / w)?;
            }
        }
        Ok(e * self.cell_area())
    }

    /// `DE_eps(u) = log(u / w)`.
    pub fn d_energy(&self, u: &[f64]) -> Vec<f64> {
        u.chunks(self.ny)
            .flat_map(|col| col.iter().zip(&self.w).map(|(x, w)| (x / w).ln()).collect::<Vec<_>>())
            .collect()
    }

    /// Face mobilities: x-faces `(i, j)-(i+1, j)` first, then y-faces
    /// `(i, j)-(i, j+1)`, both in storage order of their lower cell.
    pub fn mobilities(&self, u: &[f64]) -> Mobilities {
        let (nx, ny) = (self.nx, self.ny);
        let kx = self.m_omega * self.hy / self.hx;
        let mut x = Vec::with_capacity(nx.saturating_sub(1) * ny);
        for i in 0..nx.saturating_sub(1) {
            for j in 0..ny {
                x.push(kx * lmean(u[i * ny + j], u[(i + 1) * ny + j]));
            }
        }
        let mut y = Vec::with_capacity(nx * (ny - 1));
        for i in 0..nx {
            for j in 0..ny - 1 {
                let a = i * ny + j;
                y.push(self.hx * self.ky[j] * lmean(u[a] / self.g[j], u[a + 1] / self.g[j + 1]));
            }
        }
        Mobilities { x, y, ny }
    }

    /// Discrete `R*_eps(u, xi)`.
    pub fn r_star(&self, u: &[f64], xi: &[f64]) -> f64 {
        self.mobilities(u).r_star(xi)
    }

    /// Basin masses `(∫_{y<5} u dy, ∫_{y>5} u dy)` for every x-cell.
    pub fn marginals(&self, u: &[f64]) -> TwoSpeciesField {
        let split = self.yc.partition_point(|&y| y < BARRIER);
        let (mut c0, mut c1) = (Vec::with_capacity(self.nx), Vec::with_capacity(self.nx));
        for col in u.chunks(self.ny) {
            c0.push(col[..split].iter().sum::<f64>() * self.hy);
            c1.push(col[split..].iter().sum::<f64>() * self.hy);
        }
        TwoSpeciesField { c0, c1 }
    }

    /// Cell values of `zeta(x, Z_eps(y))`.
    pub fn pullback<F: Fn(f64, f64) -> f64>(&self, zeta: F) -> Vec<f64> {
        self.xc.iter().flat_map(|&x| self.z.iter().map(move |&z| (x, z))).map(|(x, z)| zeta(x, z)).collect()
    }

    fn x_step(&self, u: &mut [f64], dt: f64) {
        let (nx, ny) = (self.nx, self.ny);
        if nx < 2 || self.m_omega == 0.0 {
            return;
        }
        let s = vec![self.hx / dt; nx];
        let kappa = vec![self.m_omega / self.hx; nx - 1];
        let mut rows = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                rows[j * nx + i] = u[i * ny + j];
            }
        }
        rows.par_chunks_mut(nx).for_each(|row| {
            let rhs: Vec<f64> = row.iter().map(|v| v * s[0]).collect();
            row.copy_from_slice(&solve_path_laplacian(&s, &kappa, &rhs));
        });
        for i in 0..nx {
            for j in 0..ny {
                u[i * ny + j] = rows[j * nx + i];
            }
        }
    }

    fn y_step(&self, u: &mut [f64], dt: f64) {
        let s: Vec<f64> = self.g.iter().map(|g| self.hy * g / dt).collect();
        u.par_chunks_mut(self.ny).for_each(|col| {
            let rhs: Vec<f64> = col.iter().map(|v| self.hy * v / dt).collect();
            let r = solve_path_laplacian(&s, &self.ky, &rhs);
            for ((c, r), g) in col.iter_mut().zip(r).zip(&self.g) {
                *c = r * g;
            }
        });
    }

    /// One Strang step: half x-diffusion, full y-drift-diffusion, half x-diffusion.
    pub fn step(&self, u: &mut [f64], dt: f64) {
        self.x_step(u, 0.5 * dt);
        self.y_step(u, dt);
        self.x_step(u, 0.5 * dt);
    }

    /// Grid version of `Z_eps` and the rescaled fields of one x-column.
    pub fn z_transform(&self, u_col: &[f64]) -> ZSlice {
        ZSlice {
            z: self.z.clone(),
            v: u_col.iter().zip(&self.w).map(|(u, w)| u / w).collect(),
            w_hat: self.w.iter().map(|w| w * self.hy).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mobilities {
    x: Vec<f64>,
    y: Vec<f64>,
    ny: usize,
}

impl Mobilities {
    pub fn r_star(&self, xi: &[f64]) -> f64 {
        let ny = self.ny;
        let mut s = 0.0;
        for (k, m) in self.x.iter().enumerate() {
            let d = xi[k + ny] - xi[k];
            s += m * d * d;
        }
        for (k, m) in self.y.iter().enumerate() {
            let a = (k / (ny - 1)) * ny + k % (ny - 1);
            let d = xi[a + 1] - xi[a];
            s += m * d * d;
        }
        0.5 * s
    }
}

/// One x-column in reaction-path coordinates: `v = u / w` at `z_j`, and the
/// cell masses of the pushed-forward equilibrium `w_hat`.
#[derive(Clone, Debug, Serialize)]
pub struct ZSlice {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub w_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSpeciesField {
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
}

impl TwoSpeciesField {
    pub fn from_fns<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(xc: &[f64], f0: F, f1: G) -> Self {
        Self { c0: xc.iter().map(|&x| f0(x)).collect(), c1: xc.iter().map(|&x| f1(x)).collect() }
    }
    pub fn mass(&self, hx: f64) -> f64 {
        (self.c0.iter().sum::<f64>() + self.c1.iter().sum::<f64>()) * hx
    }
    pub fn validate(&self, hx: f64) -> Result<()> {
        if self.c0.len() != self.c1.len() || self.c0.iter().chain(&self.c1).any(|&c| !(c >= 0.0)) {
            return domain("species densities must be nonnegative on a common grid");
        }
        let m = self.mass(hx);
        if (m - 1.0).abs() > 1e-10 {
            return domain(format!("two-species mass {m} differs from 1"));
        }
        Ok(())
    }
    pub fn l1_distance(&self, other: &Self, hx: f64) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        hx * (d(&self.c0, &other.c0) + d(&self.c1, &other.c1))
    }
}

#[derive(Clone, Debug)]
pub struct FpTrajectory {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub masses: Vec<f64>,
    pub marginals: Vec<TwoSpeciesField>,
    pub final_state: Vec<f64>,
    /// `∫ R*_eps(u, -DE_eps(u)) dt`, right-endpoint rule; misses most of an
    /// initial layer, where `E(0) - E(T)` is the reliable dissipation
    pub slope_integral: f64,
    /// `∫ R*_eps(u, xi_k) dt` for each probe `xi_k`
    pub probe_r_star: Vec<f64>,
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end >= 0.0 && dt > 0.0 && t_end.is_finite()) {
        return domain("need t_end >= 0 and dt > 0");
    }
    if dt < 1e-12 * t_end.max(1.0) {
        return Err(Error::StepUnderflow { t: 0.0, dt });
    }
    Ok((t_end / dt).round().max(if t_end > 0.0 { 1.0 } else { 0.0 }) as usize)
}

/// Strang-split implicit solve of the Fokker-Planck equation.
pub fn solve_fp(grid: &FpGrid, u0: &[f64], t_end: f64, dt: f64, sample_every: usize, probes: &[Vec<f64>]) -> Result<FpTrajectory> {
    if u0.len() != grid.len() || u0.iter().any(|&x| !(x >= 0.0)) {
        return domain("initial density must be nonnegative on the grid");
    }
    let m = grid.mass(u0);
    if (m - 1.0).abs() > 1e-10 {
        return domain(format!("initial mass {m} differs from 1"));
    }
    if probes.iter().any(|p| p.len() != grid.len()) {
        return domain("probe length mismatch");
    }
    let steps = step_count(t_end, dt)?;
    let dt = if steps > 0 { t_end / steps as f64 } else { dt };
    let every = sample_every.max(1);
    let mut u = u0.to_vec();
    let mut traj = FpTrajectory {
        times: vec![0.0],
        energies: vec![grid.energy(&u)?],
        masses: vec![m],
        marginals: vec![grid.marginals(&u)],
        final_state: Vec::new(),
        slope_integral: 0.0,
        probe_r_star: vec![0.0; probes.len()],
    };
    for n in 1..=steps {
        grid.step(&mut u, dt);
        let de: Vec<f64> = grid.d_energy(&u).into_iter().map(|x| -x).collect();
        let mob = grid.mobilities(&u);
        traj.slope_integral += dt * mob.r_star(&de);
        let rs: Vec<f64> = probes.par_iter().map(|p| dt * mob.r_star(p)).collect();
        for (acc, r) in traj.probe_r_star.iter_mut().zip(rs) {
            *acc += r;
        }
        if n % every == 0 || n == steps {
            traj.times.push(n as f64 * dt);
            traj.energies.push(grid.energy(&u)?);
            traj.masses.push(grid.mass(&u));
            traj.marginals.push(grid.marginals(&u));
        }
    }
    traj.final_state = u;
    Ok(traj)
}

/// Prepared initial datum `c_0 w beta_0 chi(y-2) + c_1 w beta_1 chi(y-6)` with
/// `chi(s) = max(1 - |s|/width, 0)`; the discrete `beta_j` make the basin
/// marginals equal `c_j` exactly.
pub fn recovery_initial(grid: &FpGrid, c: &TwoSpeciesField, width: f64) -> Result<Vec<f64>> {
    if c.c0.len() != grid.nx {
        return domain("species grid does not match the x-mesh");
    }
    if !(width > 0.0 && width <= 1.0) {
        return domain("cut-off width must lie in (0, 1]");
    }
    c.validate(grid.hx)?;
    let chi = |s: f64| (1.0 - s.abs() / width).max(0.0);
    let p0: Vec<f64> = grid.yc.iter().zip(&grid.w).map(|(&y, w)| w * chi(y - LEFT_WELL)).collect();
    let p1: Vec<f64> = grid.yc.iter().zip(&grid.w).map(|(&y, w)| w * chi(y - RIGHT_WELL)).collect();
    let b0 = 1.0 / (p0.iter().sum::<f64>() * grid.hy);
    let b1 = 1.0 / (p1.iter().sum::<f64>() * grid.hy);
    let mut u = Vec::with_capacity(grid.len());
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            u.push(c.c0[i] * b0 * p0[j] + c.c1[i] * b1 * p1[j]);
        }
    }
    Ok(u)
}

/// The limit reaction-diffusion system on the x-mesh of the setup.
#[derive(Clone, Debug)]
pub struct LimitRds {
    pub nx: usize,
    pub hx: f64,
    pub xc: Vec<f64>,
    pub m_omega: f64,
    pub m_upsilon: f64,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl LimitRds {
    pub fn new(setup: &ReactionSetup) -> Result<Self> {
        setup.validate()?;
        let nx = setup.omega_cells;
        let hx = 1.0 / nx as f64;
        let (alpha0, alpha1) = setup.alphas();
        Ok(Self {
            nx,
            hx,
            xc: (0..nx).map(|i| (i as f64 + 0.5) * hx).collect(),
            m_omega: setup.m_omega,
            m_upsilon: setup.m_upsilon,
            alpha0,
            alpha1,
        })
    }

    pub fn equilibrium(&self) -> TwoSpeciesField {
        TwoSpeciesField { c0: vec![self.alpha0; self.nx], c1: vec![self.alpha1; self.nx] }
    }

    /// `E(c) = ∫ alpha_0 lambda_B(c_0/alpha_0) + alpha_1 lambda_B(c_1/alpha_1)`.
    pub fn energy(&self, c: &TwoSpeciesField) -> Result<f64> {
        let mut e = 0.0;
        for (a, b) in c.c0.iter().zip(&c.c1) {
            e += self.alpha0 * boltzmann(a / self.alpha0)? + self.alpha1 * boltzmann(b / self.alpha1)?;
        }
        Ok(e * self.hx)
    }

    pub fn d_energy(&self, c: &TwoSpeciesField) -> TwoSpeciesField {
        TwoSpeciesField {
            c0: c.c0.iter().map(|a| (a / self.alpha0).ln()).collect(),
            c1: c.c1.iter().map(|b| (b / self.alpha1).ln()).collect(),
        }
    }

    /// Discrete dual dissipation with log-mean diffusive mobilities and the
    /// cosh reaction term.
    pub fn r_star(&self, c: &TwoSpeciesField, eta: &TwoSpeciesField) -> f64 {
        let k = self.m_omega / self.hx;
        let mut s = 0.0;
        for i in 0..self.nx.saturating_sub(1) {
            let d0 = eta.c0[i + 1] - eta.c0[i];
            let d1 = eta.c1[i + 1] - eta.c1[i];
            s += 0.5 * k * (lmean(c.c0[i], c.c0[i + 1]) * d0 * d0 + lmean(c.c1[i], c.c1[i + 1]) * d1 * d1);
        }
        let a = self.alpha0 * self.alpha1;
        for i in 0..self.nx {
            s += self.hx * self.m_upsilon * (c.c0[i] * c.c1[i] / a).sqrt() * cosh_star(eta.c1[i] - eta.c0[i]);
        }
        s
    }

    /// `D_eta R*(c, eta)` in density form (divided by the cell width).
    pub fn d_r_star(&self, c: &TwoSpeciesField, eta: &TwoSpeciesField) -> TwoSpeciesField {
        let n = self.nx;
        let k = self.m_omega / (self.hx * self.hx);
        let mut out = TwoSpeciesField { c0: vec![0.0; n], c1: vec![0.0; n] };
        for i in 0..n.saturating_sub(1) {
            let f0 = k * lmean(c.c0[i], c.c0[i + 1]) * (eta.c0[i + 1] - eta.c0[i]);
            let f1 = k * lmean(c.c1[i], c.c1[i + 1]) * (eta.c1[i + 1] - eta.c1[i]);
            out.c0[i] -= f0;
            out.c0[i + 1] += f0;
            out.c1[i] -= f1;
            out.c1[i + 1] += f1;
        }
        let a = self.alpha0 * self.alpha1;
        for i in 0..n {
            let r = self.m_upsilon * (c.c0[i] * c.c1[i] / a).sqrt() * crate::potentials::dcosh_star(eta.c1[i] - eta.c0[i]);
            out.c1[i] += r;
            out.c0[i] -= r;
        }
        out
    }

    /// Right-hand side `m_Omega Δc_j ∓ m_Upsilon (c_0/alpha_0 - c_1/alpha_1)`.
    pub fn rhs(&self, c: &TwoSpeciesField) -> TwoSpeciesField {
        let n = self.nx;
        let k = self.m_omega / (self.hx * self.hx);
        let lap = |v: &[f64], i: usize| {
            let mut s = 0.0;
            if i > 0 {
                s += v[i - 1] - v[i];
            }
            if i + 1 < n {
                s += v[i + 1] - v[i];
            }
            k * s
        };
        let mut out = TwoSpeciesField { c0: vec![0.0; n], c1: vec![0.0; n] };
        for i in 0..n {
            let r = self.m_upsilon * (c.c0[i] / self.alpha0 - c.c1[i] / self.alpha1);
            out.c0[i] = lap(&c.c0, i) - r;
            out.c1[i] = lap(&c.c1, i) + r;
        }
        out
    }

    /// Generator matrix of the linear system, species-major ordering.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.nx;
        let k = self.m_omega / (self.hx * self.hx);
        let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for s in 0..2 {
            for i in 0..n.saturating_sub(1) {
                let (p, q) = (s * n + i, s * n + i + 1);
                a[(p, q)] += k;
                a[(q, p)] += k;
                a[(p, p)] -= k;
                a[(q, q)] -= k;
            }
        }
        for i in 0..n {
            let (p, q) = (i, n + i);
            let (r0, r1) = (self.m_upsilon / self.alpha0, self.m_upsilon / self.alpha1);
            a[(q, p)] += r0;
            a[(p, p)] -= r0;
            a[(p, q)] += r1;
            a[(q, q)] -= r1;
        }
        a
    }
}

#[derive(Clone, Debug)]
pub struct RdsTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<TwoSpeciesField>,
    pub energies: Vec<f64>,
    /// `∫ R(c, c_dot) + R*(c, -DE(c)) dt = ∫ <-DE(c), D R*(c, -DE(c))> dt`, trapezoid rule
    pub dissipation: f64,
    /// `∫ R*(c, -DE(c)) dt`
    pub slope_integral: f64,
    pub probe_r_star: Vec<f64>,
}

/// Solve the limit system with the exact propagator `exp(A dt)` of its FV
/// generator; time stepping adds no error.
pub fn solve_limit_rds(
    rds: &LimitRds,
    c_init: &TwoSpeciesField,
    t_end: f64,
    dt: f64,
    sample_every: usize,
    probes: &[TwoSpeciesField],
) -> Result<RdsTrajectory> {
    c_init.validate(rds.hx)?;
    if c_init.c0.len() != rds.nx {
        return domain("species grid does not match the x-mesh");
    }
    let steps = step_count(t_end, dt)?;
    let dt = if steps > 0 { t_end / steps as f64 } else { dt };
    let prop = (rds.matrix() * dt).exp();
    let n = rds.nx;
    let every = sample_every.max(1);
    let pack = |c: &TwoSpeciesField| nalgebra::DVector::from_iterator(2 * n, c.c0.iter().chain(&c.c1).copied());
    let unpack = |v: &nalgebra::DVector<f64>| TwoSpeciesField {
        c0: v.iter().take(n).map(|x| x.max(0.0)).collect(),
        c1: v.iter().skip(n).map(|x| x.max(0.0)).collect(),
    };
    let slope = |c: &TwoSpeciesField| -> (f64, f64, Vec<f64>) {
        let de = rds.d_energy(c);
        let neg = TwoSpeciesField { c0: de.c0.iter().map(|x| -x).collect(), c1: de.c1.iter().map(|x| -x).collect() };
        let f = rds.d_r_star(c, &neg);
        let d: f64 = neg.c0.iter().zip(&f.c0).chain(neg.c1.iter().zip(&f.c1)).map(|(a, b)| a * b).sum::<f64>() * rds.hx;
        (d, rds.r_star(c, &neg), probes.iter().map(|p| rds.r_star(c, p)).collect())
    };
    let mut v = pack(c_init);
    let mut c = c_init.clone();
    let (mut prev_d, mut prev_s, mut prev_p) = slope(&c);
    let mut traj = RdsTrajectory {
        times: vec![0.0],
        states: vec![c.clone()],
        energies: vec![rds.energy(&c)?],
        dissipation: 0.0,
        slope_integral: 0.0,
        probe_r_star: vec![0.0; probes.len()],
    };
    for k in 1..=steps {
        v = &prop * v;
        c = unpack(&v);
        let (d, sl, p) = slope(&c);
        traj.dissipation += 0.5 * dt * (prev_d + d);
        traj.slope_integral += 0.5 * dt * (prev_s + sl);
        for ((acc, a), b) in traj.probe_r_star.iter_mut().zip(&prev_p).zip(&p) {
            *acc += 0.5 * dt * (a + b);
        }
        prev_d = d;
        prev_s = sl;
        prev_p = p;
        if k % every == 0 || k == steps {
            traj.times.push(k as f64 * dt);
            traj.energies.push(rds.energy(&c)?);
            traj.states.push(c.clone());
        }
    }
    Ok(traj)
}

/// Closed-form pointwise relaxation at `m_Omega = 0`.
pub fn pointwise_relaxation(rds: &LimitRds, c: &TwoSpeciesField, t: f64) -> TwoSpeciesField {
    let rate = rds.m_upsilon * (1.0 / rds.alpha0 + 1.0 / rds.alpha1);
    let decay = (-rate * t).exp();
    let mut out = TwoSpeciesField { c0: Vec::new(), c1: Vec::new() };
    for (a, b) in c.c0.iter().zip(&c.c1) {
        let m = a + b;
        let c0 = rds.alpha0 * m + (a - rds.alpha0 * m) * decay;
        out.c0.push(c0);
        out.c1.push(m - c0);
    }
    out
}

/// Maximum deviation between the limit right-hand side and
/// `D_eta R*(c, -DE(c))` relative to the field size.
pub fn field_identity_defect(rds: &LimitRds, c: &TwoSpeciesField) -> f64 {
    let de = rds.d_energy(c);
    let neg = TwoSpeciesField { c0: de.c0.iter().map(|x| -x).collect(), c1: de.c1.iter().map(|x| -x).collect() };
    let a = rds.d_r_star(c, &neg);
    let b = rds.rhs(c);
    let scale = b.c0.iter().chain(&b.c1).fold(1.0f64, |m, x| m.max(x.abs()));
    a.c0.iter().chain(&a.c1).zip(b.c0.iter().chain(&b.c1)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / scale
}

/// Continuous `Z_eps` on `Upsilon`, tabulated for evaluation and inversion.
#[derive(Clone, Debug)]
pub struct ZTransform {
    pub eps: f64,
    potential: SplinePotential,
    top: f64,
    table_y: Vec<f64>,
    table_z: Vec<f64>,
    total: f64,
    /// `∫ e^{-V/eps}`
    zi: f64,
    /// `tau_eps / m_Upsilon` scaled by `e^{-V(5)/eps}`
    scaled_tau: f64,
    /// `Z_eps(7)` with `tau_eps` from the independent partition quadrature
    pub z_end: f64,
}

impl ZTransform {
    pub fn new(setup: &ReactionSetup) -> Result<Self> {
        setup.validate()?;
        let eps = setup.epsilon;
        let pot = setup.potential.clone();
        let top = pot.eval(BARRIER);
        let n = setup.quad_pieces(eps).max(2000);
        let h = Y_MAX / n as f64;
        let mut table_y = Vec::with_capacity(n + 1);
        let mut acc = Vec::with_capacity(n + 1);
        let mut s = 0.0;
        table_y.push(0.0);
        acc.push(0.0);
        for k in 0..n {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            s += gauss_legendre(|y| ((pot.eval(y) - top) / eps).exp(), a, b, 1);
            table_y.push(b);
            acc.push(s);
        }
        let (zi, inv) = partition_integrals(setup, eps);
        let table_z = acc.iter().map(|a| a / s).collect();
        Ok(Self { eps, potential: pot, top, table_y, table_z, total: s, zi, scaled_tau: zi * inv, z_end: s / inv })
    }

    /// Normalized equilibrium `w_eps(y)`.
    pub fn w(&self, y: f64) -> f64 {
        (-self.potential.eval(y) / self.eps).exp() / self.zi
    }

    pub fn z_of_y(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, Y_MAX);
        let n = self.table_y.len() - 1;
        let k = (self.table_y.partition_point(|&t| t <= y).max(1) - 1).min(n - 1);
        let part = gauss_legendre(|s| ((self.potential.eval(s) - self.top) / self.eps).exp(), self.table_y[k], y, 1);
        self.table_z[k] + part / self.total
    }

    /// `Z'_eps(y) = (m_Upsilon / tau_eps) / w_eps(y)`.
    pub fn dz_dy(&self, y: f64) -> f64 {
        ((self.potential.eval(y) - self.top) / self.eps).exp() / self.total
    }

    /// Inverse `Y_eps(z)` by bracketed Newton iteration.
    pub fn y_of_z(&self, z: f64) -> f64 {
        let z = z.clamp(0.0, 1.0);
        let k = self.table_z.partition_point(|&t| t <= z).clamp(1, self.table_z.len() - 1);
        let (mut lo, mut hi) = (self.table_y[k - 1], self.table_y[k]);
        let mut y = 0.5 * (lo + hi);
        for _ in 0..60 {
            let f = self.z_of_y(y) - z;
            if f > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let mut next = y - f / self.dz_dy(y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-15 * (1.0 + y.abs()) {
                return next;
            }
            y = next;
        }
        y
    }

    /// `w_hat(z) = w_eps(Y(z)) Y'(z)`.
    pub fn w_hat(&self, z: f64) -> f64 {
        let y = self.y_of_z(z);
        self.w(y) / self.dz_dy(y)
    }

    /// Equilibrium mass at `Z_eps in (delta, 1 - delta)`.
    pub fn interior_mass(&self, delta: f64) -> f64 {
        let (a, b) = (self.y_of_z(delta), self.y_of_z(1.0 - delta));
        gauss_legendre(|y| self.w(y), a, b, 400)
    }

    /// Equilibrium mass at `Z_eps < 1/2`.
    pub fn left_mass(&self) -> f64 {
        gauss_legendre(|y| self.w(y), 0.0, self.y_of_z(0.5), 2000)
    }

    pub fn tau_over_m(&self) -> f64 {
        self.scaled_tau * (self.top / self.eps).exp()
    }
}

/// Fields of a manufactured time slice on `Q`.
pub struct QFields<'a> {
    pub u: &'a dyn Fn(f64, f64) -> f64,
    pub u_dot: &'a dyn Fn(f64, f64) -> f64,
    pub xi: &'a dyn Fn(f64, f64) -> f64,
}

/// Fields of the same slice in `(x, z)` coordinates.
pub struct ZFields<'a> {
    pub v: &'a dyn Fn(f64, f64) -> f64,
    pub v_dot: &'a dyn Fn(f64, f64) -> f64,
    pub zeta: &'a dyn Fn(f64, f64) -> f64,
}

fn d4(f: &dyn Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
}

/// GL nodes and weights on `[a, b]` with the 8-point rule on `pieces` cells.
fn gl_nodes(a: f64, b: f64, pieces: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(8 * pieces);
    let h = (b - a) / pieces as f64;
    for k in 0..pieces {
        let lo = a + k as f64 * h;
        out.extend(GL8.iter().map(|&(x, w)| (lo + 0.5 * h * (1.0 + x), 0.5 * h * w)));
    }
    out
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// Integrand of `B_eps` at one time:
/// `∫_Q xi u_dot - R*_eps(u, xi) + R*_eps(u, -DE_eps(u))`.
pub fn b_eps_slice(setup: &ReactionSetup, zt: &ZTransform, f: &QFields, pieces: usize) -> f64 {
    let (mo, tau) = (setup.m_omega, setup.m_upsilon * zt.tau_over_m());
    let h = 1e-3;
    let xs = gl_nodes(0.0, 1.0, pieces);
    let ys = gl_nodes(0.0, Y_MAX, 7 * pieces);
    let mut s = 0.0;
    for &(x, wx) in &xs {
        for &(y, wy) in &ys {
            let u = (f.u)(x, y);
            let ux = d4(&|t| (f.u)(t, y), x, h);
            let rel_y = d4(&|t| ((f.u)(x, t) / zt.w(t)).ln(), y, h);
            let xix = d4(&|t| (f.xi)(t, y), x, h);
            let xiy = d4(&|t| (f.xi)(x, t), y, h);
            let dens = (f.xi)(x, y) * (f.u_dot)(x, y) - 0.5 * mo * xix * xix * u - 0.5 * tau * xiy * xiy * u
                + 0.5 * mo * ux * ux / u
                + 0.5 * tau * rel_y * rel_y * u;
            s += wx * wy * dens;
        }
    }
    s
}

/// Integrand of `B_hat_eps` at one time in `(x, z)` coordinates.
pub fn b_hat_slice(setup: &ReactionSetup, zt: &ZTransform, f: &ZFields, pieces: usize) -> f64 {
    let (mo, mu) = (setup.m_omega, setup.m_upsilon);
    let h = 1e-4;
    let xs = gl_nodes(0.0, 1.0, pieces);
    let zs = gl_nodes(0.0, 1.0, 7 * pieces);
    let what: Vec<f64> = zs.iter().map(|&(z, _)| zt.w_hat(z)).collect();
    let mut s = 0.0;
    for &(x, wx) in &xs {
        for (&(z, wz), &wh) in zs.iter().zip(&what) {
            let v = (f.v)(x, z);
            let vx = d4(&|t| (f.v)(t, z), x, h);
            let vz = d4(&|t| (f.v)(x, t), z, h);
            let zx = d4(&|t| (f.zeta)(t, z), x, h);
            let zz = d4(&|t| (f.zeta)(x, t), z, h);
            let dens = ((f.zeta)(x, z) * (f.v_dot)(x, z) - 0.5 * mo * zx * zx * v + 0.5 * mo * vx * vx / v) * wh
                + 0.5 * mu * (vz * vz / v - zz * zz * v);
            s += wx * wz * dens;
        }
    }
    s
}

/// Integrand of the limit functional `B` at one time, evaluated as
/// `∫ m_Upsilon N(zeta_1 - zeta_0, v_0, v_1) + sum_j alpha_j (...)` on the
/// x-mesh, together with the equivalent form
/// `<zeta, c_dot> - R*(c, zeta) + R*(c, -DE(c))` for `c = alpha v`.
pub fn b_limit_slice(rds: &LimitRds, v: &TwoSpeciesField, v_dot: &TwoSpeciesField, zeta: &TwoSpeciesField) -> (f64, f64) {
    let n = rds.nx;
    let al = [rds.alpha0, rds.alpha1];
    let vs = [&v.c0, &v.c1];
    let vd = [&v_dot.c0, &v_dot.c1];
    let zs = [&zeta.c0, &zeta.c1];
    let k = rds.m_omega / rds.hx;
    let mut direct = 0.0;
    for i in 0..n {
        direct += rds.hx * rds.m_upsilon * n_closed(zeta.c1[i] - zeta.c0[i], v.c0[i], v.c1[i]);
        for s in 0..2 {
            direct += rds.hx * al[s] * zs[s][i] * vd[s][i];
        }
    }
    for i in 0..n.saturating_sub(1) {
        for s in 0..2 {
            let m = al[s] * lmean(vs[s][i], vs[s][i + 1]);
            let dz = zs[s][i + 1] - zs[s][i];
            let dl = vs[s][i + 1].ln() - vs[s][i].ln();
            direct += 0.5 * k * m * (dl * dl - dz * dz);
        }
    }
    let c = TwoSpeciesField { c0: v.c0.iter().map(|x| x * rds.alpha0).collect(), c1: v.c1.iter().map(|x| x * rds.alpha1).collect() };
    let c_dot = TwoSpeciesField {
        c0: v_dot.c0.iter().map(|x| x * rds.alpha0).collect(),
        c1: v_dot.c1.iter().map(|x| x * rds.alpha1).collect(),
    };
    let de = rds.d_energy(&c);
    let neg = TwoSpeciesField { c0: de.c0.iter().map(|x| -x).collect(), c1: de.c1.iter().map(|x| -x).collect() };
    let pair: f64 = (0..n).map(|i| zeta.c0[i] * c_dot.c0[i] + zeta.c1[i] * c_dot.c1[i]).sum::<f64>() * rds.hx;
    (direct, pair - rds.r_star(&c, zeta) + rds.r_star(&c, &neg))
}

/// z-profile cost of the `B_hat_0` reaction term minimized over profiles
/// between `v0` and `v1`, alongside the closed form `N`.
pub fn n_consistency(delta: f64, v0: f64, v1: f64, cells: usize) -> Result<(f64, f64)> {
    let brute = n_brute(delta, v0, v1, cells)?;
    Ok((brute.value, n_closed(delta, v0, v1)))
}

/// Test functions `zeta(x, z) = p(x) s(z)` in the dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZetaShape {
    /// 0: constant, 1: `cos(pi x)`
    pub x_mode: u8,
    /// 0: constant, 1: smoothed step, 2: one minus the step
    pub z_mode: u8,
    pub amplitude: f64,
}

impl ZetaShape {
    pub fn eval(&self, x: f64, z: f64) -> f64 {
        let p = if self.x_mode == 0 { 1.0 } else { (std::f64::consts::PI * x).cos() };
        let step = 0.5 * (1.0 + ((z - 0.5) / 0.15).tanh());
        let s = match self.z_mode {
            0 => 1.0,
            1 => step,
            _ => 1.0 - step,
        };
        self.amplitude * p * s
    }
}

pub fn zeta_dictionary() -> Vec<ZetaShape> {
    let mut out = Vec::new();
    for (x_mode, z_mode) in [(0, 1), (1, 0), (1, 1), (1, 2)] {
        for a in [-1.0, -0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5, 1.0] {
            out.push(ZetaShape { x_mode, z_mode, amplitude: a });
        }
    }
    out
}

pub fn equilibrium_split(grid: &FpGrid) -> (f64, f64) {
    let m = grid.marginals(&grid.equilibrium());
    (m.c0.iter().sum::<f64>() * grid.hx, m.c1.iter().sum::<f64>() * grid.hx)
}

/// Reduced energy and dual dissipation of one point at `m_Omega = 0`
/// against the full-entropy structure of the two-state chain with rates
/// `m_Upsilon/alpha_0` and `m_Upsilon/alpha_1`; returns
/// `(E_reduced, E_chain, R*_reduced, R*_chain)`.
pub fn commutativity(setup: &ReactionSetup, c: [f64; 2], eta: [f64; 2]) -> Result<(f64, f64, f64, f64)> {
    let pointwise = ReactionSetup { m_omega: 0.0, omega_cells: 1, ..setup.clone() };
    let rds = LimitRds::new(&pointwise)?;
    let field = TwoSpeciesField { c0: vec![c[0]], c1: vec![c[1]] };
    let e_red = rds.energy(&field)?;
    let r_red = rds.r_star(&field, &TwoSpeciesField { c0: vec![eta[0]], c1: vec![eta[1]] });
    let gen = MarkovGenerator::from_rates(&[vec![0.0, setup.m_upsilon / rds.alpha1], vec![setup.m_upsilon / rds.alpha0, 0.0]])?;
    let cert = detailed_balance(&gen)?;
    let gs = entropic_gs(&gen, &cert, Normalization::FullEntropy);
    Ok((e_red, gs.energy(&c)?, r_red, gs.r_star(&c, &eta)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactionConfig {
    pub setup: ReactionSetup,
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    /// support half-width of the cut-off in the prepared data
    pub cutoff_width: f64,
    /// `c_0 = c0_mass (1 + amplitude cos(pi x))`, `c_1 = (1 - c0_mass)(1 - amplitude cos(pi x))`
    pub c0_mass: f64,
    pub amplitude: f64,
}

impl Default for ReactionConfig {
    fn default() -> Self {
        Self {
            setup: ReactionSetup::default(),
            eps_list: vec![0.2, 0.1, 0.05],
            t_end: 1.0,
            dt: 1e-3,
            sample_every: 10,
            cutoff_width: 1.0,
            c0_mass: 0.7,
            amplitude: 0.4,
        }
    }
}

impl ReactionConfig {
    pub fn initial_species(&self, xc: &[f64]) -> TwoSpeciesField {
        let (m, a) = (self.c0_mass, self.amplitude);
        let pi = std::f64::consts::PI;
        let mut c = TwoSpeciesField::from_fns(xc, |x| m * (1.0 + a * (pi * x).cos()), |x| (1.0 - m) * (1.0 - a * (pi * x).cos()));
        let total = c.mass(1.0 / xc.len() as f64);
        for v in c.c0.iter_mut().chain(c.c1.iter_mut()) {
            *v /= total;
        }
        c
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReactionRow {
    pub eps: f64,
    pub tau: f64,
    /// `sup_t ||c^eps(t) - c(t)||_{L^1(Omega)}` summed over both species
    pub marginal_l1: f64,
    /// `sup_t |E_eps(u_eps(t)) - E(c(t))|`
    pub energy_gap: f64,
    pub split0: f64,
    pub split1: f64,
    /// `E_eps(u(0)) - E_eps(u(T))`
    pub dissipation_eps: f64,
    pub dissipation_limit: f64,
    pub energy_drop_limit: f64,
    /// best dictionary value of `B_eps`
    pub b_sup_eps: f64,
    /// best dictionary value of the limit `B`
    pub b_sup_limit: f64,
    pub mass_error: f64,
    pub energy_increase: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReactionReport {
    pub alpha0: f64,
    pub alpha1: f64,
    pub rows: Vec<ReactionRow>,
    /// `(eps, error)` for entries that could not be solved
    pub failures: Vec<(f64, String)>,
    pub smallest_solved_eps: Option<f64>,
}

/// Row of the sweep plus the final states it was computed from.
#[derive(Clone, Debug)]
pub struct ReactionRun {
    pub row: ReactionRow,
    pub grid: FpGrid,
    pub fp_final: Vec<f64>,
    pub limit_final: TwoSpeciesField,
}

pub fn edp_check_one(cfg: &ReactionConfig, eps: f64) -> Result<ReactionRow> {
    Ok(edp_run_one(cfg, eps)?.row)
}

/// Solve both systems from prepared data at one `eps` and compare.
pub fn edp_run_one(cfg: &ReactionConfig, eps: f64) -> Result<ReactionRun> {
    let setup = cfg.setup.with_epsilon(eps);
    let grid = FpGrid::new(&setup)?;
    let rds = LimitRds::new(&setup)?;
    let c_init = cfg.initial_species(&grid.xc);
    let u0 = recovery_initial(&grid, &c_init, cfg.cutoff_width)?;
    let dict = zeta_dictionary();
    let probes: Vec<Vec<f64>> = dict.iter().map(|sh| grid.pullback(|x, z| sh.eval(x, z))).collect();
    let limit_probes: Vec<TwoSpeciesField> =
        dict.iter().map(|sh| TwoSpeciesField::from_fns(&rds.xc, |x| sh.eval(x, 0.0), |x| sh.eval(x, 1.0))).collect();
    let fp = solve_fp(&grid, &u0, cfg.t_end, cfg.dt, cfg.sample_every, &probes)?;
    let lim = solve_limit_rds(&rds, &c_init, cfg.t_end, cfg.dt, cfg.sample_every, &limit_probes)?;
    let mut marginal_l1 = 0.0f64;
    let mut energy_gap = 0.0f64;
    for ((m, c), (e_fp, e_lim)) in fp.marginals.iter().zip(&lim.states).zip(fp.energies.iter().zip(&lim.energies)) {
        marginal_l1 = marginal_l1.max(m.l1_distance(c, grid.hx));
        energy_gap = energy_gap.max((e_fp - e_lim).abs());
    }
    let area = grid.cell_area();
    let drop_eps = fp.energies[0] - fp.energies[fp.energies.len() - 1];
    // quadratic dissipation: ∫ R*(u, -DE) = 𝒟_eps / 2 on solutions
    let b_eps = probes
        .iter()
        .zip(&fp.probe_r_star)
        .map(|(p, r)| {
            let pair: f64 = p.iter().zip(fp.final_state.iter().zip(&u0)).map(|(x, (a, b))| x * (a - b)).sum::<f64>() * area;
            pair - r + 0.5 * drop_eps
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let c_end = lim.states.last().expect("trajectory has a sample");
    let b_lim = limit_probes
        .iter()
        .zip(&lim.probe_r_star)
        .map(|(p, r)| {
            let pair: f64 = (0..rds.nx)
                .map(|i| p.c0[i] * (c_end.c0[i] - c_init.c0[i]) + p.c1[i] * (c_end.c1[i] - c_init.c1[i]))
                .sum::<f64>()
                * rds.hx;
            pair - r + lim.slope_integral
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let (split0, split1) = equilibrium_split(&grid);
    let mass_error = fp.masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let energy_increase = fp.energies.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let row = ReactionRow {
        eps,
        tau: grid.tau,
        marginal_l1,
        energy_gap,
        split0,
        split1,
        dissipation_eps: drop_eps,
        dissipation_limit: lim.dissipation,
        energy_drop_limit: lim.energies[0] - lim.energies[lim.energies.len() - 1],
        b_sup_eps: b_eps,
        b_sup_limit: b_lim,
        mass_error,
        energy_increase,
    };
    let limit_final = c_end.clone();
    Ok(ReactionRun { row, fp_final: fp.final_state, limit_final, grid })
}

/// Runs the prepared-data comparison for every `eps` (in parallel).
pub fn edp_check_reaction(cfg: &ReactionConfig) -> Result<ReactionReport> {
    cfg.setup.validate()?;
    let (alpha0, alpha1) = cfg.setup.alphas();
    let results: Vec<(f64, Result<ReactionRow>)> = cfg.eps_list.par_iter().map(|&e| (e, edp_check_one(cfg, e))).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(err) => failures.push((e, err.to_string())),
        }
    }
    let smallest_solved_eps = rows.iter().map(|r| r.eps).fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))));
    Ok(ReactionReport { alpha0, alpha1, rows, failures, smallest_solved_eps })
}

/// Columns `x, y, u`.
pub fn write_snapshot<W: Write>(grid: &FpGrid, u: &[f64], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["x", "y", "u"])?;
    for (i, &x) in grid.xc.iter().enumerate() {
        for (j, &y) in grid.yc.iter().enumerate() {
            wr.write_record(&[x.to_string(), y.to_string(), u[i * grid.ny + j].to_string()])?;
        }
    }
    wr.flush().map_err(Error::Io)?;
    Ok(())
}

/// Columns `x, c0, c1`.
pub fn write_marginals<W: Write>(xc: &[f64], c: &TwoSpeciesField, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["x", "c0", "c1"])?;
    for (i, &x) in xc.iter().enumerate() {
        wr.write_record(&[x.to_string(), c.c0[i].to_string(), c.c1[i].to_string()])?;
    }
    wr.flush().map_err(Error::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_setup() -> ReactionSetup {
        ReactionSetup { omega_cells: 12, upsilon_cells: 140, ..ReactionSetup::default() }
    }

    #[test]
    fn default_potential_is_a_valid_double_well() {
        let s = ReactionSetup::default();
        s.validate().unwrap();
        let (a0, a1) = s.alphas();
        assert!((a0 - 0.732_52).abs() < 1e-5 && (a0 + a1 - 1.0).abs() < 1e-15);
        assert!((s.potential.curvature(BARRIER) + 5.0).abs() < 1e-9);
        assert!((s.potential.eval(4.9) - (1.0 - 0.5 * 5.0 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        let sym = ReactionSetup { potential: SplinePotential::double_well(1.0, 5.0, 1.0), ..ReactionSetup::default() };
        let (a0, a1) = sym.alphas();
        assert!((a0 - 0.5).abs() < 1e-15 && (a1 - 0.5).abs() < 1e-15);
        let k = ReactionSetup { potential: SplinePotential::double_well(4.0, 5.0, 1.0), ..ReactionSetup::default() };
        let (a0, a1) = k.alphas();
        assert!((a0 - 1.0 / 3.0).abs() < 1e-15 && (a1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_or_misplaced_potentials() {
        let mut s = ReactionSetup::default();
        s.potential.knots[1].ddv = 0.0;
        assert!(s.validate().is_err());
        let mut s = ReactionSetup::default();
        s.potential.knots[5].v = 0.4;
        assert!(s.validate().is_err());
        let mut s = ReactionSetup::default();
        s.potential.knots.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn kramers_ratio_tends_to_one() {
        let s = ReactionSetup::default();
        let sweep = kramers_sweep(&s, &[0.1, 0.03, 0.01]).unwrap();
        assert!((sweep[2].ratio - 1.0).abs() < 0.02, "{:?}", sweep[2]);
        let errs: Vec<f64> = sweep.iter().map(|k| (k.ratio - 1.0).abs()).collect();
        assert!(errs[0] > errs[2]);
    }

    #[test]
    fn discrete_equilibrium_is_stationary() {
        let grid = FpGrid::new(&small_setup()).unwrap();
        let w = grid.equilibrium();
        let traj = solve_fp(&grid, &w, 0.1, 1e-2, 1, &[]).unwrap();
        let err = traj.final_state.iter().zip(&w).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn x_independent_data_stay_x_independent_and_split_to_alpha() {
        let setup = ReactionSetup { omega_cells: 6, ..ReactionSetup::default() };
        let grid = FpGrid::new(&setup).unwrap();
        let c = TwoSpeciesField { c0: vec![0.0; 6], c1: vec![1.0; 6] };
        let u0 = recovery_initial(&grid, &c, 1.0).unwrap();
        let traj = solve_fp(&grid, &u0, 5.0, 1e-2, 100, &[]).unwrap();
        let last = traj.marginals.last().unwrap();
        let spread = last.c0.iter().fold(0.0f64, |m, x| m.max((x - last.c0[0]).abs()));
        assert!(spread < 1e-12);
        let (a0, _) = setup.alphas();
        assert!((last.c0[0] - a0).abs() / a0 < 0.02, "{}", last.c0[0]);
        assert!(traj.energies[1] < traj.energies[0]);
        assert!(traj.energies.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn fp_conserves_mass_and_dissipates() {
        let cfg = ReactionConfig::default();
        let setup = small_setup().with_epsilon(0.1);
        let grid = FpGrid::new(&setup).unwrap();
        let u0 = recovery_initial(&grid, &cfg.initial_species(&grid.xc), 1.0).unwrap();
        let traj = solve_fp(&grid, &u0, 0.3, 1e-3, 20, &[]).unwrap();
        for m in &traj.masses {
            assert!((m - 1.0).abs() < 1e-11);
        }
        assert!(traj.energies.windows(2).all(|w| w[1] <= w[0]));
        assert!(traj.final_state.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn rds_equilibrium_and_pointwise_closed_form() {
        let rds = LimitRds::new(&small_setup()).unwrap();
        let eq = rds.equilibrium();
        let traj = solve_limit_rds(&rds, &eq, 1.0, 0.1, 1, &[]).unwrap();
        let last = traj.states.last().unwrap();
        assert!(last.c0.iter().all(|x| (x - rds.alpha0).abs() < 1e-12));

        let s0 = ReactionSetup { m_omega: 0.0, ..small_setup() };
        let rds = LimitRds::new(&s0).unwrap();
        let cfg = ReactionConfig::default();
        let c = cfg.initial_species(&rds.xc);
        let traj = solve_limit_rds(&rds, &c, 0.5, 0.01, 10, &[]).unwrap();
        for (t, st) in traj.times.iter().zip(&traj.states) {
            let exact = pointwise_relaxation(&rds, &c, *t);
            let err = st.l1_distance(&exact, 1.0);
            assert!(err < 1e-8, "t = {t}: {err}");
        }
    }

    #[test]
    fn rds_mass_and_energy() {
        let rds = LimitRds::new(&small_setup()).unwrap();
        let c = ReactionConfig::default().initial_species(&rds.xc);
        let traj = solve_limit_rds(&rds, &c, 1.0, 1e-3, 50, &[]).unwrap();
        for st in &traj.states {
            assert!((st.mass(rds.hx) - 1.0).abs() < 1e-11);
        }
        assert!(traj.energies.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        // exact propagator: dissipation matches the energy drop
        let drop = traj.energies[0] - traj.energies[traj.energies.len() - 1];
        assert!((traj.dissipation - drop).abs() < 1e-3 * drop, "{} {}", traj.dissipation, drop);
    }

    #[test]
    fn z_transform_normalization_and_concentration() {
        let s = ReactionSetup::default();
        let mut prev = f64::INFINITY;
        let mut prev_step = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05] {
            let zt = ZTransform::new(&s.with_epsilon(eps)).unwrap();
            assert!((zt.z_end - 1.0).abs() < 1e-10);
            assert!(zt.z_of_y(0.0) == 0.0 && (zt.z_of_y(Y_MAX) - 1.0).abs() < 1e-14);
            let y = zt.y_of_z(0.3);
            assert!((zt.z_of_y(y) - 0.3).abs() < 1e-13);
            let inner = zt.interior_mass(0.05);
            assert!(inner < prev);
            prev = inner;
            // step limit away from the barrier
            let step_err = [4.0, 4.5, 5.5, 6.0].iter().map(|&y| if y < BARRIER { zt.z_of_y(y) } else { 1.0 - zt.z_of_y(y) }).fold(0.0, f64::max);
            assert!(step_err < prev_step);
            prev_step = step_err;
        }
        assert!(prev_step < 0.05, "{prev_step}");
        let zt = ZTransform::new(&s.with_epsilon(0.05)).unwrap();
        let (a0, _) = s.alphas();
        assert!((zt.left_mass() - a0).abs() < 0.01);
        let zt = ZTransform::new(&s.with_epsilon(0.5)).unwrap();
        let mass = gauss_legendre(|z| zt.w_hat(z), 0.0, 1.0, 200);
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
    }

    #[test]
    fn b_eps_equals_b_hat_under_transform() {
        let s = ReactionSetup::default().with_epsilon(0.5);
        let zt = ZTransform::new(&s).unwrap();
        let zr = &zt;
        let v = |x: f64, z: f64| 1.0 + 0.3 * (std::f64::consts::PI * x).cos() * (1.0 - 2.0 * z) + 0.2 * z * z;
        let vd = |x: f64, z: f64| 0.5 * x - 0.25 + (z - 0.5) * 0.3;
        let zeta = |x: f64, z: f64| (2.0 * z).sin() + x * x * z;
        let u = |x: f64, y: f64| v(x, zr.z_of_y(y)) * zr.w(y);
        let ud = |x: f64, y: f64| vd(x, zr.z_of_y(y)) * zr.w(y);
        let xi = |x: f64, y: f64| zeta(x, zr.z_of_y(y));
        let b = b_eps_slice(&s, &zt, &QFields { u: &u, u_dot: &ud, xi: &xi }, 6);
        let bh = b_hat_slice(&s, &zt, &ZFields { v: &v, v_dot: &vd, zeta: &zeta }, 6);
        assert!((b - bh).abs() < 1e-6 * b.abs().max(1.0), "{b} {bh}");
    }

    #[test]
    fn limit_b_forms_agree_and_n_is_consistent() {
        let rds = LimitRds::new(&small_setup()).unwrap();
        let v = TwoSpeciesField::from_fns(&rds.xc, |x| 1.0 + 0.3 * x, |x| 0.8 + 0.5 * x * x);
        let vd = TwoSpeciesField::from_fns(&rds.xc, |x| x - 0.5, |x| 0.3 - x);
        let zeta = TwoSpeciesField::from_fns(&rds.xc, |x| x.sin(), |x| 0.5 - x);
        let (a, b) = b_limit_slice(&rds, &v, &vd, &zeta);
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} {b}");
        for (d, v0, v1) in [(0.7, 1.2, 0.4), (-1.5, 0.3, 2.0), (0.0, 1.0, 3.0)] {
            let (brute, closed) = n_consistency(d, v0, v1, 400).unwrap();
            assert!((brute - closed).abs() < 1e-4, "{brute} {closed}");
        }
    }

    #[test]
    fn zero_test_function_gives_nonnegative_b() {
        let setup = small_setup().with_epsilon(0.1);
        let grid = FpGrid::new(&setup).unwrap();
        let cfg = ReactionConfig::default();
        let u0 = recovery_initial(&grid, &cfg.initial_species(&grid.xc), 1.0).unwrap();
        let zero = vec![0.0; grid.len()];
        let traj = solve_fp(&grid, &u0, 0.1, 1e-3, 10, &[zero]).unwrap();
        assert_eq!(traj.probe_r_star[0], 0.0);
        assert!(traj.slope_integral > 0.0);
    }

    #[test]
    fn commutativity_with_two_state_chain() {
        let s = ReactionSetup::default();
        let (e1, e2, r1, r2) = commutativity(&s, [0.4, 0.6], [0.3, -0.9]).unwrap();
        assert!((e1 - e2).abs() < 1e-12 && (r1 - r2).abs() < 1e-12, "{e1} {e2} {r1} {r2}");
    }

    proptest! {
        #[test]
        fn field_identity_on_random_grids(vals in proptest::collection::vec(0.05f64..3.0, 24)) {
            let rds = LimitRds::new(&small_setup()).unwrap();
            let c = TwoSpeciesField { c0: vals[..12].to_vec(), c1: vals[12..].to_vec() };
            prop_assert!(field_identity_defect(&rds, &c) < 1e-8);
        }

        #[test]
        fn y_step_preserves_mass_and_positivity(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let setup = ReactionSetup { omega_cells: 3, upsilon_cells: 70, ..ReactionSetup::default() }.with_epsilon(0.1);
            let grid = FpGrid::new(&setup).unwrap();
            let mut u: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let m = grid.mass(&u);
            u.iter_mut().for_each(|x| *x /= m);
            let e0 = grid.energy(&u).unwrap();
            grid.step(&mut u, 1e-2);
            prop_assert!((grid.mass(&u) - 1.0).abs() < 1e-12);
            prop_assert!(u.iter().all(|&x| x > 0.0));
            prop_assert!(grid.energy(&u).unwrap() <= e0);
        }
    }
}
