//! Reversible finite-state Markov chains `c' = A c`: detailed balance,
//! the entropic cosh gradient structure, the H-functional route to `R*`,
//! forward solves and particle simulation of the empirical process.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gradsys::{Constraint, GradientSystem, Trajectory, LOG_FLOOR};
use crate::potentials::{boltzmann, cosh_star, dcosh_star};

/// Rate matrix `A` with `c' = A c`; off-diagonal entries are jump rates
/// `j -> i` stored at `(i, j)`, columns sum to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovGenerator {
    a: DMatrix<f64>,
}

impl MarkovGenerator {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Generator("rate matrix must be square and nonempty".into()));
        }
        let scale = a.amax().max(1.0);
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                let x = a[(i, j)];
                if !x.is_finite() {
                    return Err(Error::Generator(format!("entry ({i},{j}) not finite")));
                }
                if i != j && x < 0.0 {
                    return Err(Error::Generator(format!("negative off-diagonal rate at ({i},{j})")));
                }
                sum += x;
            }
            if sum.abs() > 1e-12 * scale {
                return Err(Error::Generator(format!("column {j} sums to {sum:e}")));
            }
        }
        Ok(Self { a })
    }

    /// Build from off-diagonal rates (`rates[i][j]` = rate `j -> i`); the
    /// diagonal is filled so every column sums to zero.
    pub fn from_rates(rates: &[Vec<f64>]) -> Result<Self> {
        let n = rates.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, row) in rates.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Generator(format!("row {i} has length {}", row.len())));
            }
            for (j, &r) in row.iter().enumerate() {
                if i != j {
                    a[(i, j)] = r;
                }
            }
        }
        for j in 0..n {
            let out: f64 = (0..n).filter(|&i| i != j).map(|i| a[(i, j)]).sum();
            a[(j, j)] = -out;
        }
        Self::new(a)
    }

    pub fn size(&self) -> usize {
        self.a.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
    /// Generator acting on functions, `Q = A^T`.
    pub fn q(&self) -> DMatrix<f64> {
        self.a.transpose()
    }

    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n).map(|i| (0..n).map(|j| self.a[(i, j)] * c[j]).sum()).collect()
    }

    /// Strong connectivity of the jump graph.
    pub fn is_irreducible(&self) -> bool {
        let n = self.size();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(j) = stack.pop() {
                for i in 0..n {
                    let r = if forward { self.a[(i, j)] } else { self.a[(j, i)] };
                    if i != j && r > 0.0 && !seen[i] {
                        seen[i] = true;
                        stack.push(i);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Unique stationary probability vector.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        if !self.is_irreducible() {
            return Err(Error::Reducible);
        }
        let n = self.size();
        let mut m = self.a.clone();
        for j in 0..n {
            m[(n - 1, j)] = 1.0;
        }
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let w = m.lu().solve(&rhs).ok_or(Error::Reducible)?;
        let w: Vec<f64> = w.iter().copied().collect();
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Reducible);
        }
        Ok(w)
    }

    /// `max |A_ij w_j - A_ji w_i| / max(A_ij w_j, A_ji w_i)` over pairs.
    pub fn reversibility_residual(&self, w: &[f64]) -> f64 {
        let n = self.size();
        let mut res = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let (x, y) = (self.a[(i, j)] * w[j], self.a[(j, i)] * w[i]);
                let s = x.abs().max(y.abs());
                if s > 0.0 {
                    res = res.max((x - y).abs() / s);
                }
            }
        }
        res
    }
}

/// Stationary vector of a reversible chain with the attained asymmetry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetailedBalanceCertificate {
    pub w: Vec<f64>,
    pub residual: f64,
}

impl DetailedBalanceCertificate {
    /// Symmetric edge weights `m_ij = A_ij w_j`, averaged over both orientations.
    pub fn edge_weights(&self, gen: &MarkovGenerator) -> DMatrix<f64> {
        let n = gen.size();
        let a = gen.matrix();
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.5 * (a[(i, j)] * self.w[j] + a[(j, i)] * self.w[i]) })
    }
}

pub const REVERSIBILITY_TOL: f64 = 1e-10;

pub fn detailed_balance(gen: &MarkovGenerator) -> Result<DetailedBalanceCertificate> {
    let w = gen.stationary()?;
    let residual = gen.reversibility_residual(&w);
    if residual > REVERSIBILITY_TOL {
        return Err(Error::NotReversible { residual });
    }
    Ok(DetailedBalanceCertificate { w, residual })
}

/// Which scaling of the entropic structure to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `E = 1/2 sum w lambda_B(c/w)`, `R* = 1/2 sum_{i<j} m_ij sqrt(f_i f_j) C*(2(xi_i - xi_j))`,
    /// as produced by the large-deviation rate function.
    HalfEntropy,
    /// `E = sum w lambda_B(c/w)`, `R* = sum_{i<j} m_ij sqrt(f_i f_j) C*(xi_i - xi_j)`.
    FullEntropy,
}

impl Normalization {
    fn energy_factor(self) -> f64 {
        match self {
            Self::HalfEntropy => 0.5,
            Self::FullEntropy => 1.0,
        }
    }
}

/// Entropic cosh gradient structure of a reversible chain on the simplex.
#[derive(Clone, Debug)]
pub struct EntropicGs {
    w: Vec<f64>,
    m: DMatrix<f64>,
    norm: Normalization,
}

pub fn entropic_gs(gen: &MarkovGenerator, cert: &DetailedBalanceCertificate, norm: Normalization) -> EntropicGs {
    EntropicGs { w: cert.w.clone(), m: cert.edge_weights(gen), norm }
}

impl EntropicGs {
    pub fn normalization(&self) -> Normalization {
        self.norm
    }
    pub fn stationary(&self) -> &[f64] {
        &self.w
    }
    fn rel(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(&self.w).map(|(x, w)| x / w).collect()
    }
}

impl GradientSystem for EntropicGs {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn constraint(&self) -> Constraint {
        Constraint::Simplex
    }
    fn energy(&self, c: &[f64]) -> Result<f64> {
        let mut e = 0.0;
        for (x, w) in c.iter().zip(&self.w) {
            e += w * boltzmann(x / w)?;
        }
        Ok(self.norm.energy_factor() * e)
    }
    fn d_energy(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.iter().any(|&x| x < 0.0) {
            return domain("negative density in energy gradient");
        }
        let k = self.norm.energy_factor();
        Ok(c.iter().zip(&self.w).map(|(x, w)| k * (x / w).max(LOG_FLOOR).ln()).collect())
    }
    fn r_star(&self, c: &[f64], xi: &[f64]) -> f64 {
        let f = self.rel(c);
        let n = f.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let m = self.m[(i, j)];
                if m == 0.0 {
                    continue;
                }
                let g = (f[i] * f[j]).sqrt();
                s += match self.norm {
                    Normalization::HalfEntropy => 0.5 * m * g * cosh_star(2.0 * (xi[i] - xi[j])),
                    Normalization::FullEntropy => m * g * cosh_star(xi[i] - xi[j]),
                };
            }
        }
        s
    }
    fn d_r_star(&self, c: &[f64], xi: &[f64]) -> Vec<f64> {
        let f = self.rel(c);
        let n = f.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in i + 1..n {
                let m = self.m[(i, j)];
                if m == 0.0 {
                    continue;
                }
                let g = (f[i] * f[j]).sqrt();
                let d = match self.norm {
                    Normalization::HalfEntropy => m * g * dcosh_star(2.0 * (xi[i] - xi[j])),
                    Normalization::FullEntropy => m * g * dcosh_star(xi[i] - xi[j]),
                };
                out[i] += d;
                out[j] -= d;
            }
        }
        out
    }
}

/// `H(rho, xi) = sum_i e^{-xi_i} (Q e^xi)_i rho_i` with `Q = A^T`.
pub fn h_functional(gen: &MarkovGenerator, rho: &[f64], xi: &[f64]) -> f64 {
    let a = gen.matrix();
    let n = gen.size();
    let ex: Vec<f64> = xi.iter().map(|x| x.exp()).collect();
    (0..n)
        .map(|i| {
            // (Q e^xi)_i = sum_j A_ji e^{xi_j}
            let qe: f64 = (0..n).map(|j| a[(j, i)] * ex[j]).sum();
            (-xi[i]).exp() * qe * rho[i]
        })
        .sum()
}

/// Gradient of `H(rho, .)`.
pub fn d_h_functional(gen: &MarkovGenerator, rho: &[f64], xi: &[f64]) -> Vec<f64> {
    let a = gen.matrix();
    let n = gen.size();
    let ex: Vec<f64> = xi.iter().map(|x| x.exp()).collect();
    (0..n)
        .map(|k| {
            let qe: f64 = (0..n).map(|j| a[(j, k)] * ex[j]).sum();
            let back: f64 = (0..n).map(|i| (-xi[i]).exp() * a[(k, i)] * rho[i]).sum();
            -(-xi[k]).exp() * qe * rho[k] + ex[k] * back
        })
        .collect()
}

fn half_log_rel(cert: &DetailedBalanceCertificate, rho: &[f64]) -> Vec<f64> {
    rho.iter().zip(&cert.w).map(|(r, w)| 0.5 * (r / w).max(LOG_FLOOR).ln()).collect()
}

/// `R*(rho, xi) = H(rho, xi + 1/2 log f) - H(rho, 1/2 log f)` with `f = rho / w`
/// (half-entropy scaling).
pub fn r_star_via_h(gen: &MarkovGenerator, cert: &DetailedBalanceCertificate, rho: &[f64], xi: &[f64]) -> f64 {
    let base = half_log_rel(cert, rho);
    let shifted: Vec<f64> = base.iter().zip(xi).map(|(b, x)| b + x).collect();
    h_functional(gen, rho, &shifted) - h_functional(gen, rho, &base)
}

/// `D_xi R*` along the H-functional route.
pub fn d_r_star_via_h(gen: &MarkovGenerator, cert: &DetailedBalanceCertificate, rho: &[f64], xi: &[f64]) -> Vec<f64> {
    let base = half_log_rel(cert, rho);
    let shifted: Vec<f64> = base.iter().zip(xi).map(|(b, x)| b + x).collect();
    d_h_functional(gen, rho, &shifted)
}

/// Solve `c' = A c` by repeated multiplication with `exp(A dt)`; energies are
/// the half-entropy relative entropy when a stationary vector exists.
pub fn forward_solve(gen: &MarkovGenerator, c0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    let n = gen.size();
    if c0.len() != n || c0.iter().any(|&x| x < 0.0) {
        return domain("initial distribution must be nonnegative with matching size");
    }
    let mass: f64 = c0.iter().sum();
    if (mass - 1.0).abs() > 1e-10 {
        return domain(format!("initial mass {mass} != 1"));
    }
    if !(dt > 0.0) {
        return domain("dt must be positive");
    }
    let prop = (gen.matrix() * dt).exp();
    let w = gen.stationary().ok();
    let energy = |c: &[f64]| -> f64 {
        match &w {
            Some(w) => 0.5 * c.iter().zip(w).map(|(x, wi)| wi * boltzmann((x / wi).max(0.0)).unwrap_or(f64::NAN)).sum::<f64>(),
            None => f64::NAN,
        }
    };
    // dissipation rate <-DE(c), A c> with DE = 1/2 log(c/w)
    let power = |c: &[f64]| -> f64 {
        match &w {
            Some(w) => {
                let ac = gen.apply(c);
                -0.5 * c.iter().zip(w).zip(&ac).map(|((x, wi), v)| (x / wi).max(LOG_FLOOR).ln() * v).sum::<f64>()
            }
            None => f64::NAN,
        }
    };
    let steps = (t_end / dt).round() as usize;
    let mut traj = Trajectory::default();
    let mut c = nalgebra::DVector::from_column_slice(c0);
    let e0 = energy(c0);
    let mut p_prev = power(c0);
    let mut dissipated = 0.0;
    for k in 0..=steps {
        if k > 0 {
            c = &prop * c;
        }
        let cv: Vec<f64> = c.iter().copied().collect();
        let e = energy(&cv);
        let p = power(&cv);
        if k > 0 {
            dissipated += 0.5 * dt * (p + p_prev);
        }
        p_prev = p;
        traj.times.push(k as f64 * dt);
        traj.energies.push(e);
        traj.edb_residual.push(e - e0 + dissipated);
        traj.states.push(cv);
    }
    Ok(traj)
}

/// Histogram path of an N-particle system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalTrajectory {
    pub times: Vec<f64>,
    /// Fraction of particles per state at each sample time.
    pub fractions: Vec<Vec<f64>>,
    pub particles: usize,
}

impl EmpiricalTrajectory {
    /// `sup_t max_i |rho^N_i(t) - c_i(t)|` against a reference on the same grid.
    pub fn sup_distance(&self, reference: &Trajectory) -> f64 {
        self.fractions
            .iter()
            .zip(&reference.states)
            .map(|(a, b)| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
            .fold(0.0, f64::max)
    }
}

const CHUNK: usize = 1024;

fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Simulate `n_particles` independent chains started from `c0` with
/// exponential holding times, sampling the occupation fractions every `dt`.
/// Particles are processed in fixed-size chunks with per-chunk ChaCha
/// streams, so the output depends only on `seed`.
pub fn simulate_empirical(
    gen: &MarkovGenerator,
    c0: &[f64],
    n_particles: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<EmpiricalTrajectory> {
    let n = gen.size();
    if n_particles == 0 {
        return domain("need at least one particle");
    }
    if c0.len() != n {
        return domain("initial distribution has wrong size");
    }
    let steps = (t_end / dt).round() as usize;
    let a = gen.matrix();
    let out_rate: Vec<f64> = (0..n).map(|j| -a[(j, j)]).collect();
    let jump: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j || out_rate[j] <= 0.0 { 0.0 } else { a[(i, j)] / out_rate[j] }).collect())
        .collect();
    let chunks = n_particles.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ch as u64);
            let size = CHUNK.min(n_particles - ch * CHUNK);
            let mut hist = vec![0u64; (steps + 1) * n];
            for _ in 0..size {
                let mut state = sample_index(c0, rng.gen::<f64>());
                let mut t = 0.0;
                let mut next_jump = if out_rate[state] > 0.0 {
                    -(1.0 - rng.gen::<f64>()).ln() / out_rate[state]
                } else {
                    f64::INFINITY
                };
                for k in 0..=steps {
                    let ts = k as f64 * dt;
                    while t + next_jump <= ts {
                        t += next_jump;
                        state = sample_index(&jump[state], rng.gen::<f64>());
                        next_jump = if out_rate[state] > 0.0 {
                            -(1.0 - rng.gen::<f64>()).ln() / out_rate[state]
                        } else {
                            f64::INFINITY
                        };
                    }
                    hist[k * n + state] += 1;
                }
            }
            hist
        })
        .reduce(
            || vec![0u64; (steps + 1) * n],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                x
            },
        );
    let inv = 1.0 / n_particles as f64;
    Ok(EmpiricalTrajectory {
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        fractions: (0..=steps).map(|k| (0..n).map(|i| counts[k * n + i] as f64 * inv).collect()).collect(),
        particles: n_particles,
    })
}

/// Gaussian-kernel smoothing in time (bandwidth `h`), renormalized near the
/// ends so that constants are preserved.
pub fn smooth_path(times: &[f64], values: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let n = times.len();
    let dim = values.first().map_or(0, Vec::len);
    (0..n)
        .map(|k| {
            let mut acc = vec![0.0; dim];
            let mut wsum = 0.0;
            for l in 0..n {
                let d = (times[l] - times[k]) / h;
                if d.abs() > 6.0 {
                    continue;
                }
                let wt = (-0.5 * d * d).exp();
                wsum += wt;
                for i in 0..dim {
                    acc[i] += wt * values[l][i];
                }
            }
            acc.iter().map(|x| x / wsum).collect()
        })
        .collect()
}

/// Random reversible chain: positive stationary vector and symmetric edge
/// weights drawn from a seeded stream.
pub fn random_reversible(n: usize, seed: u64) -> MarkovGenerator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..n).map(|_| 0.2 + rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let mut rates = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.05 + rng.gen::<f64>();
            rates[i][j] = m / w[j];
            rates[j][i] = m / w[i];
        }
    }
    MarkovGenerator::from_rates(&rates).expect("constructed rates are a valid generator")
}

/// Generator of the three-state family `(2+eps) [[-1, 1/eps, 0], [1, -2/eps, 1], [0, 1/eps, -1]]`.
pub fn three_state_generator(eps: f64) -> Result<MarkovGenerator> {
    if !(eps > 0.0) {
        return domain("eps must be positive");
    }
    let s = 2.0 + eps;
    MarkovGenerator::from_rates(&[
        vec![0.0, s / eps, 0.0],
        vec![s, 0.0, s],
        vec![0.0, s / eps, 0.0],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradsys::{evolve, numeric_primal, rate_functional, EvolveOptions};
    use proptest::prelude::*;
    use rand::Rng;

    fn interior(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| 0.02 + rng.gen::<f64>()).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn three_state_equilibrium() {
        let g = three_state_generator(0.1).unwrap();
        let cert = detailed_balance(&g).unwrap();
        let want = [1.0 / 2.1, 0.1 / 2.1, 1.0 / 2.1];
        for i in 0..3 {
            assert!((cert.w[i] - want[i]).abs() < 1e-12);
        }
        let aw = g.apply(&cert.w);
        assert!(aw.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn symmetric_chain_has_uniform_equilibrium() {
        let g = MarkovGenerator::from_rates(&[vec![0.0, 2.0, 1.0], vec![2.0, 0.0, 3.0], vec![1.0, 3.0, 0.0]]).unwrap();
        let cert = detailed_balance(&g).unwrap();
        assert!(cert.w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn nonreversible_cycle_fails() {
        // forward 1->2->3->1 at rate 1, backward at rate 2
        let g = MarkovGenerator::from_rates(&[vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 2.0], vec![2.0, 1.0, 0.0]]).unwrap();
        match detailed_balance(&g) {
            Err(Error::NotReversible { residual }) => assert!((residual - 0.5).abs() < 1e-12),
            other => panic!("expected reversibility failure, got {other:?}"),
        }
    }

    #[test]
    fn reducible_chain_detected() {
        let g = MarkovGenerator::from_rates(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(detailed_balance(&g), Err(Error::Reducible)));
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -1.0]);
        assert!(MarkovGenerator::new(bad).is_err());
    }

    #[test]
    fn two_state_chain_recovers_scalar_structure() {
        let g = MarkovGenerator::from_rates(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cert = detailed_balance(&g).unwrap();
        let gs = entropic_gs(&g, &cert, Normalization::HalfEntropy);
        let scalar = crate::gradsys::TwoStateEntropic { a: 0.5 };
        for &p in &[0.1, 0.37, 0.5, 0.8] {
            let c = [p, 1.0 - p];
            let f = gs.field(&c).unwrap();
            assert!((f[0] - (1.0 - 2.0 * p)).abs() < 1e-14);
            assert!((gs.energy(&c).unwrap() - (scalar.energy(&[p]).unwrap() + 0.5 * 2f64.ln())).abs() < 1e-14);
            for &eta in &[-2.0, 0.3, 1.5] {
                // force on the reduced coordinate is xi_1 - xi_2
                let rs = gs.r_star(&c, &[eta, 0.0]);
                assert!((rs - scalar.r_star(&[p], &[eta])).abs() < 1e-14);
            }
        }
        let eq = gs.field(&cert.w).unwrap();
        assert!(eq.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn field_is_a_c_for_random_chains_both_normalizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let g = random_reversible(4, seed);
            let cert = detailed_balance(&g).unwrap();
            for norm in [Normalization::HalfEntropy, Normalization::FullEntropy] {
                let gs = entropic_gs(&g, &cert, norm);
                for _ in 0..20 {
                    let c = interior(4, &mut rng);
                    let f = gs.field(&c).unwrap();
                    let ac = g.apply(&c);
                    for i in 0..4 {
                        assert!((f[i] - ac[i]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn h_route_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_reversible(3, 42);
        let cert = detailed_balance(&g).unwrap();
        let gs = entropic_gs(&g, &cert, Normalization::HalfEntropy);
        let c = interior(3, &mut rng);
        assert!(h_functional(&g, &c, &[0.0; 3]).abs() < 1e-15);
        for _ in 0..50 {
            let rho = interior(3, &mut rng);
            let xi: Vec<f64> = (0..3).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect();
            let minus: Vec<f64> = xi.iter().map(|x| -x).collect();
            let via_h = r_star_via_h(&g, &cert, &rho, &xi);
            assert!((via_h - gs.r_star(&rho, &xi)).abs() < 1e-12);
            assert!((via_h - r_star_via_h(&g, &cert, &rho, &minus)).abs() < 1e-12);
            assert!(via_h >= -1e-14);
            let d1 = d_r_star_via_h(&g, &cert, &rho, &xi);
            let d2 = gs.d_r_star(&rho, &xi);
            for i in 0..3 {
                assert!((d1[i] - d2[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_solve_two_state_and_equilibrium() {
        let g = MarkovGenerator::from_rates(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let tr = forward_solve(&g, &[0.9, 0.1], 3.0, 1e-2).unwrap();
        for (t, c) in tr.times.iter().zip(&tr.states) {
            assert!((c[0] - (0.5 + 0.4 * (-2.0 * t).exp())).abs() < 1e-12);
            assert!((c[0] + c[1] - 1.0).abs() < 1e-12);
        }
        for w in tr.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let eq = forward_solve(&g, &[0.5, 0.5], 1.0, 0.1).unwrap();
        assert!(eq.states.iter().all(|c| (c[0] - 0.5).abs() < 1e-15));
    }

    #[test]
    fn forward_solve_agrees_with_gradient_flow() {
        let g = random_reversible(4, 5);
        let cert = detailed_balance(&g).unwrap();
        let gs = entropic_gs(&g, &cert, Normalization::HalfEntropy);
        let c0 = [0.4, 0.1, 0.3, 0.2];
        let lin = forward_solve(&g, &c0, 1.0, 1e-2).unwrap();
        let gf = evolve(&gs, &c0, &EvolveOptions::rk4(1.0, 1e-2)).unwrap();
        for (a, b) in lin.states.iter().zip(&gf.states) {
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() < 1e-6);
            }
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_particle_without_rates() {
        let g = MarkovGenerator::from_rates(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let emp = simulate_empirical(&g, &[1.0, 0.0], 1, 1.0, 0.1, 1).unwrap();
        assert!(emp.fractions.iter().all(|f| f[0] == 1.0));
    }

    #[test]
    fn empirical_process_is_deterministic_and_close() {
        let g = three_state_generator(0.5).unwrap();
        let c0 = [0.8, 0.1, 0.1];
        let a = simulate_empirical(&g, &c0, 10_000, 2.0, 0.02, 9).unwrap();
        let b = simulate_empirical(&g, &c0, 10_000, 2.0, 0.02, 9).unwrap();
        assert_eq!(a.fractions, b.fractions);
        let reference = forward_solve(&g, &c0, 2.0, 0.02).unwrap();
        assert!(a.sup_distance(&reference) < 0.05);
    }

    #[test]
    fn smoothed_empirical_path_has_small_rate() {
        let g = MarkovGenerator::from_rates(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cert = detailed_balance(&g).unwrap();
        let gs = entropic_gs(&g, &cert, Normalization::HalfEntropy);
        let n = 10_000;
        let emp = simulate_empirical(&g, &[0.9, 0.1], n, 2.0, 0.01, 4).unwrap();
        let smooth = smooth_path(&emp.times, &emp.fractions, 0.1);
        let tr = Trajectory::from_samples(&gs, emp.times.clone(), smooth).unwrap();
        let rate = rate_functional(&gs, &tr).unwrap();
        assert!(rate >= -1e-8);
        assert!(rate * (n as f64) < 1e3, "N * rate = {}", rate * n as f64);
    }

    #[test]
    fn numeric_primal_on_simplex_satisfies_fenchel() {
        let g = random_reversible(4, 8);
        let cert = detailed_balance(&g).unwrap();
        let gs = entropic_gs(&g, &cert, Normalization::HalfEntropy);
        let c = [0.1, 0.4, 0.3, 0.2];
        let xi: Vec<f64> = gs.d_energy(&c).unwrap().iter().map(|x| -x).collect();
        let v = gs.d_r_star(&c, &xi);
        let pair: f64 = xi.iter().zip(&v).map(|(a, b)| a * b).sum();
        let gap = numeric_primal(&gs, &c, &v).unwrap() + gs.r_star(&c, &xi) - pair;
        assert!(gap.abs() < 1e-9, "gap {gap}");
    }

    proptest! {
        #[test]
        fn generator_columns_sum_to_zero(seed in 0u64..500, n in 2usize..7) {
            let g = random_reversible(n, seed);
            for j in 0..n {
                let s: f64 = (0..n).map(|i| g.matrix()[(i, j)]).sum();
                prop_assert!(s.abs() < 1e-12);
            }
        }

        #[test]
        fn r_star_even_and_nonnegative(seed in 0u64..200, xs in proptest::collection::vec(-3.0f64..3.0, 5)) {
            let g = random_reversible(5, seed);
            let cert = detailed_balance(&g).unwrap();
            let rho = [0.1, 0.2, 0.3, 0.15, 0.25];
            let minus: Vec<f64> = xs.iter().map(|x| -x).collect();
            let a = r_star_via_h(&g, &cert, &rho, &xs);
            let b = r_star_via_h(&g, &cert, &rho, &minus);
            prop_assert!(a >= -1e-12);
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
        }

        #[test]
        fn entropy_is_lyapunov(seed in 0u64..100) {
            let g = random_reversible(4, seed);
            let tr = forward_solve(&g, &[0.7, 0.1, 0.1, 0.1], 2.0, 0.05).unwrap();
            for w in tr.energies.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-14);
            }
        }
    }
}
