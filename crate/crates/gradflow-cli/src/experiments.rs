use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gradflow::gradsys::{edb_gap, evolve, EvolveOptions, TwoStateEntropic, TwoStateQuadratic};
use gradflow::markov::{self, detailed_balance, entropic_gs, forward_solve, random_reversible, simulate_empirical, Normalization};
use gradflow::membrane::{self, MembraneConfig};
use gradflow::oracle::oracle_sweep;
use gradflow::potentials::{cosh_c, cosh_star, dcosh_star, legendre};
use gradflow::reaction::{self, ReactionConfig};
use gradflow::three_state::{self, edp_sweep, entropic_quadratic_growth, Case, FamilyConfig};

use crate::config::{self, eps_list, in_open_unit, nonzero, positive, time_grid};
use crate::output::Table;

#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckRecord {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Everything an experiment produces, before it is written out.
pub struct Outcome {
    pub config: serde_json::Value,
    pub checks: Vec<CheckRecord>,
    pub tables: Vec<Table>,
    /// Pre-rendered files, `(name, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
}

pub struct RunContext<'a> {
    pub config: Option<&'a Path>,
    pub quick: bool,
    pub seed: u64,
}

fn monotone(vals: &[f64], slack: f64) -> bool {
    vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

fn max_of(vals: impl IntoIterator<Item = f64>) -> f64 {
    vals.into_iter().fold(0.0, f64::max)
}

fn list(vals: &[f64]) -> String {
    let parts: Vec<String> = vals.iter().map(|v| format!("{v:.2e}")).collect();
    parts.join(", ")
}

// ---------------------------------------------------------------- identities

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentitiesConfig {
    /// spacing of the `(p, q)` grid in `(0, 1)`
    pub grid_step: f64,
    pub xi_max: f64,
    pub xi_points: usize,
    pub identity_tol: f64,
    pub duality_tol: f64,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self { grid_step: 0.05, xi_max: 5.0, xi_points: 201, identity_tol: 1e-12, duality_tol: 1e-8 }
    }
}

pub fn identities(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: IdentitiesConfig = config::load(ctx.config)?;
    positive("grid_step", cfg.grid_step)?;
    ensure!(cfg.grid_step < 0.5, "config field `grid_step`: must be below 0.5");
    positive("xi_max", cfg.xi_max)?;
    ensure!(cfg.xi_points >= 2, "config field `xi_points`: need at least 2 points");
    positive("identity_tol", cfg.identity_tol)?;
    positive("duality_tol", cfg.duality_tol)?;
    if ctx.quick {
        cfg.xi_points = cfg.xi_points.min(41);
    }

    let n = ((1.0 / cfg.grid_step).round() as usize).max(2);
    let grid: Vec<f64> = (1..n).map(|k| k as f64 / n as f64).collect();
    let mut ident = Table::new("identities", &["p", "q", "defect_cstar", "defect_dcstar"]);
    for &p in &grid {
        for &q in &grid {
            let g = (p * q).sqrt();
            let d = p.ln() - q.ln();
            let e1 = g * cosh_star(d) - 2.0 * (p.sqrt() - q.sqrt()).powi(2);
            let e2 = g * dcosh_star(d) - (p - q);
            ident.push(vec![p, q, e1, e2]);
        }
    }
    let e1 = max_of(ident.rows.iter().map(|r| r[2].abs()));
    let e2 = max_of(ident.rows.iter().map(|r| r[3].abs()));

    let mut leg = Table::new("legendre", &["xi", "cstar", "cstar_numeric", "c", "c_biconjugate"]);
    for k in 0..cfg.xi_points {
        let x = -cfg.xi_max + 2.0 * cfg.xi_max * k as f64 / (cfg.xi_points - 1) as f64;
        let conj = legendre(cosh_c, x)?;
        let bi = legendre(|xi| legendre(cosh_c, xi).unwrap_or(f64::INFINITY), x)?;
        leg.push(vec![x, cosh_star(x), conj, cosh_c(x), bi]);
    }
    let d1 = max_of(leg.rows.iter().map(|r| (r[2] - r[1]).abs()));
    let d2 = max_of(leg.rows.iter().map(|r| (r[4] - r[3]).abs()));

    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        checks: vec![
            CheckRecord::new(
                "cosh identities",
                e1 < cfg.identity_tol && e2 < cfg.identity_tol,
                format!("max defects {e1:.2e}, {e2:.2e}"),
            ),
            CheckRecord::new(
                "legendre duality",
                d1 < cfg.duality_tol && d2 < cfg.duality_tol,
                format!("conjugate {d1:.2e}, biconjugate {d2:.2e}"),
            ),
        ],
        tables: vec![ident, leg],
        files: vec![],
    })
}

// ----------------------------------------------------------------- two-state

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStateConfig {
    /// energy scale, which leaves the flow unchanged
    pub a: f64,
    pub p0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub tol: f64,
    pub edb_tol: f64,
}

impl Default for TwoStateConfig {
    fn default() -> Self {
        Self { a: 1.0, p0: 0.9, t_end: 3.0, dt: 1e-3, tol: 1e-6, edb_tol: 1e-4 }
    }
}

pub fn two_state(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: TwoStateConfig = config::load(ctx.config)?;
    positive("a", cfg.a)?;
    in_open_unit("p0", cfg.p0)?;
    time_grid("", cfg.t_end, cfg.dt)?;
    positive("tol", cfg.tol)?;
    positive("edb_tol", cfg.edb_tol)?;
    if ctx.quick {
        cfg.t_end = cfg.t_end.min(1.0);
    }

    let opts = EvolveOptions::rk4(cfg.t_end, cfg.dt);
    let quad = TwoStateQuadratic { a: cfg.a };
    let ent = TwoStateEntropic { a: cfg.a };
    let tq = evolve(&quad, &[cfg.p0], &opts)?;
    let te = evolve(&ent, &[cfg.p0], &opts)?;
    ensure!(tq.len() == te.len(), "trajectories sampled on different grids");
    let exact = |t: f64| 0.5 + (cfg.p0 - 0.5) * (-2.0 * t).exp();

    let mut table = Table::new("two_state", &["t", "p_quadratic", "p_entropic", "p_exact", "edb_quadratic", "edb_entropic"]);
    for k in 0..tq.len() {
        let t = tq.times[k];
        table.push(vec![t, tq.states[k][0], te.states[k][0], exact(t), tq.edb_residual[k], te.edb_residual[k]]);
    }
    let sq = max_of(table.rows.iter().map(|r| (r[1] - r[3]).abs()));
    let se = max_of(table.rows.iter().map(|r| (r[2] - r[3]).abs()));
    let gq = edb_gap(&quad, &tq)?;
    let ge = edb_gap(&ent, &te)?;
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        checks: vec![
            CheckRecord::new("same flow", sq < cfg.tol && se < cfg.tol, format!("sup errors quadratic {sq:.2e}, entropic {se:.2e}")),
            CheckRecord::new(
                "energy-dissipation balance",
                gq.abs() < cfg.edb_tol && ge.abs() < cfg.edb_tol,
                format!("gaps quadratic {gq:.2e}, entropic {ge:.2e}"),
            ),
        ],
        tables: vec![table],
        files: vec![],
    })
}

// -------------------------------------------------------------------- markov

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    /// size of the random reversible chain
    pub states: usize,
    /// initial law on the random chain; defaults to mass 0.7 on the first state
    pub c0: Option<Vec<f64>>,
    pub normalization: Normalization,
    pub t_end: f64,
    pub dt: f64,
    pub edb_tol: f64,
    /// rate parameter of the three-state chain used for the particle runs
    pub mc_eps: f64,
    /// sampling interval of the particle runs
    pub mc_dt: f64,
    pub mc_c0: Vec<f64>,
    pub particles: usize,
    pub runs: usize,
    pub mc_tol: f64,
    /// required fraction of runs within `mc_tol`
    pub mc_fraction: f64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            states: 4,
            c0: None,
            normalization: Normalization::HalfEntropy,
            t_end: 2.0,
            dt: 1e-3,
            edb_tol: 1e-4,
            mc_eps: 0.1,
            mc_dt: 0.01,
            mc_c0: vec![0.85, 0.05, 0.1],
            particles: 10_000,
            runs: 20,
            mc_tol: 0.05,
            mc_fraction: 0.95,
        }
    }
}

fn probability_vector(field: &str, c: &[f64], len: usize) -> Result<()> {
    ensure!(c.len() == len, "config field `{field}`: expected {len} entries, got {}", c.len());
    ensure!(c.iter().all(|&x| x >= 0.0 && x.is_finite()), "config field `{field}`: entries must be nonnegative");
    let s: f64 = c.iter().sum();
    ensure!((s - 1.0).abs() < 1e-9, "config field `{field}`: entries must sum to 1, got {s}");
    Ok(())
}

pub fn markov(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: MarkovConfig = config::load(ctx.config)?;
    ensure!(cfg.states >= 2, "config field `states`: need at least 2 states");
    let c0 = match &cfg.c0 {
        Some(c) => {
            probability_vector("c0", c, cfg.states)?;
            c.clone()
        }
        None => {
            let rest = 0.3 / (cfg.states - 1) as f64;
            (0..cfg.states).map(|i| if i == 0 { 0.7 } else { rest }).collect()
        }
    };
    time_grid("", cfg.t_end, cfg.dt)?;
    positive("edb_tol", cfg.edb_tol)?;
    positive("mc_eps", cfg.mc_eps)?;
    positive("mc_dt", cfg.mc_dt)?;
    probability_vector("mc_c0", &cfg.mc_c0, 3)?;
    nonzero("particles", cfg.particles)?;
    nonzero("runs", cfg.runs)?;
    positive("mc_tol", cfg.mc_tol)?;
    ensure!(cfg.mc_fraction > 0.0 && cfg.mc_fraction <= 1.0, "config field `mc_fraction`: must lie in (0, 1]");
    if ctx.quick {
        cfg.runs = cfg.runs.min(5);
    }

    let gen = random_reversible(cfg.states, ctx.seed);
    let cert = detailed_balance(&gen)?;
    let gs = entropic_gs(&gen, &cert, cfg.normalization);
    let traj = evolve(&gs, &c0, &EvolveOptions::rk4(cfg.t_end, cfg.dt))?;
    let gap = edb_gap(&gs, &traj)?;
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=cfg.states).map(|i| format!("c_{i}")));
    cols.extend(["energy".to_string(), "edb_residual".to_string()]);
    let mut forward = Table { name: "forward".into(), columns: cols, rows: vec![] };
    for k in 0..traj.len() {
        let mut row = vec![traj.times[k]];
        row.extend(&traj.states[k]);
        row.extend([traj.energies[k], traj.edb_residual[k]]);
        forward.push(row);
    }

    let chain3 = markov::three_state_generator(cfg.mc_eps)?;
    let reference = forward_solve(&chain3, &cfg.mc_c0, cfg.t_end, cfg.mc_dt)?;
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|k| ctx.seed.wrapping_add(k)).collect();
    let runs = seeds
        .par_iter()
        .map(|&s| simulate_empirical(&chain3, &cfg.mc_c0, cfg.particles, cfg.t_end, cfg.mc_dt, s))
        .collect::<gradflow::Result<Vec<_>>>()?;
    let mut mc = Table::new("monte_carlo", &["run", "seed", "sup_distance"]);
    for (k, (run, &s)) in runs.iter().zip(&seeds).enumerate() {
        mc.push(vec![k as f64, s as f64, run.sup_distance(&reference)]);
    }
    let mut empirical = Table::new("empirical", &["t", "rho_1", "rho_2", "rho_3", "c_1", "c_2", "c_3"]);
    for (k, f) in runs[0].fractions.iter().enumerate() {
        let c = &reference.states[k];
        empirical.push(vec![runs[0].times[k], f[0], f[1], f[2], c[0], c[1], c[2]]);
    }
    let dist = mc.column("sup_distance").unwrap_or_default();
    let good = dist.iter().filter(|&&d| d < cfg.mc_tol).count();
    let worst = max_of(dist.iter().copied());

    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        checks: vec![
            CheckRecord::new("detailed balance", true, format!("asymmetry {:.2e}", cert.residual)),
            CheckRecord::new("energy-dissipation balance", gap.abs() < cfg.edb_tol, format!("gap {gap:.2e}")),
            CheckRecord::new(
                "mean-field limit",
                good as f64 >= cfg.mc_fraction * cfg.runs as f64,
                format!("{good}/{} runs within {}, worst {worst:.3}", cfg.runs, cfg.mc_tol),
            ),
        ],
        tables: vec![forward, empirical, mc],
        files: vec![],
    })
}

// --------------------------------------------------------------- three-state

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThreeStateConfig {
    pub case: Case,
    pub eps_list: Vec<f64>,
    pub p0: f64,
    pub t_end: f64,
    pub dt: f64,
    /// relative increase tolerated between consecutive sweep entries
    pub slack: f64,
    /// only used for `entropic-quadratic`
    pub growth_p: f64,
    pub growth_eta: Vec<f64>,
    pub growth_b: f64,
}

impl Default for ThreeStateConfig {
    fn default() -> Self {
        Self {
            case: Case::Cosh,
            eps_list: vec![0.3, 0.1, 0.03, 0.01],
            p0: 0.9,
            t_end: 1.0,
            dt: 1e-3,
            slack: 0.1,
            growth_p: 0.5,
            growth_eta: (0..=10).map(|k| 10.0 + k as f64).collect(),
            growth_b: 0.25,
        }
    }
}

pub fn three_state(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: ThreeStateConfig = config::load(ctx.config)?;
    eps_list("eps_list", &cfg.eps_list)?;
    in_open_unit("p0", cfg.p0)?;
    time_grid("", cfg.t_end, cfg.dt)?;
    ensure!(cfg.slack >= 0.0, "config field `slack`: must be nonnegative");
    if ctx.quick {
        cfg.eps_list.truncate(3);
    }

    let rows = edp_sweep(cfg.case, &cfg.eps_list, cfg.p0, cfg.t_end, cfg.dt)?;
    let mut sweep = Table::new(
        "sweep",
        &["eps", "sup_error", "dissipation_eps", "dissipation_limit", "dissipation_gap", "energy_gap_initial"],
    );
    for r in &rows {
        sweep.push(vec![r.eps, r.sup_error, r.dissipation_eps, r.dissipation_limit, r.dissipation_gap, r.energy_gap_initial]);
    }

    let eps_min = *cfg.eps_list.last().context("empty eps list")?;
    let rq = three_state::reduced(&FamilyConfig::new(cfg.case, 1.0));
    let zeta = rq.recovery_zeta(cfg.p0, 1.0 - 2.0 * cfg.p0)?;
    let gs = three_state::family_gs(FamilyConfig::new(cfg.case, eps_min))?;
    let u0 = three_state::recovery_state(cfg.p0, eps_min, zeta);
    let traj = evolve(&gs, &u0, &EvolveOptions::rk4(cfg.t_end, cfg.dt))?;
    let mut path = Table::new("trajectory", &["t", "u_1", "u_2", "u_3", "p_limit", "energy"]);
    for k in 0..traj.len() {
        let u = &traj.states[k];
        let t = traj.times[k];
        path.push(vec![t, u[0], u[1], u[2], three_state::limit_solution(cfg.p0, t), traj.energies[k]]);
    }

    let sup: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    let gap: Vec<f64> = rows.iter().map(|r| r.dissipation_gap).collect();
    let mut checks = vec![
        CheckRecord::new("sup error decreasing", monotone(&sup, cfg.slack), format!("sup errors [{}]", list(&sup))),
        CheckRecord::new("dissipation gap decreasing", monotone(&gap, cfg.slack), format!("gaps [{}]", list(&gap))),
    ];
    let mut tables = vec![sweep, path];

    if cfg.case == Case::EntropicQuadratic {
        in_open_unit("growth_p", cfg.growth_p)?;
        positive("growth_b", cfg.growth_b)?;
        ensure!(!cfg.growth_eta.is_empty(), "config field `growth_eta`: must not be empty");
        let rep = entropic_quadratic_growth(cfg.growth_p, &cfg.growth_eta, cfg.growth_b)?;
        let mut growth = Table::new("growth", &["eta", "r_star", "doubling_ratio", "lower_bound"]);
        for k in 0..rep.eta.len() {
            growth.push(vec![rep.eta[k], rep.r_star[k], rep.doubling_ratio[k], rep.lower_bound[k]]);
        }
        let min_ratio = rep.doubling_ratio.iter().copied().fold(f64::INFINITY, f64::min);
        let last = rep.eta.len() - 1;
        checks.push(CheckRecord::new(
            "superquadratic growth",
            min_ratio >= 7.5 && rep.r_star[last] > rep.lower_bound[last],
            format!("min doubling ratio {min_ratio:.1}, R* {:.4e} vs bound {:.4e}", rep.r_star[last], rep.lower_bound[last]),
        ));
        tables.push(growth);
    }

    Ok(Outcome { config: serde_json::to_value(&cfg)?, checks, tables, files: vec![] })
}

// ------------------------------------------------------------------ membrane

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MembraneExperiment {
    pub system: MembraneConfig,
    pub eps_list: Vec<f64>,
    pub slack: f64,
}

impl Default for MembraneExperiment {
    fn default() -> Self {
        Self { system: MembraneConfig::default(), eps_list: vec![0.1, 0.03, 0.01], slack: 0.0 }
    }
}

pub fn membrane(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: MembraneExperiment = config::load(ctx.config)?;
    eps_list("eps_list", &cfg.eps_list)?;
    ensure!(cfg.eps_list[0] < 0.5, "config field `eps_list[0]`: must be below 0.5");
    nonzero("system.mesh.cells_side", cfg.system.mesh.cells_side)?;
    nonzero("system.mesh.cells_layer", cfg.system.mesh.cells_layer)?;
    time_grid("system.", cfg.system.t_end, cfg.system.dt)?;
    nonzero("system.sample_every", cfg.system.sample_every)?;
    cfg.system.profile.validate().context("config field `system.profile`")?;
    ensure!(cfg.slack >= 0.0, "config field `slack`: must be nonnegative");
    if ctx.quick {
        cfg.system.mesh = membrane::MeshSpec { cells_side: 60, cells_layer: 20 };
        cfg.system.dt = cfg.system.dt.max(1e-3);
        cfg.system.t_end = cfg.system.t_end.min(0.2);
    }

    let sys = &cfg.system;
    let a_star = sys.profile.a_star_coeff()?;
    let rows = cfg
        .eps_list
        .par_iter()
        .map(|&e| membrane::edp_check_one(sys, e, membrane::default_initial))
        .collect::<gradflow::Result<Vec<_>>>()?;
    let mut sweep = Table::new(
        "sweep",
        &[
            "eps",
            "sup_l1",
            "max_energy_gap",
            "dissipation_eps",
            "dissipation_limit",
            "edb_residual_eps",
            "edb_residual_limit",
            "min_density",
            "max_density",
        ],
    );
    for r in &rows {
        sweep.push(vec![
            r.eps,
            r.sup_l1,
            r.max_energy_gap,
            r.dissipation_eps,
            r.dissipation_limit,
            r.edb_residual_eps,
            r.edb_residual_limit,
            r.min_density,
            r.max_density,
        ]);
    }

    let eps_min = *cfg.eps_list.last().context("empty eps list")?;
    let thin = membrane::thin_layer_system(&sys.profile, eps_min, sys.mesh)?;
    let lim = membrane::limit_system(&sys.profile, a_star, sys.mesh)?;
    let data = membrane::well_prepared(&sys.profile, eps_min, &thin, &lim, membrane::default_initial)?;
    let te = thin.solve(&data.thin, sys.t_end, sys.dt, sys.sample_every)?;
    let tl = lim.solve(&data.limit, sys.t_end, sys.dt, sys.sample_every)?;
    let mut thin_csv = Vec::new();
    membrane::write_snapshot(&thin, te.states.last().context("empty trajectory")?, &mut thin_csv)?;
    let mut lim_csv = Vec::new();
    membrane::write_snapshot(&lim, tl.states.last().context("empty trajectory")?, &mut lim_csv)?;

    let l1: Vec<f64> = rows.iter().map(|r| r.sup_l1).collect();
    let lo = rows.iter().map(|r| r.min_density).fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        checks: vec![
            CheckRecord::new("interface coefficient", a_star > 0.0 && a_star.is_finite(), format!("A_* = {a_star:.10}")),
            CheckRecord::new("L1 distance decreasing", monotone(&l1, cfg.slack), format!("sup L1 [{}]", list(&l1))),
            CheckRecord::new("positivity", lo > 0.0, format!("min density {lo:.3e}")),
        ],
        tables: vec![sweep],
        files: vec![("snapshot_thin.csv".into(), thin_csv), ("snapshot_limit.csv".into(), lim_csv)],
    })
}

// ------------------------------------------------------------------ reaction

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactionExperiment {
    pub sweep: ReactionConfig,
    pub kramers_eps: Vec<f64>,
    pub mass_tol: f64,
    pub kramers_tol: f64,
}

impl Default for ReactionExperiment {
    fn default() -> Self {
        Self { sweep: ReactionConfig::default(), kramers_eps: vec![0.2, 0.1, 0.05, 0.02, 0.01], mass_tol: 1e-8, kramers_tol: 0.02 }
    }
}

fn validate_reaction(cfg: &ReactionExperiment) -> Result<()> {
    let s = &cfg.sweep;
    s.setup.validate().context("config field `sweep.setup`")?;
    nonzero("sweep.setup.omega_cells", s.setup.omega_cells)?;
    nonzero("sweep.setup.upsilon_cells", s.setup.upsilon_cells)?;
    eps_list("sweep.eps_list", &s.eps_list)?;
    time_grid("sweep.", s.t_end, s.dt)?;
    nonzero("sweep.sample_every", s.sample_every)?;
    positive("sweep.cutoff_width", s.cutoff_width)?;
    in_open_unit("sweep.c0_mass", s.c0_mass)?;
    ensure!((0.0..1.0).contains(&s.amplitude), "config field `sweep.amplitude`: must lie in [0, 1)");
    eps_list("kramers_eps", &cfg.kramers_eps)?;
    positive("mass_tol", cfg.mass_tol)?;
    positive("kramers_tol", cfg.kramers_tol)?;
    Ok(())
}

pub fn reaction(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: ReactionExperiment = config::load(ctx.config)?;
    validate_reaction(&cfg)?;
    if ctx.quick {
        cfg.sweep.setup.omega_cells = cfg.sweep.setup.omega_cells.min(10);
        cfg.sweep.setup.upsilon_cells = cfg.sweep.setup.upsilon_cells.min(140);
        cfg.sweep.dt = cfg.sweep.dt.max(5e-3);
        cfg.sweep.t_end = cfg.sweep.t_end.min(0.5);
    }

    let s = &cfg.sweep;
    let runs = s.eps_list.par_iter().map(|&e| reaction::edp_run_one(s, e)).collect::<gradflow::Result<Vec<_>>>()?;
    let mut sweep = Table::new(
        "sweep",
        &[
            "eps",
            "tau",
            "marginal_l1",
            "energy_gap",
            "split0",
            "split1",
            "dissipation_eps",
            "dissipation_limit",
            "energy_drop_limit",
            "b_sup_eps",
            "b_sup_limit",
            "mass_error",
            "energy_increase",
        ],
    );
    for run in &runs {
        let r = &run.row;
        sweep.push(vec![
            r.eps,
            r.tau,
            r.marginal_l1,
            r.energy_gap,
            r.split0,
            r.split1,
            r.dissipation_eps,
            r.dissipation_limit,
            r.energy_drop_limit,
            r.b_sup_eps,
            r.b_sup_limit,
            r.mass_error,
            r.energy_increase,
        ]);
    }

    let ks = reaction::kramers_sweep(&s.setup, &cfg.kramers_eps)?;
    let mut kramers = Table::new("kramers", &["eps", "tau", "scaled_tau", "ratio"]);
    for k in &ks {
        kramers.push(vec![k.eps, k.tau, k.scaled_tau, k.ratio]);
    }

    let last = runs.last().context("empty sweep")?;
    let mut snapshot = Vec::new();
    reaction::write_snapshot(&last.grid, &last.fp_final, &mut snapshot)?;
    let mut fp_marg = Vec::new();
    reaction::write_marginals(&last.grid.xc, &last.grid.marginals(&last.fp_final), &mut fp_marg)?;
    let mut lim_marg = Vec::new();
    reaction::write_marginals(&last.grid.xc, &last.limit_final, &mut lim_marg)?;

    let l1: Vec<f64> = runs.iter().map(|r| r.row.marginal_l1).collect();
    let mass = max_of(runs.iter().map(|r| r.row.mass_error));
    let rise = max_of(runs.iter().map(|r| r.row.energy_increase));
    let k_last = ks.last().context("empty Kramers sweep")?;
    let (a0, a1) = s.setup.alphas();
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        checks: vec![
            CheckRecord::new("mass conservation", mass < cfg.mass_tol, format!("max mass error {mass:.2e}")),
            CheckRecord::new("energy decay", rise <= 1e-12, format!("max energy increase {rise:.2e}")),
            CheckRecord::new("marginal L1 decreasing", monotone(&l1, 0.0), format!("sup L1 [{}]", list(&l1))),
            CheckRecord::new(
                "Kramers asymptotics",
                (k_last.ratio - 1.0).abs() < cfg.kramers_tol,
                format!("ratio {:.6} at eps = {}; well masses ({a0:.4}, {a1:.4})", k_last.ratio, k_last.eps),
            ),
        ],
        tables: vec![sweep, kramers],
        files: vec![
            ("snapshot.csv".into(), snapshot),
            ("marginals_fp.csv".into(), fp_marg),
            ("marginals_limit.csv".into(), lim_marg),
        ],
    })
}

// -------------------------------------------------------------------- oracle

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// number of random instances
    pub n: usize,
    /// cells of the brute-force discretization
    pub m: usize,
    pub g_tol: f64,
    pub parabola_tol: f64,
    pub n_tol: f64,
    pub bridge_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { n: 100, m: 400, g_tol: 1e-3, parabola_tol: 1e-2, n_tol: 1e-3, bridge_tol: 1e-4 }
    }
}

pub fn oracle(ctx: &RunContext) -> Result<Outcome> {
    let mut cfg: OracleConfig = config::load(ctx.config)?;
    nonzero("n", cfg.n)?;
    if cfg.m < 4 {
        bail!("config field `m`: need at least 4 cells");
    }
    for (name, v) in [("g_tol", cfg.g_tol), ("parabola_tol", cfg.parabola_tol), ("n_tol", cfg.n_tol), ("bridge_tol", cfg.bridge_tol)] {
        positive(name, v)?;
    }
    if ctx.quick {
        cfg.n = cfg.n.min(20);
        cfg.m = cfg.m.min(200);
    }

    let rows = oracle_sweep(cfg.n, ctx.seed, cfg.m)?;
    let mut table = Table::new(
        "oracle",
        &[
            "alpha",
            "u0",
            "u1",
            "g_closed",
            "g_brute",
            "g_gap",
            "parabola_gap",
            "delta",
            "n_closed",
            "n_brute",
            "n_gap",
            "bridge_gap",
            "converged",
        ],
    );
    for r in &rows {
        table.push(vec![
            r.alpha,
            r.u0,
            r.u1,
            r.g_closed,
            r.g_brute,
            r.g_gap,
            r.parabola_gap,
            r.delta,
            r.n_closed,
            r.n_brute,
            r.n_gap,
            r.bridge_gap,
            if r.converged { 1.0 } else { 0.0 },
        ]);
    }
    let g = max_of(rows.iter().map(|r| r.g_gap));
    let p = max_of(rows.iter().map(|r| r.parabola_gap));
    let nn = max_of(rows.iter().map(|r| r.n_gap));
    let b = max_of(rows.iter().map(|r| r.bridge_gap));
    let stalled = rows.iter().filter(|r| !r.converged).count();
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        checks: vec![
            CheckRecord::new("transmission closed form", g < cfg.g_tol && p < cfg.parabola_tol, format!("g gap {g:.2e}, parabola gap {p:.2e}")),
            CheckRecord::new("reaction closed form", nn < cfg.n_tol, format!("n gap {nn:.2e}")),
            CheckRecord::new("bridge identity", b < cfg.bridge_tol, format!("bridge gap {b:.2e}")),
            CheckRecord::new("brute force converged", stalled == 0, format!("{stalled} of {} instances stalled", rows.len())),
        ],
        tables: vec![table],
        files: vec![],
    })
}
