//! Receding-horizon control constrained to a synthesized invariant set, and
//! closed-loop simulation.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::encode::{build_mpc, warm_start, EncodeError, TargetCover};
use crate::mip::{mip_solve, MipStatus, SolverConfig};
use crate::network::{Mlp, NetworkError};
use crate::synth::{ControlAtlas, CIS_TOL, RETRY_MARGIN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("state {0:?} lies outside the invariant set and the controller found no feasible plan")]
    OutsideCis(Vec<f64>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MpcVariant {
    /// Invariant-set membership at every predicted step.
    Full,
    /// Membership of the first predicted state only.
    #[default]
    FirstStep,
}

/// Step-indexed reference with last-value hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule {
    points: Vec<(usize, Vec<f64>)>,
}

impl ReferenceSchedule {
    pub fn constant(x_ref: Vec<f64>) -> Self {
        Self { points: vec![(0, x_ref)] }
    }

    /// Entries sorted by step; steps before the first entry use its value.
    pub fn new(mut points: Vec<(usize, Vec<f64>)>) -> Result<Self, MpcError> {
        if points.is_empty() {
            return Err(MpcError::Config("empty reference schedule".into()));
        }
        points.sort_by_key(|p| p.0);
        let n = points[0].1.len();
        if points.iter().any(|p| p.1.len() != n) {
            return Err(MpcError::Config("reference rows differ in length".into()));
        }
        Ok(Self { points })
    }

    /// Square wave between `a` and `b`, switching every `period` steps.
    pub fn alternating(a: Vec<f64>, b: Vec<f64>, period: usize, steps: usize) -> Self {
        let period = period.max(1);
        let points =
            (0..=steps / period).map(|i| (i * period, if i % 2 == 0 { a.clone() } else { b.clone() })).collect();
        Self { points }
    }

    pub fn at(&self, k: usize) -> &[f64] {
        let i = self.points.partition_point(|p| p.0 <= k);
        &self.points[i.saturating_sub(1)].1
    }

    pub fn points(&self) -> &[(usize, Vec<f64>)] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].1.len()
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub q_terminal: Vec<f64>,
    pub variant: MpcVariant,
    pub reference: ReferenceSchedule,
    pub use_warm_start: bool,
    pub solver: SolverConfig,
}

impl MpcConfig {
    /// Uniform weights, reference at the origin.
    pub fn uniform(n_x: usize, n_u: usize, horizon: usize, q: f64, r: f64) -> Self {
        Self {
            horizon,
            q: vec![q; n_x],
            r: vec![r; n_u],
            q_terminal: vec![q; n_x],
            variant: MpcVariant::FirstStep,
            reference: ReferenceSchedule::constant(vec![0.0; n_x]),
            use_warm_start: true,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::Config("horizon must be at least 1".into()));
        }
        for (name, w, n) in [("Q", &self.q, n_x), ("R", &self.r, n_u), ("Q_N", &self.q_terminal, n_x)] {
            if w.len() != n {
                return Err(MpcError::Config(format!("{name} has {} entries, expected {n}", w.len())));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(MpcError::Config(format!("{name} weights must be finite and nonnegative")));
            }
        }
        if self.reference.dim() != n_x {
            return Err(MpcError::Config(format!("reference has {} columns, expected {n_x}", self.reference.dim())));
        }
        Ok(())
    }
}

/// Diagnostics of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub u: Vec<f64>,
    pub feasible: bool,
    pub status: MipStatus,
    pub objective: f64,
    /// Cost of the rolled atlas plan when a warm start was injected.
    pub warm_objective: Option<f64>,
    pub solve_time: Duration,
    pub nodes: usize,
    /// The applied control came from the atlas, not the optimizer.
    pub fallback: bool,
    /// The solve that produced `u` used inflated obstacles.
    pub margin: bool,
}

/// One receding-horizon step at state `x` and time `k`.
pub fn mpc_step(
    m: &Mlp,
    atlas: &ControlAtlas,
    cover: &TargetCover,
    cfg: &MpcConfig,
    x: &[f64],
    k: usize,
) -> Result<MpcStep, MpcError> {
    cfg.validate(m.n_x(), m.n_u())?;
    let u_dom = atlas.control_domain();
    let x_ref = cfg.reference.at(k);
    let start = Instant::now();
    let mut nodes = 0;
    let mut last = None;
    for margin in [0.0, RETRY_MARGIN] {
        let mut mm = build_mpc(m, x, x_ref, u_dom, cfg, cover, margin)?;
        let mut warm_objective = None;
        if cfg.use_warm_start && atlas.contains(x) {
            let ws = warm_start(x, atlas, m, &mm)?;
            warm_objective = Some(mm.model.objective_value(&ws));
            mm.model.set_initial(ws).map_err(EncodeError::from)?;
        }
        let r = mip_solve(&mm.model, &cfg.solver);
        nodes += r.nodes;
        last = Some(r.status);
        if !r.status.has_solution() {
            continue;
        }
        let u = u_dom.clamp(&mm.u[0].iter().map(|&v| r.value(v)).collect::<Vec<_>>());
        let next = m.forward(x, &u)?;
        if atlas.contains(&next) {
            return Ok(MpcStep {
                u,
                feasible: true,
                status: r.status,
                objective: r.objective,
                warm_objective,
                solve_time: start.elapsed(),
                nodes,
                fallback: false,
                margin: margin > 0.0,
            });
        }
    }
    match atlas.control(x) {
        Ok(u) => Ok(MpcStep {
            u,
            feasible: false,
            status: last.unwrap_or(MipStatus::Infeasible),
            objective: f64::NAN,
            warm_objective: None,
            solve_time: start.elapsed(),
            nodes,
            fallback: true,
            margin: false,
        }),
        Err(_) => Err(MpcError::OutsideCis(x.to_vec())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub feasible: bool,
    /// Whether the state reached by this step lies in the invariant set.
    pub in_cis: bool,
    pub objective: f64,
    pub warm_objective: Option<f64>,
    pub solve_time: Duration,
    pub nodes: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn infeasible_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.feasible).count()
    }

    pub fn fallbacks(&self) -> usize {
        self.steps.iter().filter(|s| s.fallback).count()
    }

    pub fn exits(&self) -> usize {
        self.steps.iter().filter(|s| !s.in_cis).count()
    }

    pub fn mean_solve_time(&self) -> Duration {
        if self.steps.is_empty() {
            return Duration::ZERO;
        }
        self.steps.iter().map(|s| s.solve_time).sum::<Duration>() / self.steps.len() as u32
    }

    /// Largest gap between a recorded successor and the network applied to
    /// its predecessor.
    pub fn dynamics_residual(&self, m: &Mlp) -> Result<f64, NetworkError> {
        let mut worst: f64 = 0.0;
        for (k, u) in self.controls.iter().enumerate() {
            let y = m.forward(&self.states[k], u)?;
            for (a, b) in y.iter().zip(&self.states[k + 1]) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Closed loop `x_{k+1} = f(x_k, u_k)` under [`mpc_step`].
pub fn simulate(
    m: &Mlp,
    atlas: &ControlAtlas,
    cfg: &MpcConfig,
    x0: &[f64],
    steps: usize,
) -> Result<Trajectory, MpcError> {
    cfg.validate(m.n_x(), m.n_u())?;
    if x0.len() != m.n_x() {
        return Err(MpcError::Config(format!("x0 has {} entries, expected {}", x0.len(), m.n_x())));
    }
    let cover = TargetCover::new(atlas.cis());
    let mut traj = Trajectory { states: vec![x0.to_vec()], ..Trajectory::default() };
    let mut x = x0.to_vec();
    for k in 0..steps {
        let step = mpc_step(m, atlas, &cover, cfg, &x, k)?;
        x = m.forward(&x, &step.u)?;
        traj.states.push(x.clone());
        traj.controls.push(step.u);
        traj.steps.push(StepRecord {
            feasible: step.feasible,
            in_cis: atlas.cis().contains_point(&x, CIS_TOL),
            objective: step.objective,
            warm_objective: step.warm_objective,
            solve_time: step.solve_time,
            nodes: step.nodes,
            fallback: step.fallback,
        });
    }
    Ok(traj)
}
