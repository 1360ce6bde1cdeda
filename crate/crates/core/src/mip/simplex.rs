//! Dense bounded-variable simplex.
//!
//! Columns are the structural variables, one slack per row (row sense is
//! expressed through the slack bounds) and artificial columns for rows the
//! initial slack basis cannot satisfy. The tableau `B⁻¹[A | I | E]` is kept
//! explicitly and refactored from the original matrix every few hundred
//! pivots. Primal simplex solves from scratch; dual simplex re-solves after
//! bound changes during branch-and-bound.

use super::model::{MipModel, Sense};

const INF: f64 = f64::INFINITY;
const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 150;
const DEGENERATE_SWITCH: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    /// Dual bound exceeded the caller's cutoff.
    Cutoff,
    IterationLimit,
    /// Singular basis or unbounded ray; only arises from numerical trouble.
    Numerical,
}

#[derive(Debug, Clone)]
pub struct Tableau {
    m: usize,
    n: usize,
    ncols: usize,
    /// Current `B⁻¹ [A | I | E]`, row-major.
    t: Vec<f64>,
    /// Original `[A | I | E]`.
    orig: Vec<f64>,
    rhs: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    val: Vec<f64>,
    at_ub: Vec<bool>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    phase_one: bool,
    feastol: f64,
    since_refactor: usize,
    pub(crate) pivots: usize,
    max_pivots: usize,
}

const NONBASIC: usize = usize::MAX;

impl Tableau {
    /// Builds the LP relaxation of `model` with structural bounds `lb`/`ub`.
    pub fn new(model: &MipModel, lb: &[f64], ub: &[f64], with_objective: bool, feastol: f64) -> Self {
        let m = model.rows.len();
        let n = model.lb.len();
        let mut cost = vec![0.0; n + m];
        if with_objective {
            cost[..n].copy_from_slice(&model.obj);
        }
        let mut col_lb: Vec<f64> = lb.to_vec();
        let mut col_ub: Vec<f64> = ub.to_vec();
        let mut val = Vec::with_capacity(n + m);
        let mut at_ub = Vec::with_capacity(n + m);
        for j in 0..n {
            let upper = cost[j] < 0.0 && lb[j] < ub[j];
            val.push(if upper { ub[j] } else { lb[j] });
            at_ub.push(upper);
        }
        for row in &model.rows {
            let (l, u) = match row.sense {
                Sense::Le => (0.0, INF),
                Sense::Ge => (-INF, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            col_lb.push(l);
            col_ub.push(u);
            val.push(0.0);
            at_ub.push(row.sense == Sense::Ge);
        }
        // Residual each row must absorb given the nonbasic structurals.
        let resid: Vec<f64> =
            model.rows.iter().map(|r| r.rhs - r.coeffs.iter().map(|&(j, c)| c * val[j]).sum::<f64>()).collect();
        let mut arts = Vec::new();
        for (i, &r) in resid.iter().enumerate() {
            if r < col_lb[n + i] - feastol || r > col_ub[n + i] + feastol {
                arts.push((i, if r >= 0.0 { 1.0 } else { -1.0 }));
            }
        }
        let ncols = n + m + arts.len();
        let mut orig = vec![0.0; m * ncols];
        for (i, row) in model.rows.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                orig[i * ncols + j] = c;
            }
            orig[i * ncols + n + i] = 1.0;
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let mut beta = resid.clone();
        for (k, &(i, sign)) in arts.iter().enumerate() {
            let col = n + m + k;
            orig[i * ncols + col] = sign;
            col_lb.push(0.0);
            col_ub.push(INF);
            val.push(0.0);
            at_ub.push(false);
            cost.push(0.0);
            basis[i] = col;
            beta[i] = resid[i].abs();
        }
        let mut t = orig.clone();
        for &(i, sign) in &arts {
            if sign < 0.0 {
                t[i * ncols..(i + 1) * ncols].iter_mut().for_each(|v| *v = -*v);
            }
        }
        let mut row_of = vec![NONBASIC; ncols];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        let rhs = model.rows.iter().map(|r| r.rhs).collect();
        let phase_one = !arts.is_empty();
        let mut tab = Tableau {
            m,
            n,
            ncols,
            t,
            orig,
            rhs,
            beta,
            basis,
            row_of,
            val,
            at_ub,
            lb: col_lb,
            ub: col_ub,
            cost,
            d: vec![0.0; ncols],
            phase_one,
            feastol,
            since_refactor: 0,
            pivots: 0,
            max_pivots: 1_000_000,
        };
        tab.recompute_duals();
        tab
    }

    fn phase_cost(&self, j: usize) -> f64 {
        if self.phase_one {
            if j >= self.n + self.m {
                1.0
            } else {
                0.0
            }
        } else {
            self.cost[j]
        }
    }

    fn recompute_duals(&mut self) {
        for j in 0..self.ncols {
            self.d[j] = self.phase_cost(j);
        }
        for i in 0..self.m {
            let cb = self.phase_cost(self.basis[i]);
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    /// Rebuilds `B⁻¹[A|I|E]` and the basic values from the original data.
    fn refactor(&mut self) -> bool {
        let (m, nc) = (self.m, self.ncols);
        let mut t = self.orig.clone();
        let mut rhs = self.rhs.clone();
        for j in 0..nc {
            if self.row_of[j] == NONBASIC && self.val[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.orig[i * nc + j] * self.val[j];
                }
            }
        }
        let cols = self.basis.clone();
        let mut assigned = vec![false; m];
        let mut new_basis = vec![NONBASIC; m];
        for &col in &cols {
            let mut best = NONBASIC;
            let mut best_abs = 1e-11;
            for i in 0..m {
                if !assigned[i] && t[i * nc + col].abs() > best_abs {
                    best_abs = t[i * nc + col].abs();
                    best = i;
                }
            }
            if best == NONBASIC {
                return false;
            }
            assigned[best] = true;
            new_basis[best] = col;
            let p = t[best * nc + col];
            for k in 0..nc {
                t[best * nc + k] /= p;
            }
            rhs[best] /= p;
            let prow: Vec<f64> = t[best * nc..(best + 1) * nc].to_vec();
            let prhs = rhs[best];
            for i in 0..m {
                if i != best {
                    let f = t[i * nc + col];
                    if f != 0.0 {
                        let row = &mut t[i * nc..(i + 1) * nc];
                        for (a, b) in row.iter_mut().zip(&prow) {
                            *a -= f * b;
                        }
                        rhs[i] -= f * prhs;
                    }
                }
            }
        }
        self.t = t;
        self.beta = rhs;
        self.basis = new_basis;
        for (i, &b) in self.basis.iter().enumerate() {
            self.row_of[b] = i;
        }
        self.since_refactor = 0;
        self.recompute_duals();
        true
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let p = self.t[r * nc + j];
        for k in 0..nc {
            self.t[r * nc + k] /= p;
        }
        let prow: Vec<f64> = self.t[r * nc..(r + 1) * nc].to_vec();
        for i in 0..self.m {
            if i != r {
                let f = self.t[i * nc + j];
                if f != 0.0 {
                    let row = &mut self.t[i * nc..(i + 1) * nc];
                    for (a, b) in row.iter_mut().zip(&prow) {
                        *a -= f * b;
                    }
                    row[j] = 0.0;
                }
            }
        }
        let dj = self.d[j];
        if dj != 0.0 {
            for (dk, pk) in self.d.iter_mut().zip(&prow) {
                *dk -= dj * pk;
            }
        }
        self.d[j] = 0.0;
        let leaving = self.basis[r];
        self.row_of[leaving] = NONBASIC;
        self.basis[r] = j;
        self.row_of[j] = r;
        self.pivots += 1;
        self.since_refactor += 1;
    }

    fn maybe_refactor(&mut self) -> bool {
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()
        } else {
            true
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lb[j] == self.ub[j]
    }

    /// Primal simplex on the current phase objective.
    fn primal(&mut self) -> LpStatus {
        let nc = self.ncols;
        let mut degenerate = 0usize;
        loop {
            if self.pivots >= self.max_pivots {
                return LpStatus::IterationLimit;
            }
            if !self.maybe_refactor() {
                return LpStatus::Numerical;
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut enter = NONBASIC;
            let mut dir = 0.0;
            let mut best = 0.0;
            for j in 0..nc {
                if self.row_of[j] != NONBASIC || self.is_fixed(j) {
                    continue;
                }
                let dj = self.d[j];
                let (score, dj_dir) = if !self.at_ub[j] && dj < -OPT_TOL {
                    (-dj, 1.0)
                } else if self.at_ub[j] && dj > OPT_TOL {
                    (dj, -1.0)
                } else {
                    continue;
                };
                if bland {
                    enter = j;
                    dir = dj_dir;
                    break;
                }
                if score > best {
                    best = score;
                    enter = j;
                    dir = dj_dir;
                }
            }
            if enter == NONBASIC {
                return LpStatus::Optimal;
            }
            let j = enter;
            let mut step = self.ub[j] - self.lb[j];
            let mut leave = NONBASIC;
            let mut leave_piv = 0.0;
            for i in 0..self.m {
                let a = self.t[i * nc + j];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let rate = -dir * a;
                let b = self.basis[i];
                let limit = if rate < 0.0 {
                    if self.lb[b] == -INF {
                        continue;
                    }
                    ((self.beta[i] - self.lb[b]) / -rate).max(0.0)
                } else {
                    if self.ub[b] == INF {
                        continue;
                    }
                    ((self.ub[b] - self.beta[i]) / rate).max(0.0)
                };
                let better = if limit < step - 1e-12 {
                    true
                } else if limit <= step + 1e-12 && leave != NONBASIC {
                    if bland {
                        b < self.basis[leave]
                    } else {
                        a.abs() > leave_piv
                    }
                } else {
                    false
                };
                if better {
                    step = limit;
                    leave = i;
                    leave_piv = a.abs();
                }
            }
            if step == INF {
                return LpStatus::Numerical;
            }
            degenerate = if step <= 1e-12 { degenerate + 1 } else { 0 };
            for i in 0..self.m {
                let a = self.t[i * nc + j];
                if a != 0.0 {
                    self.beta[i] -= dir * a * step;
                }
            }
            let entering_value = self.val[j] + dir * step;
            if leave == NONBASIC {
                self.at_ub[j] = dir > 0.0;
                self.val[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
                continue;
            }
            let b = self.basis[leave];
            let rate = -dir * self.t[leave * nc + j];
            if rate < 0.0 {
                self.val[b] = self.lb[b];
                self.at_ub[b] = false;
            } else {
                self.val[b] = self.ub[b];
                self.at_ub[b] = true;
            }
            self.pivot(leave, j);
            self.beta[leave] = entering_value;
        }
    }

    fn infeasibility(&self, i: usize) -> f64 {
        let b = self.basis[i];
        let v = self.beta[i];
        if v < self.lb[b] - self.feastol {
            self.lb[b] - v
        } else if v > self.ub[b] + self.feastol {
            v - self.ub[b]
        } else {
            0.0
        }
    }

    /// Dual simplex from a dual-feasible basis.
    fn dual(&mut self, cutoff: Option<f64>) -> LpStatus {
        let nc = self.ncols;
        let limit = self.pivots + 50 * (self.m + self.ncols) + 1000;
        loop {
            if self.pivots >= self.max_pivots.min(limit) {
                return LpStatus::IterationLimit;
            }
            if !self.maybe_refactor() {
                return LpStatus::Numerical;
            }
            let mut r = NONBASIC;
            let mut worst = 0.0;
            for i in 0..self.m {
                let inf = self.infeasibility(i);
                if inf > worst {
                    worst = inf;
                    r = i;
                }
            }
            if r == NONBASIC {
                return LpStatus::Optimal;
            }
            if let Some(c) = cutoff {
                if self.objective() > c + 1e-6 * (1.0 + c.abs()) {
                    return LpStatus::Cutoff;
                }
            }
            let b = self.basis[r];
            let increase = self.beta[r] < self.lb[b];
            let target = if increase { self.lb[b] } else { self.ub[b] };
            let mut enter = NONBASIC;
            let mut best_ratio = INF;
            let mut best_piv = 0.0;
            for j in 0..nc {
                if self.row_of[j] != NONBASIC || self.is_fixed(j) {
                    continue;
                }
                let a = self.t[r * nc + j];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                // x_B[r] moves by −a·Δx_j.
                let eligible = if self.at_ub[j] { (a > 0.0) == increase } else { (a < 0.0) == increase };
                if !eligible {
                    continue;
                }
                let dj = if self.at_ub[j] { (-self.d[j]).max(0.0) } else { self.d[j].max(0.0) };
                let ratio = dj / a.abs();
                if ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && a.abs() > best_piv) {
                    best_ratio = ratio;
                    best_piv = a.abs();
                    enter = j;
                }
            }
            if enter == NONBASIC {
                return LpStatus::Infeasible;
            }
            let j = enter;
            let a = self.t[r * nc + j];
            let delta = (self.beta[r] - target) / a;
            for i in 0..self.m {
                let ai = self.t[i * nc + j];
                if ai != 0.0 {
                    self.beta[i] -= ai * delta;
                }
            }
            let entering_value = self.val[j] + delta;
            self.val[b] = target;
            self.at_ub[b] = !increase;
            self.pivot(r, j);
            self.beta[r] = entering_value;
        }
    }

    /// Two-phase primal solve from the current basis.
    pub fn solve(&mut self) -> LpStatus {
        if self.phase_one {
            match self.primal() {
                LpStatus::Optimal => {}
                other => return other,
            }
            let infeas: f64 = (self.n + self.m..self.ncols).map(|j| self.value(j)).sum();
            if infeas > self.feastol {
                return LpStatus::Infeasible;
            }
            self.end_phase_one();
        }
        self.primal()
    }

    fn end_phase_one(&mut self) {
        for j in self.n + self.m..self.ncols {
            self.lb[j] = 0.0;
            self.ub[j] = 0.0;
            if self.row_of[j] == NONBASIC {
                self.val[j] = 0.0;
                self.at_ub[j] = false;
            }
        }
        self.phase_one = false;
        self.recompute_duals();
    }

    /// Re-optimizes after bound changes: dual simplex, then a primal cleanup.
    pub fn resolve(&mut self, cutoff: Option<f64>) -> LpStatus {
        if self.phase_one {
            return self.solve();
        }
        match self.dual(cutoff) {
            LpStatus::Optimal => self.primal(),
            other => other,
        }
    }

    /// Changes the bounds of structural column `j`, keeping basic values consistent.
    pub fn set_bounds(&mut self, j: usize, lb: f64, ub: f64) {
        self.lb[j] = lb;
        self.ub[j] = ub;
        if self.row_of[j] != NONBASIC {
            return;
        }
        let new = if self.at_ub[j] { ub } else { lb };
        let delta = new - self.val[j];
        if delta != 0.0 {
            let nc = self.ncols;
            for i in 0..self.m {
                let a = self.t[i * nc + j];
                if a != 0.0 {
                    self.beta[i] -= a * delta;
                }
            }
            self.val[j] = new;
        }
    }

    fn value(&self, j: usize) -> f64 {
        match self.row_of[j] {
            NONBASIC => self.val[j],
            r => self.beta[r],
        }
    }

    /// Phase-2 objective (without the model's constant).
    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.value(j)).sum()
    }

    pub fn structural_values(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value(j)).collect()
    }

    /// Recomputes basic values from scratch; used before handing out a solution.
    pub fn polish(&mut self) -> bool {
        self.refactor()
    }
}
