//! Depth-first branch-and-bound over binaries.

use std::time::Instant;

use super::model::{MipModel, VarKind};
use super::presolve::presolve_propagate;
use super::simplex::{LpStatus, Tableau};
use super::{MipResult, MipStatus, SolverConfig};

struct Search<'a> {
    model: &'a MipModel,
    cfg: &'a SolverConfig,
    binaries: Vec<usize>,
    incumbent: Option<(f64, Vec<f64>)>,
    nodes: usize,
    lp_pivots: usize,
    incomplete: bool,
    start: Instant,
}

enum Flow {
    Continue,
    Stop,
}

/// Solves `model` by LP-based branch-and-bound.
pub fn mip_solve(model: &MipModel, cfg: &SolverConfig) -> MipResult {
    let start = Instant::now();
    let mut search = Search {
        model,
        cfg,
        binaries: (0..model.n_vars()).filter(|&j| model.kind[j] == VarKind::Binary).collect(),
        incumbent: None,
        nodes: 0,
        lp_pivots: 0,
        incomplete: false,
        start,
    };
    if let Some(x0) = model.initial() {
        if model.residuals(x0).within(cfg.feastol, cfg.inttol) {
            let mut x = x0.to_vec();
            for &j in &search.binaries {
                x[j] = x[j].round();
            }
            if model.residuals(&x).within(cfg.feastol, cfg.inttol) {
                search.incumbent = Some((model.objective_value(&x), x));
                if cfg.feasibility_only {
                    return search.finish(MipStatus::Feasible);
                }
            }
        }
    }
    let pre = presolve_propagate(model);
    if pre.infeasible {
        return search.finish_exhausted();
    }
    let mut root = Tableau::new(model, &pre.model.lb, &pre.model.ub, !cfg.feasibility_only, cfg.feastol);
    search.nodes += 1;
    let status = root.solve();
    search.lp_pivots += root.pivots;
    let flow = search.dive(root, status);
    match flow {
        Flow::Stop => {
            let status = if search.incumbent.is_some() { MipStatus::Feasible } else { MipStatus::IterationLimit };
            search.finish(status)
        }
        Flow::Continue => search.finish_exhausted(),
    }
}

impl Search<'_> {
    fn finish_exhausted(self) -> MipResult {
        let status = match (&self.incumbent, self.incomplete) {
            (Some(_), false) => MipStatus::Optimal,
            (Some(_), true) => MipStatus::Feasible,
            (None, false) => MipStatus::Infeasible,
            (None, true) => MipStatus::IterationLimit,
        };
        self.finish(status)
    }

    fn finish(self, status: MipStatus) -> MipResult {
        let (objective, assignment) = match self.incumbent {
            Some((o, x)) => (o, x),
            None => (f64::NAN, Vec::new()),
        };
        let status =
            if self.cfg.feasibility_only && status == MipStatus::Optimal { MipStatus::Feasible } else { status };
        MipResult {
            status,
            assignment,
            objective,
            nodes: self.nodes,
            lp_pivots: self.lp_pivots,
            solve_time: self.start.elapsed(),
        }
    }

    fn out_of_budget(&self) -> bool {
        self.nodes >= self.cfg.node_limit || self.cfg.time_limit.is_some_and(|t| self.start.elapsed() >= t)
    }

    fn cutoff(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|(o, _)| o - self.model.obj_const)
    }

    /// Explores the subtree rooted at an already-solved tableau.
    fn dive(&mut self, tab: Tableau, status: LpStatus) -> Flow {
        let mut stack: Vec<(Tableau, usize, f64)> = Vec::new();
        let mut current = Some((tab, status));
        loop {
            if let Some((mut tab, status)) = current.take() {
                match status {
                    LpStatus::Optimal => {}
                    LpStatus::Infeasible | LpStatus::Cutoff => {}
                    LpStatus::IterationLimit | LpStatus::Numerical => self.incomplete = true,
                }
                if status == LpStatus::Optimal {
                    let bound = tab.objective() + self.model.obj_const;
                    let pruned = self.incumbent.as_ref().is_some_and(|(o, _)| bound >= o - self.cfg.prune_gap);
                    if !pruned {
                        let x = tab.structural_values();
                        match self.most_fractional(&x) {
                            None => {
                                if self.accept(&mut tab) && self.cfg.feasibility_only {
                                    return Flow::Stop;
                                }
                            }
                            Some((j, v)) => {
                                let first = if v > 0.5 { 1.0 } else { 0.0 };
                                stack.push((tab.clone(), j, 1.0 - first));
                                current = Some(self.child(tab, j, first));
                                if self.out_of_budget() {
                                    return Flow::Stop;
                                }
                                continue;
                            }
                        }
                    }
                }
            }
            match stack.pop() {
                None => return Flow::Continue,
                Some((tab, j, v)) => {
                    if self.out_of_budget() {
                        return Flow::Stop;
                    }
                    current = Some(self.child(tab, j, v));
                }
            }
        }
    }

    fn child(&mut self, mut tab: Tableau, j: usize, v: f64) -> (Tableau, LpStatus) {
        self.nodes += 1;
        tab.set_bounds(j, v, v);
        let before = tab.pivots;
        let status = tab.resolve(self.cutoff());
        self.lp_pivots += tab.pivots - before;
        (tab, status)
    }

    fn most_fractional(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_frac = self.cfg.inttol;
        for &j in &self.binaries {
            let f = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if f > best_frac {
                best_frac = f;
                best = Some((j, x[j]));
            }
        }
        best
    }

    /// Rounds an integral LP point, re-solves the continuous part and stores
    /// it as the incumbent when it passes the residual check.
    fn accept(&mut self, tab: &mut Tableau) -> bool {
        let x = tab.structural_values();
        let inexact: Vec<usize> = self.binaries.iter().copied().filter(|&j| x[j] != x[j].round()).collect();
        if !inexact.is_empty() {
            for &j in &inexact {
                let r = x[j].round();
                tab.set_bounds(j, r, r);
            }
            if tab.resolve(None) != LpStatus::Optimal {
                return false;
            }
        }
        let mut x = tab.structural_values();
        if !self.model.residuals(&x).within(self.cfg.feastol, self.cfg.inttol) {
            if !tab.polish() {
                return false;
            }
            x = tab.structural_values();
        }
        for &j in &self.binaries {
            x[j] = x[j].round();
        }
        // Basic values may sit a hair outside their bounds; snap them back
        // unless that costs row feasibility.
        let snapped: Vec<f64> = (0..x.len()).map(|j| x[j].clamp(self.model.lb[j], self.model.ub[j])).collect();
        let x = if self.model.residuals(&snapped).within(self.cfg.feastol, 0.0) {
            snapped
        } else if self.model.residuals(&x).within(self.cfg.feastol, 0.0) {
            x
        } else {
            self.incomplete = true;
            return false;
        };
        let obj = self.model.objective_value(&x);
        if self.incumbent.as_ref().is_some_and(|(o, _)| obj >= *o - self.cfg.prune_gap) {
            return false;
        }
        self.incumbent = Some((obj, x));
        true
    }
}
