//! Interval bound propagation and binary probing.

use super::model::{MipModel, Row, Sense, VarKind};

const MAX_PASSES: usize = 50;
const PROBE_PASSES: usize = 10;
const TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Presolved {
    /// Copy of the input with tightened bounds.
    pub model: MipModel,
    pub fixed_binaries: usize,
    pub infeasible: bool,
}

/// Tightens variable bounds by row activity arguments, then probes each
/// free binary and fixes it when one value is infeasible on interval grounds.
pub fn presolve_propagate(model: &MipModel) -> Presolved {
    let mut lb = model.lb.clone();
    let mut ub = model.ub.clone();
    let mut infeasible = !propagate(model, &mut lb, &mut ub, MAX_PASSES);
    if !infeasible {
        infeasible = !probe(model, &mut lb, &mut ub);
    }
    let fixed_binaries = (0..lb.len())
        .filter(|&j| model.kind[j] == VarKind::Binary && lb[j] == ub[j] && !(model.lb[j] == model.ub[j]))
        .count();
    let mut out = model.clone();
    if !infeasible {
        out.lb = lb;
        out.ub = ub;
    }
    Presolved { model: out, fixed_binaries, infeasible }
}

fn probe(model: &MipModel, lb: &mut [f64], ub: &mut [f64]) -> bool {
    loop {
        let mut changed = false;
        for j in 0..lb.len() {
            if model.kind[j] != VarKind::Binary || lb[j] == ub[j] {
                continue;
            }
            let mut ok = [true; 2];
            for (v, slot) in ok.iter_mut().enumerate() {
                let mut l = lb.to_vec();
                let mut u = ub.to_vec();
                l[j] = v as f64;
                u[j] = v as f64;
                *slot = propagate(model, &mut l, &mut u, PROBE_PASSES);
            }
            match ok {
                [false, false] => return false,
                [true, true] => continue,
                [zero_ok, _] => {
                    let v = if zero_ok { 0.0 } else { 1.0 };
                    lb[j] = v;
                    ub[j] = v;
                    if !propagate(model, lb, ub, MAX_PASSES) {
                        return false;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            return true;
        }
    }
}

/// Returns false when some row is provably violated.
fn propagate(model: &MipModel, lb: &mut [f64], ub: &mut [f64], passes: usize) -> bool {
    for _ in 0..passes {
        let mut changed = false;
        for row in &model.rows {
            let forms: &[f64] = match row.sense {
                Sense::Le => &[1.0],
                Sense::Ge => &[-1.0],
                Sense::Eq => &[1.0, -1.0],
            };
            for &sign in forms {
                match tighten_le(model, row, sign, lb, ub) {
                    None => return false,
                    Some(c) => changed |= c,
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

/// Propagates `sign · (row) ≤ sign · rhs`.
fn tighten_le(model: &MipModel, row: &Row, sign: f64, lb: &mut [f64], ub: &mut [f64]) -> Option<bool> {
    let rhs = sign * row.rhs;
    fn min_term(c: f64, l: f64, u: f64) -> f64 {
        if c >= 0.0 {
            c * l
        } else {
            c * u
        }
    }
    let minact: f64 = row.coeffs.iter().map(|&(j, c)| min_term(sign * c, lb[j], ub[j])).sum();
    let scale =
        1.0 + rhs.abs() + row.coeffs.iter().map(|&(j, c)| (c * lb[j]).abs().max((c * ub[j]).abs())).fold(0.0, f64::max);
    if minact > rhs + TOL * scale {
        return None;
    }
    let mut changed = false;
    for &(j, c0) in &row.coeffs {
        let c = sign * c0;
        if c.abs() < 1e-12 {
            continue;
        }
        let rest = minact - min_term(c, lb[j], ub[j]);
        let bound = (rhs - rest) / c;
        let binary = model.kind[j] == VarKind::Binary;
        if c > 0.0 {
            let mut nb = bound;
            if binary {
                nb = (nb + 1e-6).floor();
            }
            if nb < ub[j] - 1e-8 * (1.0 + ub[j].abs()) || (binary && nb < ub[j]) {
                ub[j] = nb;
                changed = true;
            }
        } else {
            let mut nb = bound;
            if binary {
                nb = (nb - 1e-6).ceil();
            }
            if nb > lb[j] + 1e-8 * (1.0 + lb[j].abs()) || (binary && nb > lb[j]) {
                lb[j] = nb;
                changed = true;
            }
        }
        if lb[j] > ub[j] {
            if lb[j] - ub[j] <= TOL * (1.0 + ub[j].abs()) && !binary {
                let mid = 0.5 * (lb[j] + ub[j]);
                lb[j] = mid;
                ub[j] = mid;
            } else {
                return None;
            }
        }
    }
    Some(changed)
}
