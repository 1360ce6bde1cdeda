use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::MipError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// Sparse row with duplicate entries already summed, sorted by variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// Mixed-integer linear model, minimization form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MipModel {
    pub(crate) lb: Vec<f64>,
    pub(crate) ub: Vec<f64>,
    pub(crate) kind: Vec<VarKind>,
    pub(crate) rows: Vec<Row>,
    pub(crate) obj: Vec<f64>,
    pub(crate) obj_const: f64,
    pub(crate) initial: Option<Vec<f64>>,
}

/// Worst violations of an assignment, split by kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub rows: f64,
    pub bounds: f64,
    pub integrality: f64,
}

impl Residuals {
    pub fn within(&self, feastol: f64, inttol: f64) -> bool {
        self.rows <= feastol && self.bounds <= feastol && self.integrality <= inttol
    }
}

impl MipModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_continuous(&mut self, lb: f64, ub: f64) -> Result<VarId, MipError> {
        if !lb.is_finite() || !ub.is_finite() {
            return Err(MipError::InfiniteBound { var: self.lb.len() });
        }
        if lb > ub {
            return Err(MipError::EmptyBounds { var: self.lb.len(), lb, ub });
        }
        Ok(self.push_var(lb, ub, VarKind::Continuous))
    }

    /// Intersects the bounds of `v` with `[lb, ub]`.
    pub fn restrict_bounds(&mut self, v: VarId, lb: f64, ub: f64) -> Result<(), MipError> {
        if v.0 >= self.lb.len() {
            return Err(MipError::UnknownVar { var: v.0 });
        }
        let l = self.lb[v.0].max(lb);
        let u = self.ub[v.0].min(ub);
        if l > u {
            return Err(MipError::EmptyBounds { var: v.0, lb: l, ub: u });
        }
        self.lb[v.0] = l;
        self.ub[v.0] = u;
        Ok(())
    }

    pub fn add_binary(&mut self) -> VarId {
        self.push_var(0.0, 1.0, VarKind::Binary)
    }

    fn push_var(&mut self, lb: f64, ub: f64, kind: VarKind) -> VarId {
        self.lb.push(lb);
        self.ub.push(ub);
        self.kind.push(kind);
        self.obj.push(0.0);
        VarId(self.lb.len() - 1)
    }

    pub fn add_row(&mut self, coeffs: &[(VarId, f64)], sense: Sense, rhs: f64) -> Result<RowId, MipError> {
        let mut summed: BTreeMap<usize, f64> = BTreeMap::new();
        for &(v, c) in coeffs {
            if v.0 >= self.lb.len() {
                return Err(MipError::UnknownVar { var: v.0 });
            }
            if !c.is_finite() {
                return Err(MipError::NonFinite);
            }
            *summed.entry(v.0).or_insert(0.0) += c;
        }
        if !rhs.is_finite() {
            return Err(MipError::NonFinite);
        }
        let coeffs = summed.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self.rows.push(Row { coeffs, sense, rhs });
        Ok(RowId(self.rows.len() - 1))
    }

    /// Replaces the objective; unlisted variables get coefficient zero.
    pub fn set_objective(&mut self, coeffs: &[(VarId, f64)], constant: f64) -> Result<(), MipError> {
        let mut obj = vec![0.0; self.lb.len()];
        for &(v, c) in coeffs {
            if v.0 >= obj.len() {
                return Err(MipError::UnknownVar { var: v.0 });
            }
            obj[v.0] += c;
        }
        self.obj = obj;
        self.obj_const = constant;
        Ok(())
    }

    /// Warm-start assignment, evaluated before the tree search.
    pub fn set_initial(&mut self, x: Vec<f64>) -> Result<(), MipError> {
        if x.len() != self.lb.len() {
            return Err(MipError::AssignmentLength { expected: self.lb.len(), got: x.len() });
        }
        self.initial = Some(x);
        Ok(())
    }

    pub fn initial(&self) -> Option<&[f64]> {
        self.initial.as_deref()
    }

    pub fn n_vars(&self) -> usize {
        self.lb.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.kind.iter().filter(|k| **k == VarKind::Binary).count()
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        (self.lb[v.0], self.ub[v.0])
    }

    pub fn kind(&self, v: VarId) -> VarKind {
        self.kind[v.0]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.obj.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.obj_const
    }

    /// Independent residual evaluation against the original rows and bounds.
    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let mut r = Residuals::default();
        for row in &self.rows {
            r.rows = r.rows.max(row.violation(x));
        }
        for j in 0..self.lb.len() {
            r.bounds = r.bounds.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
            if self.kind[j] == VarKind::Binary {
                r.integrality = r.integrality.max((x[j] - x[j].round()).abs());
            }
        }
        r
    }

    /// CPLEX-style LP text, for cross-checking with external solvers.
    pub fn to_lp_string(&self) -> String {
        let term = |c: f64, j: usize| format!(" {} {:e} x{}", if c < 0.0 { '-' } else { '+' }, c.abs(), j);
        let mut s = String::from("\\ cisynth model\nMinimize\n obj:");
        for (j, &c) in self.obj.iter().enumerate() {
            if c != 0.0 {
                s.push_str(&term(c, j));
            }
        }
        if self.obj_const != 0.0 {
            let _ = write!(s, " + {:e} constant", self.obj_const);
        }
        s.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(s, " r{i}:");
            if row.coeffs.is_empty() {
                s.push_str(" 0 x0");
            }
            for &(j, c) in &row.coeffs {
                s.push_str(&term(c, j));
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {:e}", row.rhs);
        }
        s.push_str("Bounds\n");
        for j in 0..self.lb.len() {
            if self.kind[j] == VarKind::Continuous {
                let _ = writeln!(s, " {:e} <= x{j} <= {:e}", self.lb[j], self.ub[j]);
            }
        }
        if self.obj_const != 0.0 {
            let _ = writeln!(s, " constant = 1");
        }
        s.push_str("Binaries\n");
        for j in 0..self.lb.len() {
            if self.kind[j] == VarKind::Binary {
                let _ = writeln!(s, " x{j}");
            }
        }
        s.push_str("End\n");
        s
    }
}
