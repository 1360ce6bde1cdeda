//! Fixed-point synthesis of a control invariant set over the grid, and the
//! per-box control atlas it produces.

use std::sync::Arc;

use thiserror::Error;

use crate::boxes::{partition_box, BoxError, BoxSet, GridBox, GridSpec, RealBox};
use crate::encode::{build_returnability_with, EncodeError, ReturnObjective, TargetCover};
use crate::mip::{mip_solve, MipStatus, SolverConfig};
use crate::network::{ControlDomain, Mlp, NetworkError};
use crate::reach::reach_boxes;

/// Membership tolerance for points tested against the invariant set.
pub const CIS_TOL: f64 = 1e-9;

/// Obstacle inflation used when a plain solve returns a control whose exact
/// re-check touches the target boundary from outside.
pub const RETRY_MARGIN: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("model has {model} states but the grid has {grid} dimensions")]
    StateDim { model: usize, grid: usize },
    #[error("model has {model} inputs but the control domain has {domain}")]
    ControlDim { model: usize, domain: usize },
    #[error(transparent)]
    Box(#[from] BoxError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum AtlasError {
    #[error("state lies outside the invariant set")]
    OutsideCis,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Worker threads for box verification; 1 runs inline.
    pub jobs: usize,
    pub objective: ReturnObjective,
    pub keep_history: bool,
    pub solver: SolverConfig,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { jobs: 1, objective: ReturnObjective::Feasibility, keep_history: false, solver: SolverConfig::default() }
    }
}

/// Why a box failed verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Undetermined {
    /// The reachable box over all of `U` misses the target.
    Filtered,
    Infeasible,
    /// The solver stopped on a limit; treated as a failure.
    Limit,
    /// A solution was found but did not survive the exact re-check.
    Recheck,
}

/// A grid box and the control that returns it to the target.
pub type AtlasEntry = (GridBox, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub enum BoxVerdict {
    Verified(Vec<f64>),
    Undetermined(Undetermined),
}

#[derive(Debug, Clone, Default)]
pub struct Verification {
    pub verified: Vec<AtlasEntry>,
    pub undetermined: Vec<(GridBox, Undetermined)>,
    pub solver_calls: usize,
}

/// Per-iteration counters reported to progress callbacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IterationStats {
    pub iteration: usize,
    /// `|Δ|` of the candidate entering the iteration.
    pub cells: u64,
    pub verified: usize,
    pub partitioned: usize,
    pub discarded: usize,
    pub solver_calls: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStatus {
    Invariant,
    Empty,
}

/// Synthesized invariant set with one admissible control per box.
#[derive(Debug, Clone)]
pub struct ControlAtlas {
    cis: BoxSet,
    entries: Vec<AtlasEntry>,
    real: Vec<RealBox>,
    control_domain: ControlDomain,
    iterations: usize,
    history: Option<Vec<BoxSet>>,
    /// Row-major cell index to the first entry containing the cell.
    lookup: Vec<u32>,
}

const NO_ENTRY: u32 = u32::MAX;

impl ControlAtlas {
    /// Assembles an atlas; the entry boxes must be disjoint and grid-aligned.
    pub fn new(
        grid: Arc<GridSpec>,
        mut entries: Vec<AtlasEntry>,
        control_domain: ControlDomain,
        iterations: usize,
    ) -> Result<Self, BoxError> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let cis = BoxSet::from_disjoint(grid.clone(), entries.iter().map(|e| e.0.clone()).collect())?;
        for (_, u) in &entries {
            if u.len() != control_domain.dim() {
                return Err(BoxError::DimMismatch { expected: control_domain.dim(), got: u.len() });
            }
        }
        let real = entries.iter().map(|e| grid.real_box(&e.0)).collect();
        let mut lookup = vec![NO_ENTRY; grid.n_basis() as usize];
        for (i, (b, _)) in entries.iter().enumerate() {
            for c in b.cells() {
                lookup[grid.cell_index(&c) as usize] = i as u32;
            }
        }
        Ok(Self { cis, entries, real, control_domain, iterations, history: None, lookup })
    }

    pub fn cis(&self) -> &BoxSet {
        &self.cis
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.cis.grid()
    }

    /// `(box, control)` pairs sorted by box.
    pub fn entries(&self) -> &[(GridBox, Vec<f64>)] {
        &self.entries
    }

    pub fn control_domain(&self) -> &ControlDomain {
        &self.control_domain
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn history(&self) -> Option<&[BoxSet]> {
        self.history.as_deref()
    }

    pub fn status(&self) -> SynthStatus {
        if self.cis.is_empty() {
            SynthStatus::Empty
        } else {
            SynthStatus::Invariant
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.locate(x).is_some()
    }

    /// Entry whose closed box contains `x`; on shared faces the first entry
    /// in box order wins.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let grid = self.cis.grid();
        let n = grid.dim();
        if x.len() != n {
            return None;
        }
        let mut ranges = Vec::with_capacity(n);
        for j in 0..n {
            let k0 = ((x[j] - grid.lower()[j]) / grid.d_min()).floor() as i64;
            let ks: Vec<i64> = (k0 - 1..=k0 + 1)
                .filter(|&k| k >= 0 && k < grid.cells()[j])
                .filter(|&k| grid.coord(j, k) - CIS_TOL <= x[j] && x[j] <= grid.coord(j, k + 1) + CIS_TOL)
                .collect();
            if ks.is_empty() {
                return None;
            }
            ranges.push(ks);
        }
        let mut best = NO_ENTRY;
        let mut pick = vec![0usize; n];
        loop {
            let cell: Vec<i64> = (0..n).map(|j| ranges[j][pick[j]]).collect();
            best = best.min(self.lookup[grid.cell_index(&cell) as usize]);
            let mut j = n;
            loop {
                if j == 0 {
                    return (best != NO_ENTRY).then_some(best as usize);
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < ranges[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
    }

    /// Feedback law `π(x; C)`.
    pub fn control(&self, x: &[f64]) -> Result<Vec<f64>, AtlasError> {
        self.locate(x).map(|i| self.entries[i].1.clone()).ok_or(AtlasError::OutsideCis)
    }

    pub fn real_box(&self, entry: usize) -> &RealBox {
        &self.real[entry]
    }
}

/// `atlas_control` as a free function.
pub fn atlas_control(atlas: &ControlAtlas, x: &[f64]) -> Result<Vec<f64>, AtlasError> {
    atlas.control(x)
}

/// Upper bound `|Δ(safe)| + 1` on the number of synthesis iterations.
pub fn termination_bound(safe: &BoxSet) -> u64 {
    safe.cardinality() + 1
}

fn check_dims(m: &Mlp, grid: &GridSpec, u: &ControlDomain) -> Result<(), SynthError> {
    if m.n_x() != grid.dim() {
        return Err(SynthError::StateDim { model: m.n_x(), grid: grid.dim() });
    }
    if m.n_u() != u.dim() {
        return Err(SynthError::ControlDim { model: m.n_u(), domain: u.dim() });
    }
    Ok(())
}

/// Decides one box: some control maps all of it into the target.
pub fn verify_box(
    m: &Mlp,
    real: &RealBox,
    cover: &TargetCover,
    u: &ControlDomain,
    objective: ReturnObjective,
    solver: &SolverConfig,
) -> Result<(BoxVerdict, usize), SynthError> {
    let (bounds, fbar) = reach_boxes(m, real, &u.as_box())?;
    if !cover.meets(&fbar) {
        return Ok((BoxVerdict::Undetermined(Undetermined::Filtered), 0));
    }
    let cfg = SolverConfig { feasibility_only: objective == ReturnObjective::Feasibility, ..solver.clone() };
    let mut calls = 0;
    for margin in [0.0, RETRY_MARGIN] {
        let rm = build_returnability_with(m, real, u, cover, &bounds, objective, margin)?;
        calls += 1;
        let r = mip_solve(&rm.model, &cfg);
        if !r.status.has_solution() {
            let why = if r.status == MipStatus::Infeasible { Undetermined::Infeasible } else { Undetermined::Limit };
            return Ok((BoxVerdict::Undetermined(if margin == 0.0 { why } else { Undetermined::Recheck }), calls));
        }
        let uk = u.clamp(&rm.u.iter().map(|&v| r.value(v)).collect::<Vec<_>>());
        let (_, out) = reach_boxes(m, real, &RealBox::point(&uk))?;
        if cover.contains_box(&out) {
            return Ok((BoxVerdict::Verified(uk), calls));
        }
    }
    Ok((BoxVerdict::Undetermined(Undetermined::Recheck), calls))
}

/// Runs boxes through [`verify_box`], inline or on a worker pool; the
/// output order follows the input order either way.
struct Verifier<'a> {
    m: &'a Mlp,
    u: &'a ControlDomain,
    opts: &'a SynthOptions,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Verifier<'a> {
    fn new(m: &'a Mlp, u: &'a ControlDomain, opts: &'a SynthOptions) -> Result<Self, SynthError> {
        #[cfg(feature = "parallel")]
        let pool = if opts.jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(opts.jobs)
                    .build()
                    .map_err(|e| SynthError::Pool(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            m,
            u,
            opts,
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    fn run(&self, grid: &GridSpec, boxes: &[GridBox], cover: &TargetCover) -> Result<Verification, SynthError> {
        let one =
            |b: &GridBox| verify_box(self.m, &grid.real_box(b), cover, self.u, self.opts.objective, &self.opts.solver);
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(BoxVerdict, usize), SynthError>> = match &self.pool {
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| boxes.par_iter().map(one).collect())
            }
            None => boxes.iter().map(one).collect(),
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(BoxVerdict, usize), SynthError>> = boxes.iter().map(one).collect();
        let mut out = Verification::default();
        for (b, r) in boxes.iter().zip(results) {
            let (verdict, calls) = r?;
            out.solver_calls += calls;
            match verdict {
                BoxVerdict::Verified(u) => out.verified.push((b.clone(), u)),
                BoxVerdict::Undetermined(why) => out.undetermined.push((b.clone(), why)),
            }
        }
        Ok(out)
    }
}

/// Verifies each box against `target`, preserving input order.
pub fn returnable_verification(
    m: &Mlp,
    boxes: &[GridBox],
    target: &BoxSet,
    u: &ControlDomain,
    opts: &SynthOptions,
) -> Result<Verification, SynthError> {
    let grid = target.grid();
    check_dims(m, grid, u)?;
    for b in boxes {
        if !grid.contains_box(b) {
            return Err(BoxError::InvalidBox(b.clone()).into());
        }
    }
    if boxes.is_empty() {
        return Ok(Verification::default());
    }
    if target.is_empty() {
        let undetermined = boxes.iter().map(|b| (b.clone(), Undetermined::Filtered)).collect();
        return Ok(Verification { undetermined, ..Verification::default() });
    }
    Verifier::new(m, u, opts)?.run(grid, boxes, &TargetCover::new(target))
}

/// Largest subset of `i_set` found returnable to `target`: failing boxes are
/// halved until they reach single cells, which are then dropped.
pub fn one_step_returnable_q(
    m: &Mlp,
    i_set: &BoxSet,
    target: &BoxSet,
    u: &ControlDomain,
    opts: &SynthOptions,
) -> Result<(BoxSet, Vec<AtlasEntry>, IterationStats), SynthError> {
    let grid = i_set.grid().clone();
    check_dims(m, &grid, u)?;
    let verifier = Verifier::new(m, u, opts)?;
    one_step_with(&verifier, &grid, i_set.boxes().to_vec(), target)
}

fn one_step_with(
    verifier: &Verifier,
    grid: &Arc<GridSpec>,
    mut queue: Vec<GridBox>,
    target: &BoxSet,
) -> Result<(BoxSet, Vec<AtlasEntry>, IterationStats), SynthError> {
    let mut stats = IterationStats { cells: queue.iter().map(GridBox::volume).sum(), ..IterationStats::default() };
    let mut accepted = Vec::new();
    if target.is_empty() {
        stats.discarded = queue.len();
        return Ok((BoxSet::empty(grid.clone()), accepted, stats));
    }
    let cover = TargetCover::new(target);
    while !queue.is_empty() {
        queue.sort();
        let v = verifier.run(grid, &queue, &cover)?;
        stats.solver_calls += v.solver_calls;
        stats.verified += v.verified.len();
        accepted.extend(v.verified);
        let mut next = Vec::new();
        for (b, _) in v.undetermined {
            if b.is_basis() {
                stats.discarded += 1;
            } else {
                let (l, r) = partition_box(&b)?;
                stats.partitioned += 1;
                next.push(l);
                next.push(r);
            }
        }
        queue = next;
    }
    accepted.sort_by(|a, b| a.0.cmp(&b.0));
    let set = BoxSet::from_disjoint(grid.clone(), accepted.iter().map(|e| e.0.clone()).collect())?;
    Ok((set, accepted, stats))
}

/// Iterates `Ã_{i+1} = Q(Ã_i, Ã_i)` from the safe set to its fixed point.
pub fn synthesize_cis(
    m: &Mlp,
    safe: &BoxSet,
    u: &ControlDomain,
    opts: &SynthOptions,
    mut progress: impl FnMut(&IterationStats),
) -> Result<ControlAtlas, SynthError> {
    let grid = safe.grid().clone();
    check_dims(m, &grid, u)?;
    let verifier = Verifier::new(m, u, opts)?;
    let mut current = safe.clone();
    let mut history = opts.keep_history.then(|| vec![safe.clone()]);
    let mut iteration = 0;
    loop {
        iteration += 1;
        if current.is_empty() {
            let mut atlas = ControlAtlas::new(grid, Vec::new(), u.clone(), iteration)?;
            progress(&IterationStats { iteration, ..IterationStats::default() });
            if let Some(h) = history.as_mut() {
                h.push(current);
            }
            atlas.history = history;
            return Ok(atlas);
        }
        let (next, entries, mut stats) = one_step_with(&verifier, &grid, current.boxes().to_vec(), &current)?;
        stats.iteration = iteration;
        progress(&stats);
        let fixed = next.cardinality() == current.cardinality();
        if let Some(h) = history.as_mut() {
            h.push(next.clone());
        }
        if fixed {
            let mut atlas = ControlAtlas::new(grid, entries, u.clone(), iteration)?;
            atlas.history = history;
            return Ok(atlas);
        }
        current = next;
    }
}

/// Outcome of the independent per-box certificate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Certificate {
    pub boxes_checked: usize,
    /// Entries whose control is inadmissible or whose image leaves the set.
    pub failures: Vec<GridBox>,
    /// Whether the entries tile the set exactly.
    pub exact_cover: bool,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.exact_cover && self.failures.is_empty()
    }
}

/// Re-checks every atlas entry with interval reachability alone.
pub fn certify(m: &Mlp, atlas: &ControlAtlas) -> Result<Certificate, SynthError> {
    let grid = atlas.grid();
    check_dims(m, grid, atlas.control_domain())?;
    let boxes: Vec<GridBox> = atlas.entries().iter().map(|e| e.0.clone()).collect();
    let union = BoxSet::from_boxes(grid.clone(), boxes)?;
    let exact_cover = union.cardinality() == atlas.cis().cardinality() && union.equals(atlas.cis())?;
    let cover = TargetCover::new(atlas.cis());
    let mut failures = Vec::new();
    for (i, (b, u)) in atlas.entries().iter().enumerate() {
        let ok = atlas.control_domain().contains(u) && {
            let (_, out) = reach_boxes(m, atlas.real_box(i), &RealBox::point(u))?;
            !atlas.cis().is_empty() && cover.contains_box(&out)
        };
        if !ok {
            failures.push(b.clone());
        }
    }
    Ok(Certificate { boxes_checked: atlas.entries().len(), failures, exact_cover })
}

/// Closed-loop rollouts under the atlas feedback from every cell center.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutReport {
    pub starts: usize,
    pub steps: usize,
    /// Start cells whose trajectory left the set, with the exit step.
    pub exits: Vec<(Vec<i64>, usize)>,
}

pub fn rollout_check(m: &Mlp, atlas: &ControlAtlas, steps: usize) -> Result<RolloutReport, SynthError> {
    let grid = atlas.grid();
    let mut report = RolloutReport { steps, ..RolloutReport::default() };
    for b in atlas.cis().boxes() {
        for cell in b.cells() {
            report.starts += 1;
            let mut x = grid.real_box(&GridBox::cell(&cell)).center();
            for k in 0..steps {
                match atlas.control(&x) {
                    Ok(u) => x = m.forward(&x, &u)?,
                    Err(_) => {
                        report.exits.push((cell.clone(), k));
                        break;
                    }
                }
                if k + 1 == steps && !atlas.contains(&x) {
                    report.exits.push((cell.clone(), steps));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::linear_to_mlp;

    fn scalar(a: f64, umax: f64, safe: (f64, f64), d: f64) -> (Mlp, BoxSet, ControlDomain) {
        let m = linear_to_mlp(&[vec![a]], &[vec![1.0]], &[0.0]).unwrap();
        let grid = Arc::new(GridSpec::new(vec![-1.0], vec![1.0], d).unwrap());
        let safe = crate::boxes::quantize_boxes(grid, &[RealBox::new(vec![safe.0], vec![safe.1]).unwrap()]).unwrap();
        (m, safe, ControlDomain::new(vec![-umax], vec![umax]).unwrap())
    }

    #[test]
    fn integrator_keeps_safe_set() {
        let (m, safe, u) = scalar(1.0, 0.1, (-0.5, 0.5), 0.125);
        let atlas = synthesize_cis(&m, &safe, &u, &SynthOptions::default(), |_| {}).unwrap();
        assert_eq!(atlas.iterations(), 1);
        assert!(atlas.cis().equals(&safe).unwrap());
        assert!(certify(&m, &atlas).unwrap().passed());
        assert_eq!(termination_bound(&safe), 9);
    }

    #[test]
    fn tripling_net_is_empty() {
        let (m, safe, u) = scalar(3.0, 0.1, (-1.0, 1.0), 0.25);
        let atlas = synthesize_cis(&m, &safe, &u, &SynthOptions::default(), |_| {}).unwrap();
        assert_eq!(atlas.status(), SynthStatus::Empty);
        assert!(atlas.control(&[0.0]).is_err());
    }

    #[test]
    fn filtered_box() {
        let (m, _, u) = scalar(1.0, 0.1, (-1.0, 1.0), 0.125);
        let grid = Arc::new(GridSpec::new(vec![-1.0], vec![1.0], 0.05).unwrap());
        let target =
            crate::boxes::quantize_boxes(grid.clone(), &[RealBox::new(vec![-0.5], vec![-0.4]).unwrap()]).unwrap();
        let b = grid.align_box(&RealBox::new(vec![0.9], vec![1.0]).unwrap()).unwrap();
        let v = returnable_verification(&m, &[b], &target, &u, &SynthOptions::default()).unwrap();
        assert_eq!(v.undetermined[0].1, Undetermined::Filtered);
        assert_eq!(v.solver_calls, 0);
    }

    #[test]
    fn face_lookup_prefers_first_box() {
        let (m, safe, u) = scalar(1.0, 0.1, (-0.5, 0.5), 0.125);
        let atlas = synthesize_cis(&m, &safe, &u, &SynthOptions::default(), |_| {}).unwrap();
        let first = atlas.locate(&[-0.5]).unwrap();
        assert_eq!(first, 0);
        assert!(atlas.locate(&[0.6]).is_none());
    }
}
