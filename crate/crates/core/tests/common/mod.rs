#![allow(clippy::needless_range_loop)]

//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use cisynth::boxes::{
    complement_open_boxes, obstacle_cover, quantize_boxes, BoxSet, GridBox, GridSpec, OpenBox, RealBox,
};
use cisynth::encode::{encode_milc_inc, encode_milc_relu};
use cisynth::io::{lane_keeping, LaneParams};
use cisynth::mip::{lp_solve, mip_solve, LpStatus, MipModel, MipStatus, Sense, SolverConfig, VarId, VarKind};
use cisynth::network::{linear_to_mlp, ControlDomain, Layer, Mlp};
use cisynth::reach::reach_boxes;
use cisynth::synth::ControlAtlas;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense LP `min c·x` with rows `(a, sense, b)` and box bounds.
#[derive(Debug, Clone)]
pub struct DenseLp {
    pub c: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Sense, f64)>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl DenseLp {
    pub fn to_model(&self) -> MipModel {
        let mut m = MipModel::new();
        let vars: Vec<VarId> = (0..self.c.len()).map(|j| m.add_continuous(self.lb[j], self.ub[j]).unwrap()).collect();
        for (a, s, b) in &self.rows {
            let coeffs: Vec<(VarId, f64)> = vars.iter().zip(a).map(|(v, c)| (*v, *c)).collect();
            m.add_row(&coeffs, *s, *b).unwrap();
        }
        let obj: Vec<(VarId, f64)> = vars.iter().zip(&self.c).map(|(v, c)| (*v, *c)).collect();
        m.set_objective(&obj, 0.0).unwrap();
        m
    }

    fn feasible(&self, x: &[f64], tol: f64) -> bool {
        for j in 0..x.len() {
            if x[j] < self.lb[j] - tol || x[j] > self.ub[j] + tol {
                return false;
            }
        }
        self.rows.iter().all(|(a, s, b)| {
            let act: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
            match s {
                Sense::Le => act <= b + tol,
                Sense::Ge => act >= b - tol,
                Sense::Eq => (act - b).abs() <= tol,
            }
        })
    }

    /// Minimum over all basic solutions: every choice of `n` tight
    /// constraints (rows or bounds) with a nonsingular system.
    pub fn vertex_oracle(&self) -> Option<f64> {
        let n = self.c.len();
        let mut hyper: Vec<(Vec<f64>, f64)> = self.rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            hyper.push((e.clone(), self.lb[j]));
            hyper.push((e, self.ub[j]));
        }
        let mut best: Option<f64> = None;
        let mut pick = Vec::with_capacity(n);
        combos(hyper.len(), n, 0, &mut pick, &mut |idx| {
            let a: Vec<Vec<f64>> = idx.iter().map(|&i| hyper[i].0.clone()).collect();
            let b: Vec<f64> = idx.iter().map(|&i| hyper[i].1).collect();
            if let Some(x) = gauss_solve(a, b) {
                if self.feasible(&x, 1e-7) {
                    let v: f64 = self.c.iter().zip(&x).map(|(p, q)| p * q).sum();
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        });
        best
    }
}

fn combos(total: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..total {
        pick.push(i);
        combos(total, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &k| a[i][col].abs().total_cmp(&a[k][col].abs()))?;
        if a[p][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for i in 0..n {
            if i != col {
                let f = a[i][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[i][k] -= f * a[col][k];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DenseLp {
    let c = (0..n).map(|_| rng.gen_range(-5..=5) as f64).collect();
    let lb: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=0) as f64).collect();
    let ub: Vec<f64> = lb.iter().map(|l| l + rng.gen_range(1..=5) as f64).collect();
    let rows = (0..m)
        .map(|_| {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4..=4) as f64).collect();
            let s = match rng.gen_range(0..5) {
                0 => Sense::Ge,
                1 => Sense::Eq,
                _ => Sense::Le,
            };
            (a, s, rng.gen_range(-6..=6) as f64)
        })
        .collect();
    DenseLp { c, rows, lb, ub }
}

/// Random MILP; `plant` makes it feasible by construction around a random point.
pub fn random_milp(rng: &mut ChaCha8Rng, n_bin: usize, n_cont: usize, n_rows: usize, plant: bool) -> MipModel {
    let mut m = MipModel::new();
    let mut point = Vec::new();
    let mut vars = Vec::new();
    for _ in 0..n_bin {
        vars.push(m.add_binary());
        point.push(rng.gen_range(0..=1) as f64);
    }
    for _ in 0..n_cont {
        let lo = rng.gen_range(-4..=0) as f64;
        let hi = lo + rng.gen_range(1..=6) as f64;
        vars.push(m.add_continuous(lo, hi).unwrap());
        point.push(rng.gen_range(lo..=hi));
    }
    let total = vars.len();
    for _ in 0..n_rows {
        let mut coeffs = Vec::new();
        for j in 0..total {
            if rng.gen_bool(0.4) {
                coeffs.push((vars[j], rng.gen_range(-5..=5) as f64));
            }
        }
        let act: f64 = coeffs.iter().map(|(v, c)| c * point[v.0]).sum();
        let (sense, rhs) = if plant {
            match rng.gen_range(0..6) {
                0 => (Sense::Eq, act),
                1 | 2 => (Sense::Ge, (act - rng.gen_range(0.0..3.0)).floor()),
                _ => (Sense::Le, (act + rng.gen_range(0.0..3.0)).ceil()),
            }
        } else {
            let s = if rng.gen_bool(0.5) { Sense::Le } else { Sense::Ge };
            (s, rng.gen_range(-6..=6) as f64)
        };
        m.add_row(&coeffs, sense, rhs).unwrap();
    }
    let obj: Vec<(VarId, f64)> = vars.iter().map(|v| (*v, rng.gen_range(-5..=5) as f64)).collect();
    m.set_objective(&obj, rng.gen_range(-2.0..2.0)).unwrap();
    m
}

/// Exhaustive enumeration of binary assignments, each closed by an LP.
pub fn enumerate_milp(model: &MipModel) -> Option<f64> {
    let bins: Vec<usize> = (0..model.n_vars()).filter(|&j| model.kind(VarId(j)) == VarKind::Binary).collect();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1u64 << bins.len()) {
        let mut fixed = model.clone();
        for (k, &j) in bins.iter().enumerate() {
            let v = ((mask >> k) & 1) as f64;
            fixed.add_row(&[(VarId(j), 1.0)], Sense::Eq, v).unwrap();
        }
        let (status, _, obj) = lp_solve(&fixed, 1e-9);
        if status == LpStatus::Optimal {
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

/// Random MLP with weights and biases uniform in `[-1, 1]`.
pub fn random_mlp(rng: &mut ChaCha8Rng, n_x: usize, n_u: usize, hidden: &[usize]) -> Mlp {
    let mut dims = vec![n_x + n_u];
    dims.extend_from_slice(hidden);
    dims.push(n_x);
    let layers = dims
        .windows(2)
        .map(|w| {
            let rows: Vec<Vec<f64>> =
                (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            Layer::from_rows(&rows, (0..w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    Mlp::new(n_x, n_u, layers).unwrap()
}

/// Interval image of a layer by enumerating every vertex of the input box.
pub fn vertex_image(layer: &Layer, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut lo = vec![f64::INFINITY; layer.rows()];
    let mut hi = vec![f64::NEG_INFINITY; layer.rows()];
    for mask in 0u64..(1 << n) {
        let z: Vec<f64> = (0..n).map(|q| if (mask >> q) & 1 == 1 { b[q] } else { a[q] }).collect();
        for (j, v) in layer.apply(&z).into_iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

/// Samples points of `x × u` and counts pre-activations that leave the
/// propagated layer bounds.
pub fn reach_violations(m: &Mlp, rng: &mut ChaCha8Rng, xb: &RealBox, ub: &RealBox, samples: usize) -> usize {
    let (bounds, _) = reach_boxes(m, xb, ub).unwrap();
    let mut bad = 0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..xb.dim()).map(|j| rng.gen_range(xb.lo[j]..=xb.hi[j])).collect();
        let u: Vec<f64> = (0..ub.dim()).map(|j| rng.gen_range(ub.lo[j]..=ub.hi[j])).collect();
        let tr = m.forward_trace(&x, &u).unwrap();
        let inside = tr.pre.iter().zip(&bounds.pre).all(|(z, b)| b.contains_point(z, 0.0));
        if !inside {
            bad += 1;
        }
    }
    bad
}

pub fn random_subbox(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> RealBox {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for j in 0..lo.len() {
        let p = rng.gen_range(lo[j]..=hi[j]);
        let q = rng.gen_range(lo[j]..=hi[j]);
        a.push(p.min(q));
        b.push(p.max(q));
    }
    RealBox::new(a, b).unwrap()
}

/// One random interval-ReLU block with fixed inputs; checks the unique
/// solution against `max(0, ·)` and that the closed-form binaries satisfy
/// every row.
pub fn relu_block_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.gen_range(1..=4);
    let mut m = MipModel::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut vals = Vec::new();
    let mut ah = Vec::new();
    let mut bh = Vec::new();
    for _ in 0..n {
        let (l, u) = match rng.gen_range(0..4) {
            0 => (rng.gen_range(-4.0..-0.1), rng.gen_range(0.1..4.0)),
            1 => (rng.gen_range(-4.0..-2.0), rng.gen_range(-2.0..-0.1)),
            2 => (rng.gen_range(0.1..2.0), rng.gen_range(2.0..4.0)),
            _ => (-(rng.gen_range(1..=4) as f64), rng.gen_range(1..=4) as f64),
        };
        let mut p = rng.gen_range(l..=u);
        let mut q = rng.gen_range(l..=u);
        if rng.gen_bool(0.1) {
            p = 0.0f64.clamp(l, u);
        }
        if rng.gen_bool(0.1) {
            q = p;
        }
        let (p, q) = (p.min(q), p.max(q));
        ah.push(m.add_continuous(p, p).unwrap());
        bh.push(m.add_continuous(q, q).unwrap());
        lower.push(l);
        upper.push(u);
        vals.push((p, q));
    }
    let blk = encode_milc_relu(&mut m, &ah, &bh, &lower, &upper).map_err(|e| e.to_string())?;
    let r = mip_solve(&m, &SolverConfig::default());
    if r.status != MipStatus::Optimal {
        return Err(format!("status {:?} for {vals:?}", r.status));
    }
    let mut closed = r.assignment.clone();
    for (j, &(p, q)) in vals.iter().enumerate() {
        let (a, b) = (r.value(blk.a[j]), r.value(blk.b[j]));
        if (a - p.max(0.0)).abs() > 1e-9 || (b - q.max(0.0)).abs() > 1e-9 {
            return Err(format!("neuron {j}: ({a}, {b}) for inputs ({p}, {q})"));
        }
        let pattern = [(q < 0.0) as u8, (p < 0.0 && q >= 0.0) as u8, (p >= 0.0) as u8];
        let got = [r.value(blk.alpha[j]), r.value(blk.beta[j]), r.value(blk.gamma[j])];
        let ambiguous = p == 0.0 || q == 0.0;
        if !ambiguous && got.iter().zip(pattern).any(|(g, e)| *g != e as f64) {
            return Err(format!("neuron {j}: binaries {got:?}, expected {pattern:?}"));
        }
        closed[blk.a[j].0] = p.max(0.0);
        closed[blk.b[j].0] = q.max(0.0);
        closed[blk.alpha[j].0] = pattern[0] as f64;
        closed[blk.beta[j].0] = pattern[1] as f64;
        closed[blk.gamma[j].0] = pattern[2] as f64;
    }
    let res = m.residuals(&closed);
    if !res.within(1e-12, 0.0) {
        return Err(format!("closed form violates rows: {res:?}"));
    }
    Ok(())
}

/// Random target on a random 2-D grid.
pub fn random_target(rng: &mut ChaCha8Rng) -> BoxSet {
    let nx = rng.gen_range(2..=7);
    let ny = rng.gen_range(2..=7);
    let d = [0.25, 0.5, 1.0][rng.gen_range(0..3)];
    let lo = vec![rng.gen_range(-2..=0) as f64, rng.gen_range(-2..=0) as f64];
    // A ragged upper edge exercises clipped last cells.
    let clip = if rng.gen_bool(0.3) { 0.5 * d } else { 0.0 };
    let hi = vec![lo[0] + nx as f64 * d - clip, lo[1] + ny as f64 * d];
    let grid = Arc::new(GridSpec::new(lo, hi, d).unwrap());
    let density = rng.gen_range(0.3..0.95);
    let mut idx: Vec<u64> = (0..grid.n_basis()).filter(|_| rng.gen_bool(density)).collect();
    if idx.is_empty() {
        idx.push(0);
    }
    BoxSet::from_indices(grid, &idx).unwrap()
}

pub fn random_grid_box(rng: &mut ChaCha8Rng, grid: &GridSpec) -> GridBox {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for &c in grid.cells() {
        let a = rng.gen_range(0..c);
        lo.push(a);
        hi.push(rng.gen_range(a + 1..=c));
    }
    GridBox::new(lo, hi).unwrap()
}

/// Whether the closed real box lies in the union of the closed target
/// cells, decided stratum by stratum on the doubled lattice.
pub fn box_in_target(t: &BoxSet, b: &RealBox) -> bool {
    let grid = t.grid();
    if !grid.domain().contains_box(b) {
        return false;
    }
    let mask = t.mask();
    let n = grid.dim();
    // Per dimension: doubled coordinates met by [lo, hi]; even = grid line.
    let mut strata: Vec<Vec<i64>> = Vec::new();
    for j in 0..n {
        let mut s = Vec::new();
        for k in 0..=grid.cells()[j] {
            let line = grid.coord(j, k);
            if b.lo[j] <= line && line <= b.hi[j] {
                s.push(2 * k);
            }
            if k < grid.cells()[j] {
                let (p, q) = (line, grid.coord(j, k + 1));
                if b.lo[j] < q && b.hi[j] > p {
                    s.push(2 * k + 1);
                }
            }
        }
        strata.push(s);
    }
    let mut pick = vec![0usize; n];
    loop {
        let g: Vec<i64> = (0..n).map(|j| strata[j][pick[j]]).collect();
        // Cells adjacent to the stratum.
        let options: Vec<Vec<i64>> = (0..n)
            .map(|j| {
                let v = g[j];
                if v % 2 == 1 {
                    vec![(v - 1) / 2]
                } else {
                    [v / 2 - 1, v / 2].into_iter().filter(|&k| k >= 0 && k < grid.cells()[j]).collect()
                }
            })
            .collect();
        let mut covered = false;
        let mut c = vec![0usize; n];
        'cells: loop {
            let cell: Vec<i64> = (0..n).map(|j| options[j][c[j]]).collect();
            if mask[grid.cell_index(&cell) as usize] {
                covered = true;
                break;
            }
            let mut j = n;
            loop {
                if j == 0 {
                    break 'cells;
                }
                j -= 1;
                c[j] += 1;
                if c[j] < options[j].len() {
                    break;
                }
                c[j] = 0;
            }
        }
        if !covered {
            return false;
        }
        let mut j = n;
        loop {
            if j == 0 {
                return true;
            }
            j -= 1;
            pick[j] += 1;
            if pick[j] < strata[j].len() {
                break;
            }
            pick[j] = 0;
        }
    }
}

/// Inclusion block with a fixed candidate box.
pub fn inclusion_feasible(b: &RealBox, obstacles: &[OpenBox], domain: &RealBox) -> bool {
    let mut m = MipModel::new();
    let lo: Vec<VarId> = b.lo.iter().map(|&v| m.add_continuous(v, v).unwrap()).collect();
    let hi: Vec<VarId> = b.hi.iter().map(|&v| m.add_continuous(v, v).unwrap()).collect();
    encode_milc_inc(&mut m, &lo, &hi, obstacles, domain).unwrap();
    let r = mip_solve(&m, &SolverConfig::default());
    assert!(matches!(r.status, MipStatus::Optimal | MipStatus::Infeasible), "{:?}", r.status);
    r.status == MipStatus::Optimal
}

/// One random grid-aligned candidate against both obstacle lists.
pub fn inclusion_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let t = random_target(rng);
    let grid = t.grid().clone();
    let gb = random_grid_box(rng, &grid);
    let b = grid.real_box(&gb);
    let expect = gb.cells().iter().all(|c| t.mask()[grid.cell_index(c) as usize]);
    if expect != box_in_target(&t, &b) {
        return Err(format!("oracles disagree on {gb:?}"));
    }
    for (name, obstacles) in [("complement", complement_open_boxes(&grid, &t)), ("cover", obstacle_cover(&grid, &t))] {
        let got = inclusion_feasible(&b, &obstacles, &grid.domain());
        if got != expect {
            return Err(format!("{name}: box {gb:?} feasible={got}, contained={expect}"));
        }
    }
    Ok(())
}

/// Cell-level fixed point for `x⁺ = a·x + u` (`a > 0`) on a 1-D grid: a cell
/// stays when some admissible `u` maps it into one contiguous run of the
/// current set.
pub fn scalar_dp_oracle(grid: &GridSpec, safe: &[bool], a: f64, umax: f64) -> Vec<bool> {
    let n = grid.cells()[0] as usize;
    let mut cur = safe.to_vec();
    loop {
        let runs: Vec<(f64, f64)> = {
            let mut r = Vec::new();
            let mut k = 0;
            while k < n {
                if cur[k] {
                    let s = k;
                    while k < n && cur[k] {
                        k += 1;
                    }
                    r.push((grid.coord(0, s as i64), grid.coord(0, k as i64)));
                } else {
                    k += 1;
                }
            }
            r
        };
        let next: Vec<bool> = (0..n)
            .map(|k| {
                cur[k] && {
                    let (p, q) = (a * grid.coord(0, k as i64), a * grid.coord(0, k as i64 + 1));
                    runs.iter().any(|&(r0, r1)| {
                        let (ul, uh) = ((r0 - p).max(-umax), (r1 - q).min(umax));
                        ul <= uh + 1e-12
                    })
                }
            })
            .collect();
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

pub fn scalar_problem(a: f64, umax: f64, domain: (f64, f64), safe: (f64, f64), d: f64) -> (Mlp, BoxSet, ControlDomain) {
    let m = linear_to_mlp(&[vec![a]], &[vec![1.0]], &[0.0]).unwrap();
    let grid = Arc::new(GridSpec::new(vec![domain.0], vec![domain.1], d).unwrap());
    let safe = quantize_boxes(grid, &[RealBox::new(vec![safe.0], vec![safe.1]).unwrap()]).unwrap();
    (m, safe, ControlDomain::new(vec![-umax], vec![umax]).unwrap())
}

/// Lane-keeping problem at `divisions` cells across the safe box.
pub fn lane_problem(divisions: u32) -> (Mlp, BoxSet, ControlDomain) {
    let (s, m) = lane_keeping(&LaneParams { divisions, ..LaneParams::default() }).unwrap();
    let p = s.to_problem().unwrap();
    (m, p.safe, p.control)
}

/// Nestedness of a recorded history.
pub fn history_nested(atlas: &ControlAtlas) -> bool {
    let h = atlas.history().expect("history kept");
    h.windows(2).all(|w| w[1].is_subset_of(&w[0]).unwrap())
}

pub fn cell_centers(set: &BoxSet) -> Vec<Vec<f64>> {
    let grid = set.grid();
    set.boxes().iter().flat_map(|b| b.cells()).map(|c| grid.real_box(&GridBox::cell(&c)).center()).collect()
}
