//! Mixed-integer encodings: interval ReLU blocks, box-in-union inclusion,
//! the one-step returnability problem and the MPC problem.

use thiserror::Error;

use crate::boxes::{obstacle_cover, prune_obstacles, BoxSet, OpenBox, RealBox};
use crate::mip::{MipError, MipModel, RowId, Sense, VarId};
use crate::mpc::{MpcConfig, MpcVariant};
use crate::network::{ControlDomain, Mlp, NetworkError};
use crate::reach::{horizon_bounds, LayerBounds};
use crate::synth::{AtlasError, ControlAtlas};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("target set is empty")]
    EmptyTarget,
    #[error("invariant set is empty")]
    EmptyCis,
    #[error("initial state lies outside the state domain")]
    X0OutsideDomain,
    #[error("state lies outside the invariant set")]
    OutsideCis,
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl From<AtlasError> for EncodeError {
    fn from(_: AtlasError) -> Self {
        EncodeError::OutsideCis
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), EncodeError> {
    if expected == got {
        Ok(())
    } else {
        Err(EncodeError::DimMismatch { expected, got })
    }
}

/// Variables of one interval-ReLU block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluBlockVars {
    pub a_hat: Vec<VarId>,
    pub b_hat: Vec<VarId>,
    pub a: Vec<VarId>,
    pub b: Vec<VarId>,
    pub alpha: Vec<VarId>,
    pub beta: Vec<VarId>,
    pub gamma: Vec<VarId>,
}

/// Encodes `[a, b] = [max(0, â), max(0, b̂)]` for interval pre-activations
/// bounded by `[lower, upper]`. Exactly one of α (both bounds negative),
/// β (interval straddles zero) and γ (both nonnegative) is set.
pub fn encode_milc_relu(
    model: &mut MipModel,
    a_hat: &[VarId],
    b_hat: &[VarId],
    lower: &[f64],
    upper: &[f64],
) -> Result<ReluBlockVars, EncodeError> {
    let n = a_hat.len();
    check_len(n, b_hat.len())?;
    check_len(n, lower.len())?;
    check_len(n, upper.len())?;
    let mut blk = ReluBlockVars {
        a_hat: a_hat.to_vec(),
        b_hat: b_hat.to_vec(),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        beta: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
    };
    for j in 0..n {
        let (lo, hi) = (lower[j], upper[j]);
        model.restrict_bounds(a_hat[j], lo, hi)?;
        model.restrict_bounds(b_hat[j], lo, hi)?;
        model.add_row(&[(a_hat[j], 1.0), (b_hat[j], -1.0)], Sense::Le, 0.0)?;
        let top = hi.max(0.0);
        let a = model.add_continuous(0.0, top)?;
        let b = model.add_continuous(0.0, top)?;
        let al = model.add_binary();
        let be = model.add_binary();
        let ga = model.add_binary();
        model.add_row(&[(al, 1.0), (be, 1.0), (ga, 1.0)], Sense::Eq, 1.0)?;
        // a ≥ â, a ≤ ẑ̄γ, a ≤ â − ẑ̲(α+β)
        model.add_row(&[(a, 1.0), (a_hat[j], -1.0)], Sense::Ge, 0.0)?;
        model.add_row(&[(a, 1.0), (ga, -hi)], Sense::Le, 0.0)?;
        model.add_row(&[(a, 1.0), (a_hat[j], -1.0), (al, lo), (be, lo)], Sense::Le, 0.0)?;
        // b ≥ b̂, b ≤ b̂ − ẑ̲α, b ≤ ẑ̄(β+γ)
        model.add_row(&[(b, 1.0), (b_hat[j], -1.0)], Sense::Ge, 0.0)?;
        model.add_row(&[(b, 1.0), (b_hat[j], -1.0), (al, lo)], Sense::Le, 0.0)?;
        model.add_row(&[(b, 1.0), (be, -hi), (ga, -hi)], Sense::Le, 0.0)?;
        model.add_row(&[(a, 1.0), (b, -1.0)], Sense::Le, 0.0)?;
        blk.a.push(a);
        blk.b.push(b);
        blk.alpha.push(al);
        blk.beta.push(be);
        blk.gamma.push(ga);
    }
    Ok(blk)
}

/// Binaries of the inclusion block, one `(φ, ψ)` pair per obstacle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InclusionVars {
    pub phi: Vec<Vec<VarId>>,
    pub psi: Vec<Vec<VarId>>,
}

/// Forces the box `[lo, hi]` to miss every open obstacle: for each obstacle
/// some coordinate must lie entirely below it (φ) or entirely above it (ψ).
pub fn encode_milc_inc(
    model: &mut MipModel,
    lo: &[VarId],
    hi: &[VarId],
    obstacles: &[OpenBox],
    domain: &RealBox,
) -> Result<InclusionVars, EncodeError> {
    let n = domain.dim();
    check_len(n, lo.len())?;
    check_len(n, hi.len())?;
    let mut out = InclusionVars::default();
    for o in obstacles {
        check_len(n, o.lo.len())?;
        let mut phi = Vec::with_capacity(n);
        let mut psi = Vec::with_capacity(n);
        let mut any = Vec::with_capacity(2 * n);
        for j in 0..n {
            let f = model.add_binary();
            let p = model.add_binary();
            let (dlo, dhi) = (domain.lo[j], domain.hi[j]);
            model.add_row(&[(f, 1.0), (p, 1.0)], Sense::Le, 1.0)?;
            model.add_row(&[(hi[j], 1.0), (f, -(o.lo[j] - dhi))], Sense::Le, dhi)?;
            model.add_row(&[(hi[j], 1.0), (f, o.lo[j] - dlo)], Sense::Ge, o.lo[j])?;
            model.add_row(&[(lo[j], 1.0), (p, -(o.hi[j] - dlo))], Sense::Ge, dlo)?;
            model.add_row(&[(lo[j], 1.0), (p, o.hi[j] - dhi)], Sense::Le, o.hi[j])?;
            any.push((f, 1.0));
            any.push((p, 1.0));
            phi.push(f);
            psi.push(p);
        }
        model.add_row(&any, Sense::Ge, 1.0)?;
        out.phi.push(phi);
        out.psi.push(psi);
    }
    Ok(out)
}

/// Big-M encoding of `z = max(0, ẑ)` for point-valued pre-activations.
pub fn encode_pointwise_relu(
    model: &mut MipModel,
    z_hat: &[VarId],
    z: &[VarId],
    sigma: &[VarId],
    lower: &[f64],
    upper: &[f64],
) -> Result<Vec<RowId>, EncodeError> {
    let n = z_hat.len();
    check_len(n, z.len())?;
    check_len(n, sigma.len())?;
    check_len(n, lower.len())?;
    check_len(n, upper.len())?;
    let mut rows = Vec::with_capacity(3 * n);
    for j in 0..n {
        model.restrict_bounds(z[j], 0.0, f64::MAX)?;
        rows.push(model.add_row(&[(z[j], 1.0), (z_hat[j], -1.0)], Sense::Ge, 0.0)?);
        rows.push(model.add_row(&[(z[j], 1.0), (z_hat[j], -1.0), (sigma[j], -lower[j])], Sense::Le, -lower[j])?);
        rows.push(model.add_row(&[(z[j], 1.0), (sigma[j], -upper[j])], Sense::Le, 0.0)?);
    }
    Ok(rows)
}

/// Target set prepared for repeated encodings: its crack-free obstacle
/// cover and the state domain.
#[derive(Debug, Clone)]
pub struct TargetCover {
    pub domain: RealBox,
    pub obstacles: Vec<OpenBox>,
    pub boxes: Vec<RealBox>,
}

impl TargetCover {
    pub fn new(target: &BoxSet) -> Self {
        let grid = target.grid();
        Self { domain: grid.domain(), obstacles: obstacle_cover(grid, target), boxes: target.real_boxes() }
    }

    /// Exact test that a closed box lies inside the target.
    pub fn contains_box(&self, b: &RealBox) -> bool {
        crate::boxes::box_avoids(b, &self.domain, &self.obstacles)
    }

    /// Closed intersection with the target.
    pub fn meets(&self, b: &RealBox) -> bool {
        self.boxes.iter().any(|t| t.intersects(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReturnObjective {
    #[default]
    Feasibility,
    /// Minimize `‖x̲⁺ + x̄⁺‖₁`, pulling the successor box toward the origin.
    L1Center,
}

/// Returnability model plus the handles needed to read a solution.
#[derive(Debug, Clone)]
pub struct ReturnabilityModel {
    pub model: MipModel,
    pub u: Vec<VarId>,
    pub out_lo: Vec<VarId>,
    pub out_hi: Vec<VarId>,
    pub relu: Vec<ReluBlockVars>,
    pub inclusion: InclusionVars,
    pub obstacles: Vec<OpenBox>,
}

/// Encodes "some `u ∈ U` maps the whole box `box_i` into `target`".
///
/// `bounds` must contain the layer bounds of `box_i × U` and serve as big-M
/// values.
pub fn build_returnability(
    m: &Mlp,
    box_i: &RealBox,
    u: &ControlDomain,
    target: &BoxSet,
    bounds: &LayerBounds,
    objective: ReturnObjective,
) -> Result<ReturnabilityModel, EncodeError> {
    if target.is_empty() {
        return Err(EncodeError::EmptyTarget);
    }
    build_returnability_with(m, box_i, u, &TargetCover::new(target), bounds, objective, 0.0)
}

/// As [`build_returnability`] with a precomputed cover; obstacles are
/// inflated by `margin` for a strict separation.
pub fn build_returnability_with(
    m: &Mlp,
    box_i: &RealBox,
    u: &ControlDomain,
    cover: &TargetCover,
    bounds: &LayerBounds,
    objective: ReturnObjective,
    margin: f64,
) -> Result<ReturnabilityModel, EncodeError> {
    let (n_x, n_u) = (m.n_x(), m.n_u());
    check_len(n_x, box_i.dim())?;
    check_len(n_u, u.dim())?;
    check_len(m.layers().len(), bounds.pre.len())?;
    let mut model = MipModel::new();
    let uv: Vec<VarId> = (0..n_u).map(|k| model.add_continuous(u.lower[k], u.upper[k])).collect::<Result<_, _>>()?;
    let last = m.layers().len() - 1;
    let mut relu = Vec::new();
    // Interval inputs of the current layer: constants for the state part
    // of layer one, variables afterwards.
    let mut prev: Option<(Vec<VarId>, Vec<VarId>)> = None;
    let mut out = (Vec::new(), Vec::new());
    for (i, layer) in m.layers().iter().enumerate() {
        let pre = &bounds.pre[i];
        let mut ah = Vec::with_capacity(layer.rows());
        let mut bh = Vec::with_capacity(layer.rows());
        for j in 0..layer.rows() {
            let av = model.add_continuous(pre.lo[j], pre.hi[j])?;
            let bv = model.add_continuous(pre.lo[j], pre.hi[j])?;
            let w = layer.row(j);
            let mut lo_row = vec![(av, 1.0)];
            let mut hi_row = vec![(bv, 1.0)];
            let mut lo_rhs = layer.bias()[j];
            let mut hi_rhs = layer.bias()[j];
            match &prev {
                None => {
                    for q in 0..n_x {
                        let (lo_in, hi_in) =
                            if w[q] >= 0.0 { (box_i.lo[q], box_i.hi[q]) } else { (box_i.hi[q], box_i.lo[q]) };
                        lo_rhs += w[q] * lo_in;
                        hi_rhs += w[q] * hi_in;
                    }
                    for k in 0..n_u {
                        lo_row.push((uv[k], -w[n_x + k]));
                        hi_row.push((uv[k], -w[n_x + k]));
                    }
                }
                Some((pa, pb)) => {
                    for (q, &wq) in w.iter().enumerate() {
                        let (lo_in, hi_in) = if wq >= 0.0 { (pa[q], pb[q]) } else { (pb[q], pa[q]) };
                        lo_row.push((lo_in, -wq));
                        hi_row.push((hi_in, -wq));
                    }
                }
            }
            model.add_row(&lo_row, Sense::Eq, lo_rhs)?;
            model.add_row(&hi_row, Sense::Eq, hi_rhs)?;
            ah.push(av);
            bh.push(bv);
        }
        if i < last {
            let blk = encode_milc_relu(&mut model, &ah, &bh, &pre.lo, &pre.hi)?;
            prev = Some((blk.a.clone(), blk.b.clone()));
            relu.push(blk);
        } else {
            for j in 0..n_x {
                model.add_row(&[(ah[j], 1.0), (bh[j], -1.0)], Sense::Le, 0.0)?;
            }
            out = (ah, bh);
        }
    }
    let (out_lo, out_hi) = out;
    // The successor box must stay in the state domain; with no obstacle
    // left after pruning nothing else would enforce it.
    for j in 0..n_x {
        if model.restrict_bounds(out_lo[j], cover.domain.lo[j], f64::MAX).is_err() {
            model.add_row(&[(out_lo[j], 1.0)], Sense::Ge, cover.domain.lo[j])?;
        }
        if model.restrict_bounds(out_hi[j], f64::MIN, cover.domain.hi[j]).is_err() {
            model.add_row(&[(out_hi[j], 1.0)], Sense::Le, cover.domain.hi[j])?;
        }
    }
    let fbar = bounds.output();
    let obstacles: Vec<OpenBox> = prune_obstacles(fbar, &cover.obstacles)
        .iter()
        .map(|o| if margin > 0.0 { o.inflate(margin) } else { o.clone() })
        .collect();
    let inclusion = encode_milc_inc(&mut model, &out_lo, &out_hi, &obstacles, &cover.domain)?;
    if objective == ReturnObjective::L1Center {
        let mut obj = Vec::new();
        for j in 0..n_x {
            let span = 2.0 * fbar.lo[j].abs().max(fbar.hi[j].abs());
            let t = model.add_continuous(0.0, span)?;
            model.add_row(&[(t, 1.0), (out_lo[j], -1.0), (out_hi[j], -1.0)], Sense::Ge, 0.0)?;
            model.add_row(&[(t, 1.0), (out_lo[j], 1.0), (out_hi[j], 1.0)], Sense::Ge, 0.0)?;
            obj.push((t, 1.0));
        }
        model.set_objective(&obj, 0.0)?;
    }
    Ok(ReturnabilityModel { model, u: uv, out_lo, out_hi, relu, inclusion, obstacles })
}

/// MPC model plus variable handles for reading and warm-starting it.
#[derive(Debug, Clone)]
pub struct MpcModel {
    pub model: MipModel,
    pub x0: Vec<f64>,
    pub x_ref: Vec<f64>,
    /// Controls `u_{k+n}`, `n = 0..N`.
    pub u: Vec<Vec<VarId>>,
    /// Predicted states `x_{k|n}`, `n = 1..=N`.
    pub x: Vec<Vec<VarId>>,
    /// Hidden pre-activations per step and layer.
    pub z_hat: Vec<Vec<Vec<VarId>>>,
    pub z: Vec<Vec<Vec<VarId>>>,
    pub sigma: Vec<Vec<Vec<VarId>>>,
    /// `(step, binaries, obstacles)` for each step with an inclusion block;
    /// step `n` constrains `x_{k|n+1}`.
    pub inclusion: Vec<(usize, InclusionVars, Vec<OpenBox>)>,
    /// L1 slack per predicted state coordinate (`None` for zero weight).
    pub state_slack: Vec<Vec<Option<(VarId, f64)>>>,
    pub control_slack: Vec<Vec<Option<(VarId, f64)>>>,
}

/// Encodes the receding-horizon problem from `x0` with reference `x_ref`.
#[allow(clippy::too_many_arguments)]
pub fn build_mpc(
    m: &Mlp,
    x0: &[f64],
    x_ref: &[f64],
    u: &ControlDomain,
    cfg: &MpcConfig,
    cis: &TargetCover,
    margin: f64,
) -> Result<MpcModel, EncodeError> {
    let (n_x, n_u) = (m.n_x(), m.n_u());
    check_len(n_x, x0.len())?;
    check_len(n_x, x_ref.len())?;
    check_len(n_u, u.dim())?;
    if cis.boxes.is_empty() {
        return Err(EncodeError::EmptyCis);
    }
    if !cis.domain.contains_point(x0, 0.0) {
        return Err(EncodeError::X0OutsideDomain);
    }
    let horizon = cfg.horizon.max(1);
    let hb = horizon_bounds(m, x0, u, horizon)?;
    let mut model = MipModel::new();
    let mut mm = MpcModel {
        model: MipModel::new(),
        x0: x0.to_vec(),
        x_ref: x_ref.to_vec(),
        u: Vec::new(),
        x: Vec::new(),
        z_hat: Vec::new(),
        z: Vec::new(),
        sigma: Vec::new(),
        inclusion: Vec::new(),
        state_slack: Vec::new(),
        control_slack: Vec::new(),
    };
    let last = m.layers().len() - 1;
    let mut objective = Vec::new();
    let mut constant = 0.0;
    for j in 0..n_x {
        constant += cfg.q[j] * (x0[j] - x_ref[j]).abs();
    }
    for n in 0..horizon {
        let uv: Vec<VarId> =
            (0..n_u).map(|k| model.add_continuous(u.lower[k], u.upper[k])).collect::<Result<_, _>>()?;
        let mut zh_steps = Vec::new();
        let mut z_steps = Vec::new();
        let mut s_steps = Vec::new();
        let mut prev_z: Option<Vec<VarId>> = None;
        let mut next_x = Vec::new();
        for (i, layer) in m.layers().iter().enumerate() {
            let pre = &hb[n].pre[i];
            let mut outs = Vec::with_capacity(layer.rows());
            for j in 0..layer.rows() {
                let (mut lo, mut hi) = (pre.lo[j], pre.hi[j]);
                if i == last {
                    let l2 = lo.max(cis.domain.lo[j]);
                    let h2 = hi.min(cis.domain.hi[j]);
                    if l2 <= h2 {
                        lo = l2;
                        hi = h2;
                    }
                }
                let v = model.add_continuous(lo, hi)?;
                let w = layer.row(j);
                let mut row = vec![(v, 1.0)];
                let mut rhs = layer.bias()[j];
                match &prev_z {
                    None => {
                        for q in 0..n_x {
                            match n {
                                0 => rhs += w[q] * x0[q],
                                _ => row.push((mm.x[n - 1][q], -w[q])),
                            }
                        }
                        for k in 0..n_u {
                            row.push((uv[k], -w[n_x + k]));
                        }
                    }
                    Some(z) => {
                        for (q, &wq) in w.iter().enumerate() {
                            row.push((z[q], -wq));
                        }
                    }
                }
                model.add_row(&row, Sense::Eq, rhs)?;
                outs.push(v);
            }
            if i < last {
                let zv: Vec<VarId> = (0..layer.rows())
                    .map(|j| model.add_continuous(0.0, pre.hi[j].max(0.0)))
                    .collect::<Result<_, _>>()?;
                let sv: Vec<VarId> = (0..layer.rows()).map(|_| model.add_binary()).collect();
                encode_pointwise_relu(&mut model, &outs, &zv, &sv, &pre.lo, &pre.hi)?;
                prev_z = Some(zv.clone());
                zh_steps.push(outs);
                z_steps.push(zv);
                s_steps.push(sv);
            } else {
                next_x = outs;
            }
        }
        let constrained = match cfg.variant {
            MpcVariant::Full => true,
            MpcVariant::FirstStep => n == 0,
        };
        if constrained {
            let fbar = hb[n].output();
            let obstacles: Vec<OpenBox> = prune_obstacles(fbar, &cis.obstacles)
                .iter()
                .map(|o| if margin > 0.0 { o.inflate(margin) } else { o.clone() })
                .collect();
            let inc = encode_milc_inc(&mut model, &next_x, &next_x, &obstacles, &cis.domain)?;
            mm.inclusion.push((n, inc, obstacles));
        }
        let mut cs = Vec::with_capacity(n_u);
        for k in 0..n_u {
            cs.push(l1_slack(&mut model, uv[k], 0.0, cfg.r[k], &mut objective)?);
        }
        let weights = if n + 1 == horizon { &cfg.q_terminal } else { &cfg.q };
        let mut ss = Vec::with_capacity(n_x);
        for j in 0..n_x {
            ss.push(l1_slack(&mut model, next_x[j], x_ref[j], weights[j], &mut objective)?);
        }
        mm.u.push(uv);
        mm.x.push(next_x);
        mm.z_hat.push(zh_steps);
        mm.z.push(z_steps);
        mm.sigma.push(s_steps);
        mm.state_slack.push(ss);
        mm.control_slack.push(cs);
    }
    model.set_objective(&objective, constant)?;
    mm.model = model;
    Ok(mm)
}

/// Adds `t ≥ w·|v − r|` and puts `t` in the objective.
fn l1_slack(
    model: &mut MipModel,
    v: VarId,
    r: f64,
    w: f64,
    objective: &mut Vec<(VarId, f64)>,
) -> Result<Option<(VarId, f64)>, EncodeError> {
    if w <= 0.0 {
        return Ok(None);
    }
    let (lo, hi) = model.bounds(v);
    let top = w * (lo - r).abs().max((hi - r).abs());
    let t = model.add_continuous(0.0, top)?;
    model.add_row(&[(t, 1.0), (v, -w)], Sense::Ge, -w * r)?;
    model.add_row(&[(t, 1.0), (v, w)], Sense::Ge, w * r)?;
    objective.push((t, 1.0));
    Ok(Some((t, w)))
}

/// Assignment for `mpc` obtained by rolling the atlas feedback forward.
pub fn warm_start(x0: &[f64], atlas: &ControlAtlas, m: &Mlp, mpc: &MpcModel) -> Result<Vec<f64>, EncodeError> {
    let mut x = vec![0.0; mpc.model.n_vars()];
    let mut state = x0.to_vec();
    for n in 0..mpc.u.len() {
        let u = atlas.control(&state)?;
        let tr = m.forward_trace(&state, &u)?;
        for (k, v) in mpc.u[n].iter().enumerate() {
            x[v.0] = u[k];
        }
        for (i, layer_vars) in mpc.z_hat[n].iter().enumerate() {
            for (j, v) in layer_vars.iter().enumerate() {
                x[v.0] = tr.pre[i][j];
                x[mpc.z[n][i][j].0] = tr.post[i][j];
                x[mpc.sigma[n][i][j].0] = if tr.pre[i][j] >= 0.0 { 1.0 } else { 0.0 };
            }
        }
        let next = tr.pre.last().expect("output layer").clone();
        for (j, v) in mpc.x[n].iter().enumerate() {
            x[v.0] = next[j];
        }
        for (k, s) in mpc.control_slack[n].iter().enumerate() {
            if let Some((t, w)) = s {
                x[t.0] = w * u[k].abs();
            }
        }
        for (j, s) in mpc.state_slack[n].iter().enumerate() {
            if let Some((t, w)) = s {
                x[t.0] = w * (next[j] - mpc.x_ref[j]).abs();
            }
        }
        for (step, inc, obstacles) in &mpc.inclusion {
            if *step != n {
                continue;
            }
            for (o, ob) in obstacles.iter().enumerate() {
                for j in 0..next.len() {
                    x[inc.phi[o][j].0] = if next[j] <= ob.lo[j] { 1.0 } else { 0.0 };
                    x[inc.psi[o][j].0] = if next[j] >= ob.hi[j] { 1.0 } else { 0.0 };
                }
            }
        }
        state = next;
    }
    Ok(x)
}
