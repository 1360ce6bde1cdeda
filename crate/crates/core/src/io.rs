//! File formats: scenarios, atlases, trajectories and reference tables,
//! plus the lane-keeping scenario generator.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::{quantize_boxes, quantize_safe_set, BoxError, BoxSet, GridBox, GridSpec, RealBox};
use crate::mpc::{MpcError, ReferenceSchedule, Trajectory};
use crate::network::{linear_to_mlp, ControlDomain, Mlp, NetworkError};
use crate::synth::ControlAtlas;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: field `{field}`: {message}")]
    Field { path: PathBuf, field: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl IoError {
    fn field(path: &Path, field: &str, message: impl ToString) -> Self {
        IoError::Field { path: path.to_path_buf(), field: field.into(), message: message.to_string() }
    }

    fn parse(path: &Path, message: impl ToString) -> Self {
        IoError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::Read { path: path.to_path_buf(), message: e.to_string() })
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| IoError::Read { path: path.to_path_buf(), message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeSpec {
    /// Grid-aligned boxes.
    Boxes(Vec<RealBox>),
    /// Convex set `{x : n·x ≤ c}`.
    Halfspaces(Vec<Halfspace>),
}

/// Physical parameters of the lane-keeping example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneParams {
    pub l1: f64,
    pub l2: f64,
    pub w: f64,
    pub v: f64,
    pub dt: f64,
    pub u_max_deg: f64,
    /// `d_min = (w − l2) / divisions`.
    pub divisions: u32,
}

impl Default for LaneParams {
    fn default() -> Self {
        Self { l1: 5.0, l2: 2.0, w: 3.5, v: 6.0, dt: 0.1, u_max_deg: 5.0, divisions: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
    pub d_min: f64,
    pub safe: SafeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<LaneParams>,
}

/// Scenario ready for synthesis.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Arc<GridSpec>,
    pub safe: BoxSet,
    pub control: ControlDomain,
}

impl Scenario {
    pub fn to_problem(&self) -> Result<Problem, ScenarioError> {
        let grid = Arc::new(GridSpec::new(self.state_lower.clone(), self.state_upper.clone(), self.d_min)?);
        let safe = match &self.safe {
            SafeSpec::Boxes(b) => quantize_boxes(grid.clone(), b)?,
            SafeSpec::Halfspaces(h) => {
                let hs: Vec<(Vec<f64>, f64)> = h.iter().map(|h| (h.normal.clone(), h.offset)).collect();
                quantize_safe_set(grid.clone(), &hs)?
            }
        };
        let control = ControlDomain::new(self.control_lower.clone(), self.control_upper.clone())?;
        Ok(Problem { grid, safe, control })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("grid or safe set: {0}")]
    Box(#[from] BoxError),
    #[error("control bounds: {0}")]
    Network(#[from] NetworkError),
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::parse(path, e))
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<(), IoError> {
    write(path, &s.to_json())
}

/// Lane-keeping scenario in the coordinates `(y, y + l1·θ)`, with the
/// small-angle kinematic model realized exactly as a ReLU network.
pub fn lane_keeping(p: &LaneParams) -> Result<(Scenario, Mlp), NetworkError> {
    let half = 0.5 * (p.w - p.l2);
    let span = p.w - p.l2;
    let c = p.v * p.dt / p.l1;
    let a = vec![vec![1.0 - c, c], vec![-c, 1.0 + c]];
    let bu = vec![vec![0.0], vec![p.v * p.dt]];
    let m = linear_to_mlp(&a, &bu, &[0.0, 0.0])?;
    let u_max = p.u_max_deg.to_radians();
    let scenario = Scenario {
        state_lower: vec![-span, -span],
        state_upper: vec![span, span],
        control_lower: vec![-u_max],
        control_upper: vec![u_max],
        d_min: span / p.divisions as f64,
        safe: SafeSpec::Boxes(vec![RealBox { lo: vec![-half, -half], hi: vec![half, half] }]),
        lane: Some(p.clone()),
    };
    Ok((scenario, m))
}

#[derive(Debug, Serialize, Deserialize)]
struct GridDoc {
    lower: Vec<f64>,
    upper: Vec<f64>,
    d_min: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryDoc {
    lo: Vec<i64>,
    hi: Vec<i64>,
    u: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AtlasDoc {
    format: String,
    version: u32,
    grid: GridDoc,
    control_lower: Vec<f64>,
    control_upper: Vec<f64>,
    iterations: usize,
    cells: u64,
    entries: Vec<EntryDoc>,
}

const ATLAS_FORMAT: &str = "cis-atlas";

pub fn atlas_to_json(atlas: &ControlAtlas) -> String {
    let g = atlas.grid();
    let doc = AtlasDoc {
        format: ATLAS_FORMAT.into(),
        version: 1,
        grid: GridDoc { lower: g.lower().to_vec(), upper: g.upper().to_vec(), d_min: g.d_min() },
        control_lower: atlas.control_domain().lower.clone(),
        control_upper: atlas.control_domain().upper.clone(),
        iterations: atlas.iterations(),
        cells: atlas.cis().cardinality(),
        entries: atlas
            .entries()
            .iter()
            .map(|(b, u)| EntryDoc { lo: b.lo.clone(), hi: b.hi.clone(), u: u.clone() })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("atlas serializes")
}

pub fn parse_atlas(text: &str, path: &Path) -> Result<ControlAtlas, IoError> {
    let doc: AtlasDoc = serde_json::from_str(text).map_err(|e| IoError::parse(path, e))?;
    if doc.format != ATLAS_FORMAT {
        return Err(IoError::field(path, "format", format!("expected \"{ATLAS_FORMAT}\", found \"{}\"", doc.format)));
    }
    if doc.version != 1 {
        return Err(IoError::field(path, "version", format!("unsupported version {}", doc.version)));
    }
    let grid =
        GridSpec::new(doc.grid.lower, doc.grid.upper, doc.grid.d_min).map_err(|e| IoError::field(path, "grid", e))?;
    let u = ControlDomain::new(doc.control_lower, doc.control_upper)
        .map_err(|e| IoError::field(path, "control_lower", e))?;
    let mut entries = Vec::with_capacity(doc.entries.len());
    for (i, e) in doc.entries.into_iter().enumerate() {
        let b = GridBox::new(e.lo, e.hi).map_err(|err| IoError::field(path, &format!("entries[{i}]"), err))?;
        if e.u.iter().any(|v| !v.is_finite()) {
            return Err(IoError::field(path, &format!("entries[{i}].u"), "non-finite control"));
        }
        entries.push((b, e.u));
    }
    let atlas = ControlAtlas::new(Arc::new(grid), entries, u, doc.iterations)
        .map_err(|e| IoError::field(path, "entries", e))?;
    if atlas.cis().cardinality() != doc.cells {
        return Err(IoError::field(
            path,
            "cells",
            format!("entries cover {} cells, header says {}", atlas.cis().cardinality(), doc.cells),
        ));
    }
    Ok(atlas)
}

pub fn save_atlas(atlas: &ControlAtlas, path: &Path) -> Result<(), IoError> {
    write(path, &atlas_to_json(atlas))
}

pub fn load_atlas(path: &Path) -> Result<ControlAtlas, IoError> {
    parse_atlas(&read(path)?, path)
}

pub fn trajectory_csv(t: &Trajectory) -> String {
    let n_x = t.states.first().map_or(0, Vec::len);
    let n_u = t.controls.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    header.extend((0..n_x).map(|j| format!("x{j}")));
    header.extend((0..n_u).map(|j| format!("u{j}")));
    header.extend(["feasible", "in_cis", "obj", "solve_ms", "nodes", "fallback"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    for (k, x) in t.states.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        match t.steps.get(k) {
            Some(s) => {
                rec.extend(t.controls[k].iter().map(|v| v.to_string()));
                rec.push(u8::from(s.feasible).to_string());
                rec.push(u8::from(s.in_cis).to_string());
                rec.push(s.objective.to_string());
                rec.push(format!("{:.3}", s.solve_time.as_secs_f64() * 1e3));
                rec.push(s.nodes.to_string());
                rec.push(u8::from(s.fallback).to_string());
            }
            // The final state has no control applied.
            None => rec.extend(std::iter::repeat(String::new()).take(n_u + 6)),
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn save_trajectory(t: &Trajectory, path: &Path) -> Result<(), IoError> {
    write(path, &trajectory_csv(t))
}

/// Reads `step,xr0..` rows.
pub fn parse_reference(text: &str, path: &Path) -> Result<ReferenceSchedule, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| IoError::parse(path, e))?.clone();
    if header.get(0) != Some("step") {
        return Err(IoError::field(path, "step", "first column must be `step`"));
    }
    for (j, h) in header.iter().skip(1).enumerate() {
        if h != format!("xr{j}") {
            return Err(IoError::field(path, h, format!("expected column `xr{j}`")));
        }
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::parse(path, e))?;
        let step: usize = rec[0].parse().map_err(|e| IoError::field(path, &format!("row {} step", i + 1), e))?;
        let mut xr = Vec::with_capacity(rec.len() - 1);
        for (j, v) in rec.iter().skip(1).enumerate() {
            xr.push(v.parse::<f64>().map_err(|e| IoError::field(path, &format!("row {} xr{j}", i + 1), e))?);
        }
        points.push((step, xr));
    }
    ReferenceSchedule::new(points).map_err(|e: MpcError| IoError::parse(path, e))
}

pub fn load_reference(path: &Path) -> Result<ReferenceSchedule, IoError> {
    parse_reference(&read(path)?, path)
}

pub fn reference_csv(r: &ReferenceSchedule) -> String {
    let mut out = String::from("step");
    for j in 0..r.dim() {
        out.push_str(&format!(",xr{j}"));
    }
    out.push('\n');
    for (k, x) in r.points() {
        out.push_str(&k.to_string());
        for v in x {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
