use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cisynth::encode::ReturnObjective;
use cisynth::io::{self, LaneParams};
use cisynth::mpc::{simulate, MpcConfig, MpcVariant, ReferenceSchedule};
use cisynth::network::{load_mlp, save_mlp, Mlp};
use cisynth::synth::{
    certify, rollout_check, synthesize_cis, termination_bound, ControlAtlas, SynthOptions, SynthStatus,
};

const EXIT_EMPTY: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;

#[derive(Parser)]
#[command(name = "cisynth", version, about = "Control invariant sets and constrained MPC for ReLU network dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Feasibility,
    L1Center,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    FirstStep,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an invariant set and its control atlas.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Verification workers (defaults to available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write the candidate sets of every iteration to `<out>.history.json`.
        #[arg(long)]
        history: bool,
        #[arg(long, value_enum, default_value = "feasibility")]
        objective: Objective,
    },
    /// Closed-loop MPC simulation inside a synthesized set.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cis: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        steps: usize,
        /// Reference table `step,xr0,..`; defaults to the origin.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "first-step")]
        variant: Variant,
        #[arg(long, default_value_t = 5)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_warm_start: bool,
        /// State weight per coordinate (a single value is broadcast).
        #[arg(long, default_value = "2")]
        q: String,
        #[arg(long, default_value = "1")]
        r: String,
        /// Terminal weight; defaults to `q`.
        #[arg(long)]
        qn: Option<String>,
    },
    /// Re-check an atlas with interval reachability and closed-loop rollouts.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cis: PathBuf,
        /// Random states in the set whose successor is checked.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Rollout length from every cell center.
        #[arg(long, default_value_t = 500)]
        rollout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the lane-keeping scenario and its exact linear network.
    LaneKeeping {
        /// `scenario`, `model` or `scenario+model`.
        #[arg(long, default_value = "scenario+model")]
        emit: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        l1: f64,
        #[arg(long, default_value_t = 2.0)]
        l2: f64,
        #[arg(long, default_value_t = 3.5)]
        w: f64,
        #[arg(long, default_value_t = 6.0)]
        v: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 5.0)]
        u_max_deg: f64,
        #[arg(long, default_value_t = 32)]
        divisions: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Synth { model, scenario, out, jobs, history, objective } => {
            synth(&model, &scenario, &out, jobs, history, objective)
        }
        Command::Simulate { model, cis, x0, steps, reference, variant, horizon, out, no_warm_start, q, r, qn } => {
            let m = load_model(&model)?;
            let atlas = io::load_atlas(&cis)?;
            let x0 = parse_vec(&x0, m.n_x(), "--x0")?;
            let q = parse_vec(&q, m.n_x(), "--q")?;
            let qn = match qn {
                Some(s) => parse_vec(&s, m.n_x(), "--qn")?,
                None => q.clone(),
            };
            let reference = match reference {
                Some(p) => io::load_reference(&p)?,
                None => ReferenceSchedule::constant(vec![0.0; m.n_x()]),
            };
            let cfg = MpcConfig {
                horizon,
                q,
                r: parse_vec(&r, m.n_u(), "--r")?,
                q_terminal: qn,
                variant: match variant {
                    Variant::FirstStep => MpcVariant::FirstStep,
                    Variant::Full => MpcVariant::Full,
                },
                reference,
                use_warm_start: !no_warm_start,
                ..MpcConfig::uniform(m.n_x(), m.n_u(), horizon, 0.0, 0.0)
            };
            if !atlas.contains(&x0) {
                bail!("x0 {x0:?} lies outside the invariant set in {}", cis.display());
            }
            let traj = simulate(&m, &atlas, &cfg, &x0, steps)?;
            io::save_trajectory(&traj, &out)?;
            eprintln!(
                "steps={} infeasible={} fallbacks={} exits={} mean_solve_ms={:.3}",
                traj.steps.len(),
                traj.infeasible_steps(),
                traj.fallbacks(),
                traj.exits(),
                traj.mean_solve_time().as_secs_f64() * 1e3
            );
            let clean = traj.infeasible_steps() == 0 && traj.fallbacks() == 0 && traj.exits() == 0;
            Ok(if clean { 0 } else { EXIT_CERTIFICATE })
        }
        Command::Verify { model, cis, samples, rollout, seed } => {
            let m = load_model(&model)?;
            let atlas = io::load_atlas(&cis)?;
            verify(&m, &atlas, samples, rollout, seed)
        }
        Command::LaneKeeping { emit, out_dir, l1, l2, w, v, dt, u_max_deg, divisions } => {
            let params = LaneParams { l1, l2, w, v, dt, u_max_deg, divisions };
            let (scenario, m) = io::lane_keeping(&params)?;
            let parts: Vec<&str> = emit.split('+').collect();
            if parts.is_empty() || parts.iter().any(|p| !matches!(*p, "scenario" | "model")) {
                bail!("--emit expects `scenario`, `model` or `scenario+model`, got `{emit}`");
            }
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            if parts.contains(&"scenario") {
                let p = out_dir.join("scenario.json");
                io::save_scenario(&scenario, &p)?;
                let problem = scenario.to_problem()?;
                eprintln!(
                    "wrote {} (safe cells {}, N_T {})",
                    p.display(),
                    problem.safe.cardinality(),
                    termination_bound(&problem.safe)
                );
            }
            if parts.contains(&"model") {
                let p = out_dir.join("model.json");
                save_mlp(&m, &p)?;
                eprintln!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}

fn load_model(path: &Path) -> Result<Mlp> {
    load_mlp(path).with_context(|| format!("model {}", path.display()))
}

fn parse_vec(s: &str, n: usize, flag: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("{flag}: `{t}`: {e}")))
        .collect::<Result<_>>()?;
    match v.len() {
        1 if n > 1 => Ok(vec![v[0]; n]),
        k if k == n => Ok(v),
        k => bail!("{flag}: expected {n} values, got {k}"),
    }
}

fn synth(
    model: &Path,
    scenario: &Path,
    out: &Path,
    jobs: Option<usize>,
    history: bool,
    objective: Objective,
) -> Result<u8> {
    let m = load_model(model)?;
    let problem = io::load_scenario(scenario)?.to_problem().with_context(|| format!("{}", scenario.display()))?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let opts = SynthOptions {
        jobs,
        objective: match objective {
            Objective::Feasibility => ReturnObjective::Feasibility,
            Objective::L1Center => ReturnObjective::L1Center,
        },
        keep_history: history,
        ..SynthOptions::default()
    };
    let bound = termination_bound(&problem.safe);
    let start = Instant::now();
    let atlas = synthesize_cis(&m, &problem.safe, &problem.control, &opts, |s| {
        eprintln!(
            "iter={} |Δ|={} verified={} partitioned={} discarded={}",
            s.iteration, s.cells, s.verified, s.partitioned, s.discarded
        );
    })?;
    io::save_atlas(&atlas, out)?;
    if let Some(h) = atlas.history() {
        let sets: Vec<Vec<u64>> = h.iter().map(|s| s.basis_indices()).collect();
        let p = out.with_extension("history.json");
        std::fs::write(&p, serde_json_lines(&sets)).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!(
        "cells={} boxes={} iterations={} bound={} elapsed={:.2}s",
        atlas.cis().cardinality(),
        atlas.entries().len(),
        atlas.iterations(),
        bound,
        start.elapsed().as_secs_f64()
    );
    Ok(match atlas.status() {
        SynthStatus::Invariant => 0,
        SynthStatus::Empty => EXIT_EMPTY,
    })
}

fn serde_json_lines(sets: &[Vec<u64>]) -> String {
    let rows: Vec<String> =
        sets.iter().map(|s| format!("[{}]", s.iter().map(u64::to_string).collect::<Vec<_>>().join(","))).collect();
    format!("[\n{}\n]\n", rows.join(",\n"))
}

fn verify(m: &Mlp, atlas: &ControlAtlas, samples: usize, rollout: usize, seed: u64) -> Result<u8> {
    let cert = certify(m, atlas)?;
    eprintln!(
        "boxes={} containment_failures={} exact_cover={}",
        cert.boxes_checked,
        cert.failures.len(),
        cert.exact_cover
    );
    for b in cert.failures.iter().take(10) {
        eprintln!("  failing box lo={:?} hi={:?}", b.lo, b.hi);
    }
    let rolls = rollout_check(m, atlas, rollout)?;
    eprintln!("rollouts={} steps={} exits={}", rolls.starts, rolls.steps, rolls.exits.len());
    let mut bad_samples = 0;
    if samples > 0 && !atlas.cis().is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes = atlas.cis().real_boxes();
        let weights: Vec<u64> = atlas.cis().boxes().iter().map(|b| b.volume()).collect();
        let total: u64 = weights.iter().sum();
        for _ in 0..samples {
            let mut pick = rng.gen_range(0..total);
            let mut i = 0;
            while pick >= weights[i] {
                pick -= weights[i];
                i += 1;
            }
            let x: Vec<f64> = (0..boxes[i].dim()).map(|j| rng.gen_range(boxes[i].lo[j]..=boxes[i].hi[j])).collect();
            let ok = match atlas.control(&x) {
                Ok(u) => atlas.contains(&m.forward(&x, &u)?),
                Err(_) => false,
            };
            if !ok {
                bad_samples += 1;
            }
        }
        eprintln!("samples={samples} failures={bad_samples}");
    }
    let pass = cert.passed() && rolls.exits.is_empty() && bad_samples == 0;
    println!("{}", if pass { "certificate: pass" } else { "certificate: FAIL" });
    Ok(if pass { 0 } else { EXIT_CERTIFICATE })
}
