use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cisynth::boxes::{BoxSet, GridBox};
use cisynth::io::{lane_keeping, LaneParams};
use cisynth::network::{ControlDomain, Mlp};
use cisynth::synth::{returnable_verification, synthesize_cis, SynthOptions};

fn lane(divisions: u32) -> (Mlp, BoxSet, ControlDomain) {
    let (s, m) = lane_keeping(&LaneParams { divisions, ..LaneParams::default() }).unwrap();
    let p = s.to_problem().unwrap();
    (m, p.safe, p.control)
}

// Jobs above 1 only differ from the sequential path when the parallel
// feature is on.
const JOBS: [usize; 3] = [1, 2, 4];

fn cell_verification(c: &mut Criterion) {
    let (m, safe, u) = lane(32);
    let cells: Vec<GridBox> = safe.boxes().iter().flat_map(|b| b.cells()).map(|lo| GridBox::cell(&lo)).collect();
    let mut g = c.benchmark_group("verify_cells_lane32");
    g.sample_size(10);
    for jobs in JOBS {
        let opts = SynthOptions { jobs, ..SynthOptions::default() };
        g.bench_with_input(BenchmarkId::from_parameter(jobs), &opts, |bch, opts| {
            bch.iter(|| returnable_verification(&m, &cells, &safe, &u, opts).unwrap())
        });
    }
    g.finish();
}

fn synthesis(c: &mut Criterion) {
    let (m, safe, u) = lane(16);
    let mut g = c.benchmark_group("synthesize_lane16");
    g.sample_size(10);
    for jobs in JOBS {
        let opts = SynthOptions { jobs, ..SynthOptions::default() };
        g.bench_with_input(BenchmarkId::from_parameter(jobs), &opts, |bch, opts| {
            bch.iter(|| synthesize_cis(&m, &safe, &u, opts, |_| {}).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, cell_verification, synthesis);
criterion_main!(benches);
