//! Whole-run invariants of the bundled applications: conservation,
//! monotonicity, and schedule-independence properties that only show up
//! when an engine drives the update functions end to end.

use std::sync::Arc;

use graphlite_core::apps::{
    als, build_program, lbp, load_dataset, make_dataset, pagerank, AppSpec, DatasetKind,
};
use graphlite_core::coloring::greedy_color;
use graphlite_core::engine::{run_inproc, EngineKind, RunOptions, RunOutput};
use graphlite_core::graph::DataGraph;
use graphlite_core::partition::{build_atoms, meta_from_atoms, overpartition, place, Atom, FinalData};
use graphlite_core::scheduler::SchedulerKind;
use graphlite_core::ConsistencyModel;

fn opts(engine: EngineKind, scheduler: SchedulerKind, max_sweeps: u32) -> RunOptions {
    RunOptions {
        engine,
        model: ConsistencyModel::Edge,
        machines: 2,
        workers: 4,
        scheduler,
        maxpending: 0,
        max_sweeps,
        max_updates: 0,
        seed: 5,
        verify_ghosts: false,
    }
}

fn cut(g: &DataGraph, parts: u32) -> Vec<Atom> {
    let assignment = overpartition(g, parts).expect("partitionable");
    let coloring = greedy_color(g);
    build_atoms(g, &assignment, parts, Some(&coloring)).expect("atoms build")
}

fn run(o: &RunOptions, app: &AppSpec, atoms: &[Atom]) -> RunOutput {
    let meta = meta_from_atoms(atoms).expect("meta graph");
    let placement = place(&meta, o.machines).expect("placement");
    let (program, initial) = build_program(app).expect("program builds");
    run_inproc(o, Arc::new(program), atoms, &placement, &initial).expect("run completes")
}

#[test]
fn converged_ranks_conserve_total_mass() {
    let dir = tempfile::tempdir().expect("tempdir");
    let base = dir.path().join("pr");
    make_dataset(&DatasetKind::PagerankRandom { n: 120, p: 0.05 }, 4, &base).expect("gen");
    let (g, _) = load_dataset(&base).expect("load");
    let atoms = cut(&g, 4);

    let app = AppSpec::Pagerank { alpha: 0.15, eps: 1e-9, tau: 1_000_000_000 };
    let out = run(&opts(EngineKind::Chromatic, SchedulerKind::Sweep, 0), &app, &atoms);

    let mass: f64 = out
        .final_data
        .vdata
        .iter()
        .map(|d| pagerank::decode_rank(&d.bytes).expect("rank"))
        .sum();
    assert!(
        (mass - 1.0).abs() <= 1e-6,
        "rank mass {mass} drifted from 1 by {:e}",
        (mass - 1.0).abs()
    );
}

/// The regularized squared error the latent refits minimize, recomputed
/// directly from a run's assembled output.
fn als_objective(data: &FinalData, lambda: f64) -> f64 {
    let latents: Vec<Vec<f64>> = data
        .vdata
        .iter()
        .map(|d| als::decode_latent(&d.bytes).expect("latent").1)
        .collect();
    let mut obj = 0.0;
    for (key, slots) in &data.edges {
        let rating = pagerank::decode_rank(&slots[0].bytes).expect("rating");
        let predicted: f64 = latents[key.lo.0 as usize]
            .iter()
            .zip(&latents[key.hi.0 as usize])
            .map(|(a, b)| a * b)
            .sum();
        obj += (rating - predicted) * (rating - predicted);
    }
    for x in &latents {
        obj += lambda * x.iter().map(|a| a * a).sum::<f64>();
    }
    obj
}

#[test]
fn alternating_refits_never_increase_the_objective() {
    let dir = tempfile::tempdir().expect("tempdir");
    let base = dir.path().join("als");
    make_dataset(&DatasetKind::AlsSynthetic { n_users: 8, n_movies: 10, rank: 2 }, 5, &base)
        .expect("gen");
    let (g, _) = load_dataset(&base).expect("load");
    let atoms = cut(&g, 4);

    let lambda = 0.1;
    let app = AppSpec::Als { d: 2, lambda, eps: 1e-12 };
    // Color-stepped runs are deterministic, so the k-sweep run replays the
    // first k sweeps of the (k+1)-sweep run; the objective sequence across
    // run lengths is the per-sweep trajectory of one long run.
    let mut previous = f64::INFINITY;
    for sweeps in 1..=6 {
        let out = run(&opts(EngineKind::Chromatic, SchedulerKind::Sweep, sweeps), &app, &atoms);
        let obj = als_objective(&out.final_data, lambda);
        assert!(
            obj <= previous + 1e-9,
            "objective rose from {previous} to {obj} at sweep {sweeps}"
        );
        previous = obj;
    }
}

#[test]
fn priority_and_sweep_orders_settle_on_the_same_beliefs() {
    let dir = tempfile::tempdir().expect("tempdir");
    let base = dir.path().join("mrf");
    make_dataset(&DatasetKind::GridMrf { rows: 4, cols: 4, labels: 3 }, 9, &base).expect("gen");
    let (g, _) = load_dataset(&base).expect("load");
    let atoms = cut(&g, 4);

    let app = AppSpec::Lbp { eps: 1e-9 };
    let swept = run(&opts(EngineKind::Chromatic, SchedulerKind::Sweep, 0), &app, &atoms);
    let prioritized = run(&opts(EngineKind::Locking, SchedulerKind::Priority, 0), &app, &atoms);

    let mut worst = 0.0f64;
    for (a, b) in swept.final_data.vdata.iter().zip(&prioritized.final_data.vdata) {
        let (_, swept_belief) = lbp::decode_vertex(&a.bytes).expect("belief");
        let (_, prioritized_belief) = lbp::decode_vertex(&b.bytes).expect("belief");
        for (x, y) in swept_belief.iter().zip(&prioritized_belief) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-6, "schedules disagree by {worst:e}");
}
