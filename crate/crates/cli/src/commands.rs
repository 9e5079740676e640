//! Subcommand implementations. Exit-code contract: 0 success, 2 bad
//! input (flags, files, config), 3 runtime failure, 4 audit violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use graphlite_core::apps::{build_program, load_dataset, make_dataset, AppSpec, DatasetKind};
use graphlite_core::coloring::{
    greedy_color, square_color, validate_coloring, ColorOrder, Coloring,
};
use graphlite_core::engine::{
    audit_run, machine_process_entry, render_metrics_csv, run_inproc, run_socket, EngineError,
    EngineKind, ExecLog, RunOptions, RunOutput,
};
use graphlite_core::partition::{build_atoms, meta_from_atoms, overpartition, place, Atom};
use graphlite_core::scheduler::SchedulerKind;
use graphlite_core::ConsistencyModel;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("audit violation: {0}")]
    Violation(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Violation(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "graphlite",
    version,
    about = "Graph-parallel engine: generate datasets, partition, color, \
             run update programs on 1..m logical machines, audit, report."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded dataset ({base}.tsv + {base}.json)
    Gen(GenArgs),
    /// Split a dataset into k reusable atom files
    Partition(PartitionArgs),
    /// Compute or check a vertex coloring
    Color(ColorArgs),
    /// Execute an update program and write run artifacts
    Run(Box<RunArgs>),
    /// Re-check a finished run against a sequential replay
    Audit(AuditArgs),
    /// Print a run's per-machine metrics
    Metrics(MetricsArgs),
    /// Internal: one machine process of a socket-transport run
    #[command(name = "__machine", hide = true)]
    Machine(MachineArgs),
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Color(a) => cmd_color(a),
        Command::Run(a) => cmd_run(*a),
        Command::Audit(a) => cmd_audit(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Machine(a) => cmd_machine(a),
    }
}

// ---------------------------------------------------------------- gen

#[derive(Args)]
struct GenArgs {
    /// Output path stem; writes {base}.tsv and {base}.json
    #[arg(long)]
    base: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    kind: GenKind,
}

#[derive(Subcommand)]
enum GenKind {
    /// Ring plus random chords, PageRank-ready
    PagerankRandom {
        #[arg(long)]
        n: u32,
        /// Chord probability per vertex pair
        #[arg(long)]
        p: f64,
    },
    /// Complete bipartite ratings with an exact low-rank structure
    AlsSynthetic {
        #[arg(long)]
        users: u32,
        #[arg(long)]
        movies: u32,
        #[arg(long)]
        rank: u32,
    },
    /// Fixed 4-vertex noun-phrase/context example
    CoemToy,
    /// Lattice MRF with seeded unary potentials
    GridMrf {
        #[arg(long)]
        rows: u32,
        #[arg(long)]
        cols: u32,
        #[arg(long, default_value_t = 3)]
        labels: u32,
    },
    /// Hub-and-spokes contended counter
    CounterStar {
        #[arg(long)]
        spokes: u32,
        #[arg(long)]
        rounds: u64,
    },
    /// Ring relay carrying one charge
    CounterRing {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        charge: u64,
    },
}

impl GenKind {
    fn dataset_kind(&self) -> DatasetKind {
        match *self {
            GenKind::PagerankRandom { n, p } => DatasetKind::PagerankRandom { n, p },
            GenKind::AlsSynthetic { users, movies, rank } => {
                DatasetKind::AlsSynthetic { n_users: users, n_movies: movies, rank }
            }
            GenKind::CoemToy => DatasetKind::CoemToy,
            GenKind::GridMrf { rows, cols, labels } => DatasetKind::GridMrf { rows, cols, labels },
            GenKind::CounterStar { spokes, rounds } => DatasetKind::CounterStar { spokes, rounds },
            GenKind::CounterRing { n, charge } => DatasetKind::CounterRing { n, charge },
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let meta = make_dataset(&args.kind.dataset_kind(), args.seed, &args.base)?;
    let (g, _) = load_dataset(&args.base)?;
    println!(
        "wrote {base}.tsv + {base}.json: {v} vertices, {e} edges, app {app}",
        base = args.base.display(),
        v = meta.vertex_count,
        e = g.edge_count(),
        app = meta.app.kind_name(),
    );
    Ok(())
}

// ---------------------------------------------------------- partition

#[derive(Args)]
struct PartitionArgs {
    /// Dataset path stem from `gen`
    #[arg(long)]
    data: PathBuf,
    /// Number of atoms; choose more atoms than machines
    #[arg(long)]
    parts: u32,
    /// Directory receiving atom-NNNN.bin files plus partition.json
    #[arg(long)]
    out: PathBuf,
    /// Embed a distance-2 coloring (full-scope chromatic runs)
    #[arg(long)]
    square: bool,
    /// Embed no coloring; the atoms then serve the locking engine only
    #[arg(long)]
    no_color: bool,
}

#[derive(Serialize, Deserialize)]
struct PartitionManifest {
    data: String,
    parts: u32,
    vertices: u32,
    num_colors: Option<u32>,
}

fn cmd_partition(args: PartitionArgs) -> Result<(), CliError> {
    if args.square && args.no_color {
        return Err(usage("--square and --no-color are mutually exclusive"));
    }
    let (g, _) = load_dataset(&args.data)?;
    let assignment = overpartition(&g, args.parts).map_err(|e| usage(e.to_string()))?;
    let coloring = if args.no_color {
        None
    } else if args.square {
        Some(square_color(&g))
    } else {
        Some(greedy_color(&g))
    };
    let atoms = build_atoms(&g, &assignment, args.parts, coloring.as_ref())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::create_dir_all(&args.out)?;
    for atom in &atoms {
        atom.write_to(&args.out.join(Atom::file_name(atom.part)))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let manifest = PartitionManifest {
        data: args.data.display().to_string(),
        parts: args.parts,
        vertices: g.vertex_count(),
        num_colors: coloring.as_ref().map(Coloring::num_colors),
    };
    fs::write(
        args.out.join("partition.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    match manifest.num_colors {
        Some(c) => println!(
            "wrote {} atoms ({} vertices, {} colors) to {}",
            args.parts,
            g.vertex_count(),
            c,
            args.out.display()
        ),
        None => println!(
            "wrote {} uncolored atoms ({} vertices) to {}",
            args.parts,
            g.vertex_count(),
            args.out.display()
        ),
    }
    Ok(())
}

// -------------------------------------------------------------- color

#[derive(Args)]
struct ColorArgs {
    /// Dataset path stem from `gen`
    #[arg(long)]
    data: PathBuf,
    /// Color the square graph (no two vertices within two hops share)
    #[arg(long)]
    square: bool,
    /// Write the computed coloring here, one color per line
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate this coloring file instead of computing one
    #[arg(long)]
    check: Option<PathBuf>,
}

fn cmd_color(args: ColorArgs) -> Result<(), CliError> {
    let (g, _) = load_dataset(&args.data)?;
    let order = if args.square { ColorOrder::Second } else { ColorOrder::First };
    if let Some(path) = args.check {
        let text = fs::read_to_string(&path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let coloring = Coloring::parse(&text).map_err(|e| usage(e.to_string()))?;
        validate_coloring(&g, &coloring, order).map_err(|e| usage(e.to_string()))?;
        println!("{} is a valid coloring ({} colors)", path.display(), coloring.num_colors());
        return Ok(());
    }
    let coloring = if args.square { square_color(&g) } else { greedy_color(&g) };
    validate_coloring(&g, &coloring, order)
        .map_err(|e| CliError::Runtime(format!("computed coloring failed its own check: {e}")))?;
    if let Some(out) = &args.out {
        fs::write(out, coloring.render())?;
    }
    println!("{} colors for {} vertices", coloring.num_colors(), g.vertex_count());
    Ok(())
}

// ---------------------------------------------------------------- run

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Chromatic,
    Locking,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Full,
    Edge,
    Vertex,
    None,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchedulerArg {
    Sweep,
    Fifo,
    Priority,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    Inproc,
    Socket,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset path stem from `gen`
    #[arg(long)]
    data: PathBuf,
    /// Run directory for all artifacts
    #[arg(long)]
    out: PathBuf,
    /// Sanity check: must equal the app the dataset was generated for
    #[arg(long)]
    app: Option<String>,
    #[arg(long, value_enum)]
    engine: EngineArg,
    #[arg(long, value_enum, default_value_t = ModelArg::Edge)]
    model: ModelArg,
    /// Acknowledge that model=none permits data races
    #[arg(long = "unsafe")]
    unsafe_races: bool,
    #[arg(long, default_value_t = 1)]
    machines: u32,
    /// Compute slots per machine
    #[arg(long, default_value_t = 1)]
    workers: u32,
    /// Defaults to sweep for chromatic, fifo for locking
    #[arg(long, value_enum)]
    scheduler: Option<SchedulerArg>,
    /// Locking engine: in-flight scope acquisitions per machine (0 = one
    /// per worker)
    #[arg(long, default_value_t = 0)]
    maxpending: u32,
    /// Chromatic engine: stop after this many sweeps (0 = run dry)
    #[arg(long, default_value_t = 0)]
    max_sweeps: u32,
    /// Stop once this many updates committed (0 = unlimited)
    #[arg(long, default_value_t = 0)]
    max_updates: u64,
    /// Overridden by the GRAPHLITE_SEED environment variable
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TransportArg::Inproc)]
    transport: TransportArg,
    /// Reuse a prebuilt atom directory instead of partitioning here
    #[arg(long)]
    atoms: Option<PathBuf>,
    /// Atom count when partitioning here (default: max(4, 2*machines))
    #[arg(long)]
    parts: Option<u32>,
    /// Coloring file for chromatic runs; defaults to auto-coloring
    #[arg(long)]
    coloring: Option<PathBuf>,
    /// In-process transport: byte-compare ghosts at every barrier
    #[arg(long)]
    verify_ghosts: bool,
}

/// Everything `audit` needs to rebuild the run's inputs, persisted as
/// config.json in the run directory.
#[derive(Serialize, Deserialize)]
struct RunConfigFile {
    data: String,
    app: AppSpec,
    transport: String,
    parts: u32,
    atoms: Option<String>,
    coloring: String,
    opts: RunOptions,
}

fn resolve_seed(flag: u64, env_value: Option<&str>) -> Result<u64, CliError> {
    match env_value {
        None => Ok(flag),
        Some(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| usage(format!("GRAPHLITE_SEED must be an unsigned integer, got '{s}'"))),
    }
}

/// Reads atom-0000.bin.. from a directory, checking the set is complete
/// and self-consistent.
fn read_atoms_dir(dir: &Path) -> Result<Vec<Atom>, CliError> {
    let mut atoms = Vec::new();
    loop {
        let path = dir.join(Atom::file_name(atoms.len() as u32));
        if !path.exists() {
            break;
        }
        let atom = Atom::read_from(&path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if atom.part != atoms.len() as u32 {
            return Err(usage(format!(
                "{} claims part {}, expected {}",
                path.display(),
                atom.part,
                atoms.len()
            )));
        }
        atoms.push(atom);
    }
    if atoms.is_empty() {
        return Err(usage(format!("no atom files under {}", dir.display())));
    }
    let k = atoms.len() as u32;
    if atoms.iter().any(|a| a.part_count != k) {
        return Err(usage(format!("atom set under {} is incomplete: found {k} files", dir.display())));
    }
    Ok(atoms)
}

/// The per-vertex colors embedded in an atom set, as one full coloring.
fn embedded_coloring(atoms: &[Atom], vertex_count: u32) -> Coloring {
    let mut colors = vec![0u32; vertex_count as usize];
    for atom in atoms {
        for v in &atom.owned {
            colors[v.id.0 as usize] = v.color;
        }
    }
    Coloring::new(colors)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (g, dataset) = load_dataset(&args.data)?;
    let app = dataset.app.clone();
    if let Some(name) = &args.app {
        if name != app.kind_name() {
            return Err(usage(format!(
                "dataset {} was generated for app '{}', not '{name}'",
                args.data.display(),
                app.kind_name()
            )));
        }
    }

    let engine = match args.engine {
        EngineArg::Chromatic => EngineKind::Chromatic,
        EngineArg::Locking => EngineKind::Locking,
    };
    let model = match args.model {
        ModelArg::Full => ConsistencyModel::Full,
        ModelArg::Edge => ConsistencyModel::Edge,
        ModelArg::Vertex => ConsistencyModel::Vertex,
        ModelArg::None => ConsistencyModel::None,
    };
    if model == ConsistencyModel::None && !args.unsafe_races {
        return Err(usage(
            "model=none runs without locks and permits data races; pass --unsafe to proceed",
        ));
    }
    let scheduler = match (args.scheduler, engine) {
        (Some(SchedulerArg::Sweep), EngineKind::Chromatic) => SchedulerKind::Sweep,
        (Some(s), EngineKind::Locking) if s != SchedulerArg::Sweep => match s {
            SchedulerArg::Fifo => SchedulerKind::Fifo,
            SchedulerArg::Priority => SchedulerKind::Priority,
            SchedulerArg::Sweep => unreachable!(),
        },
        (None, EngineKind::Chromatic) => SchedulerKind::Sweep,
        (None, EngineKind::Locking) => SchedulerKind::Fifo,
        (Some(_), EngineKind::Chromatic) => {
            return Err(usage("the chromatic engine schedules by color sweep only"))
        }
        (Some(_), EngineKind::Locking) => {
            return Err(usage("the locking engine needs --scheduler fifo or priority"))
        }
    };
    if args.verify_ghosts && args.transport == TransportArg::Socket {
        return Err(usage("--verify-ghosts is only available on the inproc transport"));
    }
    if args.machines == 0 || args.workers == 0 {
        return Err(usage("--machines and --workers must be at least 1"));
    }

    let seed = resolve_seed(args.seed, std::env::var("GRAPHLITE_SEED").ok().as_deref())?;
    let opts = RunOptions {
        engine,
        model,
        machines: args.machines,
        workers: args.workers,
        scheduler,
        maxpending: args.maxpending,
        max_sweeps: args.max_sweeps,
        max_updates: args.max_updates,
        seed,
        verify_ghosts: args.verify_ghosts,
    };

    // Atoms: reuse a prebuilt set, or cut the graph here and now.
    let (atoms, repartitioned, coloring_source) = match &args.atoms {
        Some(dir) => {
            let atoms = read_atoms_dir(dir)?;
            if atoms.iter().map(|a| a.owned.len()).sum::<usize>() != g.vertex_count() as usize {
                return Err(usage(format!(
                    "atom set under {} does not cover dataset {}",
                    dir.display(),
                    args.data.display()
                )));
            }
            if args.coloring.is_some() {
                return Err(usage("--coloring cannot override the colors embedded in --atoms"));
            }
            (atoms, false, format!("atoms:{}", dir.display()))
        }
        None => {
            let parts = args.parts.unwrap_or((2 * args.machines).max(4));
            let assignment = overpartition(&g, parts).map_err(|e| usage(e.to_string()))?;
            let order = if model == ConsistencyModel::Full {
                ColorOrder::Second
            } else {
                ColorOrder::First
            };
            let (coloring, source) = match (&args.coloring, engine) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    let c = Coloring::parse(&text).map_err(|e| usage(e.to_string()))?;
                    validate_coloring(&g, &c, order).map_err(|e| usage(e.to_string()))?;
                    (Some(c), format!("file:{}", path.display()))
                }
                (None, EngineKind::Chromatic) => {
                    let c = if order == ColorOrder::Second {
                        square_color(&g)
                    } else {
                        greedy_color(&g)
                    };
                    (Some(c), "auto".to_string())
                }
                (None, EngineKind::Locking) => (None, "none".to_string()),
            };
            let atoms = build_atoms(&g, &assignment, parts, coloring.as_ref())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            (atoms, true, source)
        }
    };
    if engine == EngineKind::Chromatic {
        // Whatever their origin, the colors the run will use must be proper.
        let order =
            if model == ConsistencyModel::Full { ColorOrder::Second } else { ColorOrder::First };
        validate_coloring(&g, &embedded_coloring(&atoms, g.vertex_count()), order)
            .map_err(|e| usage(format!("chromatic run needs a valid coloring: {e}")))?;
    }

    let meta = meta_from_atoms(&atoms).map_err(|e| usage(e.to_string()))?;
    let placement = place(&meta, args.machines).map_err(|e| usage(e.to_string()))?;

    fs::create_dir_all(&args.out)?;
    let mut output: RunOutput = match args.transport {
        TransportArg::Inproc => {
            let (program, initial) = build_program(&app)?;
            run_inproc(&opts, Arc::new(program), &atoms, &placement, &initial)?
        }
        TransportArg::Socket => {
            let atoms_dir = match &args.atoms {
                Some(dir) => dir.clone(),
                None => {
                    let dir = args.out.join("atoms");
                    fs::create_dir_all(&dir)?;
                    for atom in &atoms {
                        atom.write_to(&dir.join(Atom::file_name(atom.part)))
                            .map_err(|e| CliError::Runtime(e.to_string()))?;
                    }
                    dir
                }
            };
            let exe = std::env::current_exe()?;
            let app_json = serde_json::to_value(&app).expect("app spec serializes");
            let workdir = args.out.join("work");
            fs::create_dir_all(&workdir)?;
            run_socket(&opts, &app_json, &atoms_dir, &placement, &exe, &workdir)?
        }
    };
    output.summary.repartitioned = repartitioned;

    let config = RunConfigFile {
        data: args.data.display().to_string(),
        app,
        transport: match args.transport {
            TransportArg::Inproc => "inproc".to_string(),
            TransportArg::Socket => "socket".to_string(),
        },
        parts: atoms.len() as u32,
        atoms: args.atoms.as_ref().map(|d| d.display().to_string()),
        coloring: coloring_source,
        opts,
    };
    write_artifacts(&args.out, &config, &output)?;

    let s = &output.summary;
    println!(
        "ok: {} updates, {} sweeps, {} envelopes, {} push bytes, {} ms; artifacts in {}",
        s.updates,
        s.sweeps,
        s.envelopes_sent,
        s.push_bytes,
        s.wall_ms,
        args.out.display()
    );
    Ok(())
}

fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn write_artifacts(out: &Path, config: &RunConfigFile, output: &RunOutput) -> Result<(), CliError> {
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(config).expect("config serializes") + "\n",
    )?;
    fs::write(out.join("final_data.bin"), output.final_data.to_bytes())?;
    let hexed: std::collections::BTreeMap<&String, Vec<String>> = output
        .sync_results
        .iter()
        .map(|(k, firings)| (k, firings.iter().map(|v| to_hex(v)).collect()))
        .collect();
    fs::write(
        out.join("sync_results.json"),
        serde_json::to_string_pretty(&hexed).expect("sync results serialize") + "\n",
    )?;
    fs::write(out.join("exec_log.ndjson"), output.log.to_ndjson())?;
    fs::write(out.join("metrics.csv"), render_metrics_csv(&output.metrics))?;
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&output.summary).expect("summary serializes") + "\n",
    )?;
    Ok(())
}

// -------------------------------------------------------------- audit

#[derive(Args)]
struct AuditArgs {
    /// Run directory written by `run`
    #[arg(long)]
    run: PathBuf,
    /// Dataset path stem; defaults to the one recorded in config.json
    #[arg(long)]
    data: Option<PathBuf>,
}

fn read_artifact(dir: &Path, name: &str) -> Result<Vec<u8>, CliError> {
    fs::read(dir.join(name)).map_err(|e| usage(format!("{}/{name}: {e}", dir.display())))
}

fn cmd_audit(args: AuditArgs) -> Result<(), CliError> {
    let config_bytes = read_artifact(&args.run, "config.json")?;
    let config: RunConfigFile = serde_json::from_slice(&config_bytes)
        .map_err(|e| usage(format!("config.json: {e}")))?;
    let data = args.data.clone().unwrap_or_else(|| PathBuf::from(&config.data));
    let (g, _) = load_dataset(&data)?;
    let final_bytes = read_artifact(&args.run, "final_data.bin")?;
    let final_data = graphlite_core::partition::FinalData::from_bytes(&final_bytes)
        .map_err(|e| usage(format!("final_data.bin: {e}")))?;
    let log_text = String::from_utf8(read_artifact(&args.run, "exec_log.ndjson")?)
        .map_err(|e| usage(format!("exec_log.ndjson: {e}")))?;
    let log = ExecLog::from_ndjson(&log_text)
        .map_err(|e| usage(format!("exec_log.ndjson: {e}")))?;
    let (program, _) = build_program(&config.app)?;

    match audit_run(&program, &g, config.opts.model, &log, &final_data) {
        Ok(report) => {
            println!(
                "audit passed: {} commits and {} sync firings replayed identically \
                 across {} lock grants",
                report.commits, report.sync_fires, report.grants
            );
            Ok(())
        }
        Err(e) => Err(CliError::Violation(e.to_string())),
    }
}

// ------------------------------------------------------------ metrics

#[derive(Args)]
struct MetricsArgs {
    /// Run directory written by `run`
    #[arg(long)]
    run: PathBuf,
    /// Print the whole-run summary JSON instead of the per-machine CSV
    #[arg(long)]
    summary: bool,
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), CliError> {
    let name = if args.summary { "summary.json" } else { "metrics.csv" };
    let bytes = read_artifact(&args.run, name)?;
    let text =
        String::from_utf8(bytes).map_err(|e| usage(format!("{name} is not text: {e}")))?;
    print!("{text}");
    Ok(())
}

// ------------------------------------------------------------ machine

#[derive(Args)]
struct MachineArgs {
    /// Machine spec written by the parent orchestrator
    #[arg(long)]
    spec: PathBuf,
}

fn cmd_machine(args: MachineArgs) -> Result<(), CliError> {
    machine_process_entry(&args.spec, |app_json| {
        let spec: AppSpec = serde_json::from_value(app_json.clone())
            .map_err(|e| EngineError::Config(format!("app spec: {e}")))?;
        build_program(&spec)
    })?;
    Ok(())
}
