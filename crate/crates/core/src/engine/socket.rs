//! Multi-process driver: one OS process per machine, exchanging the same
//! envelopes over a TCP mesh, with a real worker-thread pool per machine.
//! The parent process spawns `exe __machine --spec <spec.json>` per
//! machine, brokers the port rendezvous over the children's stdio, then
//! collects each child's stats, log, and owned-data fragment and assembles
//! the same run output the in-process driver produces.
//!
//! Rendezvous: each child binds an ephemeral port and prints
//! `PORT <me> <port>`; once every line is in, the parent writes
//! `PORTS <p0> <p1> ...` to every child's stdin. Lower-numbered machines
//! connect to higher-numbered listeners' ports... more precisely, machine
//! `i` dials every peer below it and accepts from every peer above it,
//! opening each dialed connection with its own id so the accepter knows
//! who called. Every connection is used in both directions.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bytes::{put_bytes, put_u32, put_u64, DecodeError, Reader};
use crate::comm::{CommCounters, Envelope};
use crate::graph::{Datum, DatumId, Direction, EdgeKey, VertexId};
use crate::partition::{load_local, Atom, FinalData, LocalGraph};

use super::log::LogRecord;
use super::sim::assemble_output;
use super::{
    new_core, run_update, Effects, EngineError, Event, InitialTasks, JobOutcome, MachineExport,
    Program, RunOptions, RunOutput, UpdateError,
};

/// Upper bound on one envelope frame; anything bigger is a corrupt stream.
const MAX_FRAME: usize = 256 << 20;

/// How long the parent lets the machine processes run before declaring the
/// run wedged and killing them.
const RUN_TIMEOUT: Duration = Duration::from_secs(300);

/// Everything one machine process needs, written as JSON next to the run
/// artifacts. The `app` value is opaque here; the binary that calls
/// `machine_process_entry` knows how to build a program from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MachineProcessArgs {
    pub me: u32,
    pub opts: RunOptions,
    pub app: serde_json::Value,
    pub atoms_dir: PathBuf,
    pub placement: Vec<u32>,
    /// Where this machine writes its stats + log.
    pub out_json: PathBuf,
    /// Where this machine writes its owned-data fragment.
    pub out_bin: PathBuf,
}

/// What a machine process leaves behind in `out_json`.
#[derive(Debug, Serialize, Deserialize)]
struct MachineReport {
    machine: u32,
    sent: u64,
    received: u64,
    updates: u64,
    modifications: u64,
    publications: u64,
    push_bytes: u64,
    syncs_run: u64,
    sweeps: u32,
    max_in_flight: u32,
    wall_ms: u64,
    sync_results: BTreeMap<String, Vec<Vec<u8>>>,
    log: Vec<LogRecord>,
}

/// Runs one graph program across `opts.machines` OS processes. `exe` is the
/// binary to spawn (normally the current one); it must run
/// `machine_process_entry` when invoked as `exe __machine --spec <path>`.
/// `app` is handed through to each child's program builder.
pub fn run_socket(
    opts: &RunOptions,
    app: &serde_json::Value,
    atoms_dir: &Path,
    placement: &[u32],
    exe: &Path,
    workdir: &Path,
) -> Result<RunOutput, EngineError> {
    let m = opts.machines;
    if m == 0 {
        return Err(EngineError::Config("a run needs at least one machine".into()));
    }
    let started = Instant::now();
    std::fs::create_dir_all(workdir)?;

    let mut specs = Vec::with_capacity(m as usize);
    let mut children: Vec<Child> = Vec::with_capacity(m as usize);
    for me in 0..m {
        let spec = MachineProcessArgs {
            me,
            opts: opts.clone(),
            app: app.clone(),
            atoms_dir: atoms_dir.to_path_buf(),
            placement: placement.to_vec(),
            out_json: workdir.join(format!("machine-{me}.json")),
            out_bin: workdir.join(format!("machine-{me}.bin")),
        };
        let spec_path = workdir.join(format!("machine-{me}.spec.json"));
        let text = serde_json::to_vec_pretty(&spec)
            .map_err(|e| EngineError::Config(format!("machine spec: {e}")))?;
        std::fs::write(&spec_path, text)?;
        specs.push(spec);
        let child = Command::new(exe)
            .arg("__machine")
            .arg("--spec")
            .arg(&spec_path)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        children.push(child);
    }

    match rendezvous_and_wait(&mut children, m) {
        Ok(()) => {}
        Err(e) => {
            for c in &mut children {
                let _ = c.kill();
            }
            return Err(e);
        }
    }

    let mut exports = Vec::with_capacity(m as usize);
    let mut fragments = Vec::with_capacity(m as usize);
    for (me, spec) in specs.iter().enumerate() {
        let report: MachineReport = serde_json::from_slice(&std::fs::read(&spec.out_json)?)
            .map_err(|e| {
                EngineError::MachineFailed(me as u32, format!("report unreadable: {e}"))
            })?;
        if report.machine != me as u32 {
            return Err(EngineError::MachineFailed(
                me as u32,
                format!("report claims machine {}", report.machine),
            ));
        }
        fragments.push(std::fs::read(&spec.out_bin)?);
        exports.push(MachineExport {
            machine: me as u32,
            local: LocalGraph::default(),
            log: report.log,
            counters: CommCounters { sent: report.sent, received: report.received },
            updates: report.updates,
            modifications: report.modifications,
            publications: report.publications,
            push_bytes: report.push_bytes,
            syncs_run: report.syncs_run,
            sweeps: report.sweeps,
            max_in_flight: report.max_in_flight,
            sync_results: report.sync_results,
            wall_ms: report.wall_ms,
        });
    }
    let final_data = merge_fragments(&fragments)?;
    assemble_output(opts, final_data, exports, started)
}

/// Brokers the port map, then watches the children until they all exit,
/// killing everything on the first failure or on timeout.
fn rendezvous_and_wait(children: &mut [Child], m: u32) -> Result<(), EngineError> {
    let mut ports = vec![0u16; m as usize];
    let mut stdouts = Vec::with_capacity(m as usize);
    for (i, child) in children.iter_mut().enumerate() {
        let mut reader = BufReader::new(child.stdout.take().expect("stdout is piped"));
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let port = match fields.as_slice() {
            ["PORT", who, port] if *who == i.to_string() => port.parse::<u16>().ok(),
            _ => None,
        };
        ports[i] = port.ok_or_else(|| {
            EngineError::MachineFailed(i as u32, format!("bad port announcement {line:?}"))
        })?;
        stdouts.push(reader);
    }

    let mut map_line = String::from("PORTS");
    for p in &ports {
        map_line.push(' ');
        map_line.push_str(&p.to_string());
    }
    map_line.push('\n');
    for child in children.iter_mut() {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        stdin.write_all(map_line.as_bytes())?;
    }
    // Nothing else should arrive on stdout, but drain it off-thread so a
    // stray print can never block a child on a full pipe.
    for r in stdouts {
        thread::spawn(move || {
            let mut r = r;
            let _ = std::io::copy(&mut r, &mut std::io::sink());
        });
    }

    let deadline = Instant::now() + RUN_TIMEOUT;
    let mut done = vec![false; m as usize];
    while done.iter().any(|d| !d) {
        for (i, child) in children.iter_mut().enumerate() {
            if done[i] {
                continue;
            }
            if let Some(status) = child.try_wait()? {
                if !status.success() {
                    return Err(EngineError::MachineFailed(
                        i as u32,
                        format!("machine process exited with {status}"),
                    ));
                }
                done[i] = true;
            }
        }
        if Instant::now() > deadline {
            return Err(EngineError::Deadlock(format!(
                "machine processes still running after {}s",
                RUN_TIMEOUT.as_secs()
            )));
        }
        thread::sleep(Duration::from_millis(2));
    }
    Ok(())
}

/// What the mesh and the worker pool feed the machine's event loop.
enum Msg {
    Net(Envelope),
    Done(Result<JobOutcome, UpdateError>),
    PeerBroken(u32, String),
}

/// Entry point for a spawned machine process: reads its spec, rebuilds the
/// program via `build`, joins the TCP mesh, and runs its machine core to
/// halt, leaving its report and data fragment on disk.
pub fn machine_process_entry(
    spec_path: &Path,
    build: impl FnOnce(&serde_json::Value) -> Result<(Program, InitialTasks), EngineError>,
) -> Result<(), EngineError> {
    let args: MachineProcessArgs = serde_json::from_str(&std::fs::read_to_string(spec_path)?)
        .map_err(|e| EngineError::Config(format!("machine spec: {e}")))?;
    let me = args.me;
    let m = args.opts.machines;
    let (program, initial) = build(&args.app)?;
    let program = Arc::new(program);

    let parts = args.placement.len() as u32;
    let mut atoms = Vec::with_capacity(parts as usize);
    for part in 0..parts {
        atoms.push(Atom::read_from(&args.atoms_dir.join(Atom::file_name(part)))?);
    }
    let local = load_local(&atoms, &args.placement, me, m)?;
    let mut core = new_core(&args.opts, program.clone(), local, &initial);

    // Announce our port, wait for the full map, then build the mesh.
    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let my_port = listener.local_addr()?.port();
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "PORT {me} {my_port}")?;
        out.flush()?;
    }
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line)?;
    let ports = parse_port_map(&line, m)?;

    let mut peers: Vec<Option<TcpStream>> = (0..m).map(|_| None).collect();
    for j in 0..me {
        let mut s = TcpStream::connect(("127.0.0.1", ports[j as usize]))?;
        s.write_all(&me.to_le_bytes())?;
        s.set_nodelay(true)?;
        peers[j as usize] = Some(s);
    }
    for _ in me + 1..m {
        let (mut s, _) = listener.accept()?;
        let mut id = [0u8; 4];
        s.read_exact(&mut id)?;
        let j = u32::from_le_bytes(id);
        if j <= me || j >= m || peers[j as usize].is_some() {
            return Err(EngineError::Config(format!("unexpected handshake from machine {j}")));
        }
        s.set_nodelay(true)?;
        peers[j as usize] = Some(s);
    }
    drop(listener);

    let (tx, rx) = mpsc::channel::<Msg>();

    for (j, s) in peers.iter().enumerate() {
        if let Some(s) = s {
            let stream = s.try_clone()?;
            let tx = tx.clone();
            thread::spawn(move || read_frames(j as u32, stream, tx));
        }
    }

    let mut writer_tx: Vec<Option<mpsc::Sender<Vec<u8>>>> = (0..m).map(|_| None).collect();
    let mut writers = Vec::new();
    for (j, s) in peers.iter_mut().enumerate() {
        if let Some(stream) = s.take() {
            let (wtx, wrx) = mpsc::channel::<Vec<u8>>();
            writer_tx[j] = Some(wtx);
            writers.push(thread::spawn(move || write_frames(stream, wrx)));
        }
    }

    let (jtx, jrx) = mpsc::channel();
    let jrx = Arc::new(Mutex::new(jrx));
    let mut workers = Vec::new();
    for _ in 0..args.opts.workers.max(1) {
        let jrx = jrx.clone();
        let tx = tx.clone();
        let program = program.clone();
        workers.push(thread::spawn(move || loop {
            let job = jrx.lock().expect("worker queue").recv();
            match job {
                Ok(spec) => {
                    if tx.send(Msg::Done(run_update(&program, spec))).is_err() {
                        return;
                    }
                }
                Err(_) => return,
            }
        }));
    }

    let mut event = Some(Event::Start);
    while let Some(ev) = event.take() {
        let mut fx = Effects::default();
        core.handle(ev, &mut fx);
        for (dest, env) in fx.sends {
            if dest == me {
                tx.send(Msg::Net(env)).expect("own channel");
            } else {
                let chan = writer_tx
                    .get(dest as usize)
                    .and_then(|c| c.as_ref())
                    .ok_or_else(|| EngineError::Config(format!("send to machine {dest}")))?;
                if chan.send(env.encode_frame()).is_err() {
                    return Err(EngineError::Config(format!("writer to machine {dest} died")));
                }
            }
        }
        for job in fx.jobs {
            jtx.send(job).expect("worker pool");
        }
        if core.is_halted() {
            break;
        }
        event = Some(match rx.recv().expect("own sender is alive") {
            Msg::Net(env) => Event::Deliver(env),
            Msg::Done(Ok(done)) => Event::JobDone(done),
            Msg::Done(Err(e)) => return Err(e.into()),
            Msg::PeerBroken(j, why) => {
                return Err(EngineError::MachineFailed(j, format!("stream broke: {why}")))
            }
        });
    }

    // Everything queued outbound must reach the wire before we exit.
    drop(jtx);
    for w in workers {
        let _ = w.join();
    }
    for slot in writer_tx.iter_mut() {
        *slot = None;
    }
    for w in writers {
        w.join().map_err(|_| EngineError::Config("writer thread panicked".into()))??;
    }

    let export = core.finish();
    std::fs::write(&args.out_bin, encode_fragment(&export.local))?;
    let report = MachineReport {
        machine: me,
        sent: export.counters.sent,
        received: export.counters.received,
        updates: export.updates,
        modifications: export.modifications,
        publications: export.publications,
        push_bytes: export.push_bytes,
        syncs_run: export.syncs_run,
        sweeps: export.sweeps,
        max_in_flight: export.max_in_flight,
        wall_ms: export.wall_ms,
        sync_results: export.sync_results,
        log: export.log,
    };
    let text = serde_json::to_vec(&report)
        .map_err(|e| EngineError::Config(format!("report encode: {e}")))?;
    std::fs::write(&args.out_json, text)?;
    Ok(())
}

fn parse_port_map(line: &str, machines: u32) -> Result<Vec<u16>, EngineError> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("PORTS") {
        return Err(EngineError::Config(format!("bad port map {line:?}")));
    }
    let ports: Vec<u16> = fields
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| EngineError::Config(format!("bad port map {line:?}: {e}")))?;
    if ports.len() != machines as usize {
        return Err(EngineError::Config(format!(
            "port map lists {} machines, expected {machines}",
            ports.len()
        )));
    }
    Ok(ports)
}

/// Pulls length-prefixed envelope frames off one peer's stream. A clean
/// close just ends the thread — peers drop their ends as they halt.
fn read_frames(peer: u32, mut stream: TcpStream, tx: mpsc::Sender<Msg>) {
    loop {
        let mut len_buf = [0u8; 4];
        if stream.read_exact(&mut len_buf).is_err() {
            return;
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        if len > MAX_FRAME {
            let _ = tx.send(Msg::PeerBroken(peer, format!("{len}-byte frame")));
            return;
        }
        let mut body = vec![0u8; len];
        if stream.read_exact(&mut body).is_err() {
            let _ = tx.send(Msg::PeerBroken(peer, "stream ended mid-frame".into()));
            return;
        }
        match Envelope::decode_body(&body) {
            Ok(env) => {
                if tx.send(Msg::Net(env)).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(Msg::PeerBroken(peer, e.to_string()));
                return;
            }
        }
    }
}

/// Writes queued frames until the sender side closes, then flushes and
/// half-closes so the peer's reader sees a clean end of stream.
fn write_frames(mut stream: TcpStream, rx: mpsc::Receiver<Vec<u8>>) -> std::io::Result<()> {
    while let Ok(frame) = rx.recv() {
        stream.write_all(&frame)?;
    }
    stream.flush()?;
    stream.shutdown(Shutdown::Write)?;
    Ok(())
}

/// Serializes this machine's owned contribution: every owned vertex datum,
/// and both slots of every edge whose lower endpoint it owns. Exactly one
/// machine owns each datum, so the fragments tile the graph.
fn encode_fragment(local: &LocalGraph) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, local.vertex_total());
    let owned = local.owned();
    put_u32(&mut out, owned.len() as u32);
    for &v in owned {
        let d = local.datum(DatumId::Vertex(v)).expect("owned vertex datum");
        put_u32(&mut out, v.0);
        put_u64(&mut out, d.version);
        put_bytes(&mut out, &d.bytes);
    }
    let mut edges: Vec<EdgeKey> =
        local.local_edges().filter(|e| local.owner(e.lo) == local.machine()).collect();
    edges.sort();
    put_u32(&mut out, edges.len() as u32);
    for e in edges {
        put_u32(&mut out, e.lo.0);
        put_u32(&mut out, e.hi.0);
        for dir in [Direction::LoToHi, Direction::HiToLo] {
            let d = local.datum(DatumId::Edge(e, dir)).expect("local edge datum");
            put_u64(&mut out, d.version);
            put_bytes(&mut out, &d.bytes);
        }
    }
    out
}

/// Unions per-machine fragments back into one `FinalData`, rejecting gaps,
/// overlaps, and disagreement about the graph's shape.
fn merge_fragments(fragments: &[Vec<u8>]) -> Result<FinalData, EngineError> {
    fn rd<T>(r: Result<T, DecodeError>) -> Result<T, String> {
        r.map_err(|e| e.to_string())
    }

    fn decode_one(
        frag: &[u8],
        vertex_total: &mut Option<u32>,
        vdata: &mut Vec<Option<Datum>>,
        edges: &mut BTreeMap<EdgeKey, [Datum; 2]>,
    ) -> Result<(), String> {
        let mut r = Reader::new(frag);
        let total = rd(r.u32())?;
        match *vertex_total {
            None => {
                *vertex_total = Some(total);
                *vdata = (0..total).map(|_| None).collect();
            }
            Some(t) if t == total => {}
            Some(t) => return Err(format!("claims {total} vertices, others claim {t}")),
        }
        for _ in 0..rd(r.u32())? {
            let id = rd(r.u32())?;
            let version = rd(r.u64())?;
            let bytes = rd(r.bytes())?;
            let slot = vdata
                .get_mut(id as usize)
                .ok_or_else(|| format!("vertex {id} out of range"))?;
            if slot.is_some() {
                return Err(format!("vertex {id} claimed twice"));
            }
            *slot = Some(Datum { bytes, version });
        }
        for _ in 0..rd(r.u32())? {
            let lo = VertexId(rd(r.u32())?);
            let hi = VertexId(rd(r.u32())?);
            let key = EdgeKey::new(lo, hi).map_err(|e| e.to_string())?;
            let mut slots = [
                Datum { bytes: Vec::new(), version: 0 },
                Datum { bytes: Vec::new(), version: 0 },
            ];
            for s in &mut slots {
                s.version = rd(r.u64())?;
                s.bytes = rd(r.bytes())?;
            }
            if edges.insert(key, slots).is_some() {
                return Err(format!("edge {}-{} claimed twice", key.lo, key.hi));
            }
        }
        rd(r.finish())
    }

    let mut vertex_total = None;
    let mut vdata: Vec<Option<Datum>> = Vec::new();
    let mut edges = BTreeMap::new();
    for (me, frag) in fragments.iter().enumerate() {
        decode_one(frag, &mut vertex_total, &mut vdata, &mut edges)
            .map_err(|msg| EngineError::MachineFailed(me as u32, format!("fragment: {msg}")))?;
    }
    let vdata = vdata
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| EngineError::Config(format!("no fragment covers vertex {i}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FinalData {
        vertex_total: vertex_total.unwrap_or(0),
        vdata,
        edges: edges.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::greedy_color;
    use crate::graph::build_graph;
    use crate::partition::{build_atoms, overpartition};

    fn fragments_for(machines: u32) -> (Vec<Vec<u8>>, FinalData) {
        let g = build_graph(
            10,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 0)],
            |v| vec![v.0 as u8],
            |e| (vec![e.lo.0 as u8], vec![e.hi.0 as u8]),
        )
        .unwrap();
        let assignment = overpartition(&g, 4).unwrap();
        let coloring = greedy_color(&g);
        let atoms = build_atoms(&g, &assignment, 4, Some(&coloring)).unwrap();
        let placement: Vec<u32> = (0..4).map(|p| p % machines).collect();
        let locals: Vec<LocalGraph> = (0..machines)
            .map(|me| load_local(&atoms, &placement, me, machines).unwrap())
            .collect();
        let refs: Vec<&LocalGraph> = locals.iter().collect();
        let want = FinalData::assemble(&refs).unwrap();
        (locals.iter().map(encode_fragment).collect(), want)
    }

    #[test]
    fn fragments_tile_the_graph_exactly() {
        for machines in [1, 2, 3] {
            let (frags, want) = fragments_for(machines);
            let got = merge_fragments(&frags).unwrap();
            assert_eq!(got.to_bytes(), want.to_bytes());
        }
    }

    #[test]
    fn missing_coverage_is_rejected() {
        let (frags, _) = fragments_for(3);
        let err = merge_fragments(&frags[..2]).unwrap_err();
        assert!(err.to_string().contains("no fragment covers"));
    }

    #[test]
    fn overlapping_fragments_are_rejected() {
        let (frags, _) = fragments_for(2);
        let doubled = vec![frags[0].clone(), frags[0].clone(), frags[1].clone()];
        let err = merge_fragments(&doubled).unwrap_err();
        assert!(err.to_string().contains("claimed twice"));
    }

    #[test]
    fn port_map_parsing_checks_shape() {
        assert_eq!(parse_port_map("PORTS 5000 5001\n", 2).unwrap(), vec![5000, 5001]);
        assert!(parse_port_map("PORT 5000\n", 1).is_err());
        assert!(parse_port_map("PORTS 5000\n", 2).is_err());
        assert!(parse_port_map("PORTS five\n", 1).is_err());
    }
}
