//! `irs`: synthesize sequences, build scene graphs, query, evaluate and
//! benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use irs_core::evalbench::{bench_fusion, evaluate, DEFAULT_IOU};
use irs_core::fusion::FusionMode;
use irs_core::graph::{self, validate};
use irs_core::model::{validate_config, Config, SceneGraph};
use irs_core::pipeline::{build, lift_observations, segment_sequence};
use irs_core::query::{parse_queries, query, StructuredQuery};
use irs_core::semantics::PrototypeSet;
use irs_core::sequence::{read_ground_truth, read_sequence, Sequence};
use irs_core::synth::{emit_sequence, generate_scene, SceneSpec};

#[derive(Parser)]
#[command(name = "irs", version, about = "Room-partitioned 3D scene graphs")]
struct Cli {
    /// Only print results; suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Build a scene graph from a sequence.
    Build(BuildArgs),
    /// Rank instances of a graph against structured queries.
    Query(QueryArgs),
    /// Score a graph against the sequence ground truth.
    Eval(EvalArgs),
    /// Time the fusion stage in each mode.
    Bench(BenchArgs),
    /// Print a graph summary.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output sequence directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene spec file of `key = value` lines.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spec override, repeatable: `--set rooms_x=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Skip the ground-truth sidecar.
    #[arg(long)]
    no_gt: bool,
}

/// One flag per config key; a flag wins over the config file.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block_size: Option<f64>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    tau3: Option<f64>,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    tau_s: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    alpha3: Option<f64>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    dbscan_eps: Option<f64>,
    #[arg(long)]
    dbscan_min_pts: Option<usize>,
    #[arg(long)]
    min_mask_points: Option<usize>,
    /// Fusion workers; defaults to $IRS_WORKERS, then the config file.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    corner_rule: Option<bool>,
}

impl ConfigFlags {
    /// default < $IRS_WORKERS < config file < flags.
    fn resolve(&self) -> Result<Config, Failure> {
        let mut cfg = Config::default();
        if let Ok(w) = std::env::var("IRS_WORKERS") {
            cfg.set("workers", &w)
                .map_err(|e| usage(anyhow!(e).context("IRS_WORKERS")))?;
        }
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(usage)?;
            cfg.apply_text(&text)
                .with_context(|| format!("config {}", path.display()))
                .map_err(usage)?;
        }
        let flags: [(&str, Option<String>); 15] = [
            ("block_size", self.block_size.map(|v| v.to_string())),
            ("tau1", self.tau1.map(|v| v.to_string())),
            ("tau2", self.tau2.map(|v| v.to_string())),
            ("tau3", self.tau3.map(|v| v.to_string())),
            ("tau_g", self.tau_g.map(|v| v.to_string())),
            ("tau_s", self.tau_s.map(|v| v.to_string())),
            ("alpha1", self.alpha1.map(|v| v.to_string())),
            ("alpha2", self.alpha2.map(|v| v.to_string())),
            ("alpha3", self.alpha3.map(|v| v.to_string())),
            ("voxel_size", self.voxel_size.map(|v| v.to_string())),
            ("dbscan_eps", self.dbscan_eps.map(|v| v.to_string())),
            ("dbscan_min_pts", self.dbscan_min_pts.map(|v| v.to_string())),
            ("min_mask_points", self.min_mask_points.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("corner_rule", self.corner_rule.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|e| usage(e.into()))?;
            }
        }
        validate_config(cfg).map_err(|e| usage(e.into()))
    }
}

#[derive(Args)]
struct BuildArgs {
    /// Sequence directory.
    #[arg(long)]
    seq: PathBuf,
    /// Output graph path; `.sg` and `.sgp` files are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "parallel")]
    mode: FusionMode,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Query file: one query per line, `[room=<label>] k=<n> label=<name>` or
    /// `[room=<label>] k=<n> <reals...>`.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Room type filter.
    #[arg(long)]
    room: Option<String>,
    /// Object label, resolved through the vocabulary.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Vocabulary file; defaults to the sequence's when `--seq` is given.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    seq: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Sequence directory holding the ground-truth sidecar.
    #[arg(long)]
    seq: PathBuf,
    /// Vocabulary file; defaults to the sequence's.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU)]
    iou: f64,
    /// Also write a `key=value` report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print CSV instead of a table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    seq: PathBuf,
    /// Timed runs per mode (at least 3).
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, value_delimiter = ',', default_value = "serial_global,serial_rooms,parallel")]
    modes: Vec<FusionMode>,
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    graph: PathBuf,
}

/// Exit 1: a pipeline stage failed. Exit 2: bad usage or input.
enum Failure {
    Pipeline(anyhow::Error),
    Usage(anyhow::Error),
}

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

fn pipeline(e: anyhow::Error) -> Failure {
    Failure::Pipeline(e)
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let r = match cli.cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Build(a) => build_cmd(a),
        Cmd::Query(a) => query_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Bench(a) => bench_cmd(a),
        Cmd::Inspect(a) => inspect(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let mut spec = SceneSpec::default();
    if let Some(path) = &a.spec {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read spec {}", path.display()))
            .map_err(usage)?;
        spec = SceneSpec::from_text(&text).map_err(|e| usage(e.into()))?;
    }
    for s in &a.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got `{s}`")))?;
        spec.set(k.trim(), v.trim()).map_err(|e| usage(e.into()))?;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec).map_err(|e| usage(e.into()))?;
    emit_sequence(&scene, &a.out, !a.no_gt).map_err(|e| usage(e.into()))?;
    fs::write(a.out.join("spec.txt"), spec.to_text())
        .with_context(|| format!("cannot write {}", a.out.display()))
        .map_err(usage)?;
    info!(
        "{} rooms, {} objects, {} frames written to {}",
        spec.room_count(),
        scene.objects.len(),
        scene.sequence.frames.len(),
        a.out.display()
    );
    Ok(())
}

fn load_sequence(dir: &Path) -> Result<Sequence, Failure> {
    read_sequence(dir)
        .with_context(|| format!("cannot read sequence {}", dir.display()))
        .map_err(usage)
}

fn load_graph(path: &Path) -> Result<SceneGraph, Failure> {
    graph::load(path)
        .with_context(|| format!("cannot read graph {}", path.display()))
        .map_err(usage)
}

fn load_vocab(vocab: Option<&Path>, seq: Option<&Path>) -> Result<Option<PrototypeSet>, Failure> {
    let path = match (vocab, seq) {
        (Some(v), _) => v.to_path_buf(),
        (None, Some(dir)) => dir.join("vocab.txt"),
        (None, None) => return Ok(None),
    };
    PrototypeSet::load(&path)
        .with_context(|| format!("cannot read vocabulary {}", path.display()))
        .map(Some)
        .map_err(usage)
}

fn build_cmd(a: BuildArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let seq = load_sequence(&a.seq)?;
    let out = build(&seq, &cfg, a.mode).map_err(|e| pipeline(e.into()))?;
    let (sg, sgp) = graph::save(&out.graph, &a.out).map_err(|e| usage(e.into()))?;
    let problems = validate(&out.graph);
    for p in &problems {
        warn!("graph check: {p:?}");
    }
    println!("mode {} workers {}", a.mode, cfg.workers);
    for (stage, t) in out.timings.entries() {
        println!("time {:<10} {:>10.3} ms", stage.as_str(), t.as_secs_f64() * 1e3);
    }
    println!("rooms {}", out.graph.rooms.len());
    println!("instances {}", out.graph.instances.len());
    println!("observations {} dropped_masks {}", out.observations, out.dropped_masks);
    info!("graph written to {} and {}", sg.display(), sgp.display());
    Ok(())
}

fn room_label(g: &SceneGraph, id: u32) -> &str {
    g.room(id)
        .and_then(|r| r.label.as_deref())
        .unwrap_or(graph::UNKNOWN_ROOM)
}

fn query_cmd(a: QueryArgs) -> CmdResult {
    let g = load_graph(&a.graph)?;
    let vocab = load_vocab(a.vocab.as_deref(), a.seq.as_deref())?;
    let mut queries: Vec<StructuredQuery> = Vec::new();
    if let Some(path) = &a.queries {
        let v = vocab
            .as_ref()
            .ok_or_else(|| usage(anyhow!("a query file needs --vocab or --seq")))?;
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read queries {}", path.display()))
            .map_err(usage)?;
        queries = parse_queries(&text, v).map_err(|e| usage(e.into()))?;
    }
    if let Some(label) = &a.label {
        let v = vocab
            .as_ref()
            .ok_or_else(|| usage(anyhow!("--label needs --vocab or --seq")))?;
        let e = v
            .get(label)
            .ok_or_else(|| usage(anyhow!("label `{label}` is not in the vocabulary")))?
            .clone();
        queries.push(StructuredQuery::new(a.room.clone(), e, a.k).map_err(|e| usage(e.into()))?);
    } else if a.room.is_some() {
        return Err(usage(anyhow!("--room needs --label")));
    }
    if queries.is_empty() {
        return Err(usage(anyhow!("no queries: pass --queries or --label")));
    }
    for (n, q) in queries.iter().enumerate() {
        let r = query(&g, q).map_err(|e| usage(e.into()))?;
        println!(
            "query {} room={} k={}",
            n + 1,
            q.room_label.as_deref().unwrap_or("*"),
            q.k
        );
        if let Some(reason) = &r.reason {
            println!("  {reason}");
            continue;
        }
        for (rank, h) in r.ranked.iter().enumerate() {
            let c = h.centroid;
            println!(
                "  {:>2}  instance {:>4}  room {}  similarity {:.4}  centroid ({:.3}, {:.3}, {:.3})",
                rank + 1,
                h.instance_id,
                room_label(&g, h.room_id),
                h.similarity,
                c.x,
                c.y,
                c.z
            );
        }
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let g = load_graph(&a.graph)?;
    let gt = read_ground_truth(&a.seq)
        .with_context(|| format!("cannot read ground truth in {}", a.seq.display()))
        .map_err(usage)?;
    let vocab = load_vocab(a.vocab.as_deref(), Some(&a.seq))?.expect("sequence vocabulary path");
    if !(0.0..=1.0).contains(&a.iou) || a.iou == 0.0 {
        return Err(usage(anyhow!("--iou must be in (0, 1]")));
    }
    let report = evaluate(&g.instances, &gt, &vocab, g.voxel_size, a.iou).map_err(|e| usage(e.into()))?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_table());
    }
    if let Some(path) = &a.report {
        fs::write(path, report.to_kv())
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(usage)?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> CmdResult {
    let cfg = a.cfg.resolve()?;
    let seq = load_sequence(&a.seq)?;
    let rooms = segment_sequence(&seq, &cfg)
        .context("stage roomseg failed")
        .map_err(pipeline)?;
    let (obs, _) = lift_observations(&seq, &cfg)
        .context("stage lift failed")
        .map_err(pipeline)?;
    info!("benchmarking {} observations over {} rooms", obs.len(), rooms.len());
    let report = bench_fusion(&obs, &rooms, &cfg, &a.modes, a.runs).map_err(|e| pipeline(e.into()))?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> CmdResult {
    let g = load_graph(&a.graph)?;
    println!("building {} \"{}\"", g.building.id, g.building.name);
    println!("voxel_size {} dim {}", g.voxel_size, g.dim);
    println!("rooms {}", g.rooms.len());
    for r in &g.rooms {
        let n = g.instances.iter().filter(|i| g.parent_room(i.id) == Some(r.id)).count();
        let (lo, hi) = (r.bbox.min, r.bbox.max);
        println!(
            "  room {:>3}  {:<16} instances {:>3}  bbox ({:.2}, {:.2}, {:.2})..({:.2}, {:.2}, {:.2})",
            r.id,
            r.label.as_deref().unwrap_or(graph::UNKNOWN_ROOM),
            n,
            lo.x,
            lo.y,
            lo.z,
            hi.x,
            hi.y,
            hi.z
        );
    }
    println!("instances {}", g.instances.len());
    println!("edges {}", g.edges.len());
    let problems = validate(&g);
    if problems.is_empty() {
        println!("valid");
    } else {
        for p in &problems {
            println!("violation {p:?}");
        }
    }
    Ok(())
}
