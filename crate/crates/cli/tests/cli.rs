use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn irs() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_irs"));
    c.env_remove("IRS_WORKERS").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    irs().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A default 2x2 sequence and its graph, built once for all tests.
fn fixture() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static F: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("seq");
        let graph = dir.path().join("graph");
        let o = run(&["-q", "synth", "--out", p(&seq)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = run(&["-q", "build", "--seq", p(&seq), "--out", p(&graph)]);
        assert!(o.status.success(), "{}", stderr(&o));
        (dir, seq, graph)
    })
}

#[test]
fn build_reports_four_rooms() {
    let (dir, seq, _) = fixture();
    let out = dir.path().join("again");
    let o = run(&["build", "--seq", p(seq), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("rooms 4"), "{text}");
    assert!(text.contains("instances 12"), "{text}");
    assert!(text.contains("time fusion"), "{text}");
    assert!(out.with_extension("sg").exists() && out.with_extension("sgp").exists());
}

#[test]
fn serial_mode_writes_the_same_graph() {
    let (dir, seq, graph) = fixture();
    let out = dir.path().join("serial");
    let o = run(&[
        "-q",
        "build",
        "--seq",
        p(seq),
        "--out",
        p(&out),
        "--mode",
        "serial_global",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("mode serial_global"));
    for ext in ["sg", "sgp"] {
        assert_eq!(
            fs::read(out.with_extension(ext)).unwrap(),
            fs::read(graph.with_extension(ext)).unwrap()
        );
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["-q", "synth", "--out", p(d), "--seed", "4", "--set", "rooms_x=1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn overfull_spec_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "rooms_x = 1\nrooms_y = 1\nobjects_per_room = 90\n").unwrap();
    let o = run(&["synth", "--spec", p(&spec), "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scene overfull"));
    let o = run(&["synth", "--out", p(&dir.path().join("s")), "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["build", "--seq", p(dir.path()), "--out", p(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest"));
    let o = run(&[
        "query",
        "--graph",
        p(&dir.path().join("none")),
        "--vocab",
        "x",
        "--label",
        "tv",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_one_with_stage_name() {
    let (dir, seq, _) = fixture();
    let bare = dir.path().join("bare");
    fs::create_dir_all(&bare).unwrap();
    for e in fs::read_dir(seq).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".structs") {
            fs::write(bare.join(&name), b"").unwrap();
        } else {
            fs::copy(e.path(), bare.join(&name)).unwrap();
        }
    }
    let o = run(&[
        "-q",
        "build",
        "--seq",
        p(&bare),
        "--out",
        p(&dir.path().join("bare_graph")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("roomseg"), "{}", stderr(&o));
}

#[test]
fn query_by_flags() {
    let (_, seq, graph) = fixture();
    let o = run(&[
        "query",
        "--graph",
        p(graph),
        "--seq",
        p(seq),
        "--room",
        "Office",
        "--label",
        "tv",
        "--k",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let hits: Vec<&str> = text.lines().filter(|l| l.contains("instance")).collect();
    assert!(!hits.is_empty() && hits.len() <= 3, "{text}");
    assert!(hits[0].contains("room Office"));
    // Similarity to 4 decimals, centroid to 3.
    assert!(hits[0].contains("similarity 1.0000"), "{text}");
    let c = hits[0].split("centroid (").nth(1).unwrap();
    assert!(c
        .split(", ")
        .all(|v| v.trim_end_matches(')').split('.').nth(1).unwrap().len() == 3));

    let o = run(&[
        "query",
        "--graph",
        p(graph),
        "--seq",
        p(seq),
        "--room",
        "Garage",
        "--label",
        "tv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("room not found"));
}

#[test]
fn query_file_runs_every_line() {
    let (dir, seq, graph) = fixture();
    let qf = dir.path().join("queries.txt");
    fs::write(
        &qf,
        "# battery\nroom=Kitchen k=2 label=fridge\n\nk=1 label=bed\nroom=Dining room k=1 label=vase\n",
    )
    .unwrap();
    let o = run(&["query", "--graph", p(graph), "--seq", p(seq), "--queries", p(&qf)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("query ")).count(), 3, "{text}");
    assert!(text.contains("query 3 room=Dining room k=1"));
}

#[test]
fn eval_on_clean_scene_is_perfect() {
    let (dir, seq, graph) = fixture();
    let report = dir.path().join("report.txt");
    let o = run(&["eval", "--graph", p(graph), "--seq", p(seq), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.lines().any(|l| l.starts_with("top5") && l.ends_with("100.00")),
        "{text}"
    );
    assert!(
        text.lines().any(|l| l.starts_with("ap") && l.ends_with("100.00")),
        "{text}"
    );
    let kv = fs::read_to_string(&report).unwrap();
    assert!(kv.contains("top5=100.00") && kv.contains("ap=100.00"));
    let o = run(&["eval", "--graph", p(graph), "--seq", p(seq), "--csv"]);
    assert!(stdout(&o).starts_with("class,gt,matched,top5_hits"));
}

#[test]
fn eval_with_wrong_dimension_vocab_exits_two() {
    let (dir, seq, graph) = fixture();
    let vocab = dir.path().join("small_vocab.txt");
    fs::write(&vocab, "tv 1 0 0\nbed 0 1 0\n").unwrap();
    let o = run(&["eval", "--graph", p(graph), "--seq", p(seq), "--vocab", p(&vocab)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension"));
}

#[test]
fn bench_reports_three_modes() {
    let (_, seq, _) = fixture();
    let o = run(&["-q", "bench", "--seq", p(seq), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for m in ["serial_global", "serial_rooms", "parallel"] {
        assert!(text.contains(m), "{text}");
    }
    let o = run(&[
        "-q",
        "bench",
        "--seq",
        p(seq),
        "--csv",
        "--modes",
        "parallel,serial_global",
    ]);
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn inspect_summarizes_graph() {
    let (_, _, graph) = fixture();
    let o = run(&["inspect", "--graph", p(graph)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(
        text.contains("rooms 4") && text.contains("instances 12") && text.contains("valid"),
        "{text}"
    );
}

#[test]
fn flag_beats_file_beats_env() {
    let (dir, seq, _) = fixture();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "workers = 3\ntau_g = 0.3\n").unwrap();
    let out = dir.path().join("prec");
    let workers = |extra: &[&str], env: Option<&str>| -> String {
        let mut c = irs();
        c.args(["-q", "build", "--seq", p(seq), "--out", p(&out)]).args(extra);
        if let Some(v) = env {
            c.env("IRS_WORKERS", v);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o).lines().next().unwrap().to_string()
    };
    assert!(workers(&[], None).ends_with("workers 8"));
    assert!(workers(&[], Some("2")).ends_with("workers 2"));
    assert!(workers(&["--config", p(&cfg)], Some("2")).ends_with("workers 3"));
    assert!(workers(&["--config", p(&cfg), "--workers", "5"], Some("2")).ends_with("workers 5"));
    let o = run(&["build", "--seq", p(seq), "--out", p(&out), "--tau-g", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tau_g"));
}
