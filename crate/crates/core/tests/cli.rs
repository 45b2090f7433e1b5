use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use openworld::harness::EpisodeConfig;

fn openworld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_openworld"))
        .args(args)
        .env_remove(openworld::cli::CONFIG_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A short episode configuration written into `dir`.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = EpisodeConfig::default();
    cfg.problems.problems_per_regime = 4;
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic_and_echoes_the_seed() {
    let a = openworld(&["gen", "--seed", "42"]);
    let b = openworld(&["gen", "--seed", "42"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("seed 42\n"));
    assert_ne!(a.stdout, openworld(&["gen", "--seed", "43"]).stdout);
    let disclosed = stdout(&openworld(&["gen", "--seed", "42", "--disclose"]));
    assert!(disclosed.lines().count() > stdout(&a).lines().count());
    assert!(disclosed.lines().any(|l| l.starts_with("  ")));
    assert!(!stdout(&a).lines().any(|l| l.starts_with("  ")));
}

#[test]
fn gen_writes_a_world_and_refuses_to_overwrite_it() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world.json");
    let first = openworld(&["gen", "--seed", "3", "--out", s(&world)]);
    assert!(first.status.success(), "{}", stderr(&first));
    let bytes = fs::read(&world).unwrap();
    let again = openworld(&["gen", "--seed", "4", "--out", s(&world)]);
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(fs::read(&world).unwrap(), bytes);
    let forced = openworld(&["gen", "--seed", "3", "--out", s(&world), "--force"]);
    assert!(forced.status.success());
    assert_eq!(fs::read(&world).unwrap(), bytes);
}

#[test]
fn missing_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = openworld(&["--config", "/nonexistent/openworld.toml", "run", "--agent", "builtin:null", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonexistent"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[problems]\ntimeouts = 3\n").unwrap();
    let o = openworld(&["--config", s(&cfg), "gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("timeouts"), "{}", stderr(&o));
}

#[test]
fn null_run_scores_zero_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("null");
    let o = openworld(&["--config", s(&cfg), "run", "--agent", "builtin:null", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("I=0.000000"), "{}", stdout(&o));
    for f in ["trace.live.jsonl", "trace.disclosure.jsonl", "scores-0.csv", "report.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let r = openworld(&["replay", s(&out.join("trace.disclosure.jsonl"))]);
    assert!(r.status.success());
    assert!(stdout(&r).starts_with("OK:"));
    let live = openworld(&["replay", s(&out.join("trace.live.jsonl"))]);
    assert_eq!(live.status.code(), Some(1));
    assert!(stdout(&live).starts_with("FAIL"));
}

#[test]
fn occupied_out_dir_needs_force_and_force_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("greedy");
    let args = ["--config", s(&cfg), "run", "--agent", "builtin:greedy", "--out", s(&out)];
    assert!(openworld(&args).status.success());
    let trace = fs::read(out.join("trace.disclosure.jsonl")).unwrap();
    let refused = openworld(&args);
    assert_eq!(refused.status.code(), Some(2));
    assert!(stderr(&refused).contains("--force"), "{}", stderr(&refused));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(openworld(&forced).status.success());
    assert_eq!(fs::read(out.join("trace.disclosure.jsonl")).unwrap(), trace);
}

#[test]
fn config_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = EpisodeConfig::default();
    cfg.gen.seed = 777;
    let path = dir.path().join("env.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_openworld"))
        .arg("gen")
        .env(openworld::cli::CONFIG_ENV, &path)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("seed 777\n"));
}

#[test]
fn report_names_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "tick,cumulative_score\n0,0\n1,0.5\n2,oops\n").unwrap();
    let o = openworld(&["report", s(&bad)]);
    assert_eq!(o.status.code(), Some(5));
    let err = stderr(&o);
    assert!(err.contains("bad.csv") && err.contains("line 4"), "{err}");

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = openworld(&["report", s(&empty)]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("no samples"), "{}", stderr(&o));
}

#[test]
fn report_reads_golden_curves_and_traces() {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let o = openworld(&["report", s(&data.join("plateau-agent1.csv")), s(&data.join("plateau-agent2.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("# openworld-report v1"));
    assert!(text.contains("plateau-agent1") && text.contains("plateau-agent2"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    assert!(openworld(&["--config", s(&cfg), "run", "--agent", "builtin:random", "--out", s(&run)]).status.success());
    let out = dir.path().join("report");
    let o = openworld(&[
        "--config",
        s(&cfg),
        "report",
        s(&run.join("trace.live.jsonl")),
        s(&run.join("scores-0.csv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    // the trace and the score CSV describe the same stream
    assert_eq!(rows[0][2..], rows[1][2..]);
    assert!(out.join("rate-trace.live-agent0.csv").is_file());
    assert!(out.join("rate-scores-0.csv").is_file());
}

#[test]
fn stage_commands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let s1 = dir.path().join("s1");
    let o = openworld(&["--config", s(&cfg), "stage1", "--agent", "builtin:random", "--worlds", "2", "--out", s(&s1)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(s1.join("stage1.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().last().unwrap().starts_with("mean,"));
    assert!(s1.join("world-0").join("trace.disclosure.jsonl").is_file());

    let s2 = dir.path().join("s2");
    let o = openworld(&[
        "--config",
        s(&cfg),
        "stage2",
        "--agent",
        "builtin:null",
        "--agent",
        "builtin:greedy",
        "--out",
        s(&s2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("#1 agent 1 (greedy)"), "{}", stdout(&o));

    let lonely = openworld(&["--config", s(&cfg), "stage2", "--agent", "builtin:null", "--out", s(&dir.path().join("s3"))]);
    assert_eq!(lonely.status.code(), Some(2));
}

#[test]
fn agent_subcommand_speaks_the_protocol() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_openworld"))
        .args(["agent", "null"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    writeln!(
        stdin,
        r#"{{"type":"hello","protocol":1,"agent_id":0,"seed":1,"dim":2,"resolution":1,"f_max":0.3,"members":[0],"body_mode":"fixed"}}"#
    )
    .unwrap();
    writeln!(stdin, r#"{{"type":"observation","tick":0,"resolution":1,"grid":[1.0,0.0],"integrity":1.0}}"#).unwrap();
    writeln!(stdin, r#"{{"type":"bye","reason":"done"}}"#).unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3, "{lines:?}");
    assert!(lines[0].contains(r#""type":"hello""#));
    assert!(lines[1].contains(r#""type":"resources""#));
    assert!(lines[2].contains(r#""type":"action""#) && lines[2].contains(r#""tick":0"#));
}

#[test]
fn packaged_default_config_matches_the_built_in_one() {
    let text = include_str!("../data/default.toml");
    assert_eq!(EpisodeConfig::from_toml(text).unwrap(), EpisodeConfig::default());
}
