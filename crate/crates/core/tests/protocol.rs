use std::fs;
use std::path::Path;
use std::time::Duration;

use openworld::agents::AgentKind;
use openworld::harness::{run_episode, EpisodeConfig, Participant};
use openworld::trace::{replay, Trace};
use openworld::Error;

fn short() -> EpisodeConfig {
    let mut cfg = EpisodeConfig::default();
    cfg.problems.problems_per_regime = 2;
    cfg
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_openworld")
}

/// A shell agent: answers `hello`, then prints `reply` for each observation.
fn script(dir: &Path, hello: &str, reply: &str) -> String {
    let path = dir.join("agent.sh");
    fs::write(
        &path,
        format!(
            "#!/bin/sh\nread line\necho '{hello}'\nwhile read line; do\n  case \"$line\" in *observation*) {reply} ;; esac\ndone\n"
        ),
    )
    .unwrap();
    format!("sh {}", path.display())
}

const HELLO: &str = r#"{"type":"hello","protocol":1,"name":"script"}"#;

#[test]
fn subprocess_greedy_matches_in_process() {
    let cfg = short().with_seed(11);
    let local = run_episode(&cfg, vec![Participant::builtin(AgentKind::Greedy)]).unwrap();
    let remote = Participant::command(&format!("{} agent greedy", bin()), Duration::from_secs(10)).unwrap();
    let remote = run_episode(&cfg, vec![remote]).unwrap();
    assert_eq!(remote.agents[0].timeouts, 0);
    assert_eq!(local.disclosure_trace(), remote.disclosure_trace());
    assert!(replay(&Trace::parse(&remote.disclosure_trace()).unwrap()).is_ok());
}

#[test]
fn smuggled_fields_abort_the_episode() {
    let dir = tempfile::tempdir().unwrap();
    let reply = r#"echo '{"type":"action","tick":0,"forces":{},"laws":[]}'"#;
    let agent = Participant::command(&script(dir.path(), HELLO, reply), Duration::from_secs(5)).unwrap();
    let out = run_episode(&short(), vec![agent]).unwrap();
    let reason = out.aborted.clone().expect("episode aborted");
    assert!(reason.contains("unknown field"), "{reason}");
    assert!(out.agents[0].violation.is_some());
    assert_eq!(out.final_world.tick, 1);
    // the aborted run is still a faithful record
    assert!(replay(&Trace::parse(&out.disclosure_trace()).unwrap()).is_ok());
}

#[test]
fn wrong_protocol_version_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let hello = r#"{"type":"hello","protocol":99,"name":"future"}"#;
    let agent = Participant::command(&script(dir.path(), hello, "true"), Duration::from_secs(5)).unwrap();
    match run_episode(&short(), vec![agent]) {
        Err(Error::Protocol(msg)) => assert!(msg.contains("99"), "{msg}"),
        other => panic!("expected a protocol error, got {:?}", other.map(|o| o.aborted)),
    }
}

#[test]
fn silent_agents_get_zero_force_substituted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short();
    cfg.problems.problems_per_regime = 1;
    let agent = Participant::command(&script(dir.path(), HELLO, "true"), Duration::from_millis(20)).unwrap();
    let out = run_episode(&cfg, vec![agent]).unwrap();
    assert!(out.aborted.is_none());
    assert_eq!(out.agents[0].timeouts, cfg.episode_len());
    assert_eq!(out.agents[0].senses, cfg.episode_len());
}

#[test]
fn spawn_failures_are_configuration_errors() {
    let err = Participant::command("/nonexistent/agent", Duration::from_millis(10)).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(matches!(Participant::from_spec("builtin:telepath", Duration::ZERO), Err(Error::Config(_))));
}
