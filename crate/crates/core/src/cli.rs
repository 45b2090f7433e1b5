//! The `openworld` command line.
//!
//! Exit codes: 0 success, 1 replay verification failed, 2 configuration
//! error (including an occupied `--out`), 3 agent protocol failure, 4 I/O
//! failure, 5 malformed or insufficient input data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crate::agents::AgentKind;
use crate::dynamics::snapshot;
use crate::error::{Error, Result};
use crate::harness::{
    prepare_out_dir, run_episode, run_stage1, run_stage2, write_atomic, write_episode, EpisodeConfig, Participant,
};
use crate::metrics::{adaptation_report, rate_curve, AdaptationReport};
use crate::protocol::serve_stdio;
use crate::report::{parse_score_csv, rate_csv, report_csv, stage1_csv, streams_from_trace};
use crate::trace::{replay, Trace, Verdict};
use crate::worldgen::{generate_world, World};

pub const CONFIG_ENV: &str = "OPENWORLD_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "openworld", version, about = "Open-world simulator and agent evaluation harness")]
pub struct Cli {
    /// Episode configuration (TOML). Built-in defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world and print its summary.
    Gen {
        /// Overrides the configured world seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the canonical world serialization here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print law coefficients.
        #[arg(long)]
        disclose: bool,
        #[arg(long)]
        force: bool,
    },
    /// Run one episode with one agent.
    Run {
        /// `builtin:<null|random|greedy>` or a command to spawn.
        #[arg(long)]
        agent: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Solo evaluation over derived world seeds.
    Stage1 {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        worlds: usize,
        /// Overrides the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Several agents sharing one world, ranked by I.
    Stage2 {
        /// Repeat once per agent; agent ids follow the order given.
        #[arg(long = "agent", required = true, num_args = 1)]
        agents: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Re-simulate a disclosure trace and verify its checkpoints.
    Replay {
        trace: PathBuf,
        /// Print the initial laws once verification passes.
        #[arg(long)]
        laws: bool,
    },
    /// Rate curves and adaptation reports from score CSVs or traces.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write `rate-<name>.csv` files and `report.csv` here instead of
        /// printing the report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Serve a baseline agent over stdin/stdout.
    Agent { kind: AgentKind },
}

impl clap::ValueEnum for AgentKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[AgentKind::Null, AgentKind::Random, AgentKind::Greedy]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

fn load_config(path: Option<&Path>) -> Result<EpisodeConfig> {
    match path {
        Some(p) => EpisodeConfig::load(p),
        None => Ok(EpisodeConfig::default()),
    }
}

fn seeded(mut cfg: EpisodeConfig, seed: Option<u64>) -> EpisodeConfig {
    if let Some(s) = seed {
        cfg.gen.seed = s;
    }
    cfg
}

fn participant(spec: &str, cfg: &EpisodeConfig) -> Result<Participant> {
    Participant::from_spec(spec, Duration::from_millis(cfg.tick_budget_ms))
}

fn print_report(out: &mut dyn Write, label: &str, r: &AdaptationReport) -> Result<()> {
    writeln!(
        out,
        "agent {} ({label}): I={:.6} alpha={:.6} beta={:.6} gamma={:.6}",
        r.agent_id, r.i, r.alpha, r.beta, r.gamma
    )?;
    Ok(())
}

/// Entity, level and law-term counts; coefficients only when `disclose`.
pub fn world_summary(world: &World, disclose: bool) -> String {
    let positive = world.entities.iter().filter(|e| e.polarity > 0).count();
    let mut s = format!(
        "seed {}\ndim {}\nentities {} ({} positive, {} negative)\nlevels {}\n",
        world.spec.seed,
        world.dim(),
        world.entities.len(),
        positive,
        world.entities.len() - positive,
        world.n_levels()
    );
    for (level, law) in world.laws.iter().enumerate() {
        let groups = if level == 0 {
            world.entities.len()
        } else {
            world.composites[level - 1].len()
        };
        let drift = if law.drift_handle.is_some() { ", drifts" } else { "" };
        s += &format!("level {level}: {groups} members, {} law terms{drift}\n", law.terms.len());
        if disclose {
            for t in &law.terms {
                let coupled = if t.polarity_coupled { " (polarity-coupled)" } else { "" };
                s += &format!("  {:?} {}{coupled}\n", t.term, t.coeff);
            }
        }
    }
    s
}

fn cmd_gen(cfg: EpisodeConfig, seed: Option<u64>, out: Option<&Path>, disclose: bool, force: bool, stdout: &mut dyn Write) -> Result<()> {
    let cfg = seeded(cfg, seed);
    if let Some(path) = out {
        if path.exists() && !force {
            return Err(Error::OutputExists(path.to_path_buf()));
        }
    }
    let world = generate_world(&cfg.resolved_gen())?;
    write!(stdout, "{}", world_summary(&world, disclose))?;
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_atomic(path, &snapshot(&world))?;
    }
    Ok(())
}

fn cmd_run(cfg: EpisodeConfig, agent: &str, out: &Path, force: bool, stdout: &mut dyn Write) -> Result<()> {
    prepare_out_dir(out, force)?;
    let p = participant(agent, &cfg)?;
    let outcome = run_episode(&cfg, vec![p])?;
    let reports = outcome.reports(&cfg.metrics, cfg.retries)?;
    write_episode(out, &outcome, &reports)?;
    let a = &outcome.agents[0];
    writeln!(
        stdout,
        "seed {}: solved {}/{} problems, total score {:.6}, {} tick timeouts",
        outcome.seed,
        a.records.iter().filter(|r| r.solved).count(),
        a.records.len(),
        a.stream.total(),
        a.timeouts
    )?;
    if let Some(reason) = &outcome.aborted {
        writeln!(stdout, "aborted: {reason}")?;
    }
    print_report(stdout, &a.label, &reports[0])
}

fn cmd_stage1(cfg: EpisodeConfig, agent: &str, out: &Path, worlds: usize, force: bool, stdout: &mut dyn Write) -> Result<()> {
    prepare_out_dir(out, force)?;
    let result = run_stage1(&cfg, || participant(agent, &cfg), worlds)?;
    let width = worlds.saturating_sub(1).to_string().len();
    for (k, (outcome, w)) in result.outcomes.iter().zip(&result.worlds).enumerate() {
        write_episode(&out.join(format!("world-{k:0width$}")), outcome, std::slice::from_ref(&w.report))?;
    }
    let rows: Vec<_> = result
        .worlds
        .iter()
        .map(|w| (w.seed, w.report.clone(), w.solved, w.problems))
        .collect();
    write_atomic(&out.join("stage1.csv"), stage1_csv(&rows, &result.aggregate)?.as_bytes())?;
    for (k, w) in result.worlds.iter().enumerate() {
        writeln!(stdout, "world {k} (seed {}): I={:.6} solved {}/{}", w.seed, w.report.i, w.solved, w.problems)?;
    }
    let a = result.aggregate;
    writeln!(
        stdout,
        "mean: I={:.6} alpha={:.6} beta={:.6} gamma={:.6}",
        a.i, a.alpha, a.beta, a.gamma
    )?;
    Ok(())
}

fn cmd_stage2(cfg: EpisodeConfig, agents: &[String], out: &Path, force: bool, stdout: &mut dyn Write) -> Result<()> {
    prepare_out_dir(out, force)?;
    let participants = agents.iter().map(|a| participant(a, &cfg)).collect::<Result<Vec<_>>>()?;
    let result = run_stage2(&cfg, participants)?;
    write_episode(out, &result.outcome, &result.ranking)?;
    for (rank, r) in result.ranking.iter().enumerate() {
        let label = &result.outcome.agents[r.agent_id as usize].label;
        write!(stdout, "#{} ", rank + 1)?;
        print_report(stdout, label, r)?;
    }
    Ok(())
}

fn cmd_replay(path: &Path, laws: bool, stdout: &mut dyn Write) -> Result<bool> {
    let text = fs::read_to_string(path)?;
    let trace = Trace::parse(&text)?;
    match replay(&trace) {
        Verdict::Ok { ticks, checkpoints } => {
            writeln!(stdout, "OK: {ticks} ticks, {checkpoints} checkpoints verified")?;
            if laws {
                if let Some(crate::trace::EventKind::WorldInit { world: Some(w), .. }) =
                    trace.events.first().map(|e| &e.event)
                {
                    write!(stdout, "{}", world_summary(w, true))?;
                }
            }
            Ok(true)
        }
        Verdict::Fail { tick, reason } => {
            writeln!(stdout, "FAIL at tick {tick}: {reason}")?;
            Ok(false)
        }
    }
}

fn input_streams(path: &Path) -> Result<Vec<(String, crate::metrics::ScoreStream)>> {
    let text = fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .map_or_else(|| "input".to_string(), |s| s.to_string_lossy().into_owned());
    if text.trim_start().starts_with('{') {
        let trace = Trace::parse(&text)?;
        let streams = streams_from_trace(&trace)?;
        if streams.is_empty() {
            return Err(Error::InsufficientData(format!("{}: trace has no agents", path.display())));
        }
        Ok(streams.into_iter().map(|(id, s)| (format!("{stem}-agent{id}"), s)).collect())
    } else {
        let stream = parse_score_csv(&text).map_err(|e| match e {
            Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
            Error::InsufficientData(m) => Error::InsufficientData(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(vec![(stem, stream)])
    }
}

fn cmd_report(cfg: EpisodeConfig, inputs: &[PathBuf], out: Option<&Path>, force: bool, stdout: &mut dyn Write) -> Result<()> {
    let mut named = Vec::new();
    for path in inputs {
        named.extend(input_streams(path)?);
    }
    let mut reports = Vec::new();
    let mut labels = Vec::new();
    let mut rates = Vec::new();
    for (k, (name, stream)) in named.iter().enumerate() {
        let curve = rate_curve(stream, cfg.metrics.window)?;
        reports.push(adaptation_report(stream, &cfg.metrics, k as u32, cfg.retries)?);
        labels.push((k as u32, name.clone()));
        rates.push((name, curve));
    }
    let table = report_csv(&reports, &labels)?;
    match out {
        Some(dir) => {
            prepare_out_dir(dir, force)?;
            for (name, curve) in &rates {
                write_atomic(&dir.join(format!("rate-{name}.csv")), rate_csv(curve)?.as_bytes())?;
            }
            write_atomic(&dir.join("report.csv"), table.as_bytes())?;
            for (r, (_, name)) in reports.iter().zip(&labels) {
                print_report(stdout, name, r)?;
            }
        }
        None => write!(stdout, "{table}")?,
    }
    Ok(())
}

/// Runs one parsed invocation. `Ok(false)` means a replay verdict of FAIL.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<bool> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Gen {
            seed,
            out,
            disclose,
            force,
        } => cmd_gen(load_config(config)?, seed, out.as_deref(), disclose, force, stdout)?,
        Command::Run { agent, out, seed, force } => cmd_run(seeded(load_config(config)?, seed), &agent, &out, force, stdout)?,
        Command::Stage1 {
            agent,
            out,
            worlds,
            seed,
            force,
        } => cmd_stage1(seeded(load_config(config)?, seed), &agent, &out, worlds, force, stdout)?,
        Command::Stage2 {
            agents,
            out,
            seed,
            force,
        } => cmd_stage2(seeded(load_config(config)?, seed), &agents, &out, force, stdout)?,
        Command::Replay { trace, laws } => return cmd_replay(&trace, laws, stdout),
        Command::Report { inputs, out, force } => cmd_report(load_config(config)?, &inputs, out.as_deref(), force, stdout)?,
        Command::Agent { kind } => serve_stdio(kind.build().as_mut())?,
    }
    Ok(true)
}

/// Process entry point.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("openworld: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
