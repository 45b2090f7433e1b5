//! CSV formats for score streams, rate curves and adaptation reports.
//!
//! Every file opens with a `#` comment naming the format and version.
//! Score streams carry their episode metadata in that line:
//!
//! ```text
//! # openworld-scores v1 episode_len=1152 drift_marks=384;768
//! tick,cumulative_score
//! 0,0
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Aggregate;
use crate::metrics::{AdaptationReport, ScoreStream};
use crate::trace::{EventKind, Trace};

pub const SCORES_MAGIC: &str = "# openworld-scores v1";
pub const RATE_MAGIC: &str = "# openworld-rate v1";
pub const REPORT_MAGIC: &str = "# openworld-report v1";

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn score_csv(stream: &ScoreStream) -> Result<String> {
    let marks: Vec<String> = stream.drift_marks.iter().map(u64::to_string).collect();
    let mut out = format!("{SCORES_MAGIC} episode_len={} drift_marks={}\n", stream.episode_len, marks.join(";"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tick", "cumulative_score"])?;
    for (t, s) in &stream.samples {
        w.serialize((t, s))?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

fn metadata(line: &str, stream: &mut ScoreStream) -> Result<()> {
    for field in line.trim_start_matches(SCORES_MAGIC).split_whitespace() {
        let bad = || Error::Malformed(format!("line 1: bad metadata `{field}`"));
        match field.split_once('=') {
            Some(("episode_len", v)) => stream.episode_len = v.parse().map_err(|_| bad())?,
            Some(("drift_marks", "")) => {}
            Some(("drift_marks", v)) => {
                stream.drift_marks = v.split(';').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?
            }
            _ => return Err(bad()),
        }
    }
    Ok(())
}

/// Parses a score-stream CSV. Files without the metadata line are accepted;
/// their episode length is the last tick and they carry no drift marks.
pub fn parse_score_csv(text: &str) -> Result<ScoreStream> {
    let mut stream = ScoreStream::default();
    let mut has_meta = false;
    if let Some(first) = text.lines().next() {
        if first.starts_with(SCORES_MAGIC) {
            metadata(first, &mut stream)?;
            has_meta = true;
        }
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Malformed(format!("line {line}: {what}"));
        if rec.len() != 2 {
            return Err(bad("expected `tick,cumulative_score`"));
        }
        let t: u64 = rec[0].trim().parse().map_err(|_| bad("tick is not a nonnegative integer"))?;
        let s: f64 = rec[1].trim().parse().map_err(|_| bad("score is not a number"))?;
        if !s.is_finite() {
            return Err(bad("score is not finite"));
        }
        if let Some(&(pt, ps)) = stream.samples.last() {
            if t <= pt {
                return Err(bad("ticks must increase strictly"));
            }
            if s < ps {
                return Err(bad("cumulative score decreases"));
            }
        }
        stream.samples.push((t, s));
    }
    if stream.samples.is_empty() {
        return Err(Error::InsufficientData("score stream has no samples".into()));
    }
    if !has_meta {
        stream.episode_len = stream.samples.last().map_or(0, |s| s.0);
    }
    Ok(stream)
}

/// Rebuilds each agent's score stream from the `score` records of a live or
/// disclosure trace. Agents are those that sensed at least once.
pub fn streams_from_trace(trace: &Trace) -> Result<Vec<(u32, ScoreStream)>> {
    let mut end = None;
    let mut agents = std::collections::BTreeMap::<u32, Vec<(u64, f64)>>::new();
    for e in &trace.events {
        match &e.event {
            EventKind::Sense { agent, .. } => {
                agents.entry(*agent).or_default();
            }
            EventKind::Score { agent, record } => agents.entry(*agent).or_default().push((e.tick, record.s_norm)),
            EventKind::EpisodeEnd {
                episode_len,
                drift_marks,
                ..
            } => end = Some((e.tick, *episode_len, drift_marks.clone())),
            _ => {}
        }
    }
    let Some((last, episode_len, drift_marks)) = end else {
        return Err(Error::InsufficientData("trace has no episode_end record".into()));
    };
    Ok(agents
        .into_iter()
        .map(|(id, scores)| {
            let mut total = 0.0;
            let mut scores = scores.into_iter().peekable();
            let samples = (0..=last)
                .map(|t| {
                    while let Some((_, s)) = scores.next_if(|&(st, _)| st <= t) {
                        total += s;
                    }
                    (t, total)
                })
                .collect();
            let stream = ScoreStream {
                samples,
                drift_marks: drift_marks.clone(),
                episode_len,
            };
            (id, stream)
        })
        .collect())
}

pub fn rate_csv(curve: &[(u64, f64)]) -> Result<String> {
    let mut out = format!("{RATE_MAGIC}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tick", "rate"])?;
    for row in curve {
        w.serialize(row)?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow<'a> {
    agent_id: u32,
    label: &'a str,
    alpha: f64,
    beta: f64,
    gamma: f64,
    i: f64,
    w_alpha: f64,
    w_beta: f64,
    w_gamma: f64,
    lower_bound: bool,
    retries: u32,
}

/// One row per report; `labels` maps agent ids to display names.
pub fn report_csv(reports: &[AdaptationReport], labels: &[(u32, String)]) -> Result<String> {
    let mut out = format!("{REPORT_MAGIC} lower_bound=true subjective=m,c\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        let label = labels.iter().find(|l| l.0 == r.agent_id).map_or("", |l| l.1.as_str());
        w.serialize(ReportRow {
            agent_id: r.agent_id,
            label,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            i: r.i,
            w_alpha: r.weights.alpha,
            w_beta: r.weights.beta,
            w_gamma: r.weights.gamma,
            lower_bound: r.lower_bound,
            retries: r.retries,
        })?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

#[derive(Debug, Serialize)]
struct WorldRow {
    world: String,
    seed: String,
    alpha: f64,
    beta: f64,
    gamma: f64,
    i: f64,
    solved: usize,
    problems: usize,
}

/// Stage-1 table: one row per world plus a trailing `mean` row.
pub fn stage1_csv(worlds: &[(u64, AdaptationReport, usize, usize)], aggregate: &Aggregate) -> Result<String> {
    let mut out = format!("{REPORT_MAGIC} stage=1 lower_bound=true\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    for (k, (seed, r, solved, problems)) in worlds.iter().enumerate() {
        w.serialize(WorldRow {
            world: k.to_string(),
            seed: seed.to_string(),
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            i: r.i,
            solved: *solved,
            problems: *problems,
        })?;
    }
    w.serialize(WorldRow {
        world: "mean".into(),
        seed: String::new(),
        alpha: aggregate.alpha,
        beta: aggregate.beta,
        gamma: aggregate.gamma,
        i: aggregate.i,
        solved: worlds.iter().map(|w| w.2).sum(),
        problems: worlds.iter().map(|w| w.3).sum(),
    })?;
    out.push_str(&finish(w)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_csv_round_trips() {
        let s = ScoreStream {
            samples: vec![(0, 0.0), (1, 0.25), (2, 0.25), (3, 1.0 / 3.0)],
            drift_marks: vec![2],
            episode_len: 3,
        };
        let text = score_csv(&s).unwrap();
        assert!(text.starts_with(SCORES_MAGIC));
        assert_eq!(parse_score_csv(&text).unwrap(), s);
    }

    #[test]
    fn bare_csv_is_accepted() {
        let s = parse_score_csv("tick,cumulative_score\n0,0\n5,1.5\n").unwrap();
        assert_eq!(s.episode_len, 5);
        assert!(s.drift_marks.is_empty());
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_score_csv("tick,cumulative_score\n0,0\n1,2\n2,1\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
        let err = parse_score_csv("tick,cumulative_score\n0,0\nx,1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(matches!(parse_score_csv(""), Err(Error::InsufficientData(_))));
        assert!(matches!(
            parse_score_csv("tick,cumulative_score\n"),
            Err(Error::InsufficientData(_))
        ));
    }
}
