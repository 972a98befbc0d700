use super::episode::{CycleTrace, EpisodeTrace};
use super::ActionRecord;
use crate::env::{EnvError, EnvState, Outcome};
use crate::scenario::ScenarioSpec;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

pub const TRACE_VERSION: u32 = 1;

/// One line of the newline-delimited trace log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Header {
        version: u32,
        spec: ScenarioSpec,
        seed: u64,
        initial_hash: String,
    },
    Action(ActionRecord),
    Cycle {
        cycle: u64,
        hash: String,
    },
    End {
        outcome: Outcome,
        cycles: u64,
    },
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("hash mismatch at {at}: trace {expected}, replay {got}")]
    Mismatch { at: String, expected: String, got: String },
    #[error("outcome mismatch: trace {expected:?}, replay {got:?}")]
    Outcome { expected: Outcome, got: Option<Outcome> },
}

impl ReplayError {
    /// Whether the trace disagrees with the simulation, as opposed to being unreadable.
    pub fn is_verification(&self) -> bool {
        matches!(self, ReplayError::Mismatch { .. } | ReplayError::Outcome { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayReport {
    pub cycles: u64,
    pub records: usize,
    pub outcome: Outcome,
}

pub fn write_trace<W: Write>(trace: &EpisodeTrace, mut w: W) -> std::io::Result<()> {
    let mut line = |l: &TraceLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")
    };
    line(&TraceLine::Header {
        version: TRACE_VERSION,
        spec: trace.spec.clone(),
        seed: trace.seed,
        initial_hash: trace.initial_hash.clone(),
    })?;
    for c in &trace.cycles {
        for r in &c.records {
            line(&TraceLine::Action(r.clone()))?;
        }
        line(&TraceLine::Cycle {
            cycle: c.cycle,
            hash: c.hash.clone(),
        })?;
    }
    line(&TraceLine::End {
        outcome: trace.outcome,
        cycles: trace.cycles.len() as u64,
    })
}

pub fn read_trace<R: BufRead>(r: R) -> Result<EpisodeTrace, ReplayError> {
    let parse_err = |line: usize, msg: &str| ReplayError::Parse { line, msg: msg.into() };
    let mut header = None;
    let mut cycles = Vec::new();
    let mut pending = Vec::new();
    let mut end = None;
    for (i, text) in r.lines().enumerate() {
        let n = i + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        if end.is_some() {
            return Err(parse_err(n, "content after end line"));
        }
        let line: TraceLine = serde_json::from_str(&text).map_err(|e| parse_err(n, &e.to_string()))?;
        match line {
            TraceLine::Header {
                version,
                spec,
                seed,
                initial_hash,
            } => {
                if header.is_some() || n != 1 {
                    return Err(parse_err(n, "header must be the first line"));
                }
                if version != TRACE_VERSION {
                    return Err(parse_err(n, &format!("unsupported trace version {version}")));
                }
                header = Some((spec, seed, initial_hash));
            }
            _ if header.is_none() => return Err(parse_err(n, "missing header")),
            TraceLine::Action(rec) => pending.push(rec),
            TraceLine::Cycle { cycle, hash } => cycles.push(CycleTrace {
                cycle,
                records: std::mem::take(&mut pending),
                hash,
            }),
            TraceLine::End { outcome, cycles: count } => {
                if count != cycles.len() as u64 || !pending.is_empty() {
                    return Err(parse_err(n, "end line does not match the cycles read"));
                }
                end = Some(outcome);
            }
        }
    }
    let (spec, seed, initial_hash) = header.ok_or_else(|| parse_err(0, "empty trace"))?;
    let outcome = end.ok_or_else(|| parse_err(0, "missing end line"))?;
    Ok(EpisodeTrace {
        spec,
        seed,
        initial_hash,
        cycles,
        outcome,
    })
}

/// Re-simulates a trace from its seed and recorded actions, checking every hash.
pub fn replay_trace(trace: &EpisodeTrace) -> Result<ReplayReport, ReplayError> {
    let mismatch = |at: String, expected: &str, got: String| {
        if expected == got {
            Ok(())
        } else {
            Err(ReplayError::Mismatch {
                at,
                expected: expected.to_string(),
                got,
            })
        }
    };
    let mut env = EnvState::create(&trace.spec, trace.seed)?;
    env.detect_all();
    mismatch("start".into(), &trace.initial_hash, env.state_hash())?;
    let mut records = 0;
    for c in &trace.cycles {
        for r in &c.records {
            env.set_waypoint(r.agent, r.waypoint)?;
            if let Some(a) = r.action {
                env.step_agent(r.agent, a)?;
            }
            mismatch(
                format!("cycle {} agent {}", r.cycle, r.agent),
                &r.state_hash,
                env.state_hash(),
            )?;
            records += 1;
        }
        env.end_cycle();
        mismatch(format!("end of cycle {}", c.cycle), &c.hash, env.state_hash())?;
    }
    let got = env
        .outcome()
        .or((env.cycle >= trace.spec.max_cycles).then_some(Outcome::CycleCap));
    if got != Some(trace.outcome) {
        return Err(ReplayError::Outcome {
            expected: trace.outcome,
            got,
        });
    }
    Ok(ReplayReport {
        cycles: env.cycle,
        records,
        outcome: trace.outcome,
    })
}
