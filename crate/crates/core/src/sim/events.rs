use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationPath, RobotId, SingleAction};
use crate::automata::{ResidualLanguage, Symbol};
use crate::world::Cell;

use super::DecisionSource;

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Allocation {
        epoch: u32,
        path: AllocationPath,
    },
    Sense {
        robot: RobotId,
        cells: Vec<Cell>,
    },
    Exchange {
        robot: RobotId,
        neighbors: Vec<RobotId>,
        cells: Vec<Cell>,
    },
    Plan {
        robot: RobotId,
        symbol: Symbol,
        cells: Vec<Cell>,
    },
    Replan {
        robot: RobotId,
        avoided: u32,
        cells: Vec<Cell>,
    },
    Yield {
        robot: RobotId,
        reserved: Cell,
    },
    Move {
        robot: RobotId,
        from: Cell,
        to: Cell,
        battery: f64,
    },
    Blocked {
        robot: RobotId,
        cell: Cell,
    },
    BatteryLow {
        robot: RobotId,
        battery: f64,
    },
    Verified {
        robot: RobotId,
        symbol: Symbol,
        predecessor: Symbol,
        cell: Cell,
    },
    Wait {
        robot: RobotId,
        symbol: Symbol,
        reason: WaitReason,
    },
    Completion {
        robot: RobotId,
        symbol: Symbol,
        subtask: usize,
        cell: Cell,
    },
    Belief {
        robot: RobotId,
        mean: f64,
        variance: f64,
        epoch: bool,
    },
    Request(RequestRecord),
    Decision {
        request: u64,
        allow: bool,
        source: DecisionSource,
    },
    Reallocation {
        epoch: u32,
        path: AllocationPath,
    },
    Finished {
        makespan: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitReason {
    /// In the verification region, predecessor action not completed yet.
    Predecessor,
    /// No plan currently reaches the goal.
    NoPath,
    /// Every detour around a neighbor's reserved cell failed.
    Reserved,
}

/// A human inquiry raised after an action completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub robot: RobotId,
    pub completed: Symbol,
    pub residuals: Vec<ResidualLanguage>,
    pub pinned: Vec<SingleAction>,
    pub proposed: AllocationPath,
    pub trust: BTreeMap<RobotId, f64>,
    /// Triggering robot's expected trust now and one update earlier.
    pub trust_now: f64,
    pub trust_prev: f64,
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[Record]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[Record]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Record>, serde_json::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
