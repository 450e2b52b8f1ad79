use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::allocation::RobotId;

use super::{Event, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustPoint {
    pub t: u64,
    pub mean: f64,
    pub variance: f64,
    pub epoch: bool,
}

/// Summary statistics derived from an event log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Tick of the `finished` event, if the run finished.
    pub makespan: Option<u64>,
    pub last_tick: u64,
    pub completions: BTreeMap<RobotId, u32>,
    pub avoided: BTreeMap<RobotId, u32>,
    pub moves: BTreeMap<RobotId, u32>,
    pub requests: u32,
    pub allowed: u32,
    pub denied: u32,
    pub reallocations: u32,
    pub trust: BTreeMap<RobotId, Vec<TrustPoint>>,
}

pub fn metrics(log: &[Record]) -> Metrics {
    let mut m = Metrics::default();
    for r in log {
        m.last_tick = m.last_tick.max(r.t);
        match &r.event {
            Event::Completion { robot, .. } => *m.completions.entry(robot.clone()).or_default() += 1,
            Event::Replan { robot, avoided, .. } => *m.avoided.entry(robot.clone()).or_default() += avoided,
            Event::Move { robot, .. } => *m.moves.entry(robot.clone()).or_default() += 1,
            Event::Request(_) => m.requests += 1,
            Event::Decision { allow, .. } => {
                if *allow {
                    m.allowed += 1;
                } else {
                    m.denied += 1;
                }
            }
            Event::Reallocation { .. } => m.reallocations += 1,
            Event::Belief {
                robot,
                mean,
                variance,
                epoch,
            } => m.trust.entry(robot.clone()).or_default().push(TrustPoint {
                t: r.t,
                mean: *mean,
                variance: *variance,
                epoch: *epoch,
            }),
            Event::Finished { makespan } => m.makespan = Some(*makespan),
            _ => {}
        }
    }
    m
}

#[derive(Serialize)]
struct TrustRow<'a> {
    robot: &'a str,
    t: u64,
    mean: f64,
    variance: f64,
    epoch: bool,
}

/// Trust trajectories as CSV: `robot,t,mean,variance,epoch`.
pub fn write_trust_csv<W: Write>(out: W, m: &Metrics) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (robot, points) in &m.trust {
        for p in points {
            w.serialize(TrustRow {
                robot: robot.as_str(),
                t: p.t,
                mean: p.mean,
                variance: p.variance,
                epoch: p.epoch,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One robot's trust trajectory: `t,mean,variance,epoch`.
pub fn write_robot_trust_csv<W: Write>(out: W, points: &[TrustPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RobotRow<'a> {
    robot: &'a str,
    completions: u32,
    avoided: u32,
    moves: u32,
    final_mean: Option<f64>,
    final_variance: Option<f64>,
}

/// Per-robot counters: `robot,completions,avoided,moves,final_mean,final_variance`.
pub fn write_metrics_csv<W: Write>(out: W, m: &Metrics) -> Result<(), csv::Error> {
    let robots: std::collections::BTreeSet<&RobotId> = m
        .completions
        .keys()
        .chain(m.avoided.keys())
        .chain(m.moves.keys())
        .chain(m.trust.keys())
        .collect();
    let mut w = csv::Writer::from_writer(out);
    for robot in robots {
        let last = m.trust.get(robot).and_then(|p| p.last());
        w.serialize(RobotRow {
            robot: robot.as_str(),
            completions: m.completions.get(robot).copied().unwrap_or(0),
            avoided: m.avoided.get(robot).copied().unwrap_or(0),
            moves: m.moves.get(robot).copied().unwrap_or(0),
            final_mean: last.map(|p| p.mean),
            final_variance: last.map(|p| p.variance),
        })?;
    }
    w.flush()?;
    Ok(())
}
