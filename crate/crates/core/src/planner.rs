//! Per-robot symbolic motion planning.
//!
//! A robot's grid is abstracted as a transition system; its motion
//! specification is a small automaton over reachability phases ("near the
//! predecessor's station", then "at my station"). The cheapest accepted run of
//! their product is the motion plan.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::Symbol;
use crate::world::{Cell, Direction, GridWorld, RobotState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no plan satisfies the motion specification")]
    Unreachable,
    #[error("no station for symbol `{0}`")]
    UnknownStation(Symbol),
    #[error("plan start {start} differs from transition system start {ts_start}")]
    StartMismatch { start: Cell, ts_start: Cell },
}

/// Grid abstraction of one robot: free cells, 4-connected moves, station labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSystem {
    pub width: i32,
    pub height: i32,
    /// Known obstacles plus cells reserved by neighbors this cycle.
    pub blocked: BTreeSet<Cell>,
    pub start: Cell,
    pub labels: BTreeMap<Cell, Symbol>,
    pub move_cost: u32,
}

impl TransitionSystem {
    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height && (c == self.start || !self.blocked.contains(&c))
    }

    pub fn nodes(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Cell::new(x, y)))
            .filter(|&c| self.contains(c))
            .collect()
    }

    /// Successors in N, E, S, W order.
    pub fn moves(&self, from: Cell) -> impl Iterator<Item = (Direction, Cell)> + '_ {
        Direction::ALL
            .into_iter()
            .map(move |d| (d, from.step(d)))
            .filter(|&(_, c)| self.contains(c))
    }

    pub fn move_count(&self) -> usize {
        self.nodes().into_iter().map(|c| self.moves(c).count()).sum()
    }
}

/// Transition system for `robot`, excluding its known obstacles and the cells
/// neighbors announced as their next position.
pub fn build_transition_system(world: &GridWorld, robot: &RobotState, reserved: &BTreeSet<Cell>) -> TransitionSystem {
    TransitionSystem {
        width: world.width,
        height: world.height,
        blocked: robot.known_obstacles.union(reserved).copied().collect(),
        start: robot.cell,
        labels: world.stations.iter().map(|(s, &c)| (c, s.clone())).collect(),
        move_cost: 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    /// Within `radius` of the station of `symbol`.
    Near { symbol: Symbol, station: Cell, radius: u32 },
    /// On the station of `symbol`.
    At { symbol: Symbol, station: Cell },
}

impl Phase {
    pub fn holds_at(&self, c: Cell) -> bool {
        match self {
            Phase::Near { station, radius, .. } => c.manhattan(*station) <= *radius,
            Phase::At { station, .. } => c == *station,
        }
    }
}

/// Motion specification: phases satisfied strictly in order. Automaton state `i`
/// means the first `i` phases are done; the last state is the only marked one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecAutomaton {
    pub phases: Vec<Phase>,
}

impl SpecAutomaton {
    pub fn marked(&self) -> usize {
        self.phases.len()
    }

    /// Advances through every phase that holds at `c`.
    pub fn advance(&self, mut state: usize, c: Cell) -> usize {
        while state < self.phases.len() && self.phases[state].holds_at(c) {
            state += 1;
        }
        state
    }

    pub fn own_station(&self) -> Option<Cell> {
        match self.phases.last()? {
            Phase::At { station, .. } => Some(*station),
            Phase::Near { .. } => None,
        }
    }

    /// Drops the verification phase, keeping only the final "at station" goal.
    pub fn goal_only(&self) -> SpecAutomaton {
        SpecAutomaton {
            phases: self.phases.last().cloned().into_iter().collect(),
        }
    }
}

/// Two-phase spec (verify predecessor, then go to own station) or a single
/// phase when the action has no predecessor.
pub fn build_spec(world: &GridWorld, symbol: &Symbol, predecessor: Option<&Symbol>) -> Result<SpecAutomaton, PlanError> {
    let station = |s: &Symbol| world.station(s).ok_or_else(|| PlanError::UnknownStation(s.clone()));
    let mut phases = Vec::new();
    if let Some(p) = predecessor {
        phases.push(Phase::Near {
            symbol: p.clone(),
            station: station(p)?,
            radius: world.sensing_radius,
        });
    }
    phases.push(Phase::At {
        symbol: symbol.clone(),
        station: station(symbol)?,
    });
    Ok(SpecAutomaton { phases })
}

/// Explicit product of a transition system with a spec automaton.
#[derive(Clone, Debug)]
pub struct ProductAutomaton {
    pub states: Vec<(Cell, usize)>,
    pub transitions: Vec<(usize, Direction, usize, u32)>,
    pub initial: usize,
    pub finals: BTreeSet<usize>,
    outgoing: Vec<Vec<usize>>,
}

impl ProductAutomaton {
    pub fn build(ts: &TransitionSystem, spec: &SpecAutomaton) -> Self {
        let nodes = ts.nodes();
        let levels = spec.marked() + 1;
        let mut index = HashMap::new();
        let mut states = Vec::with_capacity(nodes.len() * levels);
        for &c in &nodes {
            for x in 0..levels {
                index.insert((c, x), states.len());
                states.push((c, x));
            }
        }
        let mut transitions = Vec::new();
        let mut outgoing = vec![Vec::new(); states.len()];
        // Occupying the own station performs the action, so it may only be
        // entered as the final step.
        let own = spec.own_station();
        for (i, &(c, x)) in states.iter().enumerate() {
            for (d, next) in ts.moves(c) {
                let x2 = spec.advance(x, next);
                if Some(next) == own && x2 < spec.marked() {
                    continue;
                }
                outgoing[i].push(transitions.len());
                transitions.push((i, d, index[&(next, x2)], ts.move_cost));
            }
        }
        let initial = index[&(ts.start, spec.advance(0, ts.start))];
        let finals = states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.1 == spec.marked())
            .map(|(i, _)| i)
            .collect();
        ProductAutomaton {
            states,
            transitions,
            initial,
            finals,
            outgoing,
        }
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph product {\n");
        for (i, (c, x)) in self.states.iter().enumerate() {
            let shape = if self.finals.contains(&i) { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  p{i} [shape={shape}, label=\"{c}/{x}\"];");
        }
        for (from, d, to, _) in &self.transitions {
            let _ = writeln!(out, "  p{from} -> p{to} [label=\"{d:?}\"];");
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub cells: Vec<Cell>,
    pub cost: u32,
}

impl MotionPlan {
    /// Cells strictly after `position`; the whole plan if `position` is not on it.
    pub fn remaining_after(&self, position: Cell) -> &[Cell] {
        match self.cells.iter().position(|&c| c == position) {
            Some(i) => &self.cells[i + 1..],
            None => &self.cells,
        }
    }

    pub fn next_after(&self, position: Cell) -> Option<Cell> {
        self.remaining_after(position).first().copied()
    }

    pub fn goal(&self) -> Option<Cell> {
        self.cells.last().copied()
    }
}

/// Minimum-cost accepted run of the product, projected onto cells.
pub fn plan(ts: &TransitionSystem, spec: &SpecAutomaton) -> Result<MotionPlan, PlanError> {
    let product = ProductAutomaton::build(ts, spec);
    let n = product.states.len();
    let mut dist = vec![u32::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    dist[product.initial] = 0;
    heap.push(Reverse((0u32, seq, product.initial)));
    while let Some(Reverse((d, _, s))) = heap.pop() {
        if d > dist[s] {
            continue;
        }
        if product.finals.contains(&s) {
            let mut cells = vec![product.states[s].0];
            let mut cur = s;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push(product.states[cur].0);
            }
            cells.reverse();
            return Ok(MotionPlan { cells, cost: d });
        }
        for &t in &product.outgoing[s] {
            let (_, _, to, w) = product.transitions[t];
            let nd = d + w;
            if nd < dist[to] {
                dist[to] = nd;
                parent[to] = s;
                seq += 1;
                heap.push(Reverse((nd, seq, to)));
            }
        }
    }
    Err(PlanError::Unreachable)
}

/// Re-plans from `position` if any newly known obstacle lies on the rest of
/// `current`; returns the plan and how many such obstacles were avoided.
pub fn replan(
    current: &MotionPlan,
    position: Cell,
    newly_known: &BTreeSet<Cell>,
    ts: &TransitionSystem,
    spec: &SpecAutomaton,
) -> Result<(MotionPlan, u32), PlanError> {
    let avoided = current
        .remaining_after(position)
        .iter()
        .filter(|c| newly_known.contains(c))
        .count() as u32;
    if avoided == 0 {
        return Ok((current.clone(), 0));
    }
    if ts.start != position {
        return Err(PlanError::StartMismatch {
            start: position,
            ts_start: ts.start,
        });
    }
    Ok((plan(ts, spec)?, avoided))
}
