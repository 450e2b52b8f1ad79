//! Grid environment, robot state and scenario files.
//!
//! Coordinates are zero-indexed with `x` the column and `y` the row, origin at
//! the bottom-left, so moving north increases `y`. Sensing and communication
//! use Manhattan distance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{uncovered, RobotId, RobotProfile};
use crate::automata::{Automaton, AutomatonError, AutomatonSpec, Symbol};
use crate::sim::HumanModel;
use crate::trust::{TrustError, TrustParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(i32, i32)", into = "(i32, i32)")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn step(self, dir: Direction) -> Cell {
        let (dx, dy) = dir.delta();
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }
}

impl From<(i32, i32)> for Cell {
    fn from((x, y): (i32, i32)) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for (i32, i32) {
    fn from(c: Cell) -> Self {
        (c.x, c.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    /// Expansion order used wherever ties are broken.
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::N => (0, 1),
            Direction::E => (1, 0),
            Direction::S => (0, -1),
            Direction::W => (-1, 0),
        }
    }

    pub fn between(from: Cell, to: Cell) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| from.step(*d) == to)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("move {dir:?} from {from} is blocked")]
    BlockedMove { from: Cell, dir: Direction },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub width: i32,
    pub height: i32,
    pub obstacles: BTreeSet<Cell>,
    pub stations: BTreeMap<Symbol, Cell>,
    pub sensing_radius: u32,
    pub comm_radius: u32,
}

impl GridWorld {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.obstacles.contains(&c)
    }

    pub fn station(&self, symbol: &Symbol) -> Option<Cell> {
        self.stations.get(symbol).copied()
    }

    pub fn station_at(&self, c: Cell) -> Option<&Symbol> {
        self.stations.iter().find(|(_, &cell)| cell == c).map(|(s, _)| s)
    }

    pub fn area(&self) -> u64 {
        (self.width as u64) * (self.height as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryModel {
    pub move_cost: f64,
    pub low_threshold: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel {
            move_cost: 0.005,
            low_threshold: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub profile: RobotProfile,
    pub cell: Cell,
    pub battery: f64,
    pub battery_low: bool,
    pub battery_model: BatteryModel,
    pub known_obstacles: BTreeSet<Cell>,
    pub next_cell: Option<Cell>,
}

impl RobotState {
    pub fn new(profile: RobotProfile, cell: Cell, battery: f64, battery_model: BatteryModel) -> Self {
        RobotState {
            profile,
            cell,
            battery,
            battery_low: battery < battery_model.low_threshold,
            battery_model,
            known_obstacles: BTreeSet::new(),
            next_cell: None,
        }
    }

    pub fn id(&self) -> &RobotId {
        &self.profile.id
    }
}

/// Ground-truth obstacles within sensing range of the robot.
pub fn sense(world: &GridWorld, robot: &RobotState) -> BTreeSet<Cell> {
    sense_at(world, robot.cell, world.sensing_radius)
}

pub fn sense_at(world: &GridWorld, at: Cell, radius: u32) -> BTreeSet<Cell> {
    world
        .obstacles
        .iter()
        .filter(|o| o.manhattan(at) <= radius)
        .copied()
        .collect()
}

/// What one robot learns from its neighbors in one communication round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborUpdate {
    pub obstacles: BTreeSet<Cell>,
    pub neighbors: Vec<RobotId>,
    pub next_cells: BTreeSet<Cell>,
}

/// One pairwise exchange round among robots within communication range,
/// computed from the robots' state before the round.
pub fn exchange_neighbors(world: &GridWorld, robots: &[RobotState]) -> Vec<NeighborUpdate> {
    let mut updates = vec![NeighborUpdate::default(); robots.len()];
    for i in 0..robots.len() {
        for j in 0..robots.len() {
            if i == j || robots[i].cell.manhattan(robots[j].cell) > world.comm_radius {
                continue;
            }
            let u = &mut updates[i];
            u.neighbors.push(robots[j].id().clone());
            u.obstacles
                .extend(robots[j].known_obstacles.difference(&robots[i].known_obstacles).copied());
            if let Some(c) = robots[j].next_cell {
                u.next_cells.insert(c);
            }
        }
    }
    updates
}

/// Moves the robot one cell, draining its battery.
pub fn apply_move(world: &GridWorld, robot: &RobotState, dir: Direction) -> Result<RobotState, WorldError> {
    let target = robot.cell.step(dir);
    if !world.is_free(target) {
        return Err(WorldError::BlockedMove { from: robot.cell, dir });
    }
    let mut next = robot.clone();
    next.cell = target;
    next.battery = (robot.battery - robot.battery_model.move_cost).max(0.0);
    next.battery_low = next.battery < robot.battery_model.low_threshold;
    Ok(next)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("coverage violation: no robot can perform {}", .0.iter().map(Symbol::as_str).collect::<Vec<_>>().join(", "))]
    CoverageViolation(Vec<Symbol>),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("subtask {index}: {source}")]
    Automaton {
        index: usize,
        #[source]
        source: AutomatonError,
    },
    #[error(transparent)]
    Trust(#[from] TrustError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: i32,
    pub height: i32,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    pub stations: BTreeMap<Symbol, Cell>,
    #[serde(default = "default_radius")]
    pub sensing_radius: u32,
    #[serde(default = "default_radius")]
    pub comm_radius: u32,
}

fn default_radius() -> u32 {
    2
}

fn default_battery() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub id: RobotId,
    pub start: Cell,
    pub capabilities: Vec<Symbol>,
    #[serde(default = "default_battery")]
    pub battery: f64,
}

/// The scenario document as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub battery: BatteryModel,
    pub robots: Vec<RobotConfig>,
    pub subtasks: Vec<AutomatonSpec>,
    #[serde(default)]
    pub trust: TrustParams,
    #[serde(default)]
    pub human: HumanModel,
}

impl ScenarioConfig {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// A validated scenario, ready to start a session.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub world: GridWorld,
    pub robots: Vec<RobotState>,
    pub subtasks: Vec<Automaton>,
}

impl Scenario {
    pub fn profiles(&self) -> Vec<RobotProfile> {
        self.robots.iter().map(|r| r.profile.clone()).collect()
    }
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    validate_scenario(config)
}

pub fn validate_scenario(config: ScenarioConfig) -> Result<Scenario, ScenarioError> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::SchemaVersion(config.schema_version));
    }
    let g = &config.grid;
    if g.width <= 0 || g.height <= 0 {
        return Err(ScenarioError::Invalid("grid dimensions must be positive".into()));
    }
    let world = GridWorld {
        width: g.width,
        height: g.height,
        obstacles: g.obstacles.iter().copied().collect(),
        stations: g.stations.clone(),
        sensing_radius: g.sensing_radius,
        comm_radius: g.comm_radius,
    };
    for o in &world.obstacles {
        if !world.in_bounds(*o) {
            return Err(ScenarioError::Placement(format!("obstacle {o} is out of bounds")));
        }
    }
    let mut station_cells = BTreeMap::new();
    for (sym, &cell) in &world.stations {
        if !world.in_bounds(cell) {
            return Err(ScenarioError::Placement(format!("station `{sym}` at {cell} is out of bounds")));
        }
        if world.obstacles.contains(&cell) {
            return Err(ScenarioError::Placement(format!("station `{sym}` at {cell} is on an obstacle")));
        }
        if let Some(other) = station_cells.insert(cell, sym) {
            return Err(ScenarioError::Placement(format!("stations `{other}` and `{sym}` share {cell}")));
        }
    }

    config.trust.validate()?;
    let bm = config.battery;
    if !(bm.move_cost >= 0.0) || !(0.0..=1.0).contains(&bm.low_threshold) {
        return Err(ScenarioError::Invalid("battery model out of range".into()));
    }

    let mut robots = Vec::with_capacity(config.robots.len());
    let mut ids = BTreeSet::new();
    for rc in &config.robots {
        if !ids.insert(rc.id.clone()) {
            return Err(ScenarioError::Invalid(format!("duplicate robot id `{}`", rc.id)));
        }
        if rc.capabilities.is_empty() {
            return Err(ScenarioError::Invalid(format!("robot `{}` has no capabilities", rc.id)));
        }
        if !world.in_bounds(rc.start) || world.obstacles.contains(&rc.start) {
            return Err(ScenarioError::Placement(format!(
                "robot `{}` starts at {} which is blocked or out of bounds",
                rc.id, rc.start
            )));
        }
        if !(0.0..=1.0).contains(&rc.battery) {
            return Err(ScenarioError::Invalid(format!("robot `{}` battery must lie in [0, 1]", rc.id)));
        }
        let profile = RobotProfile {
            id: rc.id.clone(),
            capabilities: rc.capabilities.iter().cloned().collect(),
        };
        robots.push(RobotState::new(profile, rc.start, rc.battery, bm));
    }
    if robots.is_empty() {
        return Err(ScenarioError::Invalid("scenario has no robots".into()));
    }

    let subtasks = config
        .subtasks
        .iter()
        .enumerate()
        .map(|(index, spec)| Automaton::parse(spec).map_err(|source| ScenarioError::Automaton { index, source }))
        .collect::<Result<Vec<_>, _>>()?;
    if subtasks.is_empty() {
        return Err(ScenarioError::Invalid("scenario has no subtasks".into()));
    }
    let mut seen = BTreeSet::new();
    for a in &subtasks {
        for s in a.alphabet() {
            if !seen.insert(s.clone()) {
                return Err(ScenarioError::Invalid(format!("symbol `{s}` appears in more than one subtask")));
            }
            if !world.stations.contains_key(s) {
                return Err(ScenarioError::Invalid(format!("symbol `{s}` has no station")));
            }
        }
    }
    let profiles: Vec<RobotProfile> = robots.iter().map(|r| r.profile.clone()).collect();
    let missing = uncovered(&seen, &profiles);
    if !missing.is_empty() {
        return Err(ScenarioError::CoverageViolation(missing));
    }

    Ok(Scenario {
        config,
        world,
        robots,
        subtasks,
    })
}

/// The bundled five-robot, three-subtask scenario on a 10×10 grid.
///
/// Obstacle positions are representative, not a reproduction of any published layout.
pub const PAPER_5X3: &str = include_str!("../scenarios/paper_5x3.scn");
