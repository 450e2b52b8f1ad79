//! Closed-loop simulation: allocation, motion, trust filtering and human inquiries.
//!
//! A session advances in discrete ticks. Each tick every robot senses, the
//! robots exchange obstacle maps with neighbors, then each robot in id order
//! verifies, re-plans, moves and possibly completes its current action, and
//! its trust belief takes one filter step. Every completion queues a
//! reallocation request; while a request is pending the clock is frozen until
//! a decision arrives.

mod events;
mod human;
mod metrics;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{
    resynthesize, AllocationAutomaton, AllocationError, AllocationPath, RobotId, RobotProfile, SingleAction,
    TrustSnapshot,
};
use crate::automata::{AutomatonError, ResidualLanguage, Symbol};
use crate::planner::{build_spec, build_transition_system, plan, replan, MotionPlan, PlanError, SpecAutomaton};
use crate::trust::{
    allocation_influence, env_workload, filter_step, performance_update, safety_coefficient, supervision_workload,
    HumanObservation, Influence, TrustBelief, TrustError, TrustFactors, TrustParams,
};
use crate::world::{apply_move, exchange_neighbors, sense, Cell, Direction, GridWorld, RobotState, Scenario};

pub use events::{read_jsonl, to_jsonl, write_jsonl, Event, Record, RequestRecord, WaitReason};
pub use human::{DecisionSource, HumanModel};
pub use metrics::{metrics, write_metrics_csv, write_robot_trust_csv, write_trust_csv, Metrics, TrustPoint};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("session is finished")]
    SessionFinished,
    #[error("a reallocation decision is pending")]
    DecisionPending,
    #[error("no reallocation request is pending")]
    NoPendingRequest,
    #[error("no progress for {idle} ticks (t={t})")]
    Deadlock { t: u64, idle: u64 },
    #[error("tick limit {0} reached")]
    TickLimit(u64),
    #[error("the interactive human model cannot answer automatically")]
    InteractiveHuman,
    #[error("replay diverged at record {index}")]
    ReplayDiverged { index: usize },
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// One assigned action with the action that must be verified before it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub symbol: Symbol,
    pub subtask: usize,
    pub predecessor: Option<Symbol>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveTask {
    pub task: Task,
    pub spec: SpecAutomaton,
    /// True once the predecessor was seen completed (always true without one).
    pub verified: bool,
    pub plan: Option<MotionPlan>,
    /// Ticks spent on this task.
    pub effort: u32,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub state: RobotState,
    pub belief: TrustBelief,
    /// Factors of the latest update, the "previous" side of the next one.
    pub factors: TrustFactors,
    /// Influence of the latest accepted allocation.
    pub influence: f64,
    pub active: Option<ActiveTask>,
    pub queue: VecDeque<Task>,
    pub completions: u32,
    pub avoided: u32,
    prev_mean: f64,
}

impl Agent {
    pub fn id(&self) -> &RobotId {
        self.state.id()
    }

    fn idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub id: RobotId,
    pub cell: Cell,
    pub battery: f64,
    pub battery_low: bool,
    pub trust_mean: f64,
    pub trust_variance: f64,
    pub trust_point: f64,
    pub active: Option<Task>,
    pub verified: bool,
    pub plan: Vec<Cell>,
    pub queue: Vec<Task>,
    pub completions: u32,
    pub avoided: u32,
    pub known_obstacles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewOptions {
    /// Show ground-truth obstacles instead of what the robots know.
    pub reveal: bool,
    /// Include every robot's full bin vector.
    pub bins: bool,
    /// Number of most recent log records to include.
    pub recent: usize,
}

/// Serializable picture of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub t: u64,
    pub epoch: u32,
    pub finished: bool,
    pub width: i32,
    pub height: i32,
    pub stations: BTreeMap<Symbol, Cell>,
    /// Ground truth when revealed, otherwise the union of robots' knowledge.
    pub obstacles: BTreeSet<Cell>,
    pub robots: Vec<RobotView>,
    pub allocation: AllocationPath,
    pub completed: Vec<Vec<Symbol>>,
    pub residuals: Vec<ResidualLanguage>,
    pub pending: Option<RequestRecord>,
    pub recent: Vec<Record>,
}

#[derive(Default)]
struct Outcome {
    moved: bool,
    completed: Option<Symbol>,
    avoided: u32,
}

#[derive(Clone, Debug)]
pub struct Session {
    scenario: Scenario,
    profiles: Vec<RobotProfile>,
    agents: Vec<Agent>,
    initial: Vec<ResidualLanguage>,
    completed: Vec<Vec<Symbol>>,
    allocation: AllocationPath,
    epoch: u32,
    clock: u64,
    pending: Option<RequestRecord>,
    triggers: VecDeque<(RobotId, Symbol)>,
    human: HumanModel,
    script_pos: usize,
    rng: ChaCha8Rng,
    seed: u64,
    log: Vec<Record>,
    idle: u64,
    finished: bool,
    next_request: u64,
}

impl Session {
    /// Starts with the scenario's own human model and seed.
    pub fn start(scenario: Scenario) -> Result<Self, SimError> {
        let human = scenario.config.human.clone();
        let seed = scenario.config.seed;
        Session::with_options(scenario, human, seed)
    }

    pub fn with_options(mut scenario: Scenario, human: HumanModel, seed: u64) -> Result<Self, SimError> {
        scenario.robots.sort_by(|a, b| a.id().cmp(b.id()));
        let profiles = scenario.profiles();
        let params = scenario.config.trust.clone();
        let initial = scenario
            .subtasks
            .iter()
            .map(|a| a.initial_residual())
            .collect::<Result<Vec<_>, _>>()?;
        let agents = scenario
            .robots
            .iter()
            .map(|r| {
                let belief = TrustBelief::from_prior(&params.prior, params.bins);
                Agent {
                    prev_mean: belief.mean(),
                    state: r.clone(),
                    belief,
                    factors: TrustFactors {
                        safety: safety_coefficient(&r.profile, r.battery_low),
                        ..TrustFactors::default()
                    },
                    influence: 0.0,
                    active: None,
                    queue: VecDeque::new(),
                    completions: 0,
                    avoided: 0,
                }
            })
            .collect();
        let mut s = Session {
            completed: vec![Vec::new(); initial.len()],
            scenario,
            profiles,
            agents,
            initial,
            allocation: AllocationPath::empty(),
            epoch: 0,
            clock: 0,
            pending: None,
            triggers: VecDeque::new(),
            human,
            script_pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            log: Vec::new(),
            idle: 0,
            finished: false,
            next_request: 0,
        };

        let world = s.scenario.world.clone();
        for i in 0..s.agents.len() {
            let seen = sense(&world, &s.agents[i].state);
            s.agents[i].factors.env_workload = env_workload(seen.len() as u32, &params);
            if !seen.is_empty() {
                s.emit(Event::Sense {
                    robot: s.agents[i].id().clone(),
                    cells: seen.iter().copied().collect(),
                });
            }
            s.agents[i].state.known_obstacles = seen;
        }

        let psi = AllocationAutomaton::synthesize(&s.scenario.subtasks, &s.profiles)?;
        let path = psi.max_trust_path(&s.trust_snapshot()?)?;
        s.emit(Event::Allocation {
            epoch: 0,
            path: path.clone(),
        });
        s.allocation = path;
        s.adopt()?;
        s.epoch_update(None)?;
        s.plan_missing(&world)?;
        s.check_finished();
        Ok(s)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn params(&self) -> &TrustParams {
        &self.scenario.config.trust
    }

    pub fn human(&self) -> &HumanModel {
        &self.human
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, id: &RobotId) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id() == id)
    }

    pub fn allocation(&self) -> &AllocationPath {
        &self.allocation
    }

    pub fn completed(&self) -> &[Vec<Symbol>] {
        &self.completed
    }

    pub fn pending(&self) -> Option<&RequestRecord> {
        self.pending.as_ref()
    }

    pub fn log(&self) -> &[Record] {
        &self.log
    }

    /// Remaining language of every subtask given the completed actions.
    pub fn residuals(&self) -> Result<Vec<ResidualLanguage>, SimError> {
        self.initial
            .iter()
            .zip(&self.completed)
            .map(|(r, done)| done.iter().try_fold(r.clone(), |r, s| r.derivative(s)))
            .collect::<Result<_, _>>()
            .map_err(SimError::from)
    }

    /// Point estimates of every robot's trust.
    pub fn trust_snapshot(&self) -> Result<TrustSnapshot, SimError> {
        let which = self.params().point_estimate;
        Ok(TrustSnapshot::new(
            self.agents.iter().map(|a| (a.id().clone(), a.belief.point(which))).collect(),
        )?)
    }

    pub fn view(&self, opts: ViewOptions) -> SessionView {
        let world = &self.scenario.world;
        let obstacles = if opts.reveal {
            world.obstacles.clone()
        } else {
            self.agents
                .iter()
                .flat_map(|a| a.state.known_obstacles.iter().copied())
                .collect()
        };
        let which = self.params().point_estimate;
        SessionView {
            t: self.clock,
            epoch: self.epoch,
            finished: self.finished,
            width: world.width,
            height: world.height,
            stations: world.stations.clone(),
            obstacles,
            robots: self
                .agents
                .iter()
                .map(|a| RobotView {
                    id: a.id().clone(),
                    cell: a.state.cell,
                    battery: a.state.battery,
                    battery_low: a.state.battery_low,
                    trust_mean: a.belief.mean(),
                    trust_variance: a.belief.variance(),
                    trust_point: a.belief.point(which),
                    active: a.active.as_ref().map(|t| t.task.clone()),
                    verified: a.active.as_ref().is_some_and(|t| t.verified),
                    plan: a
                        .active
                        .as_ref()
                        .and_then(|t| t.plan.as_ref())
                        .map(|p| p.cells.clone())
                        .unwrap_or_default(),
                    queue: a.queue.iter().cloned().collect(),
                    completions: a.completions,
                    avoided: a.avoided,
                    known_obstacles: a.state.known_obstacles.len(),
                    belief: opts.bins.then(|| a.belief.probabilities().to_vec()),
                })
                .collect(),
            allocation: self.allocation.clone(),
            completed: self.completed.clone(),
            residuals: self.residuals().unwrap_or_default(),
            pending: self.pending.clone(),
            recent: self.log[self.log.len().saturating_sub(opts.recent)..].to_vec(),
        }
    }

    fn emit(&mut self, event: Event) {
        self.log.push(Record { t: self.clock, event });
    }

    fn index_of(&self, id: &RobotId) -> usize {
        self.agents
            .iter()
            .position(|a| a.id() == id)
            .expect("allocation only names scenario robots")
    }

    fn make_active(&self, task: Task) -> Result<ActiveTask, SimError> {
        let spec = build_spec(&self.scenario.world, &task.symbol, task.predecessor.as_ref())?;
        Ok(ActiveTask {
            verified: task.predecessor.is_none(),
            task,
            spec,
            plan: None,
            effort: 0,
        })
    }

    /// Distributes the current allocation into per-robot task queues. A robot
    /// whose current task heads its new queue keeps its progress on it.
    fn adopt(&mut self) -> Result<(), SimError> {
        let mut seq: Vec<Vec<Symbol>> = self.completed.clone();
        let mut queues: Vec<VecDeque<Task>> = vec![VecDeque::new(); self.agents.len()];
        for (_, a) in self.allocation.assignments() {
            let predecessor = seq[a.subtask].last().cloned();
            seq[a.subtask].push(a.symbol.clone());
            let i = self.index_of(&a.robot);
            queues[i].push_back(Task {
                symbol: a.symbol,
                subtask: a.subtask,
                predecessor,
            });
        }
        for (i, mut queue) in queues.into_iter().enumerate() {
            let keep = matches!((&self.agents[i].active, queue.front()), (Some(cur), Some(head)) if &cur.task == head);
            let active = if keep {
                queue.pop_front();
                self.agents[i].active.take()
            } else {
                queue.pop_front().map(|t| self.make_active(t)).transpose()?
            };
            self.agents[i].active = active;
            self.agents[i].queue = queue;
        }
        Ok(())
    }

    /// Reallocation epoch: influence and supervision factors from the current
    /// allocation, one filter step per robot, evidence for the triggering robot.
    fn epoch_update(&mut self, trigger: Option<(&RobotId, bool)>) -> Result<(), SimError> {
        let params = self.params().clone();
        let n = self.agents.len();
        let active: BTreeSet<RobotId> = self.allocation.assignments().map(|(_, a)| a.robot).collect();
        for i in 0..n {
            let profile = self.profiles[i].clone();
            let ac = allocation_influence(&self.allocation, &profile, n, &params);
            let activated = active.contains(&profile.id);
            let a = &self.agents[i];
            let now = TrustFactors {
                supervision_workload: supervision_workload(activated, active.len() as u32, &params),
                influence: Some(Influence {
                    current: ac,
                    previous: a.influence,
                }),
                ..a.factors.clone()
            };
            let obs = trigger.filter(|(r, _)| **r == profile.id).map(|(r, allow)| HumanObservation {
                robot: r.clone(),
                time: self.clock,
                allow,
            });
            let belief = filter_step(&a.belief, &now, &a.factors, obs.as_ref(), &params)?;
            let a = &mut self.agents[i];
            a.prev_mean = a.belief.mean();
            a.belief = belief;
            a.factors = TrustFactors { influence: None, ..now };
            a.influence = ac;
            let event = Event::Belief {
                robot: profile.id,
                mean: a.belief.mean(),
                variance: a.belief.variance(),
                epoch: true,
            };
            self.emit(event);
        }
        Ok(())
    }

    fn plan_missing(&mut self, world: &GridWorld) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            let Some(active) = &a.active else { continue };
            if active.plan.is_some() {
                continue;
            }
            let ts = build_transition_system(world, &a.state, &BTreeSet::new());
            match plan(&ts, &active.spec) {
                Ok(p) => {
                    let event = Event::Plan {
                        robot: a.id().clone(),
                        symbol: active.task.symbol.clone(),
                        cells: p.cells.clone(),
                    };
                    self.agents[i].active.as_mut().expect("checked above").plan = Some(p);
                    self.emit(event);
                }
                Err(PlanError::Unreachable) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn check_finished(&mut self) {
        if !self.finished && self.agents.iter().all(Agent::idle) {
            self.finished = true;
            self.triggers.clear();
            let makespan = self.clock;
            self.emit(Event::Finished { makespan });
        }
    }

    /// Advances the clock by one tick and returns the records it produced.
    pub fn tick(&mut self) -> Result<Vec<Record>, SimError> {
        if self.finished {
            return Err(SimError::SessionFinished);
        }
        if self.pending.is_some() {
            return Err(SimError::DecisionPending);
        }
        let start = self.log.len();
        self.clock += 1;
        let world = self.scenario.world.clone();
        let params = self.params().clone();
        let n = self.agents.len();

        let mut newly = vec![BTreeSet::new(); n];
        let mut in_range = vec![0u32; n];
        for i in 0..n {
            let a = &mut self.agents[i];
            a.state.next_cell = None;
            let seen = sense(&world, &a.state);
            in_range[i] = seen.len() as u32;
            let new: BTreeSet<Cell> = seen.difference(&a.state.known_obstacles).copied().collect();
            if !new.is_empty() {
                a.state.known_obstacles.extend(new.iter().copied());
                let event = Event::Sense {
                    robot: a.id().clone(),
                    cells: new.iter().copied().collect(),
                };
                self.emit(event);
            }
            newly[i] = new;
        }

        let snapshot: Vec<RobotState> = self.agents.iter().map(|a| a.state.clone()).collect();
        for (i, up) in exchange_neighbors(&world, &snapshot).into_iter().enumerate() {
            if up.obstacles.is_empty() {
                continue;
            }
            let a = &mut self.agents[i];
            a.state.known_obstacles.extend(up.obstacles.iter().copied());
            newly[i].extend(up.obstacles.iter().copied());
            let event = Event::Exchange {
                robot: a.id().clone(),
                neighbors: up.neighbors,
                cells: up.obstacles.into_iter().collect(),
            };
            self.emit(event);
        }

        let mut progress = false;
        let mut completions = Vec::new();
        for i in 0..n {
            let out = self.act(i, &world, &newly[i])?;
            progress |= out.moved || out.completed.is_some();
            let a = &self.agents[i];
            let now = TrustFactors {
                performance: performance_update(a.factors.performance, out.completed.is_some(), out.avoided),
                safety: safety_coefficient(&a.state.profile, a.state.battery_low),
                env_workload: env_workload(in_range[i], &params),
                supervision_workload: a.factors.supervision_workload,
                influence: None,
            };
            let belief = filter_step(&a.belief, &now, &a.factors, None, &params)?;
            let a = &mut self.agents[i];
            a.prev_mean = a.belief.mean();
            a.belief = belief;
            a.factors = now;
            a.avoided += out.avoided;
            let event = Event::Belief {
                robot: a.id().clone(),
                mean: a.belief.mean(),
                variance: a.belief.variance(),
                epoch: false,
            };
            self.emit(event);
            if let Some(symbol) = out.completed {
                completions.push((self.agents[i].id().clone(), symbol));
            }
        }

        self.triggers.extend(completions);
        self.check_finished();
        self.raise_next_request()?;

        if progress {
            self.idle = 0;
        } else {
            self.idle += 1;
            if self.idle >= world.area() {
                return Err(SimError::Deadlock {
                    t: self.clock,
                    idle: self.idle,
                });
            }
        }
        Ok(self.log[start..].to_vec())
    }

    fn try_verify(&mut self, i: usize, active: &mut ActiveTask) {
        if active.verified {
            return;
        }
        let Some(pred) = active.task.predecessor.clone() else {
            active.verified = true;
            return;
        };
        let cell = self.agents[i].state.cell;
        let in_region = active.spec.phases.first().is_some_and(|p| p.holds_at(cell));
        if in_region && self.completed[active.task.subtask].last() == Some(&pred) {
            active.verified = true;
            active.spec = active.spec.goal_only();
            active.plan = None;
            self.emit(Event::Verified {
                robot: self.agents[i].id().clone(),
                symbol: active.task.symbol.clone(),
                predecessor: pred,
                cell,
            });
        }
    }

    fn at_goal(&self, i: usize, active: &ActiveTask) -> bool {
        active.verified && self.scenario.world.station(&active.task.symbol) == Some(self.agents[i].state.cell)
    }

    fn complete(&mut self, i: usize, active: ActiveTask, out: &mut Outcome) -> Result<(), SimError> {
        let Task { symbol, subtask, .. } = active.task;
        self.completed[subtask].push(symbol.clone());
        let next = self.agents[i].queue.pop_front().map(|t| self.make_active(t)).transpose()?;
        let a = &mut self.agents[i];
        a.completions += 1;
        a.active = next;
        let event = Event::Completion {
            robot: a.id().clone(),
            symbol: symbol.clone(),
            subtask,
            cell: a.state.cell,
        };
        self.emit(event);
        out.completed = Some(symbol);
        Ok(())
    }

    fn wait(&mut self, i: usize, active: ActiveTask, reason: WaitReason) {
        let event = Event::Wait {
            robot: self.agents[i].id().clone(),
            symbol: active.task.symbol.clone(),
            reason,
        };
        self.agents[i].active = Some(active);
        self.emit(event);
    }

    fn act(&mut self, i: usize, world: &GridWorld, newly: &BTreeSet<Cell>) -> Result<Outcome, SimError> {
        let mut out = Outcome::default();
        let Some(mut active) = self.agents[i].active.take() else {
            return Ok(out);
        };
        active.effort += 1;
        self.try_verify(i, &mut active);
        if self.at_goal(i, &active) {
            self.complete(i, active, &mut out)?;
            return Ok(out);
        }
        let cell = self.agents[i].state.cell;
        if !active.verified && active.spec.phases[0].holds_at(cell) {
            self.wait(i, active, WaitReason::Predecessor);
            return Ok(out);
        }

        let ts = build_transition_system(world, &self.agents[i].state, &BTreeSet::new());
        let result = match &active.plan {
            None => plan(&ts, &active.spec).map(|p| {
                let event = Event::Plan {
                    robot: self.agents[i].id().clone(),
                    symbol: active.task.symbol.clone(),
                    cells: p.cells.clone(),
                };
                (p, Some(event), 0)
            }),
            Some(current) => replan(current, cell, newly, &ts, &active.spec).map(|(p, avoided)| {
                let event = (avoided > 0).then(|| Event::Replan {
                    robot: self.agents[i].id().clone(),
                    avoided,
                    cells: p.cells.clone(),
                });
                (p, event, avoided)
            }),
        };
        match result {
            Ok((p, event, avoided)) => {
                active.plan = Some(p);
                out.avoided = avoided;
                if let Some(e) = event {
                    self.emit(e);
                }
            }
            Err(PlanError::Unreachable) => {
                active.plan = None;
                self.wait(i, active, WaitReason::NoPath);
                return Ok(out);
            }
            Err(e) => return Err(e.into()),
        }

        let Some(mut next) = active.plan.as_ref().and_then(|p| p.next_after(cell)) else {
            active.plan = None;
            self.wait(i, active, WaitReason::NoPath);
            return Ok(out);
        };

        let me = &self.agents[i].state;
        let reserved: BTreeSet<Cell> = self
            .agents
            .iter()
            .enumerate()
            .filter(|&(j, a)| j != i && a.state.cell.manhattan(me.cell) <= world.comm_radius)
            .filter_map(|(_, a)| a.state.next_cell)
            .collect();
        if reserved.contains(&next) {
            let ts = build_transition_system(world, me, &reserved);
            match plan(&ts, &active.spec) {
                Ok(p) if p.cells.len() > 1 => {
                    next = p.cells[1];
                    active.plan = Some(p);
                    let event = Event::Yield {
                        robot: self.agents[i].id().clone(),
                        reserved: next,
                    };
                    self.emit(event);
                }
                _ => {
                    self.wait(i, active, WaitReason::Reserved);
                    return Ok(out);
                }
            }
        }

        let dir = Direction::between(cell, next).expect("plans move between adjacent cells");
        match apply_move(world, &self.agents[i].state, dir) {
            Ok(mut moved) => {
                let was_low = self.agents[i].state.battery_low;
                moved.next_cell = Some(next);
                let a = &mut self.agents[i];
                a.state = moved;
                let (id, battery, low) = (a.id().clone(), a.state.battery, a.state.battery_low);
                self.emit(Event::Move {
                    robot: id.clone(),
                    from: cell,
                    to: next,
                    battery,
                });
                if low && !was_low {
                    self.emit(Event::BatteryLow { robot: id, battery });
                }
                out.moved = true;
            }
            Err(_) => {
                self.agents[i].state.known_obstacles.insert(next);
                active.plan = None;
                let event = Event::Blocked {
                    robot: self.agents[i].id().clone(),
                    cell: next,
                };
                self.emit(event);
            }
        }

        self.try_verify(i, &mut active);
        if self.at_goal(i, &active) {
            self.complete(i, active, &mut out)?;
        } else {
            self.agents[i].active = Some(active);
        }
        Ok(out)
    }

    /// Actions that must survive a reallocation: started (at least one tick of
    /// effort) and next in their subtask.
    fn in_progress(&self) -> Vec<SingleAction> {
        self.agents
            .iter()
            .filter_map(|a| {
                let t = a.active.as_ref()?;
                let next_in_line = t.task.predecessor.as_ref() == self.completed[t.task.subtask].last();
                (t.effort > 0 && next_in_line).then(|| SingleAction {
                    robot: a.id().clone(),
                    symbol: t.task.symbol.clone(),
                    subtask: t.task.subtask,
                })
            })
            .collect()
    }

    fn raise_next_request(&mut self) -> Result<(), SimError> {
        if self.pending.is_some() || self.finished {
            return Ok(());
        }
        let Some((robot, completed)) = self.triggers.pop_front() else {
            return Ok(());
        };
        let residuals = self.residuals()?;
        let pinned = self.in_progress();
        let trust = self.trust_snapshot()?;
        let proposed = resynthesize(residuals.clone(), &pinned, &self.profiles, &trust)?;
        let a = &self.agents[self.index_of(&robot)];
        let record = RequestRecord {
            id: self.next_request,
            trust_now: a.belief.mean(),
            trust_prev: a.prev_mean,
            robot,
            completed,
            residuals,
            pinned,
            proposed,
            trust: trust.values().clone(),
        };
        self.next_request += 1;
        self.emit(Event::Request(record.clone()));
        self.pending = Some(record);
        Ok(())
    }

    /// Answers the pending request. Allowing adopts the proposed allocation and
    /// runs a reallocation epoch; denying keeps the current allocation.
    pub fn decide(&mut self, allow: bool, source: DecisionSource) -> Result<Vec<Record>, SimError> {
        let request = self.pending.take().ok_or(SimError::NoPendingRequest)?;
        let start = self.log.len();
        self.emit(Event::Decision {
            request: request.id,
            allow,
            source,
        });
        if allow {
            self.epoch += 1;
            self.allocation = request.proposed;
            self.emit(Event::Reallocation {
                epoch: self.epoch,
                path: self.allocation.clone(),
            });
            self.adopt()?;
            self.epoch_update(Some((&request.robot, true)))?;
            let world = self.scenario.world.clone();
            self.plan_missing(&world)?;
            self.check_finished();
        }
        self.raise_next_request()?;
        Ok(self.log[start..].to_vec())
    }

    /// Answers the pending request with the session's human model.
    pub fn decide_automatically(&mut self) -> Result<Vec<Record>, SimError> {
        let request = self.pending.as_ref().ok_or(SimError::NoPendingRequest)?;
        let (now, prev) = (request.trust_now, request.trust_prev);
        let params = self.scenario.config.trust.clone();
        let (allow, source) =
            human::automatic_decision(&self.human, now, prev, &mut self.script_pos, &mut self.rng, &params)
                .ok_or(SimError::InteractiveHuman)?;
        self.decide(allow, source)
    }

    /// Runs until finished, answering requests automatically.
    pub fn run(&mut self, max_ticks: u64) -> Result<(), SimError> {
        if matches!(self.human, HumanModel::Interactive) {
            return Err(SimError::InteractiveHuman);
        }
        while !self.finished {
            if self.pending.is_some() {
                self.decide_automatically()?;
            } else if self.clock >= max_ticks {
                return Err(SimError::TickLimit(max_ticks));
            } else {
                self.tick()?;
            }
        }
        Ok(())
    }

    /// Rebuilds a session from its event log, re-running every tick and
    /// feeding back the recorded decisions. Fails if any record differs.
    pub fn replay(scenario: Scenario, human: HumanModel, seed: u64, records: &[Record]) -> Result<Session, SimError> {
        let mut s = Session::with_options(scenario, human, seed)?;
        loop {
            let len = s.log.len().min(records.len());
            if let Some(index) = (0..len).find(|&k| s.log[k] != records[k]) {
                return Err(SimError::ReplayDiverged { index });
            }
            if s.log.len() > records.len() {
                return Err(SimError::ReplayDiverged { index: records.len() });
            }
            if s.log.len() == records.len() {
                return Ok(s);
            }
            if s.finished {
                return Err(SimError::ReplayDiverged { index: s.log.len() });
            }
            if s.pending.is_some() {
                let Event::Decision { allow, source, .. } = &records[s.log.len()].event else {
                    return Err(SimError::ReplayDiverged { index: s.log.len() });
                };
                if source.consumes_draw() {
                    let _: f64 = s.rng.random();
                }
                if matches!(source, DecisionSource::Scripted { .. }) {
                    s.script_pos += 1;
                }
                s.decide(*allow, source.clone())?;
            } else {
                match s.tick() {
                    Ok(_) | Err(SimError::Deadlock { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
}
