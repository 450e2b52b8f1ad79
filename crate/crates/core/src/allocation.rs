//! Task-allocation automaton synthesis and maximum-trust path search.
//!
//! States are tuples of per-subtask residual languages. A transition is a
//! multi-action: at most one action per subtask, each performed by a distinct
//! robot able to perform it. Every transition strictly shrinks the summed
//! maximum word length of the residuals, so the reachable state space is a DAG
//! and the best allocation is a longest path over it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{Automaton, AutomatonError, ResidualLanguage, Symbol};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotId(String);

impl RobotId {
    pub fn new(s: impl Into<String>) -> Self {
        RobotId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RobotId {
    fn from(s: &str) -> Self {
        RobotId(s.to_owned())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("no robot can perform: {}", join(.0))]
    CoverageViolation(Vec<Symbol>),
    #[error("no accepting allocation state is reachable")]
    AcceptingUnreachable,
    #[error("pinned action conflict: {0}")]
    PinConflict(String),
    #[error("robot `{0}` has no capabilities")]
    EmptyCapabilities(RobotId),
    #[error("duplicate robot id `{0}`")]
    DuplicateRobot(RobotId),
    #[error("no trust value for robot `{0}`")]
    MissingTrust(RobotId),
    #[error("trust value {value} for robot `{robot}` is outside (0, 1)")]
    TrustOutOfRange { robot: RobotId, value: f64 },
    #[error("expected {expected} components per multi-action, got {got}")]
    Arity { expected: usize, got: usize },
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
}

fn join(symbols: &[Symbol]) -> String {
    symbols.iter().map(Symbol::as_str).collect::<Vec<_>>().join(", ")
}

/// A robot and the set of actions it can perform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub id: RobotId,
    pub capabilities: BTreeSet<Symbol>,
}

impl RobotProfile {
    pub fn new(id: &str, capabilities: &[&str]) -> Self {
        RobotProfile {
            id: RobotId::new(id),
            capabilities: capabilities.iter().map(|&s| Symbol::new(s)).collect(),
        }
    }

    pub fn can(&self, symbol: &Symbol) -> bool {
        self.capabilities.contains(symbol)
    }
}

pub fn validate_robots(robots: &[RobotProfile]) -> Result<(), AllocationError> {
    let mut seen = BTreeSet::new();
    for r in robots {
        if r.capabilities.is_empty() {
            return Err(AllocationError::EmptyCapabilities(r.id.clone()));
        }
        if !seen.insert(&r.id) {
            return Err(AllocationError::DuplicateRobot(r.id.clone()));
        }
    }
    Ok(())
}

/// Symbols in `needed` that no robot can perform, sorted.
pub fn uncovered<'a>(needed: impl IntoIterator<Item = &'a Symbol>, robots: &[RobotProfile]) -> Vec<Symbol> {
    let have: BTreeSet<&Symbol> = robots.iter().flat_map(|r| r.capabilities.iter()).collect();
    let missing: BTreeSet<Symbol> = needed.into_iter().filter(|s| !have.contains(s)).cloned().collect();
    missing.into_iter().collect()
}

/// One robot performing one action of one subtask.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SingleAction {
    pub robot: RobotId,
    pub symbol: Symbol,
    pub subtask: usize,
}

impl SingleAction {
    pub fn new(robot: &str, symbol: &str, subtask: usize) -> Self {
        SingleAction {
            robot: RobotId::new(robot),
            symbol: Symbol::new(symbol),
            subtask,
        }
    }
}

impl fmt::Display for SingleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.robot, self.symbol)
    }
}

/// One component per subtask; `None` is ε (nothing assigned for that subtask).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiAction {
    pub components: Vec<Option<(RobotId, Symbol)>>,
}

impl MultiAction {
    pub fn assignments(&self) -> impl Iterator<Item = SingleAction> + '_ {
        self.components.iter().enumerate().filter_map(|(k, c)| {
            c.as_ref().map(|(r, s)| SingleAction {
                robot: r.clone(),
                symbol: s.clone(),
                subtask: k,
            })
        })
    }

    pub fn assigns(&self, robot: &RobotId) -> bool {
        self.components.iter().flatten().any(|(r, _)| r == robot)
    }

    /// Effective and unique: at least one assignment, no robot twice.
    pub fn is_well_formed(&self) -> bool {
        let mut robots = BTreeSet::new();
        let mut any = false;
        for (r, _) in self.components.iter().flatten() {
            any = true;
            if !robots.insert(r) {
                return false;
            }
        }
        any
    }

    /// Sum of the trust of the assigned robots, accumulated in subtask order.
    pub fn weight(&self, trust: &TrustSnapshot) -> Result<f64, AllocationError> {
        let mut w = 0.0;
        for (r, _) in self.components.iter().flatten() {
            w += trust.get(r)?;
        }
        Ok(w)
    }

    fn order_key(&self) -> Vec<(&RobotId, &Symbol, usize)> {
        let mut key: Vec<_> = self
            .components
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.as_ref().map(|(r, s)| (r, s, k)))
            .collect();
        key.sort();
        key
    }
}

impl Ord for MultiAction {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order_key()
            .cmp(&other.order_key())
            .then_with(|| self.components.cmp(&other.components))
    }
}

impl PartialOrd for MultiAction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match c {
                Some((r, s)) => write!(f, "({r},{s})")?,
                None => f.write_str("ε")?,
            }
        }
        f.write_str(")")
    }
}

/// Composite allocation state: one residual language per subtask.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AllocState {
    pub residuals: Vec<ResidualLanguage>,
}

impl AllocState {
    pub fn new(residuals: Vec<ResidualLanguage>) -> Self {
        AllocState { residuals }
    }

    pub fn is_accepting(&self) -> bool {
        self.residuals.iter().all(ResidualLanguage::is_complete)
    }

    /// Sum of the longest remaining word per subtask; strictly decreases along transitions.
    pub fn remaining(&self) -> usize {
        self.residuals.iter().map(ResidualLanguage::max_len).sum()
    }

    pub fn apply(&self, action: &MultiAction) -> Result<AllocState, AllocationError> {
        if action.components.len() != self.residuals.len() {
            return Err(AllocationError::Arity {
                expected: self.residuals.len(),
                got: action.components.len(),
            });
        }
        let residuals = self
            .residuals
            .iter()
            .zip(&action.components)
            .map(|(r, c)| match c {
                Some((_, s)) => r.derivative(s),
                None => Ok(r.clone()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AllocState { residuals })
    }
}

impl fmt::Display for AllocState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, r) in self.residuals.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str(")")
    }
}

/// Point estimates of trust per robot, each in (0, 1).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrustSnapshot(BTreeMap<RobotId, f64>);

impl TrustSnapshot {
    pub fn new(values: BTreeMap<RobotId, f64>) -> Result<Self, AllocationError> {
        for (robot, &value) in &values {
            if !(value > 0.0 && value < 1.0) {
                return Err(AllocationError::TrustOutOfRange {
                    robot: robot.clone(),
                    value,
                });
            }
        }
        Ok(TrustSnapshot(values))
    }

    pub fn uniform(robots: &[RobotProfile], value: f64) -> Result<Self, AllocationError> {
        Self::new(robots.iter().map(|r| (r.id.clone(), value)).collect())
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Result<Self, AllocationError> {
        Self::new(pairs.iter().map(|&(r, v)| (RobotId::new(r), v)).collect())
    }

    pub fn get(&self, robot: &RobotId) -> Result<f64, AllocationError> {
        self.0
            .get(robot)
            .copied()
            .ok_or_else(|| AllocationError::MissingTrust(robot.clone()))
    }

    pub fn values(&self) -> &BTreeMap<RobotId, f64> {
        &self.0
    }
}

/// Every (robot, symbol, subtask) with the symbol enabled in that subtask's residual
/// and within the robot's capabilities.
pub fn implementable_actions(state: &AllocState, robots: &[RobotProfile]) -> BTreeSet<SingleAction> {
    let mut out = BTreeSet::new();
    for (k, residual) in state.residuals.iter().enumerate() {
        for symbol in residual.firsts() {
            for robot in robots.iter().filter(|r| r.can(&symbol)) {
                out.insert(SingleAction {
                    robot: robot.id.clone(),
                    symbol: symbol.clone(),
                    subtask: k,
                });
            }
        }
    }
    out
}

/// All effective, robot-unique combinations of implementable actions, in canonical order.
pub fn enumerate_multiactions(state: &AllocState, robots: &[RobotProfile]) -> Vec<MultiAction> {
    let implementable = implementable_actions(state, robots);
    let mut per_subtask: Vec<Vec<&SingleAction>> = vec![Vec::new(); state.residuals.len()];
    for a in &implementable {
        per_subtask[a.subtask].push(a);
    }

    let mut out = Vec::new();
    let mut current: Vec<Option<(RobotId, Symbol)>> = Vec::with_capacity(per_subtask.len());
    let mut used: BTreeSet<RobotId> = BTreeSet::new();
    combine(&per_subtask, &mut current, &mut used, &mut out);
    out.sort();
    out
}

fn combine(
    options: &[Vec<&SingleAction>],
    current: &mut Vec<Option<(RobotId, Symbol)>>,
    used: &mut BTreeSet<RobotId>,
    out: &mut Vec<MultiAction>,
) {
    let k = current.len();
    if k == options.len() {
        if !used.is_empty() {
            out.push(MultiAction {
                components: current.clone(),
            });
        }
        return;
    }
    current.push(None);
    combine(options, current, used, out);
    current.pop();
    for a in &options[k] {
        if used.contains(&a.robot) {
            continue;
        }
        used.insert(a.robot.clone());
        current.push(Some((a.robot.clone(), a.symbol.clone())));
        combine(options, current, used, out);
        current.pop();
        used.remove(&a.robot);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub action: MultiAction,
    pub to: usize,
}

/// The reachable fragment of the task-allocation automaton.
#[derive(Clone, Debug)]
pub struct AllocationAutomaton {
    states: Vec<AllocState>,
    transitions: Vec<Transition>,
    outgoing: Vec<Vec<usize>>,
    accepting: BTreeSet<usize>,
}

impl AllocationAutomaton {
    /// Builds the allocation automaton for the given subtasks, starting from each
    /// subtask's full acyclic language.
    pub fn synthesize(subtasks: &[Automaton], robots: &[RobotProfile]) -> Result<Self, AllocationError> {
        validate_robots(robots)?;
        let missing = uncovered(subtasks.iter().flat_map(|a| a.alphabet().iter()), robots);
        if !missing.is_empty() {
            return Err(AllocationError::CoverageViolation(missing));
        }
        let residuals = subtasks
            .iter()
            .map(Automaton::initial_residual)
            .collect::<Result<Vec<_>, _>>()?;
        Self::synthesize_from(AllocState::new(residuals), robots, &[])
    }

    /// Builds the allocation automaton from an arbitrary composite state.
    ///
    /// Every pinned action must appear in the first multi-action taken from `initial`.
    pub fn synthesize_from(
        initial: AllocState,
        robots: &[RobotProfile],
        pinned: &[SingleAction],
    ) -> Result<Self, AllocationError> {
        validate_robots(robots)?;
        let needed: BTreeSet<Symbol> = initial
            .residuals
            .iter()
            .flat_map(|r| r.words().iter().flat_map(|w| w.symbols().iter().cloned()))
            .collect();
        let missing = uncovered(&needed, robots);
        if !missing.is_empty() {
            return Err(AllocationError::CoverageViolation(missing));
        }
        check_pins(&initial, robots, pinned)?;

        let mut states = vec![initial];
        let mut index: HashMap<AllocState, usize> = HashMap::new();
        index.insert(states[0].clone(), 0);
        let mut transitions = Vec::new();
        let mut outgoing: Vec<Vec<usize>> = vec![Vec::new()];
        let mut frontier = 0;
        while frontier < states.len() {
            let state = states[frontier].clone();
            for action in enumerate_multiactions(&state, robots) {
                if frontier == 0 && !pinned.iter().all(|p| action.components[p.subtask] == Some((p.robot.clone(), p.symbol.clone()))) {
                    continue;
                }
                let next = state.apply(&action)?;
                let to = match index.get(&next) {
                    Some(&i) => i,
                    None => {
                        states.push(next.clone());
                        outgoing.push(Vec::new());
                        index.insert(next, states.len() - 1);
                        states.len() - 1
                    }
                };
                outgoing[frontier].push(transitions.len());
                transitions.push(Transition {
                    from: frontier,
                    action,
                    to,
                });
            }
            frontier += 1;
        }
        let accepting: BTreeSet<usize> = states
            .iter()
            .enumerate()
            .filter(|(i, s)| s.is_accepting() && !(*i == 0 && !pinned.is_empty()))
            .map(|(i, _)| i)
            .collect();
        if accepting.is_empty() {
            return Err(AllocationError::AcceptingUnreachable);
        }
        Ok(AllocationAutomaton {
            states,
            transitions,
            outgoing,
            accepting,
        })
    }

    pub fn initial(&self) -> &AllocState {
        &self.states[0]
    }

    pub fn states(&self) -> &[AllocState] {
        &self.states
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = &Transition> {
        self.outgoing[state].iter().map(move |&t| &self.transitions[t])
    }

    pub fn accepting(&self) -> &BTreeSet<usize> {
        &self.accepting
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting.contains(&state)
    }

    /// The path to an accepting state with the largest summed trust.
    ///
    /// Ties prefer fewer steps, then the lexicographically smallest sequence of
    /// multi-actions (each ordered by its sorted `(robot, symbol, subtask)` list).
    pub fn max_trust_path(&self, trust: &TrustSnapshot) -> Result<AllocationPath, AllocationError> {
        let weights = self
            .transitions
            .iter()
            .map(|t| t.action.weight(trust))
            .collect::<Result<Vec<_>, _>>()?;

        // Transitions strictly decrease `remaining`, so this is a topological order.
        let mut order: Vec<usize> = (0..self.states.len()).collect();
        order.sort_by_key(|&s| std::cmp::Reverse(self.states[s].remaining()));

        let mut best: Vec<Option<Candidate>> = vec![None; self.states.len()];
        best[0] = Some(Candidate {
            weight: 0.0,
            steps: Vec::new(),
        });
        for &s in &order {
            let Some(here) = best[s].clone() else { continue };
            for &t in &self.outgoing[s] {
                let tr = &self.transitions[t];
                let mut steps = here.steps.clone();
                steps.push(t);
                let cand = Candidate {
                    weight: here.weight + weights[t],
                    steps,
                };
                let replace = match &best[tr.to] {
                    None => true,
                    Some(cur) => self.better(&cand, cur),
                };
                if replace {
                    best[tr.to] = Some(cand);
                }
            }
        }

        let winner = self
            .accepting
            .iter()
            .filter_map(|&s| best[s].as_ref())
            .fold(None::<&Candidate>, |acc, c| match acc {
                Some(a) if !self.better(c, a) => Some(a),
                _ => Some(c),
            })
            .ok_or(AllocationError::AcceptingUnreachable)?;

        Ok(AllocationPath {
            steps: winner
                .steps
                .iter()
                .map(|&t| self.transitions[t].action.clone())
                .collect(),
            total_trust: winner.weight,
        })
    }

    fn better(&self, a: &Candidate, b: &Candidate) -> bool {
        if a.weight != b.weight {
            return a.weight > b.weight;
        }
        if a.steps.len() != b.steps.len() {
            return a.steps.len() < b.steps.len();
        }
        let lhs = a.steps.iter().map(|&t| &self.transitions[t].action);
        let rhs = b.steps.iter().map(|&t| &self.transitions[t].action);
        lhs.cmp(rhs) == Ordering::Less
    }

    /// Graphviz rendering of the automaton.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph allocation {\n  rankdir=LR;\n");
        for (i, s) in self.states.iter().enumerate() {
            let shape = if self.accepting.contains(&i) { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  s{i} [shape={shape}, label=\"{}\"];", s.to_string().replace('"', "\\\""));
        }
        for t in &self.transitions {
            let _ = writeln!(out, "  s{} -> s{} [label=\"{}\"];", t.from, t.to, t.action);
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    weight: f64,
    steps: Vec<usize>,
}

fn check_pins(state: &AllocState, robots: &[RobotProfile], pinned: &[SingleAction]) -> Result<(), AllocationError> {
    let mut subtasks = BTreeSet::new();
    let mut pinned_robots = BTreeSet::new();
    for p in pinned {
        let residual = state
            .residuals
            .get(p.subtask)
            .ok_or_else(|| AllocationError::PinConflict(format!("{p}: no subtask {}", p.subtask)))?;
        if !residual.firsts().contains(&p.symbol) {
            return Err(AllocationError::PinConflict(format!("{p}: `{}` is not enabled", p.symbol)));
        }
        let robot = robots
            .iter()
            .find(|r| r.id == p.robot)
            .ok_or_else(|| AllocationError::PinConflict(format!("{p}: unknown robot")))?;
        if !robot.can(&p.symbol) {
            return Err(AllocationError::PinConflict(format!("{p}: robot cannot perform `{}`", p.symbol)));
        }
        if !subtasks.insert(p.subtask) {
            return Err(AllocationError::PinConflict(format!("{p}: subtask {} pinned twice", p.subtask)));
        }
        if !pinned_robots.insert(&p.robot) {
            return Err(AllocationError::PinConflict(format!("{p}: robot pinned twice")));
        }
    }
    Ok(())
}

/// A sequence of multi-actions leading from the initial state to acceptance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPath {
    pub steps: Vec<MultiAction>,
    pub total_trust: f64,
}

impl AllocationPath {
    pub fn empty() -> Self {
        AllocationPath {
            steps: Vec::new(),
            total_trust: 0.0,
        }
    }

    /// Applies every step to `initial`, returning the final state.
    pub fn replay(&self, initial: &AllocState) -> Result<AllocState, AllocationError> {
        self.steps.iter().try_fold(initial.clone(), |s, a| s.apply(a))
    }

    /// The robot's own actions as `(step, symbol, subtask)`, in step order.
    pub fn project(&self, robot: &RobotId) -> Vec<(usize, Symbol, usize)> {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(step, a)| {
                a.assignments()
                    .filter(|s| &s.robot == robot)
                    .map(move |s| (step, s.symbol, s.subtask))
            })
            .collect()
    }

    pub fn assignments(&self) -> impl Iterator<Item = (usize, SingleAction)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(step, a)| a.assignments().map(move |s| (step, s)))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl fmt::Display for AllocationPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("ε");
        }
        for (i, s) in self.steps.iter().enumerate() {
            write!(f, "{s}^({i})")?;
        }
        Ok(())
    }
}

/// Re-synthesizes over the remaining residuals, forcing `pinned` into the first
/// step, and returns the maximum-trust path.
pub fn resynthesize(
    residuals: Vec<ResidualLanguage>,
    pinned: &[SingleAction],
    robots: &[RobotProfile],
    trust: &TrustSnapshot,
) -> Result<AllocationPath, AllocationError> {
    let psi = AllocationAutomaton::synthesize_from(AllocState::new(residuals), robots, pinned)?;
    psi.max_trust_path(trust)
}
