//! Reference implementations used as oracles. They share no code with the
//! library beyond its data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use trustalloc_core::allocation::RobotProfile;
use trustalloc_core::automata::AutomatonSpec;
use trustalloc_core::trust::TrustParams;
use trustalloc_core::world::Cell;

pub type Words = BTreeSet<Vec<String>>;

/// A random allocation instance: per-subtask word sets over disjoint
/// alphabets, robots and dyadic trust values.
#[derive(Clone, Debug)]
pub struct AllocCase {
    pub languages: Vec<Words>,
    pub robots: Vec<(String, BTreeSet<String>)>,
    pub trust: BTreeMap<String, f64>,
}

impl AllocCase {
    pub fn profiles(&self) -> Vec<RobotProfile> {
        self.robots
            .iter()
            .map(|(id, caps)| RobotProfile::new(id, &caps.iter().map(String::as_str).collect::<Vec<_>>()))
            .collect()
    }

    pub fn trust_pairs(&self) -> Vec<(&str, f64)> {
        self.trust.iter().map(|(r, &t)| (r.as_str(), t)).collect()
    }

    pub fn automata(&self) -> Vec<AutomatonSpec> {
        self.languages.iter().map(trie_automaton).collect()
    }
}

pub fn random_alloc_case(rng: &mut ChaCha8Rng, max_symbols: usize, max_robots: usize) -> AllocCase {
    let total = rng.random_range(2..=max_symbols);
    let subtasks = rng.random_range(1..=3.min(total));
    let mut alphabet: Vec<String> = (0..total).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
    alphabet.shuffle(rng);
    let mut sizes = vec![1; subtasks];
    for _ in subtasks..total {
        sizes[rng.random_range(0..subtasks)] += 1;
    }
    let mut languages = Vec::new();
    let mut next = 0;
    for &size in &sizes {
        let symbols = &alphabet[next..next + size];
        next += size;
        languages.push(random_words(rng, symbols));
    }
    let robot_count = rng.random_range(1..=max_robots);
    let mut robots: Vec<(String, BTreeSet<String>)> = (0..robot_count)
        .map(|i| {
            let caps = alphabet
                .iter()
                .filter(|_| rng.random_bool(0.4))
                .cloned()
                .collect();
            (format!("r{}", i + 1), caps)
        })
        .collect();
    for s in &alphabet {
        if !robots.iter().any(|(_, c)| c.contains(s)) {
            let i = rng.random_range(0..robot_count);
            robots[i].1.insert(s.clone());
        }
    }
    for (_, caps) in robots.iter_mut() {
        if caps.is_empty() {
            caps.insert(alphabet[rng.random_range(0..total)].clone());
        }
    }
    let trust = robots
        .iter()
        .map(|(id, _)| (id.clone(), f64::from(rng.random_range(1..1024u32)) / 1024.0))
        .collect();
    AllocCase {
        languages,
        robots,
        trust,
    }
}

/// A few random words using each symbol of `symbols` at most once per word;
/// every symbol appears in at least one word.
fn random_words(rng: &mut ChaCha8Rng, symbols: &[String]) -> Words {
    let mut words = Words::new();
    let mut pool = symbols.to_vec();
    pool.shuffle(rng);
    words.insert(pool.clone());
    for _ in 0..rng.random_range(0..3) {
        let mut w = symbols.to_vec();
        w.shuffle(rng);
        w.truncate(rng.random_range(1..=symbols.len()));
        words.insert(w);
    }
    words
}

/// Prefix-tree automaton accepting exactly `words`.
pub fn trie_automaton(words: &Words) -> AutomatonSpec {
    let mut states = vec!["n0".to_owned()];
    let mut transitions = Vec::new();
    let mut marked = BTreeSet::new();
    let mut children: BTreeMap<(usize, String), usize> = BTreeMap::new();
    let mut alphabet = BTreeSet::new();
    for w in words {
        let mut node = 0;
        for s in w {
            alphabet.insert(s.clone());
            node = *children.entry((node, s.clone())).or_insert_with(|| {
                states.push(format!("n{}", states.len()));
                let id = states.len() - 1;
                transitions.push((format!("n{node}"), s.clone(), format!("n{id}")));
                id
            });
        }
        marked.insert(format!("n{node}"));
    }
    AutomatonSpec {
        name: None,
        states,
        alphabet: alphabet.into_iter().collect(),
        initial: "n0".into(),
        marked: marked.into_iter().collect(),
        transitions,
    }
}

fn derive(words: &Words, s: &str) -> Words {
    words
        .iter()
        .filter(|w| w.first().map(String::as_str) == Some(s))
        .map(|w| w[1..].to_vec())
        .collect()
}

/// All ways to assign distinct capable robots to at most one enabled symbol
/// per subtask, with at least one assignment. Each entry is
/// `(subtask, robot, symbol)`.
fn all_multiactions(state: &[Words], robots: &[(String, BTreeSet<String>)]) -> Vec<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    fn rec(
        k: usize,
        state: &[Words],
        robots: &[(String, BTreeSet<String>)],
        used: &mut Vec<String>,
        cur: &mut Vec<(usize, String, String)>,
        out: &mut Vec<Vec<(usize, String, String)>>,
    ) {
        if k == state.len() {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            return;
        }
        rec(k + 1, state, robots, used, cur, out);
        let firsts: BTreeSet<&String> = state[k].iter().filter_map(|w| w.first()).collect();
        for s in firsts {
            for (id, caps) in robots {
                if caps.contains(s) && !used.contains(id) {
                    used.push(id.clone());
                    cur.push((k, id.clone(), s.clone()));
                    rec(k + 1, state, robots, used, cur, out);
                    cur.pop();
                    used.pop();
                }
            }
        }
    }
    rec(0, state, robots, &mut Vec::new(), &mut Vec::new(), &mut out);
    out
}

/// Maximum total trust over every path from `languages` to a state where
/// every subtask's remaining language contains the empty word. `None` if no
/// such path exists.
pub fn brute_force_best(case: &AllocCase) -> Option<f64> {
    fn dfs(state: &[Words], case: &AllocCase, acc: f64, best: &mut Option<f64>) {
        if state.iter().all(|w| w.contains(&Vec::new())) && best.is_none_or(|b| acc > b) {
            *best = Some(acc);
        }
        for ma in all_multiactions(state, &case.robots) {
            let mut next = state.to_vec();
            let mut weight = 0.0;
            for (k, robot, s) in &ma {
                next[*k] = derive(&next[*k], s);
                weight += case.trust[robot];
            }
            dfs(&next, case, acc + weight, best);
        }
    }
    let mut best = None;
    dfs(&case.languages, case, 0.0, &mut best);
    best
}

/// Every word accepted by a DFA along a run that never revisits a state,
/// found by trying all strings up to length |states|.
pub fn brute_force_acyclic_words(spec: &AutomatonSpec) -> Words {
    let delta: BTreeMap<(&str, &str), &str> = spec
        .transitions
        .iter()
        .map(|(a, s, b)| ((a.as_str(), s.as_str()), b.as_str()))
        .collect();
    let mut out = Words::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..=spec.states.len() {
        let mut next = Vec::new();
        for w in frontier {
            let mut state = spec.initial.as_str();
            let mut seen = vec![state];
            let mut ok = true;
            for s in &w {
                match delta.get(&(state, s.as_str())) {
                    Some(&n) if !seen.contains(&n) => {
                        state = n;
                        seen.push(n);
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            if spec.marked.iter().any(|m| m == state) {
                out.insert(w.clone());
            }
            for a in &spec.alphabet {
                let mut longer = w.clone();
                longer.push(a.clone());
                next.push(longer);
            }
        }
        frontier = next;
    }
    out
}

/// Random DFA (possibly cyclic, possibly partial) with up to `max_states` states.
pub fn random_dfa(rng: &mut ChaCha8Rng, max_states: usize) -> AutomatonSpec {
    let n = rng.random_range(1..=max_states);
    let alphabet: Vec<String> = ["x", "y", "z"][..rng.random_range(1..=3)].iter().map(|s| s.to_string()).collect();
    let states: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
    let mut transitions = Vec::new();
    for q in &states {
        for a in &alphabet {
            if rng.random_bool(0.6) {
                transitions.push((q.clone(), a.clone(), states[rng.random_range(0..n)].clone()));
            }
        }
    }
    let mut marked: Vec<String> = states.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
    if marked.is_empty() {
        marked.push(states[n - 1].clone());
    }
    AutomatonSpec {
        name: None,
        states: states.clone(),
        alphabet,
        initial: states[0].clone(),
        marked,
        transitions,
    }
}

/// One step of a brute-force trust trace: factors `(performance, safety,
/// env, supervision, influence)` at this and the previous update, plus an
/// optional allow/deny answer.
#[derive(Clone, Debug)]
pub struct OracleStep {
    pub now: [f64; 4],
    pub prev: [f64; 4],
    pub influence: Option<(f64, f64)>,
    pub answer: Option<bool>,
}

fn oracle_mean(u: f64, st: &OracleStep, p: &TrustParams) -> f64 {
    let [pn, sn, un, bn] = st.now;
    let [pp, sp, up, bp] = st.prev;
    let mut m = p.a * u + p.b1 * sn * pn - p.b2 * sp * pp + p.c1 * un - p.c2 * up + p.d1 * bn - p.d2 * bp;
    if let Some((cur, old)) = st.influence {
        m += p.e1 * cur - p.e2 * old;
    }
    m.max(p.clamp_margin).min(1.0 - p.clamp_margin)
}

fn oracle_allow(v: f64, u: f64, p: &TrustParams) -> f64 {
    1.0 / (1.0 + (p.alpha2 * u - p.alpha1 * v).exp())
}

/// Posterior over the last state of the chain by summing the joint over
/// every bin sequence.
pub fn brute_force_posterior(prior: &[f64], steps: &[OracleStep], p: &TrustParams) -> Vec<f64> {
    let n = prior.len();
    let mid = |j: usize| (j as f64 + 0.5) / n as f64;
    let kernel = |v: usize, u: usize, st: &OracleStep| {
        let m = oracle_mean(mid(u), st, p);
        let g = |x: usize| (-(mid(x) - m).powi(2) / (2.0 * p.rho)).exp();
        let z: f64 = (0..n).map(g).sum();
        let h = match st.answer {
            None => 1.0,
            Some(true) => oracle_allow(mid(v), mid(u), p),
            Some(false) => 1.0 - oracle_allow(mid(v), mid(u), p),
        };
        g(v) / z * h
    };
    let mut post = vec![0.0; n];
    let len = steps.len() + 1;
    let total = n.pow(len as u32);
    for code in 0..total {
        let seq: Vec<usize> = (0..len).map(|i| code / n.pow(i as u32) % n).collect();
        let mut w = prior[seq[0]];
        for (t, st) in steps.iter().enumerate() {
            w *= kernel(seq[t + 1], seq[t], st);
        }
        post[seq[len - 1]] += w;
    }
    let z: f64 = post.iter().sum();
    post.iter().map(|x| x / z).collect()
}

/// Breadth-first distances from `from` over free in-bounds cells.
pub fn bfs(width: i32, height: i32, blocked: &BTreeSet<Cell>, from: Cell) -> BTreeMap<Cell, u32> {
    let mut dist = BTreeMap::new();
    let mut q = VecDeque::new();
    dist.insert(from, 0);
    q.push_back(from);
    while let Some(c) = q.pop_front() {
        let d = dist[&c];
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = Cell::new(c.x + dx, c.y + dy);
            if n.x < 0 || n.y < 0 || n.x >= width || n.y >= height || blocked.contains(&n) || dist.contains_key(&n) {
                continue;
            }
            dist.insert(n, d + 1);
            q.push_back(n);
        }
    }
    dist
}

/// Cheapest walk from `start` that visits a cell within `radius` of `via`
/// (when given) and then ends on `goal`, never touching `goal` earlier.
pub fn brute_force_cost(
    width: i32,
    height: i32,
    blocked: &BTreeSet<Cell>,
    start: Cell,
    via: Option<(Cell, u32)>,
    goal: Cell,
) -> Option<u32> {
    let Some((center, radius)) = via else {
        return bfs(width, height, blocked, start).get(&goal).copied();
    };
    let mut avoiding = blocked.clone();
    avoiding.insert(goal);
    let first = bfs(width, height, &avoiding, start);
    let mut best: Option<u32> = None;
    let mut offer = |cost: u32| best = Some(best.map_or(cost, |b| b.min(cost)));
    if goal.manhattan(center) <= radius {
        if start == goal {
            offer(0);
        }
        for (&c, &d) in &first {
            if c.is_adjacent(goal) {
                offer(d + 1);
            }
        }
    }
    for (&m, &d1) in &first {
        if m != goal && m.manhattan(center) <= radius {
            if let Some(&d2) = bfs(width, height, blocked, m).get(&goal) {
                offer(d1 + d2);
            }
        }
    }
    best
}
