//! Subtask automata and the finite residual languages used as allocation states.
//!
//! A subtask is a deterministic automaton whose accepted words are the valid
//! orderings of its actions. The allocation layer never walks the automaton
//! directly: it works on [`ResidualLanguage`]s, the set of action words that
//! still remain after a prefix has been performed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An action symbol, e.g. `"a"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Symbol(String);

impl Symbol {
    pub fn new(s: impl Into<String>) -> Self {
        Symbol(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Symbol {
    fn from(s: &str) -> Self {
        Symbol(s.to_owned())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomatonError {
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("symbol `{0}` is not in the alphabet")]
    UnknownSymbol(String),
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("duplicate transition from `{state}` on `{symbol}`")]
    DuplicateTransition { state: String, symbol: String },
    #[error("automaton has no marked state")]
    NoMarkedState,
    #[error("no marked state is reachable from the initial state")]
    NoAcceptedWord,
    #[error("symbol `{0}` is not enabled in the residual language")]
    SymbolNotEnabled(Symbol),
    #[error("residual language must contain at least one word")]
    EmptyResidual,
}

/// Serialized form of an automaton, as it appears in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutomatonSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub states: Vec<String>,
    pub alphabet: Vec<String>,
    pub initial: String,
    pub marked: Vec<String>,
    #[serde(default)]
    pub transitions: Vec<(String, String, String)>,
}

/// A validated deterministic finite automaton.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Automaton {
    name: Option<String>,
    states: Vec<String>,
    alphabet: BTreeSet<Symbol>,
    transitions: BTreeMap<(usize, Symbol), usize>,
    initial: usize,
    marked: BTreeSet<usize>,
}

impl Automaton {
    pub fn parse(spec: &AutomatonSpec) -> Result<Self, AutomatonError> {
        let mut index = BTreeMap::new();
        for (i, s) in spec.states.iter().enumerate() {
            if index.insert(s.as_str(), i).is_some() {
                return Err(AutomatonError::DuplicateState(s.clone()));
            }
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| AutomatonError::UnknownState(s.to_owned()))
        };
        let alphabet: BTreeSet<Symbol> = spec.alphabet.iter().map(|s| Symbol::new(s.as_str())).collect();

        let mut transitions = BTreeMap::new();
        for (from, sym, to) in &spec.transitions {
            let f = lookup(from)?;
            let t = lookup(to)?;
            let sym = Symbol::new(sym.as_str());
            if !alphabet.contains(&sym) {
                return Err(AutomatonError::UnknownSymbol(sym.0));
            }
            if transitions.insert((f, sym.clone()), t).is_some() {
                return Err(AutomatonError::DuplicateTransition {
                    state: from.clone(),
                    symbol: sym.0,
                });
            }
        }
        let initial = lookup(&spec.initial)?;
        let marked = spec
            .marked
            .iter()
            .map(|s| lookup(s))
            .collect::<Result<BTreeSet<_>, _>>()?;
        if marked.is_empty() {
            return Err(AutomatonError::NoMarkedState);
        }
        Ok(Automaton {
            name: spec.name.clone(),
            states: spec.states.clone(),
            alphabet,
            transitions,
            initial,
            marked,
        })
    }

    pub fn to_spec(&self) -> AutomatonSpec {
        AutomatonSpec {
            name: self.name.clone(),
            states: self.states.clone(),
            alphabet: self.alphabet.iter().map(|s| s.0.clone()).collect(),
            initial: self.states[self.initial].clone(),
            marked: self.marked.iter().map(|&i| self.states[i].clone()).collect(),
            transitions: self
                .transitions
                .iter()
                .map(|((f, s), t)| (self.states[*f].clone(), s.0.clone(), self.states[*t].clone()))
                .collect(),
        }
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn alphabet(&self) -> &BTreeSet<Symbol> {
        &self.alphabet
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    /// Runs the automaton on `word` and reports whether it ends in a marked state.
    pub fn accepts(&self, word: &Word) -> bool {
        let mut state = self.initial;
        for sym in word.symbols() {
            match self.transitions.get(&(state, sym.clone())) {
                Some(&next) => state = next,
                None => return false,
            }
        }
        self.marked.contains(&state)
    }

    /// All words accepted along paths that never revisit a state.
    ///
    /// This is finite even when the automaton has cycles. Every word reaching a
    /// marked state is recorded, including prefixes of longer accepted words.
    pub fn enumerate_acyclic_words(&self) -> Result<BTreeSet<Word>, AutomatonError> {
        let mut out = BTreeSet::new();
        let mut visited = vec![false; self.states.len()];
        let mut prefix = Vec::new();
        self.dfs(self.initial, &mut visited, &mut prefix, &mut out);
        if out.is_empty() {
            return Err(AutomatonError::NoAcceptedWord);
        }
        Ok(out)
    }

    fn dfs(&self, state: usize, visited: &mut [bool], prefix: &mut Vec<Symbol>, out: &mut BTreeSet<Word>) {
        visited[state] = true;
        if self.marked.contains(&state) {
            out.insert(Word(prefix.clone()));
        }
        let outgoing = self
            .transitions
            .range((state, Symbol(String::new()))..(state + 1, Symbol(String::new())));
        for ((_, sym), &next) in outgoing {
            if visited[next] {
                continue;
            }
            prefix.push(sym.clone());
            self.dfs(next, visited, prefix, out);
            prefix.pop();
        }
        visited[state] = false;
    }

    pub fn initial_residual(&self) -> Result<ResidualLanguage, AutomatonError> {
        ResidualLanguage::new(self.enumerate_acyclic_words()?)
    }
}

/// A finite sequence of action symbols; the empty word is ε.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<Symbol>);

impl Word {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Word(symbols)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Builds a word from single-character symbols, e.g. `"abc"`.
    pub fn from_chars(s: &str) -> Self {
        Word(s.chars().map(|c| Symbol(c.to_string())).collect())
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<&Symbol> {
        self.0.first()
    }

    fn tail(&self) -> Word {
        Word(self.0[1..].to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("ε");
        }
        for s in &self.0 {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// The remaining action words of one subtask. Never empty.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeSet<Word>", into = "BTreeSet<Word>")]
pub struct ResidualLanguage {
    words: BTreeSet<Word>,
}

impl ResidualLanguage {
    pub fn new(words: BTreeSet<Word>) -> Result<Self, AutomatonError> {
        if words.is_empty() {
            return Err(AutomatonError::EmptyResidual);
        }
        Ok(ResidualLanguage { words })
    }

    /// The completed residual `{ε}`.
    pub fn done() -> Self {
        ResidualLanguage {
            words: BTreeSet::from([Word::empty()]),
        }
    }

    pub fn words(&self) -> &BTreeSet<Word> {
        &self.words
    }

    pub fn firsts(&self) -> BTreeSet<Symbol> {
        self.words.iter().filter_map(|w| w.first().cloned()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.words.contains(&Word::empty())
    }

    pub fn max_len(&self) -> usize {
        self.words.iter().map(Word::len).max().unwrap_or(0)
    }

    pub fn derivative(&self, symbol: &Symbol) -> Result<Self, AutomatonError> {
        let words: BTreeSet<Word> = self
            .words
            .iter()
            .filter(|w| w.first() == Some(symbol))
            .map(Word::tail)
            .collect();
        if words.is_empty() {
            return Err(AutomatonError::SymbolNotEnabled(symbol.clone()));
        }
        Ok(ResidualLanguage { words })
    }
}

impl TryFrom<BTreeSet<Word>> for ResidualLanguage {
    type Error = AutomatonError;

    fn try_from(words: BTreeSet<Word>) -> Result<Self, Self::Error> {
        ResidualLanguage::new(words)
    }
}

impl From<ResidualLanguage> for BTreeSet<Word> {
    fn from(r: ResidualLanguage) -> Self {
        r.words
    }
}

impl fmt::Display for ResidualLanguage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{w}")?;
        }
        f.write_str("}")
    }
}

/// Convenience constructor for tests and examples: `residual(&["bc", "cb"])`.
pub fn residual(words: &[&str]) -> ResidualLanguage {
    ResidualLanguage::new(words.iter().map(|w| Word::from_chars(w)).collect()).expect("nonempty word list")
}
