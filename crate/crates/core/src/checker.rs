//! Linearizability checking for per-key append-only lists.
//!
//! [`check`] uses the omniscient execution timestamps: successful operations
//! are ordered by `execution_ts`, with every interleaving of exact ties
//! allowed. A failed append is ambiguous; it may have taken effect at any
//! instant after it started, or never. [`brute_force_check`] ignores
//! execution timestamps and searches every serialization that respects
//! real-time order; it only handles tiny histories and serves as an oracle.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::raft::Key;
use crate::rng::SeededRng;
use crate::time::SimTime;
use crate::workload::{ClientLogEntry, History, OpType, Value};

pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    /// Position of the offending operation in the history.
    pub op: usize,
    pub key: Key,
    pub observed: Vec<Value>,
    /// Serialization context: the list state before the operation.
    pub state_before: Vec<Value>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub linearizable: bool,
    pub witness: Option<Witness>,
}

impl Verdict {
    pub fn ok() -> Self {
        Verdict { linearizable: true, witness: None }
    }

    fn violation(w: Witness) -> Self {
        Verdict { linearizable: false, witness: Some(w) }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("operation {0}: an append must carry exactly one value")]
    BadAppend(usize),
    #[error("value {0} appended more than once")]
    DuplicateValue(Value),
    #[error("history has {len} relevant operations; the exhaustive checker handles at most {max}")]
    TooLarge { len: usize, max: usize },
}

fn validate(history: &History) -> Result<(), CheckError> {
    let mut seen = BTreeSet::new();
    for (i, e) in history.entries.iter().enumerate() {
        if e.op_type == OpType::ListAppend {
            if e.value.len() != 1 {
                return Err(CheckError::BadAppend(i));
            }
            if !seen.insert(e.value[0]) {
                return Err(CheckError::DuplicateValue(e.value[0]));
            }
        }
    }
    Ok(())
}

fn join(values: &[Value]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    format!("[{}]", parts.join(","))
}

impl Witness {
    pub fn describe(&self) -> String {
        format!(
            "operation {} on key {}: {}; observed {}, state before {}",
            self.op,
            self.key,
            self.reason,
            join(&self.observed),
            join(&self.state_before)
        )
    }
}

struct Group {
    time: SimTime,
    remaining: BTreeSet<Value>,
}

enum Origin {
    Pinned,
    Free(SimTime),
}

pub fn check(history: &History) -> Result<Verdict, CheckError> {
    validate(history)?;
    for (i, e) in history.entries.iter().enumerate() {
        if !e.success {
            continue;
        }
        let ok = e.execution_ts.is_some_and(|x| e.start_ts <= x && x <= e.end_ts);
        if !ok {
            return Ok(Verdict::violation(Witness {
                op: i,
                key: e.key,
                observed: e.value.clone(),
                state_before: Vec::new(),
                reason: String::from("execution time missing or outside [start, end]"),
            }));
        }
    }
    let mut by_key: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (i, e) in history.entries.iter().enumerate() {
        let relevant = e.success || e.op_type == OpType::ListAppend;
        if relevant {
            by_key.entry(e.key).or_default().push(i);
        }
    }
    for (key, ops) in by_key {
        if let Some(w) = check_key(&history.entries, key, &ops) {
            return Ok(Verdict::violation(w));
        }
    }
    Ok(Verdict::ok())
}

fn check_key(entries: &[ClientLogEntry], key: Key, ops: &[usize]) -> Option<Witness> {
    let mut origin: BTreeMap<Value, Origin> = BTreeMap::new();
    let mut pinned: Vec<(SimTime, usize)> = Vec::new();
    for &i in ops {
        let e = &entries[i];
        match (e.op_type, e.success) {
            (OpType::ListAppend, true) => {
                origin.insert(e.value[0], Origin::Pinned);
                pinned.push((e.execution_ts.unwrap_or(e.start_ts), i));
            }
            (OpType::ListAppend, false) => {
                origin.insert(e.value[0], Origin::Free(e.start_ts));
            }
            (OpType::Read, true) => pinned.push((e.execution_ts.unwrap_or(e.start_ts), i)),
            (OpType::Read, false) => {}
        }
    }
    pinned.sort();

    let mut state: Vec<Value> = Vec::new();
    let mut used: BTreeSet<Value> = BTreeSet::new();
    let mut pending: VecDeque<Group> = VecDeque::new();
    let mut g = 0;
    while g < pinned.len() {
        let t = pinned[g].0;
        let mut end = g;
        while end < pinned.len() && pinned[end].0 == t {
            end += 1;
        }
        let mut current: BTreeSet<Value> = BTreeSet::new();
        let mut reads: Vec<usize> = Vec::new();
        for &(_, i) in &pinned[g..end] {
            match entries[i].op_type {
                OpType::ListAppend => {
                    current.insert(entries[i].value[0]);
                }
                OpType::Read => reads.push(i),
            }
        }
        reads.sort_by_key(|&i| (entries[i].value.len(), i));
        for &r in &reads {
            let observed = &entries[r].value;
            let fail = |reason: String| {
                Some(Witness {
                    op: r,
                    key,
                    observed: observed.clone(),
                    state_before: state.clone(),
                    reason,
                })
            };
            if observed.len() < state.len() || observed[..state.len()] != state[..] {
                return fail(String::from("read does not extend the list observed by an earlier operation"));
            }
            for v in &observed[state.len()..] {
                while pending.front().is_some_and(|p| p.remaining.is_empty()) {
                    pending.pop_front();
                }
                if used.contains(v) {
                    return fail(format!("value {v} appears twice"));
                }
                let horizon = pending.front().map_or(t, |p| p.time);
                let placed = match (pending.front_mut(), origin.get(v)) {
                    (_, Some(Origin::Free(start))) => *start <= horizon,
                    (Some(front), Some(Origin::Pinned)) => front.remaining.remove(v),
                    (None, Some(Origin::Pinned)) => current.remove(v),
                    (_, None) => false,
                };
                if !placed {
                    let reason = match origin.get(v) {
                        None => format!("value {v} was never appended to this key"),
                        Some(Origin::Free(_)) => format!("value {v} observed before its append started"),
                        Some(Origin::Pinned) => format!("value {v} observed out of execution order or before its execution"),
                    };
                    return fail(reason);
                }
                used.insert(*v);
            }
            if let Some(missing) = pending.iter().find_map(|p| p.remaining.iter().next()) {
                return fail(format!("read misses value {missing} appended before it executed"));
            }
            state = observed.clone();
        }
        if !current.is_empty() {
            pending.push_back(Group { time: t, remaining: current });
        }
        g = end;
    }
    None
}

/// Exhaustive search over serializations consistent with real-time order.
pub fn brute_force_check(history: &History) -> Result<Verdict, CheckError> {
    validate(history)?;
    let ops: Vec<usize> = history
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.success || e.op_type == OpType::ListAppend)
        .map(|(i, _)| i)
        .collect();
    if ops.len() > BRUTE_FORCE_LIMIT {
        return Err(CheckError::TooLarge { len: ops.len(), max: BRUTE_FORCE_LIMIT });
    }
    let es: Vec<&ClientLogEntry> = ops.iter().map(|&i| &history.entries[i]).collect();
    let n = es.len();
    // A failed operation never finished, so nothing is forced after it.
    let end = |e: &ClientLogEntry| if e.success { Some(e.end_ts) } else { None };
    let mut before = vec![0u32; n];
    for b in 0..n {
        for a in 0..n {
            if a != b && end(es[a]).is_some_and(|t| t < es[b].start_ts) {
                before[b] |= 1 << a;
            }
        }
    }
    let optional: u32 = (0..n).filter(|&i| !es[i].success).fold(0, |m, i| m | (1 << i));
    let mut search = Search { es: &es, before: &before, deepest: (0, None) };
    let mut sub = optional;
    loop {
        let skipped = sub;
        let mut lists: BTreeMap<Key, Vec<Value>> = BTreeMap::new();
        if search.dfs(skipped, 0, skipped, &mut lists) {
            return Ok(Verdict::ok());
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & optional;
    }
    let (_, culprit) = search.deepest;
    let local = culprit.unwrap_or(0);
    let e = es.get(local);
    Ok(Verdict::violation(Witness {
        op: ops.get(local).copied().unwrap_or(0),
        key: e.map_or(0, |e| e.key),
        observed: e.map_or_else(Vec::new, |e| e.value.clone()),
        state_before: Vec::new(),
        reason: String::from("no serialization respecting real-time order explains this read"),
    }))
}

struct Search<'a> {
    es: &'a [&'a ClientLogEntry],
    before: &'a [u32],
    deepest: (u32, Option<usize>),
}

impl Search<'_> {
    fn dfs(&mut self, done: u32, depth: u32, skipped: u32, lists: &mut BTreeMap<Key, Vec<Value>>) -> bool {
        let n = self.es.len();
        let all = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        if done == all {
            return true;
        }
        for i in 0..n {
            let bit = 1 << i;
            if done & bit != 0 {
                continue;
            }
            // Predecessors that were skipped never happened and impose nothing.
            if self.before[i] & !skipped & !done != 0 {
                continue;
            }
            let e = self.es[i];
            match e.op_type {
                OpType::ListAppend => {
                    lists.entry(e.key).or_default().push(e.value[0]);
                    let found = self.dfs(done | bit, depth + 1, skipped, lists);
                    if let Some(l) = lists.get_mut(&e.key) {
                        l.pop();
                    }
                    if found {
                        return true;
                    }
                }
                OpType::Read => {
                    let current = lists.get(&e.key).map_or(&[][..], |l| &l[..]);
                    if current == &e.value[..] {
                        if self.dfs(done | bit, depth + 1, skipped, lists) {
                            return true;
                        }
                    } else if depth >= self.deepest.0 {
                        self.deepest = (depth, Some(i));
                    }
                }
            }
        }
        false
    }
}

/// Random small history over two keys with coarse timestamps, for
/// cross-checking [`check`] against [`brute_force_check`].
///
/// Successful operations are instantaneous (`start = execution = end`), so
/// real-time order and execution order agree; equal instants produce exact
/// ties. Failed appends have no execution time and may or may not show up
/// in later reads. About half the reads return the list a correct store
/// would, sometimes extended by a failed append; the rest return an
/// arbitrary ordering of the key's values.
pub fn random_history(rng: &mut SeededRng, max_ops: usize) -> History {
    let n = 1 + rng.below(max_ops.max(1) as u64) as usize;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let t = SimTime::from_nanos(rng.below(6));
        let key = rng.below(2);
        if rng.chance(0.55) {
            let success = rng.chance(0.8);
            entries.push(ClientLogEntry {
                op_type: OpType::ListAppend,
                start_ts: t,
                execution_ts: success.then_some(t),
                end_ts: if success { t } else { t + core::time::Duration::from_nanos(3) },
                key,
                value: vec![Value::new(i as u32, 0)],
                success,
            });
        } else {
            let success = rng.chance(0.85);
            entries.push(ClientLogEntry {
                op_type: OpType::Read,
                start_ts: t,
                execution_ts: success.then_some(t),
                end_ts: t,
                key,
                value: Vec::new(),
                success,
            });
        }
    }
    for r in 0..n {
        if entries[r].op_type != OpType::Read || !entries[r].success {
            continue;
        }
        let (t, key) = (entries[r].start_ts, entries[r].key);
        let appends = entries.iter().filter(|e| e.op_type == OpType::ListAppend && e.key == key);
        let value = if rng.chance(0.5) {
            let mut done: Vec<(SimTime, u64, Value)> = appends
                .clone()
                .filter(|e| e.success && e.start_ts < t)
                .map(|e| (e.start_ts, rng.next_u64(), e.value[0]))
                .collect();
            done.sort();
            let mut list: Vec<Value> = done.into_iter().map(|(_, _, v)| v).collect();
            let failed: Vec<Value> = appends.filter(|e| !e.success && e.start_ts <= t).map(|e| e.value[0]).collect();
            if !failed.is_empty() && rng.chance(0.4) {
                list.push(failed[rng.below(failed.len() as u64) as usize]);
            }
            list
        } else {
            let mut all: Vec<Value> = appends.map(|e| e.value[0]).collect();
            for i in (1..all.len()).rev() {
                all.swap(i, rng.below(i as u64 + 1) as usize);
            }
            let keep = rng.below(all.len() as u64 + 1) as usize;
            all.truncate(keep);
            all
        };
        entries[r].value = value;
    }
    History::new(entries)
}
