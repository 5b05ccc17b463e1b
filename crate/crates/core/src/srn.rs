//! Stochastic reward nets.
//!
//! A net has places holding tokens, exponentially timed transitions,
//! immediate transitions, and inhibitor arcs. [`reachability`] explores the
//! markings reachable from the initial one and folds vanishing markings
//! (those enabling an immediate transition) into the rates between tangible
//! markings. The result is a CTMC that [`steady_state`] solves with the
//! Grassmann-Taksar-Heyman elimination, which involves no subtractions and is
//! therefore immune to cancellation even with rates spanning many orders of
//! magnitude.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{self, Write};

use indexmap::IndexSet;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

pub const DEFAULT_MAX_MARKINGS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SrnError {
    #[error("invalid net: {0}")]
    InvalidModel(String),
    #[error("state space exceeds {limit} markings")]
    StateSpaceOverflow { limit: usize },
    #[error("cycle of vanishing markings through {0}")]
    ImmediateCycle(Marking),
    #[error("CTMC has {classes} recurrent classes")]
    Reducible { classes: usize },
}

pub type Result<T, E = SrnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlaceId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransitionId {
    Timed(usize),
    Immediate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Constant,
    /// Rate is multiplied by the token count of the (single) input place.
    MarkingDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub place: PlaceId,
    pub multiplicity: u32,
}

/// The transition is disabled while `place` holds `threshold` or more tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inhibitor {
    pub place: PlaceId,
    pub threshold: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub name: String,
    pub initial: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Arcs {
    pub inputs: Vec<Arc>,
    pub outputs: Vec<Arc>,
    pub inhibitors: Vec<Inhibitor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedTransition {
    pub name: String,
    pub rate: f64,
    pub kind: RateKind,
    pub arcs: Arcs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmediateTransition {
    pub name: String,
    pub priority: u32,
    pub weight: f64,
    pub arcs: Arcs,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SrnModel {
    places: Vec<Place>,
    timed: Vec<TimedTransition>,
    immediate: Vec<ImmediateTransition>,
}

impl SrnModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_place(&mut self, name: impl Into<String>, initial: u32) -> PlaceId {
        self.places.push(Place {
            name: name.into(),
            initial,
        });
        PlaceId(self.places.len() - 1)
    }

    pub fn add_timed(&mut self, name: impl Into<String>, rate: f64, kind: RateKind) -> TransitionId {
        self.timed.push(TimedTransition {
            name: name.into(),
            rate,
            kind,
            arcs: Arcs::default(),
        });
        TransitionId::Timed(self.timed.len() - 1)
    }

    pub fn add_immediate(&mut self, name: impl Into<String>, priority: u32, weight: f64) -> TransitionId {
        self.immediate.push(ImmediateTransition {
            name: name.into(),
            priority,
            weight,
            arcs: Arcs::default(),
        });
        TransitionId::Immediate(self.immediate.len() - 1)
    }

    fn arcs_mut(&mut self, t: TransitionId) -> &mut Arcs {
        match t {
            TransitionId::Timed(i) => &mut self.timed[i].arcs,
            TransitionId::Immediate(i) => &mut self.immediate[i].arcs,
        }
    }

    fn arcs(&self, t: TransitionId) -> &Arcs {
        match t {
            TransitionId::Timed(i) => &self.timed[i].arcs,
            TransitionId::Immediate(i) => &self.immediate[i].arcs,
        }
    }

    pub fn add_input(&mut self, t: TransitionId, place: PlaceId, multiplicity: u32) {
        self.arcs_mut(t).inputs.push(Arc { place, multiplicity });
    }

    pub fn add_output(&mut self, t: TransitionId, place: PlaceId, multiplicity: u32) {
        self.arcs_mut(t).outputs.push(Arc { place, multiplicity });
    }

    pub fn add_inhibitor(&mut self, t: TransitionId, place: PlaceId, threshold: u32) {
        self.arcs_mut(t).inhibitors.push(Inhibitor { place, threshold });
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn timed_transitions(&self) -> &[TimedTransition] {
        &self.timed
    }

    pub fn immediate_transitions(&self) -> &[ImmediateTransition] {
        &self.immediate
    }

    pub fn set_immediate_weight(&mut self, index: usize, weight: f64) {
        self.immediate[index].weight = weight;
    }

    pub fn set_immediate_priority(&mut self, index: usize, priority: u32) {
        self.immediate[index].priority = priority;
    }

    pub fn place(&self, name: &str) -> Option<PlaceId> {
        self.places.iter().position(|p| p.name == name).map(PlaceId)
    }

    /// All inhibitor arcs as `(place, transition, threshold)`.
    pub fn inhibitor_arcs(&self) -> Vec<(PlaceId, TransitionId, u32)> {
        let timed = (0..self.timed.len()).map(TransitionId::Timed);
        let immediate = (0..self.immediate.len()).map(TransitionId::Immediate);
        timed
            .chain(immediate)
            .flat_map(|t| self.arcs(t).inhibitors.iter().map(move |h| (h.place, t, h.threshold)))
            .collect()
    }

    pub fn initial_marking(&self) -> Marking {
        Marking(self.places.iter().map(|p| p.initial).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SrnError::InvalidModel(msg));
        if self.places.is_empty() {
            return bad("net has no places".into());
        }
        let n = self.places.len();
        let check_arcs = |name: &str, arcs: &Arcs| -> Result<()> {
            for a in arcs.inputs.iter().chain(&arcs.outputs) {
                if a.place.0 >= n {
                    return bad(format!("{name}: arc to unknown place {}", a.place.0));
                }
                if a.multiplicity == 0 {
                    return bad(format!("{name}: arc multiplicity must be positive"));
                }
            }
            for h in &arcs.inhibitors {
                if h.place.0 >= n {
                    return bad(format!("{name}: inhibitor from unknown place {}", h.place.0));
                }
                if h.threshold == 0 {
                    return bad(format!("{name}: inhibitor threshold must be positive"));
                }
            }
            Ok(())
        };
        for t in &self.timed {
            check_arcs(&t.name, &t.arcs)?;
            if !(t.rate > 0.0 && t.rate.is_finite()) {
                return bad(format!("{}: rate must be positive", t.name));
            }
            if t.kind == RateKind::MarkingDependent && t.arcs.inputs.len() != 1 {
                return bad(format!("{}: marking-dependent transitions need exactly one input place", t.name));
            }
        }
        for t in &self.immediate {
            check_arcs(&t.name, &t.arcs)?;
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return bad(format!("{}: weight must be positive", t.name));
            }
        }
        Ok(())
    }
}

/// Token count per place.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Marking(pub Vec<u32>);

impl Marking {
    pub fn tokens(&self, place: PlaceId) -> u32 {
        self.0[place.0]
    }
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

fn enabled(arcs: &Arcs, m: &Marking) -> bool {
    arcs.inputs.iter().all(|a| m.0[a.place.0] >= a.multiplicity)
        && arcs.inhibitors.iter().all(|h| m.0[h.place.0] < h.threshold)
}

fn fire(arcs: &Arcs, m: &Marking) -> Marking {
    let mut next = m.clone();
    for a in &arcs.inputs {
        next.0[a.place.0] -= a.multiplicity;
    }
    for a in &arcs.outputs {
        next.0[a.place.0] += a.multiplicity;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// CTMC over the tangible markings of a net.
#[derive(Debug, Clone, PartialEq)]
pub struct TangibleCtmc {
    pub place_names: Vec<String>,
    pub states: Vec<Marking>,
    /// Off-diagonal rates, merged per `(from, to)` and sorted.
    pub edges: Vec<Edge>,
    /// Probability of starting in each tangible state.
    pub initial: Vec<(usize, f64)>,
}

impl TangibleCtmc {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Writes one `from to rate` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.edges {
            writeln!(out, "{} {} {:e}", e.from, e.to, e.rate)?;
        }
        Ok(())
    }

    /// Writes a header of place names then one row of token counts per state.
    pub fn write_marking_table<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "state {}", self.place_names.join(" "))?;
        for (i, m) in self.states.iter().enumerate() {
            let row: Vec<String> = m.0.iter().map(u32::to_string).collect();
            writeln!(out, "{i} {}", row.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReachabilityOptions {
    pub max_markings: usize,
}

impl Default for ReachabilityOptions {
    fn default() -> Self {
        Self {
            max_markings: DEFAULT_MAX_MARKINGS,
        }
    }
}

pub fn reachability(model: &SrnModel) -> Result<TangibleCtmc> {
    reachability_with(model, &ReachabilityOptions::default())
}

type Outcome = Vec<(Marking, f64)>;

struct Explorer<'a> {
    model: &'a SrnModel,
    limit: usize,
    vanishing: HashMap<Marking, Outcome>,
    in_progress: HashSet<Marking>,
    seen: usize,
}

impl Explorer<'_> {
    fn is_vanishing(&self, m: &Marking) -> bool {
        self.model.immediate.iter().any(|t| enabled(&t.arcs, m))
    }

    fn count(&mut self) -> Result<()> {
        self.seen += 1;
        if self.seen > self.limit {
            return Err(SrnError::StateSpaceOverflow { limit: self.limit });
        }
        Ok(())
    }

    /// Distribution over tangible markings reached from `m` by immediate
    /// firings. Tangible `m` resolves to itself.
    fn resolve(&mut self, m: &Marking) -> Result<Outcome> {
        if !self.is_vanishing(m) {
            return Ok(vec![(m.clone(), 1.0)]);
        }
        if let Some(done) = self.vanishing.get(m) {
            return Ok(done.clone());
        }
        if !self.in_progress.insert(m.clone()) {
            return Err(SrnError::ImmediateCycle(m.clone()));
        }
        self.count()?;
        let candidates: Vec<&ImmediateTransition> =
            self.model.immediate.iter().filter(|t| enabled(&t.arcs, m)).collect();
        let top = candidates.iter().map(|t| t.priority).max().unwrap_or(0);
        let winners: Vec<&ImmediateTransition> =
            candidates.into_iter().filter(|t| t.priority == top).collect();
        let total: f64 = winners.iter().map(|t| t.weight).sum();
        let mut merged: BTreeMap<Marking, f64> = BTreeMap::new();
        for t in winners {
            let next = fire(&t.arcs, m);
            for (target, p) in self.resolve(&next)? {
                *merged.entry(target).or_insert(0.0) += p * t.weight / total;
            }
        }
        self.in_progress.remove(m);
        let outcome: Outcome = merged.into_iter().collect();
        self.vanishing.insert(m.clone(), outcome.clone());
        Ok(outcome)
    }
}

/// Breadth-first exploration of the tangible reachability graph.
pub fn reachability_with(model: &SrnModel, options: &ReachabilityOptions) -> Result<TangibleCtmc> {
    model.validate()?;
    let mut explorer = Explorer {
        model,
        limit: options.max_markings,
        vanishing: HashMap::new(),
        in_progress: HashSet::new(),
        seen: 0,
    };
    let mut states: IndexSet<Marking> = IndexSet::new();
    let mut queue = VecDeque::new();

    let intern = |m: Marking, states: &mut IndexSet<Marking>, queue: &mut VecDeque<usize>, ex: &mut Explorer| {
        let (idx, fresh) = states.insert_full(m);
        if fresh {
            queue.push_back(idx);
            ex.count()?;
        }
        Ok::<usize, SrnError>(idx)
    };

    let mut initial = Vec::new();
    for (m, p) in explorer.resolve(&model.initial_marking())? {
        let idx = intern(m, &mut states, &mut queue, &mut explorer)?;
        initial.push((idx, p));
    }

    let mut rates: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    while let Some(from) = queue.pop_front() {
        let m = states[from].clone();
        for t in &model.timed {
            if !enabled(&t.arcs, &m) {
                continue;
            }
            let rate = match t.kind {
                RateKind::Constant => t.rate,
                RateKind::MarkingDependent => t.rate * m.0[t.arcs.inputs[0].place.0] as f64,
            };
            let next = fire(&t.arcs, &m);
            for (target, p) in explorer.resolve(&next)? {
                let to = intern(target, &mut states, &mut queue, &mut explorer)?;
                if to != from {
                    *rates.entry((from, to)).or_insert(0.0) += rate * p;
                }
            }
        }
    }

    Ok(TangibleCtmc {
        place_names: model.places.iter().map(|p| p.name.clone()).collect(),
        states: states.into_iter().collect(),
        edges: rates
            .into_iter()
            .map(|((from, to), rate)| Edge { from, to, rate })
            .collect(),
        initial,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub markings: Vec<Marking>,
    pub probabilities: Vec<f64>,
}

impl SteadyState {
    pub fn iter(&self) -> impl Iterator<Item = (&Marking, f64)> {
        self.markings.iter().zip(self.probabilities.iter().copied())
    }
}

/// Solves `pi Q = 0`, `sum(pi) = 1`.
///
/// States outside the single recurrent class get probability zero.
pub fn steady_state(ctmc: &TangibleCtmc) -> Result<SteadyState> {
    let n = ctmc.len();
    if n == 0 {
        return Err(SrnError::InvalidModel("CTMC has no states".into()));
    }
    let mut graph = DiGraph::<(), ()>::with_capacity(n, ctmc.edges.len());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for e in &ctmc.edges {
        graph.add_edge(nodes[e.from], nodes[e.to], ());
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; n];
    for (k, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = k;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for e in &ctmc.edges {
        if component[e.from] != component[e.to] {
            closed[component[e.from]] = false;
        }
    }
    let recurrent: Vec<usize> = (0..sccs.len()).filter(|&k| closed[k]).collect();
    if recurrent.len() != 1 {
        return Err(SrnError::Reducible {
            classes: recurrent.len(),
        });
    }
    let mut members: Vec<usize> = sccs[recurrent[0]].iter().map(|v| v.index()).collect();
    members.sort_unstable();
    let mut local = vec![usize::MAX; n];
    for (i, &s) in members.iter().enumerate() {
        local[s] = i;
    }
    let m = members.len();
    let mut q = vec![0.0; m * m];
    for e in &ctmc.edges {
        let (i, j) = (local[e.from], local[e.to]);
        if i != usize::MAX && j != usize::MAX {
            q[i * m + j] += e.rate;
        }
    }
    let pi = gth(&mut q, m)?;
    let mut probabilities = vec![0.0; n];
    for (i, &s) in members.iter().enumerate() {
        probabilities[s] = pi[i];
    }
    Ok(SteadyState {
        markings: ctmc.states.clone(),
        probabilities,
    })
}

/// GTH state reduction on a dense row-major matrix of off-diagonal rates.
fn gth(q: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for k in (1..n).rev() {
        let out: f64 = q[k * n..k * n + k].iter().sum();
        if !(out > 0.0) {
            return Err(SrnError::Reducible { classes: 2 });
        }
        for i in 0..k {
            q[i * n + k] /= out;
        }
        for i in 0..k {
            let via = q[i * n + k];
            if via == 0.0 {
                continue;
            }
            for j in 0..k {
                if i != j {
                    q[i * n + j] += via * q[k * n + j];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * q[i * n + k]).sum();
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    Ok(pi)
}

/// `max_j |(pi Q)_j|` for a solved chain.
pub fn residual(ctmc: &TangibleCtmc, ss: &SteadyState) -> f64 {
    let mut flow = vec![0.0; ctmc.len()];
    for e in &ctmc.edges {
        let f = ss.probabilities[e.from] * e.rate;
        flow[e.to] += f;
        flow[e.from] -= f;
    }
    flow.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `sum_s r(s) p_s`.
pub fn expected_reward(ss: &SteadyState, reward: impl Fn(&Marking) -> f64) -> f64 {
    ss.iter().map(|(m, p)| reward(m) * p).sum()
}
