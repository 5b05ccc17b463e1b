//! Search over redundancy configurations (OptSearchChain).
//!
//! [`srneval`] lists, per node, every multiset of NR sizes whose node
//! availability meets the target. [`optsearchchain`] then walks the chain
//! node by node, pruning partial configurations that are already too
//! expensive relative to the cheapest complete one found so far, or whose
//! availability product already misses the target.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::alloc::Allocation;
use crate::deploy::{DeployError, DeploymentConfig, Evaluator, LayerRates, SharedNrs, DEFAULT_NR_CAP};
use crate::qnet::{self, ChainSpec, QueueError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("no deployment of `{node}` reaches availability {target} within the caps")]
    EmptyCandidateSet { node: String, target: f64 },
    #[error("no chain configuration meets availability {availability} and CSD {csd} s")]
    NoFeasibleConfig { availability: f64, csd: f64 },
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeploymentType {
    Homogeneous,
    /// Nodes `first` and `second` may share NRs.
    CoLocated { first: usize, second: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    pub availability_target: f64,
    pub thresholds: Allocation,
    pub max_nrs_per_node: u32,
    /// Containers per NR; for a shared NR, both types together.
    pub max_containers_per_nr: u32,
    pub deployment: DeploymentType,
    pub m1: f64,
    pub m2: f64,
    /// When false the cost bound is never tightened, so only availability
    /// prunes remain.
    pub cost_pruning: bool,
}

impl SearchParams {
    pub fn new(availability_target: f64, thresholds: Allocation) -> Self {
        Self {
            availability_target,
            thresholds,
            max_nrs_per_node: 4,
            max_containers_per_nr: DEFAULT_NR_CAP,
            deployment: DeploymentType::Homogeneous,
            m1: 0.5,
            m2: 0.75,
            cost_pruning: true,
        }
    }

    pub fn validate(&self, nodes: usize) -> Result<()> {
        let bad = |msg: String| Err(SearchError::InvalidParams(msg));
        if !(0.0..=1.0).contains(&self.availability_target) {
            return bad(format!("availability target {} outside [0, 1]", self.availability_target));
        }
        if self.thresholds.len() != nodes {
            return bad(format!("{} thresholds for {nodes} nodes", self.thresholds.len()));
        }
        if self.max_nrs_per_node == 0 || self.max_containers_per_nr == 0 {
            return bad("NR and container caps must be positive".into());
        }
        if !(self.m1 > 0.0 && self.m1 <= self.m2 && self.m2 <= 1.0) {
            return bad(format!("need 0 < m1 <= m2 <= 1, got m1={} m2={}", self.m1, self.m2));
        }
        if let DeploymentType::CoLocated { first, second } = self.deployment {
            if first == second || first >= nodes || second >= nodes {
                return bad(format!("co-located pair ({first}, {second}) is not two distinct nodes"));
            }
        }
        Ok(())
    }
}

fn nr_cost(nrs: usize, containers: u32) -> u32 {
    2 * nrs as u32 + containers
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCandidate {
    /// Containers per NR, ascending.
    pub nrs: Vec<u32>,
    pub availability: f64,
    pub cost: u32,
}

/// NRs hosting a co-located node pair: homogeneous NRs of either node plus
/// at least one shared NR.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCandidate {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    pub shared: Vec<(u32, u32)>,
    pub availability: f64,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Node {
        node: usize,
        candidates: Vec<NodeCandidate>,
    },
    Group {
        first: usize,
        second: usize,
        candidates: Vec<GroupCandidate>,
    },
}

impl Stage {
    pub fn len(&self) -> usize {
        match self {
            Stage::Node { candidates, .. } => candidates.len(),
            Stage::Group { candidates, .. } => candidates.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cost(&self, k: usize) -> u32 {
        match self {
            Stage::Node { candidates, .. } => candidates[k].cost,
            Stage::Group { candidates, .. } => candidates[k].cost,
        }
    }

    pub fn availability(&self, k: usize) -> f64 {
        match self {
            Stage::Node { candidates, .. } => candidates[k].availability,
            Stage::Group { candidates, .. } => candidates[k].availability,
        }
    }

    fn is_group(&self) -> bool {
        matches!(self, Stage::Group { .. })
    }

    /// Keeps only the first `n` candidates.
    pub fn truncate(&mut self, n: usize) {
        match self {
            Stage::Node { candidates, .. } => candidates.truncate(n),
            Stage::Group { candidates, .. } => candidates.truncate(n),
        }
    }
}

/// Candidate lists in chain order; a co-located pair forms one stage placed
/// at the lower of its two node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLists {
    pub stages: Vec<Stage>,
    pub nodes: usize,
}

impl CandidateLists {
    /// Assembles the deployment picked by one candidate index per stage.
    pub fn config(&self, choice: &[usize], thresholds: &Allocation) -> DeploymentConfig {
        let mut nodes = vec![Vec::new(); self.nodes];
        let mut shared = None;
        for (stage, &k) in self.stages.iter().zip(choice) {
            match stage {
                Stage::Node { node, candidates } => nodes[*node] = candidates[k].nrs.clone(),
                Stage::Group {
                    first,
                    second,
                    candidates,
                } => {
                    let c = &candidates[k];
                    nodes[*first] = c.first.clone();
                    nodes[*second] = c.second.clone();
                    shared = Some(SharedNrs {
                        first: *first,
                        second: *second,
                        nrs: c.shared.clone(),
                    });
                }
            }
        }
        DeploymentConfig {
            nodes,
            shared,
            thresholds: thresholds.clone(),
        }
    }

    pub fn combinations(&self) -> f64 {
        self.stages.iter().map(|s| s.len() as f64).product()
    }
}

/// Nondecreasing sequences of length 1..=max_len over `0..items`.
fn multisets(items: usize, max_len: u32) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(items: usize, max_len: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max_len {
            return;
        }
        for i in start..items {
            cur.push(i);
            rec(items, max_len, i, cur, out);
            cur.pop();
        }
    }
    rec(items, max_len as usize, 0, &mut cur, &mut out);
    out
}

fn node_candidates(ev: &Evaluator, params: &SearchParams, node: usize) -> Result<Vec<NodeCandidate>> {
    let threshold = params.thresholds[node];
    let sizes: Vec<u32> = (1..=params.max_containers_per_nr).collect();
    let combos: Vec<Vec<u32>> = multisets(sizes.len(), params.max_nrs_per_node)
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| sizes[i]).collect::<Vec<u32>>())
        .filter(|nrs| nrs.iter().sum::<u32>() >= threshold)
        .collect();
    let evaluated = combos
        .into_par_iter()
        .map(|nrs| {
            let availability = ev.node_availability(&nrs, threshold)?;
            let cost = nr_cost(nrs.len(), nrs.iter().sum());
            Ok(NodeCandidate {
                nrs,
                availability,
                cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut kept: Vec<NodeCandidate> = evaluated
        .into_iter()
        .filter(|c| c.availability >= params.availability_target)
        .collect();
    kept.sort_by(|a, b| (a.cost, &a.nrs).cmp(&(b.cost, &b.nrs)));
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GroupItem {
    First(u32),
    Second(u32),
    Shared(u32, u32),
}

fn group_candidates(ev: &Evaluator, params: &SearchParams, first: usize, second: usize) -> Result<Vec<GroupCandidate>> {
    let cap = params.max_containers_per_nr;
    let mut items: Vec<GroupItem> = (1..=cap).map(GroupItem::First).collect();
    items.extend((1..=cap).map(GroupItem::Second));
    items.extend((1..cap).flat_map(|a| (1..=cap - a).map(move |b| GroupItem::Shared(a, b))));
    let (t1, t2) = (params.thresholds[first], params.thresholds[second]);
    let combos: Vec<GroupCandidate> = multisets(items.len(), params.max_nrs_per_node)
        .into_iter()
        .filter_map(|idx| {
            let mut c = GroupCandidate {
                first: Vec::new(),
                second: Vec::new(),
                shared: Vec::new(),
                availability: 0.0,
                cost: 0,
            };
            for i in idx {
                match items[i] {
                    GroupItem::First(n) => c.first.push(n),
                    GroupItem::Second(n) => c.second.push(n),
                    GroupItem::Shared(a, b) => c.shared.push((a, b)),
                }
            }
            let n1: u32 = c.first.iter().sum::<u32>() + c.shared.iter().map(|s| s.0).sum::<u32>();
            let n2: u32 = c.second.iter().sum::<u32>() + c.shared.iter().map(|s| s.1).sum::<u32>();
            if c.shared.is_empty() || n1 < t1 || n2 < t2 {
                return None;
            }
            c.cost = nr_cost(c.first.len() + c.second.len() + c.shared.len(), n1 + n2);
            Some(c)
        })
        .collect();
    let evaluated = combos
        .into_par_iter()
        .map(|mut c| {
            c.availability = ev.group_availability(&c.first, &c.second, &c.shared, (t1, t2))?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut kept: Vec<GroupCandidate> = evaluated
        .into_iter()
        .filter(|c| c.availability >= params.availability_target)
        .collect();
    kept.sort_by(|a, b| (a.cost, &a.first, &a.second, &a.shared).cmp(&(b.cost, &b.first, &b.second, &b.shared)));
    Ok(kept)
}

/// Builds an [`Evaluator`] sized for `params` and runs [`srneval_with`].
pub fn srneval(chain: &ChainSpec, rates: &LayerRates, params: &SearchParams) -> Result<CandidateLists> {
    params.validate(chain.len())?;
    let mut ev = Evaluator::new(*rates, params.max_containers_per_nr)?;
    if matches!(params.deployment, DeploymentType::CoLocated { .. }) {
        ev = ev.with_colocated()?;
    }
    srneval_with(&ev, chain, params)
}

/// Per-node candidate lists, each sorted by cost and then structure.
pub fn srneval_with(ev: &Evaluator, chain: &ChainSpec, params: &SearchParams) -> Result<CandidateLists> {
    params.validate(chain.len())?;
    if params.max_containers_per_nr > ev.cap() {
        return Err(SearchError::InvalidParams(format!(
            "evaluator solved NRs up to {} containers, search needs {}",
            ev.cap(),
            params.max_containers_per_nr
        )));
    }
    let empty = |node: usize| SearchError::EmptyCandidateSet {
        node: chain.nodes[node].name.clone(),
        target: params.availability_target,
    };
    let group = match params.deployment {
        DeploymentType::CoLocated { first, second } => Some((first, second)),
        DeploymentType::Homogeneous => None,
    };
    let mut stages = Vec::new();
    for node in 0..chain.len() {
        match group {
            Some((a, b)) if node == a.min(b) => {
                let candidates = group_candidates(ev, params, a, b)?;
                if candidates.is_empty() {
                    return Err(empty(a));
                }
                stages.push(Stage::Group {
                    first: a,
                    second: b,
                    candidates,
                });
            }
            Some((a, b)) if node == a.max(b) => {}
            _ => {
                let candidates = node_candidates(ev, params, node)?;
                if candidates.is_empty() {
                    return Err(empty(node));
                }
                stages.push(Stage::Node { node, candidates });
            }
        }
    }
    Ok(CandidateLists {
        stages,
        nodes: chain.len(),
    })
}

/// One feasible configuration. `choice` holds the candidate index picked at
/// each stage; [`CandidateLists::config`] turns it into a deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigRecord {
    pub id: usize,
    pub choice: Vec<usize>,
    pub availability: f64,
    pub csd: f64,
    pub cost: u32,
}

impl fmt::Display for ConfigRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} cost {} A={} CSD={} s", self.id, self.cost, self.availability, self.csd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    /// Partial configurations examined.
    pub visited: usize,
    pub pruned_by_cost: usize,
    pub pruned_by_availability: usize,
    pub rejected_by_csd: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub records: Vec<ConfigRecord>,
    pub stats: SearchStats,
}

impl SearchOutcome {
    pub fn cheapest(&self) -> Option<&ConfigRecord> {
        self.records.first()
    }
}

struct Walker<'a> {
    lists: &'a CandidateLists,
    params: &'a SearchParams,
    chain: &'a ChainSpec,
    c_min: f64,
    found: Vec<ConfigRecord>,
    stats: SearchStats,
}

impl Walker<'_> {
    fn cost_limit(&self, depth: usize) -> f64 {
        let last = depth + 1 == self.lists.stages.len();
        match depth {
            0 => self.params.m1 * self.c_min,
            1 => self.params.m2 * self.c_min,
            _ if !last || self.lists.stages[depth].is_group() => self.c_min,
            _ => f64::INFINITY,
        }
    }

    fn descend(&mut self, depth: usize, cost: u32, availability: f64, choice: &mut Vec<usize>) -> Result<()> {
        let stage = &self.lists.stages[depth];
        let last = depth + 1 == self.lists.stages.len();
        for k in 0..stage.len() {
            self.stats.visited += 1;
            let c = cost + stage.cost(k);
            let a = availability * stage.availability(k);
            if f64::from(c) > self.cost_limit(depth) {
                // Candidates are sorted by cost, so the rest of the stage fails too.
                self.stats.pruned_by_cost += stage.len() - k;
                break;
            }
            if (depth >= 1 || last) && a < self.params.availability_target {
                self.stats.pruned_by_availability += 1;
                continue;
            }
            choice.push(k);
            if last {
                self.save(choice, c, a)?;
            } else {
                self.descend(depth + 1, c, a, choice)?;
            }
            choice.pop();
        }
        Ok(())
    }

    fn save(&mut self, choice: &[usize], cost: u32, availability: f64) -> Result<()> {
        let deployment = self.lists.config(choice, &self.params.thresholds);
        let csd = qnet::csd(self.chain, &deployment.container_totals())?;
        if csd > self.chain.csd_target {
            self.stats.rejected_by_csd += 1;
            return Ok(());
        }
        if self.params.cost_pruning {
            self.c_min = self.c_min.min(f64::from(cost));
        }
        self.found.push(ConfigRecord {
            id: 0,
            choice: choice.to_vec(),
            availability,
            csd,
            cost,
        });
        Ok(())
    }
}

/// Runs the pruned search. Records come back sorted by cost, then by
/// descending availability, with ids numbered from 1.
pub fn optsearchchain(lists: &CandidateLists, params: &SearchParams, chain: &ChainSpec) -> Result<SearchOutcome> {
    params.validate(chain.len())?;
    if lists.stages.iter().any(Stage::is_empty) || lists.stages.is_empty() {
        return Err(SearchError::InvalidParams("candidate lists must be non-empty".into()));
    }
    let mut walker = Walker {
        lists,
        params,
        chain,
        c_min: f64::INFINITY,
        found: Vec::new(),
        stats: SearchStats::default(),
    };
    walker.descend(0, 0, 1.0, &mut Vec::new())?;
    let mut records = walker.found;
    if records.is_empty() {
        return Err(SearchError::NoFeasibleConfig {
            availability: params.availability_target,
            csd: chain.csd_target,
        });
    }
    records.sort_by(|a, b| a.cost.cmp(&b.cost).then(b.availability.total_cmp(&a.availability)));
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i + 1;
    }
    Ok(SearchOutcome {
        records,
        stats: walker.stats,
    })
}

/// Cheapest feasible cost with and without cost pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruningCheck {
    pub pruned: u32,
    pub exhaustive: u32,
}

impl PruningCheck {
    /// False when the multiplier prunes discarded the optimum.
    pub fn is_sound(&self) -> bool {
        self.pruned == self.exhaustive
    }
}

/// Re-runs the search without cost pruning and compares the cheapest costs.
/// Skipped (returns `None`) when the lists span more than `max_combinations`
/// chain configurations.
pub fn pruning_check(
    lists: &CandidateLists,
    params: &SearchParams,
    chain: &ChainSpec,
    pruned: &SearchOutcome,
    max_combinations: f64,
) -> Result<Option<PruningCheck>> {
    if lists.combinations() > max_combinations {
        return Ok(None);
    }
    let unpruned = SearchParams {
        cost_pruning: false,
        ..params.clone()
    };
    let full = optsearchchain(lists, &unpruned, chain)?;
    Ok(Some(PruningCheck {
        pruned: pruned.cheapest().map_or(u32::MAX, |r| r.cost),
        exhaustive: full.cheapest().map_or(u32::MAX, |r| r.cost),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::NodeSpec;

    fn ims(csd_target: f64) -> ChainSpec {
        ChainSpec::tandem(
            vec![
                NodeSpec::new("P-CSCF", 0.008, 1.25),
                NodeSpec::new("S-CSCF", 0.0068, 1.25),
                NodeSpec::new("I-CSCF", 0.0054, 1.25),
                NodeSpec::new("HSS", 0.009, 1.25),
            ],
            200.0,
            csd_target,
            10,
        )
    }

    fn evaluator() -> Evaluator {
        Evaluator::new(LayerRates::table_one(), 6).unwrap()
    }

    #[test]
    fn multiset_enumeration() {
        assert_eq!(multisets(2, 2), vec![vec![0], vec![0, 0], vec![0, 1], vec![1], vec![1, 1]]);
        // C(6 + 4, 4) - 1 nonempty multisets of size <= 4 over 6 items.
        assert_eq!(multisets(6, 4).len(), 209);
    }

    #[test]
    fn zero_target_admits_everything_stable() {
        let params = SearchParams::new(0.0, Allocation(vec![2, 2, 2, 3]));
        let lists = srneval_with(&evaluator(), &ims(0.3), &params).unwrap();
        let Stage::Node { candidates, .. } = &lists.stages[3] else { panic!() };
        assert_eq!(candidates[0].nrs, vec![3]);
        assert_eq!(candidates[0].cost, 5);
        assert!(candidates.iter().all(|c| c.nrs.iter().sum::<u32>() >= 3));
    }

    #[test]
    fn single_nr_cannot_reach_six_nines() {
        let mut params = SearchParams::new(0.999999, Allocation(vec![2, 2, 2, 3]));
        params.max_nrs_per_node = 1;
        let err = srneval_with(&evaluator(), &ims(0.3), &params).unwrap_err();
        assert!(matches!(err, SearchError::EmptyCandidateSet { ref node, .. } if node == "P-CSCF"));
    }

    #[test]
    fn candidates_are_multisets() {
        let params = SearchParams::new(0.0, Allocation(vec![1, 1, 1, 1]));
        let lists = srneval_with(&evaluator(), &ims(0.3), &params).unwrap();
        let Stage::Node { candidates, .. } = &lists.stages[0] else { panic!() };
        let with_2_3 = candidates.iter().filter(|c| {
            let mut v = c.nrs.clone();
            v.sort_unstable();
            v == vec![2, 3]
        });
        assert_eq!(with_2_3.count(), 1);
        assert!(candidates.windows(2).all(|w| (w[0].cost, &w[0].nrs) < (w[1].cost, &w[1].nrs)));
    }

    #[test]
    fn five_nines_search_finds_double_replicas() {
        let params = SearchParams::new(0.99999, Allocation(vec![2, 2, 2, 3]));
        let chain = ims(0.3);
        let lists = srneval_with(&evaluator(), &chain, &params).unwrap();
        let outcome = optsearchchain(&lists, &params, &chain).unwrap();
        let target = DeploymentConfig::homogeneous(
            vec![vec![2, 2], vec![2, 2], vec![2, 2], vec![3, 3]],
            Allocation(vec![2, 2, 2, 3]),
        );
        let hit = outcome.records.iter().find(|r| lists.config(&r.choice, &params.thresholds) == target);
        let hit = hit.expect("double-replica configuration missing");
        assert_eq!(hit.cost, 34);
        for r in &outcome.records {
            assert!(r.availability >= 0.99999);
            assert!(r.csd <= 0.3);
        }
        assert!(outcome.records.windows(2).all(|w| w[0].cost <= w[1].cost));
    }

    #[test]
    fn inert_pruning_equals_filtering() {
        let mut params = SearchParams::new(0.9999, Allocation(vec![2, 2, 2, 3]));
        params.max_nrs_per_node = 2;
        params.max_containers_per_nr = 3;
        params.m1 = 1.0;
        params.m2 = 1.0;
        params.cost_pruning = false;
        let chain = ims(0.3);
        let mut lists = srneval_with(&evaluator(), &chain, &params).unwrap();
        for s in &mut lists.stages {
            s.truncate(4);
        }
        let outcome = optsearchchain(&lists, &params, &chain).unwrap();
        let mut expected = 0;
        let sizes: Vec<usize> = lists.stages.iter().map(Stage::len).collect();
        for i in 0..sizes.iter().product::<usize>() {
            let mut rest = i;
            let choice: Vec<usize> = sizes
                .iter()
                .map(|&n| {
                    let k = rest % n;
                    rest /= n;
                    k
                })
                .collect();
            let a: f64 = lists.stages.iter().zip(&choice).map(|(s, &k)| s.availability(k)).product();
            if a >= params.availability_target {
                expected += 1;
            }
        }
        assert_eq!(outcome.records.len(), expected);
    }

    #[test]
    fn colocated_stage_layout() {
        let mut params = SearchParams::new(0.99, Allocation(vec![2, 2, 2, 3]));
        params.deployment = DeploymentType::CoLocated { first: 2, second: 3 };
        params.max_nrs_per_node = 2;
        let ev = evaluator().with_colocated().unwrap();
        let chain = ims(0.3);
        let lists = srneval_with(&ev, &chain, &params).unwrap();
        assert_eq!(lists.stages.len(), 3);
        let Stage::Group { candidates, .. } = &lists.stages[2] else { panic!() };
        assert!(candidates.iter().all(|c| !c.shared.is_empty()));
        let cheapest = &candidates[0];
        assert_eq!(cheapest.shared, vec![(2, 3)]);
        assert_eq!(cheapest.cost, 7);
        let outcome = optsearchchain(&lists, &params, &chain).unwrap();
        let best = outcome.cheapest().unwrap();
        assert!(lists.config(&best.choice, &params.thresholds).is_colocated());
    }

    #[test]
    fn invalid_params() {
        let chain = ims(0.3);
        let mut p = SearchParams::new(0.9, Allocation(vec![2, 2, 2]));
        assert!(p.validate(4).is_err());
        p.thresholds = Allocation(vec![2, 2, 2, 3]);
        p.m1 = 0.9;
        assert!(p.validate(4).is_err());
        p.m1 = 0.5;
        p.deployment = DeploymentType::CoLocated { first: 2, second: 2 };
        assert!(srneval_with(&evaluator(), &chain, &p).is_err());
    }
}
