//! Five-layer network replica (NR) models and chain availability.
//!
//! An NR stacks containers on a Docker daemon, a VM, a hypervisor and a
//! physical host. A failure at any layer takes every layer above it down at
//! once; repairs then proceed bottom-up, each layer waiting until everything
//! beneath it is working again. A co-located NR runs two container/daemon/VM
//! stacks on one shared hypervisor and host.
//!
//! NRs of a node share nothing, so per-NR distributions of up containers are
//! combined by convolution rather than by solving one large net.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::alloc::Allocation;
use crate::srn::{self, PlaceId, RateKind, SrnError, SrnModel};

pub const DEFAULT_NR_CAP: u32 = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeployError {
    #[error("invalid layer rates: {0}")]
    InvalidRates(String),
    #[error("invalid container counts: {0}")]
    InvalidCounts(String),
    #[error("invalid deployment: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Srn(#[from] SrnError),
}

pub type Result<T, E = DeployError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerRate {
    pub mttf_h: f64,
    pub mttr_h: f64,
}

impl LayerRate {
    pub fn new(mttf_h: f64, mttr_h: f64) -> Self {
        Self { mttf_h, mttr_h }
    }

    pub fn failure_rate(&self) -> f64 {
        1.0 / self.mttf_h
    }

    pub fn repair_rate(&self) -> f64 {
        1.0 / self.mttr_h
    }
}

/// Per-layer MTTF/MTTR in hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerRates {
    pub cnt: LayerRate,
    pub dck: LayerRate,
    pub vm: LayerRate,
    pub hyp: LayerRate,
    pub phy: LayerRate,
}

impl LayerRates {
    /// The softIMS reference parameters.
    pub fn table_one() -> Self {
        Self {
            cnt: LayerRate::new(500.0, 2.0 / 3600.0),
            dck: LayerRate::new(1000.0, 5.0 / 3600.0),
            vm: LayerRate::new(2880.0, 1.0),
            hyp: LayerRate::new(2880.0, 2.0),
            phy: LayerRate::new(60000.0, 8.0),
        }
    }

    pub fn layers(&self) -> [(&'static str, LayerRate); 5] {
        [
            ("CNT", self.cnt),
            ("DCK", self.dck),
            ("VM", self.vm),
            ("HYP", self.hyp),
            ("PHY", self.phy),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.layers() {
            if !(r.mttf_h > 0.0 && r.mttf_h.is_finite() && r.mttr_h > 0.0 && r.mttr_h.is_finite()) {
                return Err(DeployError::InvalidRates(format!(
                    "{name}: MTTF and MTTR must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    up: PlaceId,
    dn: PlaceId,
    repair: srn::TransitionId,
    name: &'static str,
}

fn add_layer(
    net: &mut SrnModel,
    name: &'static str,
    suffix: &str,
    tokens: u32,
    rate: LayerRate,
    kind: RateKind,
) -> Layer {
    let up = net.add_place(format!("P_up{name}{suffix}"), tokens);
    let dn = net.add_place(format!("P_dn{name}{suffix}"), 0);
    let fail = net.add_timed(format!("T_f{name}{suffix}"), rate.failure_rate(), kind);
    net.add_input(fail, up, 1);
    net.add_output(fail, dn, 1);
    let repair = net.add_timed(format!("T_r{name}{suffix}"), rate.repair_rate(), kind);
    net.add_input(repair, dn, 1);
    net.add_output(repair, up, 1);
    Layer {
        up,
        dn,
        repair,
        name,
    }
}

/// Adds cascade and repair-ordering arcs for the `upper` layers (top first),
/// which sit on `lower`.
fn wire(net: &mut SrnModel, suffix: &str, upper: &[Layer], lower: &[Layer]) {
    let all: Vec<Layer> = upper.iter().chain(lower).copied().collect();
    for (i, layer) in upper.iter().enumerate() {
        let Some(beneath) = all.get(i + 1) else { continue };
        let t = net.add_immediate(format!("t_{}{suffix}", layer.name), 1, 1.0);
        net.add_input(t, layer.up, 1);
        net.add_output(t, layer.dn, 1);
        net.add_inhibitor(t, beneath.up, 1);
        for below in &all[i + 1..] {
            net.add_inhibitor(layer.repair, below.dn, 1);
        }
    }
}

fn add_stack(net: &mut SrnModel, suffix: &str, n: u32, rates: &LayerRates) -> [Layer; 3] {
    [
        add_layer(net, "CNT", suffix, n, rates.cnt, RateKind::MarkingDependent),
        add_layer(net, "DCK", suffix, 1, rates.dck, RateKind::Constant),
        add_layer(net, "VM", suffix, 1, rates.vm, RateKind::Constant),
    ]
}

fn add_infra(net: &mut SrnModel, suffix: &str, rates: &LayerRates) -> [Layer; 2] {
    let infra = [
        add_layer(net, "HYP", suffix, 1, rates.hyp, RateKind::Constant),
        add_layer(net, "PHY", suffix, 1, rates.phy, RateKind::Constant),
    ];
    wire(net, suffix, &infra, &[]);
    infra
}

fn add_homog(net: &mut SrnModel, suffix: &str, n: u32, rates: &LayerRates) -> PlaceId {
    let infra = add_infra(net, suffix, rates);
    let stack = add_stack(net, suffix, n, rates);
    wire(net, suffix, &stack, &infra);
    stack[0].up
}

/// Returns the up-container places of the two stacks. A stack with no
/// containers is left out entirely.
fn add_coloc(net: &mut SrnModel, suffix: &str, n1: u32, n2: u32, rates: &LayerRates) -> [Option<PlaceId>; 2] {
    let infra = add_infra(net, suffix, rates);
    let mut ups = [None, None];
    for (k, n) in [n1, n2].into_iter().enumerate() {
        if n == 0 {
            continue;
        }
        let stack_suffix = format!("{suffix}_{}", k + 1);
        let stack = add_stack(net, &stack_suffix, n, rates);
        wire(net, &stack_suffix, &stack, &infra);
        ups[k] = Some(stack[0].up);
    }
    ups
}

/// An NR net together with the places whose tokens count up containers of
/// each type.
#[derive(Debug, Clone)]
pub struct NrNet {
    pub model: SrnModel,
    pub containers: [Option<PlaceId>; 2],
    pub capacity: [u32; 2],
}

fn check_count(n: u32, cap: u32) -> Result<()> {
    if n > cap {
        return Err(DeployError::InvalidCounts(format!("{n} containers exceed the per-NR cap {cap}")));
    }
    Ok(())
}

pub fn build_homog_nr(n: u32, rates: &LayerRates) -> Result<NrNet> {
    rates.validate()?;
    if n == 0 {
        return Err(DeployError::InvalidCounts("an NR needs at least one container".into()));
    }
    let mut model = SrnModel::new();
    let up = add_homog(&mut model, "", n, rates);
    Ok(NrNet {
        model,
        containers: [Some(up), None],
        capacity: [n, 0],
    })
}

pub fn build_coloc_nr(n1: u32, n2: u32, rates: &LayerRates) -> Result<NrNet> {
    rates.validate()?;
    if n1 + n2 == 0 {
        return Err(DeployError::InvalidCounts("an NR needs at least one container".into()));
    }
    let mut model = SrnModel::new();
    let containers = add_coloc(&mut model, "", n1, n2, rates);
    Ok(NrNet {
        model,
        containers,
        capacity: [n1, n2],
    })
}

/// One NR of a co-located node pair, tagged by which container types it hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupNr {
    First(u32),
    Second(u32),
    Shared(u32, u32),
}

/// Builds every NR in `nrs` into a single net. Only meant as an oracle for
/// the convolution shortcut: the state space is the product of the parts.
pub fn build_monolithic(nrs: &[GroupNr], rates: &LayerRates) -> Result<(SrnModel, [Vec<PlaceId>; 2])> {
    rates.validate()?;
    let mut model = SrnModel::new();
    let mut ups: [Vec<PlaceId>; 2] = [Vec::new(), Vec::new()];
    for (k, nr) in nrs.iter().enumerate() {
        let suffix = format!("#{k}");
        match *nr {
            GroupNr::First(n) | GroupNr::Second(n) if n == 0 => {
                return Err(DeployError::InvalidCounts("an NR needs at least one container".into()));
            }
            GroupNr::First(n) => ups[0].push(add_homog(&mut model, &suffix, n, rates)),
            GroupNr::Second(n) => ups[1].push(add_homog(&mut model, &suffix, n, rates)),
            GroupNr::Shared(n1, n2) => {
                let [a, b] = add_coloc(&mut model, &suffix, n1, n2, rates);
                ups[0].extend(a);
                ups[1].extend(b);
            }
        }
    }
    Ok((model, ups))
}

/// Joint distribution of up containers of two types. A single-type
/// distribution has one column.
#[derive(Debug, Clone, PartialEq)]
pub struct UpPmf {
    rows: usize,
    cols: usize,
    p: Vec<f64>,
}

impl UpPmf {
    /// All mass on zero containers of either type.
    pub fn unit() -> Self {
        Self {
            rows: 1,
            cols: 1,
            p: vec![1.0],
        }
    }

    pub fn from_1d(p: Vec<f64>) -> Self {
        Self { rows: p.len(), cols: 1, p }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged pmf");
        Self {
            rows: rows.len(),
            cols,
            p: rows.concat(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.rows && j < self.cols {
            self.p[i * self.cols + j]
        } else {
            0.0
        }
    }

    /// Swaps the two container types.
    pub fn transpose(&self) -> Self {
        let mut p = vec![0.0; self.p.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                p[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            p,
        }
    }

    /// Distribution of the sum of two independent container counts.
    pub fn convolve(&self, other: &Self) -> Self {
        let rows = self.rows + other.rows - 1;
        let cols = self.cols + other.cols - 1;
        let mut p = vec![0.0; rows * cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        p[(i + k) * cols + j + l] += a * other.get(k, l);
                    }
                }
            }
        }
        Self { rows, cols, p }
    }

    /// `P(first >= t1 and second >= t2)`; exactly 1 for a zero threshold.
    pub fn tail(&self, t1: u32, t2: u32) -> f64 {
        if t1 == 0 && t2 == 0 {
            return 1.0;
        }
        let mut sum = 0.0;
        for i in t1 as usize..self.rows {
            for j in t2 as usize..self.cols {
                sum += self.get(i, j);
            }
        }
        sum
    }

    pub fn marginal_first(&self) -> Vec<f64> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn marginal_second(&self) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Largest container counts with nonzero support.
    pub fn capacity(&self) -> (u32, u32) {
        (self.rows as u32 - 1, self.cols as u32 - 1)
    }
}

/// Steady-state distribution of up containers of an NR net.
pub fn nr_up_pmf(net: &NrNet) -> Result<UpPmf> {
    let ctmc = srn::reachability(&net.model)?;
    let ss = srn::steady_state(&ctmc)?;
    let cols = net.capacity[1] as usize + 1;
    let mut p = vec![0.0; (net.capacity[0] as usize + 1) * cols];
    for (m, prob) in ss.iter() {
        let count = |k: usize| net.containers[k].map_or(0, |place| m.tokens(place) as usize);
        p[count(0) * cols + count(1)] += prob;
    }
    Ok(UpPmf {
        rows: net.capacity[0] as usize + 1,
        cols,
        p,
    })
}

/// `P(total up containers >= threshold)` across independent NRs.
pub fn node_availability(pmfs: &[UpPmf], threshold: u32) -> f64 {
    coloc_availability(pmfs, threshold, 0)
}

/// `P(type-1 up >= t1 and type-2 up >= t2)` across independent NRs.
pub fn coloc_availability(pmfs: &[UpPmf], t1: u32, t2: u32) -> f64 {
    let joint = pmfs.iter().fold(UpPmf::unit(), |acc, p| acc.convolve(p));
    let (c1, c2) = joint.capacity();
    if t1 > c1 || t2 > c2 {
        warn!("threshold ({t1}, {t2}) exceeds deployed containers ({c1}, {c2}); availability is 0");
        return 0.0;
    }
    joint.tail(t1, t2)
}

/// Number of leading nines of an availability, e.g. 3 for 0.9991. The small
/// slack makes printed values such as 0.99999 count in full.
pub fn nines(availability: f64) -> u32 {
    if availability >= 1.0 {
        return u32::MAX;
    }
    if availability <= 0.0 {
        return 0;
    }
    (-(1.0 - availability).log10() + 1e-9).floor().max(0.0) as u32
}

/// NRs shared by two nodes that are deployed co-located.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SharedNrs {
    pub first: usize,
    pub second: usize,
    /// `(type-1 containers, type-2 containers)` per shared NR.
    pub nrs: Vec<(u32, u32)>,
}

/// Containers per homogeneous NR for every node, plus an optional set of
/// co-located NRs hosting two of the nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeploymentConfig {
    pub nodes: Vec<Vec<u32>>,
    pub shared: Option<SharedNrs>,
    pub thresholds: Allocation,
}

impl DeploymentConfig {
    pub fn homogeneous(nodes: Vec<Vec<u32>>, thresholds: Allocation) -> Self {
        Self {
            nodes,
            shared: None,
            thresholds,
        }
    }

    pub fn is_colocated(&self) -> bool {
        self.shared.is_some()
    }

    pub fn nr_count(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum::<usize>() + self.shared.as_ref().map_or(0, |s| s.nrs.len())
    }

    pub fn container_totals(&self) -> Vec<u32> {
        let mut totals: Vec<u32> = self.nodes.iter().map(|nrs| nrs.iter().sum()).collect();
        if let Some(s) = &self.shared {
            for &(a, b) in &s.nrs {
                totals[s.first] += a;
                totals[s.second] += b;
            }
        }
        totals
    }

    /// Nodes deploying fewer containers than their threshold.
    pub fn degenerate_nodes(&self) -> Vec<usize> {
        self.container_totals()
            .iter()
            .zip(self.thresholds.iter())
            .enumerate()
            .filter(|(_, (have, need))| have < need)
            .map(|(i, _)| i)
            .collect()
    }

    /// Two units per NR plus one per container.
    pub fn cost(&self) -> u32 {
        2 * self.nr_count() as u32 + self.container_totals().iter().sum::<u32>()
    }

    /// The same cost with an NR worth one unit and a container half a unit.
    pub fn half_scale_cost(&self) -> f64 {
        f64::from(self.cost()) / 2.0
    }

    pub fn validate(&self, cap: u32) -> Result<()> {
        let bad = |msg: String| Err(DeployError::InvalidConfig(msg));
        if self.thresholds.len() != self.nodes.len() {
            return bad(format!(
                "{} thresholds for {} nodes",
                self.thresholds.len(),
                self.nodes.len()
            ));
        }
        for (i, nrs) in self.nodes.iter().enumerate() {
            for &n in nrs {
                if n == 0 || n > cap {
                    return bad(format!("node {i}: NR with {n} containers (allowed 1..={cap})"));
                }
            }
        }
        if let Some(s) = &self.shared {
            if s.first == s.second || s.first >= self.nodes.len() || s.second >= self.nodes.len() {
                return bad(format!("co-located pair ({}, {}) is not two distinct nodes", s.first, s.second));
            }
            for &(a, b) in &s.nrs {
                if a + b == 0 || a + b > cap {
                    return bad(format!("co-located NR ({a}, {b}) must hold 1..={cap} containers"));
                }
            }
        }
        Ok(())
    }
}

/// Availability of one factor of the chain product: a single node, or the
/// co-located pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorAvailability {
    pub nodes: Vec<usize>,
    pub availability: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainAvailability {
    pub availability: f64,
    pub factors: Vec<FactorAvailability>,
}

/// Solves each distinct NR shape once and reuses its distribution.
#[derive(Debug, Clone)]
pub struct Evaluator {
    rates: LayerRates,
    cap: u32,
    homog: Vec<UpPmf>,
    coloc: HashMap<(u32, u32), UpPmf>,
}

impl Evaluator {
    /// Solves homogeneous NRs with 1..=cap containers. Co-located shapes are
    /// added with [`Evaluator::with_colocated`].
    pub fn new(rates: LayerRates, cap: u32) -> Result<Self> {
        rates.validate()?;
        if cap == 0 {
            return Err(DeployError::InvalidCounts("per-NR cap must be positive".into()));
        }
        let homog = (1..=cap)
            .into_par_iter()
            .map(|n| nr_up_pmf(&build_homog_nr(n, &rates)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rates,
            cap,
            homog,
            coloc: HashMap::new(),
        })
    }

    /// Also solves every co-located NR with both stacks populated and at most
    /// `cap` containers in total.
    pub fn with_colocated(mut self) -> Result<Self> {
        let shapes: Vec<(u32, u32)> = (1..self.cap)
            .flat_map(|a| (1..=self.cap - a).map(move |b| (a, b)))
            .collect();
        let rates = self.rates;
        let solved = shapes
            .par_iter()
            .map(|&(a, b)| Ok(((a, b), nr_up_pmf(&build_coloc_nr(a, b, &rates)?)?)))
            .collect::<Result<Vec<_>>>()?;
        self.coloc.extend(solved);
        Ok(self)
    }

    pub fn rates(&self) -> &LayerRates {
        &self.rates
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn homog_pmf(&self, n: u32) -> Result<&UpPmf> {
        if n == 0 {
            return Err(DeployError::InvalidCounts("an NR needs at least one container".into()));
        }
        check_count(n, self.cap)?;
        Ok(&self.homog[n as usize - 1])
    }

    pub fn coloc_pmf(&self, n1: u32, n2: u32) -> Result<UpPmf> {
        check_count(n1 + n2, self.cap)?;
        match (n1, n2) {
            (0, n) => Ok(self.homog_pmf(n)?.transpose()),
            (n, 0) => Ok(self.homog_pmf(n)?.clone()),
            _ => match self.coloc.get(&(n1, n2)) {
                Some(p) => Ok(p.clone()),
                None => nr_up_pmf(&build_coloc_nr(n1, n2, &self.rates)?),
            },
        }
    }

    pub fn node_availability(&self, nrs: &[u32], threshold: u32) -> Result<f64> {
        let pmfs = nrs
            .iter()
            .map(|&n| self.homog_pmf(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(node_availability(&pmfs, threshold))
    }

    /// Joint availability of a co-located pair: homogeneous NRs of either
    /// node plus the shared NRs.
    pub fn group_availability(
        &self,
        first: &[u32],
        second: &[u32],
        shared: &[(u32, u32)],
        thresholds: (u32, u32),
    ) -> Result<f64> {
        let mut pmfs = Vec::with_capacity(first.len() + second.len() + shared.len());
        for &n in first {
            pmfs.push(self.homog_pmf(n)?.clone());
        }
        for &n in second {
            pmfs.push(self.homog_pmf(n)?.transpose());
        }
        for &(a, b) in shared {
            pmfs.push(self.coloc_pmf(a, b)?);
        }
        Ok(coloc_availability(&pmfs, thresholds.0, thresholds.1))
    }

    pub fn chain_availability(&self, config: &DeploymentConfig) -> Result<ChainAvailability> {
        config.validate(self.cap)?;
        let degenerate = config.degenerate_nodes();
        for &i in &degenerate {
            warn!("node {i} deploys fewer containers than its threshold; availability is 0");
        }
        let group_factor = |s: &SharedNrs| -> Result<FactorAvailability> {
            let (a, b) = (s.first, s.second);
            let t = (config.thresholds[a], config.thresholds[b]);
            Ok(FactorAvailability {
                nodes: vec![a, b],
                availability: self.group_availability(&config.nodes[a], &config.nodes[b], &s.nrs, t)?,
                degenerate: degenerate.contains(&a) || degenerate.contains(&b),
            })
        };
        let mut factors = Vec::new();
        for (i, nrs) in config.nodes.iter().enumerate() {
            match &config.shared {
                // The pair is reported at the position of its lower index.
                Some(s) if i == s.first.min(s.second) => factors.push(group_factor(s)?),
                Some(s) if i == s.first.max(s.second) => {}
                _ => factors.push(FactorAvailability {
                    nodes: vec![i],
                    availability: self.node_availability(nrs, config.thresholds[i])?,
                    degenerate: degenerate.contains(&i),
                }),
            }
        }
        Ok(ChainAvailability {
            availability: factors.iter().map(|f| f.availability).product(),
            factors,
        })
    }
}

/// One-shot chain availability; builds a fresh [`Evaluator`].
pub fn chain_availability(config: &DeploymentConfig, rates: &LayerRates) -> Result<ChainAvailability> {
    let largest = config
        .nodes
        .iter()
        .flatten()
        .copied()
        .chain(config.shared.iter().flat_map(|s| s.nrs.iter().map(|&(a, b)| a + b)))
        .max()
        .unwrap_or(1)
        .max(1);
    Evaluator::new(*rates, largest.max(DEFAULT_NR_CAP))?.chain_availability(config)
}
