//! The analysis commands. Each returns a report that renders as text, CSV or
//! JSON.

use chainperf_core::alloc::{self, Optimality};
use chainperf_core::deploy::{self, build_coloc_nr, build_homog_nr, Evaluator, DEFAULT_NR_CAP};
use chainperf_core::qnet::{self, NodeLoad};
use chainperf_core::search::{self, DeploymentType, SearchParams, SearchStats};
use chainperf_core::srn::{self, TangibleCtmc};
use chainperf_core::Allocation;
use log::{info, warn};
use serde::Serialize;

use crate::document::{ChainDocument, ReferenceDoc};
use crate::output::{deployment_columns, opt_sig10, sig10, to_csv, to_json, to_table, Format};
use crate::CliError;

pub trait Report: Serialize {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;

    /// Free text printed after the table in text mode.
    fn footer(&self) -> String {
        String::new()
    }

    fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Text => Ok(to_table(&self.header(), &self.rows()) + &self.footer()),
            Format::Csv => to_csv(&self.header(), &self.rows()),
            Format::Json => to_json(self),
        }
    }
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// The document's thresholds, or the greedy allocation when none are given.
pub fn resolve_thresholds(doc: &ChainDocument) -> Result<Allocation, CliError> {
    match &doc.thresholds {
        Some(t) => Ok(Allocation(t.clone())),
        None => {
            let result = alloc::optcnt(&doc.chain()?)?;
            info!("thresholds from greedy allocation: {}", result.allocation);
            Ok(result.allocation)
        }
    }
}

pub fn parse_alloc(text: &str, nodes: usize) -> Result<Allocation, CliError> {
    let counts = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| CliError::Validation(format!("--alloc: `{p}` is not a container count")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if counts.len() != nodes {
        return Err(CliError::Validation(format!(
            "--alloc: {} counts for {nodes} nodes",
            counts.len()
        )));
    }
    Ok(Allocation(counts))
}

/// `lo:hi:step`, inclusive of `hi` up to rounding.
pub fn parse_range(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Validation(format!("--alpha-range: expected lo:hi:step, got `{text}`"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !(lo >= 0.0 && hi >= lo && step > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

#[derive(Debug, Serialize)]
pub struct NodeRow {
    pub node: String,
    pub arrival_rate_per_s: f64,
    pub containers: u32,
    pub utilization: f64,
    pub wait_s: f64,
    pub response_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub alpha_ext_per_s: f64,
    pub allocation: Vec<u32>,
    pub nodes: Vec<NodeRow>,
    pub csd_s: f64,
    pub csd_target_s: f64,
}

impl Report for AnalyzeReport {
    fn header(&self) -> Vec<String> {
        strings(&["node", "arrival_rate_per_s", "containers", "utilization", "wait_s", "response_s"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.nodes
            .iter()
            .map(|n| {
                vec![
                    n.node.clone(),
                    sig10(n.arrival_rate_per_s),
                    n.containers.to_string(),
                    sig10(n.utilization),
                    sig10(n.wait_s),
                    sig10(n.response_s),
                ]
            })
            .collect()
    }

    fn footer(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            if let Some(w) = &n.warning {
                out += &format!("warning: {}: {w}\n", n.node);
            }
        }
        out + &format!("CSD {} s (target {} s)\n", sig10(self.csd_s), sig10(self.csd_target_s))
    }
}

pub fn cmd_analyze(doc: &ChainDocument, alloc: Option<Allocation>) -> Result<AnalyzeReport, CliError> {
    let chain = doc.chain()?;
    let alloc = match alloc {
        Some(a) => a,
        None => resolve_thresholds(doc)?,
    };
    let report = qnet::analyze(&chain, &alloc)?;
    Ok(AnalyzeReport {
        alpha_ext_per_s: chain.alpha_ext,
        allocation: alloc.0,
        nodes: report
            .nodes
            .into_iter()
            .map(|n| NodeRow {
                node: n.name,
                arrival_rate_per_s: n.arrival_rate,
                containers: n.containers,
                utilization: n.utilization,
                wait_s: n.wait,
                response_s: n.response,
                warning: n.warning.map(|w| w.to_string()),
            })
            .collect(),
        csd_s: report.csd,
        csd_target_s: chain.csd_target,
    })
}

#[derive(Debug, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub node: String,
    pub gain_s: f64,
    pub csd_after_s: f64,
}

#[derive(Debug, Serialize)]
pub struct OptimizeReport {
    pub nodes: Vec<String>,
    pub floor: Vec<u32>,
    pub allocation: Vec<u32>,
    pub total_containers: u32,
    pub csd_s: f64,
    pub csd_target_s: f64,
    pub iterations: usize,
    pub optimality_guaranteed: bool,
    pub trace: Vec<StepRow>,
}

impl Report for OptimizeReport {
    fn header(&self) -> Vec<String> {
        strings(&["node", "floor", "containers"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.nodes
            .iter()
            .zip(self.floor.iter().zip(&self.allocation))
            .map(|(n, (f, c))| vec![n.clone(), f.to_string(), c.to_string()])
            .collect()
    }

    fn footer(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            out += &format!(
                "step {}: +1 container on {} (gain {} s, CSD {} s)\n",
                s.step,
                s.node,
                sig10(s.gain_s),
                sig10(s.csd_after_s)
            );
        }
        out += &format!(
            "CSD {} s (target {} s) with {} containers after {} steps\n",
            sig10(self.csd_s),
            sig10(self.csd_target_s),
            self.total_containers,
            self.iterations
        );
        if !self.optimality_guaranteed {
            out += "warning: some response time is not convex over the explored range; the allocation is heuristic\n";
        }
        out
    }
}

pub fn cmd_optimize(doc: &ChainDocument) -> Result<OptimizeReport, CliError> {
    let chain = doc.chain()?;
    let floor = alloc::stability_floor(&chain)?;
    let result = alloc::optcnt(&chain)?;
    Ok(OptimizeReport {
        nodes: chain.nodes.iter().map(|n| n.name.clone()).collect(),
        floor: floor.0,
        total_containers: result.allocation.total(),
        allocation: result.allocation.0,
        csd_s: result.csd,
        csd_target_s: chain.csd_target,
        iterations: result.iterations,
        optimality_guaranteed: result.optimality == Optimality::Guaranteed,
        trace: result
            .trace
            .iter()
            .enumerate()
            .map(|(i, s)| StepRow {
                step: i + 1,
                node: chain.nodes[s.node].name.clone(),
                gain_s: s.gain,
                csd_after_s: s.csd_after,
            })
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct FactorRow {
    pub nodes: Vec<String>,
    pub availability: f64,
    pub degenerate: bool,
}

#[derive(Debug, Serialize)]
pub struct AvailabilityRow {
    pub id: String,
    pub layout: Vec<(String, String)>,
    pub availability: f64,
    pub nines: u32,
    pub factors: Vec<FactorRow>,
    /// Absent when the deployed containers cannot keep the chain stable.
    pub csd_s: Option<f64>,
    pub cost: u32,
    pub half_scale_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceDoc>,
}

#[derive(Debug, Serialize)]
pub struct AvailabilityReport {
    pub thresholds: Vec<u32>,
    pub deployments: Vec<AvailabilityRow>,
}

fn ref_cell<T>(r: &Option<ReferenceDoc>, f: impl Fn(&ReferenceDoc) -> Option<T>, show: impl Fn(T) -> String) -> String {
    r.as_ref().and_then(f).map(show).unwrap_or_default()
}

impl Report for AvailabilityReport {
    fn header(&self) -> Vec<String> {
        strings(&[
            "id",
            "deployment",
            "availability",
            "nines",
            "csd_s",
            "cost",
            "reference_availability",
            "reference_csd_s",
            "reference_cost",
        ])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.deployments
            .iter()
            .map(|d| {
                let layout: Vec<String> = d.layout.iter().map(|(k, v)| format!("{k}: {v}")).collect();
                vec![
                    d.id.clone(),
                    layout.join(" | "),
                    sig10(d.availability),
                    d.nines.to_string(),
                    opt_sig10(d.csd_s),
                    d.cost.to_string(),
                    ref_cell(&d.reference, |r| r.availability, |a| a.to_string()),
                    ref_cell(&d.reference, |r| r.csd_s, |a| a.to_string()),
                    ref_cell(&d.reference, |r| r.cost, |a| a.to_string()),
                ]
            })
            .collect()
    }

    fn footer(&self) -> String {
        let mut out = String::new();
        for d in &self.deployments {
            let parts: Vec<String> = d
                .factors
                .iter()
                .map(|f| {
                    let flag = if f.degenerate { " (degenerate)" } else { "" };
                    format!("{}={}{flag}", f.nodes.join("+"), sig10(f.availability))
                })
                .collect();
            out += &format!("{}: {}\n", d.id, parts.join(", "));
        }
        out
    }
}

/// Availability, CSD and cost of the document's deployments (or just `id`).
pub fn cmd_availability(doc: &ChainDocument, id: Option<&str>) -> Result<AvailabilityReport, CliError> {
    let chain = doc.chain()?;
    let names: Vec<String> = chain.nodes.iter().map(|n| n.name.clone()).collect();
    let thresholds = resolve_thresholds(doc)?;
    let selected: Vec<_> = match id {
        Some(id) => vec![doc.deployment_by_id(id)?],
        None => doc.deployment.iter().collect(),
    };
    if selected.is_empty() {
        return Err(CliError::Validation("document has no [[deployment]] blocks".into()));
    }
    let configs = selected
        .iter()
        .map(|d| doc.deployment_config(d, &thresholds))
        .collect::<Result<Vec<_>, _>>()?;
    let cap = configs
        .iter()
        .flat_map(|c| {
            let shared = c.shared.iter().flat_map(|s| s.nrs.iter().map(|&(a, b)| a + b));
            c.nodes.iter().flatten().copied().chain(shared)
        })
        .max()
        .unwrap_or(1)
        .max(DEFAULT_NR_CAP);
    let mut ev = Evaluator::new(doc.layer_rates()?, cap)?;
    if configs.iter().any(|c| c.is_colocated()) {
        ev = ev.with_colocated()?;
    }
    let mut deployments = Vec::new();
    for (d, config) in selected.iter().zip(&configs) {
        let chain_av = ev.chain_availability(config)?;
        if chain_av.factors.iter().any(|f| f.degenerate) {
            warn!("deployment `{}` has nodes below their container threshold", d.id);
        }
        let csd = match qnet::csd(&chain, &config.container_totals()) {
            Ok(v) => Some(v),
            Err(qnet::QueueError::Unstable { node, .. }) => {
                warn!("deployment `{}`: node `{node}` is unstable", d.id);
                None
            }
            Err(e) => return Err(e.into()),
        };
        deployments.push(AvailabilityRow {
            id: d.id.clone(),
            layout: deployment_columns(config, &names),
            availability: chain_av.availability,
            nines: deploy::nines(chain_av.availability),
            factors: chain_av
                .factors
                .iter()
                .map(|f| FactorRow {
                    nodes: f.nodes.iter().map(|&i| names[i].clone()).collect(),
                    availability: f.availability,
                    degenerate: f.degenerate,
                })
                .collect(),
            csd_s: csd,
            cost: config.cost(),
            half_scale_cost: config.half_scale_cost(),
            reference: d.reference,
        });
    }
    Ok(AvailabilityReport {
        thresholds: thresholds.0,
        deployments,
    })
}

#[derive(Debug, Serialize)]
pub struct RecordRow {
    pub id: usize,
    pub layout: Vec<String>,
    pub availability: f64,
    pub nines: u32,
    pub csd_s: f64,
    pub cost: u32,
}

#[derive(Debug, Serialize)]
pub struct PruningRow {
    pub pruned_min_cost: u32,
    pub exhaustive_min_cost: u32,
    pub sound: bool,
}

#[derive(Debug, Serialize)]
pub struct SearchReport {
    pub availability_target: f64,
    pub thresholds: Vec<u32>,
    pub columns: Vec<String>,
    pub candidates_per_stage: Vec<usize>,
    pub total_records: usize,
    pub records: Vec<RecordRow>,
    pub visited: usize,
    pub pruned_by_cost: usize,
    pub pruned_by_availability: usize,
    pub rejected_by_csd: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruning_check: Option<PruningRow>,
}

impl Report for SearchReport {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend(self.columns.iter().cloned());
        h.extend(strings(&["availability", "nines", "csd_s", "cost"]));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![r.id.to_string()];
                row.extend(r.layout.iter().cloned());
                row.extend([sig10(r.availability), r.nines.to_string(), sig10(r.csd_s), r.cost.to_string()]);
                row
            })
            .collect()
    }

    fn footer(&self) -> String {
        let mut out = format!(
            "{} of {} records shown; candidates per stage {:?}; visited {}, pruned {} by cost and {} by availability, {} over the CSD target\n",
            self.records.len(),
            self.total_records,
            self.candidates_per_stage,
            self.visited,
            self.pruned_by_cost,
            self.pruned_by_availability,
            self.rejected_by_csd
        );
        if let Some(p) = &self.pruning_check {
            out += &format!(
                "pruning check: cheapest {} with pruning, {} without ({})\n",
                p.pruned_min_cost,
                p.exhaustive_min_cost,
                if p.sound { "agree" } else { "pruning lost the optimum" }
            );
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchOverrides {
    pub availability_target: Option<f64>,
    pub colocated: Option<bool>,
    /// Re-run without cost pruning when the search space has at most this
    /// many configurations.
    pub check_pruning: Option<f64>,
    /// Report only the cheapest records.
    pub max_records: Option<usize>,
}

pub fn cmd_search(doc: &ChainDocument, overrides: &SearchOverrides) -> Result<SearchReport, CliError> {
    let chain = doc.chain()?;
    let thresholds = resolve_thresholds(doc)?;
    let mut doc = doc.clone();
    if let Some(a) = overrides.availability_target {
        doc.availability_target = Some(a);
    }
    let mut params: SearchParams = doc.search_params(thresholds.clone())?;
    match overrides.colocated {
        Some(false) => params.deployment = DeploymentType::Homogeneous,
        Some(true) if params.deployment == DeploymentType::Homogeneous => {
            let pair = doc.search.as_ref().and_then(|s| s.colocated.clone()).ok_or_else(|| {
                CliError::Validation("--colocated needs `[search] colocated = [first, second]`".into())
            })?;
            params.deployment = DeploymentType::CoLocated {
                first: doc.node_index(&pair[0])?,
                second: doc.node_index(&pair[1])?,
            };
        }
        _ => {}
    }
    let mut ev = Evaluator::new(doc.layer_rates()?, params.max_containers_per_nr)?;
    if matches!(params.deployment, DeploymentType::CoLocated { .. }) {
        ev = ev.with_colocated()?;
    }
    let lists = search::srneval_with(&ev, &chain, &params)?;
    let outcome = search::optsearchchain(&lists, &params, &chain)?;
    let pruning_check = match overrides.check_pruning {
        Some(limit) => search::pruning_check(&lists, &params, &chain, &outcome, limit)?.map(|p| {
            if !p.is_sound() {
                warn!(
                    "cost pruning missed the cheapest configuration ({} vs {})",
                    p.pruned, p.exhaustive
                );
            }
            PruningRow {
                pruned_min_cost: p.pruned,
                exhaustive_min_cost: p.exhaustive,
                sound: p.is_sound(),
            }
        }),
        None => None,
    };
    let names: Vec<String> = chain.nodes.iter().map(|n| n.name.clone()).collect();
    let layout = |choice: &[usize]| deployment_columns(&lists.config(choice, &params.thresholds), &names);
    let columns = match outcome.records.first() {
        Some(r) => layout(&r.choice).into_iter().map(|(k, _)| k).collect(),
        None => Vec::new(),
    };
    let shown = overrides.max_records.unwrap_or(usize::MAX);
    let SearchStats {
        visited,
        pruned_by_cost,
        pruned_by_availability,
        rejected_by_csd,
    } = outcome.stats;
    Ok(SearchReport {
        availability_target: params.availability_target,
        thresholds: thresholds.0,
        columns,
        candidates_per_stage: lists.stages.iter().map(|s| s.len()).collect(),
        total_records: outcome.records.len(),
        records: outcome
            .records
            .iter()
            .take(shown)
            .map(|r| RecordRow {
                id: r.id,
                layout: layout(&r.choice).into_iter().map(|(_, v)| v).collect(),
                availability: r.availability,
                nines: deploy::nines(r.availability),
                csd_s: r.csd,
                cost: r.cost,
            })
            .collect(),
        visited,
        pruned_by_cost,
        pruned_by_availability,
        rejected_by_csd,
        pruning_check,
    })
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub alpha_ext_per_s: f64,
    pub node: String,
    pub arrival_rate_per_s: f64,
    pub containers: u32,
    pub utilization: f64,
    pub stable: bool,
    pub wait_s: Option<f64>,
    pub response_s: Option<f64>,
    pub csd_s: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub allocation: Vec<u32>,
    pub rows: Vec<SweepRow>,
}

impl Report for SweepReport {
    fn header(&self) -> Vec<String> {
        strings(&[
            "alpha_ext_per_s",
            "node",
            "arrival_rate_per_s",
            "containers",
            "utilization",
            "stable",
            "wait_s",
            "response_s",
            "csd_s",
        ])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    sig10(r.alpha_ext_per_s),
                    r.node.clone(),
                    sig10(r.arrival_rate_per_s),
                    r.containers.to_string(),
                    sig10(r.utilization),
                    r.stable.to_string(),
                    opt_sig10(r.wait_s),
                    opt_sig10(r.response_s),
                    opt_sig10(r.csd_s),
                ]
            })
            .collect()
    }
}

/// Per-node waits and response times over a range of external loads. An
/// overloaded node is reported as unstable rather than failing the sweep.
pub fn cmd_sweep(doc: &ChainDocument, alloc: Option<Allocation>, alphas: &[f64]) -> Result<SweepReport, CliError> {
    let mut chain = doc.chain()?;
    let alloc = match alloc {
        Some(a) => a,
        None => resolve_thresholds(doc)?,
    };
    if alloc.len() != chain.len() {
        return Err(CliError::Validation(format!(
            "{} container counts for {} nodes",
            alloc.len(),
            chain.len()
        )));
    }
    let mut rows = Vec::new();
    for &alpha in alphas {
        chain.alpha_ext = alpha;
        let rates = qnet::solve_arrival_rates(&chain)?;
        let mut block = Vec::new();
        let mut csd = Some(chain.propagation_delay);
        for ((node, &a), &c) in chain.nodes.iter().zip(&rates).zip(alloc.iter()) {
            let load = NodeLoad::new(node, a, c);
            let wait = if load.is_stable() {
                Some(qnet::waiting_time(node, &load)?)
            } else {
                None
            };
            let response = wait.map(|w| node.mean_service_time + w);
            csd = csd.zip(response).map(|(s, r)| s + r);
            block.push(SweepRow {
                alpha_ext_per_s: alpha,
                node: node.name.clone(),
                arrival_rate_per_s: a,
                containers: c,
                utilization: load.utilization,
                stable: wait.is_some(),
                wait_s: wait,
                response_s: response,
                csd_s: None,
            });
        }
        for r in &mut block {
            r.csd_s = csd;
        }
        rows.extend(block);
    }
    Ok(SweepReport { allocation: alloc.0, rows })
}

/// Tangible CTMC of one NR: `counts` is `[n]` for a homogeneous NR or
/// `[n1, n2]` for a co-located one.
pub fn cmd_ctmc(doc: &ChainDocument, counts: &[u32]) -> Result<TangibleCtmc, CliError> {
    let rates = doc.layer_rates()?;
    let net = match *counts {
        [n] => build_homog_nr(n, &rates)?,
        [a, b] => build_coloc_nr(a, b, &rates)?,
        _ => return Err(CliError::Validation("--containers takes one count or two".into())),
    };
    srn::reachability(&net.model).map_err(|e| CliError::Numerical(e.to_string()))
}
