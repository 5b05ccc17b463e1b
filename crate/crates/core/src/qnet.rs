//! Open queueing-network decomposition of a service chain.
//!
//! Every node is an M/G/c station whose mean waiting time comes from the
//! Cosmetatos interpolation between the M/M/c and M/D/c waits. Node arrival
//! rates follow from the traffic balance equations, and the end-to-end call
//! setup delay (CSD) is the sum of per-node mean response times.
//!
//! Times are in seconds and rates in requests per second throughout. The
//! offered load of a node is `arrival_rate * mean_service_time`.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Utilizations at or above `1 - STABILITY_MARGIN` are treated as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Below this utilization the Cosmetatos approximation loses accuracy.
pub const COSMETATOS_MIN_UTILIZATION: f64 = 0.6;

/// Above this many servers the Cosmetatos approximation loses accuracy.
pub const COSMETATOS_MAX_SERVERS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("offered load {offered_load} saturates {servers} server(s)")]
    Overloaded { offered_load: f64, servers: u32 },
    #[error("node `{node}` is unstable (utilization {utilization:.6})")]
    Unstable { node: String, utilization: f64 },
    #[error("routing has no unique nonnegative solution: {0}")]
    SingularRouting(String),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
}

pub type Result<T, E = QueueError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    /// Mean service time in seconds.
    pub mean_service_time: f64,
    /// Coefficient of variation of the service time.
    pub cv: f64,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, mean_service_time: f64, cv: f64) -> Self {
        Self {
            name: name.into(),
            mean_service_time,
            cv,
        }
    }
}

/// A chain of M/G/c nodes with probabilistic routing.
///
/// `routing[m][n]` is the probability that a request leaving node `m` goes
/// to node `n`; whatever is left of a row leaves the system. External
/// traffic enters node `n` at rate `alpha_ext * entry[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub nodes: Vec<NodeSpec>,
    pub routing: Vec<Vec<f64>>,
    pub entry: Vec<f64>,
    pub alpha_ext: f64,
    pub csd_target: f64,
    pub c_max: u32,
    /// Fixed propagation delay added to the CSD, in seconds.
    pub propagation_delay: f64,
}

impl ChainSpec {
    /// Series chain: external traffic enters the first node and each node
    /// forwards everything to the next one.
    pub fn tandem(nodes: Vec<NodeSpec>, alpha_ext: f64, csd_target: f64, c_max: u32) -> Self {
        let n = nodes.len();
        let mut routing = vec![vec![0.0; n]; n];
        for (m, row) in routing.iter_mut().enumerate().take(n.saturating_sub(1)) {
            row[m + 1] = 1.0;
        }
        let mut entry = vec![0.0; n];
        if n > 0 {
            entry[0] = 1.0;
        }
        Self {
            nodes,
            routing,
            entry,
            alpha_ext,
            csd_target,
            c_max,
            propagation_delay: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_service_time(&self) -> f64 {
        self.nodes.iter().map(|n| n.mean_service_time).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let bad = |msg: String| Err(QueueError::InvalidChain(msg));
        if n == 0 {
            return bad("chain has no nodes".into());
        }
        for node in &self.nodes {
            if !(node.mean_service_time > 0.0 && node.mean_service_time.is_finite()) {
                return bad(format!("node `{}`: mean service time must be positive", node.name));
            }
            if !(node.cv >= 0.0 && node.cv.is_finite()) {
                return bad(format!("node `{}`: cv must be nonnegative", node.name));
            }
        }
        if self.routing.len() != n || self.routing.iter().any(|r| r.len() != n) {
            return bad(format!("routing must be a {n}x{n} matrix"));
        }
        for (m, row) in self.routing.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return bad(format!("routing row {m} has a probability outside [0, 1]"));
            }
            if row.iter().sum::<f64>() > 1.0 + 1e-12 {
                return bad(format!("routing row {m} sums to more than 1"));
            }
        }
        if self.entry.len() != n || self.entry.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return bad("entry vector must hold one nonnegative share per node".into());
        }
        if !(self.alpha_ext >= 0.0 && self.alpha_ext.is_finite()) {
            return bad("alpha_ext must be nonnegative".into());
        }
        if !(self.csd_target > 0.0) {
            return bad("csd_target must be positive".into());
        }
        if self.c_max < 1 {
            return bad("c_max must be at least 1".into());
        }
        if !(self.propagation_delay >= 0.0 && self.propagation_delay.is_finite()) {
            return bad("propagation delay must be nonnegative".into());
        }
        Ok(())
    }
}

/// Arrival rate, container count and utilization of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLoad {
    pub arrival_rate: f64,
    pub containers: u32,
    pub utilization: f64,
}

impl NodeLoad {
    pub fn new(node: &NodeSpec, arrival_rate: f64, containers: u32) -> Self {
        Self {
            arrival_rate,
            containers,
            utilization: utilization(arrival_rate, node.mean_service_time, containers),
        }
    }

    pub fn is_stable(&self) -> bool {
        self.utilization < 1.0 - STABILITY_MARGIN
    }
}

pub fn utilization(arrival_rate: f64, mean_service_time: f64, containers: u32) -> f64 {
    arrival_rate * mean_service_time / containers as f64
}

fn stable_utilization(arrival_rate: f64, mean_service_time: f64, containers: u32) -> Result<f64> {
    let rho = if containers == 0 {
        f64::INFINITY
    } else {
        utilization(arrival_rate, mean_service_time, containers)
    };
    if rho < 1.0 - STABILITY_MARGIN {
        Ok(rho)
    } else {
        Err(QueueError::Overloaded {
            offered_load: arrival_rate * mean_service_time,
            servers: containers,
        })
    }
}

/// Probability that an arrival waits in an M/M/c queue with offered load `a`.
///
/// Uses the inverse Erlang-B recurrence `1/B(k) = 1 + (k/a) / B(k-1)`, which
/// never forms a factorial or a power and stays accurate for large `c`.
pub fn erlang_c(servers: u32, offered_load: f64) -> Result<f64> {
    let overloaded = QueueError::Overloaded {
        offered_load,
        servers,
    };
    if servers == 0 || !(offered_load >= 0.0) {
        return Err(overloaded);
    }
    if offered_load / servers as f64 >= 1.0 - STABILITY_MARGIN {
        return Err(overloaded);
    }
    if offered_load == 0.0 {
        return Ok(0.0);
    }
    let mut inv_b = 1.0;
    for k in 1..servers {
        inv_b = 1.0 + inv_b * k as f64 / offered_load;
    }
    // C = 1 / (1 + (1 - rho) * (1/B(c) - 1)), with 1/B(c) - 1 = (c/a) / B(c-1).
    let c = servers as f64;
    Ok(1.0 / (1.0 + (c - offered_load) / offered_load * inv_b))
}

/// Mean waiting time of an M/M/c queue.
pub fn wait_mmc(arrival_rate: f64, mean_service_time: f64, containers: u32) -> Result<f64> {
    let rho = stable_utilization(arrival_rate, mean_service_time, containers)?;
    if arrival_rate == 0.0 {
        return Ok(0.0);
    }
    let pi = erlang_c(containers, arrival_rate * mean_service_time)?;
    // rho / (alpha (1 - rho)) written as s / (c (1 - rho)) so alpha never divides.
    Ok(pi * mean_service_time / (containers as f64 * (1.0 - rho)))
}

/// Cosmetatos correction factor, in `(0, 1]` for `0 < rho < 1`.
pub fn cosmetatos_factor(containers: u32, rho: f64) -> f64 {
    let c = containers as f64;
    let correction = (1.0 - rho) * (c - 1.0) * ((4.0 + 5.0 * c).sqrt() - 2.0) / (16.0 * rho * c);
    1.0 / (1.0 + correction)
}

/// Mean waiting time of an M/D/c queue (Cosmetatos).
pub fn wait_mdc(arrival_rate: f64, mean_service_time: f64, containers: u32) -> Result<f64> {
    let w = wait_mmc(arrival_rate, mean_service_time, containers)?;
    if w == 0.0 {
        return Ok(0.0);
    }
    let rho = utilization(arrival_rate, mean_service_time, containers);
    Ok(w / (2.0 * cosmetatos_factor(containers, rho)))
}

/// Mean waiting time of an M/G/c queue: `cv² W_mmc + (1 - cv²) W_mdc`.
///
/// Below utilization 0.6 the Cosmetatos M/D/c wait can exceed the M/M/c one,
/// so for `cv > 1` the interpolation may turn negative; it is clamped at 0.
pub fn wait_mgc(arrival_rate: f64, mean_service_time: f64, cv: f64, containers: u32) -> Result<f64> {
    let mmc = wait_mmc(arrival_rate, mean_service_time, containers)?;
    let cv2 = cv * cv;
    if cv2 == 1.0 {
        return Ok(mmc);
    }
    let mdc = wait_mdc(arrival_rate, mean_service_time, containers)?;
    if cv2 == 0.0 {
        return Ok(mdc);
    }
    Ok((cv2 * mmc + (1.0 - cv2) * mdc).max(0.0))
}

/// Operating point outside the range where the Cosmetatos formula is known
/// to be accurate. Informational only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproxWarning {
    LightTraffic { utilization: f64 },
    ManyServers { containers: u32 },
}

impl std::fmt::Display for ApproxWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApproxWarning::LightTraffic { utilization } => write!(
                f,
                "utilization {utilization:.3} below {COSMETATOS_MIN_UTILIZATION}: M/G/c wait is approximate"
            ),
            ApproxWarning::ManyServers { containers } => write!(
                f,
                "{containers} containers exceed {COSMETATOS_MAX_SERVERS}: M/G/c wait is approximate"
            ),
        }
    }
}

pub fn cosmetatos_warning(containers: u32, rho: f64) -> Option<ApproxWarning> {
    if containers > COSMETATOS_MAX_SERVERS {
        Some(ApproxWarning::ManyServers { containers })
    } else if rho < COSMETATOS_MIN_UTILIZATION {
        Some(ApproxWarning::LightTraffic { utilization: rho })
    } else {
        None
    }
}

/// Mean waiting time of a node under `load`.
pub fn waiting_time(node: &NodeSpec, load: &NodeLoad) -> Result<f64> {
    wait_mgc(load.arrival_rate, node.mean_service_time, node.cv, load.containers).map_err(|_| {
        QueueError::Unstable {
            node: node.name.clone(),
            utilization: load.utilization,
        }
    })
}

/// Mean response time `E[T] = s + E[W]` of a node under `load`.
pub fn response_time(node: &NodeSpec, load: &NodeLoad) -> Result<f64> {
    Ok(node.mean_service_time + waiting_time(node, load)?)
}

/// Solves the traffic balance equations `a_n = ext_n + sum_m a_m p_mn`.
pub fn solve_arrival_rates(chain: &ChainSpec) -> Result<Vec<f64>> {
    chain.validate()?;
    let n = chain.len();
    if !routing_is_open(&chain.routing) {
        return Err(QueueError::SingularRouting(
            "some node can never route traffic out of the network".into(),
        ));
    }
    let mut system = DMatrix::<f64>::identity(n, n);
    for m in 0..n {
        for k in 0..n {
            system[(k, m)] -= chain.routing[m][k];
        }
    }
    let rhs = DVector::from_iterator(n, chain.entry.iter().map(|e| e * chain.alpha_ext));
    let alpha = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| QueueError::SingularRouting("balance equations are singular".into()))?;
    let scale = chain.alpha_ext.max(1.0);
    if alpha.iter().any(|a| !a.is_finite() || *a < -1e-9 * scale) {
        return Err(QueueError::SingularRouting(
            "balance equations have no nonnegative solution".into(),
        ));
    }
    Ok(alpha.iter().map(|a| a.max(0.0)).collect())
}

/// True when every node can reach a node whose routing row leaks traffic,
/// i.e. the substochastic routing matrix has spectral radius below one.
fn routing_is_open(routing: &[Vec<f64>]) -> bool {
    let n = routing.len();
    let mut open: Vec<bool> = routing
        .iter()
        .map(|row| row.iter().sum::<f64>() < 1.0 - 1e-12)
        .collect();
    loop {
        let mut changed = false;
        for m in 0..n {
            if !open[m] && (0..n).any(|k| routing[m][k] > 0.0 && open[k]) {
                open[m] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    open.into_iter().all(|o| o)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub name: String,
    pub arrival_rate: f64,
    pub containers: u32,
    pub utilization: f64,
    pub wait: f64,
    pub response: f64,
    pub warning: Option<ApproxWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub nodes: Vec<NodeReport>,
    pub csd: f64,
}

/// Per-node waits and response times plus the CSD for `alloc`.
pub fn analyze(chain: &ChainSpec, alloc: &[u32]) -> Result<ChainReport> {
    let alpha = solve_arrival_rates(chain)?;
    analyze_with_rates(chain, &alpha, alloc)
}

/// Same as [`analyze`] with arrival rates already solved.
pub fn analyze_with_rates(chain: &ChainSpec, alpha: &[f64], alloc: &[u32]) -> Result<ChainReport> {
    if alloc.len() != chain.len() || alpha.len() != chain.len() {
        return Err(QueueError::InvalidChain(format!(
            "expected {} container counts, got {}",
            chain.len(),
            alloc.len()
        )));
    }
    let mut nodes = Vec::with_capacity(chain.len());
    let mut csd = chain.propagation_delay;
    for ((node, &a), &c) in chain.nodes.iter().zip(alpha).zip(alloc) {
        let load = NodeLoad::new(node, a, c);
        if !load.is_stable() {
            return Err(QueueError::Unstable {
                node: node.name.clone(),
                utilization: load.utilization,
            });
        }
        let wait = waiting_time(node, &load)?;
        let response = node.mean_service_time + wait;
        let warning = cosmetatos_warning(c, load.utilization);
        if let Some(w) = warning {
            log::debug!("{}: {w}", node.name);
        }
        csd += response;
        nodes.push(NodeReport {
            name: node.name.clone(),
            arrival_rate: a,
            containers: c,
            utilization: load.utilization,
            wait,
            response,
            warning,
        });
    }
    Ok(ChainReport { nodes, csd })
}

/// End-to-end call setup delay for `alloc`.
pub fn csd(chain: &ChainSpec, alloc: &[u32]) -> Result<f64> {
    analyze(chain, alloc).map(|r| r.csd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    /// `(c, E[T](c+1) - 2 E[T](c) + E[T](c-1))`.
    pub second_differences: Vec<(u32, f64)>,
    pub negative: Vec<u32>,
}

impl ConvexityReport {
    pub fn is_convex(&self) -> bool {
        self.negative.is_empty()
    }
}

/// Second finite differences of a node's response time over integer `c`.
///
/// Points whose left neighbour `c - 1` is unstable are skipped. Differences
/// below `-1e-12 * E[T](c)` are reported as negative.
pub fn convexity_check(node: &NodeSpec, arrival_rate: f64, range: RangeInclusive<u32>) -> ConvexityReport {
    let response = |c: u32| -> Option<f64> {
        let load = NodeLoad::new(node, arrival_rate, c);
        if c == 0 || !load.is_stable() {
            return None;
        }
        response_time(node, &load).ok()
    };
    let mut second_differences = Vec::new();
    let mut negative = Vec::new();
    for c in range {
        if c < 2 {
            continue;
        }
        let (Some(lo), Some(mid), Some(hi)) = (response(c - 1), response(c), response(c + 1)) else {
            continue;
        };
        let d2 = hi - 2.0 * mid + lo;
        if d2 < -1e-12 * mid {
            negative.push(c);
        }
        second_differences.push((c, d2));
    }
    ConvexityReport {
        second_differences,
        negative,
    }
}
