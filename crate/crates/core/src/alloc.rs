//! Greedy minimal container allocation under a CSD target (OptCNT).
//!
//! Starting from the smallest stable allocation, one container at a time is
//! added to the node whose mean response time drops the most, until the
//! end-to-end delay meets the target. With convex per-node response times
//! this marginal-allocation rule yields the minimum total container count.

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::qnet::{self, ChainSpec, NodeLoad, QueueError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("node `{node}` needs at least {floor} containers but c_max is {c_max}")]
    CapBelowFloor { node: String, floor: u32, c_max: u32 },
    #[error("CSD target {target} s is unreachable (best achievable {best} s)")]
    Infeasible { target: f64, best: f64 },
}

/// Container count per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Allocation(pub Vec<u32>);

impl Allocation {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl Deref for Allocation {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for Allocation {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// One greedy step: a container was added to `node`, lowering its mean
/// response time by `gain` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub node: usize,
    pub delta_c: u32,
    pub gain: f64,
    pub csd_after: f64,
}

/// Whether the optimality argument applies to a greedy result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimality {
    /// Every node's response time is convex over the explored range.
    Guaranteed,
    /// Some node failed the convexity check; the result is only a heuristic.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub allocation: Allocation,
    pub csd: f64,
    pub iterations: usize,
    pub trace: Vec<GreedyStep>,
    pub optimality: Optimality,
}

/// `floor(alpha_n * s_n) + 1`, the smallest container count keeping node `n`
/// stable.
pub fn stability_floor(chain: &ChainSpec) -> Result<Allocation, QueueError> {
    let alpha = qnet::solve_arrival_rates(chain)?;
    Ok(floor_for_rates(chain, &alpha))
}

fn floor_for_rates(chain: &ChainSpec, alpha: &[f64]) -> Allocation {
    chain
        .nodes
        .iter()
        .zip(alpha)
        .map(|(node, a)| (a * node.mean_service_time).floor() as u32 + 1)
        .collect::<Vec<_>>()
        .into()
}

fn node_response(chain: &ChainSpec, alpha: &[f64], n: usize, c: u32) -> Result<f64, QueueError> {
    let node = &chain.nodes[n];
    qnet::response_time(node, &NodeLoad::new(node, alpha[n], c))
}

/// Runs the greedy allocation. Ties in the marginal gain go to the lowest
/// node index.
pub fn optcnt(chain: &ChainSpec) -> Result<AllocationResult, AllocError> {
    let alpha = qnet::solve_arrival_rates(chain)?;
    let floor = floor_for_rates(chain, &alpha);
    for (node, &c0) in chain.nodes.iter().zip(floor.iter()) {
        if c0 > chain.c_max {
            return Err(AllocError::CapBelowFloor {
                node: node.name.clone(),
                floor: c0,
                c_max: chain.c_max,
            });
        }
    }

    let n = chain.len();
    let mut counts = floor.0.clone();
    let mut response: Vec<f64> = (0..n)
        .map(|i| node_response(chain, &alpha, i, counts[i]))
        .collect::<Result<_, _>>()?;
    let mut csd = chain.propagation_delay + response.iter().sum::<f64>();

    if csd > chain.csd_target {
        let best = qnet::csd(chain, &vec![chain.c_max; n])?;
        if best > chain.csd_target {
            return Err(AllocError::Infeasible {
                target: chain.csd_target,
                best,
            });
        }
    }

    let mut trace = Vec::new();
    while csd > chain.csd_target {
        // argmin of delta_c / (-delta E[T]) with delta_c = 1 is the argmax gain.
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..n {
            if counts[i] >= chain.c_max {
                continue;
            }
            let next = node_response(chain, &alpha, i, counts[i] + 1)?;
            let gain = response[i] - next;
            if best.is_none_or(|(_, g, _)| gain > g) {
                best = Some((i, gain, next));
            }
        }
        let Some((i, gain, next)) = best else {
            return Err(AllocError::Infeasible {
                target: chain.csd_target,
                best: csd,
            });
        };
        counts[i] += 1;
        response[i] = next;
        csd = chain.propagation_delay + response.iter().sum::<f64>();
        trace.push(GreedyStep {
            node: i,
            delta_c: 1,
            gain,
            csd_after: csd,
        });
    }

    let optimality = if (0..n).all(|i| {
        let hi = chain.c_max.max(floor[i] + 1);
        qnet::convexity_check(&chain.nodes[i], alpha[i], floor[i] + 1..=hi - 1).is_convex()
    }) {
        Optimality::Guaranteed
    } else {
        Optimality::Heuristic
    };

    Ok(AllocationResult {
        iterations: trace.len(),
        allocation: Allocation(counts),
        csd,
        trace,
        optimality,
    })
}
