use chainperf_core::alloc::{optcnt, stability_floor, Optimality};
use chainperf_core::qnet::{self, ChainSpec, NodeSpec};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Erlang-C by direct summation of `a^k / k!`.
fn erlang_c_direct(c: u32, a: f64) -> f64 {
    let mut term = 1.0;
    let mut head = 0.0;
    for k in 0..c {
        head += term;
        term *= a / (k + 1) as f64;
    }
    let tail = term * c as f64 / (c as f64 - a);
    tail / (head + tail)
}

fn chain(service: &[(f64, f64)], alpha: f64, target: f64, c_max: u32) -> ChainSpec {
    let nodes = service
        .iter()
        .enumerate()
        .map(|(i, &(s, cv))| NodeSpec::new(format!("n{i}"), s, cv))
        .collect();
    ChainSpec::tandem(nodes, alpha, target, c_max)
}

/// Fewest containers over the box `[floor, floor + width]` meeting the target.
fn brute_force_total(ch: &ChainSpec, floor: &[u32], width: u32) -> Option<u32> {
    let alpha = qnet::solve_arrival_rates(ch).unwrap();
    let table: Vec<Vec<f64>> = ch
        .nodes
        .iter()
        .zip(&alpha)
        .zip(floor)
        .map(|((node, &a), &c0)| {
            (c0..=c0 + width)
                .map(|c| qnet::response_time(node, &qnet::NodeLoad::new(node, a, c)).unwrap())
                .collect()
        })
        .collect();
    let n = ch.len();
    let side = width as usize + 1;
    let mut best: Option<u32> = None;
    for idx in 0..side.pow(n as u32) {
        let mut rest = idx;
        let mut csd = ch.propagation_delay;
        let mut total = 0;
        for (i, row) in table.iter().enumerate() {
            let k = rest % side;
            rest /= side;
            csd += row[k];
            total += floor[i] + k as u32;
        }
        if csd <= ch.csd_target && best.is_none_or(|b| total < b) {
            best = Some(total);
        }
    }
    best
}

proptest! {
    #[test]
    fn cosmetatos_collapses_at_the_ends(s in 1e-4f64..0.1, c in 1u32..=30, rho in 0.01f64..0.99) {
        let arrival = rho * c as f64 / s;
        let mmc = qnet::wait_mmc(arrival, s, c).unwrap();
        let mdc = qnet::wait_mdc(arrival, s, c).unwrap();
        prop_assert!(rel(qnet::wait_mgc(arrival, s, 1.0, c).unwrap(), mmc) <= 1e-12);
        prop_assert!(rel(qnet::wait_mgc(arrival, s, 0.0, c).unwrap(), mdc) <= 1e-12);
    }

    #[test]
    fn deterministic_service_waits_less(s in 1e-4f64..0.1, c in 1u32..=10, rho in 0.6f64..0.99, cv in 0.0f64..1.0) {
        let arrival = rho * c as f64 / s;
        let mmc = qnet::wait_mmc(arrival, s, c).unwrap();
        let mdc = qnet::wait_mdc(arrival, s, c).unwrap();
        let mgc = qnet::wait_mgc(arrival, s, cv, c).unwrap();
        prop_assert!(mdc <= mmc);
        prop_assert!(mdc * (1.0 - 1e-12) <= mgc && mgc <= mmc * (1.0 + 1e-12));
    }

    #[test]
    fn erlang_c_matches_direct_sum(c in 1u32..=50, ratio in 0.001f64..0.99) {
        let a = ratio * c as f64;
        let fast = qnet::erlang_c(c, a).unwrap();
        prop_assert!(rel(fast, erlang_c_direct(c, a)) <= 1e-12, "c={c} a={a}");
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn wait_falls_with_containers(s in 1e-3f64..0.02, cv in 0.0f64..2.0, load in 0.2f64..5.0) {
        let arrival = load / s;
        let c0 = load.floor() as u32 + 1;
        let mut last = f64::INFINITY;
        for c in c0..c0 + 8 {
            let w = qnet::wait_mgc(arrival, s, cv, c).unwrap();
            prop_assert!(w >= 0.0);
            prop_assert!(w < last || w == 0.0, "c={c}: {w} after {last}");
            last = w;
        }
    }

    #[test]
    fn csd_bounded_below_by_service(
        s in proptest::collection::vec((1e-3f64..0.02, 0.0f64..2.0), 1..5),
        alpha in 1.0f64..200.0,
        extra in 0u32..4,
    ) {
        let ch = chain(&s, alpha, 1.0, 20);
        let floor = stability_floor(&ch).unwrap();
        let alloc: Vec<u32> = floor.iter().map(|c| c + extra).collect();
        let csd = qnet::csd(&ch, &alloc).unwrap();
        prop_assert!(csd >= ch.total_service_time());
    }

    #[test]
    fn greedy_matches_brute_force(
        s in proptest::collection::vec(2e-3f64..0.02, 4),
        cv in proptest::collection::vec(0.0f64..2.0, 4),
        slack in 0.0f64..1.0,
    ) {
        let service: Vec<(f64, f64)> = s.into_iter().zip(cv).collect();
        let probe = chain(&service, 200.0, 1.0, 30);
        let floor = stability_floor(&probe).unwrap();
        let csd_at = |k: u32| qnet::csd(&probe, &floor.iter().map(|c| c + k).collect::<Vec<_>>()).unwrap();
        // A target strictly between the all-floor and all-floor+2 delays.
        let (hi, lo) = (csd_at(0), csd_at(2));
        let target = lo + slack * (hi - lo);
        let c_max = floor.iter().max().unwrap() + 5;
        let ch = chain(&service, 200.0, target, c_max);
        let result = optcnt(&ch).unwrap();
        prop_assume!(result.optimality == Optimality::Guaranteed);
        prop_assert!(result.csd <= target);
        let bf = brute_force_total(&ch, &floor.0, 5).unwrap();
        prop_assert_eq!(result.allocation.total(), bf);
    }
}

#[test]
fn light_traffic_wait_is_clamped() {
    // cv > 1 at utilization 0.05: the raw interpolation is negative.
    let (s, c, cv) = (0.001, 8, 1.9);
    let arrival = 0.05 * c as f64 / s;
    let mmc = qnet::wait_mmc(arrival, s, c).unwrap();
    let mdc = qnet::wait_mdc(arrival, s, c).unwrap();
    assert!(cv * cv * mmc + (1.0 - cv * cv) * mdc < 0.0);
    assert_eq!(qnet::wait_mgc(arrival, s, cv, c).unwrap(), 0.0);
}

#[test]
fn erlang_c_rejects_overload() {
    assert!(qnet::erlang_c(3, 3.0).is_err());
    assert!(qnet::erlang_c(0, 0.5).is_err());
    assert_eq!(qnet::erlang_c(4, 0.0).unwrap(), 0.0);
}

#[test]
fn single_server_reduces_to_mm1() {
    // M/M/1: W = rho s / (1 - rho).
    let (arrival, s) = (80.0, 0.01);
    let rho: f64 = 0.8;
    let w = qnet::wait_mmc(arrival, s, 1).unwrap();
    assert!(rel(w, rho * s / (1.0 - rho)) < 1e-14);
    // M/D/1 is half of M/M/1 and Cosmetatos is exact at c = 1.
    assert!(rel(qnet::wait_mdc(arrival, s, 1).unwrap(), w / 2.0) < 1e-14);
}
