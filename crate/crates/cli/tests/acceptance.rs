//! Acceptance checks against the published reference values. Every criterion
//! runs and prints one `PASS`/`FAIL` line; the target fails if any criterion
//! does.
//!
//! ```text
//! cargo test -p chainperf --test acceptance
//! ```

use std::panic;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use chainperf::commands::cmd_availability;
use chainperf::ChainDocument;
use chainperf_core::alloc::{optcnt, stability_floor, Optimality};
use chainperf_core::deploy::{
    self, build_coloc_nr, build_homog_nr, build_monolithic, coloc_availability, nr_up_pmf, Evaluator, GroupNr,
    LayerRates, UpPmf,
};
use chainperf_core::qnet::{self, ChainSpec, NodeLoad, NodeSpec};
use chainperf_core::search::{optsearchchain, pruning_check, srneval_with, CandidateLists, SearchParams, Stage};
use chainperf_core::srn;
use chainperf_core::{Allocation, DeploymentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("{tag} criterion {criterion:>2} {title}: {detail}");
    assert!(ok, "criterion {criterion} ({title}) failed: {detail}");
}

fn example() -> ChainDocument {
    ChainDocument::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/table1.chain")).unwrap()
}

fn table_one_chain(csd_target: f64) -> ChainSpec {
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

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn criterion_01_costs() {
    let start = Instant::now();
    let report = cmd_availability(&example(), None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let errata = [("C_6H", 43, 41), ("C_2C", 35, 36)];
    let mut matched = 0;
    let mut problems = Vec::new();
    for row in &report.deployments {
        let printed = row.reference.and_then(|r| r.cost).unwrap();
        match errata.iter().find(|e| e.0 == row.id) {
            Some(&(_, computed, p)) => {
                if row.cost != computed || printed != p {
                    problems.push(format!("{} erratum: {} vs printed {printed}", row.id, row.cost));
                }
            }
            None if row.cost == printed => matched += 1,
            None => problems.push(format!("{}: {} vs printed {printed}", row.id, row.cost)),
        }
    }
    let ok = report.deployments.len() == 16 && matched == 14 && problems.is_empty() && elapsed < 1.0;
    verdict(
        1,
        "cost reproduction",
        ok,
        &format!(
            "{matched}/14 printed costs matched, errata C_6H=43 and C_2C=35, {elapsed:.2} s {}",
            problems.join("; ")
        ),
    );
}

fn criterion_02_availability_nines() {
    let report = cmd_availability(&example(), None).unwrap();
    let anchors = ["C*_H", "C_1H", "C*_C", "C_1C", "C_6H", "C_7C"];
    let mut lines = Vec::new();
    let mut misses = 0;
    for id in anchors {
        let row = report.deployments.iter().find(|d| d.id == id).unwrap();
        let printed = row.reference.and_then(|r| r.availability).unwrap();
        let want = deploy::nines(printed);
        let got = deploy::nines(row.availability);
        if got != want {
            misses += 1;
        }
        lines.push(format!("{id} {:.10} ({got} vs {want} nines)", row.availability));
    }
    verdict(
        2,
        "availability nines",
        misses == 0,
        &format!("{}/{} anchors in class; {}", anchors.len() - misses, anchors.len(), lines.join(", ")),
    );
}

fn criterion_03_worked_cost_example() {
    let worked = DeploymentConfig::homogeneous(
        vec![vec![2; 3], vec![2; 3], vec![3; 4], vec![2; 3]],
        Allocation(vec![2, 2, 2, 3]),
    );
    let ok = worked.cost() == 56 && worked.half_scale_cost() == 28.0;
    verdict(
        3,
        "worked cost example",
        ok,
        &format!("{} table units, {} half-scale", worked.cost(), worked.half_scale_cost()),
    );
}

fn criterion_04_cosmetatos_collapse() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.random_range(1e-4..0.1);
        let c = rng.random_range(1..=30u32);
        let rho = rng.random_range(0.01..0.99);
        let arrival = rho * c as f64 / s;
        let mmc = qnet::wait_mmc(arrival, s, c).unwrap();
        let mdc = qnet::wait_mdc(arrival, s, c).unwrap();
        worst = worst
            .max(rel(qnet::wait_mgc(arrival, s, 1.0, c).unwrap(), mmc))
            .max(rel(qnet::wait_mgc(arrival, s, 0.0, c).unwrap(), mdc));
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        4,
        "Cosmetatos collapse",
        worst <= 1e-12 && elapsed < 1.0,
        &format!("worst relative error {worst:e} over 1000 points, {elapsed:.3} s"),
    );
}

fn criterion_05_erlang_c_oracle() {
    let direct = |c: u32, a: f64| -> f64 {
        let mut term = 1.0;
        let mut head = 0.0;
        for k in 0..c {
            head += term;
            term *= a / (k + 1) as f64;
        }
        let tail = term * c as f64 / (c as f64 - a);
        tail / (head + tail)
    };
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for c in 1..=50u32 {
        for k in 1..=99 {
            let a = c as f64 * k as f64 / 100.0;
            worst = worst.max(rel(qnet::erlang_c(c, a).unwrap(), direct(c, a)));
            points += 1;
        }
    }
    verdict(
        5,
        "Erlang-C oracle",
        worst <= 1e-12,
        &format!("worst relative error {worst:e} over {points} points (c <= 50, a/c <= 0.99)"),
    );
}

fn criterion_06_convexity() {
    let node = NodeSpec::new("P-CSCF", 0.008, 1.25);
    let report = qnet::convexity_check(&node, 200.0, 3..=9);
    let all_nonnegative = report.second_differences.iter().all(|&(_, d)| d >= 0.0);
    let cs: Vec<u32> = report.second_differences.iter().map(|&(c, _)| c).collect();
    let min = report.second_differences.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    verdict(
        6,
        "P-CSCF convexity",
        all_nonnegative && report.is_convex() && cs == (3..=9).collect::<Vec<_>>(),
        &format!("second differences at c = 3..9, smallest {min:e}"),
    );
}

/// Fewest containers in the box `[floor, floor + 5]` meeting the CSD target.
fn box_optimum(chain: &ChainSpec, floor: &[u32]) -> Option<u32> {
    let alpha = qnet::solve_arrival_rates(chain).unwrap();
    let table: Vec<Vec<f64>> = (0..chain.len())
        .map(|n| {
            let node = &chain.nodes[n];
            (floor[n]..=floor[n] + 5)
                .map(|c| qnet::response_time(node, &NodeLoad::new(node, alpha[n], c)).unwrap())
                .collect()
        })
        .collect();
    let mut best = None;
    for idx in 0..6usize.pow(chain.len() as u32) {
        let (mut rest, mut csd, mut total) = (idx, chain.propagation_delay, 0);
        for (n, row) in table.iter().enumerate() {
            csd += row[rest % 6];
            total += floor[n] + (rest % 6) as u32;
            rest /= 6;
        }
        if csd <= chain.csd_target && best.is_none_or(|b| total < b) {
            best = Some(total);
        }
    }
    best
}

fn criterion_07_greedy_optimality() {
    let start = Instant::now();
    let mut failures = Vec::new();

    let mut instances = Vec::new();
    for target in [0.3, 0.06, 0.04, 0.035, 0.032] {
        instances.push(("Table I".to_string(), table_one_chain(target)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random = 0;
    let mut skipped = 0;
    while random < 100 {
        let nodes: Vec<NodeSpec> = (0..4)
            .map(|i| NodeSpec::new(format!("n{i}"), rng.random_range(2e-3..0.02), rng.random_range(0.0..2.0)))
            .collect();
        let probe = ChainSpec::tandem(nodes.clone(), 200.0, 1.0, 40);
        let floor = stability_floor(&probe).unwrap();
        let at = |k: u32| qnet::csd(&probe, &floor.iter().map(|c| c + k).collect::<Vec<_>>()).unwrap();
        let target = at(2) + rng.random_range(0.0..1.0) * (at(0) - at(2));
        let chain = ChainSpec::tandem(nodes, 200.0, target, floor.iter().max().unwrap() + 5);
        if optcnt(&chain).unwrap().optimality != Optimality::Guaranteed {
            skipped += 1;
            continue;
        }
        random += 1;
        instances.push((format!("random #{random}"), chain));
    }

    for (name, chain) in &instances {
        let floor = stability_floor(chain).unwrap();
        let greedy = optcnt(chain).unwrap();
        let best = box_optimum(chain, &floor.0);
        let inside = greedy.allocation.iter().zip(floor.iter()).all(|(c, f)| c <= &(f + 5));
        if best != Some(greedy.allocation.total()) || !inside {
            failures.push(format!("{name}: greedy {} vs box {best:?}", greedy.allocation));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        7,
        "greedy allocation optimality",
        failures.is_empty() && elapsed < 10.0,
        &format!(
            "{} Table I targets and {random} random convex instances ({skipped} non-convex draws skipped), {elapsed:.2} s {}",
            instances.len() - random,
            failures.join("; ")
        ),
    );
}

fn criterion_08_composition_oracle() {
    let rates = LayerRates::table_one();
    let mut singles = Vec::new();
    for a in 0..=2u32 {
        for b in 0..=2u32 {
            match (a, b) {
                (0, 0) => {}
                (a, 0) => singles.push(GroupNr::First(a)),
                (0, b) => singles.push(GroupNr::Second(b)),
                _ => singles.push(GroupNr::Shared(a, b)),
            }
        }
    }
    let pmf = |nr: GroupNr| -> UpPmf {
        match nr {
            GroupNr::First(n) => nr_up_pmf(&build_homog_nr(n, &rates).unwrap()).unwrap(),
            GroupNr::Second(n) => nr_up_pmf(&build_homog_nr(n, &rates).unwrap()).unwrap().transpose(),
            GroupNr::Shared(a, b) => nr_up_pmf(&build_coloc_nr(a, b, &rates).unwrap()).unwrap(),
        }
    };
    let mut groups: Vec<Vec<GroupNr>> = singles.iter().map(|&s| vec![s]).collect();
    for (i, &x) in singles.iter().enumerate() {
        for &y in &singles[i..] {
            groups.push(vec![x, y]);
        }
    }
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for group in &groups {
        let (model, ups) = build_monolithic(group, &rates).unwrap();
        let ss = srn::steady_state(&srn::reachability(&model).unwrap()).unwrap();
        let pmfs: Vec<UpPmf> = group.iter().map(|&g| pmf(g)).collect();
        let (c1, c2) = pmfs.iter().fold(UpPmf::unit(), |acc, p| acc.convolve(p)).capacity();
        for t1 in 0..=c1 {
            for t2 in 0..=c2 {
                let mono = srn::expected_reward(&ss, |m| {
                    let up = |k: usize| ups[k].iter().map(|&p| m.tokens(p)).sum::<u32>();
                    f64::from(u8::from(up(0) >= t1 && up(1) >= t2))
                });
                worst = worst.max((mono - coloc_availability(&pmfs, t1, t2)).abs());
                cases += 1;
            }
        }
    }
    verdict(
        8,
        "SRN composition oracle",
        worst <= 1e-10,
        &format!("{} NR groups, {cases} threshold cases, worst difference {worst:e}", groups.len()),
    );
}

fn small_lists(full: &CandidateLists, rng: &mut ChaCha8Rng) -> CandidateLists {
    let mut pick = |len: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..3).map(|_| rng.random_range(0..len)).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let stages = full
        .stages
        .iter()
        .map(|stage| match stage {
            Stage::Node { node, candidates } => Stage::Node {
                node: *node,
                candidates: pick(candidates.len()).into_iter().map(|k| candidates[k].clone()).collect(),
            },
            Stage::Group {
                first,
                second,
                candidates,
            } => Stage::Group {
                first: *first,
                second: *second,
                candidates: pick(candidates.len()).into_iter().map(|k| candidates[k].clone()).collect(),
            },
        })
        .collect();
    CandidateLists {
        stages,
        nodes: full.nodes,
    }
}

fn criterion_09_pruned_search_soundness() {
    let rates = LayerRates::table_one();
    let ev = Evaluator::new(rates, 6).unwrap().with_colocated().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut instances, mut with_records, mut records) = (0, 0, 0);
    let mut failures = Vec::new();
    for target in [0.99, 0.999, 0.9999, 0.99999] {
        for colocated in [false, true] {
            let mut params = SearchParams::new(target, Allocation(vec![2, 2, 2, 3]));
            params.max_nrs_per_node = 3;
            if colocated {
                params.deployment = chainperf_core::search::DeploymentType::CoLocated { first: 2, second: 3 };
            }
            let full = srneval_with(&ev, &table_one_chain(0.3), &params).unwrap();
            for _ in 0..25 {
                let chain = table_one_chain(rng.random_range(0.0296..0.06));
                let lists = small_lists(&full, &mut rng);
                instances += 1;
                let Ok(outcome) = optsearchchain(&lists, &params, &chain) else {
                    let unpruned = SearchParams {
                        cost_pruning: false,
                        ..params.clone()
                    };
                    if optsearchchain(&lists, &unpruned, &chain).is_ok() {
                        failures.push(format!("target {target}: pruning lost every record"));
                    }
                    continue;
                };
                with_records += 1;
                let check = pruning_check(&lists, &params, &chain, &outcome, 1e6).unwrap().unwrap();
                if !check.is_sound() {
                    failures.push(format!("target {target}: {check:?}"));
                }
                for r in &outcome.records {
                    records += 1;
                    let config = lists.config(&r.choice, &params.thresholds);
                    let a = deploy::chain_availability(&config, &rates).unwrap().availability;
                    let csd = qnet::csd(&chain, &config.container_totals()).unwrap();
                    if a < target || csd > chain.csd_target {
                        failures.push(format!("record {:?} fails re-verification", r.choice));
                    }
                }
            }
        }
    }
    verdict(
        9,
        "pruned search soundness",
        failures.is_empty(),
        &format!(
            "{instances} instances ({with_records} feasible), {records} records re-verified {}",
            failures.join("; ")
        ),
    );
}

fn criterion_10_csd_properties() {
    let chain = table_one_chain(0.3);
    let floor = stability_floor(&chain).unwrap();
    let service_floor = chain.total_service_time();
    let mut violations = Vec::new();
    let side = 6u32;
    for idx in 0..side.pow(4) {
        let alloc: Vec<u32> = (0..4).map(|n| floor[n] + idx / side.pow(n as u32) % side).collect();
        let base = qnet::csd(&chain, &alloc).unwrap();
        if base < service_floor {
            violations.push(format!("{alloc:?} below the service floor"));
        }
        for n in 0..4 {
            let mut more = alloc.clone();
            more[n] += 1;
            if qnet::csd(&chain, &more).unwrap() > base {
                violations.push(format!("{alloc:?} rises when node {n} grows"));
            }
        }
    }
    let star = qnet::csd(&chain, &[2, 2, 2, 3]).unwrap();
    let in_band = star > 0.03 && star < 0.3;
    verdict(
        10,
        "CSD properties",
        violations.is_empty() && in_band && (service_floor - 0.0292).abs() < 1e-12,
        &format!(
            "monotone over {} allocations, floor {service_floor} s, CSD(2,2,2,3) = {star:.6} s {}",
            side.pow(4),
            violations.join("; ")
        ),
    );
}

fn main() -> ExitCode {
    let criteria: [fn(); 10] = [
        criterion_01_costs,
        criterion_02_availability_nines,
        criterion_03_worked_cost_example,
        criterion_04_cosmetatos_collapse,
        criterion_05_erlang_c_oracle,
        criterion_06_convexity,
        criterion_07_greedy_optimality,
        criterion_08_composition_oracle,
        criterion_09_pruned_search_soundness,
        criterion_10_csd_properties,
    ];
    // The verdict line already says what failed.
    panic::set_hook(Box::new(|info| {
        if !info.to_string().contains("criterion") {
            eprintln!("{info}");
        }
    }));
    let failed = criteria.iter().filter(|f| panic::catch_unwind(**f).is_err()).count();
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
