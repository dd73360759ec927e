//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass name substrings as arguments to run a subset:
//! `cargo test --test acceptance -- welfare`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use strategic_mapf::auction::{
    deviation_utility, payment, run_auction, utility, Bid, RewardSchedule,
};
use strategic_mapf::cbs::{execute_multihop, plan_cbs, CbsOutcome, CbsVariant};
use strategic_mapf::harness::{
    run_experiment, utility_curve_instances, write_outputs, ExperimentConfig, Solver, SweepVar,
};
use strategic_mapf::metrics::{GroupBy, Summary, TrialRecord};
use strategic_mapf::planner::{run_trial, Resolver, ScheduleRule, Sweep, TrialLimits};
use strategic_mapf::world::{Cell, Direction, MoveAction, ScenarioKind};

use common::{
    brute_force_welfare, crossing_scenario, joint_optimal_soc, random_open_scenario, ri, rq,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_values(rng: &mut ChaCha8Rng, k: usize) -> Vec<BigRational> {
    (0..k).map(|_| ri(rng.random_range(1..=10))).collect()
}

fn truthful_bids(values: &[BigRational]) -> Vec<Bid<BigRational>> {
    values
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, v)| Bid::new(i, v))
        .collect()
}

fn strategy_proofness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid: Vec<BigRational> = (0..=30).map(|h| rq(h, 2)).collect();
    let (mut checks, mut violations) = (0usize, 0usize);
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let values = random_values(&mut rng, k);
        let bids = truthful_bids(&values);
        let s = RewardSchedule::harmonic(k);
        let truthful = run_auction(&bids, &values, &s).unwrap().utilities;
        for (focal, honest) in truthful.iter().enumerate() {
            for b in &grid {
                let u = deviation_utility(&bids, &values, focal, b.clone(), &s).unwrap();
                checks += 1;
                if &u > honest {
                    violations += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        violations == 0 && secs < 10.0,
        format!("{violations} profitable deviations in {checks} exact checks, {secs:.2} s"),
    )
}

fn welfare_maximality() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..500 {
        let k = rng.random_range(2..=6);
        let values = random_values(&mut rng, k);
        let s = RewardSchedule::harmonic(k);
        let out = run_auction(&truthful_bids(&values), &values, &s).unwrap();
        if out.welfare != brute_force_welfare(&values, s.as_slice()) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches}/500 instances differ from the k! optimum, {secs:.2} s"),
    )
}

fn payment_example() -> Verdict {
    let s = RewardSchedule::harmonic(3);
    let sorted = [ri(7), ri(4), ri(2)];
    let pay: Vec<_> = (1..=3).map(|q| payment(&sorted, q, &s).unwrap()).collect();
    let util: Vec<_> = (0..3)
        .map(|i| utility(sorted[i].clone(), i + 1, pay[i].clone(), &s))
        .collect();
    let pass = pay == [rq(7, 3), rq(1, 3), ri(0)] && util == [rq(14, 3), rq(5, 3), rq(2, 3)];
    let show = |xs: &[BigRational]| {
        xs.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    verdict(
        pass,
        format!("payments [{}], utilities [{}]", show(&pay), show(&util)),
    )
}

fn config(
    kinds: &[ScenarioKind],
    values: &[usize],
    solvers: &[Solver],
    trials: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        kinds: kinds.to_vec(),
        width: 20,
        height: 20,
        sweep: SweepVar::NAgents,
        values: values.to_vec(),
        solvers: solvers.to_vec(),
        trials,
        seed: 2024,
        ..Default::default()
    }
}

fn zero_collisions() -> Verdict {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        gap_size: 2,
        ..config(
            &[
                ScenarioKind::Doorway,
                ScenarioKind::Hallway,
                ScenarioKind::Intersection,
            ],
            &[4, 10, 20, 50],
            &[Solver::Auction],
            100,
        )
    };
    let records = run_experiment(&cfg).unwrap();
    let colliding = records.iter().filter(|r| r.collisions > 0).count();
    let completed = records.iter().filter(|r| r.completed).count();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        colliding == 0 && secs < 300.0,
        format!(
            "{colliding}/{} trials with a collision ({completed} completed), {secs:.1} s",
            records.len()
        ),
    )
}

fn obstacle_scaling() -> Verdict {
    let (mut colliding, mut total, mut completed, mut slowest) = (0, 0, 0, 0.0f64);
    for obstacles in [10, 15, 20, 25] {
        let cfg = ExperimentConfig {
            kinds: vec![ScenarioKind::RandomObstacles],
            width: 10,
            height: 10,
            n_obstacles: obstacles,
            values: (4..=15).collect(),
            ..config(&[], &[], &[Solver::Auction], 100)
        };
        for r in run_experiment(&cfg).unwrap() {
            total += 1;
            colliding += (r.collisions > 0) as usize;
            completed += r.completed as usize;
            slowest = slowest.max(r.runtime_s);
        }
    }
    verdict(
        colliding == 0 && slowest <= 5.0,
        format!("{colliding}/{total} trials with a collision ({completed} completed), slowest trial {slowest:.3} s"),
    )
}

fn crossing_micro_scenario() -> Verdict {
    let s = crossing_scenario();
    let (a, b) = (&s.agents[0], &s.agents[1]);
    let mut colliding = Vec::new();
    for sa in 1..=3 {
        for sb in 1..=3 {
            let x = Sweep::straight(a.pos, MoveAction::new(Direction::Down, sa));
            let y = Sweep::straight(b.pos, MoveAction::new(Direction::Right, sb));
            if x.collides(&y) {
                colliding.push((sa, sb));
            }
        }
    }
    let t = run_trial(
        &s,
        Resolver::Auction(ScheduleRule::Harmonic),
        TrialLimits::for_scenario(&s),
        0,
    )
    .trace;
    let waits = t.steps.iter().filter(|st| st.waiting).count();
    let pass = colliding == [(2, 2), (2, 3), (3, 2), (3, 3)]
        && t.collisions.is_empty()
        && t.completed
        && waits == 1;
    verdict(
        pass,
        format!(
            "colliding step pairs {colliding:?}; auction trace: {} collisions, {waits} wait tick(s)",
            t.collisions.len()
        ),
    )
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn cbs_failure_modes() -> Verdict {
    let start = Instant::now();
    let mut cfg = ExperimentConfig {
        kinds: vec![ScenarioKind::Intersection],
        sweep: SweepVar::GapSize,
        n_agents: 3,
        noise_sigma: 0.3,
        ..config(&[], &[1, 3, 5, 9], &[Solver::Cbs], 100)
    };
    let records = run_experiment(&cfg).unwrap();
    let by_gap = |g: usize| records.iter().filter(move |r| r.gap_size == g);
    let collisions: BTreeMap<usize, f64> = [1, 3, 5, 9]
        .map(|g| (g, mean(by_gap(g).map(|r| r.collisions as f64))))
        .into();
    let overall = mean(records.iter().map(|r| r.collisions as f64));

    cfg.values = vec![1];
    cfg.n_agents = 5;
    cfg.trials = 10;
    let crowded = run_experiment(&cfg).unwrap();
    let timeout_rate = crowded.iter().filter(|r| r.timed_out).count() as f64 / crowded.len() as f64;
    let pass = overall > 0.0 && collisions[&1] > collisions[&9] && timeout_rate > 0.5;
    verdict(
        pass,
        format!(
            "mean collisions by gap {collisions:?} (overall {overall:.2}); 5-agent gap-1 timeout rate {:.0}%, {:.0} s",
            timeout_rate * 100.0,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn welfare_dominance() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (kind, gap) in [
        (ScenarioKind::Doorway, 1),
        (ScenarioKind::Hallway, 1),
        (ScenarioKind::Intersection, 2),
    ] {
        let cfg = ExperimentConfig {
            gap_size: gap,
            ..config(
                &[kind],
                &[4, 10, 20],
                &[Solver::Auction, Solver::RandomOrdering],
                100,
            )
        };
        let records = run_experiment(&cfg).unwrap();
        let mut pooled = Vec::new();
        for n in [4, 10, 20] {
            let pick = |solver: &str| -> Vec<&TrialRecord> {
                records
                    .iter()
                    .filter(|r| r.solver == solver && r.n_agents == n)
                    .collect()
            };
            let (auction, random) = (pick("auction"), pick("random-ordering"));
            let diffs: Vec<f64> = auction
                .iter()
                .zip(&random)
                .map(|(a, r)| {
                    assert_eq!(a.seed, r.seed);
                    a.welfare - r.welfare
                })
                .collect();
            let d = Summary::of(&diffs);
            pass &= d.mean >= 0.0;
            lines.push(format!("{kind} n={n}: {:+.3}±{:.3}", d.mean, d.ci95));
            pooled.extend(diffs);
        }
        // Significance is judged per scenario, over all paired trials.
        let d = Summary::of(&pooled);
        if kind == ScenarioKind::Intersection {
            pass &= d.mean > d.ci95;
        }
        lines.push(format!("{kind} pooled: {:+.3}±{:.3}", d.mean, d.ci95));
    }
    verdict(
        pass,
        format!("auction minus random welfare: {}", lines.join(", ")),
    )
}

fn utility_curve_shape() -> Verdict {
    let cfg = ExperimentConfig {
        kinds: vec![ScenarioKind::Hallway],
        gap_size: 1,
        values: vec![4],
        incentive_min: 1,
        incentive_max: 10,
        ..config(&[], &[4], &[Solver::Auction], 100)
    };
    let instances = utility_curve_instances(&cfg).unwrap();
    let mut off_peak = 0;
    for inst in &instances {
        for (i, curve) in inst.curves.iter().enumerate() {
            let best = curve
                .iter()
                .map(|&(_, u)| u)
                .fold(f64::NEG_INFINITY, f64::max);
            let at_truth = curve
                .iter()
                .find(|&&(b, _)| b == inst.values[i] as f64)
                .map(|&(_, u)| u)
                .expect("true value lies on the bid grid");
            if at_truth < best - 1e-12 {
                off_peak += 1;
            }
        }
    }
    verdict(
        off_peak == 0 && instances.len() == 100,
        format!(
            "{off_peak} of {} curves peak away from the true value",
            instances.len() * 4
        ),
    )
}

fn cbs_optimality() -> Verdict {
    let start = Instant::now();
    let (mut wrong, mut collisions) = (0, 0);
    for seed in 0..50 {
        let s = random_open_scenario(5, 5, 3, 1000 + seed);
        let starts: Vec<Cell> = s.agents.iter().map(|a| a.pos).collect();
        let goals: Vec<Cell> = s.agents.iter().map(|a| a.goal).collect();
        let want = joint_optimal_soc(&s.grid, &starts, &goals).unwrap();
        match plan_cbs(&s, 0.0, CbsVariant::Cbs, seed, None).unwrap() {
            CbsOutcome::Solved(plan) => {
                wrong += (plan.sum_of_arrivals() as u64 != want) as usize;
                collisions += execute_multihop(&plan.paths, &[1, 1, 1]).collisions.len();
            }
            CbsOutcome::TimedOut { .. } => wrong += 1,
        }
    }
    verdict(
        wrong == 0 && collisions == 0,
        format!(
            "{wrong}/50 sums of costs differ from the joint-state optimum, {collisions} collisions, {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn without_runtime(csv: &str) -> String {
    let col = csv
        .lines()
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == "runtime_s")
        .unwrap();
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(col);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Verdict {
    let mut cfg = ExperimentConfig {
        kinds: vec![ScenarioKind::Doorway, ScenarioKind::RandomObstacles],
        width: 8,
        height: 8,
        n_obstacles: 6,
        values: vec![2, 3],
        ..config(&[], &[], &Solver::ALL, 4)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (run, jobs) in [(0, 1), (1, 3)] {
        cfg.jobs = jobs;
        let out = dir.path().join(run.to_string());
        write_outputs(&out, &run_experiment(&cfg).unwrap(), GroupBy::NAgents).unwrap();
        files.push(fs::read_to_string(out.join("trials.csv")).unwrap());
    }
    let rows = files[0].lines().count() - 1;
    let same = without_runtime(&files[0]) == without_runtime(&files[1]);
    verdict(
        same && rows == 80,
        format!("{rows} rows, identical apart from runtime: {same} (1 vs 3 threads)"),
    )
}

type Check = (&'static str, fn() -> Verdict);

const CHECKS: [Check; 11] = [
    ("strategy-proofness", strategy_proofness),
    ("welfare-maximality", welfare_maximality),
    ("payment-example", payment_example),
    ("zero-collisions", zero_collisions),
    ("obstacle-scaling", obstacle_scaling),
    ("crossing-micro-scenario", crossing_micro_scenario),
    ("cbs-failure-modes", cbs_failure_modes),
    ("welfare-dominance", welfare_dominance),
    ("utility-curve-shape", utility_curve_shape),
    ("cbs-optimality", cbs_optimality),
    ("determinism", determinism),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in CHECKS {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = check();
        println!(
            "{} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += !v.pass as usize;
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
