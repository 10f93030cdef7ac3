//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! Run with `cargo test -p nicsim-cli --test acceptance -- --nocapture` to
//! see the lines.

use std::collections::{BTreeSet, HashMap};
use std::process::Command;
use std::time::Instant;

use nicsim_cli::{model_report, rows_to_csv};
use nicsim_core::analytic::{fit_constants, predict_latency, ModelParams};
use nicsim_core::harness::{compare_modes, execute, ExperimentConfig, ResultRow};
use nicsim_core::schedule::{build_all, num_steps, validate_schedules, Schedule};
use nicsim_core::trace::{check_drop_recovery, check_lookahead, check_safety, count_packets, trace_to_csv};
use nicsim_core::{simulate, AlgorithmKind, Mode, PacketKind};

const LATENCY_TOL: f64 = 0.15;
const RATIO_TOL: f64 = 0.20;
const EXTRAPOLATION_TOL: f64 = 0.05;
const FIT_TOL: f64 = 1e-9;

const MYRINET: [&str; 2] = ["myrinet-lanai-xp", "myrinet-lanai-9.1"];
const PRESETS: [&str; 3] = ["myrinet-lanai-xp", "myrinet-lanai-9.1", "quadrics-elan3"];
const DS: AlgorithmKind = AlgorithmKind::Dissemination;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn all_algorithms() -> Vec<AlgorithmKind> {
    vec![
        AlgorithmKind::Dissemination,
        AlgorithmKind::PairwiseExchange,
        AlgorithmKind::GatherBroadcast { degree: 2 },
        AlgorithmKind::GatherBroadcast { degree: 3 },
        AlgorithmKind::GatherBroadcast { degree: 4 },
    ]
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol * target
}

fn c1_analytic() -> Outcome {
    let xp = model_report("myrinet-lanai-xp", 1024).unwrap();
    let q = model_report("quadrics-elan3", 1024).unwrap();
    let bin = env!("CARGO_BIN_EXE_nicsim");
    let printed = |p: &str| {
        let out = Command::new(bin).args(["model", "--platform", p, "--n", "1024"]).output().unwrap();
        String::from_utf8(out.stdout).unwrap()
    };
    let (sx, sq) = (printed("myrinet-lanai-xp"), printed("quadrics-elan3"));
    let pass = xp.display == "38.94µs"
        && q.display == "22.13µs"
        && sx.contains("\"display\": \"38.94µs\"")
        && sq.contains("\"display\": \"22.13µs\"");
    outcome(pass, format!("myrinet-lanai-xp {} quadrics-elan3 {}", xp.display, q.display))
}

/// Smallest k with base^k >= n, by repeated multiplication.
fn ceil_log_oracle(base: usize, n: usize) -> usize {
    (0..).find(|&k| base.pow(k as u32) >= n).unwrap()
}

fn expected_steps(alg: AlgorithmKind, n: usize) -> usize {
    match alg {
        AlgorithmKind::Dissemination => ceil_log_oracle(2, n),
        AlgorithmKind::PairwiseExchange => {
            let floor = (0..).take_while(|&k| 1usize << k <= n).last().unwrap();
            if n.is_power_of_two() {
                floor
            } else {
                floor + 2
            }
        }
        AlgorithmKind::GatherBroadcast { degree } => 2 * ceil_log_oracle(degree, n),
    }
}

/// Executes all schedules in lock step: in round t every rank sends its
/// round-t messages, and each round-t await must be met by one of them.
/// Returns the number of rounds executed, or None on a mismatch.
fn lockstep_rounds(all: &[Schedule]) -> Option<usize> {
    let mut t = 0;
    while all.iter().any(|s| t < s.rounds.len()) {
        let mut sent: Vec<(usize, usize)> = Vec::new();
        for s in all {
            if let Some(r) = s.rounds.get(t) {
                sent.extend(r.send_to.iter().map(|&d| (s.me, d)));
            }
        }
        let mut awaited: Vec<(usize, usize)> = Vec::new();
        for s in all {
            if let Some(r) = s.rounds.get(t) {
                awaited.extend(r.await_from.iter().map(|&src| (src, s.me)));
            }
        }
        sent.sort_unstable();
        awaited.sort_unstable();
        if sent != awaited {
            return None;
        }
        t += 1;
    }
    Some(t)
}

fn c2_step_counts() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for alg in all_algorithms() {
        for n in 1..=64 {
            let all = build_all(alg, n).unwrap();
            let counted = lockstep_rounds(&all);
            let formula = expected_steps(alg, n);
            checked += 1;
            if counted != Some(formula) || num_steps(alg, n) != formula {
                bad.push(format!("{alg} n={n}: num_steps {} counted {counted:?} formula {formula}", num_steps(alg, n)));
            }
        }
    }
    outcome(bad.is_empty(), format!("{checked} (algorithm, n) pairs; mismatches: {bad:?}"))
}

/// After running every round, each rank has heard (transitively) from all.
fn closure_holds(all: &[Schedule]) -> bool {
    let n = all.len();
    let mut know: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    let rounds = all.iter().map(|s| s.rounds.len()).max().unwrap_or(0);
    for t in 0..rounds {
        let before = know.clone();
        for s in all {
            if let Some(r) = s.rounds.get(t) {
                for &d in &r.send_to {
                    know[d].extend(before[s.me].iter().copied());
                }
            }
        }
    }
    know.iter().all(|k| k.len() == n)
}

fn c3_schedule_matching() -> Outcome {
    let mut bad = Vec::new();
    for alg in all_algorithms() {
        for n in 2..=33 {
            if let Err(v) = validate_schedules(&build_all(alg, n).unwrap()) {
                bad.push(format!("{alg} n={n}: {v}"));
            }
        }
    }
    for n in 2..=17 {
        if !closure_holds(&build_all(DS, n).unwrap()) {
            bad.push(format!("ds closure n={n}"));
        }
    }
    outcome(bad.is_empty(), format!("validated 5 algorithms x n=2..33, ds closure n=2..17; failures: {bad:?}"))
}

struct LossRun {
    label: String,
    mode: Mode,
    completed: bool,
    safety: usize,
    lookahead: usize,
    unrecovered: usize,
    drops: u64,
    retransmits: u64,
    error: Option<String>,
}

fn loss_runs() -> Vec<LossRun> {
    let mut out = Vec::new();
    for platform in MYRINET {
        for loss in [0.0, 0.1, 0.3] {
            for n in [2, 3, 5, 8, 16] {
                for mode in [Mode::Host, Mode::NicPt2pt, Mode::NicCollective] {
                    let label = format!("{platform} {mode} n={n} loss={loss}");
                    let cfg = ExperimentConfig {
                        warmup: 0,
                        iterations: 1000,
                        seed: 11,
                        host_skew_us: 5.0,
                        loss_prob: Some(loss),
                        trace: true,
                        ..ExperimentConfig::new(platform, mode, DS, n)
                    };
                    let mut sim = cfg.sim_config(cfg.cost_model().unwrap()).unwrap();
                    sim.keep_log = true;
                    let run = match simulate(&sim) {
                        Ok(o) => o,
                        Err(e) => {
                            out.push(LossRun {
                                label,
                                mode,
                                completed: false,
                                safety: 0,
                                lookahead: 0,
                                unrecovered: 0,
                                drops: 0,
                                retransmits: 0,
                                error: Some(e.to_string()),
                            });
                            continue;
                        }
                    };
                    let members = HashMap::from([(0, n)]);
                    out.push(LossRun {
                        label,
                        mode,
                        completed: run.groups[0].completed_all(),
                        safety: check_safety(&run.log, &members).len(),
                        lookahead: check_lookahead(&run.trace, &run.log).len(),
                        unrecovered: check_drop_recovery(&run.trace).len(),
                        drops: run.counts.drops,
                        retransmits: run.counts.retransmits,
                        error: None,
                    });
                }
            }
        }
    }
    out
}

fn c4_safety(runs: &[LossRun]) -> Outcome {
    let safety: usize = runs.iter().map(|r| r.safety).sum();
    let lookahead: usize = runs.iter().map(|r| r.lookahead).sum();
    let errors: Vec<&str> = runs.iter().filter(|r| r.error.is_some()).map(|r| r.label.as_str()).collect();
    outcome(
        safety == 0 && lookahead == 0 && errors.is_empty(),
        format!(
            "{} runs x 1000 barriers; safety violations {safety}, lookahead violations {lookahead}, failed runs {errors:?}",
            runs.len()
        ),
    )
}

fn c5_packet_halving() -> Outcome {
    let count = |mode| {
        let cfg = ExperimentConfig {
            warmup: 0,
            iterations: 1,
            trace: true,
            ..ExperimentConfig::new("myrinet-lanai-xp", mode, DS, 8)
        };
        let run = execute(&cfg).unwrap();
        let mut by_kind: HashMap<PacketKind, u64> = HashMap::new();
        for ((kind, _, _), c) in count_packets(&run.outcome.trace) {
            *by_kind.entry(kind).or_default() += c;
        }
        let get = |k| by_kind.get(&k).copied().unwrap_or(0);
        (get(PacketKind::Barrier), get(PacketKind::Data), get(PacketKind::Ack), get(PacketKind::Nack))
    };
    let coll = count(Mode::NicCollective);
    let pt2pt = count(Mode::NicPt2pt);
    let host = count(Mode::Host);
    let pass = coll == (24, 0, 0, 0) && pt2pt == (0, 24, 24, 0) && host == (0, 24, 24, 0);
    outcome(
        pass,
        format!("(barrier, data, ack, nack): nic-collective {coll:?}, nic-pt2pt {pt2pt:?}, host {host:?}"),
    )
}

fn c6_liveness(runs: &[LossRun]) -> Outcome {
    let incomplete: Vec<&str> = runs.iter().filter(|r| !r.completed).map(|r| r.label.as_str()).collect();
    let unrecovered: usize = runs.iter().map(|r| r.unrecovered).sum();
    let silent: Vec<&str> =
        runs.iter().filter(|r| r.drops > 0 && r.retransmits == 0).map(|r| r.label.as_str()).collect();
    let drops = |m: Mode| runs.iter().filter(|r| r.mode == m).map(|r| r.drops).sum::<u64>();
    let retx = |m: Mode| runs.iter().filter(|r| r.mode == m).map(|r| r.retransmits).sum::<u64>();
    outcome(
        incomplete.is_empty() && unrecovered == 0 && silent.is_empty(),
        format!(
            "incomplete {incomplete:?}; unrecovered drops {unrecovered}; drops/retransmits host {}/{} nic-pt2pt {}/{} nic-collective {}/{}",
            drops(Mode::Host),
            retx(Mode::Host),
            drops(Mode::NicPt2pt),
            retx(Mode::NicPt2pt),
            drops(Mode::NicCollective),
            retx(Mode::NicCollective)
        ),
    )
}

fn c7_mode_ordering() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for platform in PRESETS {
        for alg in all_algorithms() {
            for n in 2..=32 {
                let base = ExperimentConfig { warmup: 10, iterations: 50, ..ExperimentConfig::new(platform, Mode::Host, alg, n) };
                let c = compare_modes(&base).unwrap();
                let (h, p, k) = (
                    c.mean(Mode::Host).unwrap(),
                    c.mean(Mode::NicPt2pt).unwrap(),
                    c.mean(Mode::NicCollective).unwrap(),
                );
                checked += 1;
                if !(k < p && p < h) {
                    bad.push(format!("{platform} {alg} n={n}: {k} {p} {h}"));
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{checked} configurations, strict nic-collective < nic-pt2pt < host; violations {bad:?}"))
}

fn c8_calibration() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (platform, n, target, ratio_target) in
        [("myrinet-lanai-xp", 8, 14.20, 2.64), ("quadrics-elan3", 8, 5.60, 2.48), ("myrinet-lanai-9.1", 16, 25.72, 3.38)]
    {
        let c = compare_modes(&ExperimentConfig::new(platform, Mode::Host, DS, n)).unwrap();
        let coll = c.mean(Mode::NicCollective).unwrap();
        let ratio = c.host_over_collective;
        let ok = within(coll, target, LATENCY_TOL) && within(ratio, ratio_target, RATIO_TOL);
        pass &= ok;
        parts.push(format!("{platform} n={n}: {coll:.2}us (target {target}) factor {ratio:.2} (target {ratio_target})"));
    }
    outcome(pass, parts.join("; "))
}

fn c9_model_round_trip() -> Outcome {
    let sim = |mode, n| {
        let cfg = ExperimentConfig { warmup: 10, iterations: 200, ..ExperimentConfig::new("quadrics-elan3", mode, DS, n) };
        execute(&cfg).unwrap().measurement.mean_us
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [Mode::NicCollective, Mode::ElanChain] {
        let samples: Vec<(usize, f64)> = [2, 4, 8].iter().map(|&n| (n, sim(mode, n))).collect();
        let fit = fit_constants(&samples).unwrap();
        let predicted = predict_latency(&fit.params, 64).unwrap();
        let actual = sim(mode, 64);
        let err = (predicted - actual).abs() / actual;
        pass &= err <= EXTRAPOLATION_TOL;
        parts.push(format!("{mode}: predicted {predicted:.3}us vs simulated {actual:.3}us at n=64 ({:.2}%)", 100.0 * err));
    }

    let truth = ModelParams::new("truth", 3.60, 3.50, 3.84).unwrap();
    let exact: Vec<(usize, f64)> = [2, 4, 8, 16].iter().map(|&n| (n, predict_latency(&truth, n).unwrap())).collect();
    let fit = fit_constants(&exact).unwrap();
    let recovered = (fit.params.t_trig - 3.50).abs() <= FIT_TOL
        && (fit.intercept - 7.44).abs() <= FIT_TOL
        && (fit.params.t_init - 3.60 - 3.84).abs() <= FIT_TOL;
    pass &= recovered;
    parts.push(format!("synthetic fit t_trig {:.12} intercept {:.12}", fit.params.t_trig, fit.intercept));
    outcome(pass, parts.join("; "))
}

fn c10_determinism() -> Outcome {
    let mut cfgs = Vec::new();
    for platform in MYRINET {
        for mode in [Mode::Host, Mode::NicPt2pt, Mode::NicCollective] {
            cfgs.push(ExperimentConfig {
                warmup: 0,
                iterations: 300,
                seed: 5,
                host_skew_us: 5.0,
                loss_prob: Some(0.3),
                trace: true,
                ..ExperimentConfig::new(platform, mode, DS, 8)
            });
        }
    }
    for mode in [Mode::NicCollective, Mode::ElanChain] {
        cfgs.push(ExperimentConfig {
            warmup: 10,
            iterations: 100,
            seed: 5,
            host_skew_us: 2.0,
            trace: true,
            ..ExperimentConfig::new("quadrics-elan3", mode, AlgorithmKind::GatherBroadcast { degree: 3 }, 13)
        });
    }
    let render = |c: &ExperimentConfig| {
        let run = execute(c).unwrap();
        (rows_to_csv(&[ResultRow::new(c, &run.measurement)]).unwrap(), trace_to_csv(&run.outcome.trace))
    };
    let differing: Vec<String> = cfgs
        .iter()
        .filter(|c| render(c) != render(c))
        .map(|c| format!("{} {} n={}", c.platform, c.mode, c.n))
        .collect();
    outcome(differing.is_empty(), format!("{} experiments run twice; differing outputs {differing:?}", cfgs.len()))
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id, name, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((id, name, o, t.elapsed().as_secs_f64()));
    };
    timed(1, "analytic exactness", &c1_analytic);
    timed(2, "step-count oracle", &c2_step_counts);
    timed(3, "schedule matching", &c3_schedule_matching);
    let t = Instant::now();
    let runs = loss_runs();
    let loss_secs = t.elapsed().as_secs_f64();
    timed(4, "safety oracle", &|| c4_safety(&runs));
    timed(5, "packet halving", &c5_packet_halving);
    timed(6, "liveness under loss", &|| c6_liveness(&runs));
    timed(7, "mode ordering", &c7_mode_ordering);
    timed(8, "calibration targets", &c8_calibration);
    timed(9, "model round trip", &c9_model_round_trip);
    timed(10, "determinism", &c10_determinism);

    println!("shared loss runs: {loss_secs:.1}s");
    for (id, name, o, secs) in &results {
        println!("{} {id:>2} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
