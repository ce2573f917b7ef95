//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnfplace::cart::{fit, fit_with_rule, DecisionTreeModel, HyperparameterSet, LeafRule};
use vnfplace::features::{build_dataset, extract_features, Dataset, FeatureSchema};
use vnfplace::net_model::{build_sfc, generate_topology, GenConfig, ReplicaCounts, SfcSpec, Topology, VnfType};
use vnfplace::pipeline::detect_functional_range;
use vnfplace::placer::{enumerate_cps, place_teacher, total_pair_delay, validate_placement, Placement};
use vnfplace::pso::{pso_minimize, reg_term, PsoParams};
use vnfplace_cli::{cmd_compare, cmd_generate, cmd_optimize, RunConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn desk_config(out: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let mut cfg = RunConfig::load(&path).expect("desk config loads");
    cfg.output_dir = out.to_path_buf();
    cfg.resolve(None, Path::new("/"))
}

fn criterion_1() -> Outcome {
    let got = [reg_term(0).unwrap(), reg_term(1).unwrap(), reg_term(3).unwrap()];
    outcome(got == [0.0, 1000.0, 2000.0], format!("reg_term(0,1,3) = {got:?}"))
}

fn criterion_2() -> Outcome {
    let curve: Vec<(i64, f64)> = (2..=100)
        .map(|d| {
            let r = match d {
                ..=19 => 0.40 - 0.017 * (d - 2) as f64,
                20 => 0.075,
                21..=24 => 0.075 - 0.015 * (d - 20) as f64,
                _ => 0.0,
            };
            (d, r)
        })
        .collect();
    match detect_functional_range(&curve, 0.075, 10) {
        Ok(r) => outcome((r.a1, r.a2) == (20, 35), format!("range [{}, {}], expected [20, 35]", r.a1, r.a2)),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

/// Minimum total dependent-pair delay over every valid assignment.
fn brute_force_optimum(topo: &Topology, sfc: &SfcSpec) -> Option<f64> {
    let (s, v) = (topo.n_servers(), sfc.n_instances());
    let mut a = vec![0usize; v];
    let mut best: Option<f64> = None;
    loop {
        if validate_placement(topo, sfc, &Placement::new(a.clone())).valid {
            let mut total = 0.0;
            for w in VnfType::CHAIN.windows(2) {
                for x in sfc.instances_of(w[0]) {
                    for y in sfc.instances_of(w[1]) {
                        total += topo.delay_matrix()[a[x.id] * s + a[y.id]];
                    }
                }
            }
            best = Some(best.map_or(total, |b: f64| b.min(total)));
        }
        let mut k = 0;
        loop {
            if k == v {
                return best;
            }
            a[k] += 1;
            if a[k] < s {
                break;
            }
            a[k] = 0;
            k += 1;
        }
    }
}

fn criterion_3() -> Outcome {
    let cfg = GenConfig { n_topologies: 500, ..desk_config(Path::new("/unused")).generator };
    let mut valid = 0;
    for i in 0..500 {
        let topo = generate_topology(&cfg, i).unwrap();
        let sfc = build_sfc(&cfg, i).unwrap();
        if place_teacher(&topo, &sfc).is_ok_and(|p| validate_placement(&topo, &sfc, &p).valid) {
            valid += 1;
        }
    }

    let shapes = [
        ReplicaCounts::new(1, 1, 1, 1),
        ReplicaCounts::new(1, 2, 1, 1),
        ReplicaCounts::new(1, 1, 2, 1),
        ReplicaCounts::new(2, 1, 1, 1),
        ReplicaCounts::new(1, 1, 1, 2),
    ];
    let mut ratios = Vec::new();
    let mut mismatched_feasibility = 0;
    for trial in 0..200u64 {
        let rc = shapes[(trial / 2) as usize % shapes.len()];
        let tiny = GenConfig {
            n_servers: rc.total().max(4 + (trial % 2) as usize),
            replica_counts: rc,
            base_seed: 1000 + trial,
            ..GenConfig::default()
        };
        let topo = generate_topology(&tiny, trial).unwrap();
        let sfc = build_sfc(&tiny, trial).unwrap();
        match (brute_force_optimum(&topo, &sfc), place_teacher(&topo, &sfc)) {
            (None, Err(_)) => {}
            (Some(opt), Ok(p)) if validate_placement(&topo, &sfc, &p).valid => {
                let got = total_pair_delay(&topo, &p, &sfc);
                ratios.push(if opt == 0.0 { if got == 0.0 { 1.0 } else { f64::INFINITY } } else { got / opt });
            }
            _ => mismatched_feasibility += 1,
        }
    }
    let within = ratios.iter().filter(|&&r| r <= 1.10).count();
    let cases = ratios.len() + mismatched_feasibility;
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: usize| sorted.get(sorted.len().saturating_sub(1) * p / 100).copied().unwrap_or(f64::NAN);
    outcome(
        valid == 500 && within as f64 >= 0.95 * cases as f64,
        format!(
            "teacher valid {valid}/500; tiny within 1.10x {within}/{cases} (feasibility mismatches {mismatched_feasibility}); \
             gap ratio median {:.4} p90 {:.4} p99 {:.4} max {:.4}",
            q(50),
            q(90),
            q(99),
            q(100)
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut bad = Vec::new();
    for h in 1..=3 {
        for m in 1..=3 {
            for s in 1..=3 {
                for p in 1..=3 {
                    let rc = ReplicaCounts::new(h, m, s, p);
                    let sfc = SfcSpec::new(rc, vec![(1.0, 1.0); rc.total()], [500.0; 3], true).unwrap();
                    if enumerate_cps(&sfc).len() != (h * m * s * p) as usize {
                        bad.push((h, m, s, p));
                    }
                }
            }
        }
    }
    let count = |rc: ReplicaCounts| {
        let sfc = SfcSpec::new(rc, vec![(1.0, 1.0); rc.total()], [500.0; 3], true).unwrap();
        enumerate_cps(&sfc).len()
    };
    let six = count(ReplicaCounts::new(1, 2, 2, 1));
    let ten = count(ReplicaCounts::new(2, 3, 3, 2));
    outcome(
        bad.is_empty() && six == 4 && ten == 36,
        format!("81 shapes checked, mismatches {bad:?}; 6 instances -> {six} paths, 10 instances -> {ten} paths"),
    )
}

const CLASSES: usize = 5;

type Rows = Vec<(Vec<f64>, Vec<usize>)>;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, f: usize, spread: u32) -> Rows {
    (0..n)
        .map(|_| {
            let x = (0..f).map(|_| rng.random_range(0..spread) as f64).collect();
            let y = (0..4).map(|_| rng.random_range(0..CLASSES)).collect();
            (x, y)
        })
        .collect()
}

fn rows_dataset(rows: &Rows) -> Dataset {
    let mut schema = FeatureSchema::new(CLASSES, ReplicaCounts::new(1, 1, 1, 1));
    schema.feature_names = (0..rows[0].0.len()).map(|j| format!("x{j}")).collect();
    let mut ds = Dataset::empty(schema);
    for (x, y) in rows {
        ds.push(x.clone(), y.clone()).unwrap();
    }
    ds
}

/// Exhaustive best `(feature, threshold)` under mean per-output Gini, compared as exact fractions.
fn brute_force_stump(rows: &Rows) -> Option<(usize, f64)> {
    let mut best: Option<((i128, i128), usize, f64)> = None;
    for j in 0..rows[0].0.len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (left, right): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.0[j] <= t);
            let (nl, nr) = (left.len() as i128, right.len() as i128);
            let sq = |side: &[&(Vec<f64>, Vec<usize>)], o: usize| -> i128 {
                (0..CLASSES).map(|c| side.iter().filter(|r| r.1[o] == c).count() as i128).map(|k| k * k).sum()
            };
            let num: i128 = (0..4).map(|o| nl * nl * nr - sq(&left, o) * nr + nr * nr * nl - sq(&right, o) * nl).sum();
            let score = (num, (nl + nr) * nl * nr * 4);
            if best.is_none_or(|(b, ..)| score.0 * b.1 < b.0 * score.1) {
                best = Some((score, j, t));
            }
        }
    }
    best.map(|(_, j, t)| (j, t))
}

fn teacher_dataset(cfg: &GenConfig, indices: std::ops::Range<u64>) -> Dataset {
    let rows: Vec<_> = indices
        .map(|i| {
            let topo = generate_topology(cfg, i).unwrap();
            let sfc = build_sfc(cfg, i).unwrap();
            let p = place_teacher(&topo, &sfc).unwrap();
            (topo, sfc, p)
        })
        .collect();
    build_dataset(FeatureSchema::for_snapshot(&rows[0].0, &rows[0].1), &rows).unwrap()
}

fn exact_match_rate(m: &DecisionTreeModel, ds: &Dataset) -> f64 {
    let hits = ds.features().iter().zip(ds.labels()).filter(|(x, y)| &m.predict(x).unwrap() == *y).count();
    hits as f64 / ds.n_samples() as f64
}

/// Sweeps with a depth at which training exact-match fell, and the first such drop.
fn monotone_sweeps(rule: LeafRule) -> (usize, Option<String>) {
    let mut broken = 0;
    let mut first = None;
    for sweep in 0..10 {
        let ds = teacher_dataset(&GenConfig { base_seed: 500 + sweep, ..GenConfig::default() }, 0..200);
        let mut last = 0.0;
        let mut ok = true;
        for d in 1..=40 {
            let rate = exact_match_rate(&fit_with_rule(&ds, HyperparameterSet::new(d).unwrap(), rule).unwrap(), &ds);
            if rate < last && ok {
                ok = false;
                first.get_or_insert(format!("sweep {sweep} depth {d}: {last:.3} -> {rate:.3}"));
            }
            last = rate;
        }
        broken += usize::from(!ok);
    }
    (broken, first)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut stump_hits = 0;
    let mut depth_violations = 0;
    for trial in 0..50 {
        let n = rng.random_range(8..=200);
        let f = rng.random_range(1..=10);
        let rows = random_rows(&mut rng, n, f, 3 + trial % 20);
        let ds = rows_dataset(&rows);
        let m = fit(&ds, HyperparameterSet::new(1).unwrap(), 0).unwrap();
        stump_hits += usize::from(m.nodes[0].split.map(|s| (s.feature, s.threshold)) == brute_force_stump(&rows));
        for d in [2, 3, 5, 8, 13] {
            depth_violations += usize::from(fit(&ds, HyperparameterSet::new(d).unwrap(), 0).unwrap().tree_depth() > d);
        }
    }
    let (broken, first) = monotone_sweeps(LeafRule::PerOutputMajority);
    let (joint_broken, _) = monotone_sweeps(LeafRule::JointMode);
    outcome(
        stump_hits == 50 && depth_violations == 0 && broken == 0,
        format!(
            "stump oracle {stump_hits}/50; depth-bound violations {depth_violations}/250; \
             exact-match monotone on {}/10 sweeps with per-output majority leaves{}; \
             joint-mode leaves (info) monotone on {}/10",
            10 - broken,
            first.map_or(String::new(), |f| format!(" (first drop {f})")),
            10 - joint_broken
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut hits = 0;
    let mut monotone = true;
    for seed in 0..30 {
        let params = PsoParams { swarm_size: 10, iterations: 30, lo: 2, hi: 100, seed, ..PsoParams::default() };
        let out = pso_minimize(|h| Ok(((h - 17) * (h - 17)) as f64), &params).unwrap();
        hits += usize::from(out.best_h == 17);
        monotone &= out.trace.entries.windows(2).all(|w| w[1].best_objective <= w[0].best_objective);
    }
    outcome(hits == 30 && monotone, format!("argmin 17 on {hits}/30 seeds; traces non-increasing: {monotone}"))
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn run_desk(dir: &Path) -> Result<(), vnfplace_cli::CliError> {
    let cfg = desk_config(dir);
    cmd_generate(&cfg)?;
    cmd_optimize(&cfg)?;
    cmd_compare(&cfg)?;
    Ok(())
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn criterion_7(dir: &Path) -> Outcome {
    if let Err(e) = run_desk(dir) {
        return outcome(false, format!("desk run failed: {e}"));
    }
    let report = read_json(dir.join("pipeline_report.json"));
    let curve: Vec<(f64, f64)> = report["stage1"]["curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["depth"].as_f64().unwrap(), p["ip_rate"].as_f64().unwrap()))
        .collect();
    let last = curve.last().unwrap().1;
    // plateau: the tail over which the curve stays at its final value
    let plateau = curve.iter().rposition(|p| p.1 != last).map_or(0, |i| i + 1);
    let pre = &curve[..=plateau.min(curve.len() - 1)];
    let rho = spearman(&pre.iter().map(|p| p.0).collect::<Vec<_>>(), &pre.iter().map(|p| p.1).collect::<Vec<_>>());
    let min_rate = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let zero_at = curve.iter().find(|p| p.1 == 0.0).map(|p| p.0 as i64);

    let cmp = read_json(dir.join("comparison_report.json"));
    let summary = |name: &str| {
        cmp["report"]["strategies"].as_array().unwrap().iter().find(|s| s["name"] == name).unwrap().clone()
    };
    let (dat, dodat) = (summary("dat"), summary("dodat"));
    let dodat_ip = dodat["ip_rate"].as_f64().unwrap();
    let delay = |s: &serde_json::Value| s["mean_cp_delay_us"].as_f64().unwrap_or(f64::INFINITY);
    let (d_dat, d_dodat) = (delay(&dat), delay(&dodat));

    let checks = [rho <= -0.8, min_rate == 0.0, dodat_ip <= 0.10, d_dodat <= d_dat];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "pre-plateau Spearman {rho:.3} over depths {}..={} [{}]; curve reaches 0 at depth {} [{}]; \
             range [{}, {}], h* {}; DO-DAT held-out ip {dodat_ip:.4} [{}]; mean CP delay DO-DAT {d_dodat:.2} us vs DAT {d_dat:.2} us [{}]",
            pre[0].0,
            pre[pre.len() - 1].0,
            ok(checks[0]),
            zero_at.map_or("never".into(), |d| d.to_string()),
            ok(checks[1]),
            report["functional_range"]["a1"],
            report["functional_range"]["a2"],
            report["h_star"],
            ok(checks[2]),
            ok(checks[3]),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn criterion_8() -> Outcome {
    let cfg = desk_config(Path::new("/unused")).generator;
    let queries: Vec<Vec<f64>> = (100_000..101_000)
        .map(|i| extract_features(&generate_topology(&cfg, i).unwrap(), &build_sfc(&cfg, i).unwrap()))
        .collect();
    let mut latencies = Vec::new();
    let mut depths = Vec::new();
    for n in [1_000u64, 4_000, 16_000] {
        let ds = teacher_dataset_par(&cfg, n);
        let model = fit(&ds, HyperparameterSet::new(100).unwrap(), 0).unwrap();
        depths.push(model.tree_depth());
        // best of several timed passes over the query set
        let mut best = Duration::MAX;
        for _ in 0..7 {
            let t = Instant::now();
            for _ in 0..20 {
                for q in &queries {
                    std::hint::black_box(model.predict(std::hint::black_box(q)).unwrap());
                }
            }
            best = best.min(t.elapsed());
        }
        latencies.push(best.as_secs_f64() * 1e9 / (20 * queries.len()) as f64);
    }
    let r1 = latencies[1] / latencies[0];
    let r2 = latencies[2] / latencies[1];
    outcome(
        r1 < 4.0 && r2 < 4.0,
        format!(
            "mean predict latency {:.0} / {:.0} / {:.0} ns at 1k / 4k / 16k rows (tree depth {:?}); ratios {r1:.2}, {r2:.2} vs size ratio 4",
            latencies[0], latencies[1], latencies[2], depths
        ),
    )
}

fn teacher_dataset_par(cfg: &GenConfig, n: u64) -> Dataset {
    use rayon::prelude::*;
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let topo = generate_topology(cfg, i).unwrap();
            let sfc = build_sfc(cfg, i).unwrap();
            let p = place_teacher(&topo, &sfc).unwrap();
            (topo, sfc, p)
        })
        .collect();
    build_dataset(FeatureSchema::for_snapshot(&rows[0].0, &rows[0].1), &rows).unwrap()
}

fn criterion_9(first: &Path, second: &Path) -> Outcome {
    if let Err(e) = run_desk(second) {
        return outcome(false, format!("second desk run failed: {e}"));
    }
    let mut names: Vec<_> = std::fs::read_dir(first).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(first.join(n)).ok() != std::fs::read(second.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outcome(
        differing.is_empty(),
        format!("{} files compared byte for byte; differing: {differing:?}", names.len()),
    )
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let (first, second) = (scratch.path().join("run1"), scratch.path().join("run2"));
    let mut failed = 0;
    let mut report = |name: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| -> Duration {
        let t = Instant::now();
        let o = f();
        let took = t.elapsed();
        let pass = o.pass && took <= limit;
        failed += usize::from(!pass);
        let over = if took > limit { format!(" over the {}s budget", limit.as_secs()) } else { String::new() };
        println!("{} {name} ({:.1}s{over}): {}", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64(), o.detail);
        took
    };
    let secs = Duration::from_secs;
    report("1 regularization exactness", secs(1), &mut criterion_1);
    report("2 functional-range fixture", secs(1), &mut criterion_2);
    report("3 teacher soundness", secs(300), &mut criterion_3);
    report("4 computational-path law", secs(1), &mut criterion_4);
    report("5 CART correctness", secs(120), &mut criterion_5);
    report("6 PSO correctness", secs(60), &mut criterion_6);
    let desk = report("7 end-to-end desk pipeline", secs(900), &mut || criterion_7(&first));
    report("8 query scaling", secs(300), &mut criterion_8);
    report("9 determinism", 2 * desk, &mut || criterion_9(&first, &second));
    if failed > 0 {
        std::process::exit(1);
    }
}
