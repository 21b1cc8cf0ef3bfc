//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary so the lines always reach the output.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};

use infoevo_cli::run::RunRecord;
use infoevo_core::demes::{behavior_fisher_distance, behavior_fisher_distance_with, program_fisher_distance, run_demes, DemeBudget};
use infoevo_core::domains::{BinOp, BitProblem, Dataset, ExprTree, Node, Problem, RealObjective, RealProblem, SymReg};
use infoevo_core::evolve::{run_generation, InfoEvo, InfoEvoConfig, Trace};
use infoevo_core::guidance::{Decision, FilterPolicy, GuidanceContext, HKind, ModifiedPromise, OmegaKind};
use infoevo_core::ledger::{DistanceMetric, EvaluationLedger};
use infoevo_core::manifold::{
    differential_mass, exp_map, geodesic_distance_exact, inner, log_map, mass, project_tangent, LogDistribution,
};
use infoevo_core::promise::{argmax, promise_vector, PromiseWeights};
use infoevo_core::SearchRng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: f64, what: &str) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_secs, format!("{what} took {:.1}s (limit {limit_secs}s)", elapsed.as_secs_f64()))
}

fn random_dist(n: usize, rng: &mut SearchRng) -> LogDistribution {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    LogDistribution::from_weights(&w).unwrap()
}

fn infoevo(args: &[&str]) -> (i32, String, Duration) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_infoevo")).args(args).output().expect("binary runs");
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text, elapsed)
}

fn load_record(dir: &Path) -> RunRecord {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

fn manifold_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = SearchRng::seed_from_u64(101);
    let (mut mass_err, mut tangent_err, mut fd_err) = (0.0f64, 0.0f64, 0.0f64);
    let h = 1e-7;
    for i in 0..1000 {
        let n = [2, 3, 10, 100][i % 4];
        let base = random_dist(n, &mut rng);
        mass_err = mass_err.max((mass(base.phi()) - 1.0).abs());
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = project_tangent(&base, &f).map_err(|e| e.to_string())?;
        tangent_err = tangent_err.max(inner(&base, t.components(), &vec![1.0; n]).map_err(|e| e.to_string())?.abs());
        let shifted: Vec<f64> = base.phi().iter().zip(&f).map(|(p, d)| p + h * d).collect();
        let fd = (mass(&shifted) - mass(base.phi())) / h;
        fd_err = fd_err.max((differential_mass(&base, &f).map_err(|e| e.to_string())? - fd).abs());
    }
    check(mass_err <= 1e-10, format!("mass error {mass_err:e}"))?;
    check(tangent_err < 1e-10, format!("tangent residual {tangent_err:e}"))?;
    check(fd_err <= 1e-6, format!("differential vs finite difference {fd_err:e}"))?;
    within(start.elapsed(), 5.0, "manifold suite")?;
    Ok(format!("mass {mass_err:.1e}, tangent {tangent_err:.1e}, dF {fd_err:.1e}, {:.2}s", start.elapsed().as_secs_f64()))
}

fn geodesic_oracle() -> Outcome {
    let (code, text, elapsed) =
        infoevo(&["geodesic-check", "--n", "3,5,10", "--trials", "50", "--resolution", "32", "--levels", "3", "--seed", "0"]);
    let trials = text.lines().filter(|l| l.starts_with("n=")).count();
    let max_line = text.lines().find(|l| l.starts_with("max_rel_error")).unwrap_or("").to_string();
    check(code == 0, format!("exit {code}: {max_line}"))?;
    check(trials == 150, format!("{trials} trial lines"))?;
    within(elapsed, 60.0, "geodesic-check")?;
    Ok(format!("{max_line}, 150 trials, {:.1}s", elapsed.as_secs_f64()))
}

fn exp_log_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = SearchRng::seed_from_u64(303);
    let (mut norm_err, mut trip_err) = (0.0f64, 0.0f64);
    for n in [3, 10, 100] {
        for _ in 0..100 {
            let base = random_dist(n, &mut rng);
            let target = random_dist(n, &mut rng);
            let v = log_map(&base, &target).map_err(|e| e.to_string())?;
            let d = geodesic_distance_exact(&base, &target).map_err(|e| e.to_string())?;
            norm_err = norm_err.max((v.norm() - d).abs());
            let back = exp_map(&base, &v, 1.0).map_err(|e| e.to_string())?;
            for (p, q) in back.probs().iter().zip(target.probs()) {
                trip_err = trip_err.max((p - q).abs());
            }
        }
    }
    check(norm_err <= 1e-8, format!("log-map norm error {norm_err:e}"))?;
    check(trip_err < 1e-8, format!("round-trip error {trip_err:e}"))?;
    within(start.elapsed(), 5.0, "exp/log suite")?;
    Ok(format!("norm {norm_err:.1e}, round trip {trip_err:.1e}"))
}

fn promise_reduction() -> Outcome {
    let mut rng = SearchRng::seed_from_u64(404);
    let weights = PromiseWeights::new(1.0, 0.0, 0.0);
    for trial in 0..100 {
        let p = RealProblem::new(RealObjective::Rosenbrock, rng.random_range(2..6), None);
        let mut ledger = EvaluationLedger::new(1000);
        for _ in 0..rng.random_range(2..60) {
            let g = p.random_genotype(&mut rng);
            ledger.evaluate(&g, &p).map_err(|e| e.to_string())?;
        }
        let samples = ledger.samples().to_vec();
        let metric = DistanceMetric::Genotypic.resolve(&samples, &p);
        let pv = promise_vector(&samples, &weights, &metric, &p).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
        check(pv.argmax() == argmax(&scores), format!("ledger {trial}: promise argmax differs from score argmax"))?;
    }
    Ok("100/100 ledgers".into())
}

fn guidance_soundness() -> Outcome {
    let mut rng = SearchRng::seed_from_u64(505);
    for _ in 0..10_000 {
        let (z1, z2) = (rng.random::<f64>(), rng.random::<f64>());
        let (w1, w2) = (rng.random::<f64>(), rng.random::<f64>());
        let (zl, zh) = (z1.min(z2), z1.max(z2));
        let (wl, wh) = (w1.min(w2), w1.max(w2));
        for h in [HKind::Product, HKind::WeightedSum { alpha: rng.random() }] {
            check(h.apply(zl, w1) <= h.apply(zh, w1), format!("{h:?} not monotone in zeta"))?;
            check(h.apply(z1, wl) <= h.apply(z1, wh), format!("{h:?} not monotone in omega"))?;
        }
    }

    let p = BitProblem::onemax(40);
    let cfg = InfoEvoConfig { initial_population: Some(64), ..InfoEvoConfig::default() };
    let mut engine = InfoEvo::new(p.clone(), cfg, 100_000, 2, 0).map_err(|e| e.to_string())?;
    let mut trace = Trace::new();
    engine.initialize(Vec::new(), &mut trace).map_err(|e| e.to_string())?;
    let samples = engine.ledger().snapshot(64);
    let n = samples.len();
    let weights: Vec<f64> = samples.iter().map(|s| 1.0 + s.score).collect();
    let context = |q: f64| {
        let mp = ModifiedPromise::new(
            LogDistribution::uniform(n),
            LogDistribution::from_weights(&weights).unwrap(),
            OmegaKind::KnnMass { k: 5 },
            HKind::Product,
        )
        .unwrap();
        let policy = FilterPolicy { k: 5, threshold_quantile: q, metric: DistanceMetric::Genotypic };
        GuidanceContext::new(samples.clone(), mp, policy, &p).unwrap()
    };

    let open = context(0.0);
    for _ in 0..10_000 {
        let g = p.random_genotype(&mut rng);
        check(open.should_evaluate(&g).decision == Decision::Evaluate, "quantile 0 skipped a candidate")?;
    }

    let strict = context(0.5);
    let mut ledger = engine.ledger().clone();
    let mut parents = samples.clone();
    let (mut seen, mut skipped) = (0, 0);
    while seen < 10_000 {
        let before = ledger.eval_count();
        let (out, next) = run_generation(&parents, &strict, &cfg.evolution, &p, &mut ledger, &mut rng, &mut trace, 0)
            .map_err(|e| e.to_string())?;
        check(ledger.eval_count() - before == out.evaluated.len(), "evaluation count mismatch")?;
        for g in &out.skipped {
            check(ledger.lookup(g, &p).is_none(), "a skipped candidate was evaluated")?;
        }
        seen += out.skipped.len() + out.evaluated.len() + out.duplicates;
        skipped += out.skipped.len();
        parents = next;
    }
    check(skipped > 0, "filter never skipped at quantile 0.5")?;
    Ok(format!("h monotone on 10^4 pairs; quantile 0 accepted 10^4; {skipped} skipped of {seen}, none evaluated"))
}

fn determinism(tmp: &Path) -> Outcome {
    let mut traces = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.join(format!("det_{name}"));
        let args = [
            "run", "--problem", "trap", "--bits", "30", "--budget", "4000", "--demes", "2", "--seed", "17", "--out",
            dir.to_str().unwrap(),
        ];
        let (code, text, _) = infoevo(&args);
        check(code == 0, format!("run exited {code}: {text}"))?;
        traces.push(std::fs::read(dir.join("trace.jsonl")).map_err(|e| e.to_string())?);
    }
    check(traces[0] == traces[1], "trace.jsonl differs between identical runs")?;
    Ok(format!("{} identical bytes", traces[0].len()))
}

fn desk_scale(tmp: &Path) -> Outcome {
    let mut notes = Vec::new();
    let dir = tmp.join("onemax");
    let (code, text, t) = infoevo(&[
        "run", "--problem", "onemax", "--bits", "50", "--budget", "20000", "--seed", "1", "--mode", "paired", "--out",
        dir.to_str().unwrap(),
    ]);
    check(code == 0, format!("onemax exited {code}: {text}"))?;
    let rec = load_record(&dir);
    for r in &rec.runs {
        check(r.reached_target, format!("onemax {:?} missed the optimum (best {:?})", r.mode, r.best_score))?;
        check(r.evaluations <= 20000, "onemax over budget")?;
    }
    within(t, 60.0, "onemax paired")?;
    notes.push(format!("onemax {:.1}s", t.as_secs_f64()));

    for (label, args, limit) in [
        ("sphere-10", vec!["--problem", "sphere", "--dim", "10", "--budget", "20000", "--target", "-1e-3"], 120.0),
        ("symreg", vec!["--problem", "symreg", "--max-depth", "5", "--budget", "30000"], 180.0),
    ] {
        let dir = tmp.join(label);
        let mut full = vec!["run", "--seed", "1", "--out", dir.to_str().unwrap()];
        full.extend(args);
        let (code, text, t) = infoevo(&full);
        check(code == 0, format!("{label} exited {code}: {text}"))?;
        let rec = load_record(&dir);
        let budget = rec.config.budget;
        check(rec.runs[0].evaluations <= budget, format!("{label} over budget"))?;
        within(t, limit, label)?;
        notes.push(format!(
            "{label} {:.1}s reached={} evals={}",
            t.as_secs_f64(),
            rec.runs[0].reached_target,
            rec.runs[0].evaluations
        ));
    }

    let dir = tmp.join("compare");
    let (code, text, _) = infoevo(&[
        "compare", "--problem", "onemax", "--bits", "50", "--budget", "20000", "--seed", "1", "--repeats", "3", "--out",
        dir.to_str().unwrap(),
    ]);
    check(code == 0, format!("compare exited {code}: {text}"))?;
    let mut reader = csv::Reader::from_path(dir.join("compare.csv")).map_err(|e| e.to_string())?;
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    check(
        header.iter().collect::<Vec<_>>() == ["seed", "mode", "evals_to_target", "best_score", "candidates_skipped"],
        format!("compare header {header:?}"),
    )?;
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    check(rows.len() == 8, format!("{} compare rows", rows.len()))?;
    check(rows[6..].iter().all(|r| &r[0] == "median"), "summary rows missing")?;
    for pair in rows[..6].chunks(2) {
        check(pair[0][0] == pair[1][0], "paired seeds differ")?;
        let skipped: f64 = pair[1][4].parse().map_err(|_| format!("bad skipped count {:?}", &pair[1][4]))?;
        check(&pair[1][1] == "baseline" && skipped == 0.0, "baseline row skipped candidates")?;
    }
    notes.push(format!("median evals info_evo {} baseline {}", &rows[6][2], &rows[7][2]));
    Ok(notes.join("; "))
}

fn resource_factor() -> Outcome {
    let p = RealProblem::new(RealObjective::Sphere, 4, None);
    let mut cfg = InfoEvoConfig::default();
    cfg.policy.threshold_quantile = 0.0;
    cfg.policy.metric = DistanceMetric::Genotypic;
    let (demes, subdemes) = (2, 4);
    let budget = DemeBudget::split(8000, demes, subdemes);
    let out = run_demes(&p, demes, budget, 8000, &cfg, 23).map_err(|e| e.to_string())?;
    let kept = subdemes.div_ceil(2);
    let gens = cfg.evolution.generations_per_round;
    let mut checked = 0;
    for r in &out.reports {
        if r.immigrants > 0 || r.subdemes.iter().any(|s| s.budget_exhausted) {
            continue;
        }
        check(r.rays_generated == subdemes && r.rays_used == kept, format!("round {}: {} rays, {} used", r.round_index, r.rays_generated, r.rays_used))?;
        let generations: usize = r.subdemes.iter().map(|s| s.generations_run).sum();
        let offspring: usize = r.subdemes.iter().map(|s| s.offspring_produced).sum();
        check(generations == kept * gens, format!("round {}: {generations} generations", r.round_index))?;
        check(
            offspring == kept * gens * cfg.evolution.offspring_per_generation(),
            format!("round {}: {offspring} offspring", r.round_index),
        )?;
        check(r.candidates_skipped == 0, "disabled filter skipped")?;
        checked += 1;
    }
    check(checked >= 10, format!("only {checked} complete rounds"))?;
    Ok(format!("{checked} rounds: generations = {kept} x {gens}"))
}

fn program_distance() -> Outcome {
    let d = behavior_fisher_distance_with(&[1.0, 3.0], &[3.0, 1.0], 1e-14).map_err(|e| e.to_string())?;
    check((d - std::f64::consts::FRAC_PI_3).abs() <= 1e-6, format!("(1,3)/(3,1) gave {d}"))?;

    let p = SymReg::new(Dataset::default_quadratic(), 5);
    let tree = ExprTree::new(Node::op(BinOp::Add, Node::Var(0), Node::op(BinOp::Mul, Node::Var(0), Node::Var(0))));
    let probes: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 * 0.5 - 2.0]).collect();
    let same = program_fisher_distance(&tree, &tree.clone(), &probes, &p).map_err(|e| e.to_string())?;
    check(same == 0.0, format!("identical programs at distance {same}"))?;

    let mut rng = SearchRng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let mut v = || (0..n).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let (a, b, c) = (v(), v(), v());
        let ab = behavior_fisher_distance(&a, &b).map_err(|e| e.to_string())?;
        check(ab == behavior_fisher_distance(&b, &a).map_err(|e| e.to_string())?, "asymmetric distance")?;
        let bc = behavior_fisher_distance(&b, &c).map_err(|e| e.to_string())?;
        let ac = behavior_fisher_distance(&a, &c).map_err(|e| e.to_string())?;
        worst = worst.max(ac - ab - bc);
    }
    check(worst <= 1e-9, format!("triangle violated by {worst:e}"))?;
    Ok(format!("pi/3 error {:.1e}, worst triangle slack {worst:.1e}", (d - std::f64::consts::FRAC_PI_3).abs()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("manifold invariants", Box::new(manifold_invariants)),
        ("geodesic oracle equivalence", Box::new(geodesic_oracle)),
        ("exp/log consistency", Box::new(exp_log_consistency)),
        ("promise reduction", Box::new(promise_reduction)),
        ("guidance monotonicity and filter soundness", Box::new(guidance_soundness)),
        ("end-to-end determinism", Box::new(|| determinism(tmp.path()))),
        ("desk-scale runs and compare accounting", Box::new(|| desk_scale(tmp.path()))),
        ("resource factor", Box::new(resource_factor)),
        ("program Fisher distance", Box::new(program_distance)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
