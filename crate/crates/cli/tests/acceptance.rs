//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when a
//! gated criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use gtgib_core::backbone::decode_link;
use gtgib_core::enhancer::{verify_hit_bound, HitBoundConfig};
use gtgib_core::graph::{ingest_events, read_jodie_csv, RawEvent, TemporalGraph};
use gtgib_core::numerics::nn::{kl_bernoulli, kl_gaussian_std};
use gtgib_core::numerics::{grad_check, Rng, Tape};
use gtgib_core::synth::{generate_synthetic, SyntheticSpec};
use gtgib_core::theory::verify_all;
use gtgib_core::train::{average_precision, run_ablation, AblationReport, Experiment, Trainer, Variant};
use gtgib_core::Execution;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(id: &str, name: &str, gated: bool, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= limit;
    let pass = o.pass && in_time;
    let tag = if pass { "PASS" } else { "FAIL" };
    let gate = if gated { "" } else { " (reported, not gated)" };
    let time = if in_time { String::new() } else { format!(" [over the {}s budget]", limit.as_secs()) };
    println!("{tag} {id} {name}: {} ({:.1}s){time}{gate}", o.detail, took.as_secs_f64());
    pass || !gated
}

fn oracles() -> Outcome {
    const CASES: usize = 1000;
    let mut r = Rng::new(100, 0);
    let mut worst = [0.0f64; 4];
    for _ in 0..CASES {
        let p = 1e-3 + (1.0 - 2e-3) * r.uniform();
        let q = 1e-3 + (1.0 - 2e-3) * r.uniform();
        let cross = -(p * q.ln() + (1.0 - p) * (1.0 - q).ln());
        let ent = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        worst[0] = worst[0].max((kl_bernoulli(p, q) - (cross - ent)).abs());

        let k = 1 + r.below(8);
        let mu: Vec<f64> = (0..k).map(|_| 2.0 * r.normal()).collect();
        let ls: Vec<f64> = (0..k).map(|_| r.normal()).collect();
        let closed: f64 = mu.iter().zip(&ls).map(|(&m, &l)| 0.5 * ((2.0 * l).exp() + m * m - 1.0 - 2.0 * l)).sum();
        worst[1] = worst[1].max((kl_gaussian_std(&mu, &ls) - closed).abs());

        let n = 1 + r.below(30);
        let scores: Vec<f64> = (0..n).map(|_| (r.uniform() * 10.0).floor()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.uniform() < 0.4).collect();
        labels[r.below(n)] = true;
        let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
        let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
        let brute = pos
            .iter()
            .map(|&i| {
                let rank = 1 + (0..n).filter(|&j| ahead(j, i)).count();
                let hits = 1 + pos.iter().filter(|&&j| ahead(j, i)).count();
                hits as f64 / rank as f64
            })
            .sum::<f64>()
            / pos.len() as f64;
        worst[2] = worst[2].max((average_precision(&scores, &labels).unwrap() - brute).abs());

        let k = 1 + r.below(16);
        let zi: Vec<f64> = (0..k).map(|_| r.normal()).collect();
        let zj: Vec<f64> = (0..k).map(|_| r.normal()).collect();
        let w: Vec<f64> = (0..2 * k).map(|_| r.normal()).collect();
        let b = r.normal();
        let s = b + (0..k).map(|i| zi[i] * w[i] + zj[i] * w[k + i]).sum::<f64>();
        worst[3] = worst[3].max((decode_link(&zi, &zj, &w, b).unwrap() - 1.0 / (1.0 + (-s).exp())).abs());
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        max < 1e-9,
        format!(
            "max abs error kl_bernoulli {:.1e}, kl_gaussian {:.1e}, AP {:.1e}, decode {:.1e} over {CASES} cases",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn toy_graph() -> TemporalGraph {
    let mut r = Rng::new(11, 0);
    let mut t = 0.0;
    let rows = (0..40)
        .map(|_| {
            t += r.exponential(1.0);
            let a = r.below(6) as u64;
            let b = (a + 1 + r.below(5) as u64) % 6;
            RawEvent::new(a, b, t, (0..3).map(|_| r.normal()).collect())
        })
        .collect();
    ingest_events(rows).unwrap()
}

fn gradient() -> Outcome {
    let g = toy_graph();
    let mut exp = Experiment::default();
    exp.model.dim = 8;
    exp.model.time_dim = 4;
    exp.model.edge_dim = 4;
    exp.model.layers = 2;
    exp.train.batch_size = 20;
    exp.train.lr = 1e-3;
    exp.enhancer.k_rand = 2;
    exp.enhancer.hop_counts = vec![2, 2];
    exp.filter.straight_through = false;
    exp.split.inductive_fraction = 0.0;
    exp.loss.beta = 0.1;
    let mut trainer = Trainer::new(&g, exp).unwrap();
    trainer.train_epoch(0).unwrap();
    let mut store = trainer.store.clone();
    let mut r = Rng::new(5, 0);
    for id in store.ids().collect::<Vec<_>>() {
        if store.get(id).name.contains("retain") {
            store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.5 * r.normal());
        }
    }
    match grad_check(&store, 1e-5, |tape: &mut Tape, s| trainer.batch_loss(tape, s, 0..14).map(|r| r.0)) {
        Ok(rep) => outcome(
            rep.max_rel_err < 1e-4,
            format!("max relative error {:.2e} over {} entries", rep.max_rel_err, rep.checked),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn hit_bound() -> Outcome {
    match verify_hit_bound(&HitBoundConfig::default(), Execution::Sequential) {
        Ok(rep) => {
            let rows: Vec<String> =
                rep.rows.iter().map(|r| format!("k={} p={:.4} bound={:.4}", r.k, r.empirical_p, r.bound)).collect();
            outcome(rep.all_hold(), format!("c={:.4}, k*={:?}; {}", rep.c, rep.k_star, rows.join(", ")))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn theory() -> Outcome {
    match verify_all(1000, 0, Execution::Sequential) {
        Ok(rep) => {
            let parts: Vec<String> =
                rep.checks.iter().map(|c| format!("{} {}/{}", c.check, c.instances - c.failures, c.instances)).collect();
            outcome(rep.failures == 0, parts.join(", "))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Architecture defaults scaled to the synthetic data: K = 32, time
/// encoding width 16, learning rate 1e-3, 20 epochs. Everything else
/// (batch 200, 5 negatives, τ, π₀, φ₀, α, β) keeps its default.
fn synthetic_experiment() -> Experiment {
    let mut e = Experiment::default();
    e.model.dim = 32;
    e.model.time_dim = 16;
    e.train.lr = 1e-3;
    e.train.epochs = 20;
    e
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn synthetic_learning(g: &TemporalGraph, ablation: &AblationReport) -> Outcome {
    let (mut ut, mut ui) = (0.0, 0.0);
    for &seed in &SEEDS {
        let mut exp = synthetic_experiment();
        exp.train.seed = seed;
        let t = Trainer::new(g, exp).unwrap();
        let s = t.evaluate_all(&t.store, &t.memory).unwrap();
        ut += s.test_trans.unwrap_or(f64::NAN) / SEEDS.len() as f64;
        ui += s.test_ind.unwrap_or(f64::NAN) / SEEDS.len() as f64;
    }
    let full = ablation.row(Variant::Full).unwrap();
    let (tm, ts) = full.test_trans();
    let (im, is) = full.test_ind();
    let chance = (ut - 0.5).abs() <= 0.1 && (ui - 0.5).abs() <= 0.1;
    outcome(
        tm >= 0.85 && im >= 0.75 && chance,
        format!(
            "trained test AP transductive {tm:.4} ± {ts:.4} (need ≥ 0.85), inductive {im:.4} ± {is:.4} (need ≥ 0.75); \
             untrained {ut:.4} / {ui:.4}"
        ),
    )
}

fn ablation_order(ablation: &AblationReport) -> Outcome {
    let ind = |v| ablation.row(v).unwrap().test_ind();
    let (full, rand, hop, none) = (ind(Variant::Full), ind(Variant::RandOnly), ind(Variant::HopOnly), ind(Variant::NoEnhancer));
    let n = SEEDS.len() as f64;
    let se = (full.1.powi(2) / n + none.1.powi(2) / n).sqrt();
    let gap = full.0 - none.0;
    let ordered = full.0 >= rand.0 && full.0 >= hop.0 && rand.0 >= none.0 && hop.0 >= none.0;
    outcome(
        ordered && gap > 2.0 * se,
        format!(
            "inductive AP full {:.4}, rand_only {:.4}, hop_only {:.4}, no_enhancer {:.4}; full − no_enhancer {gap:.4} vs 2σ {:.4}",
            full.0,
            rand.0,
            hop.0,
            none.0,
            2.0 * se
        ),
    )
}

fn uci(path: &str) -> Outcome {
    let g = match read_jodie_csv(std::path::Path::new(path), false) {
        Ok(g) => g,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut exp = Experiment::default();
    exp.train.epochs = 20;
    let mut trainer = Trainer::new(&g, exp).unwrap();
    match trainer.fit() {
        Ok(fit) => {
            let b = fit.report.best().cloned();
            let t = b.as_ref().and_then(|b| b.ap_test_trans).unwrap_or(f64::NAN) * 100.0;
            let i = b.as_ref().and_then(|b| b.ap_test_ind).unwrap_or(f64::NAN) * 100.0;
            outcome(
                (t - 86.04).abs() <= 3.0 && (i - 83.54).abs() <= 4.0,
                format!("{} events: AP transductive {t:.2} (86.04 ± 3), inductive {i:.2} (83.54 ± 4)", g.n_events()),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nlr = 0.001\n[model]\ndim = 32\ntime_dim = 16\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_gtgib"))
            .args(["train", "--config"])
            .arg(&cfg)
            .args(["--seed", "7", "--threads", "1", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        (status.status.success(), out)
    };
    let ((ok_a, a), (ok_b, b)) = (run("a"), run("b"));
    if !(ok_a && ok_b) {
        return outcome(false, "train invocation failed");
    }
    let same = |f: &str| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok();
    let (m, c) = (same("metrics.json"), same("params.ckpt"));
    outcome(m && c, format!("metrics.json identical: {m}, params.ckpt identical: {c}"))
}

fn main() {
    let mut ok = true;
    ok &= report("1", "closed-form oracles", true, Duration::from_secs(10), oracles);
    ok &= report("2", "gradient check", true, Duration::from_secs(60), gradient);
    ok &= report("3", "hit-probability bound", true, Duration::from_secs(120), hit_bound);
    ok &= report("4", "theory checks", true, Duration::from_secs(120), theory);

    let (g, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let base = synthetic_experiment();
    let start = Instant::now();
    let mut ablation = run_ablation(&g, &base, &[Variant::Full], &SEEDS).unwrap();
    let full_time = start.elapsed();
    let rest = [Variant::RandOnly, Variant::HopOnly, Variant::NoEnhancer];
    ablation.rows.extend(run_ablation(&g, &base, &rest, &SEEDS).unwrap().rows);
    let all_time = start.elapsed();
    // training time is charged against each criterion's budget
    ok &= report("5", "synthetic end-to-end AP", true, Duration::from_secs(15 * 60).saturating_sub(full_time), || {
        synthetic_learning(&g, &ablation)
    });
    println!("  (5 trained the full model on {} seeds in {:.0}s)", SEEDS.len(), full_time.as_secs_f64());
    ok &= report("6", "ablation ordering", true, Duration::from_secs(3600).saturating_sub(all_time), || {
        ablation_order(&ablation)
    });
    println!("  (6 trained four variants on {} seeds in {:.0}s)", SEEDS.len(), all_time.as_secs_f64());

    match std::env::var("GTGIB_UCI_CSV") {
        Ok(path) => {
            report("7", "UCI stretch", false, Duration::from_secs(4 * 3600), || uci(&path));
        }
        Err(_) => println!("SKIP 7 UCI stretch: set GTGIB_UCI_CSV to a JODIE-format UCI file (reported, not gated)"),
    }
    ok &= report("8", "bitwise determinism", true, Duration::from_secs(600), determinism);

    if !ok {
        std::process::exit(1);
    }
}
