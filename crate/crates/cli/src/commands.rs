use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use gtgib_core::backbone::Memory;
use gtgib_core::config::RunConfig;
use gtgib_core::enhancer::{verify_hit_bound, HitBoundConfig};
use gtgib_core::exec::{init_threads, Execution};
use gtgib_core::graph::{read_jodie_csv, write_jodie_csv, write_remap_csv, TemporalGraph};
use gtgib_core::synth::generate_synthetic;
use gtgib_core::theory::verify_all;
use gtgib_core::train::{run_ablation, Trainer, Variant};
use serde_json::json;

use crate::output::{write_manifest, write_text, write_with};
use crate::{ChecksFailed, RunFlags};

const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT: &str = "params.ckpt";
const MEMORY: &str = "memory.bin";

fn resolve(flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_env()?,
    };
    if let Some(s) = flags.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(a) = flags.alpha {
        cfg.loss.alpha = a;
    }
    if let Some(b) = flags.beta {
        cfg.loss.beta = b;
    }
    if let Some(k) = flags.k_rand {
        cfg.enhancer.k_rand = k;
    }
    if let Some(h) = &flags.hop_counts {
        cfg.enhancer.hop_counts = h.clone();
    }
    if let Some(f) = flags.inductive_frac {
        cfg.split.inductive_fraction = f;
    }
    if let Some(o) = &flags.out {
        cfg.output.dir = o.clone();
    }
    if let Some(t) = flags.threads {
        cfg.train.threads = t;
    }
    cfg.validate()?;
    init_threads(cfg.train.threads);
    Ok(cfg)
}

fn load_graph(cfg: &RunConfig) -> Result<TemporalGraph> {
    Ok(match &cfg.data.path {
        Some(p) => read_jodie_csv(p, cfg.data.bipartite)?,
        None => generate_synthetic(&cfg.synthetic)?.0,
    })
}

pub fn ingest(input: &Path, bipartite: bool, out: &Path) -> Result<()> {
    let g = read_jodie_csv(input, bipartite)?;
    std::fs::create_dir_all(out)?;
    write_jodie_csv(&g, &out.join("events.csv"))?;
    write_remap_csv(&g, &out.join("remap.csv"))?;
    let summary = json!({
        "events": g.n_events(),
        "nodes": g.n_nodes(),
        "edge_features": g.dim_edge(),
        "self_loops": g.self_loops(),
        "max_time": g.max_time(),
    });
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("{summary}");
    Ok(())
}

pub fn train(flags: &RunFlags) -> Result<()> {
    let cfg = resolve(flags)?;
    let g = load_graph(&cfg)?;
    let dir = cfg.output.dir.clone();
    let mut trainer = Trainer::new(&g, cfg.experiment())?;
    let fit = trainer.fit()?;

    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string()?)?;
    write_text(&dir.join("metrics.json"), &fit.report.to_json()?)?;
    write_with(&dir.join("metrics.csv"), |w| fit.report.write_csv(w))?;
    write_with(&dir.join(CHECKPOINT), |w| fit.store.write_checkpoint(w))?;
    write_with(&dir.join(MEMORY), |w| fit.memory.write_snapshot(w))?;
    write_manifest(
        &dir,
        "train",
        &cfg.hash()?,
        cfg.train.seed,
        cfg.train.threads,
        &[CONFIG_FILE, "metrics.json", CHECKPOINT, MEMORY],
    )?;
    match fit.report.best() {
        Some(b) => println!(
            "best epoch {}: test AP transductive {} inductive {}",
            b.epoch,
            fmt_ap(b.ap_test_trans),
            fmt_ap(b.ap_test_ind)
        ),
        None => println!("no validation AP available"),
    }
    Ok(())
}

fn fmt_ap(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn eval(run: &Path, threads: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(run.join(CONFIG_FILE))
        .with_context(|| format!("reading {}", run.join(CONFIG_FILE).display()))?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    if let Some(t) = threads {
        cfg.train.threads = t;
    }
    cfg.validate()?;
    init_threads(cfg.train.threads);
    let g = load_graph(&cfg)?;
    let mut trainer = Trainer::new(&g, cfg.experiment())?;
    let ckpt = run.join(CHECKPOINT);
    let file = File::open(&ckpt).with_context(|| format!("opening {}", ckpt.display()))?;
    trainer.store.load_checkpoint(BufReader::new(file))?;
    let mem = run.join(MEMORY);
    let file = File::open(&mem).with_context(|| format!("opening {}", mem.display()))?;
    let memory = Memory::read_snapshot(BufReader::new(file))?;
    let summary = trainer.evaluate_all(&trainer.store, &memory)?;
    let text = serde_json::to_string_pretty(&summary)?;
    write_text(&run.join("eval.json"), &text)?;
    println!("{text}");
    Ok(())
}

pub fn ablate(flags: &RunFlags, variants: Option<&[String]>, seeds: usize) -> Result<()> {
    let cfg = resolve(flags)?;
    let variants: Vec<Variant> = match variants {
        Some(v) => v.iter().map(|s| s.trim().parse()).collect::<gtgib_core::Result<_>>()?,
        None => Variant::ALL.to_vec(),
    };
    if seeds == 0 {
        return Err(gtgib_core::Error::InvalidArgument("at least one seed is required".into()).into());
    }
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| cfg.train.seed + i).collect();
    let g = load_graph(&cfg)?;
    let report = run_ablation(&g, &cfg.experiment(), &variants, &seed_list)?;
    let dir = &cfg.output.dir;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string()?)?;
    write_with(&dir.join("ablation.csv"), |w| report.write_csv(w))?;
    write_text(&dir.join("ablation.json"), &serde_json::to_string_pretty(&report)?)?;
    write_manifest(dir, "ablate", &cfg.hash()?, cfg.train.seed, cfg.train.threads, &[CONFIG_FILE, "ablation.csv"])?;
    let mut stdout = std::io::stdout().lock();
    report.write_csv(&mut stdout)?;
    Ok(())
}

pub fn verify(instances: usize, seed: u64, threads: usize, out: Option<&Path>) -> Result<()> {
    init_threads(threads);
    let report = verify_all(instances, seed, Execution::from_threads(threads))?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        write_text(&dir.join("verify.json"), &text)?;
    }
    println!("{text}");
    if report.failures > 0 {
        return Err(ChecksFailed(format!("{} theory check failures", report.failures)).into());
    }
    Ok(())
}

pub fn enhance_verify(trials: usize, seed: u64, threads: usize, out: Option<&Path>) -> Result<()> {
    init_threads(threads);
    let cfg = HitBoundConfig { trials, seed, ..Default::default() };
    let report = verify_hit_bound(&cfg, Execution::from_threads(threads))?;
    if let Some(dir) = out {
        write_with(&dir.join("hit_bound.csv"), |w| report.write_csv(w))?;
    }
    let mut stdout = std::io::stdout().lock();
    report.write_csv(&mut stdout)?;
    eprintln!("c = {:.6}, k* = {:?}", report.c, report.k_star);
    if !report.all_hold() {
        return Err(ChecksFailed("hit-probability bound violated".into()).into());
    }
    Ok(())
}

pub fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_env()?,
    };
    if let Some(s) = seed {
        cfg.synthetic.seed = s;
    }
    let (g, truth) = generate_synthetic(&cfg.synthetic)?;
    std::fs::create_dir_all(out)?;
    write_jodie_csv(&g, &out.join("events.csv"))?;
    write_remap_csv(&g, &out.join("remap.csv"))?;
    write_with(&out.join("truth.csv"), |w| truth.write_csv(w))?;
    println!("{} events over {} nodes written to {}", g.n_events(), g.n_nodes(), out.display());
    Ok(())
}
