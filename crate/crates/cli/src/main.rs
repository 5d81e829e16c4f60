mod args;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Serialize;

use args::{BindArgs, Cli, Command, DeformArgs, EvalArgs, Kind, ModelFlags, PredictArgs, Split, SynthArgs, TrainArgs};
use rigskin::animation::{forward_kinematics, lbs_deform, sample_poses, Metrics};
use rigskin::binding::bind;
use rigskin::checkpoint::Checkpoint;
use rigskin::data::{self, load_assets, precompute, precompute_all, read_manifest, Cache, Manifest, Record};
use rigskin::geometry::io::{load_asset, write_obj, write_text};
use rigskin::geometry::{normalize, Mesh, RigAsset, SkinWeights};
use rigskin::graph::DegreeStats;
use rigskin::nn::ParamStore;
use rigskin::pipeline::{evaluate, parse_prediction_json, predict_weights, write_dense, write_prediction_json};
use rigskin::synth::{generate_synthetic, SyntheticKind, SyntheticRigSpec};
use rigskin::train::{curve_csv, train, TrainConfig};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes a parent message already quotes.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let jobs = if cli.jobs == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cli.jobs };
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Bind(a) => bind_cmd(a, cli.seed, jobs),
        Command::Train(a) => train_cmd(a, cli.seed, jobs),
        Command::Predict(a) => predict_cmd(a, jobs),
        Command::Deform(a) => deform(a, cli.seed.unwrap_or(0)),
        Command::Eval(a) => eval(a, cli.seed.unwrap_or(0)),
        Command::Config(a) => {
            let cfg = effective_config(&a.model, cli.seed)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn effective_config(flags: &ModelFlags, seed: Option<u64>) -> Result<TrainConfig> {
    let base = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    let mut cfg = flags.apply(base);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let kind = match a.kind {
        Kind::Tube => SyntheticKind::Tube,
        Kind::Branching => SyntheticKind::Branching,
    };
    let defaults = SyntheticRigSpec::default();
    let spec = SyntheticRigSpec { count: a.n, kind, seed: seed.unwrap_or(defaults.seed), ..defaults };
    let assets = generate_synthetic(&spec)?;
    let m = data::write_dataset(&a.out, &assets, Some(spec))?;
    println!("{} assets in {} ({} train, {} val, {} test)", assets.len(), a.out.display(), m.train.len(), m.val.len(), m.test.len());
    Ok(())
}

fn cache_for(data: &Path) -> Cache {
    Cache::from_env_or(data.join(".cache"))
}

fn split_names(m: &Manifest, split: Split) -> Vec<String> {
    match split {
        Split::Train => m.train.clone(),
        Split::Val => m.val.clone(),
        Split::Test => m.test.clone(),
        Split::All => m.all().cloned().collect(),
    }
}

fn bind_cmd(a: &BindArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    let cfg = effective_config(&a.model, seed)?;
    let pc = cfg.precompute_config();
    if let Some(dir) = &a.data {
        let m = read_manifest(dir)?;
        let assets = load_assets(dir, &m.all().cloned().collect::<Vec<_>>())?;
        let cache = cache_for(dir);
        let hits = assets
            .iter()
            .filter(|x| cache.load(&data::cache_key(x, &pc)).is_some())
            .count();
        precompute_all(&assets, &pc, Some(&cache), jobs)?;
        println!("{} records in {} ({hits} already cached)", assets.len(), cache.dir.display());
        return Ok(());
    }
    let (mesh, rig, out) = (a.mesh.as_ref().unwrap(), a.rig.as_ref().unwrap(), a.out.as_ref().unwrap());
    let asset = normalize(&load_asset(mesh, rig)?)?;
    let table = bind(&asset, pc.k, pc.binding_mode)?;
    let rows: Vec<Vec<Option<&str>>> = (0..table.vertex_count())
        .map(|v| {
            table
                .row(v)
                .iter()
                .map(|s| s.valid.then(|| asset.skeleton.joints[s.joint].name.as_str()))
                .collect()
        })
        .collect();
    #[derive(Serialize)]
    struct TableJson<'a> {
        k: usize,
        mode: String,
        slots: Vec<Vec<Option<&'a str>>>,
    }
    let json = TableJson { k: table.k, mode: table.mode.to_string(), slots: rows };
    write_text(out, &(serde_json::to_string_pretty(&json)? + "\n"))?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg = effective_config(&a.model, seed)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(wd) = a.weight_decay {
        cfg.weight_decay = wd;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    cfg.validate()?;

    let m = read_manifest(&a.data)?;
    let pc = cfg.precompute_config();
    let cache = (!a.no_cache).then(|| cache_for(&a.data));
    let load = |names: &[String]| -> Result<_> {
        let assets = load_assets(&a.data, names)?;
        Ok(precompute_all(&assets, &pc, cache.as_ref(), jobs)?)
    };
    let (train_recs, val_recs) = (load(&m.train)?, load(&m.val)?);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_text(&a.out.join("config.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;

    let checkpoint = |params: &ParamStore, stats: &DegreeStats, epoch| Checkpoint {
        model: cfg.model.clone(),
        precompute: pc.clone(),
        stats: stats.clone(),
        epoch,
        params: params.clone(),
    };
    let mut curve = Vec::new();
    let out = train(&train_recs, &val_recs, &cfg, |r| {
        curve.push(r.stats);
        write_text(&a.out.join("curve.csv"), &curve_csv(&curve))?;
        if r.is_best {
            checkpoint(r.params, r.degree_stats, r.stats.epoch).save(&a.out.join("best.ckpt"))?;
        }
        if cfg.checkpoint_every > 0 && r.stats.epoch % cfg.checkpoint_every == 0 {
            let path = a.out.join(format!("epoch{:04}.ckpt", r.stats.epoch));
            checkpoint(r.params, r.degree_stats, r.stats.epoch).save(&path)?;
        }
        eprintln!(
            "epoch {:>4}  train_kl {:.6}  val_kl {}",
            r.stats.epoch,
            r.stats.train_kl,
            r.stats.val_kl.map_or("-".into(), |v| format!("{v:.6}"))
        );
        Ok(())
    })?;
    checkpoint(&out.last, &out.degree_stats, cfg.epochs).save(&a.out.join("last.ckpt"))?;
    println!("best epoch {} -> {}", out.best_epoch, a.out.join("best.ckpt").display());
    Ok(())
}

fn write_prediction(out: &Path, asset: &RigAsset, record: &Record, w: &SkinWeights, dense: bool) -> Result<()> {
    write_text(out, &(write_prediction_json(&asset.skeleton, &record.table, w) + "\n"))?;
    if dense {
        let path = out.with_extension("bin");
        fs::write(&path, write_dense(w)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn predict_cmd(a: &PredictArgs, jobs: usize) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let (net, params) = ckpt.instantiate()?;
    let Some(dir) = &a.data else {
        let asset = normalize(&load_asset(a.mesh.as_ref().unwrap(), a.rig.as_ref().unwrap())?)?;
        let record = precompute(&asset, &ckpt.precompute)?;
        let w = predict_weights(&net, &params, &ckpt.stats, &record, asset.skeleton.joints.len())?;
        return write_prediction(&a.out, &asset, &record, &w, a.dense);
    };
    let names = split_names(&read_manifest(dir)?, a.split);
    let assets = load_assets(dir, &names)?;
    let records = precompute_all(&assets, &ckpt.precompute, Some(&cache_for(dir)), jobs)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (asset, record) in assets.iter().zip(&records) {
        let w = predict_weights(&net, &params, &ckpt.stats, record, asset.skeleton.joints.len())?;
        write_prediction(&a.out.join(format!("{}.json", asset.name)), asset, record, &w, a.dense)?;
    }
    println!("{} predictions in {}", assets.len(), a.out.display());
    Ok(())
}

fn read_prediction(path: &Path, asset: &RigAsset) -> Result<SkinWeights> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_prediction_json(&text, &path.display().to_string(), &asset.skeleton, asset.mesh.vertices.len())?)
}

fn deform(a: &DeformArgs, seed: u64) -> Result<()> {
    let asset = load_asset(&a.mesh, &a.rig)?;
    let weights = match &a.weights {
        Some(p) => read_prediction(p, &asset)?,
        None => asset.weights.clone().context("the rig has no weights; pass --weights")?,
    };
    let poses = sample_poses(&asset.skeleton, a.poses, a.range, seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, pose) in poses.iter().enumerate() {
        let m = forward_kinematics(&asset.skeleton, pose)?;
        let vertices = lbs_deform(&asset.mesh.vertices, &weights, &m)?;
        let posed = Mesh { vertices, faces: asset.mesh.faces.clone() };
        write_text(&a.out.join(format!("pose{i:03}.obj")), &write_obj(&posed))?;
    }
    println!("{} posed meshes in {}", poses.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct Report {
    precision: f64,
    recall: f64,
    avg_l1: f64,
    avg_def: f64,
    max_def: f64,
    per_asset: BTreeMap<String, Metrics>,
}

fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let mut pairs: Vec<(RigAsset, PathBuf)> = Vec::new();
    if let Some(dir) = &a.data {
        let names = split_names(&read_manifest(dir)?, a.split);
        for asset in load_assets(dir, &names)? {
            let p = a.pred.join(format!("{}.json", asset.name));
            pairs.push((asset, p));
        }
    } else {
        let rig = a.gt.as_ref().unwrap();
        let mesh = a.mesh.clone().unwrap_or_else(|| rig.with_extension("obj"));
        let asset = normalize(&load_asset(&mesh, rig)?)?;
        pairs.push((asset, a.pred.clone()));
    }
    if pairs.is_empty() {
        bail!("nothing to evaluate");
    }
    let mut parts = Vec::new();
    let mut per_asset = BTreeMap::new();
    for (asset, pred) in &pairs {
        let w = read_prediction(pred, asset)?;
        let m = evaluate(&w, asset, a.poses, a.range, seed)?;
        parts.push((m, asset.mesh.vertices.len()));
        per_asset.insert(asset.name.clone(), m);
    }
    let t = Metrics::combine(&parts).context("no vertices to evaluate")?;
    let report = Report {
        precision: t.precision,
        recall: t.recall,
        avg_l1: t.avg_l1,
        avg_def: t.avg_def,
        max_def: t.max_def,
        per_asset,
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
