//! Aggregator ablation on branching assets:
//! `cargo run --release --example ablation -- [epochs] [aggregators] [seed] [lr] [tube|branching]`.

use std::time::Instant;

use rigskin::data::{precompute_all, Manifest};
use rigskin::graph::Aggregator;
use rigskin::model::SkinningNetConfig;
use rigskin::synth::{generate_synthetic, SyntheticKind, SyntheticRigSpec};
use rigskin::train::{train, TrainConfig};

fn main() -> rigskin::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(50, |s| s.parse().unwrap());
    let aggregators: Vec<Aggregator> = args.get(2).map_or("max,min,mean,std", |s| s.as_str()).split(',').map(|a| {
        serde_json::from_value(serde_json::Value::String(a.into())).expect("aggregator name")
    }).collect();
    let seed: u64 = args.get(3).map_or(0, |s| s.parse().unwrap());
    let lr: f64 = args.get(4).map_or(1e-3, |s| s.parse().unwrap());
    let spec = match args.get(5).map(String::as_str) {
        Some("tube") => SyntheticRigSpec::default(),
        _ => SyntheticRigSpec { count: 16, kind: SyntheticKind::Branching, seed: 11, ..SyntheticRigSpec::default() },
    };
    let t0 = Instant::now();
    let assets = generate_synthetic(&spec)?;
    let manifest = Manifest::from_names(assets.iter().map(|a| a.name.clone()).collect(), None);
    let mut cfg = TrainConfig {
        epochs,
        seed,
        learning_rate: lr,
        model: SkinningNetConfig { head_dropout: 0.0, ..SkinningNetConfig::default().scaled(0.25) },
        ..TrainConfig::default()
    };
    cfg.model.magc.aggregators = aggregators;
    let records = precompute_all(&assets, &cfg.precompute_config(), None, 1)?;
    let pick = |names: &[String]| records.iter().filter(|r| names.contains(&r.name)).cloned().collect::<Vec<_>>();
    train(&pick(&manifest.train), &pick(&manifest.val), &cfg, |r| {
        println!("{} {:.5} {:.5} {:.1}s", r.stats.epoch, r.stats.train_kl, r.stats.val_kl.unwrap_or(0.0), t0.elapsed().as_secs_f64());
        Ok(())
    })?;
    Ok(())
}
