//! Desk-scale run: `cargo run --release --example desk_run -- [lr] [epochs] [scale] [dropout]`.

use std::time::Instant;

use rigskin::data::{precompute_all, Manifest};
use rigskin::model::SkinningNetConfig;
use rigskin::pipeline::{evaluate, predict_weights};
use rigskin::synth::{generate_synthetic, SyntheticRigSpec};
use rigskin::train::{train, TrainConfig};

fn main() -> rigskin::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(1e-4, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(50, |s| s.parse().unwrap());
    let scale: f64 = args.get(3).map_or(0.25, |s| s.parse().unwrap());
    let dropout: f64 = args.get(4).map_or(0.5, |s| s.parse().unwrap());
    let t0 = Instant::now();
    let assets = generate_synthetic(&SyntheticRigSpec::default())?;
    let manifest = Manifest::from_names(assets.iter().map(|a| a.name.clone()).collect(), None);
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        model: SkinningNetConfig { head_dropout: dropout, ..SkinningNetConfig::default().scaled(scale) },
        ..TrainConfig::default()
    };
    let records = precompute_all(&assets, &cfg.precompute_config(), None, 1)?;
    let pick = |names: &[String]| records.iter().filter(|r| names.contains(&r.name)).cloned().collect::<Vec<_>>();
    let (tr, va, te) = (pick(&manifest.train), pick(&manifest.val), pick(&manifest.test));
    println!("precompute {:.1}s", t0.elapsed().as_secs_f64());
    let out = train(&tr, &va, &cfg, |r| {
        println!("{} {:.5} {:.5} {:.1}s", r.stats.epoch, r.stats.train_kl, r.stats.val_kl.unwrap_or(0.0), t0.elapsed().as_secs_f64());
        Ok(())
    })?;
    for (name, params) in [("best", &out.best), ("last", &out.last)] {
        let mut defs = Vec::new();
        for r in &te {
            let a = assets.iter().find(|a| a.name == r.name).unwrap();
            let w = predict_weights(&out.net, params, &out.degree_stats, r, a.skeleton.joints.len())?;
            defs.push((evaluate(&w, a, 10, 10.0, 3)?, a.mesh.vertices.len()));
        }
        println!("{name}: {:?}", rigskin::animation::Metrics::combine(&defs));
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
