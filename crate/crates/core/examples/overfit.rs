//! Single-asset overfit probe: `overfit [lr] [steps] [scale] [dropout]`.

use rigskin::data::{degree_stats, precompute_all};
use rigskin::model::SkinningNetConfig;
use rigskin::nn::{Forward, ParamStore};
use rigskin::optim::RAdam;
use rigskin::synth::{generate_synthetic, SyntheticRigSpec};
use rigskin::train::{eval_loss, prepare, train_step, TrainConfig};

fn main() -> rigskin::Result<()> {
    let a: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| a.get(i).map_or(d, |s| s.parse().unwrap());
    let (lr, steps, scale, dropout) = (arg(1, 1e-3), arg(2, 300.0) as usize, arg(3, 0.25), arg(4, 0.5));
    let assets = generate_synthetic(&SyntheticRigSpec { count: 1, ..SyntheticRigSpec::default() })?;
    let mut model = SkinningNetConfig::default().scaled(scale);
    model.head_dropout = dropout;
    let cfg = TrainConfig { learning_rate: lr, model, ..TrainConfig::default() };
    let recs = precompute_all(&assets, &cfg.precompute_config(), None, 1)?;
    let stats = degree_stats(&recs)?;
    let items = prepare(&recs, &cfg.model, &stats)?;
    let (net, mut params): (_, ParamStore) = rigskin::model::SkinningNet::new(cfg.model.clone(), 0)?;
    {
        let mut fw = Forward::new(&params, false, 0);
        let l = net.logits(&mut fw, &items[0].input)?;
        let t = fw.tape.tensor(l);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let sd = (t.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        println!("logit mean {m:.4} sd {sd:.4}");
    }
    let mut opt = RAdam::new(cfg.optimizer());
    for s in 0..steps {
        let l = train_step(&net, &mut params, &mut opt, &[&items[0]], &[s as u64])?;
        if s % 25 == 0 || s + 1 == steps {
            println!("{s} train {:.5} eval {:.5}", l[0], eval_loss(&net, &params, &items[0])?);
        }
    }
    Ok(())
}
