//! Training loop: shuffled mini-batches realised as gradient accumulation over
//! independent per-asset forwards, RAdam updates, and best-validation
//! parameter tracking.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binding::GraphParams;
use crate::data::{degree_stats, PrecomputeConfig, Record};
use crate::error::{Error, Result};
use crate::geometry::voxel::DEFAULT_RESOLUTION;
use crate::graph::DegreeStats;
use crate::model::{ModelInput, SkinningNet, SkinningNetConfig};
use crate::nn::{Forward, ParamStore};
use crate::optim::{RAdam, RAdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: best and final only).
    pub checkpoint_every: usize,
    pub voxel_resolution: usize,
    pub graph: GraphParams,
    pub model: SkinningNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
            checkpoint_every: 0,
            voxel_resolution: DEFAULT_RESOLUTION,
            graph: GraphParams::default(),
            model: SkinningNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and weight decay non-negative (got {}, {})",
                self.learning_rate, self.weight_decay
            )));
        }
        self.model.validate()
    }

    pub fn precompute_config(&self) -> PrecomputeConfig {
        PrecomputeConfig {
            voxel_resolution: self.voxel_resolution,
            graph: self.graph,
            seed: self.seed,
            ..PrecomputeConfig::for_model(&self.model)
        }
    }

    pub fn optimizer(&self) -> RAdamConfig {
        RAdamConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..RAdamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean loss of the training forwards of this epoch (dropout active).
    pub train_kl: f64,
    pub val_kl: Option<f64>,
}

pub struct EpochReport<'a> {
    pub stats: EpochStats,
    pub net: &'a SkinningNet,
    pub params: &'a ParamStore,
    pub degree_stats: &'a DegreeStats,
    pub is_best: bool,
}

pub struct TrainOutcome {
    pub net: SkinningNet,
    /// Parameters of the best validation epoch (the last epoch without validation data).
    pub best: ParamStore,
    pub best_epoch: usize,
    pub last: ParamStore,
    pub degree_stats: DegreeStats,
    pub curve: Vec<EpochStats>,
}

/// A record ready for the network: plans built, targets shared.
pub struct Prepared {
    pub name: String,
    pub input: ModelInput,
    pub target: Arc<Vec<f64>>,
    pub mask: Arc<Vec<f64>>,
}

pub fn prepare(records: &[Record], model: &SkinningNetConfig, stats: &DegreeStats) -> Result<Vec<Prepared>> {
    records
        .iter()
        .map(|r| {
            let (Some(t), Some(m)) = (&r.target, &r.loss_mask) else {
                return Err(Error::Asset(format!("`{}` has no ground-truth weights", r.name)));
            };
            if !m.iter().any(|&x| x > 0.0) {
                return Err(Error::NoValidRows.in_asset(&r.name));
            }
            Ok(Prepared {
                name: r.name.clone(),
                input: r.model_input(model, stats)?,
                target: Arc::new(t.clone()),
                mask: Arc::new(m.clone()),
            })
        })
        .collect()
}

/// Loss of one asset in inference mode.
pub fn eval_loss(net: &SkinningNet, params: &ParamStore, item: &Prepared) -> Result<f64> {
    let mut fw = Forward::new(params, false, 0);
    let p = net.forward(&mut fw, &item.input)?;
    let l = fw.tape.kl_div(p, item.target.clone(), item.mask.clone())?;
    Ok(fw.tape.value(l)[0])
}

pub fn mean_eval_loss(net: &SkinningNet, params: &ParamStore, items: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        total += eval_loss(net, params, it)?;
    }
    Ok(total / items.len() as f64)
}

fn dropout_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32) ^ index as u64
}

/// One optimizer step over `batch`; returns the per-asset training losses.
pub fn train_step(
    net: &SkinningNet,
    params: &mut ParamStore,
    opt: &mut RAdam,
    batch: &[&Prepared],
    seeds: &[u64],
) -> Result<Vec<f64>> {
    params.zero_grad();
    let weight = 1.0 / batch.len() as f64;
    let mut losses = Vec::with_capacity(batch.len());
    for (item, &seed) in batch.iter().zip(seeds) {
        let grads = {
            let mut fw = Forward::new(params, true, seed);
            let p = net.forward(&mut fw, &item.input).map_err(|e| e.in_asset(&item.name))?;
            let l = fw.tape.kl_div(p, item.target.clone(), item.mask.clone())?;
            let value = fw.tape.value(l)[0];
            losses.push(value);
            if !value.is_finite() {
                return Ok(losses);
            }
            let g = fw.tape.backward(l)?;
            fw.param_grads(&g)
        };
        params.accumulate(&grads, weight)?;
    }
    opt.step(params)?;
    Ok(losses)
}

pub fn train(
    train: &[Record],
    val: &[Record],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let stats = degree_stats(train)?;
    let train_items = prepare(train, &cfg.model, &stats)?;
    let val_items = prepare(val, &cfg.model, &stats)?;
    let (net, mut params) = SkinningNet::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = RAdam::new(cfg.optimizer());

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_items[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| dropout_seed(cfg.seed, epoch, i)).collect();
            let losses = train_step(&net, &mut params, &mut opt, &batch, &seeds)?;
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    assets: batch.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", "),
                });
            }
            total += losses.iter().sum::<f64>();
        }
        let train_kl = total / train_items.len() as f64;
        let val_kl = if val_items.is_empty() { None } else { Some(mean_eval_loss(&net, &params, &val_items)?) };
        let stats_row = EpochStats { epoch, train_kl, val_kl };
        curve.push(stats_row);

        let score = val_kl.unwrap_or(f64::NEG_INFINITY);
        let is_best = best.as_ref().map_or(true, |(s, _, _)| score < *s || val_kl.is_none());
        if is_best {
            best = Some((score, epoch, params.clone()));
        }
        on_epoch(&EpochReport { stats: stats_row, net: &net, params: &params, degree_stats: &stats, is_best })?;
        log::info!("epoch {epoch}: train_kl {train_kl:.6} val_kl {}", val_kl.map_or("-".into(), |v| format!("{v:.6}")));
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { net, best, best_epoch, last: params, degree_stats: stats, curve })
}

/// Loss curve as CSV with an `epoch,train_kl,val_kl` header.
pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_kl,val_kl\n");
    for e in curve {
        let val = e.val_kl.map_or(String::new(), |v| v.to_string());
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_kl, val));
    }
    s
}
