//! Central finite differences against the tape's reverse sweep.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigskin::nn::{Forward, ParamId, ParamStore};
use rigskin::tensor::{Tensor, Var};

pub type LossFn<'f> = dyn for<'a> Fn(&mut Forward<'a>, &[Var]) -> rigskin::Result<Var> + 'f;

const EPS: f64 = 1e-6;

/// `Σ y ⊙ r` for a fixed random `r`, so every output entry reaches the loss
/// with a distinct weight.
pub fn project(fw: &mut Forward<'_>, y: Var, seed: u64) -> rigskin::Result<Var> {
    let n = fw.tape.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z = fw.tape.mul_const(y, Arc::new(r))?;
    Ok(fw.tape.sum(z))
}

fn eval(store: &ParamStore, inputs: &[Tensor], training: bool, seed: u64, f: &LossFn) -> f64 {
    let mut fw = Forward::new(store, training, seed);
    let vars: Vec<Var> = inputs.iter().map(|t| fw.tape.leaf(t)).collect();
    let l = f(&mut fw, &vars).expect("forward");
    fw.tape.value(l)[0]
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over the checked entries of one tensor.
fn relative(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn entries(len: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if samples == 0 || len <= samples {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, samples).into_vec();
        v.sort_unstable();
        v
    }
}

/// Worst per-tensor relative error over every parameter and input; with
/// `samples > 0` at most that many entries of each tensor are probed.
pub fn grad_check(store: &ParamStore, inputs: &[Tensor], training: bool, seed: u64, samples: usize, f: &LossFn) -> f64 {
    let inputs: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let (param_grads, input_grads) = {
        let mut fw = Forward::new(store, training, seed);
        let vars: Vec<Var> = inputs.iter().map(|t| fw.tape.leaf(t)).collect();
        let l = f(&mut fw, &vars).expect("forward");
        let g = fw.tape.backward(l).expect("backward");
        let ig: Vec<Vec<f64>> = vars.iter().map(|&v| g.get(v).map_or_else(Vec::new, <[f64]>::to_vec)).collect();
        (fw.param_grads(&g), ig)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut worst = 0.0f64;

    let mut work = store.clone();
    for (i, grad) in param_grads.iter().enumerate() {
        let id = ParamId(i);
        let len = store.get(id).len();
        let idx = entries(len, samples, &mut rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &e in &idx {
            let orig = store.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + EPS;
            let up = eval(&work, &inputs, training, seed, f);
            work.get_mut(id).data_mut()[e] = orig - EPS;
            let down = eval(&work, &inputs, training, seed, f);
            work.get_mut(id).data_mut()[e] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        let analytic: Vec<f64> = idx.iter().map(|&e| grad.as_ref().map_or(0.0, |g| g[e])).collect();
        let r = relative(&analytic, &numeric);
        worst = worst.max(r);
    }

    for (k, grad) in input_grads.iter().enumerate() {
        let idx = entries(inputs[k].len(), samples, &mut rng);
        let mut perturbed = inputs.clone();
        let mut numeric = Vec::with_capacity(idx.len());
        for &e in &idx {
            let orig = inputs[k].data()[e];
            perturbed[k].data_mut()[e] = orig + EPS;
            let up = eval(store, &perturbed, training, seed, f);
            perturbed[k].data_mut()[e] = orig - EPS;
            let down = eval(store, &perturbed, training, seed, f);
            perturbed[k].data_mut()[e] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        let analytic: Vec<f64> = idx.iter().map(|&e| grad.get(e).copied().unwrap_or(0.0)).collect();
        worst = worst.max(relative(&analytic, &numeric));
    }
    worst
}
