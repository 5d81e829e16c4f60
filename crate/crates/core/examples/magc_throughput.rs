//! Times one MAGC forward + backward on a ring-like graph.
//!
//! cargo run --release -p rigskin-core --example magc_throughput -- 550 128 128

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigskin::graph::{DegreeStats, Graph, NeighbourhoodKind, NodeKind, StatsSource};
use rigskin::magc::{GraphPlans, Magc, MagcConfig};
use rigskin::nn::{Forward, ParamStore};
use rigskin::tensor::Tensor;

fn main() -> rigskin::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let (n, f, out) = (args.first().copied().unwrap_or(550), args.get(1).copied().unwrap_or(128), args.get(2).copied().unwrap_or(128));
    let kind = NeighbourhoodKind::MeshTopology;
    let mut g = Graph::new(vec![NodeKind::MeshVertex; n]);
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for k in [1u32, 2, 17] {
            let j = (i + k) % n as u32;
            edges.push((i, j));
            edges.push((j, i));
        }
    }
    g.set_edges(kind, edges)?;
    let stats = DegreeStats::new(StatsSource::Computed).with(kind, 6.0);
    let cfg = MagcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let layer = Magc::new(&mut store, "l", &cfg, kind, f, out, &mut rng)?;
    let plans = GraphPlans::build(&g, &[kind], &cfg, &stats)?;
    let x = Tensor::matrix(n, f, (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let reps = 5;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut fw = Forward::new(&store, true, 0);
        let xv = fw.tape.leaf(&x);
        let y = layer.forward_on(&mut fw, &plans, xv)?;
        let loss = fw.tape.sum(y);
        let grads = fw.tape.backward(loss)?;
        std::hint::black_box(fw.param_grads(&grads));
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let flops = 3.0 * 2.0 * (n * cfg.pre_mlp_width(f) * out) as f64;
    println!("n={n} f={f} out={out}: {:.1} ms per fwd+bwd, ~{:.1} GFLOP/s in the fused matmuls", dt * 1e3, flops / dt / 1e9);
    Ok(())
}
