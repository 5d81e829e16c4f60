//! The two-stream skinning network.
//!
//! Stage 2 runs a mesh stream (input MLP + residual MAGC blocks) and a
//! skeleton stream (input MLP + MAGC layers). Stage 3 joins them with one
//! MAGC over the binding graph, with a type tag column, and appends pooled
//! global descriptors of both streams. Stage 4 applies multi-neighbourhood
//! convolutions over the mesh and a small head whose masked softmax gives the
//! per-slot weights.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binding::{mesh_feature_width, AssetGraphs, BindingMode, BindingTable, DistanceMode, DEFAULT_K};
use crate::error::{Error, Result};
use crate::graph::{DegreeStats, NeighbourhoodKind};
use crate::magc::{GraphPlans, Magc, MagcConfig};
use crate::nn::{Forward, Linear, Mlp, MlpSpec, ParamStore};
use crate::tensor::{Pool, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinningNetConfig {
    pub k: usize,
    pub mesh_input: Vec<usize>,
    pub mesh_widths: Vec<usize>,
    pub skel_input: Vec<usize>,
    pub skel_widths: Vec<usize>,
    pub mesh_skel_width: usize,
    pub global_width: usize,
    pub skinning_widths: Vec<usize>,
    /// Hidden widths of the head; the output width is `k`.
    pub head_hidden: Vec<usize>,
    pub head_dropout: f64,
    pub use_global_shape: bool,
    pub use_residual: bool,
    pub use_munegc: bool,
    pub global_pooling: Pool,
    pub binding_mode: BindingMode,
    pub distance_mode: DistanceMode,
    pub magc: MagcConfig,
}

impl Default for SkinningNetConfig {
    fn default() -> Self {
        SkinningNetConfig {
            k: DEFAULT_K,
            mesh_input: vec![64, 128],
            mesh_widths: vec![128, 256, 512],
            skel_input: vec![64],
            skel_widths: vec![128, 256, 512],
            mesh_skel_width: 512,
            global_width: 256,
            skinning_widths: vec![256, 128, 64],
            head_hidden: vec![64, 32],
            head_dropout: 0.5,
            use_global_shape: true,
            use_residual: true,
            use_munegc: true,
            global_pooling: Pool::Max,
            binding_mode: BindingMode::Joint,
            distance_mode: DistanceMode::Geodesic,
            magc: MagcConfig::default(),
        }
    }
}

impl SkinningNetConfig {
    /// Every layer width multiplied by `factor` (rounded, at least 1); `k` is kept.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |w: usize| ((w as f64 * factor).round() as usize).max(1);
        let sv = |v: &[usize]| v.iter().map(|&w| s(w)).collect();
        SkinningNetConfig {
            mesh_input: sv(&self.mesh_input),
            mesh_widths: sv(&self.mesh_widths),
            skel_input: sv(&self.skel_input),
            skel_widths: sv(&self.skel_widths),
            mesh_skel_width: s(self.mesh_skel_width),
            global_width: s(self.global_width),
            skinning_widths: sv(&self.skinning_widths),
            head_hidden: sv(&self.head_hidden),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("mesh_input", &self.mesh_input),
            ("mesh_widths", &self.mesh_widths),
            ("skel_input", &self.skel_input),
            ("skel_widths", &self.skel_widths),
            ("skinning_widths", &self.skinning_widths),
        ];
        for (name, v) in lists {
            if v.is_empty() || v.contains(&0) {
                return Err(Error::Config(format!("{name} must be a non-empty list of positive widths, got {v:?}")));
            }
        }
        if self.k == 0 || self.mesh_skel_width == 0 || self.global_width == 0 || self.head_hidden.contains(&0) {
            return Err(Error::Config("k and all widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config(format!("head dropout {} must lie in [0,1)", self.head_dropout)));
        }
        self.magc.clone().normalized()?;
        Ok(())
    }

    pub fn mesh_kinds(&self) -> Vec<NeighbourhoodKind> {
        if self.use_munegc {
            vec![NeighbourhoodKind::MeshTopology, NeighbourhoodKind::MeshRadius]
        } else {
            vec![NeighbourhoodKind::MeshTopology]
        }
    }

    fn concat_width(&self) -> usize {
        self.mesh_skel_width + if self.use_global_shape { 2 * self.global_width } else { 0 }
    }
}

/// Two stacked MAGCs at the block width plus a shortcut (identity when the
/// widths agree, a learned linear map otherwise).
#[derive(Debug, Clone)]
pub struct ResidualMagc {
    pub first: Magc,
    pub second: Magc,
    pub projection: Option<Linear>,
    pub use_residual: bool,
}

impl ResidualMagc {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &MagcConfig,
        kind: NeighbourhoodKind,
        in_width: usize,
        out_width: usize,
        use_residual: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let first = Magc::new(store, &format!("{name}.magc0"), cfg, kind, in_width, out_width, rng)?;
        let second = Magc::new(store, &format!("{name}.magc1"), cfg, kind, out_width, out_width, rng)?;
        let projection = if use_residual && in_width != out_width {
            Some(Linear::new(store, &format!("{name}.proj"), in_width, out_width, rng)?)
        } else {
            None
        };
        Ok(ResidualMagc { first, second, projection, use_residual })
    }

    pub fn forward(&self, fw: &mut Forward<'_>, plans: &GraphPlans, x: Var) -> Result<Var> {
        let h = self.first.forward_on(fw, plans, x)?;
        let h = self.second.forward_on(fw, plans, h)?;
        if !self.use_residual {
            return Ok(h);
        }
        let skip = match &self.projection {
            Some(p) => p.forward(fw, x)?,
            None => x,
        };
        fw.tape.add(h, skip)
    }
}

/// MAGC over the joined vertex + joint graph; each row is prefixed by a tag,
/// 0 for vertices and 1 for joints.
#[derive(Debug, Clone)]
pub struct MeshSkelMagc {
    pub magc: Magc,
}

impl MeshSkelMagc {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &MagcConfig, in_width: usize, out_width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let magc = Magc::new(store, name, cfg, NeighbourhoodKind::Binding, in_width + 1, out_width, rng)?;
        Ok(MeshSkelMagc { magc })
    }

    /// Output over all `V + J` nodes.
    pub fn forward(&self, fw: &mut Forward<'_>, plans: &GraphPlans, mesh: Var, skel: Var) -> Result<Var> {
        self.forward_tagged(fw, plans, mesh, skel, (0.0, 1.0))
    }

    pub fn forward_tagged(&self, fw: &mut Forward<'_>, plans: &GraphPlans, mesh: Var, skel: Var, tags: (f64, f64)) -> Result<Var> {
        let (v, j) = (fw.tape.shape(mesh)[0], fw.tape.shape(skel)[0]);
        let plan = plans.get(NeighbourhoodKind::Binding)?.clone();
        if plan.node_count() != v + j {
            return Err(Error::shape(
                "mesh_skel_magc",
                format!("{v} vertices + {j} joints for a binding graph of {} nodes", plan.node_count()),
            ));
        }
        let nodes = fw.tape.concat_rows(&[mesh, skel])?;
        let mut tag = vec![tags.0; v];
        tag.resize(v + j, tags.1);
        let tag = fw.tape.constant(vec![v + j, 1], tag)?;
        let x = fw.tape.concat_cols(&[tag, nodes])?;
        self.magc.forward(fw, &plan, x)
    }
}

/// One MAGC per neighbourhood kind, concatenated and fused by a linear layer
/// with ReLU. With a single kind it is a plain MAGC.
#[derive(Debug, Clone)]
pub struct Munegc {
    pub inner: Vec<Magc>,
    pub outer: Option<Linear>,
}

impl Munegc {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &MagcConfig,
        kinds: &[NeighbourhoodKind],
        in_width: usize,
        out_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let inner = kinds
            .iter()
            .map(|&k| Magc::new(store, &format!("{name}.{k}"), cfg, k, in_width, out_width, rng))
            .collect::<Result<Vec<_>>>()?;
        let outer = if kinds.len() > 1 {
            Some(Linear::new(store, &format!("{name}.outer"), kinds.len() * out_width, out_width, rng)?)
        } else {
            None
        };
        Ok(Munegc { inner, outer })
    }

    /// Per-kind outputs before the outer fusion.
    pub fn inner_outputs(&self, fw: &mut Forward<'_>, plans: &GraphPlans, x: Var) -> Result<Vec<Var>> {
        self.inner.iter().map(|m| m.forward_on(fw, plans, x)).collect()
    }

    pub fn forward(&self, fw: &mut Forward<'_>, plans: &GraphPlans, x: Var) -> Result<Var> {
        let parts = self.inner_outputs(fw, plans, x)?;
        match &self.outer {
            None => Ok(parts[0]),
            Some(outer) => {
                let cat = fw.tape.concat_cols(&parts)?;
                let y = outer.forward(fw, cat)?;
                Ok(fw.tape.relu(y))
            }
        }
    }
}

/// Pooled node features through an MLP, `[N,F] -> [1,W]`.
#[derive(Debug, Clone)]
pub struct GlobalShape {
    pub mlp: Mlp,
    pub pooling: Pool,
}

impl GlobalShape {
    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        if fw.tape.shape(x)[0] == 0 {
            return Err(Error::Graph("global shape of an empty graph".into()));
        }
        let pooled = fw.tape.pool_rows(x, self.pooling)?;
        self.mlp.forward(fw, pooled)
    }
}

/// Everything one forward pass needs for a single asset.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub mesh_features: Tensor,
    pub skel_features: Tensor,
    pub mesh_plans: GraphPlans,
    pub skel_plans: GraphPlans,
    pub binding_plans: GraphPlans,
    pub slot_mask: Arc<Vec<bool>>,
}

impl ModelInput {
    pub fn new(
        graphs: &AssetGraphs,
        mesh_features: Tensor,
        skel_features: Tensor,
        table: &BindingTable,
        cfg: &SkinningNetConfig,
        stats: &DegreeStats,
    ) -> Result<Self> {
        let (v, j) = (graphs.mesh.node_count, graphs.skeleton.node_count);
        if mesh_features.shape() != [v, mesh_feature_width(cfg.k)] || skel_features.shape() != [j, 3] {
            return Err(Error::shape(
                "skinningnet_forward",
                format!(
                    "attributes {:?} / {:?} for {v} vertices, {j} joints, k={}",
                    mesh_features.shape(),
                    skel_features.shape(),
                    cfg.k
                ),
            ));
        }
        if table.k != cfg.k || table.vertex_count() != v || graphs.mesh_skel.node_count != v + j {
            return Err(Error::Config(format!("binding table (k={}) does not match the model (k={})", table.k, cfg.k)));
        }
        let magc = cfg.magc.clone().normalized()?;
        Ok(ModelInput {
            mesh_features,
            skel_features,
            mesh_plans: GraphPlans::build(&graphs.mesh, &cfg.mesh_kinds(), &magc, stats)?,
            skel_plans: GraphPlans::build(&graphs.skeleton, &[NeighbourhoodKind::SkeletonTopology], &magc, stats)?,
            binding_plans: GraphPlans::build(&graphs.mesh_skel, &[NeighbourhoodKind::Binding], &magc, stats)?,
            slot_mask: Arc::new(table.valid_mask()),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh_features.rows()
    }
}

/// One line of the architecture audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub section: &'static str,
    pub layer: &'static str,
    pub filters: String,
    pub params: usize,
    pub tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct SkinningNet {
    pub config: SkinningNetConfig,
    pub mesh_input: Mlp,
    pub mesh_blocks: Vec<ResidualMagc>,
    pub skel_input: Mlp,
    pub skel_blocks: Vec<Magc>,
    pub mesh_skel: MeshSkelMagc,
    pub global_mesh: Option<GlobalShape>,
    pub global_skel: Option<GlobalShape>,
    pub skinning: Vec<Munegc>,
    pub head: Mlp,
}

impl SkinningNet {
    /// Builds the layers and a freshly initialised parameter store.
    pub fn new(config: SkinningNetConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let magc = config.magc.clone().normalized()?;
        let config = SkinningNetConfig { magc: magc.clone(), ..config };
        let mut store = ParamStore::new();
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);

        let mesh_input = Mlp::new(&mut store, "mesh.input", mesh_feature_width(config.k), MlpSpec::relu(&config.mesh_input), rng)?;
        let mut w = mesh_input.out_width();
        let mut mesh_blocks = Vec::new();
        for (i, &out) in config.mesh_widths.iter().enumerate() {
            let name = format!("mesh.block{i}");
            let kind = NeighbourhoodKind::MeshTopology;
            mesh_blocks.push(ResidualMagc::new(&mut store, &name, &magc, kind, w, out, config.use_residual, rng)?);
            w = out;
        }
        let mesh_out = w;

        let skel_input = Mlp::new(&mut store, "skel.input", 3, MlpSpec::relu(&config.skel_input), rng)?;
        let mut w = skel_input.out_width();
        let mut skel_blocks = Vec::new();
        for (i, &out) in config.skel_widths.iter().enumerate() {
            let kind = NeighbourhoodKind::SkeletonTopology;
            skel_blocks.push(Magc::new(&mut store, &format!("skel.magc{i}"), &magc, kind, w, out, rng)?);
            w = out;
        }
        let skel_out = w;
        if skel_out != mesh_out {
            return Err(Error::Config(format!("mesh stream ends at width {mesh_out}, skeleton stream at {skel_out}")));
        }

        let (global_mesh, global_skel) = if config.use_global_shape {
            let spec = MlpSpec::relu(&[config.global_width]);
            let gm = Mlp::new(&mut store, "global.mesh", mesh_out, spec.clone(), rng)?;
            let gs = Mlp::new(&mut store, "global.skel", skel_out, spec, rng)?;
            (
                Some(GlobalShape { mlp: gm, pooling: config.global_pooling }),
                Some(GlobalShape { mlp: gs, pooling: config.global_pooling }),
            )
        } else {
            (None, None)
        };
        let mesh_skel = MeshSkelMagc::new(&mut store, "mesh_skel", &magc, mesh_out, config.mesh_skel_width, rng)?;

        let kinds = config.mesh_kinds();
        let mut w = config.concat_width();
        let mut skinning = Vec::new();
        for (i, &out) in config.skinning_widths.iter().enumerate() {
            skinning.push(Munegc::new(&mut store, &format!("skin.layer{i}"), &magc, &kinds, w, out, rng)?);
            w = out;
        }
        let mut head_widths = config.head_hidden.clone();
        head_widths.push(config.k);
        let head = Mlp::new(&mut store, "head", w, MlpSpec::head(&head_widths, config.head_dropout), rng)?;

        let net = SkinningNet {
            config,
            mesh_input,
            mesh_blocks,
            skel_input,
            skel_blocks,
            mesh_skel,
            global_mesh,
            global_skel,
            skinning,
            head,
        };
        Ok((net, store))
    }

    /// Head logits `[V,k]` before the masked softmax.
    pub fn logits(&self, fw: &mut Forward<'_>, input: &ModelInput) -> Result<Var> {
        let v = input.vertex_count();
        let xm = fw.tape.leaf(&input.mesh_features);
        let mut hm = self.mesh_input.forward(fw, xm)?;
        for b in &self.mesh_blocks {
            hm = b.forward(fw, &input.mesh_plans, hm)?;
        }
        let xs = fw.tape.leaf(&input.skel_features);
        let mut hs = self.skel_input.forward(fw, xs)?;
        for m in &self.skel_blocks {
            hs = m.forward_on(fw, &input.skel_plans, hs)?;
        }

        let joined = self.mesh_skel.forward(fw, &input.binding_plans, hm, hs)?;
        let mut x = fw.tape.slice_rows(joined, 0, v)?;
        if let (Some(gm), Some(gs)) = (&self.global_mesh, &self.global_skel) {
            let g_mesh = gm.forward(fw, hm)?;
            let g_skel = gs.forward(fw, hs)?;
            let g_mesh = fw.tape.repeat_rows(g_mesh, v)?;
            let g_skel = fw.tape.repeat_rows(g_skel, v)?;
            x = fw.tape.concat_cols(&[x, g_mesh, g_skel])?;
        }

        for layer in &self.skinning {
            x = layer.forward(fw, &input.mesh_plans, x)?;
        }
        self.head.forward(fw, x)
    }

    /// Slot probabilities `[V,k]`; padded slots are exactly zero.
    pub fn forward(&self, fw: &mut Forward<'_>, input: &ModelInput) -> Result<Var> {
        let logits = self.logits(fw, input)?;
        fw.tape.masked_softmax(logits, input.slot_mask.clone())
    }

    /// Inference pass (dropout off).
    pub fn predict(&self, params: &ParamStore, input: &ModelInput) -> Result<Tensor> {
        let mut fw = Forward::new(params, false, 0);
        let p = self.forward(&mut fw, input)?;
        Ok(fw.tape.tensor(p))
    }

    /// One row per block of the architecture table, with parameter shapes.
    pub fn audit(&self, params: &ParamStore) -> Vec<AuditRow> {
        let c = &self.config;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        let mut rows: Vec<(&'static str, &'static str, String, Option<String>)> = vec![(
            "Mesh Network",
            "Input Transform",
            format!("MLP({})", list(&c.mesh_input)),
            Some("mesh.input.".into()),
        )];
        for (i, w) in c.mesh_widths.iter().enumerate() {
            rows.push(("Mesh Network", "Residual MAGC", w.to_string(), Some(format!("mesh.block{i}."))));
        }
        rows.push(("Skeleton Network", "Input Transform", format!("MLP({})", list(&c.skel_input)), Some("skel.input.".into())));
        for (i, w) in c.skel_widths.iter().enumerate() {
            rows.push(("Skeleton Network", "MAGC", w.to_string(), Some(format!("skel.magc{i}."))));
        }
        if c.use_global_shape {
            let g = format!("MLP({})", c.global_width);
            rows.push(("Mesh - Skeleton Network", "Mesh Global Shape", g.clone(), Some("global.mesh.".into())));
            rows.push(("Mesh - Skeleton Network", "Skeleton Global Shape", g, Some("global.skel.".into())));
        }
        rows.push(("Mesh - Skeleton Network", "Mesh-Skel MAGC", c.mesh_skel_width.to_string(), Some("mesh_skel.".into())));
        let concat = if c.use_global_shape {
            format!("{} + {} + {}", c.mesh_skel_width, c.global_width, c.global_width)
        } else {
            c.mesh_skel_width.to_string()
        };
        rows.push(("Mesh - Skeleton Network", "Concat", concat, None));
        let skin_label = if c.use_munegc { "MUNEGC" } else { "MAGC" };
        for (i, w) in c.skinning_widths.iter().enumerate() {
            rows.push(("Skinning Network", skin_label, w.to_string(), Some(format!("skin.layer{i}."))));
        }
        let mut head = c.head_hidden.iter().map(usize::to_string).collect::<Vec<_>>();
        head.push("k".into());
        rows.push(("Skinning Network", "MLP", format!("({})", head.join(", ")), Some("head.".into())));

        rows.into_iter()
            .map(|(section, layer, filters, prefix)| {
                let tensors: Vec<(String, Vec<usize>)> = prefix
                    .map(|pre| {
                        params
                            .iter()
                            .filter(|p| p.name.starts_with(&pre))
                            .map(|p| (p.name.clone(), p.tensor.shape().to_vec()))
                            .collect()
                    })
                    .unwrap_or_default();
                let count = tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
                AuditRow { section, layer, filters, params: count, tensors }
            })
            .collect()
    }
}
