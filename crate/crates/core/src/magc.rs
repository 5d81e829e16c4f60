//! Multi-aggregator graph convolution: every aggregator × scaler block is
//! concatenated and fused by a single linear layer followed by ReLU.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AggregatePlan, Aggregator, DegreeStats, EdgeFn, Graph, NeighbourhoodKind, Scaler};
use crate::nn::{Forward, Linear, ParamStore};
use crate::tensor::Var;

/// Aggregation scheme shared by every MAGC layer of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagcConfig {
    pub aggregators: Vec<Aggregator>,
    pub scalers: Vec<Scaler>,
    #[serde(default)]
    pub edge_fn: EdgeFn,
}

impl Default for MagcConfig {
    fn default() -> Self {
        MagcConfig { aggregators: Aggregator::ALL.to_vec(), scalers: Scaler::ALL.to_vec(), edge_fn: EdgeFn::Asymmetric }
    }
}

impl MagcConfig {
    /// Sorts both subsets into canonical block order and rejects empty or
    /// duplicated entries.
    pub fn normalized(mut self) -> Result<Self> {
        self.aggregators.sort();
        self.scalers.sort();
        let dup_a = self.aggregators.windows(2).any(|w| w[0] == w[1]);
        let dup_s = self.scalers.windows(2).any(|w| w[0] == w[1]);
        if self.aggregators.is_empty() || self.scalers.is_empty() || dup_a || dup_s {
            return Err(Error::Config(format!(
                "aggregators {:?} and scalers {:?} must be non-empty sets",
                self.aggregators, self.scalers
            )));
        }
        Ok(self)
    }

    pub fn block_count(&self) -> usize {
        self.aggregators.len() * self.scalers.len()
    }

    pub fn pre_mlp_width(&self, feature_width: usize) -> usize {
        self.block_count() * self.edge_fn.message_width(feature_width)
    }

    pub fn plan(&self, graph: &Graph, kind: NeighbourhoodKind, stats: &DegreeStats) -> Result<Arc<AggregatePlan>> {
        let d_train = stats.get(kind)?;
        let edges = graph
            .edges(kind)
            .ok_or_else(|| Error::Graph(format!("graph has no {kind} edges")))?;
        Ok(Arc::new(AggregatePlan::new(
            graph.node_count,
            edges,
            &self.aggregators,
            &self.scalers,
            self.edge_fn,
            d_train,
        )?))
    }
}

/// Aggregation plans for the neighbourhood kinds of one graph.
#[derive(Debug, Clone, Default)]
pub struct GraphPlans {
    plans: BTreeMap<NeighbourhoodKind, Arc<AggregatePlan>>,
}

impl GraphPlans {
    pub fn build(graph: &Graph, kinds: &[NeighbourhoodKind], cfg: &MagcConfig, stats: &DegreeStats) -> Result<Self> {
        let mut plans = BTreeMap::new();
        for &k in kinds {
            plans.insert(k, cfg.plan(graph, k, stats)?);
        }
        Ok(GraphPlans { plans })
    }

    pub fn get(&self, kind: NeighbourhoodKind) -> Result<&Arc<AggregatePlan>> {
        self.plans.get(&kind).ok_or_else(|| Error::Graph(format!("no aggregation plan for {kind}")))
    }
}

#[derive(Debug, Clone)]
pub struct Magc {
    pub kind: NeighbourhoodKind,
    pub in_width: usize,
    pub out_width: usize,
    pub fuse: Linear,
}

impl Magc {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &MagcConfig,
        kind: NeighbourhoodKind,
        in_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fuse = Linear::new(store, &format!("{name}.fuse"), cfg.pre_mlp_width(in_width), out_width, rng)?;
        Ok(Magc { kind, in_width, out_width, fuse })
    }

    /// Concatenated, scaled aggregations before the fusion layer.
    pub fn pre_mlp(&self, fw: &mut Forward<'_>, plan: &Arc<AggregatePlan>, x: Var) -> Result<Var> {
        let w = *fw.tape.shape(x).last().unwrap_or(&0);
        if w != self.in_width {
            return Err(Error::shape("magc_forward", format!("features of width {w}, layer expects {}", self.in_width)));
        }
        fw.tape.aggregate(x, plan.clone())
    }

    pub fn forward(&self, fw: &mut Forward<'_>, plan: &Arc<AggregatePlan>, x: Var) -> Result<Var> {
        let agg = self.pre_mlp(fw, plan, x)?;
        let y = self.fuse.forward(fw, agg)?;
        Ok(fw.tape.relu(y))
    }

    pub fn forward_on(&self, fw: &mut Forward<'_>, plans: &GraphPlans, x: Var) -> Result<Var> {
        let plan = plans.get(self.kind)?.clone();
        self.forward(fw, &plan, x)
    }
}
