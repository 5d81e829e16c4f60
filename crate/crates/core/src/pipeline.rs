//! Glue between trained parameters, precomputed records and evaluation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::animation::{metrics, sample_poses, Metrics};
use crate::binding::{to_joint_weights, BindingTable};
use crate::data::Record;
use crate::error::{Error, Result};
use crate::geometry::{RigAsset, Skeleton, SkinWeights};
use crate::graph::DegreeStats;
use crate::model::SkinningNet;
use crate::nn::ParamStore;

/// Predicted per-joint weights of one asset, rows summing to 1.
pub fn predict_weights(
    net: &SkinningNet,
    params: &ParamStore,
    stats: &DegreeStats,
    record: &Record,
    joint_count: usize,
) -> Result<SkinWeights> {
    let input = record.model_input(&net.config, stats)?;
    let probs = net.predict(params, &input).map_err(|e| e.in_asset(&record.name))?;
    to_joint_weights(&record.table, probs.data(), joint_count)
}

/// Metrics of `predicted` against the asset's own weights over `poses`
/// random poses of `range_deg` degrees.
pub fn evaluate(predicted: &SkinWeights, asset: &RigAsset, poses: usize, range_deg: f64, seed: u64) -> Result<Metrics> {
    let gt = asset
        .weights
        .as_ref()
        .ok_or_else(|| Error::Asset(format!("`{}` has no ground-truth weights", asset.name)))?;
    let poses = sample_poses(&asset.skeleton, poses, range_deg, seed)?;
    metrics(predicted, gt, asset, &poses).map_err(|e| e.in_asset(&asset.name))
}

#[derive(Serialize, Deserialize)]
struct PredictionJson {
    joints: Vec<String>,
    skin: Vec<VertexWeights>,
}

#[derive(Serialize, Deserialize)]
struct VertexWeights {
    vertex: usize,
    weights: BTreeMap<String, f64>,
}

/// Prediction file: per vertex, joint name to weight for every joint in a
/// valid binding slot.
pub fn write_prediction_json(skeleton: &Skeleton, table: &BindingTable, weights: &SkinWeights) -> String {
    let skin = (0..table.vertex_count())
        .map(|v| VertexWeights {
            vertex: v,
            weights: table
                .row(v)
                .iter()
                .filter(|s| s.valid)
                .map(|s| (skeleton.joints[s.joint].name.clone(), weights.row(v)[s.joint]))
                .collect(),
        })
        .collect();
    let joints = skeleton.joints.iter().map(|j| j.name.clone()).collect();
    serde_json::to_string_pretty(&PredictionJson { joints, skin }).expect("prediction serializes")
}

/// Reads a prediction file against `skeleton`, matching joints by name.
pub fn parse_prediction_json(text: &str, label: &str, skeleton: &Skeleton, vertex_count: usize) -> Result<SkinWeights> {
    let p: PredictionJson = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: label.into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let index: HashMap<&str, usize> = skeleton.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
    let mut w = SkinWeights::zeros(vertex_count, skeleton.joints.len());
    let mut seen = vec![false; vertex_count];
    for entry in &p.skin {
        if entry.vertex >= vertex_count {
            return Err(Error::Skinning(format!("{label}: vertex {} out of range ({vertex_count} vertices)", entry.vertex)));
        }
        seen[entry.vertex] = true;
        for (name, &x) in &entry.weights {
            let j = *index
                .get(name.as_str())
                .ok_or_else(|| Error::Skinning(format!("{label}: unknown joint `{name}`")))?;
            w.row_mut(entry.vertex)[j] = x;
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(Error::Skinning(format!("{label}: no weights for vertex {v}")));
    }
    Ok(w)
}

/// Dense weights: `u64` vertex count, `u64` joint count, then row-major `f64`, all little-endian.
pub fn write_dense(weights: &SkinWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * weights.data.len());
    out.extend_from_slice(&(weights.vertex_count() as u64).to_le_bytes());
    out.extend_from_slice(&(weights.joint_count as u64).to_le_bytes());
    weights.data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    out
}

pub fn read_dense(bytes: &[u8]) -> Result<SkinWeights> {
    let header = |r: std::ops::Range<usize>| {
        bytes.get(r).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    };
    let (Some(v), Some(j)) = (header(0..8), header(8..16)) else {
        return Err(Error::Skinning("dense weights: truncated header".into()));
    };
    if bytes.len() != 16 + 8 * v * j {
        return Err(Error::Skinning(format!("dense weights: {} bytes for {v}x{j}", bytes.len())));
    }
    let data = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(SkinWeights { joint_count: j, data })
}
