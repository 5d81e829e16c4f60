//! Asset formats.
//!
//! * Mesh: Wavefront OBJ subset. `v x y z` and `f i j k ...` (1-based, `i/t/n`
//!   tokens and negative indices accepted, polygons fan-triangulated); every
//!   other record is ignored.
//! * Rig, canonical JSON:
//!   `{"joints":[{"name","position":[x,y,z],"parent":i|-1}],"skin":[{"vertex":i,"weights":{"joint":w}}]}`
//! * Rig, line-oriented importer: `joints <name> <x> <y> <z>`, `root <name>`,
//!   `hier <parent> <child>`, `skin <vertex> (<joint> <w>)+`, vertex indices
//!   0-based.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Joint, Mesh, RigAsset, Skeleton, SkinWeights, Vec3};
use crate::error::{Error, Result};

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, msg: msg.into() }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_obj(text: &str, label: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    let mut polygons: Vec<(usize, Vec<i64>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(label, lineno + 1, format!("bad coordinate `{t}`"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(parse_err(label, lineno + 1, "vertex needs three coordinates"));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|_| parse_err(label, lineno + 1, format!("bad face index `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(label, lineno + 1, "face needs at least three vertices"));
                }
                polygons.push((lineno + 1, idx));
            }
            _ => {}
        }
    }
    let n = mesh.vertices.len() as i64;
    for (lineno, idx) in polygons {
        let resolved: Vec<u32> = idx
            .iter()
            .map(|&i| {
                let z = if i > 0 { i - 1 } else { n + i };
                if i == 0 || z < 0 || z >= n {
                    Err(parse_err(label, lineno, format!("face index {i} out of range (1..={n})")))
                } else {
                    Ok(z as u32)
                }
            })
            .collect::<Result<_>>()?;
        for k in 1..resolved.len() - 1 {
            mesh.faces.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 16);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct JointJson {
    name: String,
    position: [f64; 3],
    parent: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkinJson {
    vertex: usize,
    weights: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RigJson {
    joints: Vec<JointJson>,
    #[serde(default)]
    skin: Vec<SkinJson>,
}

/// Builds a weight matrix from (vertex, joint, weight) triples; rows are
/// renormalized to sum to one. Returns `None` when there are no triples.
fn assemble_weights(
    triples: Vec<(usize, usize, f64, usize)>,
    vertex_count: usize,
    joint_count: usize,
    label: &str,
) -> Result<Option<SkinWeights>> {
    if triples.is_empty() {
        return Ok(None);
    }
    let mut w = SkinWeights::zeros(vertex_count, joint_count);
    for (v, j, x, line) in triples {
        if v >= vertex_count {
            return Err(parse_err(label, line, format!("skin vertex {v} out of range ({vertex_count} vertices)")));
        }
        if x < 0.0 || !x.is_finite() {
            return Err(parse_err(label, line, format!("weight {x} must be finite and non-negative")));
        }
        w.row_mut(v)[j] += x;
    }
    w.normalize_rows();
    Ok(Some(w))
}

pub fn parse_rig_json(text: &str, label: &str, vertex_count: usize) -> Result<(Skeleton, Option<SkinWeights>)> {
    let rig: RigJson = serde_json::from_str(text).map_err(|e| parse_err(label, e.line(), e.to_string()))?;
    let n = rig.joints.len() as i64;
    let mut joints = Vec::with_capacity(rig.joints.len());
    for (i, j) in rig.joints.into_iter().enumerate() {
        let parent = match j.parent {
            -1 => None,
            p if (0..n).contains(&p) => Some(p as usize),
            p => return Err(parse_err(label, 0, format!("joints[{i}] `{}` has parent {p} out of range", j.name))),
        };
        joints.push(Joint { name: j.name, position: Vec3::from(j.position), parent });
    }
    let skeleton = Skeleton { joints };
    skeleton.validate().map_err(|e| parse_err(label, 0, e.to_string()))?;
    let names: HashMap<&str, usize> = skeleton.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
    let mut triples = Vec::new();
    for (k, entry) in rig.skin.iter().enumerate() {
        for (name, &w) in &entry.weights {
            let j = *names
                .get(name.as_str())
                .ok_or_else(|| parse_err(label, 0, format!("skin[{k}] references unknown joint `{name}`")))?;
            triples.push((entry.vertex, j, w, 0));
        }
    }
    let weights = assemble_weights(triples, vertex_count, skeleton.joints.len(), label)?;
    Ok((skeleton, weights))
}

pub fn write_rig_json(skeleton: &Skeleton, weights: Option<&SkinWeights>) -> String {
    let joints = skeleton
        .joints
        .iter()
        .map(|j| JointJson {
            name: j.name.clone(),
            position: [j.position.x, j.position.y, j.position.z],
            parent: j.parent.map_or(-1, |p| p as i64),
        })
        .collect();
    let skin = weights
        .map(|w| {
            (0..w.vertex_count())
                .filter_map(|v| {
                    let weights: BTreeMap<String, f64> = w
                        .row(v)
                        .iter()
                        .enumerate()
                        .filter(|(_, &x)| x > 0.0)
                        .map(|(j, &x)| (skeleton.joints[j].name.clone(), x))
                        .collect();
                    (!weights.is_empty()).then_some(SkinJson { vertex: v, weights })
                })
                .collect()
        })
        .unwrap_or_default();
    serde_json::to_string_pretty(&RigJson { joints, skin }).expect("rig serializes")
}

pub fn parse_rignet(text: &str, label: &str, vertex_count: usize) -> Result<(Skeleton, Option<SkinWeights>)> {
    let mut joints: Vec<Joint> = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut root: Option<(String, usize)> = None;
    let mut hier: Vec<(String, String, usize)> = Vec::new();
    let mut skin: Vec<(usize, Vec<(String, f64)>, usize)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let Some(&head) = toks.first() else { continue };
        match head {
            "joints" => {
                if toks.len() != 5 {
                    return Err(parse_err(label, line, "expected `joints <name> <x> <y> <z>`"));
                }
                let c: Vec<f64> = toks[2..5]
                    .iter()
                    .map(|t| t.parse().map_err(|_| parse_err(label, line, format!("bad coordinate `{t}`"))))
                    .collect::<Result<_>>()?;
                if names.insert(toks[1].to_string(), joints.len()).is_some() {
                    return Err(parse_err(label, line, format!("duplicate joint `{}`", toks[1])));
                }
                joints.push(Joint { name: toks[1].to_string(), position: Vec3::new(c[0], c[1], c[2]), parent: None });
            }
            "root" => {
                if toks.len() != 2 {
                    return Err(parse_err(label, line, "expected `root <name>`"));
                }
                if root.is_some() {
                    return Err(parse_err(label, line, "multiple roots"));
                }
                root = Some((toks[1].to_string(), line));
            }
            "hier" => {
                if toks.len() != 3 {
                    return Err(parse_err(label, line, "expected `hier <parent> <child>`"));
                }
                hier.push((toks[1].to_string(), toks[2].to_string(), line));
            }
            "skin" => {
                if toks.len() < 4 || toks.len() % 2 != 0 {
                    return Err(parse_err(label, line, "expected `skin <vertex> (<joint> <weight>)+`"));
                }
                let v: usize = toks[1].parse().map_err(|_| parse_err(label, line, format!("bad vertex index `{}`", toks[1])))?;
                let pairs = toks[2..]
                    .chunks(2)
                    .map(|p| {
                        let w: f64 = p[1].parse().map_err(|_| parse_err(label, line, format!("bad weight `{}`", p[1])))?;
                        Ok((p[0].to_string(), w))
                    })
                    .collect::<Result<_>>()?;
                skin.push((v, pairs, line));
            }
            _ => return Err(parse_err(label, line, format!("unknown record `{head}`"))),
        }
    }
    let lookup = |name: &str, line: usize| {
        names.get(name).copied().ok_or_else(|| parse_err(label, line, format!("unknown joint `{name}`")))
    };
    for (p, c, line) in &hier {
        let (pi, ci) = (lookup(p, *line)?, lookup(c, *line)?);
        if joints[ci].parent.is_some() {
            return Err(parse_err(label, *line, format!("joint `{c}` has two parents")));
        }
        joints[ci].parent = Some(pi);
    }
    if let Some((r, line)) = &root {
        let ri = lookup(r, *line)?;
        if joints[ri].parent.is_some() {
            return Err(parse_err(label, *line, format!("root `{r}` has a parent")));
        }
    }
    let skeleton = Skeleton { joints };
    skeleton.validate().map_err(|e| parse_err(label, 0, e.to_string()))?;
    if let Some((r, line)) = root {
        if skeleton.root() != names.get(&r).copied() {
            return Err(parse_err(label, line, format!("declared root `{r}` is not the hierarchy root")));
        }
    }
    let mut triples = Vec::new();
    for (v, pairs, line) in skin {
        for (name, w) in pairs {
            triples.push((v, lookup(&name, line)?, w, line));
        }
    }
    let weights = assemble_weights(triples, vertex_count, skeleton.joints.len(), label)?;
    Ok((skeleton, weights))
}

/// Loads an OBJ mesh and a rig; `.json` rigs use the canonical format, any
/// other extension goes through the line-oriented importer.
pub fn load_asset(mesh_path: &Path, rig_path: &Path) -> Result<RigAsset> {
    let mesh_label = mesh_path.display().to_string();
    let rig_label = rig_path.display().to_string();
    let mesh = parse_obj(&read_text(mesh_path)?, &mesh_label)?;
    let rig_text = read_text(rig_path)?;
    let (skeleton, weights) = if rig_path.extension().is_some_and(|e| e == "json") {
        parse_rig_json(&rig_text, &rig_label, mesh.vertices.len())?
    } else {
        parse_rignet(&rig_text, &rig_label, mesh.vertices.len())?
    };
    let name = mesh_path.file_stem().map_or_else(|| "asset".to_string(), |s| s.to_string_lossy().into_owned());
    let asset = RigAsset { name, mesh, skeleton, weights, transform: None };
    asset.validate()?;
    Ok(asset)
}

pub fn save_asset(asset: &RigAsset, mesh_path: &Path, rig_path: &Path) -> Result<()> {
    write_text(mesh_path, &write_obj(&asset.mesh))?;
    write_text(rig_path, &write_rig_json(&asset.skeleton, asset.weights.as_ref()))
}
