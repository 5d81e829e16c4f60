//! Parameters, linear layers and MLPs on top of the autodiff tape.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init, rng: &mut impl Rng) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Glorot { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, tensor: tensor.with_requires_grad(true) });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Adds per-parameter gradients (indexed by [`ParamId`]) into `.grad`.
    pub fn accumulate(&mut self, grads: &[Option<Vec<f64>>], weight: f64) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                let scaled: Vec<f64> = g.iter().map(|v| v * weight).collect();
                p.tensor.accumulate_grad(&scaled)?;
            }
        }
        Ok(())
    }
}

/// One forward pass: the tape, the parameters it reads, and the dropout RNG.
pub struct Forward<'a> {
    pub tape: Tape<'a>,
    params: &'a ParamStore,
    bound: Vec<Option<Var>>,
    pub training: bool,
    rng: ChaCha8Rng,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a ParamStore, training: bool, seed: u64) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    /// Tape variable for a parameter, recorded on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf_ref(self.params.get(id));
        self.bound[id.0] = Some(v);
        v
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(x);
        }
        let n = self.tape.value(x).len();
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..n)
            .map(|_| if keep > 0.0 && self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.mul_const(x, Arc::new(mask))
    }

    /// Per-parameter gradients, `None` for parameters the loss never touched.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Option<Vec<f64>>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.get(v).map(<[f64]>::to_vec))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_before: Vec<f64>,
}

impl MlpSpec {
    /// ReLU after every layer, no dropout.
    pub fn relu(widths: &[usize]) -> Self {
        MlpSpec {
            layer_widths: widths.to_vec(),
            activations: vec![Activation::Relu; widths.len()],
            dropout_before: vec![0.0; widths.len()],
        }
    }

    /// ReLU on hidden layers, linear output, dropout `p` before every layer.
    pub fn head(widths: &[usize], p: f64) -> Self {
        let mut activations = vec![Activation::Relu; widths.len()];
        if let Some(last) = activations.last_mut() {
            *last = Activation::None;
        }
        MlpSpec { layer_widths: widths.to_vec(), activations, dropout_before: vec![p; widths.len()] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be non-empty and positive: {:?}", self.layer_widths)));
        }
        if self.activations.len() != self.layer_widths.len() || self.dropout_before.len() != self.layer_widths.len() {
            return Err(Error::Config("MLP activation/dropout lists must match the layer count".into()));
        }
        if self.dropout_before.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("dropout probabilities must lie in [0,1]: {:?}", self.dropout_before)));
        }
        Ok(())
    }

    pub fn out_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_width: usize, out_width: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            vec![in_width, out_width],
            Init::Glorot { fan_in: in_width, fan_out: out_width },
            rng,
        )?;
        let bias = store.add(format!("{name}.bias"), vec![out_width], Init::Zeros, rng)?;
        Ok(Linear { weight, bias, in_width, out_width })
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        let w = fw.param(self.weight);
        let b = fw.param(self.bias);
        fw.tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, in_width: usize, spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layer_widths.len());
        let mut w_in = in_width;
        for (i, &w) in spec.layer_widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), w_in, w, rng)?);
            w_in = w;
        }
        Ok(Mlp { spec, layers })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.spec.out_width()
    }

    pub fn forward(&self, fw: &mut Forward<'_>, mut x: Var) -> Result<Var> {
        let got = *fw.tape.shape(x).last().unwrap_or(&0);
        if fw.tape.shape(x).len() != 2 || got != self.in_width() {
            return Err(Error::shape("mlp_forward", format!("input {:?}, expected width {}", fw.tape.shape(x), self.in_width())));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            x = fw.dropout(x, self.spec.dropout_before[i])?;
            x = layer.forward(fw, x)?;
            if self.spec.activations[i] == Activation::Relu {
                x = fw.tape.relu(x);
            }
        }
        Ok(x)
    }
}
