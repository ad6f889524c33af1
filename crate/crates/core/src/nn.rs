//! Dense ReLU networks with dueling-Q, softmax-policy, Gaussian-policy and
//! plain regression heads.
//!
//! Every evaluation goes through the [`Tape`], including untraced inference
//! (parameters are bound as constants on a scratch tape). Inference, loss
//! computation and interval propagation therefore share one arithmetic path,
//! and `ε = 0` bounds coincide bit-for-bit with the point forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One fully connected layer, `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform init in `±scale/√fan_in` for weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::from_raw(vec![outputs, inputs], w),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Output head on top of the shared trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Head {
    /// `Q(s, a) = V(s) + A(s, a)`, no mean subtraction.
    DuelingQ { value: Dense, advantage: Dense },
    /// Categorical policy logits plus a state value.
    Softmax { logits: Dense, value: Dense },
    /// Diagonal Gaussian with state-independent `log_std`, plus a state value.
    Gaussian {
        mean: Dense,
        log_std: Tensor,
        value: Dense,
    },
    /// Plain linear output, used for learned dynamics models.
    Linear { out: Dense },
}

/// Which head a network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    DuelingQ,
    Softmax,
    Gaussian,
    Linear,
}

/// Architecture description used to build a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
    /// Number of actions (discrete) or action dimensions (Gaussian), or output size (linear).
    pub outputs: usize,
    #[serde(default = "default_log_std")]
    pub initial_log_std: f64,
    #[serde(default = "default_head_scale")]
    pub head_scale: f64,
}

fn default_log_std() -> f64 {
    -0.5
}

fn default_head_scale() -> f64 {
    1.0
}

/// A dense ReLU trunk followed by a [`Head`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    trunk: Vec<Dense>,
    head: Head,
}

/// Parameters of a network bound onto a tape, in [`Network::parameters`] order.
#[derive(Debug, Clone)]
pub struct NetVars {
    params: Vec<Var>,
}

impl NetVars {
    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

/// Traced head outputs for a `[batch, input]` observation matrix.
#[derive(Debug, Clone, Copy)]
pub enum HeadVars {
    Q { value: Var, advantage: Var, q: Var },
    Policy { logits: Var, value: Var },
    Gaussian { mean: Var, log_std: Var, value: Var },
    Linear { out: Var },
}

impl HeadVars {
    /// State value `[batch]` for heads that carry one.
    pub fn value(&self) -> Option<Var> {
        match *self {
            HeadVars::Q { value, .. }
            | HeadVars::Policy { value, .. }
            | HeadVars::Gaussian { value, .. } => Some(value),
            HeadVars::Linear { .. } => None,
        }
    }
}

/// Traced interval outputs.
///
/// For dueling heads `lower`/`upper` are `V(s) + A̲` and `V(s) + Ā` with `V`
/// evaluated at the unperturbed observation; they order actions soundly but
/// do not bound the perturbed Q-value itself. `sound_lower`/`sound_upper`
/// also propagate the value head (`V̲ + A̲`, `V̄ + Ā`) and do.
#[derive(Debug, Clone, Copy)]
pub enum BoundVars {
    Q {
        lower: Var,
        upper: Var,
        sound_lower: Var,
        sound_upper: Var,
    },
    Logits { lower: Var, upper: Var },
    Mean { lower: Var, upper: Var },
    Linear { lower: Var, upper: Var },
}

impl BoundVars {
    pub fn lower(&self) -> Var {
        match *self {
            BoundVars::Q { lower, .. }
            | BoundVars::Logits { lower, .. }
            | BoundVars::Mean { lower, .. }
            | BoundVars::Linear { lower, .. } => lower,
        }
    }

    pub fn upper(&self) -> Var {
        match *self {
            BoundVars::Q { upper, .. }
            | BoundVars::Logits { upper, .. }
            | BoundVars::Mean { upper, .. }
            | BoundVars::Linear { upper, .. } => upper,
        }
    }
}

/// Untraced head outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadValues {
    Q {
        value: Tensor,
        advantage: Tensor,
        q: Tensor,
    },
    Policy {
        logits: Tensor,
        value: Tensor,
    },
    Gaussian {
        mean: Tensor,
        log_std: Tensor,
        value: Tensor,
    },
    Linear {
        out: Tensor,
    },
}

impl Network {
    /// Builds a freshly initialised network.
    pub fn new(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.input_dim == 0 || spec.outputs == 0 {
            return Err(Error::param("network", "input and output sizes must be positive"));
        }
        if spec.hidden.contains(&0) {
            return Err(Error::param("network.hidden", "hidden widths must be positive"));
        }
        if matches!(spec.head, HeadKind::DuelingQ | HeadKind::Softmax) && spec.outputs < 2 {
            return Err(Error::param("network.outputs", "discrete heads need at least 2 actions"));
        }
        let mut trunk = Vec::with_capacity(spec.hidden.len());
        let mut width = spec.input_dim;
        for &h in &spec.hidden {
            trunk.push(Dense::init(width, h, 1.0, rng));
            width = h;
        }
        let s = spec.head_scale;
        let head = match spec.head {
            HeadKind::DuelingQ => Head::DuelingQ {
                value: Dense::init(width, 1, s, rng),
                advantage: Dense::init(width, spec.outputs, s, rng),
            },
            HeadKind::Softmax => Head::Softmax {
                logits: Dense::init(width, spec.outputs, s, rng),
                value: Dense::init(width, 1, 1.0, rng),
            },
            HeadKind::Gaussian => Head::Gaussian {
                mean: Dense::init(width, spec.outputs, s, rng),
                log_std: Tensor::full(&[spec.outputs], spec.initial_log_std),
                value: Dense::init(width, 1, 1.0, rng),
            },
            HeadKind::Linear => Head::Linear {
                out: Dense::init(width, spec.outputs, s, rng),
            },
        };
        Ok(Self { trunk, head })
    }

    /// Assembles a network from explicit layers (shapes are validated).
    pub fn from_parts(trunk: Vec<Dense>, head: Head) -> Result<Self> {
        let net = Self { trunk, head };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let mut width = self.input_dim();
        for d in &self.trunk {
            check_layer(d, width)?;
            width = d.outputs();
        }
        let layers: Vec<&Dense> = match &self.head {
            Head::DuelingQ { value, advantage } => vec![value, advantage],
            Head::Softmax { logits, value } => vec![logits, value],
            Head::Gaussian {
                mean,
                log_std,
                value,
            } => {
                if log_std.shape() != [mean.outputs()] {
                    return Err(Error::ShapeMismatch {
                        op: "log_std",
                        left: log_std.shape().to_vec(),
                        right: vec![mean.outputs()],
                    });
                }
                vec![mean, value]
            }
            Head::Linear { out } => vec![out],
        };
        for d in layers {
            check_layer(d, width)?;
        }
        if let Head::DuelingQ { value, .. } | Head::Softmax { value, .. } | Head::Gaussian { value, .. } =
            &self.head
        {
            if value.outputs() != 1 {
                return Err(Error::param("value head", "must have exactly one output"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.trunk.first() {
            Some(d) => d.inputs(),
            None => self.head_layers()[0].inputs(),
        }
    }

    fn head_layers(&self) -> Vec<&Dense> {
        match &self.head {
            Head::DuelingQ { value, advantage } => vec![value, advantage],
            Head::Softmax { logits, value } => vec![logits, value],
            Head::Gaussian { mean, value, .. } => vec![mean, value],
            Head::Linear { out } => vec![out],
        }
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.trunk
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.head {
            Head::DuelingQ { .. } => HeadKind::DuelingQ,
            Head::Softmax { .. } => HeadKind::Softmax,
            Head::Gaussian { .. } => HeadKind::Gaussian,
            Head::Linear { .. } => HeadKind::Linear,
        }
    }

    /// Number of discrete actions, Gaussian action dimensions, or linear outputs.
    pub fn num_outputs(&self) -> usize {
        match &self.head {
            Head::DuelingQ { advantage, .. } => advantage.outputs(),
            Head::Softmax { logits, .. } => logits.outputs(),
            Head::Gaussian { mean, .. } => mean.outputs(),
            Head::Linear { out } => out.outputs(),
        }
    }

    /// All trainable tensors in a fixed order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in &self.trunk {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        match &self.head {
            Head::DuelingQ { value, advantage } => {
                out.extend([&value.weight, &value.bias, &advantage.weight, &advantage.bias]);
            }
            Head::Softmax { logits, value } => {
                out.extend([&logits.weight, &logits.bias, &value.weight, &value.bias]);
            }
            Head::Gaussian {
                mean,
                log_std,
                value,
            } => {
                out.extend([&mean.weight, &mean.bias, log_std, &value.weight, &value.bias]);
            }
            Head::Linear { out: o } => out.extend([&o.weight, &o.bias]),
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in &mut self.trunk {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        match &mut self.head {
            Head::DuelingQ { value, advantage } => out.extend([
                &mut value.weight,
                &mut value.bias,
                &mut advantage.weight,
                &mut advantage.bias,
            ]),
            Head::Softmax { logits, value } => out.extend([
                &mut logits.weight,
                &mut logits.bias,
                &mut value.weight,
                &mut value.bias,
            ]),
            Head::Gaussian {
                mean,
                log_std,
                value,
            } => out.extend([
                &mut mean.weight,
                &mut mean.bias,
                log_std,
                &mut value.weight,
                &mut value.bias,
            ]),
            Head::Linear { out: o } => out.extend([&mut o.weight, &mut o.bias]),
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Overwrites all parameters from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &Network) -> Result<()> {
        let src = other.parameters();
        let dst = self.parameters_mut();
        if src.len() != dst.len() {
            return Err(Error::param("network", "layouts differ"));
        }
        for (d, s) in dst.iter().zip(&src) {
            if d.shape() != s.shape() {
                return Err(Error::ShapeMismatch {
                    op: "copy_from",
                    left: d.shape().to_vec(),
                    right: s.shape().to_vec(),
                });
            }
        }
        for (d, s) in dst.into_iter().zip(src) {
            *d = s.clone();
        }
        Ok(())
    }

    /// Replaces every parameter tensor; shapes must match.
    pub fn set_parameters(&mut self, values: &[Tensor]) -> Result<()> {
        let dst = self.parameters_mut();
        if dst.len() != values.len() {
            return Err(Error::param("network", "parameter count differs"));
        }
        for (d, v) in dst.iter().zip(values) {
            if d.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: "set_parameters",
                    left: d.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
        }
        for (d, v) in dst.into_iter().zip(values) {
            *d = v.clone();
        }
        Ok(())
    }

    /// Binds the parameters onto `tape`; `trainable = false` binds constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let params = self
            .parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        NetVars { params }
    }

    fn trunk_forward(&self, tape: &mut Tape, vars: &NetVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, _) in self.trunk.iter().enumerate() {
            let (w, b) = (vars.params[2 * i], vars.params[2 * i + 1]);
            let z = tape.dense(h, w, Some(b))?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    /// Traced forward pass for a `[batch, input]` observation matrix.
    pub fn forward_vars(&self, tape: &mut Tape, vars: &NetVars, x: Var) -> Result<HeadVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "network input",
                left: shape,
                right: vec![self.input_dim()],
            });
        }
        let rows = shape[0];
        let h = self.trunk_forward(tape, vars, x)?;
        let p = &vars.params[2 * self.trunk.len()..];
        Ok(match &self.head {
            Head::DuelingQ { advantage, .. } => {
                let v = tape.dense(h, p[0], Some(p[1]))?;
                let value = tape.reshape(v, vec![rows])?;
                let advantage_v = tape.dense(h, p[2], Some(p[3]))?;
                let vb = tape.repeat_cols(value, advantage.outputs());
                let q = tape.add(vb, advantage_v)?;
                HeadVars::Q {
                    value,
                    advantage: advantage_v,
                    q,
                }
            }
            Head::Softmax { .. } => {
                let logits = tape.dense(h, p[0], Some(p[1]))?;
                let v = tape.dense(h, p[2], Some(p[3]))?;
                let value = tape.reshape(v, vec![rows])?;
                HeadVars::Policy { logits, value }
            }
            Head::Gaussian { .. } => {
                let mean = tape.dense(h, p[0], Some(p[1]))?;
                let v = tape.dense(h, p[3], Some(p[4]))?;
                let value = tape.reshape(v, vec![rows])?;
                HeadVars::Gaussian {
                    mean,
                    log_std: p[2],
                    value,
                }
            }
            Head::Linear { .. } => HeadVars::Linear {
                out: tape.dense(h, p[0], Some(p[1]))?,
            },
        })
    }

    /// Traced interval propagation of the box `[lower, upper]` through the
    /// network. `clean` is the head output at the unperturbed observation;
    /// dueling heads take their state value from it.
    pub fn ibp_vars(
        &self,
        tape: &mut Tape,
        vars: &NetVars,
        clean: &HeadVars,
        lower: Var,
        upper: Var,
    ) -> Result<BoundVars> {
        let (mut l, mut u) = (lower, upper);
        for i in 0..self.trunk.len() {
            let (w, b) = (vars.params[2 * i], vars.params[2 * i + 1]);
            let (zl, zu) = crate::bounds::ibp_dense_vars(tape, l, u, w, Some(b))?;
            l = tape.relu(zl);
            u = tape.relu(zu);
        }
        let p = &vars.params[2 * self.trunk.len()..];
        Ok(match (&self.head, clean) {
            (Head::DuelingQ { advantage, .. }, HeadVars::Q { value, .. }) => {
                let k = advantage.outputs();
                let rows = tape.value(*value).len();
                let (al, au) = crate::bounds::ibp_dense_vars(tape, l, u, p[2], Some(p[3]))?;
                let vb = tape.repeat_cols(*value, k);
                let (vl, vu) = crate::bounds::ibp_dense_vars(tape, l, u, p[0], Some(p[1]))?;
                let vl = tape.reshape(vl, vec![rows])?;
                let vu = tape.reshape(vu, vec![rows])?;
                let vlb = tape.repeat_cols(vl, k);
                let vub = tape.repeat_cols(vu, k);
                BoundVars::Q {
                    lower: tape.add(vb, al)?,
                    upper: tape.add(vb, au)?,
                    sound_lower: tape.add(vlb, al)?,
                    sound_upper: tape.add(vub, au)?,
                }
            }
            (Head::Softmax { .. }, _) => {
                let (zl, zu) = crate::bounds::ibp_dense_vars(tape, l, u, p[0], Some(p[1]))?;
                BoundVars::Logits {
                    lower: zl,
                    upper: zu,
                }
            }
            (Head::Gaussian { .. }, _) => {
                let (ml, mu) = crate::bounds::ibp_dense_vars(tape, l, u, p[0], Some(p[1]))?;
                BoundVars::Mean {
                    lower: ml,
                    upper: mu,
                }
            }
            (Head::Linear { .. }, _) => {
                let (ol, ou) = crate::bounds::ibp_dense_vars(tape, l, u, p[0], Some(p[1]))?;
                BoundVars::Linear {
                    lower: ol,
                    upper: ou,
                }
            }
            (Head::DuelingQ { .. }, _) => {
                return Err(Error::Unsupported(
                    "dueling bounds need the clean Q-head output".into(),
                ))
            }
        })
    }

    /// Untraced forward pass for a `[batch, input]` matrix or a single `[input]` vector.
    pub fn forward(&self, obs: &Tensor) -> Result<HeadValues> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(as_batch(obs)?);
        let out = self.forward_vars(&mut tape, &vars, x)?;
        let v = |var: Var| tape.value(var).clone();
        Ok(match out {
            HeadVars::Q {
                value,
                advantage,
                q,
            } => HeadValues::Q {
                value: v(value),
                advantage: v(advantage),
                q: v(q),
            },
            HeadVars::Policy { logits, value } => HeadValues::Policy {
                logits: v(logits),
                value: v(value),
            },
            HeadVars::Gaussian {
                mean,
                log_std,
                value,
            } => HeadValues::Gaussian {
                mean: v(mean),
                log_std: v(log_std),
                value: v(value),
            },
            HeadVars::Linear { out } => HeadValues::Linear { out: v(out) },
        })
    }

    /// Primary head output of a single observation: Q-values, logits, Gaussian mean, or linear output.
    pub fn primary_output(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::vector(obs.to_vec())?;
        Ok(match self.forward(&t)? {
            HeadValues::Q { q, .. } => q.into_data(),
            HeadValues::Policy { logits, .. } => logits.into_data(),
            HeadValues::Gaussian { mean, .. } => mean.into_data(),
            HeadValues::Linear { out } => out.into_data(),
        })
    }

    /// State value of a single observation (0 for linear heads).
    pub fn state_value(&self, obs: &[f64]) -> Result<f64> {
        let t = Tensor::vector(obs.to_vec())?;
        Ok(match self.forward(&t)? {
            HeadValues::Q { value, .. }
            | HeadValues::Policy { value, .. }
            | HeadValues::Gaussian { value, .. } => value.data()[0],
            HeadValues::Linear { .. } => 0.0,
        })
    }
}

fn check_layer(d: &Dense, inputs: usize) -> Result<()> {
    if d.weight.rank() != 2 || d.inputs() != inputs || d.bias.shape() != [d.outputs()] {
        return Err(Error::ShapeMismatch {
            op: "layer",
            left: d.weight.shape().to_vec(),
            right: vec![d.bias.len(), inputs],
        });
    }
    Ok(())
}

/// Lifts a vector to a one-row matrix; matrices pass through.
pub fn as_batch(obs: &Tensor) -> Result<Tensor> {
    match obs.rank() {
        1 => obs.reshape(vec![1, obs.len()]),
        2 => Ok(obs.clone()),
        _ => Err(Error::ShapeMismatch {
            op: "as_batch",
            left: obs.shape().to_vec(),
            right: vec![],
        }),
    }
}
