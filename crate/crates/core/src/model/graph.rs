//! Static layer graph with named parameters and a tape-recording forward pass.

use serde::{Deserialize, Serialize};

use crate::autograd::{BatchNormArgs, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::model::zoo::{ModelConfig, Variant};
use crate::nn::PoolSpec;
use crate::octave::{octave_conv, OctavePair, OctaveSpec, OctaveWeights};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Batch-norm parameters for one frequency branch.
#[derive(Clone, Copy, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Input,
    /// Plain or octave convolution; plain layers have both ratios at zero.
    Conv {
        spec: OctaveSpec,
        weights: OctaveWeights<ParamId>,
    },
    /// Index 0 normalizes the high branch, index 1 the low branch.
    BatchNorm {
        branches: Vec<BnParams>,
    },
    LeakyRelu {
        slope: f64,
    },
    MaxPool {
        spec: PoolSpec,
    },
    /// Element-wise sum of two nodes, branch by branch.
    Add,
    /// Global average pool of each branch, concatenated high then low.
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
        weight: ParamId,
        bias: ParamId,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input => "input",
            Layer::Conv { spec, .. } if spec.is_vanilla() => "conv",
            Layer::Conv { .. } => "octave-conv",
            Layer::BatchNorm { .. } => "batch-norm",
            Layer::LeakyRelu { .. } => "leaky-relu",
            Layer::MaxPool { .. } => "max-pool",
            Layer::Add => "add",
            Layer::GlobalAvgPool => "global-avg-pool",
            Layer::Linear { .. } => "linear",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    /// Indices of earlier nodes feeding this one.
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
    },
    InvertedResidual {
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        expansion: usize,
        residual: bool,
    },
    Bottleneck {
        in_ch: usize,
        out_ch: usize,
    },
    Head,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub kind: BlockKind,
}

/// A skip edge: `from` is added into the junction node `junction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shortcut {
    pub from: String,
    pub junction: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-statistic updates recorded on the tape.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<T: Element = f32> {
    pub(crate) config: ModelConfig,
    pub(crate) nodes: Vec<Node>,
    pub(crate) params: ParamStore<T>,
    pub(crate) blocks: Vec<BlockInfo>,
    pub(crate) shortcuts: Vec<Shortcut>,
}

impl<T: Element> ModelGraph<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn shortcuts(&self) -> &[Shortcut] {
        &self.shortcuts
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Number of trainable scalars; running statistics are excluded.
    pub fn trainable_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.tensor.len())
            .sum()
    }

    /// Expected input shape for a batch of `n` images.
    pub fn input_shape(&self, n: usize) -> Shape {
        Shape::new(n, 3, self.config.input_size, self.config.input_size)
    }

    /// Records the forward pass and returns the logits node.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let training = mode == Mode::Train;
        let mut values: Vec<OctavePair<Var>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let arg = |i: usize| values[node.inputs[i]];
            let out = match &node.layer {
                Layer::Input => {
                    let s = tape.shape(x);
                    if s.c != 3 {
                        return Err(Error::InvalidShape(format!("expected 3 input channels, got {s}")));
                    }
                    OctavePair::plain(x)
                }
                Layer::Conv { spec, weights } => {
                    let w = OctaveWeights {
                        hh: weights.hh.map(|id| tape.param(&self.params, id)),
                        hl: weights.hl.map(|id| tape.param(&self.params, id)),
                        lh: weights.lh.map(|id| tape.param(&self.params, id)),
                        ll: weights.ll.map(|id| tape.param(&self.params, id)),
                    };
                    octave_conv(tape, arg(0), spec, &w)?
                }
                Layer::BatchNorm { branches } => {
                    let input = arg(0);
                    let mut bn = |v: Var, p: &BnParams| -> Result<Var> {
                        let gamma = tape.param(&self.params, p.gamma);
                        let beta = tape.param(&self.params, p.beta);
                        tape.batch_norm(
                            v,
                            BatchNormArgs {
                                gamma,
                                beta,
                                running_mean: self.params.get(p.running_mean).data(),
                                running_var: self.params.get(p.running_var).data(),
                                eps: T::of_f64(self.config.bn_eps),
                                momentum: T::of_f64(self.config.bn_momentum),
                                training,
                                stats: training.then_some(RunningStats {
                                    mean: p.running_mean,
                                    var: p.running_var,
                                }),
                            },
                        )
                    };
                    let high = bn(input.high, &branches[0])?;
                    let low = match (input.low, branches.get(1)) {
                        (Some(l), Some(p)) => Some(bn(l, p)?),
                        (None, None) => None,
                        _ => return Err(Error::Config(format!("{}: branch layout mismatch", node.name))),
                    };
                    OctavePair { high, low }
                }
                Layer::LeakyRelu { slope } => {
                    let input = arg(0);
                    let s = T::of_f64(*slope);
                    OctavePair {
                        high: tape.leaky_relu(input.high, s),
                        low: input.low.map(|l| tape.leaky_relu(l, s)),
                    }
                }
                Layer::MaxPool { spec } => {
                    let input = arg(0);
                    OctavePair {
                        high: tape.max_pool2d(input.high, *spec)?,
                        low: input.low.map(|l| tape.max_pool2d(l, *spec)).transpose()?,
                    }
                }
                Layer::Add => {
                    let (a, b) = (arg(0), arg(1));
                    let high = tape.add(a.high, b.high)?;
                    let low = match (a.low, b.low) {
                        (Some(x), Some(y)) => Some(tape.add(x, y)?),
                        (None, None) => None,
                        _ => return Err(Error::Config(format!("{}: adding mismatched pairs", node.name))),
                    };
                    OctavePair { high, low }
                }
                Layer::GlobalAvgPool => {
                    let input = arg(0);
                    let high = tape.global_avg_pool(input.high);
                    let merged = match input.low {
                        Some(l) => {
                            let low = tape.global_avg_pool(l);
                            tape.concat_channels(high, low)?
                        }
                        None => high,
                    };
                    OctavePair::plain(merged)
                }
                Layer::Linear { weight, bias, .. } => {
                    let input = arg(0);
                    if input.low.is_some() {
                        return Err(Error::Config(format!(
                            "{}: linear layer needs a merged input",
                            node.name
                        )));
                    }
                    let w = tape.param(&self.params, *weight);
                    let b = tape.param(&self.params, *bias);
                    OctavePair::plain(tape.linear(input.high, w, Some(b))?)
                }
            };
            values.push(out);
        }
        let last = values.last().ok_or_else(|| Error::Config("empty graph".into()))?;
        Ok(last.high)
    }

    /// Inference-mode logits for a batch.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, x, Mode::Eval)?;
        let out = tape.value(y).clone();
        out.ensure_finite("logits")?;
        Ok(out)
    }

    /// Output shapes of every node for an input of `input` shape.
    pub fn node_shapes(&self, input: Shape) -> Result<Vec<OctavePair<Shape>>> {
        let mut shapes: Vec<OctavePair<Shape>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let arg = |i: usize| shapes[node.inputs[i]];
            let out = match &node.layer {
                Layer::Input => OctavePair::plain(input),
                Layer::Conv { spec, .. } => {
                    let (high, low) = spec.output_shapes(arg(0).high)?;
                    OctavePair { high, low }
                }
                Layer::BatchNorm { .. } | Layer::LeakyRelu { .. } => arg(0),
                Layer::MaxPool { spec } => {
                    let a = arg(0);
                    OctavePair {
                        high: spec.output_shape(a.high)?,
                        low: a.low.map(|l| spec.output_shape(l)).transpose()?,
                    }
                }
                Layer::Add => {
                    let (a, b) = (arg(0), arg(1));
                    if a != b {
                        return Err(Error::ShapeMismatch {
                            left: a.high,
                            right: b.high,
                        });
                    }
                    a
                }
                Layer::GlobalAvgPool => {
                    let a = arg(0);
                    let c = a.high.c + a.low.map_or(0, |l| l.c);
                    OctavePair::plain(Shape::new(a.high.n, c, 1, 1))
                }
                Layer::Linear { out_features, .. } => OctavePair::plain(Shape::new(arg(0).high.n, *out_features, 1, 1)),
            };
            shapes.push(out);
        }
        Ok(shapes)
    }
}

impl ModelGraph<f32> {
    /// Copy of this model with every parameter converted to `U`.
    pub fn cast<U: Element>(&self) -> ModelGraph<U> {
        let mut params = ParamStore::new();
        for (_, p) in self.params.iter() {
            params
                .insert(p.name.clone(), p.tensor.cast::<U>(), p.trainable)
                .expect("names are already unique");
        }
        ModelGraph {
            config: self.config.clone(),
            nodes: self.nodes.clone(),
            params,
            blocks: self.blocks.clone(),
            shortcuts: self.shortcuts.clone(),
        }
    }
}
