//! Reverse-mode differentiation over a linear tape of recorded ops.
//!
//! Every op appends one node holding its output value; `backward` walks the
//! nodes in exact reverse order and accumulates gradients into the inputs each
//! node recorded. Parameter leaves deposit their gradient into the owning
//! [`ParamStore`], additively: callers zero grads between optimizer steps.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{self, BnCache, ConvSpec, PoolSpec};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Element, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Running-statistic buffers a training-mode batch-norm should update.
#[derive(Clone, Copy, Debug)]
pub struct RunningStats {
    pub mean: ParamId,
    pub var: ParamId,
}

pub struct BatchNormArgs<'a, T: Element> {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: &'a [T],
    pub running_var: &'a [T],
    pub eps: T,
    pub momentum: T,
    pub training: bool,
    pub stats: Option<RunningStats>,
}

#[derive(Clone, Debug)]
pub struct RunningUpdate<T: Element> {
    pub stats: RunningStats,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T: Element> {
    Constant,
    Variable,
    Param(ParamId),
    Add(Var, Var),
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        spec: PoolSpec,
    },
    GlobalAvgPool(Var),
    Upsample(Var),
    Concat(Var, Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    WeightedSum {
        input: Var,
        coeffs: Tensor<T>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    running: Vec<RunningUpdate<T>>,
    /// Index of the first recorded value containing NaN or infinity.
    first_non_finite: Option<usize>,
}

/// Outcome of a backward pass.
#[derive(Debug)]
pub struct BackwardReport<T: Element = f32> {
    /// Number of distinct parameter leaves that received a gradient.
    pub params_reached: usize,
    /// Set when no parameter or variable is reachable from the loss.
    pub detached: bool,
    variable_grads: HashMap<Var, Tensor<T>>,
}

impl<T: Element> BackwardReport<T> {
    /// Gradient of a leaf created with [`Tape::variable`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.variable_grads.get(&v)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            running: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Position of the first non-finite value recorded, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.first_non_finite
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        if self.first_non_finite.is_none() && !value.data().iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.detached(), Op::Constant)
    }

    /// A non-parameter leaf whose gradient is reported by `backward`.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t.detached(), Op::Variable)
    }

    /// Records the current value of a stored parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).detached(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::elementwise_add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = nn::conv2d(
            self.value(input),
            &spec,
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                spec,
            },
        ))
    }

    pub fn batch_norm(&mut self, input: Var, args: BatchNormArgs<'_, T>) -> Result<Var> {
        let (out, cache) = nn::batch_norm_forward(
            self.value(input),
            self.value(args.gamma).data(),
            self.value(args.beta).data(),
            args.running_mean,
            args.running_var,
            args.eps,
            args.training,
        )?;
        if let (Some(stats), Some((mean, var))) = (args.stats, cache.batch_stats.as_ref()) {
            let mut new_mean = args.running_mean.to_vec();
            let mut new_var = args.running_var.to_vec();
            nn::norm::update_running(&mut new_mean, mean, args.momentum);
            nn::norm::update_running(&mut new_var, var, args.momentum);
            self.running.push(RunningUpdate {
                stats,
                mean: new_mean,
                var: new_var,
            });
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma: args.gamma,
                beta: args.beta,
                cache,
            },
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let out = nn::leaky_relu(self.value(input), slope);
        self.push(out, Op::LeakyRelu { input, slope })
    }

    pub fn max_pool2d(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let (out, argmax) = nn::max_pool2d(self.value(input), spec)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn avg_pool2d(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let out = nn::avg_pool2d(self.value(input), spec)?;
        Ok(self.push(out, Op::AvgPool { input, spec }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Var {
        let out = nn::global_avg_pool(self.value(input));
        self.push(out, Op::GlobalAvgPool(input))
    }

    pub fn upsample_nearest(&mut self, input: Var, out_h: usize, out_w: usize) -> Var {
        let out = nn::upsample_nearest(self.value(input), out_h, out_w);
        self.push(out, Op::Upsample(input))
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::ShapeMismatch { left: sa, right: sb });
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&ta.data()[n * la..(n + 1) * la]);
            data.extend_from_slice(&tb.data()[n * lb..(n + 1) * lb]);
        }
        let out = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = nn::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    /// Scalar mean cross-entropy loss.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = nn::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Scalar `Σ input[i] · coeffs[i]`, accumulated in f64.
    pub fn weighted_sum(&mut self, input: Var, coeffs: Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != coeffs.shape() {
            return Err(Error::ShapeMismatch {
                left: x.shape(),
                right: coeffs.shape(),
            });
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(coeffs.data())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        Ok(self.push(Tensor::scalar(T::of_f64(s)), Op::WeightedSum { input, coeffs }))
    }

    /// Batch-norm running-statistic updates produced by training-mode forwards.
    pub fn running_updates(&self) -> &[RunningUpdate<T>] {
        &self.running
    }

    pub fn apply_running_updates(&self, store: &mut ParamStore<T>) {
        for u in &self.running {
            store.get_mut(u.stats.mean).data_mut().copy_from_slice(&u.mean);
            store.get_mut(u.stats.var).data_mut().copy_from_slice(&u.var);
        }
    }

    /// Accumulates `∂loss/∂param` into every parameter recorded on the tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<BackwardReport<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let ls = self.shape(loss);
        if ls != Shape::SCALAR {
            return Err(Error::NonScalarLoss(ls));
        }
        if self.first_non_finite.is_some() {
            return Err(Error::NonFinite("forward value"));
        }
        // Parameters on the tape always end up with a (possibly zero) gradient.
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                store.ensure_grad(id);
            }
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut reached = std::collections::HashSet::new();
        let mut variable_grads = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Variable => {
                    variable_grads.insert(Var(i), g);
                }
                Op::Param(id) => {
                    reached.insert(*id);
                    let dst = store.get_mut(*id).grad_mut();
                    dst.iter_mut().zip(g.data()).for_each(|(d, &v)| *d += v);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let cg = nn::conv2d_backward(self.value(*input), spec, self.value(*weight), &g)?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *weight, cg.weight);
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    cache,
                } => {
                    let gamma_v = self.value(*gamma);
                    let (dx, dg, db) = nn::batch_norm_backward(&g, cache, gamma_v.data());
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *gamma, Tensor::from_vec(gamma_v.shape(), dg)?);
                    accumulate(&mut grads, *beta, Tensor::from_vec(gamma_v.shape(), db)?);
                }
                Op::LeakyRelu { input, slope } => {
                    let dx = nn::leaky_relu_backward(self.value(*input), &g, *slope);
                    accumulate(&mut grads, *input, dx);
                }
                Op::MaxPool { input, argmax } => {
                    let dx = nn::max_pool2d_backward(self.shape(*input), argmax, &g);
                    accumulate(&mut grads, *input, dx);
                }
                Op::AvgPool { input, spec } => {
                    let dx = nn::avg_pool2d_backward(self.shape(*input), *spec, &g)?;
                    accumulate(&mut grads, *input, dx);
                }
                Op::GlobalAvgPool(input) => {
                    let dx = nn::global_avg_pool_backward(self.shape(*input), &g);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Upsample(input) => {
                    let dx = nn::upsample_nearest_backward(self.shape(*input), &g);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
                    let mut ga = Vec::with_capacity(sa.numel());
                    let mut gb = Vec::with_capacity(sb.numel());
                    for chunk in g.data().chunks(la + lb) {
                        ga.extend_from_slice(&chunk[..la]);
                        gb.extend_from_slice(&chunk[la..]);
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(sa, ga)?);
                    accumulate(&mut grads, *b, Tensor::from_vec(sb, gb)?);
                }
                Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) = nn::linear_backward(self.value(*input), self.value(*weight), &g);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    if let Some(b) = bias {
                        let bs = self.shape(*b);
                        accumulate(&mut grads, *b, db.reshape(bs)?);
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let dx = nn::cross_entropy_backward(probs, labels, g.data()[0]);
                    accumulate(&mut grads, *logits, dx);
                }
                Op::WeightedSum { input, coeffs } => {
                    let up = g.data()[0];
                    accumulate(&mut grads, *input, coeffs.map(|c| c * up));
                }
            }
        }
        let detached = reached.is_empty() && variable_grads.is_empty();
        if detached {
            log::warn!("backward: no parameter is reachable from the loss");
        }
        Ok(BackwardReport {
            params_reached: reached.len(),
            detached,
            variable_grads,
        })
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
