//! Block builders and the four named architectures.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::graph::{BlockInfo, BlockKind, BnParams, Layer, ModelGraph, Node, Shortcut};
use crate::nn::{ConvSpec, PoolSpec};
use crate::octave::{split_channels, OctavePath, OctaveSpec, OctaveWeights};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

pub const INPUT_SIZE: usize = 84;
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    Mobile,
    Octave,
    MobileOctave,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Mobile,
        Variant::Octave,
        Variant::MobileOctave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "kutralnet",
            Variant::Mobile => "kutralnet-mobile",
            Variant::Octave => "kutralnet-octave",
            Variant::MobileOctave => "kutralnet-mobile-octave",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let key = key.strip_prefix("kutralnet-").unwrap_or(&key);
        match key {
            "kutralnet" | "baseline" => Ok(Variant::Baseline),
            "mobile" => Ok(Variant::Mobile),
            "octave" => Ok(Variant::Octave),
            "mobile-octave" | "mobileoctave" => Ok(Variant::MobileOctave),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

/// How blocks 2 and 3 halve the spatial extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downsample {
    /// Stride-1 block followed by a 2×2 max-pool.
    MaxPool,
    /// Stride-2 convolution inside the block.
    Strided,
}

/// Structure of blocks 2 and 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockForm {
    Conv,
    InvertedResidual,
}

/// Structure of the final (bottleneck) block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalForm {
    /// 1×1 reduce, 3×3 conv, batch-norm.
    Dense,
    /// 1×1 reduce, depth-wise 3×3, 1×1, batch-norm.
    DepthwiseSeparable,
    /// Inverted residual block with the third expansion factor.
    InvertedResidual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    /// Output widths of blocks 1 to 3.
    pub blocks: [usize; 3],
    /// Output width of the final block; equals the block-2 width for the shortcut.
    pub bottleneck: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub channel_plan: ChannelPlan,
    pub alpha: f64,
    pub block_form: BlockForm,
    /// Expansion factors of the inverted residual blocks 2, 3 and 4.
    pub expansion: [usize; 3],
    pub downsample: [Downsample; 2],
    pub final_form: FinalForm,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn preset(variant: Variant) -> Self {
        let base = Self {
            variant,
            input_size: INPUT_SIZE,
            channel_plan: ChannelPlan {
                blocks: [32, 64, 128],
                bottleneck: 64,
            },
            alpha: 0.0,
            block_form: BlockForm::Conv,
            expansion: [1, 1, 1],
            downsample: [Downsample::MaxPool; 2],
            final_form: FinalForm::Dense,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        };
        match variant {
            Variant::Baseline => base,
            Variant::Mobile => Self {
                block_form: BlockForm::InvertedResidual,
                expansion: [1, 3, 5],
                final_form: FinalForm::InvertedResidual,
                ..base
            },
            Variant::Octave => Self {
                channel_plan: ChannelPlan {
                    blocks: [64, 64, 128],
                    bottleneck: 64,
                },
                alpha: 0.5,
                downsample: [Downsample::Strided, Downsample::MaxPool],
                final_form: FinalForm::DepthwiseSeparable,
                ..base
            },
            Variant::MobileOctave => Self {
                alpha: 0.5,
                block_form: BlockForm::InvertedResidual,
                expansion: [3, 5, 4],
                downsample: [Downsample::MaxPool, Downsample::Strided],
                final_form: FinalForm::InvertedResidual,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.channel_plan.blocks.contains(&0) || self.channel_plan.bottleneck == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.channel_plan.blocks[1] != self.channel_plan.bottleneck {
            return Err(Error::Config(format!(
                "shortcut needs block-2 width {} to equal the bottleneck width {}",
                self.channel_plan.blocks[1], self.channel_plan.bottleneck
            )));
        }
        if self.expansion.contains(&0) {
            return Err(Error::Config("expansion factors must be at least 1".into()));
        }
        if !(self.leaky_slope.is_finite() && self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return Err(Error::Config("invalid slope, epsilon or momentum".into()));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        json.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Incrementally assembles a [`ModelGraph`] with seeded initialization.
pub struct GraphBuilder<T: Element> {
    nodes: Vec<Node>,
    params: ParamStore<T>,
    blocks: Vec<BlockInfo>,
    shortcuts: Vec<Shortcut>,
    rng: ChaCha8Rng,
    slope: f64,
}

impl<T: Element> GraphBuilder<T> {
    pub fn new(seed: u64, slope: f64) -> Self {
        Self {
            nodes: vec![Node {
                name: "input".into(),
                layer: Layer::Input,
                inputs: vec![],
            }],
            params: ParamStore::new(),
            blocks: Vec::new(),
            shortcuts: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            slope,
        }
    }

    pub fn input(&self) -> usize {
        0
    }

    fn push(&mut self, name: String, layer: Layer, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node { name, layer, inputs });
        self.nodes.len() - 1
    }

    fn uniform_param(&mut self, name: String, shape: Shape, fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng);
        self.params.insert(name, t, true)
    }

    pub fn conv(&mut self, name: &str, input: usize, spec: OctaveSpec) -> Result<usize> {
        spec.validate()?;
        let mut ids = [None; 4];
        for (slot, path) in ids.iter_mut().zip(OctavePath::ALL) {
            if let Some(s) = spec.path_spec(path) {
                let pname = if spec.is_vanilla() {
                    format!("{name}.weight")
                } else {
                    format!("{name}.{}.weight", path.tag())
                };
                let fan_in = s.in_per_group() * s.kernel.0 * s.kernel.1;
                *slot = Some(self.uniform_param(pname, s.weight_shape(), fan_in)?);
            }
        }
        let weights = OctaveWeights {
            hh: ids[0],
            hl: ids[1],
            lh: ids[2],
            ll: ids[3],
        };
        Ok(self.push(name.into(), Layer::Conv { spec, weights }, vec![input]))
    }

    /// Affine batch-norm over a `channels`-wide map split by `alpha`.
    pub fn batch_norm(&mut self, name: &str, input: usize, channels: usize, alpha: f64) -> Result<usize> {
        let (hi, lo) = split_channels(channels, alpha);
        let mut parts = vec![(if alpha > 0.0 { ".high" } else { "" }, hi)];
        if lo > 0 {
            parts.push((".low", lo));
        }
        let mut branches = Vec::new();
        for (suffix, c) in parts {
            let s = Shape::new(1, c, 1, 1);
            let prefix = format!("{name}{suffix}");
            branches.push(BnParams {
                gamma: self
                    .params
                    .insert(format!("{prefix}.weight"), Tensor::full(s, T::one()), true)?,
                beta: self.params.insert(format!("{prefix}.bias"), Tensor::zeros(s), true)?,
                running_mean: self
                    .params
                    .insert(format!("{prefix}.running_mean"), Tensor::zeros(s), false)?,
                running_var: self
                    .params
                    .insert(format!("{prefix}.running_var"), Tensor::full(s, T::one()), false)?,
            });
        }
        Ok(self.push(name.into(), Layer::BatchNorm { branches }, vec![input]))
    }

    pub fn leaky_relu(&mut self, name: &str, input: usize) -> usize {
        let slope = self.slope;
        self.push(name.into(), Layer::LeakyRelu { slope }, vec![input])
    }

    pub fn max_pool(&mut self, name: &str, input: usize) -> usize {
        self.push(name.into(), Layer::MaxPool { spec: PoolSpec::HALVE }, vec![input])
    }

    pub fn add(&mut self, name: &str, a: usize, b: usize) -> usize {
        self.push(name.into(), Layer::Add, vec![a, b])
    }

    pub fn global_avg_pool(&mut self, name: &str, input: usize) -> usize {
        self.push(name.into(), Layer::GlobalAvgPool, vec![input])
    }

    pub fn linear(&mut self, name: &str, input: usize, in_features: usize, out_features: usize) -> Result<usize> {
        let weight = self.uniform_param(
            format!("{name}.weight"),
            Shape::new(out_features, in_features, 1, 1),
            in_features,
        )?;
        let bias = self.uniform_param(format!("{name}.bias"), Shape::new(1, out_features, 1, 1), in_features)?;
        Ok(self.push(
            name.into(),
            Layer::Linear {
                in_features,
                out_features,
                weight,
                bias,
            },
            vec![input],
        ))
    }

    pub fn record_block(&mut self, name: &str, kind: BlockKind) {
        self.blocks.push(BlockInfo {
            name: name.into(),
            kind,
        });
    }

    pub fn record_shortcut(&mut self, from: usize, junction: usize) {
        self.shortcuts.push(Shortcut {
            from: self.nodes[from].name.clone(),
            junction: self.nodes[junction].name.clone(),
        });
    }

    pub fn finish(self, config: ModelConfig) -> ModelGraph<T> {
        ModelGraph {
            config,
            nodes: self.nodes,
            params: self.params,
            blocks: self.blocks,
            shortcuts: self.shortcuts,
        }
    }
}

/// Conv 3×3 (no bias) → batch-norm → LeakyReLU → optional 2×2 max-pool.
#[allow(clippy::too_many_arguments)]
pub fn conv_block<T: Element>(
    b: &mut GraphBuilder<T>,
    name: &str,
    input: usize,
    in_ch: usize,
    out_ch: usize,
    alpha_in: f64,
    alpha: f64,
    downsample: Downsample,
) -> Result<usize> {
    let stride = if downsample == Downsample::Strided { 2 } else { 1 };
    let spec = OctaveSpec::new(ConvSpec::new(in_ch, out_ch, 3).with_stride(stride), alpha_in, alpha);
    let x = b.conv(&format!("{name}.conv"), input, spec)?;
    let x = b.batch_norm(&format!("{name}.bn"), x, out_ch, alpha)?;
    let mut x = b.leaky_relu(&format!("{name}.act"), x);
    if downsample == Downsample::MaxPool {
        x = b.max_pool(&format!("{name}.pool"), x);
    }
    b.record_block(name, BlockKind::Conv { in_ch, out_ch });
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvertedResidualSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub expansion: usize,
    /// Zero builds plain layers; positive builds the octave form on pair inputs.
    pub alpha: f64,
}

/// 1×1 expand → BN → LeakyReLU → depth-wise 3×3 → BN → LeakyReLU → 1×1 project → BN,
/// plus an identity residual when the stride is 1 and the widths agree.
pub fn inverted_residual<T: Element>(
    b: &mut GraphBuilder<T>,
    name: &str,
    input: usize,
    spec: InvertedResidualSpec,
) -> Result<usize> {
    let InvertedResidualSpec {
        in_ch,
        out_ch,
        stride,
        expansion,
        alpha,
    } = spec;
    if expansion == 0 {
        return Err(Error::Config(format!("{name}: expansion must be at least 1")));
    }
    let hidden = in_ch * expansion;
    let mut x = input;
    if expansion != 1 {
        let s = OctaveSpec::new(ConvSpec::pointwise(in_ch, hidden), alpha, alpha);
        x = b.conv(&format!("{name}.expand"), x, s)?;
        x = b.batch_norm(&format!("{name}.expand_bn"), x, hidden, alpha)?;
        x = b.leaky_relu(&format!("{name}.expand_act"), x);
    }
    let dw = OctaveSpec::depthwise(hidden, 3, alpha).with_stride(stride);
    x = b.conv(&format!("{name}.dw"), x, dw)?;
    x = b.batch_norm(&format!("{name}.dw_bn"), x, hidden, alpha)?;
    x = b.leaky_relu(&format!("{name}.dw_act"), x);
    let project = OctaveSpec::new(ConvSpec::pointwise(hidden, out_ch), alpha, alpha);
    x = b.conv(&format!("{name}.project"), x, project)?;
    x = b.batch_norm(&format!("{name}.project_bn"), x, out_ch, alpha)?;
    let residual = stride == 1 && in_ch == out_ch;
    if residual {
        x = b.add(&format!("{name}.residual"), x, input);
        b.record_shortcut(input, x);
    }
    b.record_block(
        name,
        BlockKind::InvertedResidual {
            in_ch,
            out_ch,
            stride,
            expansion,
            residual,
        },
    );
    Ok(x)
}

/// Inverted residual block whose convolutions are all octave convolutions.
pub fn mobile_octave_block<T: Element>(
    b: &mut GraphBuilder<T>,
    name: &str,
    input: usize,
    spec: InvertedResidualSpec,
) -> Result<usize> {
    inverted_residual(b, name, input, spec)
}

/// Builds the graph described by `config`, initializing weights from `seed`.
pub fn build_model<T: Element>(config: &ModelConfig, seed: u64) -> Result<ModelGraph<T>> {
    config.validate()?;
    let a = config.alpha;
    let [w1, w2, w3] = config.channel_plan.blocks;
    let bott = config.channel_plan.bottleneck;
    let mut b = GraphBuilder::<T>::new(seed, config.leaky_slope);

    let input = b.input();
    let x = conv_block(&mut b, "block1", input, 3, w1, 0.0, a, Downsample::MaxPool)?;
    let stages = [("block2", w1, w2), ("block3", w2, w3)];
    let mut x = x;
    let mut block2_out = x;
    for (i, (name, cin, cout)) in stages.into_iter().enumerate() {
        let ds = config.downsample[i];
        x = match config.block_form {
            BlockForm::Conv => conv_block(&mut b, name, x, cin, cout, a, a, ds)?,
            BlockForm::InvertedResidual => {
                let stride = if ds == Downsample::Strided { 2 } else { 1 };
                let spec = InvertedResidualSpec {
                    in_ch: cin,
                    out_ch: cout,
                    stride,
                    expansion: config.expansion[i],
                    alpha: a,
                };
                let y = inverted_residual(&mut b, name, x, spec)?;
                if ds == Downsample::MaxPool {
                    b.max_pool(&format!("{name}.pool"), y)
                } else {
                    y
                }
            }
        };
        if i == 0 {
            block2_out = x;
        }
    }

    let y = match config.final_form {
        FinalForm::Dense | FinalForm::DepthwiseSeparable => {
            let reduce = OctaveSpec::new(ConvSpec::pointwise(w3, bott), a, a);
            let mut y = b.conv("block4.reduce", x, reduce)?;
            if config.final_form == FinalForm::Dense {
                y = b.conv("block4.conv", y, OctaveSpec::new(ConvSpec::new(bott, bott, 3), a, a))?;
            } else {
                y = b.conv("block4.dw", y, OctaveSpec::depthwise(bott, 3, a))?;
                y = b.conv("block4.pw", y, OctaveSpec::new(ConvSpec::pointwise(bott, bott), a, a))?;
            }
            y = b.batch_norm("block4.bn", y, bott, a)?;
            b.record_block(
                "block4",
                BlockKind::Bottleneck {
                    in_ch: w3,
                    out_ch: bott,
                },
            );
            y
        }
        FinalForm::InvertedResidual => {
            let spec = InvertedResidualSpec {
                in_ch: w3,
                out_ch: bott,
                stride: 1,
                expansion: config.expansion[2],
                alpha: a,
            };
            inverted_residual(&mut b, "block4", x, spec)?
        }
    };

    let s = b.max_pool("shortcut.pool", block2_out);
    let s = b.batch_norm("shortcut.bn", s, bott, a)?;
    let j = b.add("junction", y, s);
    b.record_shortcut(block2_out, j);
    let h = b.leaky_relu("head.act", j);
    let h = b.global_avg_pool("head.pool", h);
    let _ = b.linear("head.fc", h, bott, NUM_CLASSES)?;
    b.record_block("head", BlockKind::Head);

    let graph = b.finish(config.clone());
    graph
        .node_shapes(graph.input_shape(1))
        .map_err(|e| Error::Config(format!("{} graph is not shape-consistent: {e}", config.variant)))?;
    Ok(graph)
}

/// Preset architecture for `variant`.
pub fn build_variant<T: Element>(variant: Variant, seed: u64) -> Result<ModelGraph<T>> {
    build_model(&ModelConfig::preset(variant), seed)
}
