//! Small differentiable networks hosting the attention block: a two-stage
//! CNN classifier, an encoder-decoder segmenter with one skip connection
//! and attention at the bottleneck, and a pool-free CNN for tabular flows
//! laid out as (N,1,1,F) images. Each comes in three variants for
//! controlled A/B runs: full attention, channel-only, or none.

use crate::attention::{self, AttentionMaps, MiaBlock, MiaNodes, MiaParamNodes};
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which attention block the model was built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Full channel x spatial attention.
    Mia,
    /// Channel gate only; the spatial gate is pinned to 1.
    SeOnly,
    /// Attention layers are the identity.
    None,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Mia => "mia",
            Variant::SeOnly => "se_only",
            Variant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "mia" => Ok(Variant::Mia),
            "se_only" => Ok(Variant::SeOnly),
            "none" => Ok(Variant::None),
            other => Err(Error::InvalidConfig {
                detail: format!("unknown variant '{other}' (expected mia, se_only, or none)"),
            }),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture identity, enough to rebuild a parameter skeleton.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    MiniCnn { in_c: usize, h: usize, w: usize, classes: usize },
    MiniSegnet { h: usize, w: usize },
    MiniFlows { features: usize, classes: usize },
}

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

/// Attention wiring of one mia layer (indices into `Model::params`).
#[derive(Clone, Debug)]
enum Attn {
    Full { w1: usize, b1: usize, w2: usize, b2: usize, kernel: usize, bias: usize },
    ChannelOnly { w1: usize, b1: usize, w2: usize, b2: usize },
    Off,
}

#[derive(Clone, Debug)]
enum Layer {
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { w: usize, b: usize },
    Relu,
    MaxPool2x2,
    Mia { channels: usize, attn: Attn },
    /// Nearest-neighbor 2x upsampling.
    Upsample2x,
    /// Channel concatenation of the current activation with the output of
    /// an earlier layer.
    ConcatSkip { source: usize, cur_channels: usize, skip_channels: usize },
    Flatten,
    /// y = x W^T + b with W stored (out, in).
    Linear { w: usize, b: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OutputActivation {
    Logits,
    Sigmoid,
}

/// An ordered layer stack plus its named parameters.
#[derive(Clone, Debug)]
pub struct Model {
    arch: Arch,
    variant: Variant,
    reduction: usize,
    layers: Vec<Layer>,
    params: Vec<NamedParam>,
    output_activation: OutputActivation,
}

/// Result of recording a model forward on a graph.
pub struct ForwardPass {
    pub output: NodeId,
    /// Node ids aligned with `Model::params` order.
    pub param_ids: Vec<NodeId>,
    mia_nodes: Vec<MiaNodes>,
}

struct Builder {
    layers: Vec<Layer>,
    params: Vec<NamedParam>,
    rng: Rng,
}

impl Builder {
    fn new(seed: u64) -> Builder {
        Builder { layers: Vec::new(), params: Vec::new(), rng: Rng::new(seed) }
    }

    fn push_param(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.params.push(NamedParam { name: name.into(), tensor });
        self.params.len() - 1
    }

    fn conv3x3(&mut self, name: &str, in_c: usize, out_c: usize) {
        let lim = (6.0 / ((in_c + out_c) * 9) as f64).sqrt();
        let w = Tensor::rand_uniform(&[out_c, in_c, 3, 3], -lim, lim, &mut self.rng);
        let wi = self.push_param(format!("{name}.weight"), w);
        let bi = self.push_param(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        self.layers.push(Layer::Conv3x3 { w: wi, b: bi });
    }

    fn linear(&mut self, name: &str, in_f: usize, out_f: usize) {
        let lim = (6.0 / (in_f + out_f) as f64).sqrt();
        let w = Tensor::rand_uniform(&[out_f, in_f], -lim, lim, &mut self.rng);
        let wi = self.push_param(format!("{name}.weight"), w);
        let bi = self.push_param(format!("{name}.bias"), Tensor::zeros(&[out_f]));
        self.layers.push(Layer::Linear { w: wi, b: bi });
    }

    /// The block tensors are always drawn, whatever the variant, so that all
    /// variants built from one seed share the downstream parameter draws.
    fn mia(&mut self, name: &str, channels: usize, reduction: usize, variant: Variant) {
        let block = MiaBlock::init(channels, reduction, &mut self.rng);
        let attn = match variant {
            Variant::Mia => Attn::Full {
                w1: self.push_param(format!("{name}.w1"), block.w1),
                b1: self.push_param(format!("{name}.b1"), block.b1),
                w2: self.push_param(format!("{name}.w2"), block.w2),
                b2: self.push_param(format!("{name}.b2"), block.b2),
                kernel: self.push_param(format!("{name}.conv_kernel"), block.conv_kernel),
                bias: self.push_param(format!("{name}.conv_bias"), block.conv_bias),
            },
            Variant::SeOnly => Attn::ChannelOnly {
                w1: self.push_param(format!("{name}.w1"), block.w1),
                b1: self.push_param(format!("{name}.b1"), block.b1),
                w2: self.push_param(format!("{name}.w2"), block.w2),
                b2: self.push_param(format!("{name}.b2"), block.b2),
            },
            Variant::None => Attn::Off,
        };
        self.layers.push(Layer::Mia { channels, attn });
    }
}

/// Classifier: conv3x3(C->16) relu mia(16) pool conv3x3(16->32) relu mia(32)
/// pool flatten linear(-> classes). H and W must be divisible by 4.
pub fn build_mini_cnn(
    input: (usize, usize, usize),
    classes: usize,
    variant: Variant,
    reduction: usize,
    seed: u64,
) -> Result<Model> {
    let (in_c, h, w) = input;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::BadShape {
            detail: format!("mini_cnn input {h}x{w} must be divisible by 4"),
        });
    }
    if in_c == 0 || classes == 0 {
        return Err(Error::BadShape { detail: "channels and classes must be positive".into() });
    }
    let mut b = Builder::new(seed);
    b.conv3x3("conv1", in_c, 16);
    b.layers.push(Layer::Relu);
    b.mia("mia1", 16, reduction, variant);
    b.layers.push(Layer::MaxPool2x2);
    b.conv3x3("conv2", 16, 32);
    b.layers.push(Layer::Relu);
    b.mia("mia2", 32, reduction, variant);
    b.layers.push(Layer::MaxPool2x2);
    b.layers.push(Layer::Flatten);
    b.linear("fc", 32 * (h / 4) * (w / 4), classes);
    Ok(Model {
        arch: Arch::MiniCnn { in_c, h, w, classes },
        variant,
        reduction,
        layers: b.layers,
        params: b.params,
        output_activation: OutputActivation::Logits,
    })
}

/// Segmenter: one encoder stage, attention at the bottleneck, nearest
/// upsampling, one skip concatenation, and a sigmoid head emitting
/// per-pixel foreground probabilities. H and W must be even.
pub fn build_mini_segnet(
    input: (usize, usize, usize),
    variant: Variant,
    reduction: usize,
    seed: u64,
) -> Result<Model> {
    let (in_c, h, w) = input;
    if in_c != 1 {
        return Err(Error::BadShape {
            detail: format!("mini_segnet expects a single input channel, got {in_c}"),
        });
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::BadShape {
            detail: format!("mini_segnet input {h}x{w} must be divisible by 2"),
        });
    }
    let mut b = Builder::new(seed);
    b.conv3x3("enc1", 1, 8);
    b.layers.push(Layer::Relu); // layer index 1: skip source
    b.layers.push(Layer::MaxPool2x2);
    b.conv3x3("bottleneck", 8, 16);
    b.layers.push(Layer::Relu);
    b.mia("mia1", 16, reduction, variant);
    b.layers.push(Layer::Upsample2x);
    b.layers.push(Layer::ConcatSkip { source: 1, cur_channels: 16, skip_channels: 8 });
    b.conv3x3("dec1", 24, 8);
    b.layers.push(Layer::Relu);
    b.conv3x3("head", 8, 1);
    Ok(Model {
        arch: Arch::MiniSegnet { h, w },
        variant,
        reduction,
        layers: b.layers,
        params: b.params,
        output_activation: OutputActivation::Sigmoid,
    })
}

/// Pool-free classifier for flow records shaped (N,1,1,F): 1xF images keep
/// their width throughout, so max pooling never applies.
pub fn build_mini_flows(
    features: usize,
    classes: usize,
    variant: Variant,
    reduction: usize,
    seed: u64,
) -> Result<Model> {
    if features == 0 || classes == 0 {
        return Err(Error::BadShape { detail: "features and classes must be positive".into() });
    }
    let mut b = Builder::new(seed);
    b.conv3x3("conv1", 1, 16);
    b.layers.push(Layer::Relu);
    b.mia("mia1", 16, reduction, variant);
    b.conv3x3("conv2", 16, 16);
    b.layers.push(Layer::Relu);
    b.mia("mia2", 16, reduction, variant);
    b.layers.push(Layer::Flatten);
    b.linear("fc", 16 * features, classes);
    Ok(Model {
        arch: Arch::MiniFlows { features, classes },
        variant,
        reduction,
        layers: b.layers,
        params: b.params,
        output_activation: OutputActivation::Logits,
    })
}

impl Model {
    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    /// Declared per-sample input dims (C,H,W).
    pub fn input_dims(&self) -> (usize, usize, usize) {
        match self.arch {
            Arch::MiniCnn { in_c, h, w, .. } => (in_c, h, w),
            Arch::MiniSegnet { h, w } => (1, h, w),
            Arch::MiniFlows { features, .. } => (1, 1, features),
        }
    }

    /// Number of classes for classifier archs, None for the segmenter.
    pub fn classes(&self) -> Option<usize> {
        match self.arch {
            Arch::MiniCnn { classes, .. } => Some(classes),
            Arch::MiniSegnet { .. } => None,
            Arch::MiniFlows { classes, .. } => Some(classes),
        }
    }

    pub fn is_segmenter(&self) -> bool {
        matches!(self.arch, Arch::MiniSegnet { .. })
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Elements belonging to attention layers.
    pub fn mia_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("mia"))
            .map(|p| p.tensor.len())
            .sum()
    }

    /// (label, element count) per layer, in order.
    pub fn param_summary(&self) -> Vec<(String, usize)> {
        let count = |idxs: &[usize]| idxs.iter().map(|&i| self.params[i].tensor.len()).sum::<usize>();
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv3x3 { w, b } => {
                    let d = self.params[*w].tensor.dims().to_vec();
                    (format!("conv3x3 {}->{} [{}]", d[1], d[0], self.params[*w].name), count(&[*w, *b]))
                }
                Layer::Relu => ("relu".to_string(), 0),
                Layer::MaxPool2x2 => ("maxpool2x2".to_string(), 0),
                Layer::Mia { channels, attn } => match attn {
                    Attn::Full { w1, b1, w2, b2, kernel, bias } => (
                        format!("mia C={channels} r={}", self.reduction),
                        count(&[*w1, *b1, *w2, *b2, *kernel, *bias]),
                    ),
                    Attn::ChannelOnly { w1, b1, w2, b2 } => (
                        format!("mia[channel-only] C={channels} r={}", self.reduction),
                        count(&[*w1, *b1, *w2, *b2]),
                    ),
                    Attn::Off => (format!("mia[off] C={channels}"), 0),
                },
                Layer::Upsample2x => ("upsample2x".to_string(), 0),
                Layer::ConcatSkip { cur_channels, skip_channels, .. } => {
                    (format!("concat_skip {cur_channels}+{skip_channels}"), 0)
                }
                Layer::Flatten => ("flatten".to_string(), 0),
                Layer::Linear { w, b } => {
                    let d = self.params[*w].tensor.dims().to_vec();
                    (format!("linear {}->{} [{}]", d[1], d[0], self.params[*w].name), count(&[*w, *b]))
                }
            })
            .collect()
    }

    /// Serializable identity string, parseable by [`Model::from_tag`].
    pub fn tag(&self) -> String {
        let arch = match self.arch {
            Arch::MiniCnn { in_c, h, w, classes } => {
                format!("mini_cnn in={in_c} h={h} w={w} k={classes}")
            }
            Arch::MiniSegnet { h, w } => format!("mini_segnet h={h} w={w}"),
            Arch::MiniFlows { features, classes } => format!("mini_flows f={features} k={classes}"),
        };
        format!("{arch} r={} v={}", self.reduction, self.variant)
    }

    /// Rebuild a parameter skeleton from a tag; the caller is expected to
    /// overwrite every parameter (used by checkpoint loading).
    pub fn from_tag(tag: &str) -> Result<Model> {
        let bad = |detail: String| Error::ShapeMismatchOnLoad { detail };
        let mut fields = std::collections::HashMap::new();
        let mut words = tag.split_whitespace();
        let arch_name = words.next().ok_or_else(|| bad("empty tag".into()))?;
        for word in words {
            let (k, v) = word
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed tag field '{word}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .ok_or_else(|| bad(format!("tag missing field '{k}'")))?
                .parse::<usize>()
                .map_err(|_| bad(format!("tag field '{k}' is not a number")))
        };
        let variant = Variant::parse(
            fields.get("v").ok_or_else(|| bad("tag missing field 'v'".into()))?,
        )
        .map_err(|_| bad(format!("unknown variant in tag '{tag}'")))?;
        let r = get("r")?;
        match arch_name {
            "mini_cnn" => build_mini_cnn((get("in")?, get("h")?, get("w")?), get("k")?, variant, r, 0),
            "mini_segnet" => build_mini_segnet((1, get("h")?, get("w")?), variant, r, 0),
            "mini_flows" => build_mini_flows(get("f")?, get("k")?, variant, r, 0),
            other => Err(bad(format!("unknown architecture '{other}'"))),
        }
    }

    /// Record the whole network on `g`, registering every parameter as
    /// trainable. Returns the output node and parameter nodes aligned with
    /// `params()` order.
    pub fn forward_on(&self, g: &mut Graph, x: &Tensor) -> Result<ForwardPass> {
        let param_ids: Vec<NodeId> =
            self.params.iter().map(|p| g.parameter(p.tensor.clone())).collect();
        let (output, mia_nodes) = self.record_layers(g, &param_ids, x)?;
        Ok(ForwardPass { output, param_ids, mia_nodes })
    }

    /// Record the layer stack against already-registered parameter nodes
    /// (one per entry of `params()`, in order). The finite-difference
    /// harness uses this to tie the loss to its own parameter nodes.
    pub fn record_layers(
        &self,
        g: &mut Graph,
        param_ids: &[NodeId],
        x: &Tensor,
    ) -> Result<(NodeId, Vec<MiaNodes>)> {
        if param_ids.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: self.params.len(),
                right: param_ids.len(),
            });
        }
        let (c, h, w) = self.input_dims();
        if x.rank() != 4 || x.dims()[1] != c || x.dims()[2] != h || x.dims()[3] != w {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                detail: format!("input {} does not match declared (N,{c},{h},{w})", x.shape()),
            });
        }

        let mut cur = g.constant(x.clone());
        let mut layer_outs: Vec<NodeId> = Vec::with_capacity(self.layers.len());
        let mut mia_nodes = Vec::new();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv3x3 { w, b } => g.conv2d(cur, param_ids[*w], param_ids[*b], 1)?,
                Layer::Relu => g.relu(cur)?,
                Layer::MaxPool2x2 => g.max_pool(cur)?,
                Layer::Mia { attn, .. } => match attn {
                    Attn::Full { w1, b1, w2, b2, kernel, bias } => {
                        let p = MiaParamNodes {
                            w1: param_ids[*w1],
                            b1: param_ids[*b1],
                            w2: param_ids[*w2],
                            b2: param_ids[*b2],
                            conv_kernel: param_ids[*kernel],
                            conv_bias: param_ids[*bias],
                        };
                        let nodes = attention::record_mia(g, cur, &p)?;
                        mia_nodes.push(nodes);
                        nodes.out
                    }
                    Attn::ChannelOnly { w1, b1, w2, b2 } => {
                        let nodes = attention::record_mia_channel_only(
                            g,
                            cur,
                            param_ids[*w1],
                            param_ids[*b1],
                            param_ids[*w2],
                            param_ids[*b2],
                        )?;
                        mia_nodes.push(nodes);
                        nodes.out
                    }
                    Attn::Off => cur,
                },
                Layer::Upsample2x => record_upsample2x(g, cur)?,
                Layer::ConcatSkip { source, cur_channels, skip_channels } => {
                    record_concat_channels(g, cur, layer_outs[*source], *cur_channels, *skip_channels)?
                }
                Layer::Flatten => {
                    let d = g.value(cur).dims().to_vec();
                    g.reshape(cur, &[d[0], d[1] * d[2] * d[3]])?
                }
                Layer::Linear { w, b } => {
                    let y = g.matmul(cur, param_ids[*w], true)?;
                    g.add(y, param_ids[*b])?
                }
            };
            layer_outs.push(cur);
        }
        if self.output_activation == OutputActivation::Sigmoid {
            cur = g.sigmoid(cur)?;
        }
        Ok((cur, mia_nodes))
    }

    /// Plain forward: output tensor only.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let pass = self.forward_on(&mut g, x)?;
        Ok(g.value(pass.output).clone())
    }

    /// Forward that also clones out every attention layer's intermediates.
    pub fn predict_with_maps(&self, x: &Tensor) -> Result<(Tensor, Vec<AttentionMaps>)> {
        let mut g = Graph::new();
        let pass = self.forward_on(&mut g, x)?;
        let maps = pass.mia_nodes.iter().map(|n| attention::extract_maps(&g, n)).collect();
        Ok((g.value(pass.output).clone(), maps))
    }
}

/// Nearest-neighbor 2x upsampling composed from reshape and a broadcast
/// multiply by ones: (N,C,H,1,W,1) * (1,1,1,2,1,2) -> (N,C,H,2,W,2), which
/// reshapes row-major to (N,C,2H,2W).
fn record_upsample2x(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let d = g.value(x).dims().to_vec();
    let (n, c, h, w) = (d[0], d[1], d[2], d[3]);
    let expanded = g.reshape(x, &[n, c, h, 1, w, 1])?;
    let ones = g.constant(Tensor::ones(&[1, 1, 1, 2, 1, 2]));
    let tiled = g.broadcast_mul(expanded, ones)?;
    g.reshape(tiled, &[n, c, 2 * h, 2 * w])
}

/// Channel concatenation [a, b] expressed with constant 1x1 embedding
/// convolutions: each operand is mapped into its slice of the output
/// channel range and the two embeddings are summed.
fn record_concat_channels(
    g: &mut Graph,
    a: NodeId,
    b: NodeId,
    a_channels: usize,
    b_channels: usize,
) -> Result<NodeId> {
    let total = a_channels + b_channels;
    let mut ea = Tensor::zeros(&[total, a_channels, 1, 1]);
    for i in 0..a_channels {
        ea.data_mut()[i * a_channels + i] = 1.0;
    }
    let mut eb = Tensor::zeros(&[total, b_channels, 1, 1]);
    for i in 0..b_channels {
        eb.data_mut()[(a_channels + i) * b_channels + i] = 1.0;
    }
    let zero_bias = g.constant(Tensor::zeros(&[total]));
    let ea = g.constant(ea);
    let eb = g.constant(eb);
    let pa = g.conv2d(a, ea, zero_bias, 0)?;
    let pb = g.conv2d(b, eb, zero_bias, 0)?;
    g.add(pa, pb)
}
