//! Multidimensional interactive attention block: pooled channel and spatial
//! descriptors, a bottleneck MLP gate and a 7x7 convolutional gate, rank-1
//! multiplicative fusion of the two, and elementwise recalibration of the
//! input. Differentiable end to end through the autograd graph.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Spatial extent of the spatial-gate convolution kernel.
pub const SPATIAL_KERNEL: usize = 7;
/// Zero padding that keeps the 7x7 convolution output at HxW.
pub const SPATIAL_PADDING: usize = 3;

/// Parameters of one attention block for feature maps with `channels`
/// channels. The MLP bottleneck compresses channels by `reduction`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiaBlock {
    channels: usize,
    reduction: usize,
    bottleneck: usize,
    /// First projection, (bottleneck, channels).
    pub w1: Tensor,
    /// (bottleneck,)
    pub b1: Tensor,
    /// Second projection, (channels, bottleneck).
    pub w2: Tensor,
    /// (channels,)
    pub b2: Tensor,
    /// Single-channel 7x7 filter, (1,1,7,7).
    pub conv_kernel: Tensor,
    /// (1,)
    pub conv_bias: Tensor,
}

/// Intermediates of one forward pass, kept for diagnostics and export.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    /// Pooled channel descriptor, (N,C).
    pub z: Tensor,
    /// Channel-averaged spatial descriptor, (N,H,W).
    pub m: Tensor,
    /// Channel gate, (N,C), elements in (0,1).
    pub wc: Tensor,
    /// Spatial gate, (N,H,W), elements in (0,1).
    pub ws: Tensor,
    /// Fused attention, (N,C,H,W): a[n,c,i,j] = wc[n,c] * ws[n,i,j].
    pub a: Tensor,
}

/// Graph nodes of an attention block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct MiaParamNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub conv_kernel: NodeId,
    pub conv_bias: NodeId,
}

/// Graph nodes of the forward intermediates.
#[derive(Clone, Copy, Debug)]
pub struct MiaNodes {
    pub z: NodeId,
    pub m: NodeId,
    pub wc: NodeId,
    pub ws: NodeId,
    pub a: NodeId,
    pub out: NodeId,
}

impl MiaBlock {
    /// Bottleneck width: C/r when r divides C and C >= r, otherwise
    /// max(1, round(C/r)).
    pub fn bottleneck_width(channels: usize, reduction: usize) -> usize {
        assert!(channels > 0 && reduction > 0);
        if channels >= reduction && channels.is_multiple_of(reduction) {
            channels / reduction
        } else {
            ((channels as f64 / reduction as f64).round() as usize).max(1)
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(channels: usize, reduction: usize, rng: &mut Rng) -> MiaBlock {
        let bw = Self::bottleneck_width(channels, reduction);
        let lim1 = glorot_limit(channels, bw);
        let lim2 = glorot_limit(bw, channels);
        let limk = glorot_limit(SPATIAL_KERNEL * SPATIAL_KERNEL, SPATIAL_KERNEL * SPATIAL_KERNEL);
        MiaBlock {
            channels,
            reduction,
            bottleneck: bw,
            w1: Tensor::rand_uniform(&[bw, channels], -lim1, lim1, rng),
            b1: Tensor::zeros(&[bw]),
            w2: Tensor::rand_uniform(&[channels, bw], -lim2, lim2, rng),
            b2: Tensor::zeros(&[channels]),
            conv_kernel: Tensor::rand_uniform(&[1, 1, SPATIAL_KERNEL, SPATIAL_KERNEL], -limk, limk, rng),
            conv_bias: Tensor::zeros(&[1]),
        }
    }

    /// All-zero parameters; both gates then sit at sigmoid(0) = 0.5.
    pub fn zeros(channels: usize, reduction: usize) -> MiaBlock {
        let bw = Self::bottleneck_width(channels, reduction);
        MiaBlock {
            channels,
            reduction,
            bottleneck: bw,
            w1: Tensor::zeros(&[bw, channels]),
            b1: Tensor::zeros(&[bw]),
            w2: Tensor::zeros(&[channels, bw]),
            b2: Tensor::zeros(&[channels]),
            conv_kernel: Tensor::zeros(&[1, 1, SPATIAL_KERNEL, SPATIAL_KERNEL]),
            conv_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn bottleneck(&self) -> usize {
        self.bottleneck
    }

    /// Total trainable elements: W1 + W2 + b1 + b2 + kernel + conv bias.
    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
            + self.conv_kernel.len() + self.conv_bias.len()
    }

    /// Pooled channel descriptor z[n,c] = mean over (i,j) of x[n,c,i,j].
    pub fn channel_descriptor(x: &Tensor) -> Result<Tensor> {
        require_4d("channel_descriptor", x)?;
        crate::tensor::reduce_mean(x, &[2, 3])
    }

    /// Spatial descriptor m[n,i,j] = mean over c of x[n,c,i,j].
    pub fn spatial_descriptor(x: &Tensor) -> Result<Tensor> {
        require_4d("spatial_descriptor", x)?;
        crate::tensor::reduce_mean(x, &[1])
    }

    /// Channel gate wc = sigmoid(W2 relu(W1 z + b1) + b2), per batch row.
    pub fn channel_weights(&self, z: &Tensor) -> Result<Tensor> {
        if z.rank() != 2 || z.dims()[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "channel_weights",
                detail: format!("expected (N,{}), got {}", self.channels, z.shape()),
            });
        }
        let mut g = Graph::new();
        let zc = g.constant(z.clone());
        let p = self.register(&mut g, false);
        let wc = record_channel_gate(&mut g, zc, p.w1, p.b1, p.w2, p.b2)?;
        Ok(g.value(wc).clone())
    }

    /// Spatial gate ws = sigmoid(conv7x7(m) + bias), same-size output.
    pub fn spatial_weights(&self, m: &Tensor) -> Result<Tensor> {
        if m.rank() != 3 {
            return Err(Error::ShapeMismatch {
                op: "spatial_weights",
                detail: format!("expected (N,H,W), got {}", m.shape()),
            });
        }
        let mut g = Graph::new();
        let mc = g.constant(m.clone());
        let p = self.register(&mut g, false);
        let ws = record_spatial_gate(&mut g, mc, m.dims(), &p)?;
        Ok(g.value(ws).clone())
    }

    /// Rank-1 fusion a[n,c,i,j] = wc[n,c] * ws[n,i,j].
    pub fn fuse_attention(wc: &Tensor, ws: &Tensor) -> Result<Tensor> {
        if wc.rank() != 2 || ws.rank() != 3 || wc.dims()[0] != ws.dims()[0] {
            return Err(Error::ShapeMismatch {
                op: "fuse_attention",
                detail: format!("wc {} vs ws {}", wc.shape(), ws.shape()),
            });
        }
        let (n, c) = (wc.dims()[0], wc.dims()[1]);
        let (h, w) = (ws.dims()[1], ws.dims()[2]);
        let wc4 = wc.reshaped(&[n, c, 1, 1])?;
        let ws4 = ws.reshaped(&[n, 1, h, w])?;
        crate::tensor::broadcast_mul(&wc4, &ws4)
    }

    /// Recalibration x'[n,c,i,j] = x[n,c,i,j] * a[n,c,i,j].
    pub fn apply_attention(x: &Tensor, a: &Tensor) -> Result<Tensor> {
        if x.dims() != a.dims() {
            return Err(Error::ShapeMismatch {
                op: "apply_attention",
                detail: format!("x {} vs a {}", x.shape(), a.shape()),
            });
        }
        crate::tensor::broadcast_mul(x, a)
    }

    /// Full pipeline on a plain tensor; returns the recalibrated features
    /// and every intermediate.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionMaps)> {
        require_4d("forward", x)?;
        if x.dims()[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("input has {} channels, block expects {}", x.dims()[1], self.channels),
            });
        }
        let mut g = Graph::new();
        let xc = g.constant(x.clone());
        let p = self.register(&mut g, false);
        let nodes = record_mia(&mut g, xc, &p)?;
        Ok((g.value(nodes.out).clone(), extract_maps(&g, &nodes)))
    }

    /// Register this block's tensors on a graph, as parameters when
    /// `trainable`, otherwise as constants.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> MiaParamNodes {
        let mut reg = |t: &Tensor| if trainable { g.parameter(t.clone()) } else { g.constant(t.clone()) };
        MiaParamNodes {
            w1: reg(&self.w1),
            b1: reg(&self.b1),
            w2: reg(&self.w2),
            b2: reg(&self.b2),
            conv_kernel: reg(&self.conv_kernel),
            conv_bias: reg(&self.conv_bias),
        }
    }
}

fn require_4d(op: &'static str, x: &Tensor) -> Result<()> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("expected (N,C,H,W), got {}", x.shape()),
        });
    }
    Ok(())
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn record_channel_gate(
    g: &mut Graph,
    z: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let h = g.matmul(z, w1, true)?; // (N,C) x (bw,C)^T -> (N,bw)
    let h = g.add(h, b1)?;
    let h = g.relu(h)?;
    let wc = g.matmul(h, w2, true)?; // (N,bw) x (C,bw)^T -> (N,C)
    let wc = g.add(wc, b2)?;
    g.sigmoid(wc)
}

fn record_spatial_gate(g: &mut Graph, m: NodeId, m_dims: &[usize], p: &MiaParamNodes) -> Result<NodeId> {
    let (n, h, w) = (m_dims[0], m_dims[1], m_dims[2]);
    let m4 = g.reshape(m, &[n, 1, h, w])?;
    let conv = g.conv2d(m4, p.conv_kernel, p.conv_bias, SPATIAL_PADDING)?;
    let ws4 = g.sigmoid(conv)?;
    g.reshape(ws4, &[n, h, w])
}

/// Record the full attention pipeline on `g`: descriptors, both gates,
/// rank-1 fusion, recalibration.
pub fn record_mia(g: &mut Graph, x: NodeId, p: &MiaParamNodes) -> Result<MiaNodes> {
    let dims = g.value(x).dims().to_vec();
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let z = g.reduce_mean(x, &[2, 3])?;
    let m = g.reduce_mean(x, &[1])?;
    let wc = record_channel_gate(g, z, p.w1, p.b1, p.w2, p.b2)?;
    let ws = record_spatial_gate(g, m, &[n, h, w], p)?;
    let wc4 = g.reshape(wc, &[n, c, 1, 1])?;
    let ws4 = g.reshape(ws, &[n, 1, h, w])?;
    let a = g.broadcast_mul(wc4, ws4)?;
    let out = g.broadcast_mul(x, a)?;
    Ok(MiaNodes { z, m, wc, ws, a, out })
}

/// Channel-only variant: the spatial gate is pinned to 1, so the output is
/// x recalibrated by the broadcast channel gate alone.
pub fn record_mia_channel_only(
    g: &mut Graph,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<MiaNodes> {
    let dims = g.value(x).dims().to_vec();
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let z = g.reduce_mean(x, &[2, 3])?;
    let m = g.reduce_mean(x, &[1])?;
    let wc = record_channel_gate(g, z, w1, b1, w2, b2)?;
    let ws = g.constant(Tensor::ones(&[n, h, w]));
    let wc4 = g.reshape(wc, &[n, c, 1, 1])?;
    let ws4 = g.reshape(ws, &[n, 1, h, w])?;
    let a = g.broadcast_mul(wc4, ws4)?;
    let out = g.broadcast_mul(x, a)?;
    Ok(MiaNodes { z, m, wc, ws, a, out })
}

/// Clone the intermediates out of a graph.
pub fn extract_maps(g: &Graph, nodes: &MiaNodes) -> AttentionMaps {
    AttentionMaps {
        z: g.value(nodes.z).clone(),
        m: g.value(nodes.m).clone(),
        wc: g.value(nodes.wc).clone(),
        ws: g.value(nodes.ws).clone(),
        a: g.value(nodes.a).clone(),
    }
}
