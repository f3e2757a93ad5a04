//! Raw numeric kernels behind the differentiable ops: dense matmul, direct
//! 2-D convolution (stride 1, zero padding), and 2x2 max pooling, each with
//! its adjoint. All loops are plain and row-major; desk-scale inputs only.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// C = A x B with optional transposes: A is (m,k) [or (k,m) if `ta`],
/// B is (k,n) [or (n,k) if `tb`].
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("expected rank-2 operands, got {} and {}", a.shape(), b.shape()),
        });
    }
    let (m, ka) = if ta { (a.dims()[1], a.dims()[0]) } else { (a.dims()[0], a.dims()[1]) };
    let (kb, n) = if tb { (b.dims()[1], b.dims()[0]) } else { (b.dims()[0], b.dims()[1]) };
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("inner dims {ka} vs {kb} ({} x {})", a.shape(), b.shape()),
        });
    }
    let k = ka;
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = if ta { ad[p * m + i] } else { ad[i * k + p] };
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            if tb {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += av * bd[j * k + p];
                }
            } else {
                let brow = &bd[p * n..(p + 1) * n];
                for (slot, &bv) in row.iter_mut().zip(brow) {
                    *slot += av * bv;
                }
            }
        }
    }
    Tensor::from_dims(&[m, n], out)
}

/// Output spatial extent of a stride-1 convolution with zero padding.
fn conv_out_extent(input: usize, kernel: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel extent {kernel} exceeds padded input {padded}"),
        });
    }
    Ok(padded - kernel + 1)
}

/// Direct convolution: x (N,Ci,H,W), kernel (Co,Ci,KH,KW), bias (Co),
/// stride 1, zero padding `p` on all sides.
pub(crate) fn conv2d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor, p: usize) -> Result<Tensor> {
    if x.rank() != 4 || kernel.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("expected 4-D input and kernel, got {} and {}", x.shape(), kernel.shape()),
        });
    }
    let [n, ci, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [co, kci, kh, kw] = [kernel.dims()[0], kernel.dims()[1], kernel.dims()[2], kernel.dims()[3]];
    if kci != ci {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {ci} channels, kernel expects {kci}"),
        });
    }
    if bias.dims() != [co] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("bias shape {} does not match {co} output channels", bias.shape()),
        });
    }
    let oh = conv_out_extent(h, kh, p)?;
    let ow = conv_out_extent(w, kw, p)?;

    let xd = x.data();
    let kd = kernel.data();
    let bd = bias.data();
    let mut out = vec![0.0; n * co * oh * ow];
    for ni in 0..n {
        for oc in 0..co {
            let obase = (ni * co + oc) * oh * ow;
            out[obase..obase + oh * ow].fill(bd[oc]);
            for ic in 0..ci {
                let xbase = (ni * ci + ic) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = kd[((oc * ci + ic) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let orow = obase + oy * ow;
                            let xrow = xbase + iy as usize * w;
                            // ix = ox + kx - p must land in [0, w)
                            let ox_lo = (p as isize - kx as isize).max(0) as usize;
                            let ox_hi = (w as isize + p as isize - kx as isize).min(ow as isize).max(0) as usize;
                            for ox in ox_lo..ox_hi {
                                let ix = ox + kx - p;
                                out[orow + ox] += wv * xd[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_dims(&[n, co, oh, ow], out)
}

/// Adjoints of conv2d: gradients w.r.t. input, kernel, and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    p: usize,
) -> (Tensor, Tensor, Tensor) {
    let [n, ci, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [co, _, kh, kw] = [kernel.dims()[0], kernel.dims()[1], kernel.dims()[2], kernel.dims()[3]];
    let [oh, ow] = [grad_out.dims()[2], grad_out.dims()[3]];

    let xd = x.data();
    let kd = kernel.data();
    let gd = grad_out.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dk = vec![0.0; kd.len()];
    let mut db = vec![0.0; co];

    for ni in 0..n {
        for (oc, db_slot) in db.iter_mut().enumerate() {
            let obase = (ni * co + oc) * oh * ow;
            *db_slot += gd[obase..obase + oh * ow].iter().sum::<f64>();
            for ic in 0..ci {
                let xbase = (ni * ci + ic) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kidx = ((oc * ci + ic) * kh + ky) * kw + kx;
                        let wv = kd[kidx];
                        let mut wacc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let orow = obase + oy * ow;
                            let xrow = xbase + iy as usize * w;
                            let ox_lo = (p as isize - kx as isize).max(0) as usize;
                            let ox_hi = (w as isize + p as isize - kx as isize).min(ow as isize).max(0) as usize;
                            for ox in ox_lo..ox_hi {
                                let ix = ox + kx - p;
                                let g = gd[orow + ox];
                                wacc += g * xd[xrow + ix];
                                dx[xrow + ix] += wv * g;
                            }
                        }
                        dk[kidx] += wacc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_dims(x.dims(), dx).expect("same shape as input"),
        Tensor::from_dims(kernel.dims(), dk).expect("same shape as kernel"),
        Tensor::from_dims(&[co], db).expect("bias shape"),
    )
}

/// 2x2 max pooling with stride 2; H and W must be even.
pub(crate) fn max_pool_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "max_pool",
            detail: format!("expected 4-D input, got {}", x.shape()),
        });
    }
    let [n, c, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch {
            op: "max_pool",
            detail: format!("spatial dims must be even, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let xbase = plane * h * w;
        let obase = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let r0 = xbase + (2 * oy) * w + 2 * ox;
                let r1 = r0 + w;
                out[obase + oy * ow + ox] = xd[r0].max(xd[r0 + 1]).max(xd[r1]).max(xd[r1 + 1]);
            }
        }
    }
    Tensor::from_dims(&[n, c, oh, ow], out)
}

/// Route each pooled gradient back to the first-scanned max cell of its window.
pub(crate) fn max_pool_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let gd = grad_out.data();
    let mut dx = vec![0.0; xd.len()];
    for plane in 0..n * c {
        let xbase = plane * h * w;
        let obase = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let r0 = xbase + (2 * oy) * w + 2 * ox;
                let cells = [r0, r0 + 1, r0 + w, r0 + w + 1];
                let mut best = cells[0];
                for &cell in &cells[1..] {
                    if xd[cell] > xd[best] {
                        best = cell;
                    }
                }
                dx[best] += gd[obase + oy * ow + ox];
            }
        }
    }
    Tensor::from_dims(x.dims(), dx).expect("same shape as input")
}

/// Numerically stable logistic sigmoid; never overflows for finite input.
/// The result is clamped into the open interval (0,1): saturated inputs map
/// to the nearest representable values inside it rather than to 0 or 1.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
