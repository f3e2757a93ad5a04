//! Dense row-major f64 tensors with shape arithmetic, numpy-style
//! broadcasting, and axis reductions. Layout convention for 4-D data is
//! NCHW (batch, channel, height, width). Outputs are always materialized;
//! there are no strided views.

use crate::error::{Error, Result};

/// Ordered list of positive extents. The empty list is the scalar shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Shape> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(Error::BadShape {
                detail: format!("zero extent in {dims:?}"),
            });
        }
        Ok(Shape { dims })
    }

    pub fn scalar() -> Shape {
        Shape { dims: Vec::new() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Element count: the product of all extents (1 for the scalar shape).
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // every extent is >= 1, so there is always at least one element
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Dense tensor: a shape plus a contiguous row-major buffer of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking length and finiteness.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        if shape.len() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {shape} holds {} elements, data has {}", shape.len(), data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { op: "Tensor::new" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_dims(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(Shape::new(dims)?, data)
    }

    pub fn zeros(dims: &[usize]) -> Tensor {
        Tensor::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Tensor {
        Tensor::full(dims, 1.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Tensor {
        let shape = Shape::new(dims).expect("positive extents");
        let len = shape.len();
        Tensor { shape, data: vec![value; len] }
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor { shape: other.shape.clone(), data: vec![0.0; other.len()] }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Tensor {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    /// Fill with uniform draws from [lo, hi).
    pub fn rand_uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut crate::rng::Rng) -> Tensor {
        let shape = Shape::new(dims).expect("positive extents");
        let data = (0..shape.len()).map(|_| rng.range(lo, hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value at a multi-index (bounds-checked; for tests and small lookups).
    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for (d, (&i, &ext)) in index.iter().zip(self.dims()).enumerate() {
            assert!(i < ext, "index {i} out of range for dim {d} of extent {ext}");
            off = off * ext + i;
        }
        self.data[off]
    }

    /// Same buffer under a new shape with an equal element count.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{} -> {shape} changes element count", self.shape),
            });
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum of all values.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Broadcast-combined output dims: align trailing dims, each pair must be
/// equal or have a 1; the output extent is the larger of the two.
pub(crate) fn broadcast_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("({}) vs ({})", join_dims(a), join_dims(b)),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

/// Row-major strides, with stride 0 on dims the operand broadcasts over.
fn aligned_strides(operand: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - operand.len();
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1usize;
    for i in (0..operand.len()).rev() {
        strides[offset + i] = if operand[i] == 1 { 0 } else { acc };
        acc *= operand[i];
    }
    strides
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let out_dims = broadcast_dims(op, a.dims(), b.dims())?;
    let shape = Shape::new(out_dims.clone())?;
    let len = shape.len();
    let astr = aligned_strides(a.dims(), &out_dims);
    let bstr = aligned_strides(b.dims(), &out_dims);
    let mut data = vec![0.0; len];
    let mut idx = vec![0usize; out_dims.len()];
    let mut ao = 0usize;
    let mut bo = 0usize;
    for slot in data.iter_mut() {
        *slot = f(a.data[ao], b.data[bo]);
        for d in (0..out_dims.len()).rev() {
            idx[d] += 1;
            ao += astr[d];
            bo += bstr[d];
            if idx[d] < out_dims[d] {
                break;
            }
            ao -= astr[d] * out_dims[d];
            bo -= bstr[d] * out_dims[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor { shape, data })
}

/// Elementwise product with broadcasting.
pub fn broadcast_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary("broadcast_mul", a, b, |x, y| x * y)
}

/// Elementwise sum with broadcasting.
pub fn broadcast_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary("add", a, b, |x, y| x + y)
}

/// Sum a broadcast result back down to an operand's shape: the adjoint of
/// broadcasting. `t` must have been produced by broadcasting something of
/// shape `target_dims`.
pub(crate) fn reduce_sum_to(t: &Tensor, target_dims: &[usize]) -> Tensor {
    if t.dims() == target_dims {
        return t.clone();
    }
    let out_dims = t.dims();
    let tstr = aligned_strides(target_dims, out_dims);
    let target_shape = Shape::new(target_dims).expect("positive extents");
    let mut data = vec![0.0; target_shape.len()];
    let mut idx = vec![0usize; out_dims.len()];
    let mut to = 0usize;
    for &v in t.data() {
        data[to] += v;
        for d in (0..out_dims.len()).rev() {
            idx[d] += 1;
            to += tstr[d];
            if idx[d] < out_dims[d] {
                break;
            }
            to -= tstr[d] * out_dims[d];
            idx[d] = 0;
        }
    }
    Tensor { shape: target_shape, data }
}

/// Arithmetic mean over the given axes; reduced dims are removed from the
/// output shape (reducing every axis yields a rank-0 scalar).
pub fn reduce_mean(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    for &axis in axes {
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
    }
    let mut reduced = vec![false; rank];
    for &axis in axes {
        reduced[axis] = true;
    }
    let out_dims: Vec<usize> = x
        .dims()
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let count: usize = x
        .dims()
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();
    let shape = Shape { dims: out_dims };
    let mut data = vec![0.0; shape.len()];

    // Row-major strides of the output laid over the kept input dims.
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..rank).rev() {
        if !reduced[i] {
            out_strides[i] = acc;
            acc *= x.dims()[i];
        }
    }

    let in_dims = x.dims();
    let mut idx = vec![0usize; rank];
    let mut oo = 0usize;
    for &v in x.data() {
        data[oo] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            oo += out_strides[d];
            if idx[d] < in_dims[d] {
                break;
            }
            oo -= out_strides[d] * in_dims[d];
            idx[d] = 0;
        }
    }
    let inv = 1.0 / count as f64;
    for v in data.iter_mut() {
        *v *= inv;
    }
    Ok(Tensor { shape, data })
}

/// Adjoint of `reduce_mean`: spread `grad` (reduced shape) back over the
/// input shape, dividing by the reduction count.
pub(crate) fn reduce_mean_backward(grad: &Tensor, input_dims: &[usize], axes: &[usize]) -> Tensor {
    let rank = input_dims.len();
    let mut reduced = vec![false; rank];
    for &axis in axes {
        reduced[axis] = true;
    }
    let count: usize = input_dims
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();
    let inv = 1.0 / count as f64;

    let mut out_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..rank).rev() {
        if !reduced[i] {
            out_strides[i] = acc;
            acc *= input_dims[i];
        }
    }
    let shape = Shape::new(input_dims).expect("positive extents");
    let mut data = vec![0.0; shape.len()];
    let mut idx = vec![0usize; rank];
    let mut go = 0usize;
    for slot in data.iter_mut() {
        *slot = grad.data[go] * inv;
        for d in (0..rank).rev() {
            idx[d] += 1;
            go += out_strides[d];
            if idx[d] < input_dims[d] {
                break;
            }
            go -= out_strides[d] * input_dims[d];
            idx[d] = 0;
        }
    }
    Tensor { shape, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(matches!(Shape::new(vec![2, 0, 3]), Err(Error::BadShape { .. })));
    }

    #[test]
    fn tensor_checks_data_length() {
        let err = Tensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0]);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn tensor_rejects_non_finite() {
        let err = Tensor::from_dims(&[2], vec![1.0, f64::NAN]);
        assert!(matches!(err, Err(Error::NonFiniteValue { .. })));
    }

    #[test]
    fn broadcast_mul_outer_product() {
        // (2,1) column times (1,3) row is the outer product.
        let a = Tensor::from_dims(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_dims(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = broadcast_mul(&a, &b).unwrap();
        assert_eq!(c.dims(), &[2, 3]);
        assert_eq!(c.data(), &[10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);
    }

    #[test]
    fn broadcast_mul_by_ones_is_identity() {
        let a = Tensor::from_dims(&[3], vec![-4.0, 5.5, 6.25]).unwrap();
        let ones = Tensor::ones(&[3]);
        let c = broadcast_mul(&a, &ones).unwrap();
        assert_eq!(c.data(), a.data()); // bitwise
    }

    #[test]
    fn broadcast_mul_scalar_matches_loop_oracle() {
        let mut rng = Rng::new(5);
        let a = Tensor::rand_uniform(&[2, 2, 2], -2.0, 2.0, &mut rng);
        let s = Tensor::from_dims(&[1], vec![0.37]).unwrap();
        let c = broadcast_mul(&a, &s).unwrap();
        assert_eq!(c.dims(), &[2, 2, 2]);
        for (got, &x) in c.data().iter().zip(a.data()) {
            assert_eq!(*got, x * 0.37);
        }
    }

    #[test]
    fn broadcast_mul_rejects_incompatible() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert!(matches!(broadcast_mul(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn broadcast_mul_commutes() {
        let mut rng = Rng::new(9);
        let a = Tensor::rand_uniform(&[2, 1, 4], -2.0, 2.0, &mut rng);
        let b = Tensor::rand_uniform(&[3, 1], -2.0, 2.0, &mut rng);
        let ab = broadcast_mul(&a, &b).unwrap();
        let ba = broadcast_mul(&b, &a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn reduce_mean_all_axes_gives_scalar() {
        let x = Tensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = reduce_mean(&x, &[0, 1]).unwrap();
        assert_eq!(m.rank(), 0);
        assert_eq!(m.data(), &[2.5]);
    }

    #[test]
    fn reduce_mean_constant_input() {
        let x = Tensor::full(&[1, 3], 7.0);
        let m = reduce_mean(&x, &[1]).unwrap();
        assert_eq!(m.dims(), &[1]);
        assert_eq!(m.data(), &[7.0]);
    }

    #[test]
    fn reduce_mean_matches_nested_loop_oracle() {
        let mut rng = Rng::new(12);
        let x = Tensor::rand_uniform(&[2, 3, 4], -2.0, 2.0, &mut rng);
        let m = reduce_mean(&x, &[1]).unwrap();
        assert_eq!(m.dims(), &[2, 4]);
        // Independent triple-nested-loop oracle.
        for i in 0..2 {
            for k in 0..4 {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += x.get(&[i, j, k]);
                }
                let want = acc / 3.0;
                assert!((m.get(&[i, k]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_mean_axis_out_of_range() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(matches!(reduce_mean(&x, &[2]), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn mean_times_count_equals_sum() {
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let dims = [1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)];
            let x = Tensor::rand_uniform(&dims, -2.0, 2.0, &mut rng);
            let mean = reduce_mean(&x, &[0, 1, 2]).unwrap().data()[0];
            let total = x.sum();
            let rel = (mean * x.len() as f64 - total).abs() / total.abs().max(1e-9);
            assert!(rel < 1e-9, "rel {rel}");
        }
    }

    #[test]
    fn reduce_sum_to_undoes_broadcast() {
        let a = Tensor::from_dims(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_dims(&[2, 3], vec![1.0; 6]).unwrap();
        let c = broadcast_mul(&a, &b).unwrap();
        let back = reduce_sum_to(&c, &[2, 1]);
        assert_eq!(back.dims(), &[2, 1]);
        assert_eq!(back.data(), &[3.0, 6.0]); // each row summed over 3 columns
    }

    #[test]
    fn reshape_preserves_data() {
        let x = Tensor::from_dims(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = x.reshaped(&[3, 2]).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(x.reshaped(&[4, 2]).is_err());
    }
}
