//! Finite-difference verification suite: every differentiable primitive is
//! checked against central differences on random small shapes, and the full
//! attention pipeline is checked end to end. The CLI `gradcheck` verb and
//! the acceptance tests both run this.

use crate::attention::{record_mia, MiaBlock, MiaParamNodes};
use crate::autograd::grad_check;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Outcome of one suite check.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    pub fn to_line(&self) -> String {
        format!(
            "{:<28} max_rel_err={:<12.3e} tol={:.0e} {}",
            self.name,
            self.max_rel_err,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn rand_dims(rng: &mut Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| 1 + rng.below(4)).collect()
}

/// Shrink some extents to 1 so broadcasting paths get exercised.
fn broadcast_partner(rng: &mut Rng, dims: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = dims.iter().map(|&d| if rng.below(2) == 0 { d } else { 1 }).collect();
    if out == dims {
        out[0] = 1;
    }
    out
}

fn uniform(rng: &mut Rng, dims: &[usize]) -> Tensor {
    Tensor::rand_uniform(dims, -2.0, 2.0, rng)
}

/// Uniform magnitudes in [0.1, 2] with random sign, keeping ReLU inputs
/// away from the kink.
fn uniform_off_zero(rng: &mut Rng, dims: &[usize]) -> Tensor {
    let shape = crate::tensor::Shape::new(dims).expect("positive extents");
    let data = (0..shape.len())
        .map(|_| {
            let magnitude = rng.range(0.1, 2.0);
            if rng.below(2) == 0 {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    Tensor::new(shape, data).expect("finite values")
}

fn max_over_seeds(seeds: u64, check: impl Fn(u64) -> Result<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        worst = worst.max(check(seed)?);
    }
    Ok(worst)
}

fn check_add(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0xADD0 + seed);
    let rank = 1 + rng.below(4);
    let a_dims = rand_dims(&mut rng, rank);
    let b_dims = broadcast_partner(&mut rng, &a_dims);
    let a = uniform(&mut rng, &a_dims);
    let b = uniform(&mut rng, &b_dims);
    let report = grad_check(&[("a", a), ("b", b)], FD_STEP, FD_TOL, |g, ids| {
        let s = g.add(ids[0], ids[1])?;
        let y = g.sigmoid(s)?;
        g.mean_all(y)
    })?;
    Ok(report.max_rel_err())
}

fn check_broadcast_mul(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0xB40A + seed);
    let rank = 1 + rng.below(4);
    let a_dims = rand_dims(&mut rng, rank);
    let b_dims = broadcast_partner(&mut rng, &a_dims);
    let a = uniform(&mut rng, &a_dims);
    let b = uniform(&mut rng, &b_dims);
    let report = grad_check(&[("a", a), ("b", b)], FD_STEP, FD_TOL, |g, ids| {
        let s = g.broadcast_mul(ids[0], ids[1])?;
        let y = g.sigmoid(s)?;
        g.mean_all(y)
    })?;
    Ok(report.max_rel_err())
}

fn check_matmul(seed: u64, transpose_b: bool) -> Result<f64> {
    let mut rng = Rng::new(0x3A70 + seed * 2 + transpose_b as u64);
    let (m, k, n) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
    let a = uniform(&mut rng, &[m, k]);
    let b = if transpose_b { uniform(&mut rng, &[n, k]) } else { uniform(&mut rng, &[k, n]) };
    let report = grad_check(&[("a", a), ("b", b)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.matmul(ids[0], ids[1], transpose_b)?;
        let s = g.sigmoid(y)?;
        g.mean_all(s)
    })?;
    Ok(report.max_rel_err())
}

fn check_conv2d(seed: u64, kernel: usize, padding: usize) -> Result<f64> {
    let mut rng = Rng::new(0xC0 + seed * 4 + kernel as u64);
    let (n, ci, co) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let (h, w) = (1 + rng.below(4), 1 + rng.below(4));
    let x = uniform(&mut rng, &[n, ci, h, w]);
    let k = uniform(&mut rng, &[co, ci, kernel, kernel]);
    let b = uniform(&mut rng, &[co]);
    let report = grad_check(&[("x", x), ("kernel", k), ("bias", b)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.conv2d(ids[0], ids[1], ids[2], padding)?;
        let s = g.sigmoid(y)?;
        g.mean_all(s)
    })?;
    Ok(report.max_rel_err())
}

fn check_relu(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x4E1 + seed);
    let rank = 1 + rng.below(4);
    let dims = rand_dims(&mut rng, rank);
    let x = uniform_off_zero(&mut rng, &dims);
    let report = grad_check(&[("x", x)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.relu(ids[0])?;
        let s = g.sigmoid(y)?;
        g.mean_all(s)
    })?;
    Ok(report.max_rel_err())
}

fn check_sigmoid(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x516 + seed);
    let rank = 1 + rng.below(4);
    let dims = rand_dims(&mut rng, rank);
    let x = uniform(&mut rng, &dims);
    let report = grad_check(&[("x", x)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.sigmoid(ids[0])?;
        g.mean_all(y)
    })?;
    Ok(report.max_rel_err())
}

fn check_reduce_mean(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x4ED + seed);
    let rank = 2 + rng.below(3);
    let dims = rand_dims(&mut rng, rank);
    let axes: Vec<usize> = (0..rank).filter(|_| rng.below(2) == 0).collect();
    let axes = if axes.is_empty() { vec![rng.below(rank)] } else { axes };
    let x = uniform(&mut rng, &dims);
    let report = grad_check(&[("x", x)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.reduce_mean(ids[0], &axes)?;
        let s = g.sigmoid(y)?;
        g.mean_all(s)
    })?;
    Ok(report.max_rel_err())
}

fn check_reshape(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x4E5 + seed);
    let dims = rand_dims(&mut rng, 3);
    let flat = dims.iter().product::<usize>();
    let x = uniform(&mut rng, &dims);
    let report = grad_check(&[("x", x)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.reshape(ids[0], &[flat])?;
        let s = g.sigmoid(y)?;
        g.mean_all(s)
    })?;
    Ok(report.max_rel_err())
}

fn check_max_pool(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x301 + seed);
    let (n, c) = (1 + rng.below(2), 1 + rng.below(3));
    let (h, w) = (2 + 2 * rng.below(2), 2 + 2 * rng.below(2));
    let x = uniform(&mut rng, &[n, c, h, w]);
    let report = grad_check(&[("x", x)], FD_STEP, FD_TOL, |g, ids| {
        let y = g.max_pool(ids[0])?;
        let s = g.sigmoid(y)?;
        g.mean_all(s)
    })?;
    Ok(report.max_rel_err())
}

fn check_softmax_ce(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x50F + seed);
    let (n, k) = (1 + rng.below(4), 2 + rng.below(3));
    let logits = uniform(&mut rng, &[n, k]);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let report = grad_check(&[("logits", logits)], FD_STEP, FD_TOL, |g, ids| {
        g.softmax_ce(ids[0], &labels)
    })?;
    Ok(report.max_rel_err())
}

fn check_dice_loss(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0xD1CE + seed);
    let (n, h, w) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4));
    let pred = Tensor::rand_uniform(&[n, 1, h, w], 0.05, 0.95, &mut rng);
    let target = Tensor::from_dims(
        &[n, 1, h, w],
        (0..n * h * w).map(|_| rng.below(2) as f64).collect(),
    )?;
    let report = grad_check(&[("pred", pred), ("target", target)], FD_STEP, FD_TOL, |g, ids| {
        g.dice_loss(ids[0], ids[1], crate::train::DICE_EPSILON)
    })?;
    Ok(report.max_rel_err())
}

fn check_mia_forward(channels: usize, side: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(0x311A + seed * 131 + channels as u64);
    let reduction = 2;
    let block = MiaBlock::init(channels, reduction, &mut rng);
    let x = Tensor::rand_uniform(&[1, channels, side, side], -2.0, 2.0, &mut rng);
    let params: Vec<(&str, Tensor)> = vec![
        ("w1", block.w1.clone()),
        ("b1", block.b1.clone()),
        ("w2", block.w2.clone()),
        ("b2", block.b2.clone()),
        ("conv_kernel", block.conv_kernel.clone()),
        ("conv_bias", block.conv_bias.clone()),
        ("x", x),
    ];
    let report = grad_check(&params, FD_STEP, FD_TOL, |g, ids| {
        let p = MiaParamNodes {
            w1: ids[0],
            b1: ids[1],
            w2: ids[2],
            b2: ids[3],
            conv_kernel: ids[4],
            conv_bias: ids[5],
        };
        let nodes = record_mia(g, ids[6], &p)?;
        g.sum_all(nodes.out)
    })?;
    Ok(report.max_rel_err())
}

/// Run the whole suite. `full` widens the sweep: 5 seeds per primitive and
/// the complete C x side x seed grid for the end-to-end attention check.
pub fn fd_suite(full: bool) -> Result<Vec<SuiteEntry>> {
    let seeds = if full { 5 } else { 2 };
    let entry = |name: &str, err: f64| SuiteEntry {
        name: name.to_string(),
        max_rel_err: err,
        tol: FD_TOL,
    };
    let mut out = vec![
        entry("add", max_over_seeds(seeds, check_add)?),
        entry("broadcast_mul", max_over_seeds(seeds, check_broadcast_mul)?),
        entry("matmul", max_over_seeds(seeds, |s| check_matmul(s, false))?),
        entry("matmul[transposed]", max_over_seeds(seeds, |s| check_matmul(s, true))?),
        entry("conv2d[3x3,pad=1]", max_over_seeds(seeds, |s| check_conv2d(s, 3, 1))?),
        entry("conv2d[7x7,pad=3]", max_over_seeds(seeds, |s| check_conv2d(s, 7, 3))?),
        entry("relu", max_over_seeds(seeds, check_relu)?),
        entry("sigmoid", max_over_seeds(seeds, check_sigmoid)?),
        entry("reduce_mean", max_over_seeds(seeds, check_reduce_mean)?),
        entry("reshape", max_over_seeds(seeds, check_reshape)?),
        entry("max_pool", max_over_seeds(seeds, check_max_pool)?),
        entry("softmax_ce", max_over_seeds(seeds, check_softmax_ce)?),
        entry("dice_loss", max_over_seeds(seeds, check_dice_loss)?),
    ];
    if full {
        for &channels in &[2usize, 4, 8] {
            for &side in &[3usize, 5, 7] {
                let err = max_over_seeds(3, |s| check_mia_forward(channels, side, s))?;
                out.push(entry(&format!("mia_forward[C={channels},HW={side}]"), err));
            }
        }
    } else {
        out.push(entry("mia_forward[C=4,HW=5]", check_mia_forward(4, 5, 0)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let entries = fd_suite(false).unwrap();
        assert!(entries.len() >= 14);
        for e in &entries {
            assert!(e.passed(), "{}", e.to_line());
        }
    }

    #[test]
    fn entry_lines_render() {
        let e = SuiteEntry { name: "demo".into(), max_rel_err: 2e-3, tol: 1e-4 };
        assert!(e.to_line().contains("FAIL"));
        assert!(!e.passed());
    }
}
