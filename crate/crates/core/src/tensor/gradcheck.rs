//! Central-difference verification of the reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ReduceKind, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    fn new(op_name: &str, max_rel_error: f64, tolerance: f64) -> Self {
        GradReport {
            op_name: op_name.to_string(),
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }
}

/// Which input elements get a finite-difference probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// Up to `per_input` randomly chosen elements of every input.
    Sample { per_input: usize, seed: u64 },
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(name: &str, f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    grad_check_inputs(name, |t, v| f(t, v[0]), std::slice::from_ref(x), eps, tol, Probe::All)
}

/// Checks the gradient of a scalar function of several tensors.
pub fn grad_check_inputs<F>(
    name: &str,
    f: F,
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
    probe: Probe,
) -> Result<GradReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    grad_check_floored(name, f, inputs, eps, tol, probe, 1e-8)
}

/// Like [`grad_check_inputs`], with `floor` as the smallest denominator of the
/// relative error, so gradients at the finite-difference noise level compare
/// absolutely.
pub fn grad_check_floored<F>(
    name: &str,
    f: F,
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
    probe: Probe,
    floor: f64,
) -> Result<GradReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
    drop(tape);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let picks: Vec<usize> = match probe {
            Probe::All => (0..x.numel()).collect(),
            Probe::Sample { per_input, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9));
                sample(&mut rng, x.numel(), per_input.min(x.numel())).into_vec()
            }
        };
        for j in picks {
            let orig = x.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_error(analytic[i].data()[j], numeric, floor));
        }
    }
    Ok(GradReport::new(name, worst, tol))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero (kinks of relu/abs).
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.gen_range(0.05..1.5);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

type Case = Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>;

/// Scalarizes an op output with fixed random weights so no gradient is degenerate.
fn weighted(tape: &Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    Ok(tape.sum_all(tape.mul(y, w)?))
}

/// One report per differentiable op, each the worst case over `points` random
/// evaluation points (eps 1e-5, tolerance 1e-4).
pub fn op_suite(seed: u64, points: usize) -> Result<Vec<GradReport>> {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    // (name, input generator, output shape, op)
    type Gen = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
    let mut cases: Vec<(&str, Gen, Vec<usize>, Case)> = Vec::new();
    macro_rules! case {
        ($name:expr, $gen:expr, $out:expr, $op:expr) => {
            cases.push(($name, Box::new($gen), $out.to_vec(), Box::new($op)));
        };
    }
    case!("add", |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)], [3, 4],
        |t: &Tape, v: &[Var]| t.add(v[0], v[1]));
    case!("sub", |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 1], -1.0, 1.0)], [3, 4],
        |t: &Tape, v: &[Var]| t.sub(v[0], v[1]));
    case!("mul", |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[3, 1], -1.0, 1.0)], [2, 3, 4],
        |t: &Tape, v: &[Var]| t.mul(v[0], v[1]));
    case!("scale", |r| vec![uniform(r, &[5], -1.0, 1.0)], [5],
        |t: &Tape, v: &[Var]| Ok(t.add_scalar(t.scale(v[0], -1.7), 0.3)));
    case!("relu", |r| vec![off_zero(r, &[6])], [6], |t: &Tape, v: &[Var]| Ok(t.relu(v[0])));
    case!("exp", |r| vec![uniform(r, &[6], -2.0, 2.0)], [6], |t: &Tape, v: &[Var]| Ok(t.exp(v[0])));
    case!("log", |r| vec![uniform(r, &[6], 0.2, 3.0)], [6], |t: &Tape, v: &[Var]| t.log(v[0]));
    case!("sigmoid", |r| vec![uniform(r, &[6], -4.0, 4.0)], [6], |t: &Tape, v: &[Var]| Ok(t.sigmoid(v[0])));
    case!("tanh", |r| vec![uniform(r, &[6], -2.0, 2.0)], [6], |t: &Tape, v: &[Var]| Ok(t.tanh(v[0])));
    case!("abs", |r| vec![off_zero(r, &[6])], [6], |t: &Tape, v: &[Var]| Ok(t.abs(v[0])));
    case!("powf", |r| vec![uniform(r, &[6], 0.1, 2.0)], [6], |t: &Tape, v: &[Var]| Ok(t.powf(v[0], 2.5)));
    case!("clamp", |r| vec![uniform(r, &[6], 0.05, 0.95)], [6], |t: &Tape, v: &[Var]| Ok(t.clamp(v[0], 0.0, 1.0)));
    case!("concat", |r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0)], [2, 5],
        |t: &Tape, v: &[Var]| t.concat(&[v[0], v[1]], 1));
    case!("matmul", |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], [3, 2],
        |t: &Tape, v: &[Var]| t.matmul(v[0], v[1]));
    case!("matmul_batched", |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 4, 2], -1.0, 1.0)], [2, 3, 2],
        |t: &Tape, v: &[Var]| t.matmul(v[0], v[1]));
    case!("matmul_shared", |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], [2, 3, 2],
        |t: &Tape, v: &[Var]| t.matmul(v[0], v[1]));
    case!("transpose", |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], [2, 4, 3], |t: &Tape, v: &[Var]| t.transpose(v[0]));
    case!("reshape", |r| vec![uniform(r, &[2, 6], -1.0, 1.0)], [3, 4], |t: &Tape, v: &[Var]| t.reshape(v[0], &[3, 4]));
    case!("softmax_rows", |r| vec![uniform(r, &[3, 5], -2.0, 2.0)], [3, 5], |t: &Tape, v: &[Var]| t.softmax(v[0], 1));
    case!("softmax_cols", |r| vec![uniform(r, &[3, 5], -2.0, 2.0)], [3, 5], |t: &Tape, v: &[Var]| t.softmax(v[0], 0));
    case!("reduce_max", |r| vec![uniform(r, &[3, 4, 2], -1.0, 1.0)], [3, 2],
        |t: &Tape, v: &[Var]| t.reduce(v[0], 1, ReduceKind::Max));
    case!("reduce_sum", |r| vec![uniform(r, &[3, 4], -1.0, 1.0)], [4], |t: &Tape, v: &[Var]| t.reduce(v[0], 0, ReduceKind::Sum));
    case!("reduce_mean", |r| vec![uniform(r, &[3, 4], -1.0, 1.0)], [3], |t: &Tape, v: &[Var]| t.reduce(v[0], 1, ReduceKind::Mean));
    case!("narrow", |r| vec![uniform(r, &[3, 5], -1.0, 1.0)], [3, 2], |t: &Tape, v: &[Var]| t.narrow(v[0], 1, 2, 2));
    case!("gather_rows", |r| vec![uniform(r, &[4, 3], -1.0, 1.0)], [5, 3],
        |t: &Tape, v: &[Var]| t.gather_rows(v[0], &[3, 0, 3, 1, 2]));
    case!("take", |r| vec![uniform(r, &[7], -1.0, 1.0)], [4], |t: &Tape, v: &[Var]| t.take(v[0], &[6, 1, 1, 3]));
    case!("linear", |r| vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)], [4, 5],
        |t: &Tape, v: &[Var]| t.linear(v[0], v[1], Some(v[2])));
    case!("conv2d", |r| vec![uniform(r, &[2, 5, 6], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)], [3, 5, 6],
        |t: &Tape, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), 1, 1));
    case!("conv2d_strided", |r| vec![uniform(r, &[2, 5, 6], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -1.0, 1.0)], [2, 3, 3],
        |t: &Tape, v: &[Var]| t.conv2d(v[0], v[1], None, 2, 1));
    case!("layer_norm", |r| vec![uniform(r, &[3, 6], -1.0, 1.0), uniform(r, &[6], 0.5, 1.5), uniform(r, &[6], -0.5, 0.5)], [3, 6],
        |t: &Tape, v: &[Var]| t.layer_norm(v[0], v[1], v[2], 1e-5));
    case!("scatter_max", |r| vec![uniform(r, &[6, 3], -1.0, 1.0)], [3, 4],
        |t: &Tape, v: &[Var]| t.scatter_max(v[0], &[Some(0), Some(2), Some(0), None, Some(3), Some(2)], 4));
    case!("sparse_mix", |r| vec![uniform(r, &[4, 3], -1.0, 1.0)], [2, 3],
        |t: &Tape, v: &[Var]| t.sparse_mix(v[0], &[vec![(0, 0.2), (3, 0.8)], vec![(1, 0.5), (2, 0.25), (1, 0.25)]]));
    case!("mean_all", |r| vec![uniform(r, &[3, 3], -1.0, 1.0)], [1], |t: &Tape, v: &[Var]| Ok(t.mean_all(v[0])));

    for (name, gen, out_shape, op) in &cases {
        let mut worst = 0.0f64;
        for _ in 0..points {
            let inputs = gen(&mut rng);
            let w = uniform(&mut rng, out_shape, 0.5, 1.5);
            let r = grad_check_inputs(
                name,
                |t, v| weighted(t, op(t, v)?, &w),
                &inputs,
                EPS,
                TOL,
                Probe::All,
            )?;
            worst = worst.max(r.max_rel_error);
        }
        reports.push(GradReport::new(name, worst, TOL));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let r = grad_check("square", |t, v| { let s = t.mul(v, v)?; Ok(t.sum_all(s)) }, &x, 1e-5, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn softmax_weighted_sum() {
        let x = Tensor::vector(vec![0.3, -1.0, 2.0, 0.1]);
        let w = Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]);
        let r = grad_check("softmax", |t, v| weighted(t, t.softmax(v, 0)?, &w), &x, 1e-5, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::vector(vec![0.5]);
        let r = grad_check("relu", |t, v| Ok(t.sum_all(t.relu(v))), &x, 1e-5, 1e-4).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // clamp at its boundary: analytic 1, numeric 0.5
        let x = Tensor::vector(vec![1.0]);
        let r = grad_check("kink", |t, v| Ok(t.sum_all(t.clamp(v, 0.0, 1.0))), &x, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.passed, r.max_rel_error <= r.tolerance);
    }

    #[test]
    fn suite_passes() {
        for r in op_suite(3, 2).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
