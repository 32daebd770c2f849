//! Finite-difference checks of the tape's backward pass, one case per op.

use rand::Rng;

use super::flat::norm;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

type Build = fn(&mut Tape, &[Var], &Fixture) -> Result<Var>;

/// Non-differentiable inputs of a case, drawn once per instance.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub probs: Vec<f64>,
    pub classes: Vec<usize>,
    pub index: Vec<usize>,
}

/// A single op under test: input shapes and how to build its output.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    build: Build,
}

const R: usize = 3;
const C: usize = 4;

/// Every tape op, each wired into a small graph.
pub fn op_cases() -> Vec<OpCase> {
    fn case(name: &'static str, shapes: &[&[usize]], build: Build) -> OpCase {
        OpCase {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            build,
        }
    }
    vec![
        case("matmul", &[&[R, C], &[C, 2]], |t, v, _| t.matmul(v[0], v[1])),
        case("add", &[&[R, C], &[R, C]], |t, v, _| t.add(v[0], v[1])),
        case("add-broadcast", &[&[R, C], &[C]], |t, v, _| t.add(v[0], v[1])),
        case("mul", &[&[R, C], &[R, C]], |t, v, _| t.mul(v[0], v[1])),
        case("scale", &[&[R, C]], |t, v, _| t.scale(v[0], -1.7)),
        case("relu", &[&[R, C]], |t, v, _| t.relu(v[0])),
        case("sigmoid", &[&[R, C]], |t, v, _| t.sigmoid(v[0])),
        case("mean", &[&[R, C]], |t, v, _| t.mean(v[0])),
        case("sum", &[&[R, C]], |t, v, _| t.sum(v[0])),
        case("sum-rows", &[&[R, C]], |t, v, _| t.sum_rows(v[0])),
        case("reshape", &[&[R, C]], |t, v, _| t.reshape(v[0], &[C, R])),
        case("concat", &[&[R, C], &[2, C]], |t, v, _| t.concat(&[v[0], v[1]])),
        case("gather", &[&[R, C]], |t, v, f| t.gather(v[0], &f.index)),
        case("scatter-add", &[&[R, C]], |t, v, f| t.scatter_add(v[0], &f.index[..R], R)),
        case("bce-with-logits", &[&[R]], |t, v, f| t.bce_with_logits(v[0], &f.probs)),
        case("softmax-cross-entropy", &[&[R, C]], |t, v, f| {
            t.softmax_cross_entropy(v[0], &f.classes)
        }),
        case("mse", &[&[R]], |t, v, f| t.mse(v[0], &f.probs)),
    ]
}

/// Random inputs for `case`; entries are kept at least `1e-3` away from 0
/// so that no relu kink lies inside a finite-difference step.
pub fn random_inputs(case: &OpCase, rng: &mut impl Rng) -> (Vec<Tensor>, Fixture) {
    let inputs = case
        .shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let data = (0..n)
                .map(|_| {
                    let x: f64 = rng.gen_range(-2.0..2.0);
                    if x.abs() < 1e-3 {
                        1e-3_f64.copysign(x)
                    } else {
                        x
                    }
                })
                .collect();
            Tensor::new(s.clone(), data).expect("valid shape")
        })
        .collect();
    let fixture = Fixture {
        probs: (0..R).map(|_| rng.gen_range(0.0..1.0)).collect(),
        classes: (0..R).map(|_| rng.gen_range(0..C)).collect(),
        index: (0..5).map(|_| rng.gen_range(0..R)).collect(),
    };
    (inputs, fixture)
}

/// Scalar value of the case at `inputs`, contracting non-scalar outputs
/// with `weights`.
fn evaluate(case: &OpCase, inputs: &[Tensor], fixture: &Fixture, weights: &[f64]) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect::<Result<_>>()?;
    let out = (case.build)(&mut tape, &vars, fixture)?;
    let shape = tape.value(out).shape().to_vec();
    let loss = if tape.value(out).numel() == 1 && shape.len() == 1 {
        out
    } else {
        let w = tape.constant(Tensor::new(shape, weights[..tape.value(out).numel()].to_vec())?)?;
        let prod = tape.mul(out, w)?;
        tape.sum(prod)?
    };
    Ok((tape, vars, loss))
}

/// Norm-wise relative error between the backward pass and coordinatewise
/// central differences, over all inputs of one random instance.
pub fn check_op(case: &OpCase, rng: &mut impl Rng, h: f64) -> Result<f64> {
    let (inputs, fixture) = random_inputs(case, rng);
    let weights: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (tape, vars, loss) = evaluate(case, &inputs, &fixture, &weights)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.wrt(v)).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.numel() {
            let f = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.clone();
                let mut data = x.data().to_vec();
                data[j] += delta;
                shifted[i] = Tensor::new(x.shape().to_vec(), data)?;
                let (t, _, l) = evaluate(case, &shifted, &fixture, &weights)?;
                t.value(l).item()
            };
            numeric.push((f(h)? - f(-h)?) / (2.0 * h));
        }
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-8))
}
