use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::gradcheck::{central_directional, central_gradient, relative_error, FD_STEP};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
enum Domain {
    Any,
    /// |x| in [0.5, 2] with random sign; keeps kinks and poles out of reach of the step.
    AwayFromZero,
    Positive,
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

#[derive(Clone)]
pub(crate) struct Case {
    pub name: &'static str,
    shapes: Vec<Vec<usize>>,
    domain: Domain,
    build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], domain: Domain, build: Build) -> Case {
    Case {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        domain,
        build,
    }
}

pub(crate) fn cases() -> Vec<Case> {
    use Domain::*;
    vec![
        case("add", &[&[2, 3], &[2, 3]], Any, |t, v| t.add(v[0], v[1])),
        case("sub", &[&[2, 3], &[2, 3]], Any, |t, v| t.sub(v[0], v[1])),
        case("mul", &[&[2, 3], &[2, 3]], Any, |t, v| t.mul(v[0], v[1])),
        case("scale", &[&[3, 2]], Any, |t, v| t.scale(v[0], -1.7)),
        case("add_scalar", &[&[3, 2]], Any, |t, v| {
            let s = t.add_scalar(v[0], 0.3)?;
            t.mul(s, s)
        }),
        case("recip", &[&[2, 2]], AwayFromZero, |t, v| t.recip(v[0])),
        case("div", &[&[2, 2], &[2, 2]], AwayFromZero, |t, v| t.div(v[0], v[1])),
        case("matmul", &[&[2, 3], &[3, 4]], Any, |t, v| t.matmul(v[0], v[1])),
        case("transpose", &[&[2, 3]], Any, |t, v| {
            let tr = t.transpose(v[0])?;
            t.mul(tr, tr)
        }),
        case("tanh", &[&[2, 3]], Any, |t, v| t.tanh(v[0])),
        case("sigmoid", &[&[2, 3]], Any, |t, v| t.sigmoid(v[0])),
        case("relu", &[&[2, 3]], AwayFromZero, |t, v| {
            let r = t.relu(v[0])?;
            t.mul(r, v[0])
        }),
        case("exp", &[&[2, 3]], Any, |t, v| t.exp(v[0])),
        case("log", &[&[2, 3]], Positive, |t, v| t.log(v[0])),
        case("sum", &[&[2, 3]], Any, |t, v| {
            let s = t.sum(v[0])?;
            t.mul(s, s)
        }),
        case("mean", &[&[2, 3]], Any, |t, v| {
            let s = t.mean(v[0])?;
            t.mul(s, s)
        }),
        case("sum_rows", &[&[3, 2]], Any, |t, v| {
            let s = t.sum_rows(v[0])?;
            t.mul(s, s)
        }),
        case("sum_cols", &[&[3, 2]], Any, |t, v| {
            let s = t.sum_cols(v[0])?;
            t.mul(s, s)
        }),
        case("mean_rows", &[&[3, 2]], Any, |t, v| {
            let s = t.mean_rows(v[0])?;
            t.tanh(s)
        }),
        case("expand", &[&[]], Any, |t, v| {
            let e = t.expand(v[0], &[2, 2])?;
            t.mul(e, e)
        }),
        case("reshape", &[&[2, 3]], Any, |t, v| {
            let r = t.reshape(v[0], &[3, 2])?;
            t.mul(r, r)
        }),
        case("broadcast_rows", &[&[1, 3]], Any, |t, v| {
            let b = t.broadcast_rows(v[0], 2)?;
            t.mul(b, b)
        }),
        case("broadcast_cols", &[&[2, 1]], Any, |t, v| {
            let b = t.broadcast_cols(v[0], 3)?;
            t.mul(b, b)
        }),
        case("add_row", &[&[3, 2], &[1, 2]], Any, |t, v| {
            let a = t.add_row(v[0], v[1])?;
            t.tanh(a)
        }),
        case("index_rows", &[&[4, 2]], Any, |t, v| {
            let r = t.index_rows(v[0], &[3, 0, 3])?;
            t.mul(r, r)
        }),
        case("scatter_rows", &[&[3, 2]], Any, |t, v| {
            let s = t.scatter_rows(v[0], &[1, 4, 1], 5)?;
            t.mul(s, s)
        }),
        case("concat_rows", &[&[1, 3], &[2, 3]], Any, |t, v| {
            let c = t.concat_rows(&[v[1], v[0], v[1]])?;
            t.mul(c, c)
        }),
        case("softmax", &[&[2, 4]], Any, |t, v| t.softmax(v[0])),
        case("log_softmax", &[&[2, 4]], Any, |t, v| t.log_softmax(v[0])),
        case("cross_entropy", &[&[3, 4]], Any, |t, v| {
            let ce = t.cross_entropy_with_logits(v[0], &[2, 0, 3])?;
            t.mul(ce, ce)
        }),
    ]
}

fn sample(rng: &mut impl Rng, domain: Domain) -> f64 {
    match domain {
        Domain::Any => rng.sample(StandardNormal),
        Domain::AwayFromZero => {
            let m = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        }
        Domain::Positive => rng.random_range(0.5..2.0),
    }
}

/// Builds `sum(op(inputs) ⊙ W)` for fixed random weights `W`.
fn project(tape: &mut Tape, out: Var, weights: &[f64]) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(Tensor::new(shape, weights.to_vec())?)?;
    tape.dot(out, w)
}

fn unflatten(shapes: &[Vec<usize>], flat: &[f64]) -> Result<Vec<Tensor>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), flat[offset..offset + n].to_vec());
            offset += n;
            t
        })
        .collect()
}

fn output_len(case: &Case, inputs: &[Tensor]) -> Result<usize> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    Ok(tape.value(out).numel())
}

fn objective(case: &Case, flat: &[f64], weights: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = unflatten(&case.shapes, flat)?
        .into_iter()
        .map(|x| tape.leaf(x, false))
        .collect::<Result<Vec<_>>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let root = project(&mut tape, out, weights)?;
    Ok(tape.scalar(root))
}

fn analytic_gradient(case: &Case, flat: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = unflatten(&case.shapes, flat)?
        .into_iter()
        .map(|x| tape.leaf(x, true))
        .collect::<Result<Vec<_>>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let root = project(&mut tape, out, weights)?;
    let grads = tape.grad(root, &vars, false)?;
    Ok(grads.iter().flat_map(|&g| tape.value(g).data().to_vec()).collect())
}

/// `H·u` of the projected objective by double backward.
fn analytic_hessian_vector(case: &Case, flat: &[f64], weights: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = unflatten(&case.shapes, flat)?
        .into_iter()
        .map(|x| tape.leaf(x, true))
        .collect::<Result<Vec<_>>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let root = project(&mut tape, out, weights)?;
    let grads = tape.grad(root, &vars, true)?;
    let mut offset = 0;
    let mut acc: Option<Var> = None;
    for g in grads {
        let shape = tape.value(g).shape().to_vec();
        let n = tape.value(g).numel();
        let c = tape.constant(Tensor::new(shape, u[offset..offset + n].to_vec())?)?;
        offset += n;
        let term = tape.dot(g, c)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let root2 = acc.expect("at least one input");
    let hv = tape.grad(root2, &vars, false)?;
    Ok(hv.iter().flat_map(|&g| tape.value(g).data().to_vec()).collect())
}

/// Relative errors of one randomized instance: (first order, second order).
pub(crate) fn check_instance(case: &Case, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let n: usize = case.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let flat: Vec<f64> = (0..n).map(|_| sample(rng, case.domain)).collect();
    let inputs = unflatten(&case.shapes, &flat)?;
    let m = output_len(case, &inputs)?;
    let weights: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    let analytic = analytic_gradient(case, &flat, &weights)?;
    let numeric = central_gradient(|x| objective(case, x, &weights), &flat, FD_STEP)?;
    let first = relative_error(&analytic, &numeric);

    let hv = analytic_hessian_vector(case, &flat, &weights, &u)?;
    let hv_fd = central_directional(|x| analytic_gradient(case, x, &weights), &flat, &u, FD_STEP)?;
    let second = relative_error(&hv, &hv_fd);
    Ok((first, second))
}
