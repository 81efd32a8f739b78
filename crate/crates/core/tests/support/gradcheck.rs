//! Finite-difference oracles shared by the gradient tests and the
//! acceptance harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use textgroup::autodiff::{cosine_matrix, cosine_similarity, Tape, Tensor};
use textgroup::batch::TextBatch;
use textgroup::model::{AssignmentRoute, EncoderConfig, Mode, TextGroupModel};
use textgroup::objectives::{total_loss, total_loss_with, ImageBatch, LossWeights};

pub const H: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const E2E_TOL: f64 = 1e-3;
pub const SEEDS: u64 = 20;

pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute gap when both are tiny.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

type Build = dyn for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t>;

/// Contracts the op output with fixed random weights so every output
/// element contributes; returns the worst relative error over the inputs.
pub fn check(inputs: &[(Vec<f64>, Vec<usize>)], seed: u64, build: &Build) -> f64 {
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let ts: Vec<Tensor<'_>> = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| tape.var(v.clone(), s).unwrap())
            .collect();
        let out = build(&tape, &ts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
        let w = tape.constant(randn(&mut rng, out.numel()), &out.shape()).unwrap();
        out.mul(&w).unwrap().sum().item()
    };
    let tape = Tape::new();
    let ts: Vec<Tensor<'_>> = inputs.iter().map(|(v, s)| tape.var(v.clone(), s).unwrap()).collect();
    let out = build(&tape, &ts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let w = tape.constant(randn(&mut rng, out.numel()), &out.shape()).unwrap();
    let loss = out.mul(&w).unwrap().sum();
    let grads = tape.backward(&loss).unwrap();

    let mut worst: f64 = 0.0;
    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    for (i, t) in ts.iter().enumerate() {
        let analytic = grads.get(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut numeric = vec![0.0; t.numel()];
        for (j, g) in numeric.iter_mut().enumerate() {
            let mut plus = base.clone();
            plus[i][j] += H;
            let mut minus = base.clone();
            minus[i][j] -= H;
            *g = (eval(&plus) - eval(&minus)) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

pub fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (randn(rng, shape.iter().product()), shape.to_vec())
}

pub fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n = shape.iter().product();
    ((0..n).map(|_| rng.random_range(0.5..2.0)).collect(), shape.to_vec())
}

struct Case {
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<(Vec<f64>, Vec<usize>)>,
    build: Box<Build>,
}

fn case(
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<(Vec<f64>, Vec<usize>)>,
    build: impl for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t> + 'static,
) -> Case {
    Case { name, inputs, build: Box::new(build) }
}

fn cases() -> Vec<Case> {
    vec![
        case("add", |r| vec![input(r, &[2, 3]), input(r, &[2, 3])], |_, x| x[0].add(&x[1]).unwrap()),
        case("add_broadcast_suffix", |r| vec![input(r, &[2, 3, 4]), input(r, &[4])], |_, x| x[0].add(&x[1]).unwrap()),
        case("add_broadcast_inner", |r| vec![input(r, &[2, 3, 4]), input(r, &[3, 1])], |_, x| x[0].add(&x[1]).unwrap()),
        case("sub_broadcast", |r| vec![input(r, &[2, 3, 4]), input(r, &[1, 3, 4])], |_, x| x[0].sub(&x[1]).unwrap()),
        case("mul", |r| vec![input(r, &[3, 4]), input(r, &[3, 1])], |_, x| x[0].mul(&x[1]).unwrap()),
        case("div", |r| vec![input(r, &[3, 4]), positive(r, &[4])], |_, x| x[0].div(&x[1]).unwrap()),
        case("scale", |r| vec![input(r, &[5])], |_, x| x[0].scale(-1.7)),
        case("add_scalar", |r| vec![input(r, &[5])], |_, x| x[0].add_scalar(0.3).mul(&x[0]).unwrap()),
        case("matmul", |r| vec![input(r, &[3, 3]), input(r, &[3, 3])], |_, x| x[0].matmul(&x[1]).unwrap()),
        case("matmul_batched_rows", |r| vec![input(r, &[2, 3, 4]), input(r, &[4, 5])], |_, x| x[0].matmul(&x[1]).unwrap()),
        case("matmul_t", |r| vec![input(r, &[3, 4]), input(r, &[5, 4])], |_, x| x[0].matmul_t(&x[1]).unwrap()),
        case("batch_matmul", |r| vec![input(r, &[2, 3, 4]), input(r, &[2, 4, 5])], |_, x| x[0].batch_matmul(&x[1], false).unwrap()),
        case("batch_matmul_t", |r| vec![input(r, &[2, 3, 4]), input(r, &[2, 5, 4])], |_, x| x[0].batch_matmul(&x[1], true).unwrap()),
        case("reshape", |r| vec![input(r, &[2, 6])], |_, x| x[0].reshape(&[3, 4]).unwrap().gelu()),
        case("permute", |r| vec![input(r, &[2, 3, 4])], |_, x| x[0].permute(&[2, 0, 1]).unwrap().gelu()),
        case("transpose", |r| vec![input(r, &[3, 5])], |_, x| x[0].transpose().unwrap().gelu()),
        case("broadcast_to", |r| vec![input(r, &[3, 1])], |_, x| x[0].broadcast_to(&[2, 3, 4]).unwrap()),
        case("softmax_last", |r| vec![input(r, &[2, 4])], |_, x| x[0].softmax(1).unwrap()),
        case("softmax_middle", |r| vec![input(r, &[2, 3, 4])], |_, x| x[0].softmax(1).unwrap()),
        case("softmax_first", |r| vec![input(r, &[3, 2, 2])], |_, x| x[0].softmax(0).unwrap()),
        case(
            "layer_norm",
            |r| vec![input(r, &[2, 8]), input(r, &[8]), input(r, &[8])],
            |_, x| x[0].layer_norm(&x[1], &x[2]).unwrap(),
        ),
        case("gelu", |r| vec![input(r, &[7])], |_, x| x[0].gelu()),
        case(
            "gather_rows",
            |r| vec![input(r, &[5, 3])],
            |_, x| x[0].gather_rows(&[4, 0, 4, 2, 0, 0]).unwrap(),
        ),
        case(
            "concat",
            |r| vec![input(r, &[2, 3, 2]), input(r, &[2, 1, 2])],
            |_, x| Tensor::concat(&[x[0], x[1]], 1).unwrap(),
        ),
        case("slice", |r| vec![input(r, &[2, 5, 3])], |_, x| x[0].slice(1, 1, 3).unwrap()),
        case("sum", |r| vec![input(r, &[3, 4])], |_, x| x[0].sum().mul(&x[0].sum()).unwrap()),
        case("mean", |r| vec![input(r, &[3, 4])], |_, x| x[0].mean().mul(&x[0].mean()).unwrap()),
        case("sum_axis", |r| vec![input(r, &[2, 3, 4])], |_, x| x[0].sum_axis(1).unwrap()),
        case("mean_axis", |r| vec![input(r, &[2, 3, 4])], |_, x| x[0].mean_axis(2).unwrap()),
        case(
            "clamp",
            |r| vec![(
                (0..6).map(|_| r.random_range(-0.9..0.9)).collect(),
                vec![6],
            )],
            |_, x| x[0].clamp(-1.0, 1.0),
        ),
        case("l2_normalize", |r| vec![input(r, &[3, 6])], |_, x| x[0].l2_normalize().unwrap()),
        case(
            "weighted_nll",
            |r| vec![input(r, &[4, 5])],
            |_, x| x[0].weighted_nll(&[1, 4, 0, 2], &[0.5, 0.0, 1.5, 0.25]).unwrap(),
        ),
        case(
            "cross_entropy",
            |r| vec![input(r, &[4, 5])],
            |_, x| x[0].cross_entropy(&[3, 9, 0, 4], 9).unwrap(),
        ),
        case(
            "cosine_similarity",
            |r| vec![input(r, &[6]), input(r, &[6])],
            |_, x| cosine_similarity(&x[0], &x[1]).unwrap(),
        ),
        case(
            "cosine_matrix",
            |r| vec![input(r, &[3, 6]), input(r, &[4, 6])],
            |_, x| cosine_matrix(&x[0], &x[1]).unwrap(),
        ),
        case(
            "shared_subexpression",
            |r| vec![input(r, &[4])],
            |_, x| {
                let y = x[0].gelu();
                y.mul(&y).unwrap().add(&y).unwrap()
            },
        ),
    ]
}

pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 12,
        model_dim: 16,
        n_heads: 4,
        n_pre_layers: 2,
        n_post_layers: 1,
        n_groups: 3,
        max_tokens: 8,
        projection_dim: 8,
        image_dim: 6,
        ..EncoderConfig::default()
    }
}

/// Full encode → loss pipeline on a 2 × 8 batch; every parameter tensor is
/// probed at a few random coordinates.
pub fn end_to_end_gradients() -> (Vec<f64>, Vec<f64>) {
    let model = TextGroupModel::new(tiny_config(), 3).unwrap();
    let seqs = vec![vec![1, 5, 6, 7, 8, 9, 10, 2], vec![1, 4, 11, 5, 2]];
    let batch = TextBatch::new(&seqs, 0, vec![]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images = ImageBatch::new(randn(&mut rng, 2 * 4 * 6), 2, 4, 6);
    let weights = LossWeights::default();
    let mode = Mode::Train { seed: 17 };

    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let out = total_loss(&model, &p, &batch, &images, &weights, mode).unwrap();
    let hard = out.grouping.hard_assignment.clone();
    let anchor = out.grouping.soft_attention.value().to_vec();
    let grads = tape.backward(&out.total).unwrap();

    // The hard forward is piecewise constant in A', so differences are taken
    // on the anchored route, which matches it at the unperturbed point and
    // carries the straight-through derivative around it.
    let loss_of = |m: &TextGroupModel| -> f64 {
        let tape = Tape::new();
        let p = m.params.bind(&tape);
        let route = AssignmentRoute::Anchored(anchor.clone());
        let out = total_loss_with(m, &p, &batch, &images, &weights, mode, route).unwrap();
        assert_eq!(out.grouping.hard_assignment, hard, "probe flipped a hard assignment");
        out.total.item()
    };
    assert!((loss_of(&model) - out.total.item()).abs() <= 1e-12 * out.total.item().abs());

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for id in model.params.ids().collect::<Vec<_>>() {
        let g = grads.get(&p.get(id)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; model.params.data(id).len()]);
        let n = g.len();
        for _ in 0..3.min(n) {
            let j = rng.random_range(0..n);
            let mut plus = model.clone();
            plus.params.data_mut(id)[j] += H;
            let mut minus = model.clone();
            minus.params.data_mut(id)[j] -= H;
            numeric.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * H));
            analytic.push(g[j]);
        }
    }
    (analytic, numeric)
}

/// Worst relative error of every op case over all seeds.
pub fn every_op_worst() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .map(|c| {
            let worst = (0..SEEDS)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let inputs = (c.inputs)(&mut rng);
                    check(&inputs, seed, c.build.as_ref())
                })
                .fold(0.0, f64::max);
            (c.name, worst)
        })
        .collect()
}
