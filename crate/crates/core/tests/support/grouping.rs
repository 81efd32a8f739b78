//! Grouping-block property checks over one random configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use textgroup::autodiff::{argmax_axis, gumbel_noise, Tape};
use textgroup::batch::TextBatch;
use textgroup::model::{AssignmentRoute, EncoderConfig, Mode, TextGroupModel};

pub const VOCAB: usize = 20;

pub fn config(d: usize, k: usize, pre: usize, post: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: VOCAB,
        model_dim: d,
        n_heads: 2,
        n_pre_layers: pre,
        n_post_layers: post,
        n_groups: k,
        max_tokens: 12,
        projection_dim: 8,
        image_dim: 8,
        ..EncoderConfig::default()
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, max_len: usize) -> TextBatch {
    let seqs: Vec<Vec<usize>> = (0..b)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| rng.random_range(1..VOCAB)).collect()
        })
        .collect();
    TextBatch::new(&seqs, 0, vec![])
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub d: usize,
    pub k: usize,
    pub b: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Setup {
    /// Draws from the same ranges the property tests use.
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            d: [4, 8][rng.random_range(0..2)],
            k: rng.random_range(1..=6),
            b: rng.random_range(1..=3),
            max_len: rng.random_range(1..=9),
            seed: rng.random(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Column-stochastic soft attention, one-hot forward assignment equal to
/// the argmax, nothing on padding, and eval-mode determinism.
pub fn check_invariants(s: &Setup) -> Result<(), String> {
    let model = TextGroupModel::new(config(s.d, s.k, 1, 1), s.seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let batch = random_batch(&mut rng, s.b, s.max_len);
    let (b, m, k) = (batch.batch_size(), batch.seq_len(), s.k);
    let mask = batch.pad_mask().to_vec();

    for mode in [Mode::Eval, Mode::Train { seed: s.seed ^ 5 }] {
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let (_, out) = model.encode_text(&p, &batch, mode).map_err(|e| e.to_string())?;
        let soft = out.soft_attention.value();
        let hard = out.assignment.value();
        let winners = argmax_axis(&soft, &[b, k, m], 1);
        for bi in 0..b {
            for j in 0..m {
                let col = |t: &[f64], g: usize| t[(bi * k + g) * m + j];
                if mask[bi * m + j] {
                    let total: f64 = (0..k).map(|g| col(&soft, g)).sum();
                    ensure!((total - 1.0).abs() <= 1e-9, "column sum {total}");
                    for g in 0..k {
                        let want = if g == winners[bi * m + j] { 1.0 } else { 0.0 };
                        ensure!(col(&hard, g) == want, "assignment {} at group {g}", col(&hard, g));
                    }
                    ensure!(
                        out.hard_assignment[bi][j] == Some(winners[bi * m + j]),
                        "hard assignment disagrees with argmax"
                    );
                } else {
                    ensure!(
                        (0..k).all(|g| col(&soft, g) == 0.0 && col(&hard, g) == 0.0),
                        "mass on a padded token"
                    );
                    ensure!(out.hard_assignment[bi][j].is_none(), "padded token assigned");
                }
            }
        }
    }

    let run = || {
        let tape = Tape::new();
        let p = model.params.bind_constant(&tape);
        let (g, out) = model.encode_text(&p, &batch, Mode::Eval).expect("valid batch");
        (g.to_vec(), out.soft_attention.to_vec(), out.hard_assignment)
    };
    ensure!(run() == run(), "eval mode is not deterministic");
    Ok(())
}

/// ∂L/∂A_raw through the hard assignment equals the same upstream gradient
/// pushed through a separately built soft run with identical noise, to
/// 1e-12 element-wise. Both spellings of the trick must agree too.
pub fn check_straight_through(s: &Setup) -> Result<(), String> {
    let model = TextGroupModel::new(config(s.d, s.k, 1, 1), s.seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let batch = random_batch(&mut rng, s.b, s.max_len);
    let (b, m, k) = (batch.batch_size(), batch.seq_len(), s.k);
    let noise_seed = s.seed.wrapping_add(11);
    let tau = model.config.gumbel_temperature;

    let mut per_route = Vec::new();
    for route in [AssignmentRoute::StraightThrough, AssignmentRoute::Literal] {
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let (groups, out) = model
            .encode_text_with(&p, &batch, Mode::Train { seed: noise_seed }, route)
            .map_err(|e| e.to_string())?;
        let w: Vec<f64> = (0..groups.numel()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let loss = groups.mul(&tape.constant(w, &groups.shape()).unwrap()).unwrap().sum();
        let grads = tape.backward(&loss).map_err(|e| e.to_string())?;
        let d_raw = grads.get(&out.raw_scores).ok_or("no gradient at raw scores")?.to_vec();
        let d_assign = grads.get(&out.assignment).ok_or("no gradient at assignment")?.to_vec();
        per_route.push((out.raw_scores.to_vec(), d_raw, d_assign));
    }
    let (raw, d_raw, d_assign) = &per_route[0];
    for (a, l) in d_raw.iter().zip(&per_route[1].1) {
        ensure!((a - l).abs() <= 1e-12 * a.abs().max(1.0), "routes differ: {a} vs {l}");
    }

    let tape = Tape::new();
    let raw_t = tape.var(raw.clone(), &[b, k, m]).unwrap();
    let noise = tape.constant(gumbel_noise(&[b, k, m], noise_seed), &[b, k, m]).unwrap();
    let real = tape
        .constant(batch.pad_mask().iter().map(|&r| f64::from(u8::from(r))).collect(), &[b, 1, m])
        .unwrap();
    let soft = raw_t.add(&noise).unwrap().scale(1.0 / tau).softmax(1).unwrap().mul(&real).unwrap();
    let upstream = tape.constant(d_assign.clone(), &[b, k, m]).unwrap();
    let grads = tape.backward(&soft.mul(&upstream).unwrap().sum()).unwrap();
    let d_soft = grads.get(&raw_t).ok_or("no gradient in the soft run")?;
    for (a, s) in d_raw.iter().zip(d_soft) {
        ensure!((a - s).abs() <= 1e-12 * a.abs().max(1.0), "soft run differs: {a} vs {s}");
    }
    Ok(())
}
