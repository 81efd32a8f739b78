//! Central finite differences against the tape's reverse pass.

mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use support::gradcheck::*;
use textgroup::autodiff::{cosine_similarity, Tape};

#[test]
fn every_op_matches_finite_differences_on_20_seeds() {
    for (name, worst) in every_op_worst() {
        println!("{name:<24} worst rel err {worst:.2e}");
        assert!(worst < OP_TOL, "{name}: rel err {worst:e}");
    }
}

#[test]
fn spec_sized_checks_reach_1e_6() {
    for seed in 0..SEEDS {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let e = check(&[input(&mut r, &[3, 3]), input(&mut r, &[3, 3])], seed, &|_, x| {
            x[0].matmul(&x[1]).unwrap().sum()
        });
        assert!(e < 1e-6);
        let e = check(&[input(&mut r, &[2, 4])], seed, &|_, x| x[0].softmax(1).unwrap());
        assert!(e < 1e-6);
        let e = check(&[input(&mut r, &[2, 8]), input(&mut r, &[8]), input(&mut r, &[8])],
            seed,
            &|_, x| x[0].layer_norm(&x[1], &x[2]).unwrap(),
        );
        assert!(e < 1e-6);
        let e = check(&[input(&mut r, &[6]), input(&mut r, &[6])], seed, &|_, x| {
            cosine_similarity(&x[0], &x[1]).unwrap()
        });
        assert!(e < 1e-6);
    }
}

#[test]
fn stop_gradient_is_identity_forward_and_zero_backward() {
    let tape = Tape::new();
    let x = tape.var(vec![0.25, -3.0, 7.5], &[3]).unwrap();
    let s = x.stop_gradient();
    assert_eq!(*s.value(), *x.value());
    let loss = s.mul(&x).unwrap().sum();
    let g = tape.backward(&loss).unwrap();
    // d/dx [sg(x) · x] = sg(x)
    assert_eq!(g.get(&x).unwrap(), &[0.25, -3.0, 7.5]);
}

/// Forward is the hard buffer; backward passes the upstream gradient to the
/// soft input unchanged, so it equals the gradient of the soft-only graph.
#[test]
fn straight_through_forwards_hard_and_backpropagates_soft() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..SEEDS {
        let x = randn(&mut rng, 6);
        let w = randn(&mut rng, 6);
        let hard = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let tape = Tape::new();
        let a = tape.var(x.clone(), &[2, 3]).unwrap();
        let wt = tape.constant(w.clone(), &[2, 3]).unwrap();
        let st = a.softmax(0).unwrap().straight_through(hard.clone()).unwrap();
        assert_eq!(*st.value(), hard);
        let g_st = tape.backward(&st.mul(&wt).unwrap().sum()).unwrap().get(&a).unwrap().to_vec();

        let tape = Tape::new();
        let a = tape.var(x, &[2, 3]).unwrap();
        let wt = tape.constant(w, &[2, 3]).unwrap();
        let soft = a.softmax(0).unwrap();
        let g_soft = tape.backward(&soft.mul(&wt).unwrap().sum()).unwrap().get(&a).unwrap().to_vec();
        assert_eq!(g_st, g_soft);
    }
}

#[test]
fn end_to_end_pipeline_matches_finite_differences() {
    let (analytic, numeric) = end_to_end_gradients();
    let e = rel_err(&analytic, &numeric);
    println!("end-to-end rel err {e:.2e} over {} coordinates", analytic.len());
    assert!(e < E2E_TOL, "end-to-end rel err {e:e}");
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() <= E2E_TOL * a.abs().max(n.abs()).max(1e-4), "{a} vs {n}");
    }
}
