mod common;

use gigaseg::autodiff::Tape;
use gigaseg::model::{init_params, ArchSpec};
use gigaseg::ops;
use gigaseg::pipeline::{LabelRecipe, SynthParams};
use gigaseg::train::{loss_and_grads, synth_sample};
use gigaseg::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pinned_model_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let r = common::gradcheck(seed);
        eprintln!("seed {seed}: {} plain, {} with frozen ReLU pattern, worst rel {:.2e}", r.plain, r.frozen, r.worst);
        assert_eq!(r.plain + r.frozen, 4492);
    }
}

#[test]
fn tape_gradient_of_two_consumers_is_their_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = ops::ConvSpec::conv(2, 2, 1, 1);
    let shape = Shape::new(1, 1, 4, 4).unwrap();
    let x = Tensor::<f64>::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0));
    let w = Tensor::<f64>::from_fn(spec.weight_shape(), |_, _, _, _| rng.random_range(-1.0..1.0));
    let b = Tensor::<f64>::from_vec(spec.bias_shape(), vec![0.3]).unwrap();
    let target = Tensor::<f64>::from_fn(Shape::new(1, 1, 2, 2).unwrap(), |_, _, y, _| y as f64);

    // The input `x` feeds a relu branch and a sigmoid branch; the loss
    // reads their sum through a conv and a sigmoid.
    let grad = |branches: (bool, bool)| {
        let mut tape = Tape::new();
        let xi = tape.param(x.clone());
        let wi = tape.param(w.clone());
        let bi = tape.param(b.clone());
        let r = tape.relu(xi).unwrap();
        let s = tape.sigmoid(xi).unwrap();
        let hold = |t: &mut Tape<f64>, id, keep: bool| if keep { id } else { t.input(t.value(id).unwrap().clone()) };
        let r = hold(&mut tape, r, branches.0);
        let s = hold(&mut tape, s, branches.1);
        let sum = tape.add(r, s).unwrap();
        let c = tape.conv(sum, wi, Some(bi), spec).unwrap();
        let p = tape.sigmoid(c).unwrap();
        let t = tape.input(target.clone());
        let loss = tape.bce(p, t).unwrap();
        tape.backward(loss).unwrap().grads.remove(&xi).unwrap()
    };
    let both = grad((true, true));
    let mut parts = grad((true, false));
    parts.accumulate(&grad((false, true))).unwrap();
    assert!(both.max_abs_diff(&parts).unwrap() <= 1e-15);
    assert!(both.data().iter().any(|&v| v != 0.0));
}

#[test]
fn reference_forward_agrees_with_loss_and_grads() {
    let arch = ArchSpec::pinned();
    let p = init_params::<f64>(&arch, 9);
    let (img, target) = synth_sample(9, 64, 256, &SynthParams::default(), &LabelRecipe::default(), 16).unwrap();
    let (img, target) = (img.cast::<f64>(), target.cast::<f64>());
    let (pred, _) = common::forward_ref(&arch, &p, &img);
    let out = loss_and_grads(&arch, p, img, target.clone()).unwrap();
    assert!((common::bce_ref(&pred, &target) - out.loss).abs() <= 1e-10);
}
