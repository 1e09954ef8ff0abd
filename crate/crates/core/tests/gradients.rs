mod common;

use zrudc::gridnet::PoolKernel;
use zrudc::tensor::ops::Extremum;
use zrudc::tensor::{Tape, Tensor, Var};

/// Small enough that a central difference never crosses a kink of the
/// piecewise-linear ops on random data.
const STEP: f64 = 1e-6;
/// The full objective has gradients near 1e-6, where a step of 1e-6 is at
/// the rounding floor of the central difference.
const OBJECTIVE_STEP: f64 = 1e-5;

/// `Σ R ⊙ op(inputs)` for a fixed random `R`, with gradients.
fn weighted_sum(
    inputs: &[Tensor<f64>],
    seed: u64,
    op: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    grads: bool,
) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grads)).collect();
    let out = op(&mut tape, &vars);
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(common::random_tensor(&mut common::rng(seed), &shape, -1.0, 1.0));
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).item();
    if !grads {
        return (value, vec![]);
    }
    let mut g = tape.backward(loss).unwrap();
    let out = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()).unwrap()))
        .collect();
    (value, out)
}

fn check_op(name: &str, inputs: Vec<Tensor<f64>>, op: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let (_, analytic) = weighted_sum(&inputs, 99, &op, true);
    let check = common::check_gradients_with(STEP, &inputs, &analytic, |ts| weighted_sum(ts, 99, &op, false).0);
    assert_eq!(
        check.passed, check.checked,
        "{name}: worst relative error {:.2e}",
        check.worst
    );
}

fn rand(seed: u64, shape: &[usize]) -> Tensor<f64> {
    common::random_tensor(&mut common::rng(seed), shape, -1.0, 1.0)
}

#[test]
fn conv2d_gradients() {
    for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
        check_op(
            "conv2d",
            vec![rand(1, &[2, 6, 7]), rand(2, &[3, 2, 3, 3]), rand(3, &[3])],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap(),
        );
    }
}

#[test]
fn pooling_gradients() {
    check_op("maxpool2d", vec![rand(4, &[2, 7, 5])], |t, v| {
        t.maxpool2d(v[0], 3, 2).unwrap()
    });
    check_op("maxpool2d ceil", vec![rand(5, &[1, 7, 7])], |t, v| {
        t.maxpool2d(v[0], 3, 3).unwrap()
    });
    check_op("avgpool2d", vec![rand(6, &[3, 8, 8])], |t, v| {
        t.avgpool2d(v[0], 4).unwrap()
    });
}

#[test]
fn extremum_gradients() {
    let img = || common::random_tensor(&mut common::rng(7), &[3, 6, 6], 0.0, 1.0);
    check_op("dark channel", vec![img()], |t, v| t.dark_channel(v[0], 3).unwrap());
    check_op("bright channel", vec![img()], |t, v| t.bright_channel(v[0], 5).unwrap());
    check_op("channel max", vec![img()], |t, v| {
        t.channel_extremum(v[0], Extremum::Max).unwrap()
    });
    check_op("window min", vec![img()], |t, v| {
        t.window_extremum(v[0], 3, Extremum::Min).unwrap()
    });
}

#[test]
fn pointwise_gradients() {
    check_op("prelu", vec![rand(8, &[2, 4, 4]), Tensor::scalar(0.2)], |t, v| {
        t.prelu(v[0], v[1]).unwrap()
    });
    check_op("abs", vec![rand(9, &[2, 3, 3])], |t, v| t.abs(v[0]));
    check_op("square", vec![rand(10, &[2, 3, 3])], |t, v| t.square(v[0]));
    check_op("mul", vec![rand(11, &[4]), rand(12, &[4])], |t, v| {
        t.mul(v[0], v[1]).unwrap()
    });
    check_op("sub", vec![rand(13, &[4]), rand(14, &[4])], |t, v| {
        t.sub(v[0], v[1]).unwrap()
    });
}

#[test]
fn resampling_and_layout_gradients() {
    check_op("bilinear up", vec![rand(15, &[2, 3, 4])], |t, v| {
        t.bilinear_resize(v[0], 7, 9).unwrap()
    });
    check_op("bilinear down", vec![rand(16, &[2, 9, 7])], |t, v| {
        t.bilinear_resize(v[0], 4, 3).unwrap()
    });
    check_op("diff x", vec![rand(17, &[2, 4, 5])], |t, v| t.diff_x(v[0]).unwrap());
    check_op("diff y", vec![rand(18, &[2, 4, 5])], |t, v| t.diff_y(v[0]).unwrap());
    check_op("means", vec![rand(19, &[3, 4, 4])], |t, v| {
        let a = t.channel_mean(v[0]).unwrap();
        t.spatial_mean(a).unwrap()
    });
    check_op(
        "concat/narrow",
        vec![rand(20, &[2, 3, 3]), rand(21, &[3, 3, 3])],
        |t, v| {
            let c = t.concat_channels(v[0], v[1]).unwrap();
            t.narrow_channels(c, 1, 3).unwrap()
        },
    );
    check_op("s_slice", vec![rand(22, &[12, 5, 6]), rand(23, &[3, 5, 6])], |t, v| {
        t.s_slice(v[0], v[1]).unwrap()
    });
}

/// The whole objective through the rank-reducing pool, which the coarse
/// step of the acceptance check leaves out.
#[test]
fn objective_gradients_through_pooling() {
    let params = common::tiny_params(5);
    let img = common::tiny_image(5);
    let weights = common::tiny_weights();
    for kernel in [PoolKernel::Size(3), PoolKernel::Size(2)] {
        let (_, analytic) = common::objective(&params, &img, &weights, kernel, true);
        let mut work = params.clone();
        let check = common::check_gradients_with(OBJECTIVE_STEP, params.tensors(), &analytic, |ts| {
            work.tensors_mut().clone_from_slice(ts);
            common::objective(&work, &img, &weights, kernel, false).0
        });
        assert!(check.fraction() >= 0.99, "{kernel:?}: {check:?}");
    }
}

#[test]
fn objective_gradients_at_random_init() {
    let params = zrudc::gridnet::GridNetParams::<f64>::init(common::tiny_net(), 11).unwrap();
    let img = common::random_tensor(&mut common::rng(11), &[3, 8, 8], 0.0, 1.0);
    let weights = common::tiny_weights();
    let (_, analytic) = common::objective(&params, &img, &weights, PoolKernel::Size(3), true);
    let mut work = params.clone();
    let check = common::check_gradients_with(OBJECTIVE_STEP, params.tensors(), &analytic, |ts| {
        work.tensors_mut().clone_from_slice(ts);
        common::objective(&work, &img, &weights, PoolKernel::Size(3), false).0
    });
    assert!(check.fraction() >= 0.99, "{check:?}");
}
