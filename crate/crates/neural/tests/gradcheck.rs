//! Finite-difference certification of every differentiable op and layer,
//! plus composed toy stacks, in 64-bit mode.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfpose_neural::gradcheck::{finite_diff_grad, max_rel_error, FD_STEP, FD_TOL};
use rfpose_neural::{Graph, LayerSpec, Mode, Stack, Var};

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Projects an output tensor to a scalar with fixed random weights so
/// every output coordinate influences the loss.
fn project(g: &mut Graph<f64>, y: Var, proj: &ArrayD<f64>) -> Var {
    let p = g.constant(proj.clone());
    let m = g.mul(y, p).unwrap();
    g.sum_all(m)
}

/// Checks d(loss)/d(x0) for a graph built by `build` against central
/// differences.
fn check_input_grad(
    build: impl Fn(&mut Graph<f64>, Var) -> Var,
    x0: &ArrayD<f64>,
    label: &str,
) {
    let eval = |x: &ArrayD<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(x.clone(), true);
        let loss = build(&mut g, xv);
        g.scalar_value(loss).unwrap()
    };
    let numeric = finite_diff_grad(eval, x0, FD_STEP);

    let mut g = Graph::<f64>::new();
    let xv = g.leaf(x0.clone(), true);
    let loss = build(&mut g, xv);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).unwrap();
    let err = max_rel_error(analytic, &numeric);
    assert!(err < FD_TOL, "{label}: relative error {err}");
}

#[test]
fn elementwise_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = rand_array(&mut rng, &[3, 4], -2.0, 2.0);
    let proj = rand_array(&mut rng, &[3, 4], -1.0, 1.0);
    let other = rand_array(&mut rng, &[3, 4], -2.0, 2.0);

    check_input_grad(
        |g, xv| {
            let o = g.constant(other.clone());
            let s = g.add(xv, o).unwrap();
            project(g, s, &proj)
        },
        &x,
        "add",
    );
    check_input_grad(
        |g, xv| {
            let o = g.constant(other.clone());
            let s = g.sub(xv, o).unwrap();
            project(g, s, &proj)
        },
        &x,
        "sub",
    );
    check_input_grad(
        |g, xv| {
            let o = g.constant(other.clone());
            let s = g.mul(xv, o).unwrap();
            project(g, s, &proj)
        },
        &x,
        "mul",
    );
    check_input_grad(
        |g, xv| {
            let s = g.mul_scalar(xv, -1.7);
            project(g, s, &proj)
        },
        &x,
        "mul_scalar",
    );
    check_input_grad(
        |g, xv| {
            let s = g.square(xv);
            project(g, s, &proj)
        },
        &x,
        "square",
    );
    // Relu and abs away from the kink; sqrt needs positive input.
    let x_off = x.mapv(|v| if v.abs() < 0.3 { v + 0.5 } else { v });
    check_input_grad(
        |g, xv| {
            let s = g.relu(xv);
            project(g, s, &proj)
        },
        &x_off,
        "relu",
    );
    check_input_grad(
        |g, xv| {
            let s = g.abs(xv);
            project(g, s, &proj)
        },
        &x_off,
        "abs",
    );
    let x_pos = x.mapv(|v| v.abs() + 0.5);
    check_input_grad(
        |g, xv| {
            let s = g.sqrt(xv).unwrap();
            project(g, s, &proj)
        },
        &x_pos,
        "sqrt",
    );
}

#[test]
fn reduction_and_structure_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = rand_array(&mut rng, &[4, 6], -2.0, 2.0);
    check_input_grad(|g, xv| g.mean_all(xv), &x, "mean_all");
    check_input_grad(|g, xv| g.sum_all(xv), &x, "sum_all");

    let proj_rows = rand_array(&mut rng, &[4], -1.0, 1.0);
    check_input_grad(
        |g, xv| {
            let r = g.sum_rows(xv).unwrap();
            project(g, r, &proj_rows)
        },
        &x,
        "sum_rows",
    );

    let x3 = rand_array(&mut rng, &[2, 5, 3], -1.0, 1.0);
    let proj3 = rand_array(&mut rng, &[2, 5, 3], -1.0, 1.0);
    check_input_grad(
        |g, xv| {
            let c = g.center_rows(xv).unwrap();
            project(g, c, &proj3)
        },
        &x3,
        "center_rows",
    );

    let proj_flat = rand_array(&mut rng, &[4 * 6], -1.0, 1.0);
    check_input_grad(
        |g, xv| {
            let r = g.reshape(xv, &[24]).unwrap();
            project(g, r, &proj_flat)
        },
        &x,
        "reshape",
    );

    let right = rand_array(&mut rng, &[4, 3], -1.0, 1.0);
    let proj_cat = rand_array(&mut rng, &[4, 9], -1.0, 1.0);
    check_input_grad(
        |g, xv| {
            let r = g.constant(right.clone());
            let c = g.concat2(xv, r).unwrap();
            project(g, c, &proj_cat)
        },
        &x,
        "concat2",
    );
}

#[test]
fn matmul_and_bias_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let x = rand_array(&mut rng, &[3, 5], -1.0, 1.0);
    let w = rand_array(&mut rng, &[5, 4], -1.0, 1.0);
    let b = rand_array(&mut rng, &[4], -1.0, 1.0);
    let proj = rand_array(&mut rng, &[3, 4], -1.0, 1.0);

    // Gradient w.r.t. the input.
    check_input_grad(
        |g, xv| {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let h = g.matmul(xv, wv).unwrap();
            let y = g.add_row_vec(h, bv).unwrap();
            project(g, y, &proj)
        },
        &x,
        "linear input",
    );
    // Gradient w.r.t. the weight.
    check_input_grad(
        |g, wv| {
            let xv = g.constant(x.clone());
            let h = g.matmul(xv, wv).unwrap();
            project(g, h, &proj)
        },
        &w,
        "linear weight",
    );
    // Gradient w.r.t. the bias.
    check_input_grad(
        |g, bv| {
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let h = g.matmul(xv, wv).unwrap();
            let y = g.add_row_vec(h, bv).unwrap();
            project(g, y, &proj)
        },
        &b,
        "linear bias",
    );
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let x = rand_array(&mut rng, &[2, 3, 7, 6], -1.0, 1.0);
    let w = rand_array(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_array(&mut rng, &[4], -0.5, 0.5);
    for stride in [1usize, 2] {
        let oh = 7usize.div_ceil(stride);
        let ow = 6usize.div_ceil(stride);
        let proj = rand_array(&mut rng, &[2, 4, oh, ow], -1.0, 1.0);
        check_input_grad(
            |g, xv| {
                let wv = g.constant(w.clone());
                let bv = g.constant(b.clone());
                let y = g.conv2d(xv, wv, bv, stride).unwrap();
                project(g, y, &proj)
            },
            &x,
            &format!("conv2d s{stride} input"),
        );
        check_input_grad(
            |g, wv| {
                let xv = g.constant(x.clone());
                let bv = g.constant(b.clone());
                let y = g.conv2d(xv, wv, bv, stride).unwrap();
                project(g, y, &proj)
            },
            &w,
            &format!("conv2d s{stride} weight"),
        );
        check_input_grad(
            |g, bv| {
                let xv = g.constant(x.clone());
                let wv = g.constant(w.clone());
                let y = g.conv2d(xv, wv, bv, stride).unwrap();
                project(g, y, &proj)
            },
            &b,
            &format!("conv2d s{stride} bias"),
        );
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for shape in [vec![6usize, 3], vec![2, 3, 4, 5]] {
        let x = rand_array(&mut rng, &shape, -2.0, 2.0);
        let gamma = rand_array(&mut rng, &[3], 0.5, 1.5);
        let beta = rand_array(&mut rng, &[3], -0.5, 0.5);
        let proj = rand_array(&mut rng, &shape, -1.0, 1.0);
        let rmean = vec![0.1, -0.2, 0.05];
        let rvar = vec![1.1, 0.9, 1.3];

        for eval_mode in [false, true] {
            let bn = |g: &mut Graph<f64>, xv: Var, gv: Var, bv: Var| {
                if eval_mode {
                    g.batch_norm(xv, gv, bv, 1e-5, Some((&rmean, &rvar))).unwrap().0
                } else {
                    g.batch_norm(xv, gv, bv, 1e-5, None).unwrap().0
                }
            };
            let tag = if eval_mode { "eval" } else { "train" };
            check_input_grad(
                |g, xv| {
                    let gv = g.constant(gamma.clone());
                    let bv = g.constant(beta.clone());
                    let y = bn(g, xv, gv, bv);
                    project(g, y, &proj)
                },
                &x,
                &format!("batch_norm {tag} input {shape:?}"),
            );
            check_input_grad(
                |g, gv| {
                    let xv = g.constant(x.clone());
                    let bv = g.constant(beta.clone());
                    let y = bn(g, xv, gv, bv);
                    project(g, y, &proj)
                },
                &gamma,
                &format!("batch_norm {tag} gamma {shape:?}"),
            );
            check_input_grad(
                |g, bv| {
                    let xv = g.constant(x.clone());
                    let gv = g.constant(gamma.clone());
                    let y = bn(g, xv, gv, bv);
                    project(g, y, &proj)
                },
                &beta,
                &format!("batch_norm {tag} beta {shape:?}"),
            );
        }
    }
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let x = rand_array(&mut rng, &[5, 7], -2.0, 2.0);
    let gamma = rand_array(&mut rng, &[7], 0.5, 1.5);
    let beta = rand_array(&mut rng, &[7], -0.5, 0.5);
    let proj = rand_array(&mut rng, &[5, 7], -1.0, 1.0);
    check_input_grad(
        |g, xv| {
            let gv = g.constant(gamma.clone());
            let bv = g.constant(beta.clone());
            let y = g.layer_norm(xv, gv, bv, 1e-5).unwrap();
            project(g, y, &proj)
        },
        &x,
        "layer_norm input",
    );
    check_input_grad(
        |g, gv| {
            let xv = g.constant(x.clone());
            let bv = g.constant(beta.clone());
            let y = g.layer_norm(xv, gv, bv, 1e-5).unwrap();
            project(g, y, &proj)
        },
        &gamma,
        "layer_norm gamma",
    );
    check_input_grad(
        |g, bv| {
            let xv = g.constant(x.clone());
            let gv = g.constant(gamma.clone());
            let y = g.layer_norm(xv, gv, bv, 1e-5).unwrap();
            project(g, y, &proj)
        },
        &beta,
        "layer_norm beta",
    );
}

/// End-to-end check through toy-width versions of the three model
/// architectures: conv stack, dual-branch conv stack with fusion, and
/// the Linear-LN-ReLU predictor.
#[test]
fn composed_toy_architectures_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);

    // Pose-encoder shape: Conv-BN-ReLU x2 (stride 2, 1) then Linear.
    let pose_specs = vec![
        LayerSpec::Conv2d { out_channels: 4, kernel: 5, stride: 2 },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Conv2d { out_channels: 6, kernel: 5, stride: 1 },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Linear { out_features: 8 },
    ];
    gradcheck_stack_input(&pose_specs, &[3, 10, 10], &mut rng, "toy pose encoder");

    // Sub-encoder shape: leading 3x3 then strided 5x5 convs, last block
    // without ReLU.
    let rf_specs = vec![
        LayerSpec::Conv2d { out_channels: 1, kernel: 3, stride: 1 },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Conv2d { out_channels: 4, kernel: 5, stride: 2 },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Conv2d { out_channels: 8, kernel: 5, stride: 2 },
        LayerSpec::BatchNorm,
    ];
    gradcheck_stack_input(&rf_specs, &[1, 12, 12], &mut rng, "toy rf sub-encoder");

    // Predictor shape: Linear-LN-ReLU x3 then Linear.
    let pred_specs = vec![
        LayerSpec::Linear { out_features: 8 },
        LayerSpec::LayerNorm,
        LayerSpec::Relu,
        LayerSpec::Linear { out_features: 8 },
        LayerSpec::LayerNorm,
        LayerSpec::Relu,
        LayerSpec::Linear { out_features: 8 },
        LayerSpec::LayerNorm,
        LayerSpec::Relu,
        LayerSpec::Linear { out_features: 6 },
    ];
    gradcheck_stack_input(&pred_specs, &[5], &mut rng, "toy predictor");
}

fn gradcheck_stack_input(
    specs: &[LayerSpec],
    input_shape: &[usize],
    rng: &mut ChaCha8Rng,
    label: &str,
) {
    let mut full_shape = vec![2usize];
    full_shape.extend_from_slice(input_shape);
    let x0 = rand_array(rng, &full_shape, -1.0, 1.0);
    let stack = Stack::build(label, specs, input_shape, &mut rfpose_neural::layers::init_rng(42))
        .unwrap();
    let mut out_shape = vec![2usize];
    out_shape.extend_from_slice(stack.output_shape());
    let proj = rand_array(rng, &out_shape, -1.0, 1.0);

    let eval = |x: &ArrayD<f64>| -> f64 {
        let mut stack = stack.clone();
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(x.clone(), true);
        let (y, _) = stack.forward(&mut g, xv, Mode::Train).unwrap();
        let p = g.constant(proj.clone());
        let m = g.mul(y, p).unwrap();
        let loss = g.sum_all(m);
        g.scalar_value(loss).unwrap()
    };
    let numeric = finite_diff_grad(eval, &x0, FD_STEP);

    let mut stack = stack.clone();
    let mut g = Graph::<f64>::new();
    let xv = g.leaf(x0.clone(), true);
    let (y, bindings) = stack.forward(&mut g, xv, Mode::Train).unwrap();
    let p = g.constant(proj.clone());
    let m = g.mul(y, p).unwrap();
    let loss = g.sum_all(m);
    g.backward(loss).unwrap();
    let err = max_rel_error(g.grad(xv).unwrap(), &numeric);
    assert!(err < FD_TOL, "{label}: input gradient relative error {err}");
    assert!(!bindings.is_empty());
}
