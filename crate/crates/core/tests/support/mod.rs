//! Finite-difference gradient checking shared by the integration suites.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snrd::distill::distill_loss;
use snrd::tensor::{Graph, NormMode, Tensor, Var};
use snrd::unet::{ArchConfig, Mode, Model, ParamKind};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Norm floor of the relative-error denominator. A conv bias feeding
/// train-mode batchnorm has a mathematically zero gradient, and its
/// finite-difference estimate is pure rounding noise of order
/// `eps·|loss|/STEP`, so tensors with gradient norm below the floor are
/// held to an absolute error of `TOLERANCE·ZERO_FLOOR`.
pub const ZERO_FLOOR: f64 = 1e-3;

#[derive(Debug, Default, Clone)]
pub struct CheckReport {
    pub worst: f64,
    pub worst_at: String,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a leaky-ReLU kink.
    pub kinks: usize,
}

impl CheckReport {
    fn absorb(&mut self, label: &str, analytic: &[f64], numeric: &[f64]) {
        let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = norm(analytic).max(norm(numeric));
        let err = diff / scale.max(ZERO_FLOOR);
        if err > self.worst || self.worst_at.is_empty() {
            self.worst = err;
            self.worst_at = label.to_string();
        }
    }

    fn merge(&mut self, other: CheckReport) {
        if other.worst > self.worst || self.worst_at.is_empty() {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
        self.checked += other.checked;
        self.kinks += other.kinks;
    }

    pub fn passed(&self) -> bool {
        self.worst <= TOLERANCE && self.checked > 0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

type Builder = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn evaluate(build: &Builder, inputs: &[Tensor<f64>]) -> (f64, Vec<bool>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let loss = build(&mut g, &vars);
    (g.value(loss)[0], g.activation_pattern())
}

/// Compares the tape gradient of `build` with central differences for
/// every element of every input.
fn check_fn(label: &str, build: &Builder, inputs: Vec<Tensor<f64>>) -> CheckReport {
    let inputs: Vec<Tensor<f64>> = inputs.into_iter().map(|t| t.with_grad()).collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let base_pattern = g.activation_pattern();
    let mut report = CheckReport::default();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        let mut a_kept = Vec::new();
        let mut numeric = Vec::new();
        for j in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= STEP;
            let (lp, pp) = evaluate(build, &plus);
            let (lm, pm) = evaluate(build, &minus);
            if pp != base_pattern || pm != base_pattern {
                report.kinks += 1;
                continue;
            }
            a_kept.push(analytic[j]);
            numeric.push((lp - lm) / (2.0 * STEP));
        }
        report.checked += numeric.len();
        report.absorb(&format!("{label}/input{k}"), &a_kept, &numeric);
    }
    report
}

/// Every differentiable operator, each wrapped in a half-L2 loss against
/// a random target.
pub fn check_ops(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::default();
    let (b, c, t) = (2, 3, 8);

    let target = random(&mut rng, &[b, 4, t]);
    let tv = target.data().to_vec();
    report.merge(check_fn(
        "conv1d",
        &move |g, v| {
            let y = g.conv1d(v[0], v[1], v[2]).unwrap();
            let target = g.constant(vec![b, 4, t], tv.clone()).unwrap();
            g.l2_half(y, target).unwrap()
        },
        vec![random(&mut rng, &[b, c, t]), random(&mut rng, &[4, c, 5]), random(&mut rng, &[4])],
    ));

    type Unary = fn(&mut Graph<f64>, Var) -> Var;
    let unary: [(&str, Unary); 5] = [
        ("leaky_relu", |g, x| g.leaky_relu(x, 0.1)),
        ("tanh", |g, x| g.tanh(x)),
        ("decimate2", |g, x| g.decimate2(x).unwrap()),
        ("upsample_linear2", |g, x| g.upsample_linear2(x).unwrap()),
        ("scale", |g, x| g.scale(x, -1.7)),
    ];
    for (name, op) in unary {
        let x = random(&mut rng, &[b, c, t]);
        let probe = {
            let mut g = Graph::new();
            let xv = g.constant(x.dims().to_vec(), x.data().to_vec()).unwrap();
            let y = op(&mut g, xv);
            g.dims(y).to_vec()
        };
        let target = random(&mut rng, &probe);
        let tv = target.data().to_vec();
        report.merge(check_fn(
            name,
            &move |g, v| {
                let y = op(g, v[0]);
                let target = g.constant(probe.clone(), tv.clone()).unwrap();
                g.l2_half(y, target).unwrap()
            },
            vec![x],
        ));
    }

    let target = random(&mut rng, &[b, c, t]);
    let tv = target.data().to_vec();
    report.merge(check_fn(
        "batchnorm1d/train",
        &move |g, v| {
            let (y, _) = g.batchnorm1d(v[0], v[1], v[2], NormMode::Train { eps: 1e-5 }).unwrap();
            let target = g.constant(vec![b, c, t], tv.clone()).unwrap();
            g.l2_half(y, target).unwrap()
        },
        vec![random(&mut rng, &[b, c, t]), random(&mut rng, &[c]), random(&mut rng, &[c])],
    ));
    let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
    let tv = random(&mut rng, &[b, c, t]).data().to_vec();
    report.merge(check_fn(
        "batchnorm1d/infer",
        &move |g, v| {
            let mode = NormMode::Infer {
                mean: &mean,
                var: &var,
                eps: 1e-5,
            };
            let (y, _) = g.batchnorm1d(v[0], v[1], v[2], mode).unwrap();
            let target = g.constant(vec![b, c, t], tv.clone()).unwrap();
            g.l2_half(y, target).unwrap()
        },
        vec![random(&mut rng, &[b, c, t]), random(&mut rng, &[c]), random(&mut rng, &[c])],
    ));

    let tv = random(&mut rng, &[b, c + 2, t]).data().to_vec();
    report.merge(check_fn(
        "concat_channels",
        &move |g, v| {
            let y = g.concat_channels(v[0], v[1]).unwrap();
            let target = g.constant(vec![b, c + 2, t], tv.clone()).unwrap();
            g.l2_half(y, target).unwrap()
        },
        vec![random(&mut rng, &[b, c, t]), random(&mut rng, &[b, 2, t])],
    ));

    let tv = random(&mut rng, &[b, c, t]).data().to_vec();
    report.merge(check_fn(
        "add",
        &move |g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            let target = g.constant(vec![b, c, t], tv.clone()).unwrap();
            g.l2_half(y, target).unwrap()
        },
        vec![random(&mut rng, &[b, c, t]), random(&mut rng, &[b, c, t])],
    ));

    report.merge(check_fn(
        "l2_half",
        &|g, v| g.l2_half(v[0], v[1]).unwrap(),
        vec![random(&mut rng, &[b, c, t]), random(&mut rng, &[b, c, t])],
    ));

    let teacher = random(&mut rng, &[b, 1, t]).data().to_vec();
    let clean = random(&mut rng, &[b, 1, t]).data().to_vec();
    let alpha = rng.random_range(0.05..0.95);
    report.merge(check_fn(
        "distill_loss",
        &move |g, v| {
            let tv = g.constant(vec![b, 1, t], teacher.clone()).unwrap();
            let yv = g.constant(vec![b, 1, t], clean.clone()).unwrap();
            distill_loss(g, v[0], Some(tv), yv, alpha).unwrap()
        },
        vec![random(&mut rng, &[b, 1, t])],
    ));
    report
}

/// Two encoder blocks, two resampling stages, four base channels.
pub fn gradcheck_arch() -> ArchConfig {
    ArchConfig {
        encoder_blocks: 2,
        resampling_stages: 2,
        base_channels: 4,
        channel_step: 4,
        kernel_down: 5,
        kernel_up: 3,
        bottleneck_blocks: 1,
        leaky_slope: 0.1,
    }
}

fn unet_loss(model: &Model<f64>, x: &Tensor<f64>, target: &Tensor<f64>, mode: Mode) -> (Graph<f64>, Var, Vec<Option<Var>>) {
    let mut g = Graph::new();
    let xv = g.constant(x.dims().to_vec(), x.data().to_vec()).unwrap();
    let fwd = model.forward(&mut g, xv, mode).unwrap();
    let tv = g.constant(target.dims().to_vec(), target.data().to_vec()).unwrap();
    let loss = g.l2_half(fwd.output, tv).unwrap();
    (g, loss, fwd.param_vars)
}

/// Every trainable parameter of the toy U-Net, in train and infer mode.
pub fn check_unet(seed: u64) -> CheckReport {
    let arch = gradcheck_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = Model::<f64>::build(&arch, seed).unwrap();
    // non-trivial running statistics and affine parameters
    for p in model.params_mut() {
        let name = p.name.clone();
        for v in p.tensor.data_mut() {
            if name.ends_with("running_var") || name.ends_with("gamma") {
                *v = rng.random_range(0.5..1.5);
            } else if !name.ends_with("weight") {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let x = random(&mut rng, &[2, 1, 16]);
    let target = random(&mut rng, &[2, 1, 16]);
    let mut report = CheckReport::default();
    for mode in [Mode::Train, Mode::Infer] {
        let (mut g, loss, vars) = unet_loss(&model, &x, &target, mode);
        g.backward(loss).unwrap();
        let base_pattern = g.activation_pattern();
        for (i, v) in vars.iter().enumerate() {
            if model.params()[i].kind != ParamKind::Trainable {
                continue;
            }
            let analytic = g.grad(v.unwrap()).unwrap().to_vec();
            let (mut a_kept, mut numeric) = (Vec::new(), Vec::new());
            for j in 0..analytic.len() {
                let orig = model.params()[i].tensor.data()[j];
                let mut eval = |delta: f64| {
                    model.params_mut()[i].tensor.data_mut()[j] = orig + delta;
                    let (g, loss, _) = unet_loss(&model, &x, &target, mode);
                    (g.value(loss)[0], g.activation_pattern())
                };
                let (lp, pp) = eval(STEP);
                let (lm, pm) = eval(-STEP);
                model.params_mut()[i].tensor.data_mut()[j] = orig;
                if pp != base_pattern || pm != base_pattern {
                    report.kinks += 1;
                    continue;
                }
                a_kept.push(analytic[j]);
                numeric.push((lp - lm) / (2.0 * STEP));
            }
            report.checked += numeric.len();
            let label = format!("unet/{mode:?}/{}", model.params()[i].name);
            report.absorb(&label, &a_kept, &numeric);
        }
    }
    report
}
