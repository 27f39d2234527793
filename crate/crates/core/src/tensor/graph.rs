use super::ops::{self, ConvShape};
use super::{shape_err, Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch normalization statistics source.
pub enum NormMode<'a, F> {
    /// Normalize with statistics of the current batch.
    Train { eps: F },
    /// Normalize with frozen running statistics.
    Infer { mean: &'a [F], var: &'a [F], eps: F },
}

/// Per-channel moments observed by a train-mode batchnorm, for the
/// caller to fold into its running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

enum Op<F> {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var, shape: ConvShape },
    LeakyRelu { x: Var, slope: F },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F>, batch_stats: bool },
    Decimate2 { x: Var },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Tanh { x: Var },
    L2Half { a: Var, b: Var },
    Scale { x: Var, factor: F },
    Add { a: Var, b: Var },
}

struct Node<F> {
    dims: Vec<usize>,
    data: Vec<F>,
    tracked: bool,
    op: Op<F>,
}

/// Tape of executed operations.
///
/// Nodes are appended in execution order, so the tape is topologically
/// sorted by construction; [`Graph::backward`] walks it once in reverse.
/// A node is tracked when any of its inputs is, and only tracked nodes
/// receive gradients.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Option<Vec<Option<Vec<F>>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rank3(op: &'static str, dims: &[usize]) -> Result<(usize, usize, usize), TensorError> {
    match *dims {
        [b, c, t] => Ok((b, c, t)),
        _ => Err(shape_err(op, format!("expected [B, C, T], got {dims:?}"))),
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, dims: Vec<usize>, data: Vec<F>, tracked: bool, op: Op<F>) -> Var {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.nodes.push(Node { dims, data, tracked, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    /// Records a copy of `t`; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.dims().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Records an untracked value.
    pub fn constant(&mut self, dims: Vec<usize>, data: Vec<F>) -> Result<Var, TensorError> {
        let t = Tensor::from_vec(dims, data)?;
        let (dims, data) = (t.dims().to_vec(), t.into_data());
        Ok(self.push(dims, data, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).data
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.node(v).dims
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.node(v).tracked
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor::from_vec(n.dims.clone(), n.data.clone()).expect("graph nodes are well formed")
    }

    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (batch, cin, time) = rank3("conv1d", self.dims(input))?;
        let (cout, wcin, kernel) = match *self.dims(weight) {
            [o, i, k] => (o, i, k),
            ref d => return Err(shape_err("conv1d", format!("weight must be [Cout, Cin, K], got {d:?}"))),
        };
        if wcin != cin {
            return Err(shape_err("conv1d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        if kernel % 2 == 0 {
            return Err(shape_err("conv1d", format!("kernel size {kernel} is not odd")));
        }
        if self.dims(bias) != [cout] {
            return Err(shape_err("conv1d", format!("bias must be [{cout}], got {:?}", self.dims(bias))));
        }
        let shape = ConvShape {
            batch,
            cin,
            cout,
            time,
            kernel,
        };
        let out = ops::conv1d_forward(shape, self.value(input), self.value(weight), self.value(bias));
        let tracked = self.is_tracked(input) || self.is_tracked(weight) || self.is_tracked(bias);
        Ok(self.push(
            vec![batch, cout, time],
            out,
            tracked,
            Op::Conv1d {
                input,
                weight,
                bias,
                shape,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        let out = ops::leaky_relu(self.value(x), slope);
        let (dims, tracked) = (self.dims(x).to_vec(), self.is_tracked(x));
        self.push(dims, out, tracked, Op::LeakyRelu { x, slope })
    }

    /// Batch normalization over the batch and time axes of `[B, C, T]`.
    ///
    /// Train mode returns the batch moments alongside the output; running
    /// statistics belong to the caller.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, F>,
    ) -> Result<(Var, Option<BatchStats<F>>), TensorError> {
        let (batch, channels, time) = rank3("batchnorm1d", self.dims(x))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.dims(v) != [channels] {
                return Err(shape_err(
                    "batchnorm1d",
                    format!("{name} must be [{channels}], got {:?}", self.dims(v)),
                ));
            }
        }
        let dims = (batch, channels, time);
        let (fwd, stats) = match mode {
            NormMode::Train { eps } => {
                if batch * time < 2 {
                    return Err(TensorError::DegenerateBatch(batch * time));
                }
                let (mean, var) = ops::channel_moments(self.value(x), batch, channels, time);
                let fwd = ops::normalize(self.value(x), dims, &mean, &var, self.value(gamma), self.value(beta), eps);
                (fwd, Some(BatchStats { mean, var }))
            }
            NormMode::Infer { mean, var, eps } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(shape_err("batchnorm1d", "running statistics do not match channel count"));
                }
                let fwd = ops::normalize(self.value(x), dims, mean, var, self.value(gamma), self.value(beta), eps);
                (fwd, None)
            }
        };
        let tracked = self.is_tracked(x) || self.is_tracked(gamma) || self.is_tracked(beta);
        let batch_stats = stats.is_some();
        let v = self.push(
            vec![batch, channels, time],
            fwd.out,
            tracked,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                batch_stats,
            },
        );
        Ok((v, stats))
    }

    /// Keeps even time indices.
    pub fn decimate2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (b, c, t) = rank3("decimate2", self.dims(x))?;
        if t % 2 != 0 {
            return Err(shape_err("decimate2", format!("time extent {t} is odd")));
        }
        let out = ops::decimate2(self.value(x), b * c, t);
        let tracked = self.is_tracked(x);
        Ok(self.push(vec![b, c, t / 2], out, tracked, Op::Decimate2 { x }))
    }

    /// Doubles the time extent by midpoint interpolation; the final output
    /// sample repeats the final input sample.
    pub fn upsample_linear2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (b, c, t) = rank3("upsample_linear2", self.dims(x))?;
        if t == 0 {
            return Err(shape_err("upsample_linear2", "empty time axis"));
        }
        let out = ops::upsample2(self.value(x), b * c, t);
        let tracked = self.is_tracked(x);
        Ok(self.push(vec![b, c, 2 * t], out, tracked, Op::Upsample2 { x }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ba, ca, ta) = rank3("concat_channels", self.dims(a))?;
        let (bb, cb, tb) = rank3("concat_channels", self.dims(b))?;
        if ba != bb || ta != tb {
            return Err(shape_err(
                "concat_channels",
                format!("operands disagree on batch/time: [{ba}, _, {ta}] vs [{bb}, _, {tb}]"),
            ));
        }
        let out = ops::concat_channels(self.value(a), self.value(b), ba, ca, cb, ta);
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(vec![ba, ca + cb, ta], out, tracked, Op::Concat { a, b }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let (dims, tracked) = (self.dims(x).to_vec(), self.is_tracked(x));
        self.push(dims, out, tracked, Op::Tanh { x })
    }

    /// `½·Σ(a−b)²` as a scalar.
    pub fn l2_half(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(
                "l2_half",
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        let v = ops::l2_half(self.value(a), self.value(b));
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(vec![], vec![v], tracked, Op::L2Half { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let (dims, tracked) = (self.dims(x).to_vec(), self.is_tracked(x));
        self.push(dims, out, tracked, Op::Scale { x, factor })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        let dims = self.dims(a).to_vec();
        Ok(self.push(dims, out, tracked, Op::Add { a, b }))
    }

    /// Sign pattern (`x >= 0`) of every leaky-ReLU input on the tape.
    /// Two evaluations with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                pattern.extend(self.value(x).iter().map(|&v| v >= F::zero()));
            }
        }
        pattern
    }

    /// Propagates `d loss / d node` to every tracked node.
    ///
    /// Fails if `loss` is not a scalar or depends on no tracked leaf, and
    /// if gradients from an earlier call have not been cleared with
    /// [`Graph::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        let root = self.node(loss);
        if root.data.len() != 1 || !root.dims.is_empty() {
            return Err(TensorError::NonScalarLoss(root.dims.clone()));
        }
        if !root.tracked {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, delta: Vec<F>| {
                if !self.nodes[v.0].tracked {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    shape,
                } => {
                    if self.nodes[input.0].tracked {
                        send(*input, ops::conv1d_backward_input(*shape, &g, &self.nodes[weight.0].data));
                    }
                    if self.nodes[weight.0].tracked || self.nodes[bias.0].tracked {
                        let (gw, gb) = ops::conv1d_backward_params(*shape, &g, &self.nodes[input.0].data);
                        send(*weight, gw);
                        send(*bias, gb);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    send(*x, ops::leaky_relu_backward(&self.nodes[x.0].data, &g, *slope));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (b, c, t) = (node.dims[0], node.dims[1], node.dims[2]);
                    let (gx, gg, gb) =
                        ops::normalize_backward(&g, xhat, inv_std, &self.nodes[gamma.0].data, (b, c, t), *batch_stats);
                    send(*x, gx);
                    send(*gamma, gg);
                    send(*beta, gb);
                }
                Op::Decimate2 { x } => {
                    let d = &self.nodes[x.0].dims;
                    send(*x, ops::decimate2_backward(&g, d[0] * d[1], d[2]));
                }
                Op::Upsample2 { x } => {
                    let d = &self.nodes[x.0].dims;
                    send(*x, ops::upsample2_backward(&g, d[0] * d[1], d[2]));
                }
                Op::Concat { a, b } => {
                    let (da, db) = (&self.nodes[a.0].dims, &self.nodes[b.0].dims);
                    let (ga, gb) = ops::split_channels(&g, da[0], da[1], db[1], da[2]);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Tanh { x } => {
                    let d = node.data.iter().zip(&g).map(|(&y, &gv)| gv * (F::one() - y * y)).collect();
                    send(*x, d);
                }
                Op::L2Half { a, b } => {
                    let (va, vb) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                    let s = g[0];
                    if self.nodes[a.0].tracked {
                        send(*a, va.iter().zip(vb).map(|(&x, &y)| s * (x - y)).collect());
                    }
                    if self.nodes[b.0].tracked {
                        send(*b, va.iter().zip(vb).map(|(&x, &y)| s * (y - x)).collect());
                    }
                }
                Op::Scale { x, factor } => {
                    send(*x, g.iter().map(|&v| v * *factor).collect());
                }
                Op::Add { a, b } => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
            }
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`; `None` for untracked
    /// nodes or before [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Clears gradients so backward may run again.
    pub fn reset(&mut self) {
        self.grads = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn l2_half_gradient_is_difference() {
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![1], vec![2.0]).with_grad());
        let zero = g.constant(vec![1], vec![0.0]).unwrap();
        let loss = g.l2_half(x, zero).unwrap();
        assert_eq!(g.value(loss), &[2.0]);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
        assert!(g.grad(zero).is_none());
    }

    #[test]
    fn backward_twice_requires_reset() {
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![2], vec![1.0, -1.0]).with_grad());
        let zero = g.constant(vec![2], vec![0.0; 2]).unwrap();
        let loss = g.l2_half(x, zero).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.backward(loss), Err(TensorError::BackwardTwice));
        g.reset();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, -1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![2], vec![1.0, 2.0]).with_grad());
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
        let c = g.constant(vec![1], vec![1.0]).unwrap();
        let d = g.constant(vec![1], vec![3.0]).unwrap();
        let loss = g.l2_half(c, d).unwrap();
        assert_eq!(g.backward(loss), Err(TensorError::DetachedLoss));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 4], vec![0.0; 8]).unwrap();
        let w = g.constant(vec![1, 3, 3], vec![0.0; 9]).unwrap();
        let b = g.constant(vec![1], vec![0.0]).unwrap();
        assert!(matches!(g.conv1d(x, w, b), Err(TensorError::Shape { op: "conv1d", .. })));
    }

    #[test]
    fn concat_channel_layout_and_errors() {
        let mut g = Graph::new();
        let a = g.constant(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.constant(vec![1, 3, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.dims(c), &[1, 5, 2]);
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);

        let empty = g.constant(vec![1, 0, 2], vec![]).unwrap();
        let same = g.concat_channels(a, empty).unwrap();
        assert_eq!(g.value(same), g.value(a));

        let x8 = g.constant(vec![1, 1, 8], vec![0.0; 8]).unwrap();
        let x16 = g.constant(vec![1, 1, 16], vec![0.0; 16]).unwrap();
        assert!(g.concat_channels(x8, x16).is_err());
    }

    #[test]
    fn batchnorm_train_two_values() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let gamma = g.constant(vec![1], vec![1.0]).unwrap();
        let beta = g.constant(vec![1], vec![0.0]).unwrap();
        let (y, stats) = g.batchnorm1d(x, gamma, beta, NormMode::Train { eps: 1e-5 }).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((g.value(y)[0] + expect).abs() < 1e-15);
        assert!((g.value(y)[1] - expect).abs() < 1e-15);
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);

        let gamma2 = g.constant(vec![1], vec![2.0]).unwrap();
        let beta1 = g.constant(vec![1], vec![1.0]).unwrap();
        let (y2, _) = g.batchnorm1d(x, gamma2, beta1, NormMode::Train { eps: 1e-5 }).unwrap();
        assert!((g.value(y2)[0] - (1.0 - 2.0 * expect)).abs() < 1e-15);
        assert!((g.value(y2)[1] - (1.0 + 2.0 * expect)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_infer_identity_and_degenerate_batch() {
        let mut g = Graph::new();
        let data = vec![0.3, -1.2, 4.0];
        let x = g.constant(vec![1, 1, 3], data.clone()).unwrap();
        let gamma = g.constant(vec![1], vec![1.0]).unwrap();
        let beta = g.constant(vec![1], vec![0.0]).unwrap();
        let (y, stats) = g
            .batchnorm1d(
                x,
                gamma,
                beta,
                NormMode::Infer {
                    mean: &[0.0],
                    var: &[1.0],
                    eps: 0.0,
                },
            )
            .unwrap();
        assert!(stats.is_none());
        assert_eq!(g.value(y), &data[..]);

        let single = g.constant(vec![1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(
            g.batchnorm1d(single, gamma, beta, NormMode::Train { eps: 1e-5 }).unwrap_err(),
            TensorError::DegenerateBatch(1)
        );
    }

    #[test]
    fn decimate_rejects_odd_length() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![1, 1, 5], vec![0.0; 5]).unwrap();
        assert!(g.decimate2(x).is_err());
        let y = g.constant(vec![1, 1, 16384], vec![0.0; 16384]).unwrap();
        let d = g.decimate2(y).unwrap();
        assert_eq!(g.dims(d), &[1, 1, 8192]);
    }

    #[test]
    fn decimate_adjoint_scatters_to_even_positions() {
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).with_grad());
        let d = g.decimate2(x).unwrap();
        // ½‖d − (d − [a, b])‖² has gradient [a, b] w.r.t. d
        let target = g.constant(vec![1, 1, 2], vec![1.0 - 0.5, 3.0 - 0.25]).unwrap();
        let loss = g.l2_half(d, target).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.5, 0.0, 0.25, 0.0]);
    }
}
