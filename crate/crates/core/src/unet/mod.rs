//! Time-domain 1-D convolutional U-Net shared by teachers and the student.
//!
//! Topology for an [`ArchConfig`] with `E` encoder blocks and `R`
//! resampling stages:
//!
//! * encoder block `i` (1-based): conv(`kernel_down`) → batchnorm → leaky
//!   ReLU with `base_channels + channel_step·(i−1)` output channels; its
//!   activation is kept as the skip for the mirrored decoder block and,
//!   for `i ≤ R`, is then decimated by two;
//! * bottleneck: `bottleneck_blocks` blocks of the same structure without
//!   resampling, block `k` widening to `C_E + channel_step·k` channels;
//! * decoder block `j` mirrors encoder block `m = E + 1 − j`; the last `R`
//!   decoder blocks first upsample by two, then every decoder block
//!   concatenates `[current, skip_m]` and runs conv(`kernel_up`) →
//!   batchnorm → leaky ReLU down to `C_m` channels;
//! * head: kernel-1 conv to one channel followed by `tanh`.
//!
//! Inputs must have a time extent divisible by `2^R`.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{BatchStats, Graph, NormMode, Real, Tensor, TensorError, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

/// Batchnorm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the old value in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("input time extent {time} is not divisible by {divisor} (2^resampling_stages)")]
    Indivisible { time: usize, divisor: usize },
    #[error("input must be [B, 1, T], got {0:?}")]
    InputShape(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Declarative U-Net topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub encoder_blocks: usize,
    pub resampling_stages: usize,
    pub base_channels: usize,
    pub channel_step: usize,
    pub kernel_down: usize,
    pub kernel_up: usize,
    pub bottleneck_blocks: usize,
    pub leaky_slope: f64,
}

impl ArchConfig {
    /// Full-size network: 12 encoder/decoder blocks, 7 resampling stages,
    /// 48 channels growing by 24.
    pub fn paper() -> Self {
        Self {
            encoder_blocks: 12,
            resampling_stages: 7,
            base_channels: 48,
            channel_step: 24,
            kernel_down: 15,
            kernel_up: 5,
            bottleneck_blocks: 1,
            leaky_slope: 0.1,
        }
    }

    /// Depth-2 network for CPU-scale experiments and CI.
    pub fn toy() -> Self {
        Self {
            encoder_blocks: 2,
            resampling_stages: 2,
            base_channels: 8,
            channel_step: 8,
            kernel_down: 15,
            kernel_up: 5,
            bottleneck_blocks: 1,
            leaky_slope: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), UnetError> {
        let bad = |m: String| Err(UnetError::InvalidArch(m));
        if self.encoder_blocks == 0 {
            return bad("encoder_blocks must be at least 1".into());
        }
        if self.resampling_stages > self.encoder_blocks {
            return bad(format!(
                "resampling_stages ({}) exceeds encoder_blocks ({})",
                self.resampling_stages, self.encoder_blocks
            ));
        }
        if self.resampling_stages >= usize::BITS as usize {
            return bad("resampling_stages too large".into());
        }
        for (name, k) in [("kernel_down", self.kernel_down), ("kernel_up", self.kernel_up)] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        Ok(())
    }

    /// Output channels of encoder block `i` (1-based).
    pub fn encoder_channels(&self, i: usize) -> usize {
        self.base_channels + self.channel_step * (i - 1)
    }

    /// Output channels of bottleneck block `k` (1-based).
    pub fn bottleneck_channels(&self, k: usize) -> usize {
        self.encoder_channels(self.encoder_blocks) + self.channel_step * k
    }

    /// Output channels of decoder block `j` (1-based).
    pub fn decoder_channels(&self, j: usize) -> usize {
        self.encoder_channels(self.encoder_blocks + 1 - j)
    }

    /// Required divisor of the input length.
    pub fn time_divisor(&self) -> usize {
        1 << self.resampling_stages
    }

    /// `(in_channels, out_channels, kernel)` of every conv block in
    /// forward order: encoder, bottleneck, decoder.
    pub fn conv_blocks(&self) -> Vec<(usize, usize, usize)> {
        let e = self.encoder_blocks;
        let mut blocks = Vec::new();
        let mut prev = 1;
        for i in 1..=e {
            blocks.push((prev, self.encoder_channels(i), self.kernel_down));
            prev = self.encoder_channels(i);
        }
        for k in 1..=self.bottleneck_blocks {
            blocks.push((prev, self.bottleneck_channels(k), self.kernel_down));
            prev = self.bottleneck_channels(k);
        }
        for j in 1..=e {
            let skip = self.encoder_channels(e + 1 - j);
            blocks.push((prev + skip, self.decoder_channels(j), self.kernel_up));
            prev = self.decoder_channels(j);
        }
        blocks
    }

    /// Closed-form count of trainable values (conv weights and biases,
    /// batchnorm scale and shift, head). Running statistics excluded.
    pub fn trainable_parameter_count(&self) -> usize {
        let e = self.encoder_blocks;
        let c = |i: usize| self.encoder_channels(i);
        let block = |cin: usize, cout: usize, k: usize| cout * cin * k + cout + 2 * cout;
        let encoder: usize = (1..=e).map(|i| block(if i == 1 { 1 } else { c(i - 1) }, c(i), self.kernel_down)).sum();
        let bottleneck: usize = (1..=self.bottleneck_blocks)
            .map(|k| {
                let cin = if k == 1 { c(e) } else { self.bottleneck_channels(k - 1) };
                block(cin, self.bottleneck_channels(k), self.kernel_down)
            })
            .sum();
        let first_decoder_in = if self.bottleneck_blocks == 0 {
            c(e)
        } else {
            self.bottleneck_channels(self.bottleneck_blocks)
        };
        let decoder: usize = (1..=e)
            .map(|j| {
                let m = e + 1 - j;
                let cin = if j == 1 { first_decoder_in } else { c(m + 1) };
                block(cin + c(m), c(m), self.kernel_up)
            })
            .sum();
        let head = c(1) + 1;
        encoder + bottleneck + decoder + head
    }
}

/// Train mode normalizes with batch statistics and reports them; infer
/// mode uses frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    RunningStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<F>,
}

/// Indices into [`Model::params`] for one conv block.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockIdx {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

/// Instantiated U-Net.
///
/// Parameters are stored in a fixed order: for each block (`enc1..encE`,
/// `bott1..`, `dec1..decE`) `conv.weight`, `conv.bias`, `bn.gamma`,
/// `bn.beta`, `bn.running_mean`, `bn.running_var`; then `head.weight`,
/// `head.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    arch: ArchConfig,
    params: Vec<Parameter<F>>,
    encoder: Vec<BlockIdx>,
    bottleneck: Vec<BlockIdx>,
    decoder: Vec<BlockIdx>,
    head_weight: usize,
    head_bias: usize,
}

/// Tape handles for one forward pass.
pub struct Forward<F> {
    pub output: Var,
    /// Graph leaf per parameter (`None` for running statistics).
    pub param_vars: Vec<Option<Var>>,
    /// `(block parameter index of running_mean, stats)` per batchnorm in
    /// train mode.
    batch_stats: Vec<(usize, BatchStats<F>)>,
}

impl<F: Real> Model<F> {
    /// Parameter layout with zero values.
    fn skeleton(arch: &ArchConfig) -> Result<Self, UnetError> {
        arch.validate()?;
        let mut params = Vec::new();
        let mut add = |name: String, kind, dims: Vec<usize>| {
            params.push(Parameter {
                name,
                kind,
                tensor: Tensor::zeros(dims),
            });
            params.len() - 1
        };
        let mut block = |prefix: String, cin: usize, cout: usize, k: usize| BlockIdx {
            weight: add(format!("{prefix}.conv.weight"), ParamKind::Trainable, vec![cout, cin, k]),
            bias: add(format!("{prefix}.conv.bias"), ParamKind::Trainable, vec![cout]),
            gamma: add(format!("{prefix}.bn.gamma"), ParamKind::Trainable, vec![cout]),
            beta: add(format!("{prefix}.bn.beta"), ParamKind::Trainable, vec![cout]),
            running_mean: add(format!("{prefix}.bn.running_mean"), ParamKind::RunningStat, vec![cout]),
            running_var: add(format!("{prefix}.bn.running_var"), ParamKind::RunningStat, vec![cout]),
        };
        let specs = arch.conv_blocks();
        let (e, nb) = (arch.encoder_blocks, arch.bottleneck_blocks);
        let mut encoder = Vec::new();
        let mut bottleneck = Vec::new();
        let mut decoder = Vec::new();
        for (n, &(cin, cout, k)) in specs.iter().enumerate() {
            if n < e {
                encoder.push(block(format!("enc{}", n + 1), cin, cout, k));
            } else if n < e + nb {
                bottleneck.push(block(format!("bott{}", n - e + 1), cin, cout, k));
            } else {
                decoder.push(block(format!("dec{}", n - e - nb + 1), cin, cout, k));
            }
        }
        let c1 = arch.encoder_channels(1);
        let head_weight = add("head.weight".into(), ParamKind::Trainable, vec![1, c1, 1]);
        let head_bias = add("head.bias".into(), ParamKind::Trainable, vec![1]);
        Ok(Self {
            arch: arch.clone(),
            params,
            encoder,
            bottleneck,
            decoder,
            head_weight,
            head_bias,
        })
    }

    /// Deterministic initialization: conv weights uniform in
    /// `±sqrt(1/(Cin·K))`, zero biases, `γ = 1`, `β = 0`, running mean 0
    /// and variance 1. Weights are drawn in parameter order from a ChaCha8
    /// stream seeded with `seed`, in double precision.
    pub fn build(arch: &ArchConfig, seed: u64) -> Result<Self, UnetError> {
        let mut model = Self::skeleton(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            let dims = p.tensor.dims().to_vec();
            let leaf = p.name.rsplit('.').next().unwrap_or_default();
            match leaf {
                "weight" => {
                    let bound = (1.0 / (dims[1] * dims[2]) as f64).sqrt();
                    for w in p.tensor.data_mut() {
                        *w = F::of(rng.random_range(-bound..bound));
                    }
                }
                "gamma" | "running_var" => p.tensor.data_mut().fill(F::one()),
                _ => {}
            }
            if p.kind == ParamKind::Trainable {
                p.tensor.set_requires_grad(true);
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Number of trainable scalar values in the instantiated model.
    pub fn trainable_len(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Stops gradient tracking on every parameter.
    pub fn freeze(&mut self) {
        for p in &mut self.params {
            p.tensor.set_requires_grad(false);
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| !p.tensor.requires_grad())
    }

    /// Converts precision, keeping layout and gradient flags.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
        }
    }

    fn conv_block(
        &self,
        g: &mut Graph<F>,
        vars: &[Option<Var>],
        x: Var,
        b: BlockIdx,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats<F>)>,
    ) -> Result<Var, UnetError> {
        let v = |i: usize| vars[i].expect("trainable parameter has a leaf");
        let h = g.conv1d(x, v(b.weight), v(b.bias))?;
        let eps = F::of(BN_EPS);
        let norm = match mode {
            Mode::Train => NormMode::Train { eps },
            Mode::Infer => NormMode::Infer {
                mean: self.params[b.running_mean].tensor.data(),
                var: self.params[b.running_var].tensor.data(),
                eps,
            },
        };
        let (h, batch) = g.batchnorm1d(h, v(b.gamma), v(b.beta), norm)?;
        if let Some(s) = batch {
            stats.push((b.running_mean, s));
        }
        Ok(g.leaky_relu(h, F::of(self.arch.leaky_slope)))
    }

    /// Records the network on `g` for an input node of shape `[B, 1, T]`.
    pub fn forward(&self, g: &mut Graph<F>, x: Var, mode: Mode) -> Result<Forward<F>, UnetError> {
        self.forward_impl(g, x, mode, true)
    }

    fn forward_impl(&self, g: &mut Graph<F>, x: Var, mode: Mode, track: bool) -> Result<Forward<F>, UnetError> {
        let dims = g.dims(x).to_vec();
        let time = match dims[..] {
            [_, 1, t] => t,
            _ => return Err(UnetError::InputShape(dims)),
        };
        let divisor = self.arch.time_divisor();
        if time % divisor != 0 || time == 0 {
            return Err(UnetError::Indivisible { time, divisor });
        }
        let vars: Vec<Option<Var>> = self
            .params
            .iter()
            .map(|p| {
                (p.kind == ParamKind::Trainable).then(|| {
                    if track {
                        g.leaf(&p.tensor)
                    } else {
                        g.constant(p.tensor.dims().to_vec(), p.tensor.data().to_vec())
                            .expect("parameter tensors are well formed")
                    }
                })
            })
            .collect();
        let mut stats = Vec::new();
        let r = self.arch.resampling_stages;
        let e = self.arch.encoder_blocks;

        let mut h = x;
        let mut skips = Vec::with_capacity(e);
        for (i, &blk) in self.encoder.iter().enumerate() {
            h = self.conv_block(g, &vars, h, blk, mode, &mut stats)?;
            skips.push(h);
            if i < r {
                h = g.decimate2(h)?;
            }
        }
        for &blk in &self.bottleneck {
            h = self.conv_block(g, &vars, h, blk, mode, &mut stats)?;
        }
        for (j, &blk) in self.decoder.iter().enumerate() {
            if j >= e - r {
                h = g.upsample_linear2(h)?;
            }
            let skip = skips[e - 1 - j];
            assert_eq!(
                g.dims(h)[2],
                g.dims(skip)[2],
                "decoder block {} skip length mismatch",
                j + 1
            );
            h = g.concat_channels(h, skip)?;
            h = self.conv_block(g, &vars, h, blk, mode, &mut stats)?;
        }
        let hw = vars[self.head_weight].expect("head weight leaf");
        let hb = vars[self.head_bias].expect("head bias leaf");
        let h = g.conv1d(h, hw, hb)?;
        let output = g.tanh(h);
        Ok(Forward {
            output,
            param_vars: vars,
            batch_stats: stats,
        })
    }

    /// Folds train-mode batch moments into the running statistics:
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running_stats(&mut self, fwd: &Forward<F>) {
        let m = F::of(BN_MOMENTUM);
        let one_m = F::of(1.0 - BN_MOMENTUM);
        for (mean_idx, s) in &fwd.batch_stats {
            // running_var directly follows running_mean in the layout
            for (idx, batch) in [(*mean_idx, &s.mean), (*mean_idx + 1, &s.var)] {
                for (r, &b) in self.params[idx].tensor.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + one_m * b;
                }
            }
        }
    }

    /// Copies gradients from the tape into each trainable tensor's
    /// `grad` slot. Untracked parameters are left without a gradient.
    pub fn collect_grads(&mut self, g: &Graph<F>, fwd: &Forward<F>) -> Result<(), UnetError> {
        for (p, v) in self.params.iter_mut().zip(&fwd.param_vars) {
            match v.and_then(|v| g.grad(v)) {
                Some(grad) => p.tensor.set_grad(grad.to_vec())?,
                None => p.tensor.zero_grad(),
            }
        }
        Ok(())
    }

    /// Enhances a batch `[B, 1, T]` in infer mode without tracking.
    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, UnetError> {
        let mut g = Graph::new();
        let xv = g.constant(x.dims().to_vec(), x.data().to_vec())?;
        let fwd = self.forward_impl(&mut g, xv, Mode::Infer, false)?;
        Ok(g.tensor(fwd.output))
    }
}
