use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::bank::{select_teacher, TeacherBank};
use super::infer::enhance_samples;
use super::loss::distill_loss;
use super::{DistillConfig, DistillError, Example, TrainConfig, TrainSet};
use crate::dataset::splitmix64;
use crate::metrics::{si_sdr, stoi};
use crate::tensor::{adam_step, AdamState, Graph, Real, Tensor};
use crate::unet::{ArchConfig, Model, Mode, ParamKind};

/// One row of `curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Mean over the epoch's batches of the batch loss divided by the
    /// number of samples in the batch.
    pub train_loss: f64,
    /// `½‖enhanced − clean‖²` per sample over the full validation
    /// utterances, in infer mode.
    pub val_loss: f64,
    pub val_stoi: f64,
    pub val_sisdr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainCurves {
    pub points: Vec<CurvePoint>,
}

impl TrainCurves {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.points.is_empty() {
            w.write_record(["epoch", "train_loss", "val_loss", "val_stoi", "val_sisdr"])
                .expect("in-memory writer");
        }
        for p in &self.points {
            w.serialize(p).expect("curve points serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is UTF-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DistillError> {
        std::fs::write(path, self.to_csv()).map_err(|e| DistillError::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    /// Validation loss stalled for `patience` epochs.
    Patience,
}

pub struct TrainOutcome<F> {
    /// Weights after the last optimizer step.
    pub model: Model<F>,
    /// Weights at the lowest validation loss (the last weights when there
    /// is no validation split).
    pub best: Model<F>,
    pub best_epoch: usize,
    pub curves: TrainCurves,
    /// Loss value of every optimizer step, in order.
    pub batch_losses: Vec<f64>,
    pub steps: usize,
    pub stop_reason: StopReason,
}

/// Trains a teacher on clean-target reconstruction only.
///
/// With `declared_snrs` every train and validation SNR must fall inside
/// the declared set's `[min, max]`.
pub fn train_teacher<F: Real>(
    arch: &ArchConfig,
    data: &TrainSet,
    cfg: &TrainConfig,
    declared_snrs: Option<&[f64]>,
) -> Result<TrainOutcome<F>, DistillError> {
    if let Some(set) = declared_snrs {
        if set.is_empty() {
            return Err(DistillError::Config {
                field: "snr_set",
                reason: "declared SNR set is empty".into(),
            });
        }
        let lo = set.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if let Some(ex) = data.train.iter().chain(&data.val).find(|e| !(lo..=hi).contains(&e.snr_db)) {
            return Err(DistillError::OutsideBand {
                id: ex.id.clone(),
                snr_db: ex.snr_db,
                lo,
                hi,
            });
        }
    }
    run(arch, data, cfg, None, 0.0)
}

/// Trains a student. With a bank every example is supervised by the
/// teacher routed from its SNR, weighted by `dcfg.alpha`; without one the
/// clean target is the only supervision.
pub fn train_student<F: Real>(
    arch: &ArchConfig,
    data: &TrainSet,
    bank: Option<&TeacherBank<F>>,
    dcfg: &DistillConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>, DistillError> {
    dcfg.validate()?;
    match bank {
        Some(b) => {
            for e in b.entries() {
                if e.model.arch().time_divisor() > cfg.segment_len || !cfg.segment_len.is_multiple_of(e.model.arch().time_divisor()) {
                    return Err(DistillError::Teacher {
                        teacher: e.id.clone(),
                        reason: format!("cannot process {}-sample windows", cfg.segment_len),
                    });
                }
            }
            run(arch, data, cfg, Some(b), dcfg.alpha)
        }
        None => run(arch, data, cfg, None, 0.0),
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a.wrapping_add(splitmix64(b))))
}

/// Random `len`-sample window of an example; zero-padded when shorter.
fn window(ex: &Example, len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n = ex.len();
    if n <= len {
        let mut noisy = ex.noisy.clone();
        let mut clean = ex.clean.as_ref().clone();
        noisy.resize(len, 0.0);
        clean.resize(len, 0.0);
        return (noisy, clean);
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..=n - len);
    (
        ex.noisy[start..start + len].to_vec(),
        ex.clean[start..start + len].to_vec(),
    )
}

fn to_real<F: Real>(v: &[f64]) -> Vec<F> {
    v.iter().map(|&x| F::of(x)).collect()
}

struct Validation {
    loss: f64,
    stoi: f64,
    sisdr: f64,
}

fn validate<F: Real>(model: &Model<F>, val: &[Example], window: usize) -> Result<Validation, DistillError> {
    if val.is_empty() {
        return Ok(Validation {
            loss: f64::NAN,
            stoi: f64::NAN,
            sisdr: f64::NAN,
        });
    }
    let (mut err, mut samples, mut stoi_sum, mut stoi_n, mut sisdr_sum) = (0.0, 0usize, 0.0, 0usize, 0.0);
    for ex in val {
        let est = enhance_samples(model, &ex.noisy, window)?;
        err += est.iter().zip(ex.clean.iter()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum::<f64>();
        samples += est.len();
        // utterances too short for the intelligibility measure are skipped
        if let Ok(s) = stoi(&est, &ex.clean) {
            stoi_sum += s;
            stoi_n += 1;
        }
        sisdr_sum += si_sdr(&est, &ex.clean)?;
    }
    Ok(Validation {
        loss: err / samples as f64,
        stoi: if stoi_n > 0 { stoi_sum / stoi_n as f64 } else { f64::NAN },
        sisdr: sisdr_sum / val.len() as f64,
    })
}

fn run<F: Real>(
    arch: &ArchConfig,
    data: &TrainSet,
    cfg: &TrainConfig,
    bank: Option<&TeacherBank<F>>,
    alpha: f64,
) -> Result<TrainOutcome<F>, DistillError> {
    arch.validate()?;
    cfg.validate(arch)?;
    if data.train.is_empty() {
        return Err(DistillError::NoTrainingData);
    }
    let routes: Option<Vec<usize>> = bank
        .map(|b| data.train.iter().map(|e| select_teacher(b, e.snr_db)).collect())
        .transpose()?;
    if let (Some(b), Some(r)) = (bank, &routes) {
        let mut used = vec![0usize; b.len()];
        r.iter().for_each(|&i| used[i] += 1);
        for (e, n) in b.entries().iter().zip(&used) {
            log::info!("teacher {} [{}, {}] dB supervises {n} examples", e.id, e.band.lo, e.band.hi);
        }
    }

    let mut model = Model::<F>::build(arch, cfg.seed)?;
    let mut adam = AdamState::new();
    let seg = cfg.segment_len;
    let n = data.train.len();
    let mut curves = TrainCurves::default();
    let mut batch_losses = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut steps = 0usize;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let mut hp = cfg.adam();
        hp.lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, u64::MAX)));
        let mut epoch_losses = Vec::new();

        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch.len();
            let mut noisy = Vec::with_capacity(b * seg);
            let mut clean = Vec::with_capacity(b * seg);
            for &i in batch {
                let (x, y) = window(&data.train[i], seg, mix(cfg.seed, epoch as u64, i as u64));
                noisy.extend(x);
                clean.extend(y);
            }
            let teacher_out = match (bank, &routes) {
                (Some(bank), Some(routes)) => {
                    let mut out = vec![F::zero(); b * seg];
                    for (t, entry) in bank.entries().iter().enumerate() {
                        let rows: Vec<usize> = (0..b).filter(|&k| routes[batch[k]] == t).collect();
                        if rows.is_empty() {
                            continue;
                        }
                        let mut x = Vec::with_capacity(rows.len() * seg);
                        for &k in &rows {
                            x.extend(to_real::<F>(&noisy[k * seg..(k + 1) * seg]));
                        }
                        let y = entry.model.infer(&Tensor::from_vec(vec![rows.len(), 1, seg], x)?)?;
                        for (r, &k) in rows.iter().enumerate() {
                            out[k * seg..(k + 1) * seg].copy_from_slice(&y.data()[r * seg..(r + 1) * seg]);
                        }
                    }
                    Some(out)
                }
                _ => None,
            };

            let mut g = Graph::<F>::new();
            let dims = vec![b, 1, seg];
            let xv = g.constant(dims.clone(), to_real(&noisy))?;
            let yv = g.constant(dims.clone(), to_real(&clean))?;
            let tv = teacher_out.map(|t| g.constant(dims.clone(), t)).transpose()?;
            let fwd = model.forward(&mut g, xv, Mode::Train)?;
            let loss = distill_loss(&mut g, fwd.output, tv, yv, alpha).map_err(|source| DistillError::Step {
                epoch,
                batch: batch_no + 1,
                source,
            })?;
            let value = g.value(loss)[0].as_f64();
            if !value.is_finite() {
                return Err(DistillError::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                });
            }
            let step_err = |source| DistillError::Step {
                epoch,
                batch: batch_no + 1,
                source,
            };
            g.backward(loss).map_err(step_err)?;
            {
                let mut params = Vec::new();
                let mut grads: Vec<&[F]> = Vec::new();
                for (p, v) in model.params_mut().iter_mut().zip(&fwd.param_vars) {
                    if p.kind != ParamKind::Trainable || !p.tensor.requires_grad() {
                        continue;
                    }
                    let v = v.expect("trainable parameter has a leaf");
                    grads.push(g.grad(v).ok_or(DistillError::Step {
                        epoch,
                        batch: batch_no + 1,
                        source: crate::tensor::TensorError::DetachedLoss,
                    })?);
                    params.push(&mut p.tensor);
                }
                adam_step(&mut params, &grads, &mut adam, &hp).map_err(step_err)?;
            }
            model.update_running_stats(&fwd);
            steps += 1;
            batch_losses.push(value);
            epoch_losses.push(value / (b * seg) as f64);
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                stop = StopReason::MaxSteps;
                break;
            }
        }

        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        let last = epoch == cfg.max_epochs || stop == StopReason::MaxSteps;
        if epoch % cfg.val_every == 0 || last {
            let v = validate(&model, &data.val, seg)?;
            log::info!(
                "epoch {epoch} step {steps}: train {train_loss:.4e} val {:.4e} stoi {:.4} si-sdr {:.2} dB",
                v.loss,
                v.stoi,
                v.sisdr
            );
            curves.points.push(CurvePoint {
                epoch,
                train_loss,
                val_loss: v.loss,
                val_stoi: v.stoi,
                val_sisdr: v.sisdr,
            });
            if v.loss < best_loss {
                best_loss = v.loss;
                best_epoch = epoch;
                best = model.clone();
            }
            if let Some(p) = cfg.patience {
                if best_epoch > 0 && epoch - best_epoch >= p && stop != StopReason::MaxSteps {
                    log::info!("validation loss has not improved since epoch {best_epoch}; stopping");
                    stop = StopReason::Patience;
                }
            }
        }
        if stop != StopReason::MaxEpochs {
            break;
        }
    }
    if best_epoch == 0 {
        best = model.clone();
        best_epoch = curves.points.last().map_or(0, |p| p.epoch);
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        curves,
        batch_losses,
        steps,
        stop_reason: stop,
    })
}
