// Forward and adjoint kernels on flat row-major buffers. Every kernel
// writes each output element from exactly one task with a fixed loop
// order, so results are bit-identical for any rayon pool size.

use rayon::prelude::*;

use super::Real;

/// Below this many multiply-adds a kernel runs on the calling thread.
const PAR_WORK: usize = 1 << 16;

fn chunked<F: Real>(buf: &mut [F], chunk: usize, work: usize, f: impl Fn(usize, &mut [F]) + Sync) {
    if chunk == 0 || buf.is_empty() {
        return;
    }
    if work >= PAR_WORK && rayon::current_num_threads() > 1 {
        buf.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        buf.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[inline]
fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let mut acc = [F::zero(); 4];
    let mut i = 0;
    while i + 4 <= n {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    while i < n {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub time: usize,
    pub kernel: usize,
}

impl ConvShape {
    fn work(&self) -> usize {
        self.batch * self.cin * self.cout * self.time * self.kernel
    }

    /// Output index range `[lo, hi)` for which `t + offset` stays in bounds.
    /// `None` when the tap never overlaps the signal.
    #[inline]
    fn valid(&self, tap: usize) -> Option<(isize, usize, usize)> {
        let offset = tap as isize - ((self.kernel - 1) / 2) as isize;
        let t = self.time as isize;
        let lo = (-offset).clamp(0, t) as usize;
        let hi = (t - offset).clamp(0, t) as usize;
        (hi > lo).then_some((offset, lo, hi))
    }
}

pub(crate) fn conv1d_forward<F: Real>(s: ConvShape, input: &[F], weight: &[F], bias: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); s.batch * s.cout * s.time];
    chunked(&mut out, s.time, s.work(), |idx, row| {
        let (b, co) = (idx / s.cout, idx % s.cout);
        row.fill(bias[co]);
        for ci in 0..s.cin {
            let x = &input[(b * s.cin + ci) * s.time..][..s.time];
            let w = &weight[(co * s.cin + ci) * s.kernel..][..s.kernel];
            for (tap, &wv) in w.iter().enumerate() {
                let Some((offset, lo, hi)) = s.valid(tap) else { continue };
                let src = (lo as isize + offset) as usize;
                axpy(wv, &x[src..src + (hi - lo)], &mut row[lo..hi]);
            }
        }
    });
    out
}

pub(crate) fn conv1d_backward_input<F: Real>(s: ConvShape, gout: &[F], weight: &[F]) -> Vec<F> {
    let mut gin = vec![F::zero(); s.batch * s.cin * s.time];
    chunked(&mut gin, s.time, s.work(), |idx, row| {
        let (b, ci) = (idx / s.cin, idx % s.cin);
        for co in 0..s.cout {
            let g = &gout[(b * s.cout + co) * s.time..][..s.time];
            let w = &weight[(co * s.cin + ci) * s.kernel..][..s.kernel];
            for (tap, &wv) in w.iter().enumerate() {
                let Some((offset, lo, hi)) = s.valid(tap) else { continue };
                let dst = (lo as isize + offset) as usize;
                axpy(wv, &g[lo..hi], &mut row[dst..dst + (hi - lo)]);
            }
        }
    });
    gin
}

/// Returns `(grad_weight, grad_bias)`.
pub(crate) fn conv1d_backward_params<F: Real>(s: ConvShape, gout: &[F], input: &[F]) -> (Vec<F>, Vec<F>) {
    let mut gw = vec![F::zero(); s.cout * s.cin * s.kernel];
    chunked(&mut gw, s.cin * s.kernel, s.work(), |co, row| {
        for b in 0..s.batch {
            let g = &gout[(b * s.cout + co) * s.time..][..s.time];
            for ci in 0..s.cin {
                let x = &input[(b * s.cin + ci) * s.time..][..s.time];
                for tap in 0..s.kernel {
                    let Some((offset, lo, hi)) = s.valid(tap) else { continue };
                    let src = (lo as isize + offset) as usize;
                    row[ci * s.kernel + tap] += dot(&g[lo..hi], &x[src..src + (hi - lo)]);
                }
            }
        }
    });
    let mut gb = vec![F::zero(); s.cout];
    for (co, gbv) in gb.iter_mut().enumerate() {
        for b in 0..s.batch {
            *gbv += gout[(b * s.cout + co) * s.time..][..s.time].iter().copied().sum::<F>();
        }
    }
    (gw, gb)
}

pub(crate) fn leaky_relu<F: Real>(x: &[F], slope: F) -> Vec<F> {
    x.iter().map(|&v| if v >= F::zero() { v } else { slope * v }).collect()
}

/// Derivative is 1 at the kink.
pub(crate) fn leaky_relu_backward<F: Real>(x: &[F], gout: &[F], slope: F) -> Vec<F> {
    x.iter()
        .zip(gout)
        .map(|(&v, &g)| if v >= F::zero() { g } else { slope * g })
        .collect()
}

/// Per-channel mean and biased variance over the batch and time axes.
pub(crate) fn channel_moments<F: Real>(x: &[F], batch: usize, channels: usize, time: usize) -> (Vec<F>, Vec<F>) {
    let n = F::of((batch * time) as f64);
    let mut mean = vec![F::zero(); channels];
    let mut var = vec![F::zero(); channels];
    for c in 0..channels {
        let mut s = F::zero();
        for b in 0..batch {
            s += x[(b * channels + c) * time..][..time].iter().copied().sum::<F>();
        }
        let mu = s / n;
        let mut v = F::zero();
        for b in 0..batch {
            for &xv in &x[(b * channels + c) * time..][..time] {
                let d = xv - mu;
                v += d * d;
            }
        }
        mean[c] = mu;
        var[c] = v / n;
    }
    (mean, var)
}

pub(crate) struct NormForward<F> {
    pub out: Vec<F>,
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

pub(crate) fn normalize<F: Real>(
    x: &[F],
    dims: (usize, usize, usize),
    mean: &[F],
    var: &[F],
    gamma: &[F],
    beta: &[F],
    eps: F,
) -> NormForward<F> {
    let (batch, channels, time) = dims;
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); x.len()];
    let mut out = vec![F::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * time;
            for t in base..base + time {
                let h = (x[t] - mean[c]) * inv_std[c];
                xhat[t] = h;
                out[t] = gamma[c] * h + beta[c];
            }
        }
    }
    NormForward { out, xhat, inv_std }
}

/// Adjoint of batch normalization. `batch_stats` selects the train-mode
/// adjoint (statistics depend on `x`) versus the infer-mode one.
/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub(crate) fn normalize_backward<F: Real>(
    gout: &[F],
    xhat: &[F],
    inv_std: &[F],
    gamma: &[F],
    dims: (usize, usize, usize),
    batch_stats: bool,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (batch, channels, time) = dims;
    let n = F::of((batch * time) as f64);
    let mut gx = vec![F::zero(); gout.len()];
    let mut gg = vec![F::zero(); channels];
    let mut gb = vec![F::zero(); channels];
    for c in 0..channels {
        let mut sum_g = F::zero();
        let mut sum_gh = F::zero();
        for b in 0..batch {
            let base = (b * channels + c) * time;
            for t in base..base + time {
                sum_g += gout[t];
                sum_gh += gout[t] * xhat[t];
            }
        }
        gb[c] = sum_g;
        gg[c] = sum_gh;
        let scale = gamma[c] * inv_std[c];
        for b in 0..batch {
            let base = (b * channels + c) * time;
            for t in base..base + time {
                gx[t] = if batch_stats {
                    scale * (gout[t] - (sum_g + xhat[t] * sum_gh) / n)
                } else {
                    scale * gout[t]
                };
            }
        }
    }
    (gx, gg, gb)
}

pub(crate) fn decimate2<F: Real>(x: &[F], rows: usize, time: usize) -> Vec<F> {
    let half = time / 2;
    let mut out = Vec::with_capacity(rows * half);
    for r in 0..rows {
        out.extend(x[r * time..][..time].iter().step_by(2).copied());
    }
    out
}

pub(crate) fn decimate2_backward<F: Real>(gout: &[F], rows: usize, time: usize) -> Vec<F> {
    let half = time / 2;
    let mut gin = vec![F::zero(); rows * time];
    for r in 0..rows {
        for i in 0..half {
            gin[r * time + 2 * i] = gout[r * half + i];
        }
    }
    gin
}

pub(crate) fn upsample2<F: Real>(x: &[F], rows: usize, time: usize) -> Vec<F> {
    let two = F::of(2.0);
    let mut out = vec![F::zero(); rows * time * 2];
    for r in 0..rows {
        let src = &x[r * time..][..time];
        let dst = &mut out[r * 2 * time..][..2 * time];
        for i in 0..time {
            dst[2 * i] = src[i];
            dst[2 * i + 1] = if i + 1 < time { (src[i] + src[i + 1]) / two } else { src[i] };
        }
    }
    out
}

pub(crate) fn upsample2_backward<F: Real>(gout: &[F], rows: usize, time: usize) -> Vec<F> {
    let half = F::of(0.5);
    let mut gin = vec![F::zero(); rows * time];
    for r in 0..rows {
        let g = &gout[r * 2 * time..][..2 * time];
        let dst = &mut gin[r * time..][..time];
        for i in 0..time {
            dst[i] += g[2 * i];
            if i + 1 < time {
                dst[i] += half * g[2 * i + 1];
                dst[i + 1] += half * g[2 * i + 1];
            } else {
                dst[i] += g[2 * i + 1];
            }
        }
    }
    gin
}

pub(crate) fn concat_channels<F: Real>(a: &[F], b: &[F], batch: usize, ca: usize, cb: usize, time: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(batch * (ca + cb) * time);
    for n in 0..batch {
        out.extend_from_slice(&a[n * ca * time..][..ca * time]);
        out.extend_from_slice(&b[n * cb * time..][..cb * time]);
    }
    out
}

pub(crate) fn split_channels<F: Real>(g: &[F], batch: usize, ca: usize, cb: usize, time: usize) -> (Vec<F>, Vec<F>) {
    let mut ga = Vec::with_capacity(batch * ca * time);
    let mut gb = Vec::with_capacity(batch * cb * time);
    let stride = (ca + cb) * time;
    for n in 0..batch {
        ga.extend_from_slice(&g[n * stride..][..ca * time]);
        gb.extend_from_slice(&g[n * stride + ca * time..][..cb * time]);
    }
    (ga, gb)
}

pub(crate) fn l2_half<F: Real>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s * F::of(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(cin: usize, cout: usize, time: usize, kernel: usize) -> ConvShape {
        ConvShape {
            batch: 1,
            cin,
            cout,
            time,
            kernel,
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let out = conv1d_forward(shape(1, 1, 3, 3), &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[0.0]);
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_difference_kernel_is_cross_correlation() {
        // out[t] = in[t-1] - in[t+1], zero padded
        let out = conv1d_forward(shape(1, 1, 3, 3), &[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0], &[0.0]);
        assert_eq!(out, vec![-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv_kernel_wider_than_signal() {
        // K=5 on T=2: only the centre three taps can ever touch the signal.
        let out = conv1d_forward(shape(1, 1, 2, 5), &[1.0, 10.0], &[100.0, 1.0, 2.0, 3.0, 100.0], &[0.5]);
        assert_eq!(out, vec![0.5 + 2.0 + 30.0, 0.5 + 1.0 + 20.0]);
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(&[3.0, -2.0, 0.0], 0.1), vec![3.0, -0.2, 0.0]);
        assert_eq!(leaky_relu_backward(&[3.0, -2.0, 0.0], &[1.0, 1.0, 1.0], 0.1), vec![1.0, 0.1, 1.0]);
    }

    #[test]
    fn decimate_and_adjoint() {
        assert_eq!(decimate2(&[1.0, 2.0, 3.0, 4.0], 1, 4), vec![1.0, 3.0]);
        assert_eq!(decimate2_backward(&[5.0, 7.0], 1, 4), vec![5.0, 0.0, 7.0, 0.0]);
    }

    #[test]
    fn upsample_values() {
        assert_eq!(upsample2(&[1.0, 3.0], 1, 2), vec![1.0, 2.0, 3.0, 3.0]);
        assert_eq!(upsample2(&[5.0; 3], 1, 3), vec![5.0; 6]);
        assert_eq!(upsample2(&[4.0], 1, 1), vec![4.0, 4.0]);
    }

    #[test]
    fn l2_half_values() {
        assert_eq!(l2_half(&[1.0, 0.0], &[0.0, 0.0]), 0.5);
        assert_eq!(l2_half(&[3.0], &[1.0]), 2.0);
        assert_eq!(l2_half(&[0.25, -1.5], &[0.25, -1.5]), 0.0);
    }

    #[test]
    fn dot_matches_naive_sum_for_short_tails() {
        let a: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let b = vec![1.0; 7];
        assert_eq!(dot(&a, &b), 21.0);
    }
}
