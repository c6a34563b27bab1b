//! Temporal building blocks: dilated causal convolutions, the four-kernel
//! inception layer, GRU cell, temporal attention, and frequency-domain
//! filtering.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The kernel sizes of the dilated inception layer.
pub const INCEPTION_KERNEL_SIZES: [usize; 4] = [2, 3, 6, 7];

/// Exponential dilation schedule: layer i uses dilation `q^(i-1)`.
#[derive(Debug, Clone)]
pub struct DilationSchedule {
    q: usize,
    dilations: Vec<usize>,
}

impl DilationSchedule {
    pub fn new(q: usize, layers: usize) -> Result<DilationSchedule> {
        if q < 1 {
            return Err(Error::Config(format!("dilation exponent {q} must be >= 1")));
        }
        if layers < 1 {
            return Err(Error::Config("dilation schedule needs at least one layer".into()));
        }
        let mut dilations = Vec::with_capacity(layers);
        let mut d = 1usize;
        for i in 0..layers {
            dilations.push(d);
            if i + 1 < layers {
                d = d.checked_mul(q).ok_or_else(|| {
                    Error::Config(format!("dilation overflow at layer {} with q={q}", i + 1))
                })?;
            }
        }
        Ok(DilationSchedule { q, dilations })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    /// Receptive field of a stack of inception layers under this schedule:
    /// `1 + (k_max - 1) * sum(dilations)`.
    pub fn receptive_field(&self) -> usize {
        let k_max = INCEPTION_KERNEL_SIZES[INCEPTION_KERNEL_SIZES.len() - 1];
        1 + (k_max - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// Weight banks of one dilated inception layer, one per kernel size
/// (2, 3, 6, 7). Bank i has shape `[out_ch_i, in_ch, k_i]`.
#[derive(Debug, Clone)]
pub struct InceptionKernels {
    pub banks: [Tensor; 4],
}

impl InceptionKernels {
    fn validate(&self, in_ch: usize) -> Result<()> {
        for (bank, &k) in self.banks.iter().zip(&INCEPTION_KERNEL_SIZES) {
            if bank.ndim() != 3 || bank.shape()[2] != k {
                return Err(Error::ShapeMismatch {
                    op: "dilated_inception",
                    expected: format!("kernel bank [*, *, {k}]"),
                    actual: format!("{:?}", bank.shape()),
                });
            }
            if bank.shape()[1] != in_ch {
                return Err(Error::ShapeMismatch {
                    op: "dilated_inception",
                    expected: format!("{in_ch} input channels"),
                    actual: format!("{:?}", bank.shape()),
                });
            }
        }
        Ok(())
    }

    /// Total output channels across the four banks.
    pub fn out_channels(&self) -> usize {
        self.banks.iter().map(|b| b.shape()[0]).sum()
    }
}

/// Four parallel dilated causal convolutions (kernel sizes 2/3/6/7) sharing
/// one dilation factor, concatenated on the channel axis. Causal left
/// padding keeps every branch at the input length.
pub fn dilated_inception(x: &Tensor, dilation: usize, kernels: &InceptionKernels) -> Result<Tensor> {
    if x.ndim() != 3 {
        return Err(Error::ShapeMismatch {
            op: "dilated_inception",
            expected: "[nodes, channels, time]".into(),
            actual: format!("{:?}", x.shape()),
        });
    }
    if dilation < 1 {
        return Err(Error::Config(format!("dilation {dilation} must be >= 1")));
    }
    kernels.validate(x.shape()[1])?;
    let branches: Vec<Tensor> = kernels
        .banks
        .iter()
        .map(|bank| x.conv1d_dilated(bank, None, dilation))
        .collect();
    let refs: Vec<&Tensor> = branches.iter().collect();
    Ok(Tensor::concat(1, &refs))
}

/// GRU cell parameters over the concatenated `[x_t, h_prev]` input.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_update: Tensor,
    pub w_reset: Tensor,
    pub w_candidate: Tensor,
    pub b_update: Tensor,
    pub b_reset: Tensor,
    pub b_candidate: Tensor,
}

impl GruParams {
    pub fn hidden_size(&self) -> usize {
        self.w_update.shape()[1]
    }

    fn validate(&self, input_size: usize) -> Result<()> {
        let hidden = self.hidden_size();
        let expect = [input_size + hidden, hidden];
        for (name, w) in [
            ("w_update", &self.w_update),
            ("w_reset", &self.w_reset),
            ("w_candidate", &self.w_candidate),
        ] {
            if w.shape() != expect {
                return Err(Error::ShapeMismatch {
                    op: "gru_step",
                    expected: format!("{name} {expect:?}"),
                    actual: format!("{:?}", w.shape()),
                });
            }
        }
        for (name, b) in [
            ("b_update", &self.b_update),
            ("b_reset", &self.b_reset),
            ("b_candidate", &self.b_candidate),
        ] {
            if b.len() != hidden {
                return Err(Error::ShapeMismatch {
                    op: "gru_step",
                    expected: format!("{name} of length {hidden}"),
                    actual: format!("{:?}", b.shape()),
                });
            }
        }
        Ok(())
    }
}

/// One GRU step over a batch of rows:
/// `u = sigma(W_u [x, h] + b_u)`, `r = sigma(W_r [x, h] + b_r)`,
/// `c = tanh(W_c [x, r*h] + b_c)`, `h_t = u*h_prev + (1-u)*c`.
pub fn gru_step(x_t: &Tensor, h_prev: &Tensor, p: &GruParams) -> Result<Tensor> {
    if x_t.ndim() != 2 || h_prev.ndim() != 2 || x_t.shape()[0] != h_prev.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "gru_step",
            expected: "[rows, f] input with [rows, hidden] state".into(),
            actual: format!("{:?} and {:?}", x_t.shape(), h_prev.shape()),
        });
    }
    p.validate(x_t.shape()[1])?;
    if h_prev.shape()[1] != p.hidden_size() {
        return Err(Error::ShapeMismatch {
            op: "gru_step",
            expected: format!("hidden size {}", p.hidden_size()),
            actual: format!("{:?}", h_prev.shape()),
        });
    }

    let xh = Tensor::concat(1, &[x_t, h_prev]);
    let update = xh.matmul(&p.w_update).add(&p.b_update).sigmoid();
    let reset = xh.matmul(&p.w_reset).add(&p.b_reset).sigmoid();
    let x_rh = Tensor::concat(1, &[x_t, &reset.mul(h_prev)]);
    let candidate = x_rh.matmul(&p.w_candidate).add(&p.b_candidate).tanh();
    Ok(update.mul(h_prev).add(&update.affine(-1.0, 1.0).mul(&candidate)))
}

/// Two-layer scoring network of the temporal attention:
/// `e_i = W2 (W1 h_i + b1) + b2`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl AttentionParams {
    fn validate(&self, hidden: usize) -> Result<()> {
        let inner = self.w1.shape()[1];
        if self.w1.shape() != [hidden, inner]
            || self.b1.len() != inner
            || self.w2.shape() != [inner, 1]
            || self.b2.len() != 1
        {
            return Err(Error::ShapeMismatch {
                op: "temporal_attention",
                expected: format!("scoring net over hidden size {hidden} emitting a scalar"),
                actual: format!(
                    "w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            });
        }
        Ok(())
    }
}

/// Score every time step, softmax the scores, and return the weighted
/// context vector together with the weights.
pub fn temporal_attention(h_seq: &Tensor, p: &AttentionParams) -> Result<(Tensor, Tensor)> {
    if h_seq.ndim() != 2 || h_seq.shape()[0] == 0 {
        return Err(Error::ShapeMismatch {
            op: "temporal_attention",
            expected: "[time >= 1, hidden]".into(),
            actual: format!("{:?}", h_seq.shape()),
        });
    }
    p.validate(h_seq.shape()[1])?;
    let t_len = h_seq.shape()[0];
    let scores = h_seq.matmul(&p.w1).add(&p.b1).matmul(&p.w2).add(&p.b2);
    let weights = scores.reshape(&[t_len]).softmax_lastdim();
    let context = weights.reshape(&[1, t_len]).matmul(h_seq).reshape(&[h_seq.shape()[1]]);
    Ok((context, weights))
}

/// Per-bin spectral weights for coarse frequency filtering.
#[derive(Debug, Clone)]
pub enum FrequencyMask {
    /// Fixed real weights per bin.
    Fixed(Tensor),
    /// Learnable gate: weights are `sigmoid(logits)`.
    Gate(Tensor),
}

impl FrequencyMask {
    pub fn all_pass(bins: usize) -> FrequencyMask {
        FrequencyMask::Fixed(Tensor::ones(&[bins]))
    }

    /// Keep the lowest `keep` bins, zero the rest.
    pub fn low_pass(bins: usize, keep: usize) -> FrequencyMask {
        let mut w = vec![0.0; bins];
        for v in w.iter_mut().take(keep.min(bins)) {
            *v = 1.0;
        }
        FrequencyMask::Fixed(Tensor::from_vec(&[bins], w))
    }

    pub fn bins(&self) -> usize {
        match self {
            FrequencyMask::Fixed(w) | FrequencyMask::Gate(w) => w.len(),
        }
    }

    /// Effective per-bin weights (taped when the gate logits are trainable).
    pub fn weights(&self) -> Tensor {
        match self {
            FrequencyMask::Fixed(w) => w.clone(),
            FrequencyMask::Gate(logits) => logits.sigmoid(),
        }
    }
}

/// Filter a series along its trailing time axis in the frequency domain:
/// real DFT, per-bin mask, inverse DFT.
pub fn coarse_frequency_filter(x: &Tensor, mask: &FrequencyMask) -> Result<Tensor> {
    let t_len = *x.shape().last().ok_or_else(|| Error::ShapeMismatch {
        op: "coarse_frequency_filter",
        expected: "non-empty shape".into(),
        actual: "[]".into(),
    })?;
    let bins = t_len / 2 + 1;
    if mask.bins() != bins {
        return Err(Error::ShapeMismatch {
            op: "coarse_frequency_filter",
            expected: format!("{bins} mask bins for length {t_len}"),
            actual: format!("{}", mask.bins()),
        });
    }
    let spectrum = x.dft_real();
    let masked = spectrum.mul(&mask.weights());
    Ok(masked.idft_real(t_len))
}

/// Decompose a series into a centered-moving-average trend (edge
/// replication) and the residual detail; `trend + detail == x` exactly.
pub fn trend_detail_split(x: &Tensor, window: usize) -> Result<(Tensor, Tensor)> {
    let t_len = *x.shape().last().unwrap_or(&0);
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!("moving-average window {window} must be odd")));
    }
    if window > t_len {
        return Err(Error::Config(format!(
            "moving-average window {window} exceeds series length {t_len}"
        )));
    }
    let trend = x.moving_avg_centered(window);
    let detail = x.sub(&trend);
    Ok((trend, detail))
}
