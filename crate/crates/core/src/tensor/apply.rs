//! Validated, fallible dispatch over the primitive op set.
//!
//! The [`Tensor`] methods panic on malformed shapes; [`apply`] is the
//! checked entry point that reports shape problems and non-finite outputs
//! as errors instead.

use super::Tensor;
use crate::error::{Error, Result};

/// The primitive operations of the differentiation substrate.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Matmul,
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    SoftmaxLastDim,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Transpose,
    Sum,
    Mean,
    Conv1dDilated { dilation: usize },
    DftReal,
    IdftReal { t_len: usize },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::SoftmaxLastDim => "softmax_lastdim",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Transpose => "transpose",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Conv1dDilated { .. } => "conv1d_dilated",
            OpKind::DftReal => "dft_real",
            OpKind::IdftReal { .. } => "idft_real",
        }
    }
}

fn shape_err(op: &'static str, expected: impl Into<String>, inputs: &[&Tensor]) -> Error {
    let actual = inputs
        .iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(", ");
    Error::ShapeMismatch {
        op,
        expected: expected.into(),
        actual,
    }
}

fn expect_arity(op: &'static str, inputs: &[&Tensor], arity: usize) -> Result<()> {
    if inputs.len() != arity {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("{arity} input(s)"),
            actual: format!("{} input(s)", inputs.len()),
        });
    }
    Ok(())
}

fn elementwise_compatible(op: &'static str, inputs: &[&Tensor]) -> Result<()> {
    expect_arity(op, inputs, 2)?;
    let (a, b) = (inputs[0], inputs[1]);
    let ok = a.shape() == b.shape()
        || b.len() == 1
        || (b.ndim() == 1 && b.len() == *a.shape().last().unwrap_or(&0));
    if ok {
        Ok(())
    } else {
        Err(shape_err(op, "equal shapes, scalar rhs, or last-dim vector rhs", inputs))
    }
}

/// Execute one primitive op over the given inputs, recording it on the tape
/// when any input participates in differentiation. The output is checked to
/// be finite.
pub fn apply(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let name = kind.name();
    let out = match kind {
        OpKind::Matmul => {
            expect_arity(name, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.ndim() != 2 || b.ndim() < 1 || b.shape()[0] != a.shape()[1] {
                return Err(shape_err(name, "[m,k] x [k,...]", inputs));
            }
            a.matmul(b)
        }
        OpKind::Add => {
            elementwise_compatible(name, inputs)?;
            inputs[0].add(inputs[1])
        }
        OpKind::Mul => {
            elementwise_compatible(name, inputs)?;
            inputs[0].mul(inputs[1])
        }
        OpKind::Sigmoid => {
            expect_arity(name, inputs, 1)?;
            inputs[0].sigmoid()
        }
        OpKind::Tanh => {
            expect_arity(name, inputs, 1)?;
            inputs[0].tanh()
        }
        OpKind::Relu => {
            expect_arity(name, inputs, 1)?;
            inputs[0].relu()
        }
        OpKind::SoftmaxLastDim => {
            expect_arity(name, inputs, 1)?;
            if inputs[0].is_empty() {
                return Err(shape_err(name, "non-empty tensor", inputs));
            }
            inputs[0].softmax_lastdim()
        }
        OpKind::Concat { axis } => {
            if inputs.is_empty() {
                return Err(shape_err(name, "at least one input", inputs));
            }
            let rank = inputs[0].ndim();
            if *axis >= rank {
                return Err(shape_err(name, format!("axis < {rank}"), inputs));
            }
            for t in inputs {
                if t.ndim() != rank {
                    return Err(shape_err(name, "equal ranks", inputs));
                }
                for d in 0..rank {
                    if d != *axis && t.shape()[d] != inputs[0].shape()[d] {
                        return Err(shape_err(name, "equal dims off the concat axis", inputs));
                    }
                }
            }
            Tensor::concat(*axis, inputs)
        }
        OpKind::Slice { axis, start, len } => {
            expect_arity(name, inputs, 1)?;
            let t = inputs[0];
            if *axis >= t.ndim() || start + len > t.shape()[*axis] {
                return Err(shape_err(name, "slice within bounds", inputs));
            }
            t.slice(*axis, *start, *len)
        }
        OpKind::Transpose => {
            expect_arity(name, inputs, 1)?;
            if inputs[0].ndim() != 2 {
                return Err(shape_err(name, "2-D tensor", inputs));
            }
            inputs[0].transpose()
        }
        OpKind::Sum => {
            expect_arity(name, inputs, 1)?;
            inputs[0].sum()
        }
        OpKind::Mean => {
            expect_arity(name, inputs, 1)?;
            if inputs[0].is_empty() {
                return Err(shape_err(name, "non-empty tensor", inputs));
            }
            inputs[0].mean()
        }
        OpKind::Conv1dDilated { dilation } => {
            if inputs.len() != 2 && inputs.len() != 3 {
                return Err(shape_err(name, "(input, weight[, bias])", inputs));
            }
            let (x, w) = (inputs[0], inputs[1]);
            if *dilation < 1
                || x.ndim() != 3
                || w.ndim() != 3
                || x.shape()[1] != w.shape()[1]
                || w.shape()[2] < 1
            {
                return Err(shape_err(name, "[b,ci,t] with weight [co,ci,k]", inputs));
            }
            let bias = inputs.get(2).copied();
            if let Some(b) = bias {
                if b.len() != w.shape()[0] {
                    return Err(shape_err(name, "bias of length out_channels", inputs));
                }
            }
            x.conv1d_dilated(w, bias, *dilation)
        }
        OpKind::DftReal => {
            expect_arity(name, inputs, 1)?;
            if inputs[0].is_empty() {
                return Err(shape_err(name, "non-empty tensor", inputs));
            }
            inputs[0].dft_real()
        }
        OpKind::IdftReal { t_len } => {
            expect_arity(name, inputs, 1)?;
            let t = inputs[0];
            if t.ndim() < 2
                || t.shape()[t.ndim() - 2] != 2
                || *t.shape().last().unwrap() != t_len / 2 + 1
            {
                return Err(shape_err(name, "[..., 2, floor(t/2)+1]", inputs));
            }
            t.idft_real(*t_len)
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: name });
    }
    Ok(out)
}
