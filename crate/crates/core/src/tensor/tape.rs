//! Thread-local computation tape for reverse-mode differentiation.
//!
//! Every thread owns one tape. Operations append nodes in execution order,
//! which is by construction a topological order of the computation graph.
//! [`backward`] walks the nodes in reverse, applying each node's local
//! gradient closure, and returns the accumulated gradients of every
//! parameter leaf reachable from the loss. The tape is cleared afterwards.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

/// Local-gradient closure: upstream gradient -> one gradient per input.
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

/// One recorded operation (or parameter leaf) on the tape.
pub(crate) struct TapeNode {
    /// Node indices of the inputs; `None` marks a constant input whose
    /// gradient is discarded.
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    /// Set for parameter leaves: (tensor id, shape).
    leaf: Option<(u64, Vec<usize>)>,
    out_len: usize,
}

/// Ordered record of executed operations with input/output references and
/// local-gradient closures.
pub struct ComputationTape {
    epoch: u64,
    nodes: Vec<TapeNode>,
    grad_enabled: bool,
}

static NEXT_EPOCH: AtomicU64 = AtomicU64::new(1);

fn fresh_epoch() -> u64 {
    NEXT_EPOCH.fetch_add(1, Ordering::Relaxed)
}

impl ComputationTape {
    fn new() -> Self {
        ComputationTape {
            epoch: fresh_epoch(),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

thread_local! {
    static TAPE: RefCell<ComputationTape> = RefCell::new(ComputationTape::new());
}

/// Number of nodes currently recorded on this thread's tape.
pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().len())
}

/// Discard any recorded nodes on this thread's tape.
pub fn clear_tape() {
    TAPE.with(|t| {
        let mut tape = t.borrow_mut();
        tape.nodes.clear();
        tape.epoch = fresh_epoch();
    });
}

/// Run `f` with gradient recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = TAPE.with(|t| {
        let mut tape = t.borrow_mut();
        std::mem::replace(&mut tape.grad_enabled, false)
    });
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            TAPE.with(|t| t.borrow_mut().grad_enabled = self.0);
        }
    }
    let _restore = Restore(prev);
    f()
}

fn grad_enabled() -> bool {
    TAPE.with(|t| t.borrow().grad_enabled)
}

/// Node index of `t` on the current tape, registering a parameter leaf on
/// demand. `None` for constants.
fn ensure_node(t: &Tensor) -> Option<usize> {
    TAPE.with(|cell| {
        let mut tape = cell.borrow_mut();
        if let Some((epoch, id)) = t.node_cell().get() {
            if epoch == tape.epoch {
                return Some(id);
            }
        }
        if !t.requires_grad() {
            return None;
        }
        let id = tape.nodes.len();
        tape.nodes.push(TapeNode {
            inputs: Vec::new(),
            backward: None,
            leaf: Some((t.id(), t.shape().to_vec())),
            out_len: t.len(),
        });
        t.node_cell().set(Some((tape.epoch, id)));
        Some(id)
    })
}

/// Whether an op over these inputs should be recorded. True when recording
/// is enabled and at least one input participates in differentiation.
pub(crate) fn should_record(inputs: &[&Tensor]) -> bool {
    if !grad_enabled() {
        return false;
    }
    TAPE.with(|cell| {
        let tape = cell.borrow();
        inputs.iter().any(|t| {
            t.requires_grad()
                || matches!(t.node_cell().get(), Some((epoch, _)) if epoch == tape.epoch)
        })
    })
}

/// Record `out = op(inputs)` with its local-gradient closure and return the
/// output wired onto the tape.
pub(crate) fn record(inputs: &[&Tensor], out: Tensor, backward: BackwardFn) -> Tensor {
    let input_nodes: Vec<Option<usize>> = inputs.iter().map(|t| ensure_node(t)).collect();
    TAPE.with(|cell| {
        let mut tape = cell.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(TapeNode {
            inputs: input_nodes,
            backward: Some(backward),
            leaf: None,
            out_len: out.len(),
        });
        out.node_cell().set(Some((tape.epoch, id)));
    });
    out
}

/// Gradients of parameters, keyed by parameter identity.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients::default()
    }

    /// Gradient of `param`, if any flowed to it.
    pub fn get(&self, param: &Tensor) -> Option<&Tensor> {
        self.grads.get(&param.id())
    }

    /// Gradient of `param`, or zeros of its shape when the loss was constant
    /// with respect to it.
    pub fn get_or_zeros(&self, param: &Tensor) -> Tensor {
        match self.grads.get(&param.id()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(param.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise `self += other`, merging entries absent on either side.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(mine) => {
                    assert_eq!(mine.shape(), g.shape(), "gradient shape drift");
                    let data: Vec<f64> = mine
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(a, b)| a + b)
                        .collect();
                    *mine = Tensor::raw(mine.shape().to_vec(), data, false);
                }
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
    }

    /// Scale every gradient in place.
    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            let data: Vec<f64> = g.data().iter().map(|v| v * factor).collect();
            *g = Tensor::raw(g.shape().to_vec(), data, false);
        }
    }

    fn insert_accumulate(&mut self, id: u64, shape: &[usize], grad: Vec<f64>) {
        match self.grads.get_mut(&id) {
            Some(existing) => {
                let data: Vec<f64> = existing
                    .data()
                    .iter()
                    .zip(&grad)
                    .map(|(a, b)| a + b)
                    .collect();
                *existing = Tensor::raw(shape.to_vec(), data, false);
            }
            None => {
                self.grads.insert(id, Tensor::raw(shape.to_vec(), grad, false));
            }
        }
    }
}

/// Reverse pass: propagate from a scalar loss back to every parameter leaf
/// recorded on this thread's tape. The tape is cleared on return (also on
/// error), so each forward pass records a fresh tape.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    let (nodes, loss_node) = TAPE.with(|cell| {
        let mut tape = cell.borrow_mut();
        let loss_node = match loss.node_cell().get() {
            Some((epoch, id)) if epoch == tape.epoch => Some(id),
            _ => None,
        };
        let nodes = std::mem::take(&mut tape.nodes);
        tape.epoch = fresh_epoch();
        (nodes, loss_node)
    });

    let loss_node = loss_node.ok_or(Error::LossNotOnTape)?;
    if loss.len() != 1 {
        return Err(Error::LossNotScalar(loss.shape().to_vec()));
    }

    let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
    grads[loss_node] = Some(vec![1.0]);

    let mut out = Gradients::new();
    for idx in (0..nodes.len()).rev() {
        let Some(upstream) = grads[idx].take() else {
            continue;
        };
        let node = &nodes[idx];
        debug_assert_eq!(upstream.len(), node.out_len);
        if let Some((tensor_id, shape)) = &node.leaf {
            out.insert_accumulate(*tensor_id, shape, upstream);
            continue;
        }
        let Some(backward_fn) = &node.backward else {
            continue;
        };
        let input_grads = backward_fn(&upstream);
        debug_assert_eq!(input_grads.len(), node.inputs.len());
        for (slot, grad) in node.inputs.iter().zip(input_grads) {
            let Some(input_idx) = slot else { continue };
            match &mut grads[*input_idx] {
                Some(acc) => {
                    debug_assert_eq!(acc.len(), grad.len());
                    for (a, g) in acc.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
                slot @ None => *slot = Some(grad),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_quadratic() {
        // loss = sum(w * w), w = [3] -> dL/dw = [6]
        let w = Tensor::param(&[1], vec![3.0]);
        let loss = w.mul(&w).sum();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_matmul_chain() {
        // loss = sum(A x), A = [[1, 2]], x = [[1], [1]] -> dL/dx = [[1], [2]]
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]);
        let x = Tensor::param(&[2, 1], vec![1.0, 1.0]);
        let loss = a.matmul(&x).sum();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_constant_loss_gives_zeros() {
        let w = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let unrelated = Tensor::param(&[2], vec![5.0, 7.0]);
        let loss = unrelated.sum();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&w).is_none());
        assert_eq!(grads.get_or_zeros(&w).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]);
        let out = w.mul(&w);
        match backward(&out) {
            Err(Error::LossNotScalar(shape)) => assert_eq!(shape, vec![2]),
            other => panic!("expected LossNotScalar, got {other:?}"),
        }
    }

    #[test]
    fn backward_without_tape_errors() {
        let c = Tensor::scalar(1.0);
        assert!(matches!(backward(&c), Err(Error::LossNotOnTape)));
    }

    #[test]
    fn backward_clears_tape() {
        let w = Tensor::param(&[1], vec![2.0]);
        let loss = w.mul(&w).sum();
        assert!(tape_len() > 0);
        backward(&loss).unwrap();
        assert_eq!(tape_len(), 0);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let w = Tensor::param(&[3], vec![0.5, -1.0, 2.0]);

        let l1 = w.mul(&w).sum();
        let g1 = backward(&l1).unwrap();

        let l2 = w.sigmoid().sum();
        let g2 = backward(&l2).unwrap();

        let combined = w.mul(&w).sum().add(&w.sigmoid().sum());
        let g = backward(&combined).unwrap();

        let lhs = g.get(&w).unwrap();
        let a = g1.get(&w).unwrap();
        let b = g2.get(&w).unwrap();
        for i in 0..3 {
            let expect = a.data()[i] + b.data()[i];
            assert!((lhs.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let w = Tensor::param(&[1], vec![2.0]);
        let out = no_grad(|| w.mul(&w).sum());
        assert!(matches!(backward(&out), Err(Error::LossNotOnTape)));
    }

    #[test]
    fn gradients_accumulate_across_multiple_uses() {
        // out = 2w + 3w -> d/dw = 5
        let w = Tensor::param(&[1], vec![1.0]);
        let loss = w.scale(2.0).add(&w.scale(3.0)).sum();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&w).unwrap().data(), &[5.0]);
    }
}
