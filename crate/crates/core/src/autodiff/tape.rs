use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::autodiff::conv::{self, ConvGeom, TransposeGeom};
use crate::autodiff::ops::{self, Unary};
use crate::autodiff::param::{ParamId, ParamStore};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of a recorded node, `None` for values that need no gradient.
pub(crate) type Slot = Option<usize>;

/// Backward rule for a single-input operation defined outside this module
/// (e.g. the spectral front-end).
pub trait UnaryBackward<R: Real> {
    fn name(&self) -> &'static str;
    /// Gradient w.r.t. the input given the gradient w.r.t. the output.
    fn backward(&self, grad_out: &Tensor<R>) -> Tensor<R>;
}

pub(crate) enum Op<R: Real> {
    Leaf,
    Param(ParamId),
    Add(Slot, Slot),
    Sub(Slot, Slot),
    Mul {
        a: Slot,
        b: Slot,
        av: Arc<Tensor<R>>,
        bv: Arc<Tensor<R>>,
    },
    /// `a [B,C,T] + b [B,C,1]`
    AddTimeBroadcast { a: Slot, b: Slot, time: usize },
    Scale(Slot, R),
    Unary {
        a: Slot,
        kind: Unary,
        input: Arc<Tensor<R>>,
        output: Arc<Tensor<R>>,
    },
    GatedTanh { a: Slot, input: Arc<Tensor<R>> },
    Sum { a: Slot, shape: Vec<usize> },
    Reshape { a: Slot, shape: Vec<usize> },
    Conv1d {
        x: Slot,
        w: Slot,
        b: Slot,
        xv: Arc<Tensor<R>>,
        wv: Arc<Tensor<R>>,
        geom: ConvGeom,
    },
    ConvTranspose1d {
        x: Slot,
        w: Slot,
        b: Slot,
        xv: Arc<Tensor<R>>,
        wv: Arc<Tensor<R>>,
        geom: TransposeGeom,
    },
    WeightNorm {
        v: Slot,
        g: Slot,
        vv: Arc<Tensor<R>>,
        gv: Arc<Tensor<R>>,
    },
    AvgPool1d {
        a: Slot,
        kernel: usize,
        stride: usize,
        in_shape: Vec<usize>,
    },
    SelectChannel {
        a: Slot,
        index: Vec<usize>,
        in_shape: Vec<usize>,
    },
    GatherBatch {
        a: Slot,
        index: Vec<usize>,
        in_shape: Vec<usize>,
    },
    NormalizeColumns {
        a: Slot,
        input: Arc<Tensor<R>>,
        output: Arc<Tensor<R>>,
        eps: R,
    },
    Custom {
        a: Slot,
        rule: Box<dyn UnaryBackward<R>>,
    },
}

struct Node<R: Real> {
    op: Op<R>,
    shape: Vec<usize>,
}

/// Record of executed operations. Only operations with at least one input
/// that needs a gradient are recorded; everything else is evaluated eagerly
/// and forgotten.
pub struct Tape<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
    consumed: Cell<bool>,
    kinks: Cell<u64>,
}

const KINK_SEED: u64 = 0xcbf2_9ce4_8422_2325;
const KINK_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> fmt::Debug for Tape<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

/// A value computed on a tape.
#[derive(Clone)]
pub struct Var<'t, R: Real> {
    pub(crate) tape: &'t Tape<R>,
    pub(crate) slot: Slot,
    pub(crate) value: Arc<Tensor<R>>,
}

impl<R: Real> fmt::Debug for Var<'_, R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("slot", &self.slot)
            .field("shape", &self.value.shape())
            .finish()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            kinks: Cell::new(KINK_SEED),
        }
    }

    /// Digest of which side of every kink (leaky ReLU, absolute value, log
    /// floor) each element fell on so far. Two evaluations with equal
    /// digests lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.get()
    }

    pub(crate) fn note_kinks(&self, sides: impl Iterator<Item = bool>) {
        let mut h = self.kinks.get();
        let mut word = 0u64;
        let mut n = 0;
        for s in sides {
            word = (word << 1) | s as u64;
            n += 1;
            if n == 64 {
                h = (h ^ word).wrapping_mul(KINK_PRIME);
                word = 0;
                n = 0;
            }
        }
        h = (h ^ word ^ n).wrapping_mul(KINK_PRIME);
        self.kinks.set(h);
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<R>) -> Var<'_, R> {
        self.constant_arc(Arc::new(value))
    }

    pub(crate) fn constant_arc(&self, value: Arc<Tensor<R>>) -> Var<'_, R> {
        Var {
            tape: self,
            slot: None,
            value,
        }
    }

    /// A differentiable input; its gradient is available from
    /// [`Gradients::wrt`] after [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<R>) -> Var<'_, R> {
        let value = Arc::new(value);
        let slot = self.push(Op::Leaf, value.shape().to_vec());
        Var {
            tape: self,
            slot,
            value,
        }
    }

    /// Bind a stored parameter. Frozen parameters behave as constants.
    pub fn param(&self, store: &ParamStore<R>, id: ParamId, trainable: bool) -> Var<'_, R> {
        let value = store.value_arc(id);
        if !trainable {
            return self.constant_arc(value);
        }
        let slot = self.push(Op::Param(id), value.shape().to_vec());
        Var {
            tape: self,
            slot,
            value,
        }
    }

    pub(crate) fn push(&self, op: Op<R>, shape: Vec<usize>) -> Slot {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape });
        Some(nodes.len() - 1)
    }

    /// Record `op` producing `value` if any input needs a gradient.
    pub(crate) fn record(&self, needs_grad: bool, op: impl FnOnce() -> Op<R>, value: Tensor<R>) -> Var<'_, R> {
        let value = Arc::new(value);
        let slot = if needs_grad {
            self.push(op(), value.shape().to_vec())
        } else {
            None
        };
        Var {
            tape: self,
            slot,
            value,
        }
    }

    /// Reverse sweep from a scalar `loss`. The tape is consumed: a second
    /// call returns a contract error.
    pub fn backward(&self, loss: &Var<'_, R>) -> Result<Gradients<R>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss was not computed on this tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::Contract(
                "tape already consumed by a previous backward pass".into(),
            ));
        }
        if loss.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let mut grads_out = Gradients::default();
        let Some(root) = loss.slot else {
            return Ok(grads_out);
        };
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        nodes.truncate(root + 1);
        let mut grads: Vec<Option<Tensor<R>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root] = Some(Tensor::full(nodes[root].shape.clone(), R::one()));

        while let Some(node) = nodes.pop() {
            let index = nodes.len();
            let Some(grad) = grads[index].take() else {
                continue;
            };
            match node.op {
                Op::Leaf => {
                    grads_out.leaves.insert(index, grad);
                }
                Op::Param(id) => match grads_out.params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&grad),
                    None => {
                        grads_out.params.insert(id, grad);
                    }
                },
                op => backprop(op, grad, &mut grads)?,
            }
        }
        Ok(grads_out)
    }
}

pub(crate) fn accumulate<R: Real>(grads: &mut [Option<Tensor<R>>], slot: Slot, g: Tensor<R>) {
    if let Some(i) = slot {
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g),
            empty => *empty = Some(g),
        }
    }
}

fn backprop<R: Real>(op: Op<R>, g: Tensor<R>, grads: &mut [Option<Tensor<R>>]) -> Result<()> {
    match op {
        Op::Leaf | Op::Param(_) => unreachable!("leaves handled by caller"),
        Op::Add(a, b) => {
            if b.is_some() {
                accumulate(grads, b, g.clone());
            }
            accumulate(grads, a, g);
        }
        Op::Sub(a, b) => {
            if b.is_some() {
                accumulate(grads, b, g.map(|v| -v));
            }
            accumulate(grads, a, g);
        }
        Op::Mul { a, b, av, bv } => {
            if a.is_some() {
                accumulate(grads, a, ops::mul_values(&g, &bv));
            }
            if b.is_some() {
                accumulate(grads, b, ops::mul_values(&g, &av));
            }
        }
        Op::AddTimeBroadcast { a, b, time } => {
            if b.is_some() {
                accumulate(grads, b, ops::sum_over_time(&g, time));
            }
            accumulate(grads, a, g);
        }
        Op::Scale(a, f) => accumulate(grads, a, g.map(|v| v * f)),
        Op::Unary {
            a,
            kind,
            input,
            output,
        } => accumulate(grads, a, ops::unary_backward(kind, &input, &output, &g)),
        Op::GatedTanh { a, input } => accumulate(grads, a, ops::gated_tanh_backward(&input, &g)),
        Op::Sum { a, shape } => {
            let v = g.item();
            accumulate(grads, a, Tensor::full(shape, v));
        }
        Op::Reshape { a, shape } => accumulate(grads, a, g.reshape(shape)?),
        Op::Conv1d { x, w, b, xv, wv, geom } => {
            let (gx, gw, gb) =
                conv::conv1d_backward(&xv, &wv, &g, &geom, x.is_some(), w.is_some(), b.is_some());
            if let Some(gx) = gx {
                accumulate(grads, x, gx);
            }
            if let Some(gw) = gw {
                accumulate(grads, w, gw);
            }
            if let Some(gb) = gb {
                accumulate(grads, b, gb);
            }
        }
        Op::ConvTranspose1d { x, w, b, xv, wv, geom } => {
            let (gx, gw, gb) = conv::conv_transpose1d_backward(
                &xv,
                &wv,
                &g,
                &geom,
                x.is_some(),
                w.is_some(),
                b.is_some(),
            );
            if let Some(gx) = gx {
                accumulate(grads, x, gx);
            }
            if let Some(gw) = gw {
                accumulate(grads, w, gw);
            }
            if let Some(gb) = gb {
                accumulate(grads, b, gb);
            }
        }
        Op::WeightNorm { v, g: gs, vv, gv } => {
            let (dv, dg) = ops::weight_norm_backward(&vv, &gv, &g);
            if v.is_some() {
                accumulate(grads, v, dv);
            }
            accumulate(grads, gs, dg);
        }
        Op::AvgPool1d {
            a,
            kernel,
            stride,
            in_shape,
        } => accumulate(grads, a, conv::avg_pool1d_backward(&g, &in_shape, kernel, stride)),
        Op::SelectChannel { a, index, in_shape } => {
            accumulate(grads, a, ops::select_channel_backward(&g, &index, &in_shape))
        }
        Op::GatherBatch { a, index, in_shape } => {
            accumulate(grads, a, ops::gather_batch_backward(&g, &index, &in_shape))
        }
        Op::NormalizeColumns {
            a,
            input,
            output,
            eps,
        } => accumulate(grads, a, ops::normalize_columns_backward(&input, &output, eps, &g)),
        Op::Custom { a, rule } => accumulate(grads, a, rule.backward(&g)),
    }
    Ok(())
}

/// Result of a backward sweep.
#[derive(Debug, Default, Clone)]
pub struct Gradients<R> {
    params: BTreeMap<ParamId, Tensor<R>>,
    leaves: HashMap<usize, Tensor<R>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of a trainable parameter; `None` when unreachable.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.params.get(&id)
    }

    /// Gradient of a [`Tape::leaf`] input.
    pub fn wrt(&self, var: &Var<'_, R>) -> Option<&Tensor<R>> {
        var.slot.and_then(|s| self.leaves.get(&s))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<R>)> {
        self.params.iter().map(|(&id, t)| (id, t))
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Scale every parameter gradient (used by test hooks).
    pub fn scale(&mut self, factor: R) {
        for t in self.params.values_mut() {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }
}

impl<'t, R: Real> Var<'t, R> {
    pub fn value(&self) -> &Tensor<R> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<R> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.slot.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, R> {
        self.tape.constant_arc(self.value.clone())
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> R {
        self.value.item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let loss = x.sum();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let loss = x.square().sum();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let loss = x.square().sum();
        assert!(tape.backward(&loss).is_ok());
        match tape.backward(&loss) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_value_accumulates() {
        // d/dx (x*x + x) = 2x + 1
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap());
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn constants_are_not_recorded() {
        let tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::full(vec![4], 2.0));
        let y = c.tanh().sum();
        assert!(!y.requires_grad());
        assert!(tape.is_empty());
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.param_count(), 0);
    }
}
