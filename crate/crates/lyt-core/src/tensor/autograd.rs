//! Tape nodes and the reverse-mode backward pass.
//!
//! Every tracked operation stores its inputs (which carry their own nodes,
//! forming the graph) plus whatever activations its vjp needs. `backward`
//! linearizes the graph reachable from a scalar loss into a [`Tape`] whose
//! node order is topological, then walks it in reverse accumulating
//! gradients per node id. Gradient math never records onto the tape: vjp
//! implementations only build plain tensors.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::conv::{self, Padding};
use super::elementwise::{self, reduce_to_shape};
use super::linalg;
use super::{fl, fresh_node_id, Result, Scalar, Tensor, TensorError};

pub(crate) struct Node<F: Scalar> {
    pub id: u64,
    pub op: Op<F>,
}

impl<F: Scalar> Node<F> {
    pub fn leaf() -> Self {
        Self {
            id: fresh_node_id(),
            op: Op::Leaf,
        }
    }

    pub fn new(op: Op<F>) -> Self {
        Self {
            id: fresh_node_id(),
            op,
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf)
    }
}

/// Recorded operation together with saved activations. Saved output buffers
/// are raw `Arc<Vec<F>>` (not tensors) so a node never references itself.
pub(crate) enum Op<F: Scalar> {
    Leaf,
    Add(Tensor<F>, Tensor<F>),
    Sub(Tensor<F>, Tensor<F>),
    Mul(Tensor<F>, Tensor<F>),
    Div(Tensor<F>, Tensor<F>),
    Neg(Tensor<F>),
    Relu(Tensor<F>),
    Tanh(Tensor<F>, Arc<Vec<F>>),
    Abs(Tensor<F>),
    Ln(Tensor<F>),
    PowConst(Tensor<F>, F),
    ClampMin(Tensor<F>, F),
    Scale(Tensor<F>, F),
    AddConst(Tensor<F>),
    Huber(Tensor<F>, F),
    SumAll(Tensor<F>),
    MeanAll(Tensor<F>),
    Reshape(Tensor<F>),
    Transpose2d(Tensor<F>),
    SliceLast {
        input: Tensor<F>,
        start: usize,
        len: usize,
    },
    ConcatLast(Vec<Tensor<F>>),
    Matmul(Tensor<F>, Tensor<F>),
    Dense {
        input: Tensor<F>,
        weight: Tensor<F>,
        bias: Option<Tensor<F>>,
    },
    Softmax {
        input: Tensor<F>,
        axis: usize,
        output: Arc<Vec<F>>,
    },
    LayerNorm {
        input: Tensor<F>,
        gain: Tensor<F>,
        shift: Tensor<F>,
        normalized: Arc<Vec<F>>,
        inv_std: Arc<Vec<F>>,
    },
    Conv2d {
        input: Tensor<F>,
        weight: Tensor<F>,
        bias: Option<Tensor<F>>,
        stride: usize,
        padding: Padding,
    },
    DepthwiseConv2d {
        input: Tensor<F>,
        weight: Tensor<F>,
        bias: Option<Tensor<F>>,
        padding: Padding,
    },
    AvgPool {
        input: Tensor<F>,
        window: usize,
        stride: usize,
    },
    MaxPool {
        input: Tensor<F>,
        argmax: Arc<Vec<usize>>,
    },
    GlobalAvgPool(Tensor<F>),
    UpsampleBilinear {
        input: Tensor<F>,
        scale: usize,
    },
    ReflectPad {
        input: Tensor<F>,
        pad_bottom: usize,
        pad_right: usize,
    },
    CropHw {
        input: Tensor<F>,
    },
    SoftHistogram {
        input: Tensor<F>,
        bins: usize,
        bandwidth: F,
        output: Arc<Vec<F>>,
        channel_mass: Arc<Vec<F>>,
    },
}

impl<F: Scalar> Op<F> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Abs(..) => "abs",
            Op::Ln(..) => "ln",
            Op::PowConst(..) => "pow_const",
            Op::ClampMin(..) => "clamp_min",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Huber(..) => "huber",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::Reshape(..) => "reshape",
            Op::Transpose2d(..) => "transpose2d",
            Op::SliceLast { .. } => "slice_last",
            Op::ConcatLast(..) => "concat_last",
            Op::Matmul(..) => "matmul",
            Op::Dense { .. } => "dense",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv2d { .. } => "conv2d",
            Op::DepthwiseConv2d { .. } => "depthwise_conv2d",
            Op::AvgPool { .. } => "avg_pool",
            Op::MaxPool { .. } => "max_pool",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::UpsampleBilinear { .. } => "upsample_bilinear",
            Op::ReflectPad { .. } => "reflect_pad",
            Op::CropHw { .. } => "crop_hw",
            Op::SoftHistogram { .. } => "soft_histogram",
        }
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![a, b]
            }
            Op::Neg(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Ln(a)
            | Op::PowConst(a, _)
            | Op::ClampMin(a, _)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Huber(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Reshape(a)
            | Op::Transpose2d(a)
            | Op::Tanh(a, _)
            | Op::GlobalAvgPool(a) => vec![a],
            Op::SliceLast { input, .. }
            | Op::Softmax { input, .. }
            | Op::AvgPool { input, .. }
            | Op::MaxPool { input, .. }
            | Op::UpsampleBilinear { input, .. }
            | Op::ReflectPad { input, .. }
            | Op::CropHw { input, .. }
            | Op::SoftHistogram { input, .. } => vec![input],
            Op::ConcatLast(parts) => parts.iter().collect(),
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::LayerNorm {
                input, gain, shift, ..
            } => vec![input, gain, shift],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::DepthwiseConv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
        }
    }

    pub fn any_input_tracked(&self) -> bool {
        self.inputs().iter().any(|t| t.requires_grad())
    }

    #[cfg(debug_assertions)]
    pub fn inputs_finite(&self) -> bool {
        self.inputs().iter().all(|t| t.is_finite())
    }

    /// Gradients of this op's tracked inputs given the output gradient.
    /// Returns `(node_id, gradient)` pairs; untracked inputs are skipped.
    fn vjp(&self, g: &Tensor<F>) -> Result<Vec<(u64, Tensor<F>)>> {
        let mut out: Vec<(u64, Tensor<F>)> = Vec::new();
        let mut sink = |t: &Tensor<F>, grad: Tensor<F>| {
            if let Some(id) = t.node_id() {
                debug_assert!(!grad.requires_grad(), "vjp must not record onto the tape");
                debug_assert_eq!(grad.shape(), t.shape(), "vjp gradient shape mismatch");
                out.push((id, grad));
            }
        };
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                sink(a, reduce_to_shape(g, a.shape()));
                sink(b, reduce_to_shape(g, b.shape()));
            }
            Op::Sub(a, b) => {
                sink(a, reduce_to_shape(g, a.shape()));
                sink(b, reduce_to_shape(&elementwise::neg_plain(g), b.shape()));
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    let ga = elementwise::mul_bcast_plain(g, &b.detached())?;
                    sink(a, reduce_to_shape(&ga, a.shape()));
                }
                if b.requires_grad() {
                    let gb = elementwise::mul_bcast_plain(g, &a.detached())?;
                    sink(b, reduce_to_shape(&gb, b.shape()));
                }
            }
            Op::Div(a, b) => {
                if a.requires_grad() {
                    let ga = elementwise::div_bcast_plain(g, &b.detached())?;
                    sink(a, reduce_to_shape(&ga, a.shape()));
                }
                if b.requires_grad() {
                    // d(a/b)/db = -a / b^2
                    let num = elementwise::mul_bcast_plain(g, &a.detached())?;
                    let b2 = elementwise::mul_bcast_plain(&b.detached(), &b.detached())?;
                    let gb = elementwise::neg_plain(&elementwise::div_bcast_plain(&num, &b2)?);
                    sink(b, reduce_to_shape(&gb, b.shape()));
                }
            }
            Op::Neg(a) => sink(a, elementwise::neg_plain(g)),
            Op::Relu(a) => {
                let grad = elementwise::zip_plain(g, a, |gv, av| {
                    if av > F::zero() {
                        gv
                    } else {
                        F::zero()
                    }
                });
                sink(a, grad);
            }
            Op::Tanh(a, y) => {
                let data: Vec<F> = g
                    .data()
                    .iter()
                    .zip(y.iter())
                    .map(|(&gv, &yv)| gv * (F::one() - yv * yv))
                    .collect();
                sink(a, Tensor::plain(a.shape().to_vec(), data));
            }
            Op::Abs(a) => {
                let grad = elementwise::zip_plain(g, a, |gv, av| {
                    if av > F::zero() {
                        gv
                    } else if av < F::zero() {
                        -gv
                    } else {
                        F::zero()
                    }
                });
                sink(a, grad);
            }
            Op::Ln(a) => {
                let grad = elementwise::zip_plain(g, a, |gv, av| gv / av);
                sink(a, grad);
            }
            Op::PowConst(a, p) => {
                let pm1 = *p - F::one();
                let grad = elementwise::zip_plain(g, a, |gv, av| gv * *p * av.powf(pm1));
                sink(a, grad);
            }
            Op::ClampMin(a, c) => {
                let grad = elementwise::zip_plain(g, a, |gv, av| {
                    if av > *c {
                        gv
                    } else {
                        F::zero()
                    }
                });
                sink(a, grad);
            }
            Op::Scale(a, k) => {
                let data: Vec<F> = g.data().iter().map(|&v| v * *k).collect();
                sink(a, Tensor::plain(a.shape().to_vec(), data));
            }
            Op::AddConst(a) => sink(a, g.detached()),
            Op::Huber(a, beta) => {
                let grad = elementwise::zip_plain(g, a, |gv, d| {
                    if d.abs() < *beta {
                        gv * d / *beta
                    } else {
                        gv * d.signum()
                    }
                });
                sink(a, grad);
            }
            Op::SumAll(a) => {
                sink(a, Tensor::full(a.shape(), g.item()));
            }
            Op::MeanAll(a) => {
                let k = g.item() / fl::<F>(a.numel() as f64);
                sink(a, Tensor::full(a.shape(), k));
            }
            Op::Reshape(a) => {
                sink(a, Tensor::plain(a.shape().to_vec(), g.data().to_vec()));
            }
            Op::Transpose2d(a) => {
                let (rows, cols) = (g.shape()[0], g.shape()[1]);
                let data = linalg::transpose_raw(g.data(), rows, cols);
                sink(a, Tensor::plain(a.shape().to_vec(), data));
            }
            Op::SliceLast { input, start, len } => {
                let grad = linalg::slice_last_backward(g, input.shape(), *start, *len);
                sink(input, grad);
            }
            Op::ConcatLast(parts) => {
                let grads = linalg::concat_last_backward(g, parts);
                for (p, gp) in parts.iter().zip(grads) {
                    sink(p, gp);
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.requires_grad() {
                    let da = linalg::mm_bt(g.data(), b.data(), m, n, k);
                    sink(a, Tensor::plain(vec![m, k], da));
                }
                if b.requires_grad() {
                    let db = linalg::mm_at(a.data(), g.data(), m, k, n);
                    sink(b, Tensor::plain(vec![k, n], db));
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let din = weight.shape()[0];
                let dout = weight.shape()[1];
                let rows = input.numel() / din;
                if input.requires_grad() {
                    let dx = linalg::mm_bt(g.data(), weight.data(), rows, dout, din);
                    sink(input, Tensor::plain(input.shape().to_vec(), dx));
                }
                if weight.requires_grad() {
                    let dw = linalg::mm_at(input.data(), g.data(), rows, din, dout);
                    sink(weight, Tensor::plain(vec![din, dout], dw));
                }
                if let Some(b) = bias {
                    if b.requires_grad() {
                        let db = linalg::column_sums(g.data(), rows, dout);
                        sink(b, Tensor::plain(vec![dout], db));
                    }
                }
            }
            Op::Softmax {
                input,
                axis,
                output,
            } => {
                let grad = linalg::softmax_backward(g, output, input.shape(), *axis);
                sink(input, grad);
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                normalized,
                inv_std,
            } => {
                let (dx, dgain, dshift) = linalg::layer_norm_backward(
                    g,
                    normalized,
                    inv_std,
                    gain.data(),
                    input.shape(),
                );
                sink(input, Tensor::plain(input.shape().to_vec(), dx));
                sink(gain, Tensor::plain(gain.shape().to_vec(), dgain));
                sink(shift, Tensor::plain(shift.shape().to_vec(), dshift));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (dx, dw, db) = conv::conv2d_backward(
                    g,
                    input,
                    weight,
                    *stride,
                    *padding,
                    input.requires_grad(),
                    weight.requires_grad(),
                    bias.as_ref().is_some_and(|b| b.requires_grad()),
                )?;
                if let Some(dx) = dx {
                    sink(input, dx);
                }
                if let Some(dw) = dw {
                    sink(weight, dw);
                }
                if let (Some(b), Some(db)) = (bias.as_ref(), db) {
                    sink(b, db);
                }
            }
            Op::DepthwiseConv2d {
                input,
                weight,
                bias,
                padding,
            } => {
                let (dx, dw, db) = conv::depthwise_backward(
                    g,
                    input,
                    weight,
                    *padding,
                    input.requires_grad(),
                    weight.requires_grad(),
                    bias.as_ref().is_some_and(|b| b.requires_grad()),
                )?;
                if let Some(dx) = dx {
                    sink(input, dx);
                }
                if let Some(dw) = dw {
                    sink(weight, dw);
                }
                if let (Some(b), Some(db)) = (bias.as_ref(), db) {
                    sink(b, db);
                }
            }
            Op::AvgPool {
                input,
                window,
                stride,
            } => {
                sink(input, conv::avg_pool_backward(g, input.shape(), *window, *stride));
            }
            Op::MaxPool { input, argmax, .. } => {
                sink(input, conv::max_pool_backward(g, input.shape(), argmax));
            }
            Op::GlobalAvgPool(input) => {
                sink(input, conv::global_avg_pool_backward(g, input.shape()));
            }
            Op::UpsampleBilinear { input, scale } => {
                sink(input, conv::upsample_bilinear_backward(g, input.shape(), *scale));
            }
            Op::ReflectPad {
                input,
                pad_bottom,
                pad_right,
            } => {
                sink(
                    input,
                    conv::reflect_pad_backward(g, input.shape(), *pad_bottom, *pad_right),
                );
            }
            Op::CropHw { input, .. } => {
                sink(input, conv::crop_hw_backward(g, input.shape()));
            }
            Op::SoftHistogram {
                input,
                bins,
                bandwidth,
                output,
                channel_mass,
            } => {
                let dx = elementwise::soft_histogram_backward(
                    g,
                    input,
                    *bins,
                    *bandwidth,
                    output,
                    channel_mass,
                );
                sink(input, dx);
            }
        }
        Ok(out)
    }
}

/// Linearized computation graph: nodes in topological order (every node's
/// inputs appear before it).
pub struct Tape<F: Scalar> {
    nodes: Vec<Arc<Node<F>>>,
    root: u64,
}

impl<F: Scalar> Tape<F> {
    /// Linearize the graph reachable from `value`. Empty when the value is
    /// untracked.
    pub fn linearize(value: &Tensor<F>) -> Self {
        let Some(root) = value.node() else {
            return Self {
                nodes: Vec::new(),
                root: 0,
            };
        };
        let mut order: Vec<Arc<Node<F>>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative post-order DFS; the second visit of a frame emits it.
        let mut stack: Vec<(Arc<Node<F>>, bool)> = vec![(Arc::clone(root), false)];
        while let Some((node, emitted)) = stack.pop() {
            if emitted {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id) {
                continue;
            }
            stack.push((Arc::clone(&node), true));
            for input in node.op.inputs() {
                if let Some(parent) = input.node() {
                    if !visited.contains(&parent.id) {
                        stack.push((Arc::clone(parent), false));
                    }
                }
            }
        }
        Self {
            nodes: order,
            root: root.id,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True when every node's inputs precede it in the recorded order.
    pub fn is_topologically_sorted(&self) -> bool {
        let mut seen = HashSet::new();
        for node in &self.nodes {
            for input in node.op.inputs() {
                if let Some(pid) = input.node_id() {
                    if !seen.contains(&pid) {
                        return false;
                    }
                }
            }
            seen.insert(node.id);
        }
        true
    }

    fn run_backward(&self, seed: Tensor<F>) -> Result<Gradients<F>> {
        let mut grads: HashMap<u64, Tensor<F>> = HashMap::new();
        let mut leaves: HashMap<u64, Tensor<F>> = HashMap::new();
        grads.insert(self.root, seed);
        for node in self.nodes.iter().rev() {
            let Some(g) = grads.remove(&node.id) else {
                continue;
            };
            if node.is_leaf() {
                leaves.insert(node.id, g);
                continue;
            }
            for (id, gi) in node.op.vjp(&g)? {
                match grads.remove(&id) {
                    Some(existing) => {
                        grads.insert(id, elementwise::add_plain(&existing, &gi));
                    }
                    None => {
                        grads.insert(id, gi);
                    }
                }
            }
        }
        Ok(Gradients { map: leaves })
    }
}

/// Gradients of tracked leaves keyed by node id.
pub struct Gradients<F: Scalar> {
    map: HashMap<u64, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, leaf: &Tensor<F>) -> Option<&Tensor<F>> {
        leaf.node_id().and_then(|id| self.map.get(&id))
    }

    /// Gradient of `leaf`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Tensor<F>) -> Tensor<F> {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reverse-mode pass from a scalar loss to every tracked leaf.
pub fn backward<F: Scalar>(loss: &Tensor<F>) -> Result<Gradients<F>> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            numel: loss.numel(),
        });
    }
    let tape = Tape::linearize(loss);
    if tape.is_empty() {
        return Ok(Gradients {
            map: HashMap::new(),
        });
    }
    tape.run_backward(Tensor::ones(&[1]))
}

impl<F: Scalar> Tensor<F> {
    /// Internal constructor for gradient math: no recording, no checks.
    pub(crate) fn plain(shape: Vec<usize>, data: Vec<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }
}
