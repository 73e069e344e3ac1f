//! Dense NHWC tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once built: the payload lives behind an `Arc`, so
//! clones are cheap and values can be shared across threads. When an input
//! of an operation is tracked (it carries a tape node), the output records
//! the operation and its saved activations; `backward` on a scalar loss
//! then yields the gradient for every tracked leaf.
//!
//! Training runs in `f32`; gradient checking runs the same graph in `f64`
//! because central differences are unreliable in single precision.

mod autograd;
mod conv;
mod elementwise;
mod gradcheck;
mod linalg;
pub(crate) mod par;

pub use autograd::{backward, Gradients, Tape};
pub use conv::Padding;
pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, max_relative_error};

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use autograd::{Node, Op};

/// Scalar element type of a tensor. `f32` is the training dtype, `f64` the
/// shadow dtype for finite-difference verification.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + num_traits::FromPrimitive
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// Shorthand for converting literal constants into the active scalar type.
#[inline]
pub(crate) fn fl<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("constant representable in scalar type")
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op}: data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("{op}: pooling window {window} exceeds spatial extent {extent}")]
    WindowTooLarge {
        op: &'static str,
        window: usize,
        extent: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_node_id() -> u64 {
    NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense tensor in canonical N×H×W×C layout (row-major, channel fastest).
/// Lower ranks are used for token matrices and weight tables.
#[derive(Clone)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
    node: Option<Arc<Node<F>>>,
}

impl<F: Scalar> Tensor<F> {
    /// Build a tensor from a flat buffer; rejects shape/length disagreement
    /// and zero extents.
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidArgument {
                op: "from_vec",
                msg: format!("all extents must be >= 1, got {shape:?}"),
            });
        }
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: "from_vec",
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n: usize = shape.iter().product();
        assert!(
            shape.iter().all(|&e| e >= 1),
            "all extents must be >= 1, got {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
            node: None,
        }
    }

    pub fn scalar(value: F) -> Self {
        Self::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Mark as a differentiation leaf: subsequent ops involving this tensor
    /// are recorded and `backward` will produce its gradient.
    pub fn tracked(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: Some(Arc::new(Node::leaf())),
        }
    }

    /// Same data, no tape linkage. Used for inference and inside backward.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert the payload to another scalar type (drops tape linkage).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        let data = self
            .data
            .iter()
            .map(|&v| G::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap())
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub(crate) fn node(&self) -> Option<&Arc<Node<F>>> {
        self.node.as_ref()
    }

    pub(crate) fn node_id(&self) -> Option<u64> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Record `op` if any of its inputs is tracked; otherwise produce a
    /// plain tensor and drop the saved activations.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<F>, op: Op<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        #[cfg(debug_assertions)]
        {
            if op.inputs_finite() && !data.iter().all(|v| v.is_finite()) {
                panic!(
                    "{} produced a non-finite value from finite inputs",
                    op.name()
                );
            }
        }
        let node = if op.any_input_tracked() {
            Some(Arc::new(Node::new(op)))
        } else {
            None
        };
        Self {
            shape,
            data: Arc::new(data),
            node,
        }
    }

    pub(crate) fn shape_err(&self, op: &'static str, expected: impl fmt::Debug) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            expected: format!("{expected:?}"),
            got: format!("{:?}", self.shape),
        }
    }

    /// Extents of a rank-4 tensor as (n, h, w, c).
    pub(crate) fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(TensorError::InvalidArgument {
                op,
                msg: format!("expected a rank-4 NHWC tensor, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<&F> = self.data.iter().take(8).collect();
        write!(
            f,
            "Tensor<{}>{:?} {:?}{}",
            F::DTYPE,
            self.shape,
            preview,
            if self.numel() > 8 { "…" } else { "" }
        )
    }
}
