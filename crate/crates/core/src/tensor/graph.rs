use super::kernels::{self, ConvGeom};
use super::{DType, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product for a user-defined operation: receives the input
/// values, the output value and the upstream gradient, and returns one
/// gradient buffer per input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow {
        x: Var,
        row: Var,
    },
    MulRow {
        x: Var,
        row: Var,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cin: usize,
        cout: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        geom: ConvGeom,
        c: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax {
        x: Var,
        scale: f64,
    },
    L2Normalize {
        x: Var,
        eps: f64,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GlobalAvgPool(Var),
    Max(Vec<Var>),
    Resize {
        x: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    BceLogits {
        logits: Var,
        target: Vec<f64>,
        bound: f64,
    },
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            AddRow { x, row } | MulRow { x, row } => vec![*x, *row],
            Scale(x, _)
            | Transpose(x)
            | Reshape(x)
            | Relu(x)
            | Sigmoid(x)
            | Tanh(x)
            | GlobalAvgPool(x)
            | Sum(x) => vec![*x],
            Softmax { x, .. } | L2Normalize { x, .. } | Slice { x, .. } | Resize { x } => {
                vec![*x]
            }
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Depthwise { x, w, .. } => vec![*x, *w],
            Concat { inputs, .. } | Max(inputs) | Custom { inputs, .. } => inputs.clone(),
            Gather { table, .. } => vec![*table],
            BceLogits { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of recorded operations.
///
/// Every forward op validates shapes and rejects non-finite results, naming
/// the producing operation. A graph supports exactly one backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    dtype: DType,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new(DType::F64)
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl Graph {
    pub fn new(dtype: DType) -> Self {
        Graph {
            nodes: Vec::new(),
            dtype,
            consumed: false,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. Its gradient is tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let requires_grad = tensor.requires_grad;
        let tensor = tensor.with_dtype(self.dtype);
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: &[usize],
        mut data: Vec<f64>,
        op: Op,
    ) -> Result<Var> {
        for v in &mut data {
            if !v.is_finite() {
                return Err(Error::NonFinite { op: op_name });
            }
            *v = self.dtype.round(*v);
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        let mut value = Tensor::new(shape, data)?;
        value.dtype = self.dtype;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.data(a).iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.zip_map(a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push("add", &shape, data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.zip_map(a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push("sub", &shape, data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.zip_map(a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push("mul", &shape, data, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.map(a, |x| x * s);
        let shape = self.shape(a).to_vec();
        self.push("scale", &shape, data, Op::Scale(a, s))
    }

    fn row_len(&self, op: &'static str, x: Var, row: Var) -> Result<usize> {
        let n = *self.shape(x).last().expect("non-empty shape");
        if self.value(row).numel() != n {
            return Err(Error::shape(
                op,
                format!(
                    "row of {:?} does not match last axis of {:?}",
                    self.shape(row),
                    self.shape(x)
                ),
            ));
        }
        Ok(n)
    }

    /// `x + row`, broadcasting `row` over every leading index of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.row_len("add_row", x, row)?;
        let r = self.data(row);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + r[i % n])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("add_row", &shape, data, Op::AddRow { x, row })
    }

    /// `x ⊙ row`, broadcasting `row` over every leading index of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.row_len("mul_row", x, row)?;
        let r = self.data(row);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * r[i % n])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_row", &shape, data, Op::MulRow { x, row })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        self.push("matmul", &[m, n], data, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expected a matrix, got {s:?}"),
            ));
        }
        let (m, n) = (s[0], s[1]);
        let data = kernels::transpose(self.data(a), m, n);
        self.push("transpose", &[n, m], data, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(a)),
            ));
        }
        let data = self.data(a).to_vec();
        self.push("reshape", shape, data, Op::Reshape(a))
    }

    /// Strided dilated cross-correlation with "same" padding
    /// `dilation * (k - 1) / 2`. `x: [H, W, Cin]`, `w: [k, k, Cin, Cout]`,
    /// `bias: [Cout]`. Output is `[ceil(H/stride), ceil(W/stride), Cout]`.
    pub fn conv2d_strided(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {sx:?}, kernel {sw:?}"),
            ));
        }
        let (h, wd, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[3]);
        if sw[1] != k || sw[2] != cin {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {sw:?} for input {sx:?}"),
            ));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel size {k} must be odd"
            )));
        }
        if dilation < 1 || stride < 1 {
            return Err(Error::InvalidArgument(format!(
                "conv2d dilation {dilation} and stride {stride} must be >= 1"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {cout} outputs", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeom {
            h,
            w: wd,
            k,
            stride,
            dilation,
        };
        let data = kernels::conv2d(
            self.data(x),
            self.data(w),
            bias.map(|b| self.data(b)),
            geom,
            cin,
            cout,
        );
        let shape = [geom.out_h(), geom.out_w(), cout];
        self.push(
            "conv2d",
            &shape,
            data,
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
                cin,
                cout,
            },
        )
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, dilation: usize) -> Result<Var> {
        self.conv2d_strided(x, w, bias, 1, dilation)
    }

    /// Per-channel dilated convolution. `w: [k, k, C]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sw[0] != sw[1] || sw[2] != sx[2] {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("input {sx:?}, kernel {sw:?}"),
            ));
        }
        let (h, wd, c, k) = (sx[0], sx[1], sx[2], sw[0]);
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "depthwise kernel size {k} must be odd"
            )));
        }
        if dilation < 1 {
            return Err(Error::InvalidArgument(format!(
                "dilation {dilation} must be >= 1"
            )));
        }
        let geom = ConvGeom {
            h,
            w: wd,
            k,
            stride: 1,
            dilation,
        };
        let data = kernels::depthwise(self.data(x), self.data(w), geom, c);
        self.push(
            "depthwise_conv2d",
            &[h, wd, c],
            data,
            Op::Depthwise { x, w, geom, c },
        )
    }

    /// Depthwise `k×k` stage followed by a `1×1` pointwise projection.
    /// `pointwise: [1, 1, Cin, Cout]`.
    pub fn depthwise_separable_conv(
        &mut self,
        x: Var,
        depthwise: Var,
        pointwise: Var,
        dilation: usize,
    ) -> Result<Var> {
        let d = self.depthwise_conv2d(x, depthwise, dilation)?;
        self.conv2d(d, pointwise, None, 1)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.map(x, |v| v.max(0.0));
        let shape = self.shape(x).to_vec();
        self.push("relu", &shape, data, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let data = self.map(x, kernels::sigmoid);
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", &shape, data, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let data = self.map(x, f64::tanh);
        let shape = self.shape(x).to_vec();
        self.push("tanh", &shape, data, Op::Tanh(x))
    }

    /// `Softmax(x / scale)` over all elements, max-subtracted.
    pub fn softmax(&mut self, x: Var, scale: f64) -> Result<Var> {
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "softmax scale {scale} must be positive"
            )));
        }
        let xs = self.data(x);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|v| ((v - max) / scale).exp()).collect();
        let z: f64 = e.iter().sum();
        let data = e.into_iter().map(|v| v / z).collect();
        let shape = self.shape(x).to_vec();
        self.push("softmax", &shape, data, Op::Softmax { x, scale })
    }

    /// `x / sqrt(|x|² + eps)` over all elements.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sq: f64 = self.data(x).iter().map(|v| v * v).sum();
        if sq + eps <= 0.0 {
            return Err(Error::InvalidArgument(
                "l2_normalize of a zero vector with eps = 0".into(),
            ));
        }
        let n = (sq + eps).sqrt();
        let data = self.map(x, |v| v / n);
        let shape = self.shape(x).to_vec();
        self.push("l2_normalize", &shape, data, Op::L2Normalize { x, eps })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            &shape,
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, inner) = outer_inner(&s, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push("slice", &shape, data, Op::Slice { x, axis, start })
    }

    /// `[H, W, C] -> [1, 1, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected [H, W, C], got {s:?}"),
            ));
        }
        let c = s[2];
        let n = (s[0] * s[1]) as f64;
        let mut data = vec![0.0; c];
        for row in self.data(x).chunks_exact(c) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= n;
        }
        self.push("global_avg_pool", &[1, 1, c], data, Op::GlobalAvgPool(x))
    }

    pub fn elementwise_max(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("max over zero tensors".into()))?;
        for &v in inputs {
            self.same_shape("elementwise_max", first, v)?;
        }
        let mut data = self.data(first).to_vec();
        for &v in &inputs[1..] {
            for (d, x) in data.iter_mut().zip(self.data(v)) {
                if *x > *d {
                    *d = *x;
                }
            }
        }
        let shape = self.shape(first).to_vec();
        self.push("elementwise_max", &shape, data, Op::Max(inputs.to_vec()))
    }

    /// Bilinear resize of `[H, W, C]` to `[oh, ow, C]` with half-pixel
    /// centres (`align_corners = false`).
    pub fn bilinear_upsample(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || oh == 0 || ow == 0 {
            return Err(Error::shape(
                "bilinear_upsample",
                format!("{s:?} -> {oh}x{ow}"),
            ));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let data = kernels::resize_bilinear(self.data(x), (h, w, c), (oh, ow));
        self.push("bilinear_upsample", &[oh, ow, c], data, Op::Resize { x })
    }

    /// Row lookup: `table: [V, E]` → `[ids.len(), E]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || ids.is_empty() {
            return Err(Error::shape(
                "gather_rows",
                format!("table {s:?}, {} ids", ids.len()),
            ));
        }
        let (v, e) = (s[0], s[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "gather_rows",
                format!("id {bad} out of range for {v} rows"),
            ));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(&src[i * e..(i + 1) * e]);
        }
        self.push(
            "gather_rows",
            &[ids.len(), e],
            data,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.data(x).iter().sum();
        self.push("sum", &[1], vec![s], Op::Sum(x))
    }

    /// Summed binary cross-entropy on logits. Probabilities are clamped to
    /// `[eps, 1 - eps]`, which is the same as clamping logits to
    /// `±ln((1 - eps) / eps)`; the loss is then evaluated in the stable form
    /// `max(z, 0) - z·g + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f64], eps: f64) -> Result<Var> {
        if target.len() != self.value(logits).numel() {
            return Err(Error::shape(
                "bce_with_logits",
                format!(
                    "{} targets for logits {:?}",
                    target.len(),
                    self.shape(logits)
                ),
            ));
        }
        if let Some(bad) = target.iter().find(|&&g| g != 0.0 && g != 1.0) {
            return Err(Error::Validation(format!(
                "ground truth must be binary, found {bad}"
            )));
        }
        let bound = ((1.0 - eps) / eps).ln();
        let loss = self
            .data(logits)
            .iter()
            .zip(target)
            .map(|(&z, &g)| {
                let z = z.clamp(-bound, bound);
                z.max(0.0) - z * g + (-z.abs()).exp().ln_1p()
            })
            .sum();
        self.push(
            "bce_with_logits",
            &[1],
            vec![loss],
            Op::BceLogits {
                logits,
                target: target.to_vec(),
                bound,
            },
        )
    }

    /// Record an operation with a caller-supplied forward value and VJP.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        output: Tensor,
        backward: BackwardFn,
    ) -> Result<Var> {
        let shape = output.shape().to_vec();
        self.push(
            name,
            &shape,
            output.into_data(),
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Reverse pass from a scalar `loss`. Populates gradients of every
    /// `requires_grad` node reachable from it; multiply-used values sum
    /// their contributions.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            for (input, ig) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&ig) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
            self.nodes[idx].value.set_grad(g);
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        use Op::*;
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Leaf => vec![],
            Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                vec![
                    (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
            AddRow { x, row } => {
                let n = self.value(*row).numel();
                let mut dr = vec![0.0; n];
                for chunk in g.chunks_exact(n) {
                    for (d, v) in dr.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                vec![(*x, g.to_vec()), (*row, dr)]
            }
            MulRow { x, row } => {
                let r = self.data(*row);
                let xv = self.data(*x);
                let n = r.len();
                let dx = g.iter().enumerate().map(|(i, v)| v * r[i % n]).collect();
                let mut dr = vec![0.0; n];
                for (i, (gv, xv)) in g.iter().zip(xv).enumerate() {
                    dr[i % n] += gv * xv;
                }
                vec![(*x, dx), (*row, dr)]
            }
            MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) =
                    kernels::matmul_backward(self.data(*a), self.data(*b), g, sa[0], sa[1], sb[1]);
                vec![(*a, da), (*b, db)]
            }
            Transpose(a) => {
                let s = self.shape(*a);
                vec![(*a, kernels::transpose(g, s[1], s[0]))]
            }
            Reshape(a) => vec![(*a, g.to_vec())],
            Conv2d {
                x,
                w,
                b,
                geom,
                cin,
                cout,
            } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.data(*x), self.data(*w), g, *geom, *cin, *cout);
                let mut out = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    out.push((*b, db));
                }
                out
            }
            Depthwise { x, w, geom, c } => {
                let (dx, dw) =
                    kernels::depthwise_backward(self.data(*x), self.data(*w), g, *geom, *c);
                vec![(*x, dx), (*w, dw)]
            }
            Relu(x) => {
                let xv = self.data(*x);
                vec![(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Sigmoid(x) => vec![(
                *x,
                g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )],
            Tanh(x) => vec![(
                *x,
                g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            )],
            Softmax { x, scale } => {
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                vec![(
                    *x,
                    g.iter()
                        .zip(y)
                        .map(|(g, y)| y * (g - dot) / scale)
                        .collect(),
                )]
            }
            L2Normalize { x, eps } => {
                let xv = self.data(*x);
                let sq: f64 = xv.iter().map(|v| v * v).sum();
                let n = (sq + eps).sqrt();
                let xg: f64 = xv.iter().zip(g).map(|(a, b)| a * b).sum();
                let n3 = n * n * n;
                vec![(
                    *x,
                    g.iter().zip(xv).map(|(g, x)| g / n - x * xg / n3).collect(),
                )]
            }
            Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, inner) = outer_inner(out_shape, *axis);
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|&v| {
                        let chunk = self.shape(v)[*axis] * inner;
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                        }
                        offset += chunk;
                        (v, d)
                    })
                    .collect()
            }
            Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, inner) = outer_inner(s, *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * s[*axis] + start) * inner;
                    d[dst..dst + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, d)]
            }
            GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let n = (s[0] * s[1]) as f64;
                let c = s[2];
                let d = (0..self.value(*x).numel()).map(|i| g[i % c] / n).collect();
                vec![(*x, d)]
            }
            Max(inputs) => {
                let mut ds: Vec<Vec<f64>> = vec![vec![0.0; y.len()]; inputs.len()];
                for (i, (&yv, &gv)) in y.iter().zip(g).enumerate() {
                    let winner = inputs
                        .iter()
                        .position(|&v| self.data(v)[i] == yv)
                        .expect("max is one of its inputs");
                    ds[winner][i] = gv;
                }
                inputs.iter().copied().zip(ds).collect()
            }
            Resize { x } => {
                let s = self.shape(*x);
                let o = node.value.shape();
                vec![(
                    *x,
                    kernels::resize_bilinear_backward(g, (s[0], s[1], s[2]), (o[0], o[1])),
                )]
            }
            Gather { table, ids } => {
                let e = self.shape(*table)[1];
                let mut d = vec![0.0; self.value(*table).numel()];
                for (r, &i) in ids.iter().enumerate() {
                    for (dv, gv) in d[i * e..(i + 1) * e].iter_mut().zip(&g[r * e..(r + 1) * e]) {
                        *dv += gv;
                    }
                }
                vec![(*table, d)]
            }
            Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            BceLogits {
                logits,
                target,
                bound,
            } => {
                let z = self.data(*logits);
                let d = z
                    .iter()
                    .zip(target)
                    .map(|(&z, &t)| {
                        if z > -bound && z < *bound {
                            g[0] * (kernels::sigmoid(z) - t)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*logits, d)]
            }
            Custom { inputs, backward } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = backward(&vals, &node.value, g);
                inputs.iter().copied().zip(ds).collect()
            }
        }
    }
}
