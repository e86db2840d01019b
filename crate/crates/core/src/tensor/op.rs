use crate::params::ParamId;
use crate::tensor::Var;

/// One recorded operation. Parents are tape indices; attributes capture the
/// context needed to replay the local gradient.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    /// `(rows, cols) + (cols,)` broadcast over rows.
    AddRow(Var, Var),
    /// `(rows, cols) * (cols,)` broadcast over rows.
    MulRow(Var, Var),
    /// `(rows, cols) + (rows,)` broadcast over columns.
    AddCol(Var, Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    /// Row-wise log-sum-exp with max subtraction; output `(rows, 1)`.
    LogSumExpRows(Var),
    /// Row-wise zero-mean unit-variance normalization (biased variance).
    StandardizeRows(Var, f64),
    L2NormalizeRows(Var),
    MeanAll(Var),
    SumAll(Var),
    RowSums(Var),
    MeanRows(Var),
    /// Concatenation along axis 0 (rows of matrices, channels of maps).
    ConcatAxis0(Vec<Var>),
    ConcatCols(Vec<Var>),
    NarrowCols {
        x: Var,
        start: usize,
        len: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    MaxPool2(Var),
    UpsampleNearest2(Var),
    AvgPoolBlocks {
        x: Var,
        bh: usize,
        bw: usize,
    },
    SpatialMean(Var),
    SpatialMax(Var),
    ChannelMean(Var),
    ChannelMax(Var),
    MulChannelGate(Var, Var),
    MulSpatialGate(Var, Var),
    /// `(3, H, W)` image to `(tokens, 3*p*p)` patch rows.
    Patchify {
        x: Var,
        patch: usize,
    },
    /// Bilinear gather for deformable convolution: features plus per-position
    /// per-tap offsets to im2col-style columns `(c*k*k, h*w)`.
    DeformGather {
        x: Var,
        offsets: Var,
        k: usize,
        pad: usize,
    },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf { .. } => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) | AddCol(a, b)
            | MulChannelGate(a, b) | MulSpatialGate(a, b) => vec![*a, *b],
            Matmul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a, _) | Relu(a) | Gelu(a) | Sigmoid(a) | Abs(a)
            | Transpose(a) | Reshape(a) | SoftmaxRows(a) | LogSumExpRows(a)
            | StandardizeRows(a, _) | L2NormalizeRows(a) | MeanAll(a) | SumAll(a) | RowSums(a)
            | MeanRows(a) | MaxPool2(a) | UpsampleNearest2(a) | SpatialMean(a) | SpatialMax(a)
            | ChannelMean(a) | ChannelMax(a) => vec![*a],
            ConcatAxis0(vs) | ConcatCols(vs) => vs.clone(),
            NarrowCols { x, .. } => vec![*x],
            Conv2d { x, w, b, .. } | DepthwiseConv2d { x, w, b, .. } => vec![*x, *w, *b],
            AvgPoolBlocks { x, .. } => vec![*x],
            Patchify { x, .. } => vec![*x],
            DeformGather { x, offsets, .. } => vec![*x, *offsets],
        }
    }
}
