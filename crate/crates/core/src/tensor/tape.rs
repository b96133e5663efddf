use rand::Rng;

use super::{axis_split, softmax_lanes, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    /// `a · bᵀ`
    MatMulNt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { a: Var, bias: Var, cols: usize },
    Scale { a: Var, factor: f64 },
    Exp { a: Var },
    Softmax { a: Var, outer: usize, len: usize, inner: usize },
    LogSoftmaxRows { a: Var, cols: usize },
    SelectRows { a: Var, keep: Vec<bool>, cols: usize },
    SliceCols { a: Var, start: usize, width: usize, cols: usize },
    ConcatCols { parts: Vec<(Var, usize)> },
    Conv1d { x: Var, kernel: Var, width: usize, pad: usize, cin: usize, cout: usize },
    Pelu { x: Var, slope: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, scale: Vec<f64> },
    MaskRows { x: Var, mask: Vec<bool>, cols: usize },
    MeanRows { x: Var, mask: Vec<bool>, cols: usize },
    Sum { a: Var },
    WeightedSum { a: Var, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records forward computations for a single reverse pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires grad and
    /// the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but yields zeros of length `len` for
    /// unreachable variables.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        check_finite(&value, "leaf")?;
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, m, k, n }, &[a, b], "matmul")
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{m}, {k}] x [{n}, {k2}]ᵀ")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bd[j * k..(j + 1) * k];
                out[i * n + j] = dot(ar, br);
            }
        }
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMulNt { a, b, m, k, n },
            &[a, b],
            "matmul_nt",
        )
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add { a, b }, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub { a, b }, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul { a, b }, "mul", |x, y| x * y)
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "add_row")?;
        if self.value(bias).len() != c {
            return Err(Error::shape(
                "add_row",
                format!("bias of length {} for {c} columns", self.value(bias).len()),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push(Tensor::new(vec![r, c], out)?, Op::AddRow { a, bias, cols: c }, &[a, bias], "add_row")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * factor).collect())?;
        self.push(value, Op::Scale { a, factor }, &[a], "scale")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.exp()).collect())?;
        self.push(value, Op::Exp { a }, &[a], "exp")
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.value(a).shape(), axis)?;
        let mut value = self.value(a).clone();
        softmax_lanes(self.value(a).data(), value.data_mut(), outer, len, inner, None);
        self.push(value, Op::Softmax { a, outer, len, inner }, &[a], "softmax")
    }

    /// Row-wise softmax in which columns with `key_mask[c] == false` get
    /// exactly zero weight.
    pub fn masked_softmax_rows(&mut self, a: Var, key_mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(a, "masked_softmax_rows")?;
        if key_mask.len() != c {
            return Err(Error::shape("masked_softmax_rows", "mask length differs from row length"));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        let mut value = self.value(a).clone();
        softmax_lanes(self.value(a).data(), value.data_mut(), r, c, 1, Some(key_mask));
        self.push(value, Op::Softmax { a, outer: r, len: c, inner: 1 }, &[a], "softmax")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).matrix_dims()?;
        let (r, c) = if self.value(a).rank() == 1 { (1, r) } else { (r, c) };
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        self.push(value, Op::LogSoftmaxRows { a, cols: c }, &[a], "log_softmax")
    }

    /// Keeps rows of `a` where `keep[r]`, replacing the others by the
    /// matching rows of the constant `fallback`.
    pub fn select_rows(&mut self, a: Var, keep: &[bool], fallback: &Tensor) -> Result<Var> {
        let (r, c) = self.dims2(a, "select_rows")?;
        if keep.len() != r || fallback.shape() != self.value(a).shape() {
            return Err(Error::shape("select_rows", "keep/fallback do not match input"));
        }
        let mut out = self.value(a).data().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out[i * c..(i + 1) * c].copy_from_slice(fallback.row(i));
            }
        }
        self.push(
            Tensor::new(vec![r, c], out)?,
            Op::SelectRows { a, keep: keep.to_vec(), cols: c },
            &[a],
            "select_rows",
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if start + width > c || width == 0 {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of {c}", start + width)));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + width]);
        }
        self.push(
            Tensor::new(vec![r, width], out)?,
            Op::SliceCols { a, start, width, cols: c },
            &[a],
            "slice_cols",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let (r, _) = self.dims2(*first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            widths.push((p, pc));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &(p, pc) in &widths {
                out.extend_from_slice(&self.value(p).data()[i * pc..(i + 1) * pc]);
            }
        }
        self.push(
            Tensor::new(vec![r, total], out)?,
            Op::ConcatCols { parts: widths },
            parts,
            "concat_cols",
        )
    }

    /// 1-D convolution over the sequence axis.
    ///
    /// `x: [n, c_in]`, `kernel: [width, c_in, c_out]`; positions outside the
    /// sequence read as zero. The output has `n + 2·padding − width + 1` rows.
    pub fn conv1d(&mut self, x: Var, kernel: Var, padding: usize) -> Result<Var> {
        let (n, cin) = self.value(x).matrix_dims()?;
        let ks = self.value(kernel).shape().to_vec();
        let [width, kin, cout] = ks[..] else {
            return Err(Error::shape("conv1d", format!("kernel must be rank 3, got {ks:?}")));
        };
        if width % 2 == 0 {
            return Err(Error::invalid(format!("conv1d kernel width must be odd, got {width}")));
        }
        if kin != cin {
            return Err(Error::shape("conv1d", format!("input has {cin} channels, kernel expects {kin}")));
        }
        if n + 2 * padding < width {
            return Err(Error::shape("conv1d", "sequence shorter than kernel"));
        }
        let out_len = n + 2 * padding - width + 1;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let mut out = vec![0.0; out_len * cout];
        for t in 0..out_len {
            let orow = &mut out[t * cout..(t + 1) * cout];
            for j in 0..width {
                let src = t + j;
                if src < padding || src - padding >= n {
                    continue;
                }
                let xr = &xd[(src - padding) * cin..(src - padding + 1) * cin];
                for (c, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &kd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                    for (o, &kv) in orow.iter_mut().zip(kr) {
                        *o += xv * kv;
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![out_len, cout], out)?,
            Op::Conv1d { x, kernel, width, pad: padding, cin, cout },
            &[x, kernel],
            "conv1d",
        )
    }

    /// Parametric ReLU: `x` where positive, `slope·x` elsewhere.
    pub fn pelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(Error::shape("pelu", "slope must hold a single value"));
        }
        let a = self.value(slope).data()[0];
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { a * v }).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Pelu { x, slope }, &[x, slope], "pelu")
    }

    /// Max-pool with window and stride 2 along the sequence (row) axis.
    ///
    /// Rows with `mask[r] == false` never win; a window with no valid row
    /// yields zeros and an invalid output row. Ties go to the lowest index.
    /// Returns the pooled values and the output row mask.
    pub fn maxpool1d(&mut self, x: Var, mask: Option<&[bool]>) -> Result<(Var, Vec<bool>)> {
        let (n, c) = self.value(x).matrix_dims()?;
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::shape("maxpool1d", "mask length differs from sequence length"));
            }
        }
        let valid = |r: usize| mask.map_or(true, |m| m[r]);
        let out_len = n.div_ceil(2);
        let xd = self.value(x).data();
        let mut out = vec![0.0; out_len * c];
        let mut argmax = vec![usize::MAX; out_len * c];
        let mut out_mask = vec![false; out_len];
        for w in 0..out_len {
            let rows: Vec<usize> = (2 * w..(2 * w + 2).min(n)).filter(|&r| valid(r)).collect();
            if rows.is_empty() {
                continue;
            }
            out_mask[w] = true;
            for ch in 0..c {
                let mut best = rows[0];
                for &r in &rows[1..] {
                    if xd[r * c + ch] > xd[best * c + ch] {
                        best = r;
                    }
                }
                out[w * c + ch] = xd[best * c + ch];
                argmax[w * c + ch] = best * c + ch;
            }
        }
        let shape = if self.value(x).rank() == 1 { vec![out_len] } else { vec![out_len, c] };
        let v = self.push(Tensor::new(shape, out)?, Op::MaxPool { x, argmax }, &[x], "maxpool1d")?;
        Ok((v, out_mask))
    }

    /// Inverted dropout; kept units are scaled by `1 / (1 − rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        let t = self.value(x);
        let keep = 1.0 - rate;
        let scale: Vec<f64> = (0..t.len())
            .map(|_| if rate == 0.0 || rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = t.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Dropout { x, scale }, &[x], "dropout")
    }

    /// Zeroes the rows where `mask[r] == false`.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(x, "mask_rows")?;
        if mask.len() != r {
            return Err(Error::shape("mask_rows", "mask length differs from row count"));
        }
        let mut out = self.value(x).data().to_vec();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                out[i * c..(i + 1) * c].fill(0.0);
            }
        }
        self.push(
            Tensor::new(vec![r, c], out)?,
            Op::MaskRows { x, mask: mask.to_vec(), cols: c },
            &[x],
            "mask_rows",
        )
    }

    /// Mean of the valid rows, shaped `[1, c]`.
    pub fn mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(x, "mean_rows")?;
        if mask.len() != r {
            return Err(Error::shape("mean_rows", "mask length differs from row count"));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in (0..r).filter(|&i| mask[i]) {
            for (o, v) in out.iter_mut().zip(&xd[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        self.push(
            Tensor::new(vec![1, c], out)?,
            Op::MeanRows { x, mask: mask.to_vec(), cols: c },
            &[x],
            "mean_rows",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a], "sum")
    }

    /// `Σ a ⊙ weights` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return Err(Error::shape("weighted_sum", "weights differ in length from input"));
        }
        let s = dot(self.value(a).data(), weights);
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum { a, weights: weights.to_vec() },
            &[a],
            "weighted_sum",
        )
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// May run once per recording; call [`Tape::reset`] before recording a
    /// new graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.nodes.is_empty() {
            return Err(Error::Empty("tape"));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr, |$buf:ident| $body:block) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    let mut slot = grads[v.0].take().unwrap_or_else(|| vec![0.0; len]);
                    {
                        let $buf: &mut Vec<f64> = &mut slot;
                        $body
                    }
                    grads[v.0] = Some(slot);
                }
            }};
        }
        let val = |v: Var| nodes[v.0].value.data();

        match op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc!(a, |ga| {
                    let bd = val(b);
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] += dot(&g[i * n..(i + 1) * n], &bd[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc!(b, |gb| {
                    let ad = val(a);
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                *o += av * gv;
                            }
                        }
                    }
                });
            }
            &Op::MatMulNt { a, b, m, k, n } => {
                acc!(a, |ga| {
                    let bd = val(b);
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            for (o, bv) in ga[i * k..(i + 1) * k].iter_mut().zip(&bd[j * k..(j + 1) * k]) {
                                *o += gv * bv;
                            }
                        }
                    }
                });
                acc!(b, |gb| {
                    let ad = val(a);
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            for (o, av) in gb[j * k..(j + 1) * k].iter_mut().zip(&ad[i * k..(i + 1) * k]) {
                                *o += gv * av;
                            }
                        }
                    }
                });
            }
            &Op::Add { a, b } => {
                acc!(a, |ga| { add_into(ga, g) });
                acc!(b, |gb| { add_into(gb, g) });
            }
            &Op::Sub { a, b } => {
                acc!(a, |ga| { add_into(ga, g) });
                acc!(b, |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            &Op::Mul { a, b } => {
                acc!(a, |ga| {
                    for ((o, v), y) in ga.iter_mut().zip(g).zip(val(b)) {
                        *o += v * y;
                    }
                });
                acc!(b, |gb| {
                    for ((o, v), x) in gb.iter_mut().zip(g).zip(val(a)) {
                        *o += v * x;
                    }
                });
            }
            &Op::AddRow { a, bias, cols } => {
                acc!(a, |ga| { add_into(ga, g) });
                acc!(bias, |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            &Op::Scale { a, factor } => {
                acc!(a, |ga| {
                    for (o, v) in ga.iter_mut().zip(g) {
                        *o += factor * v;
                    }
                });
            }
            &Op::Exp { a } => {
                acc!(a, |ga| {
                    for ((o, v), y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += v * y;
                    }
                });
            }
            &Op::Softmax { a, outer, len, inner } => {
                acc!(a, |ga| {
                    let y = out.data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * len * inner + k * inner + i;
                            let s: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..len {
                                ga[at(k)] += y[at(k)] * (g[at(k)] - s);
                            }
                        }
                    }
                });
            }
            &Op::LogSoftmaxRows { a, cols } => {
                acc!(a, |ga| {
                    let y = out.data();
                    for (r, gr) in g.chunks(cols).enumerate() {
                        let s: f64 = gr.iter().sum();
                        for j in 0..cols {
                            ga[r * cols + j] += gr[j] - y[r * cols + j].exp() * s;
                        }
                    }
                });
            }
            Op::SelectRows { a, keep, cols } => {
                acc!(*a, |ga| {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            add_into(&mut ga[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                });
            }
            &Op::SliceCols { a, start, width, cols } => {
                acc!(a, |ga| {
                    for (r, gr) in g.chunks(width).enumerate() {
                        add_into(&mut ga[r * cols + start..r * cols + start + width], gr);
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for &(p, pc) in parts {
                    acc!(p, |gp| {
                        for r in 0..rows {
                            add_into(&mut gp[r * pc..(r + 1) * pc], &g[r * total + offset..r * total + offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            &Op::Conv1d { x, kernel, width, pad, cin, cout } => {
                let n = nodes[x.0].value.len() / cin;
                let out_len = g.len() / cout;
                acc!(x, |gx| {
                    let kd = val(kernel);
                    for t in 0..out_len {
                        let gr = &g[t * cout..(t + 1) * cout];
                        for j in 0..width {
                            let src = t + j;
                            if src < pad || src - pad >= n {
                                continue;
                            }
                            let row = src - pad;
                            for c in 0..cin {
                                gx[row * cin + c] += dot(gr, &kd[(j * cin + c) * cout..(j * cin + c + 1) * cout]);
                            }
                        }
                    }
                });
                acc!(kernel, |gk| {
                    let xd = val(x);
                    for t in 0..out_len {
                        let gr = &g[t * cout..(t + 1) * cout];
                        for j in 0..width {
                            let src = t + j;
                            if src < pad || src - pad >= n {
                                continue;
                            }
                            let row = src - pad;
                            for c in 0..cin {
                                let xv = xd[row * cin + c];
                                if xv == 0.0 {
                                    continue;
                                }
                                for (o, gv) in gk[(j * cin + c) * cout..(j * cin + c + 1) * cout].iter_mut().zip(gr) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                });
            }
            &Op::Pelu { x, slope } => {
                let a = val(slope)[0];
                acc!(x, |gx| {
                    for ((o, v), xv) in gx.iter_mut().zip(g).zip(val(x)) {
                        *o += if *xv > 0.0 { *v } else { a * v };
                    }
                });
                acc!(slope, |gs| {
                    gs[0] += g.iter().zip(val(x)).filter(|(_, xv)| **xv <= 0.0).map(|(v, xv)| v * xv).sum::<f64>();
                });
            }
            Op::MaxPool { x, argmax } => {
                acc!(*x, |gx| {
                    for (gv, &src) in g.iter().zip(argmax) {
                        if src != usize::MAX {
                            gx[src] += gv;
                        }
                    }
                });
            }
            Op::Dropout { x, scale } => {
                acc!(*x, |gx| {
                    for ((o, v), s) in gx.iter_mut().zip(g).zip(scale) {
                        *o += v * s;
                    }
                });
            }
            Op::MaskRows { x, mask, cols } => {
                acc!(*x, |gx| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            add_into(&mut gx[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                });
            }
            Op::MeanRows { x, mask, cols } => {
                let count = mask.iter().filter(|&&m| m).count() as f64;
                acc!(*x, |gx| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for (o, v) in gx[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                                *o += v / count;
                            }
                        }
                    }
                });
            }
            &Op::Sum { a } => {
                acc!(a, |ga| { ga.iter_mut().for_each(|o| *o += g[0]) });
            }
            Op::WeightedSum { a, weights } => {
                acc!(*a, |ga| {
                    for (o, w) in ga.iter_mut().zip(weights) {
                        *o += g[0] * w;
                    }
                });
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Compares reverse-mode gradients with central differences.
    fn check_grad(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let eval = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true).unwrap()).collect();
            let loss = f(&mut tape, &vars).unwrap();
            (tape, vars, loss)
        };
        let (mut tape, vars, loss) = eval(&inputs);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        for (i, t) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[i], t.len());
            for j in 0..t.len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= h;
                let (tp, _, lp) = eval(&plus);
                let (tm, _, lm) = eval(&minus);
                let numeric = (tp.value(lp).data()[0] - tm.value(lm).data()[0]) / (2.0 * h);
                let a = analytic[j];
                assert!(
                    (a - numeric).abs() <= 1e-4 * a.abs().max(numeric.abs()) + 1e-8,
                    "input {i} element {j}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    fn weights(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn grad_matmul_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ins = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2]), random(&mut rng, &[2]), random(&mut rng, &[5, 4])];
        check_grad(ins, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.add_row(y, v[2])?;
            let z = t.matmul_nt(v[0], v[3])?;
            let s = t.weighted_sum(y, &weights(2, 6))?;
            let r = t.weighted_sum(z, &weights(3, 15))?;
            t.add(s, r)
        });
    }

    #[test]
    fn grad_elementwise_and_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ins = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4])];
        check_grad(ins, |t, v| {
            let p = t.mul(v[0], v[1])?;
            let q = t.sub(p, v[1])?;
            let e = t.exp(q)?;
            let s0 = t.softmax(e, 0)?;
            let s1 = t.masked_softmax_rows(q, &[true, false, true, true])?;
            let l = t.log_softmax_rows(v[0])?;
            let a = t.weighted_sum(s0, &weights(5, 12))?;
            let b = t.weighted_sum(s1, &weights(6, 12))?;
            let c = t.weighted_sum(l, &weights(7, 12))?;
            let ab = t.add(a, b)?;
            let abc = t.add(ab, c)?;
            t.scale(abc, 0.5)
        });
    }

    #[test]
    fn grad_rows_and_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ins = vec![random(&mut rng, &[4, 6])];
        let fallback = random(&mut rng, &[4, 6]);
        check_grad(ins, move |t, v| {
            let s = t.select_rows(v[0], &[true, false, true, false], &fallback)?;
            let a = t.slice_cols(s, 1, 3)?;
            let b = t.slice_cols(v[0], 4, 2)?;
            let c = t.concat_cols(&[a, b, a])?;
            let m = t.mask_rows(c, &[true, true, false, true])?;
            let mean = t.mean_rows(m, &[true, false, true, true])?;
            let x = t.weighted_sum(m, &weights(9, 32))?;
            let y = t.weighted_sum(mean, &weights(10, 8))?;
            t.add(x, y)
        });
    }

    #[test]
    fn grad_conv_pelu_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ins = vec![random(&mut rng, &[5, 3]), random(&mut rng, &[3, 3, 2]), Tensor::vector(vec![0.25]).unwrap()];
        check_grad(ins, |t, v| {
            let c = t.conv1d(v[0], v[1], 1)?;
            let a = t.pelu(c, v[2])?;
            let (p, mask) = t.maxpool1d(a, Some(&[true, true, true, false, true]))?;
            assert_eq!(mask, vec![true, true, true]);
            t.weighted_sum(p, &weights(13, 6))
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random(&mut rng, &[4, 2]);
        let k = random(&mut rng, &[3, 2, 3]);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x.clone()).unwrap(), tape.constant(k.clone()).unwrap());
        let y = tape.conv1d(xv, kv, 1).unwrap();
        let y = tape.value(y);
        assert_eq!(y.shape(), &[4, 3]);
        for t in 0..4 {
            for o in 0..3 {
                let mut want = 0.0;
                for j in 0..3 {
                    let src = t as isize + j as isize - 1;
                    if (0..4).contains(&src) {
                        for c in 0..2 {
                            want += x.get2(src as usize, c) * k.data()[(j * 2 + c) * 3 + o];
                        }
                    }
                }
                assert!((y.get2(t, o) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_winners() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::new(vec![5, 1], vec![1.0, 3.0, 2.0, 2.0, -1.0]).unwrap(), true)
            .unwrap();
        let (p, mask) = tape.maxpool1d(x, None).unwrap();
        assert_eq!(tape.value(p).data(), &[3.0, 2.0, -1.0]);
        assert_eq!(mask, vec![true; 3]);
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        // ties go to the first row of the window
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_skips_masked_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4, 1], vec![-5.0, 9.0, 1.0, 2.0]).unwrap()).unwrap();
        let (p, mask) = tape.maxpool1d(x, Some(&[true, false, false, false])).unwrap();
        assert_eq!(tape.value(p).data(), &[-5.0, 0.0]);
        assert_eq!(mask, vec![true, false]);
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[20_000], 1.0)).unwrap();
        let d = tape.dropout(x, 0.2, &mut rng).unwrap();
        let v = tape.value(d).data();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.25).abs() < 1e-15));
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
        let d0 = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert!(tape.value(d0).data().iter().all(|&e| e == 1.0));
    }

    #[test]
    fn backward_guards() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap(), true).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0]);
        assert!(matches!(tape.backward(s), Err(Error::BackwardTwice)));
        tape.reset();
        assert!(tape.is_empty());
        assert!(matches!(tape.backward(Var(0)), Err(Error::Empty(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]).unwrap(), true).unwrap();
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn rejects_non_finite_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(tape.exp(x), Err(Error::NonFinite("exp"))));
        assert!(tape.leaf(Tensor::scalar(f64::NAN), true).is_err());
    }
}
