//! Recorded-tape reverse-mode differentiation over rank-2 tensors.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its operands. [`Graph::backward`] walks the tape in reverse, so a
//! graph evaluates and differentiates in a fixed, deterministic order.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    MeanRows(Var),
    MeanCols(Var),
    PadRows(Var),
    GridConv { input: Var, kernel: Var, grid_cols: usize },
    Gather(Var, Vec<Option<usize>>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-threaded computation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node on the tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zero-filled when the node did not influence the
    /// output.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        let n: usize = shape.iter().product();
        let data = self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        Tensor::new(shape, data).expect("gradient shape")
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn grid_neighbours(rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    // (kernel tap, output row, input row) over the 3x3 neighbourhood
    (0..rows * cols).flat_map(move |pos| {
        let (i, j) = (pos / cols, pos % cols);
        (0..9usize).filter_map(move |tap| {
            let di = tap as isize / 3 - 1;
            let dj = tap as isize % 3 - 1;
            let ii = i as isize + di;
            let jj = j as isize + dj;
            if ii < 0 || jj < 0 || ii >= rows as isize || jj >= cols as isize {
                None
            } else {
                Some((tap, pos, ii as usize * cols + jj as usize))
            }
        })
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Leaf node. Parameters and constants are both leaves; which leaves are
    /// trainable is the caller's bookkeeping.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av, bv));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let out = matmul_raw(av.data(), bv.data(), n, k, m);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let out = Tensor::matrix(c, r, transpose_raw(av.data(), r, c)).expect("transpose");
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b)))
    }

    /// `a + row`, broadcasting a `1 x c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv.data()[i % c])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `a * row` elementwise, broadcasting a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("mul_row", av, rv));
        }
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * rv.data()[i % c])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(shape_err("mul_scalar", self.value(a), sv));
        }
        let k = sv.item();
        let out = map(self.value(a), |x| x * k);
        Ok(self.push(out, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = map(self.value(a), |x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let out = map(self.value(a), |x| x + k);
        self.push(out, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Square root; the derivative is taken as zero at exactly zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(0.0).sqrt());
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same operand")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c.max(1)).take(r) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data).expect("softmax");
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), pv));
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).reshaped(vec![rows, cols])?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut out = vec![0.0; c];
        for row in av.data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(Tensor::row(out), Op::MeanRows(a))
    }

    /// Mean over columns: `r x c -> r x 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let out: Vec<f64> = av
            .data()
            .chunks(c)
            .map(|row| row.iter().sum::<f64>() / c as f64)
            .collect();
        let t = Tensor::matrix(r, 1, out).expect("mean_cols");
        self.push(t, Op::MeanCols(a))
    }

    /// Zero-pad `a` with extra trailing rows up to `rows`.
    pub fn pad_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let av = self.value(a);
        if rows < av.rows() {
            return Err(Error::Shape {
                op: "pad_rows",
                left: av.shape().to_vec(),
                right: vec![rows],
            });
        }
        let mut data = av.data().to_vec();
        data.resize(rows * av.cols(), 0.0);
        let out = Tensor::matrix(rows, av.cols(), data)?;
        Ok(self.push(out, Op::PadRows(a)))
    }

    /// Depthwise 3x3 convolution with zero boundary.
    ///
    /// `input` is `(grid_rows * grid_cols) x C` where row `i * grid_cols + j`
    /// holds grid cell `(i, j)`; `kernel` is `9 x C`, tap `(di + 1) * 3 +
    /// (dj + 1)` for offsets `di, dj` in `-1..=1`.
    pub fn grid_conv(&mut self, input: Var, kernel: Var, grid_cols: usize) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        if kv.rows() != 9 || kv.cols() != iv.cols() || grid_cols == 0 || iv.rows() % grid_cols != 0 {
            return Err(shape_err("grid_conv", iv, kv));
        }
        let c = iv.cols();
        let grid_rows = iv.rows() / grid_cols;
        let mut out = vec![0.0; iv.len()];
        for (tap, o, i) in grid_neighbours(grid_rows, grid_cols) {
            let krow = &kv.data()[tap * c..(tap + 1) * c];
            let irow = &iv.data()[i * c..(i + 1) * c];
            let orow = &mut out[o * c..(o + 1) * c];
            for ((ov, kw), x) in orow.iter_mut().zip(krow).zip(irow) {
                *ov += kw * x;
            }
        }
        let t = Tensor::new(iv.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::GridConv {
                input,
                kernel,
                grid_cols,
            },
        ))
    }

    /// `rows x cols` tensor whose entry `i` (row-major) is entry `index[i]` of
    /// `a`, or zero for `None`.
    pub fn gather(&mut self, a: Var, rows: usize, cols: usize, index: Vec<Option<usize>>) -> Result<Var> {
        let av = self.value(a);
        if index.len() != rows * cols || index.iter().flatten().any(|&i| i >= av.len()) {
            return Err(Error::Shape {
                op: "gather",
                left: av.shape().to_vec(),
                right: vec![rows, cols],
            });
        }
        let data = index.iter().map(|i| i.map_or(0.0, |i| av.data()[i])).collect();
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::Gather(a, index)))
    }

    /// Sliding time neighbourhoods of flattened windows.
    ///
    /// `a` is `B x (T * D)`; the result is `(B * T) x (K * D)` where row
    /// `b * T + t` holds timesteps `t + offsets[k]` of window `b`, zero
    /// outside `0..T`.
    pub fn unfold_time(&mut self, a: Var, steps: usize, offsets: &[isize]) -> Result<Var> {
        let av = self.value(a);
        if steps == 0 || !av.cols().is_multiple_of(steps) {
            return Err(Error::Shape {
                op: "unfold_time",
                left: av.shape().to_vec(),
                right: vec![av.rows(), steps],
            });
        }
        let (b, d) = (av.rows(), av.cols() / steps);
        let mut index = Vec::with_capacity(b * steps * offsets.len() * d);
        for w in 0..b {
            for t in 0..steps {
                for &o in offsets {
                    let src = t as isize + o;
                    for c in 0..d {
                        index.push(
                            (0..steps as isize)
                                .contains(&src)
                                .then(|| w * steps * d + src as usize * d + c),
                        );
                    }
                }
            }
        }
        self.gather(a, b * steps, offsets.len() * d, index)
    }

    /// Each row of `a` repeated `times` times in place.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let index = (0..r * times * c).map(|i| Some((i / c / times) * c + i % c)).collect();
        self.gather(a, r * times, c, index)
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: out.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.iter_mut().zip(g) {
                        *e += x;
                    }
                }
                slot @ None => *slot = Some(g.to_vec()),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let bt = transpose_raw(bv.data(), k, m);
                    let ga = matmul_raw(&g, &bt, n, m, k);
                    let at = transpose_raw(av.data(), n, k);
                    let gb = matmul_raw(&at, &g, k, n, m);
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Transpose(a) => {
                    // y is c x r
                    let ga = transpose_raw(&g, y.rows(), y.cols());
                    acc(&mut grads, *a, &ga);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b).data();
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g / b).collect();
                    let gb: Vec<f64> = g.iter().zip(y.data()).zip(bv).map(|((g, y), b)| -g * y / b).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::AddRow(a, row) => {
                    let c = y.cols();
                    let mut gr = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        gr[i % c] += gv;
                    }
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *row, &gr);
                }
                Op::MulRow(a, row) => {
                    let c = y.cols();
                    let (av, rv) = (self.value(*a).data(), self.value(*row).data());
                    let mut gr = vec![0.0; c];
                    let mut ga = vec![0.0; g.len()];
                    for (i, gv) in g.iter().enumerate() {
                        ga[i] = gv * rv[i % c];
                        gr[i % c] += gv * av[i];
                    }
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *row, &gr);
                }
                Op::MulScalar(a, s) => {
                    let k = self.value(*s).item();
                    let av = self.value(*a).data();
                    let ga: Vec<f64> = g.iter().map(|g| g * k).collect();
                    let gs: f64 = g.iter().zip(av).map(|(g, a)| g * a).sum();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *s, &[gs]);
                }
                Op::Scale(a, k) => {
                    let ga: Vec<f64> = g.iter().map(|g| g * k).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Offset(a) | Op::Reshape(a) => acc(&mut grads, *a, &g),
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(y.data()).map(|(g, e)| g * e).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Sqrt(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(y.data())
                        .map(|(g, s)| if *s > 0.0 { g * 0.5 / s } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::SoftmaxRows(a) => {
                    let c = y.cols();
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), out) in g.chunks(c).zip(y.data().chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                            *o = y * (g - dot);
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
                Op::ConcatCols(parts) => {
                    let total = y.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        let gp: Vec<f64> = g
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + pc].iter().copied())
                            .collect();
                        acc(&mut grads, *p, &gp);
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        acc(&mut grads, *p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, &vec![g[0]; n]);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let r = av.rows() as f64;
                    let ga: Vec<f64> = (0..av.len()).map(|i| g[i % av.cols()] / r).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::MeanCols(a) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let ga: Vec<f64> = (0..av.len()).map(|i| g[i / c] / c as f64).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::PadRows(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, &g[..n]);
                }
                Op::GridConv {
                    input,
                    kernel,
                    grid_cols,
                } => {
                    let (iv, kv) = (self.value(*input), self.value(*kernel));
                    let c = iv.cols();
                    let grid_rows = iv.rows() / grid_cols;
                    let mut gi = vec![0.0; iv.len()];
                    let mut gk = vec![0.0; kv.len()];
                    for (tap, o, i) in grid_neighbours(grid_rows, *grid_cols) {
                        for ch in 0..c {
                            let go = g[o * c + ch];
                            gi[i * c + ch] += kv.data()[tap * c + ch] * go;
                            gk[tap * c + ch] += iv.data()[i * c + ch] * go;
                        }
                    }
                    acc(&mut grads, *input, &gi);
                    acc(&mut grads, *kernel, &gk);
                }
                Op::Gather(a, index) => {
                    let mut ga = vec![0.0; self.value(*a).len()];
                    for (gi, i) in g.iter().zip(index) {
                        if let Some(i) = i {
                            ga[*i] += gi;
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes[..=output.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Tensor) {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = build(&mut g, x);
        let grads = g.backward(y).unwrap();
        let analytic = grads.tensor(x);
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.leaf(xp);
                let y = build(&mut g, x);
                g.scalar(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / fd.abs().max(a.abs()).max(1e-6);
            assert!(err < 1e-4, "entry {i}: analytic {a}, fd {fd}");
        }
    }

    #[test]
    fn unfold_time_layout_and_gradient() {
        let mut g = Graph::new();
        // two windows, T = 3, D = 2
        let x = g.leaf(Tensor::matrix(2, 6, (0..12).map(|v| v as f64).collect()).unwrap());
        let u = g.unfold_time(x, 3, &[-1, 0, 2]).unwrap();
        let uv = g.value(u);
        assert_eq!(uv.shape(), &[6, 6]);
        assert_eq!(uv.row_slice(0), &[0.0, 0.0, 0.0, 1.0, 4.0, 5.0]);
        assert_eq!(uv.row_slice(4), &[6.0, 7.0, 8.0, 9.0, 0.0, 0.0]);
        fd_check(
            |g, x| {
                let u = g.unfold_time(x, 3, &[-2, 0, 1]).unwrap();
                let s = g.square(u);
                g.sum(s)
            },
            Tensor::matrix(2, 6, (0..12).map(|v| (v as f64 * 0.3).sin()).collect()).unwrap(),
        );
    }

    #[test]
    fn repeat_rows_layout_and_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let r = g.repeat_rows(x, 3).unwrap();
        assert_eq!(
            g.value(r).data(),
            &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]
        );
        fd_check(
            |g, x| {
                let r = g.repeat_rows(x, 2).unwrap();
                let t = g.tanh(r);
                g.sum(t)
            },
            Tensor::matrix(2, 3, vec![0.1, -0.4, 0.7, 1.2, 0.0, -0.9]).unwrap(),
        );
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.0, 0.0]));
        let s = g.softmax_rows(x);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn tanh_derivative_at_zero_is_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let y = g.tanh(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut g = Graph::new();
        let data = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let a = g.leaf(data.clone());
        let t = g.tanh(a);
        let e = g.exp(t);
        let s = g.softmax_rows(e);
        let m = g.mul(s, a).unwrap();
        let y = g.sum(m);
        g.backward(y).unwrap();
        assert_eq!(g.value(a), &data);
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let w = Tensor::matrix(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]).unwrap();
        let bias = Tensor::row(vec![0.05, -0.1]);
        let build = move |g: &mut Graph, x: Var| {
            let w = g.constant(w.clone());
            let b = g.constant(bias.clone());
            let h = g.matmul(x, w).unwrap();
            let h = g.add_row(h, b).unwrap();
            let h = g.tanh(h);
            let sm = g.softmax_rows(h);
            let e = g.exp(h);
            let p = g.mul(sm, e).unwrap();
            let ht = g.transpose(h);
            let gram = g.matmul(h, ht).unwrap();
            let sq = g.square(gram);
            let sq = g.offset(sq, 1.0);
            let r = g.sqrt(sq);
            let a = g.mean(r);
            let b = g.mean_rows(p);
            let b = g.sum(b);
            let c = g.div(a, b).unwrap();
            let mc = g.mean_cols(p);
            let mc = g.sum(mc);
            let d = g.mul_scalar(mc, c).unwrap();
            g.scale(d, 2.0)
        };
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        fd_check(build, x);
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let kernel = Tensor::matrix(9, 2, (0..18).map(|i| (i as f64 * 0.7).cos() * 0.3).collect()).unwrap();
        let row = Tensor::row(vec![0.5, -1.5]);
        let build = move |g: &mut Graph, x: Var| {
            let k = g.constant(kernel.clone());
            let r = g.constant(row.clone());
            let p = g.pad_rows(x, 6).unwrap();
            let c = g.grid_conv(p, k, 3).unwrap();
            let c = g.tanh(c);
            let m = g.mul_row(c, r).unwrap();
            let f = g.reshape(m, 1, 12).unwrap();
            let f2 = g.reshape(x, 1, 10).unwrap();
            let cat = g.concat_cols(&[f, f2]).unwrap();
            let cat = g.square(cat);
            let stacked = g.concat_rows(&[x, x]).unwrap();
            let s2 = g.sub(stacked, stacked).unwrap();
            let s2 = g.sum(s2);
            let s = g.sum(cat);
            g.add(s, s2).unwrap()
        };
        let x = Tensor::matrix(5, 2, (0..10).map(|i| (i as f64 * 1.3).sin()).collect()).unwrap();
        fd_check(build, x);
    }

    #[test]
    fn grid_conv_identity_tap_is_identity() {
        let mut k = Tensor::zeros(9, 1);
        k.set(4, 0, 1.0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(6, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let kv = g.leaf(k);
        let y = g.grid_conv(x, kv, 3).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn grid_conv_respects_row_boundaries() {
        // shift-left tap (dj = +1) must not wrap from the end of one grid row
        // into the start of the next
        let mut k = Tensor::zeros(9, 1);
        k.set(5, 0, 1.0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(6, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let kv = g.leaf(k);
        let y = g.grid_conv(x, kv, 3).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0, 0.0, 5.0, 6.0, 0.0]);
    }
}
