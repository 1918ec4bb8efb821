//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape: every operation computes its value eagerly and
//! records enough to push gradients backward later. Graphs are built per
//! batch, consumed by one `backward` call, and dropped. The op set is
//! exactly what the fixed dispatch architectures need; there is no
//! broadcasting machinery beyond the row/column cases used by those
//! networks.
//!
//! Batches are stacked along rows. Constants (loads, masks, adjacency)
//! enter as payloads or non-trainable leaves; only leaves created with
//! [`Graph::param`] receive gradients.

use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(usize);

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    /// Per-block left-multiplication by a constant square matrix: the rows
    /// of the operand are consumed `block` at a time.
    BlockMatMulConst { lhs: Mat, x: Tensor },
    /// Per-block row gather: for each block of `block_rows` input rows,
    /// select `idx` rows into the output.
    GatherRows { x: Tensor, idx: Vec<usize>, block_rows: usize },
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    /// (m x n) + (1 x n), bias broadcast down rows.
    AddRow(Tensor, Tensor),
    /// (m x n) + (m x 1), column broadcast across columns.
    AddColBroadcast(Tensor, Tensor),
    /// (m x 1) outer product with a constant row -> (m x n).
    ColTimesConstRow { col: Tensor, row: Vec<f64> },
    Scale(Tensor, f64),
    AddScalar(Tensor),
    MulConstRow(Tensor, Vec<f64>),
    AddConstRow(Tensor),
    MulConstMat(Tensor, Mat),
    AddConstMat(Tensor),
    Relu(Tensor),
    Silu(Tensor),
    Sigmoid(Tensor),
    Sin(Tensor),
    Cos(Tensor),
    SumAll(Tensor),
    MeanAll(Tensor),
    SumRows(Tensor),
    MeanRows(Tensor),
    /// Population variance over each row.
    VarRows(Tensor),
    LayerNorm { x: Tensor, gamma: Tensor, beta: Tensor, eps: f64 },
    ConcatCols(Tensor, Tensor),
    Reshape(Tensor),
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Tensor {
        self.nodes.push(Node { value, grad: None, op });
        Tensor(self.nodes.len() - 1)
    }

    pub fn value(&self, t: Tensor) -> &Mat {
        &self.nodes[t.0].value
    }

    pub fn scalar_value(&self, t: Tensor) -> f64 {
        let v = self.value(t);
        assert!(v.rows == 1 && v.cols == 1, "tensor is not a scalar");
        v.data[0]
    }

    /// Gradient of the last `backward` target with respect to `t`.
    pub fn grad(&self, t: Tensor) -> &Mat {
        self.nodes[t.0]
            .grad
            .as_ref()
            .expect("gradient not computed; call backward first")
    }

    fn shape(&self, t: Tensor) -> (usize, usize) {
        let v = &self.nodes[t.0].value;
        (v.rows, v.cols)
    }

    /// Trainable leaf. Identical to [`Graph::constant`] mechanically; the
    /// split documents intent at call sites, and only params are queried
    /// for gradients.
    pub fn param(&mut self, value: Mat) -> Tensor {
        self.push(value, Op::Leaf)
    }

    /// Non-trainable leaf (data, masks, precomputed embeddings).
    pub fn constant(&mut self, value: Mat) -> Tensor {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a, b))
    }

    /// Apply `lhs` (square, block x block) to each consecutive block of rows.
    pub fn block_matmul_const(&mut self, lhs: Mat, x: Tensor) -> Tensor {
        assert_eq!(lhs.rows, lhs.cols, "block matrix must be square");
        let (rows, cols) = self.shape(x);
        let block = lhs.rows;
        assert_eq!(rows % block, 0, "rows not a multiple of block size");
        let xv = &self.nodes[x.0].value;
        let mut out = Mat::zeros(rows, cols);
        for start in (0..rows).step_by(block) {
            for i in 0..block {
                let orow = &mut out.data[(start + i) * cols..(start + i + 1) * cols];
                for k in 0..block {
                    let w = lhs.at(i, k);
                    if w == 0.0 {
                        continue;
                    }
                    let xrow = &xv.data[(start + k) * cols..(start + k + 1) * cols];
                    for (o, &v) in orow.iter_mut().zip(xrow) {
                        *o += w * v;
                    }
                }
            }
        }
        self.push(out, Op::BlockMatMulConst { lhs, x })
    }

    /// For each block of `block_rows` rows, gather the rows listed in `idx`.
    pub fn gather_rows(&mut self, x: Tensor, idx: Vec<usize>, block_rows: usize) -> Tensor {
        let (rows, cols) = self.shape(x);
        assert_eq!(rows % block_rows, 0);
        assert!(idx.iter().all(|&i| i < block_rows));
        let n_blocks = rows / block_rows;
        let xv = &self.nodes[x.0].value;
        let mut out = Mat::zeros(n_blocks * idx.len(), cols);
        for b in 0..n_blocks {
            for (j, &i) in idx.iter().enumerate() {
                let src = (b * block_rows + i) * cols;
                let dst = (b * idx.len() + j) * cols;
                out.data[dst..dst + cols].copy_from_slice(&xv.data[src..src + cols]);
            }
        }
        self.push(out, Op::GatherRows { x, idx, block_rows })
    }

    fn zip_elementwise(&mut self, a: Tensor, b: Tensor, f: impl Fn(f64, f64) -> f64, op: Op) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data: Vec<f64> = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Mat::from_vec(av.rows, av.cols, data);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Tensor, bias: Tensor) -> Tensor {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(bias), (1, cols), "bias must be 1 x cols");
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let mut value = av.clone();
        for r in 0..rows {
            for (v, &b) in value.row_mut(r).iter_mut().zip(&bv.data) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow(a, bias))
    }

    pub fn add_col_broadcast(&mut self, a: Tensor, col: Tensor) -> Tensor {
        let (rows, _cols) = self.shape(a);
        assert_eq!(self.shape(col), (rows, 1), "column must be rows x 1");
        let (av, cv) = (&self.nodes[a.0].value, &self.nodes[col.0].value);
        let mut value = av.clone();
        for r in 0..rows {
            let c = cv.data[r];
            for v in value.row_mut(r) {
                *v += c;
            }
        }
        self.push(value, Op::AddColBroadcast(a, col))
    }

    pub fn col_times_const_row(&mut self, col: Tensor, row: Vec<f64>) -> Tensor {
        let (rows, cols) = self.shape(col);
        assert_eq!(cols, 1, "operand must be a column");
        let cv = &self.nodes[col.0].value;
        let mut value = Mat::zeros(rows, row.len());
        for r in 0..rows {
            let c = cv.data[r];
            for (v, &w) in value.row_mut(r).iter_mut().zip(&row) {
                *v = c * w;
            }
        }
        self.push(value, Op::ColTimesConstRow { col, row })
    }

    pub fn scale(&mut self, a: Tensor, k: f64) -> Tensor {
        let av = &self.nodes[a.0].value;
        let value = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&x| x * k).collect());
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Tensor, k: f64) -> Tensor {
        let av = &self.nodes[a.0].value;
        let value = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&x| x + k).collect());
        self.push(value, Op::AddScalar(a))
    }

    pub fn mul_const_row(&mut self, a: Tensor, row: Vec<f64>) -> Tensor {
        let (rows, cols) = self.shape(a);
        assert_eq!(row.len(), cols);
        let av = &self.nodes[a.0].value;
        let mut value = av.clone();
        for r in 0..rows {
            for (v, &w) in value.row_mut(r).iter_mut().zip(&row) {
                *v *= w;
            }
        }
        self.push(value, Op::MulConstRow(a, row))
    }

    pub fn add_const_row(&mut self, a: Tensor, row: Vec<f64>) -> Tensor {
        let (rows, cols) = self.shape(a);
        assert_eq!(row.len(), cols);
        let av = &self.nodes[a.0].value;
        let mut value = av.clone();
        for r in 0..rows {
            for (v, &w) in value.row_mut(r).iter_mut().zip(&row) {
                *v += w;
            }
        }
        self.push(value, Op::AddConstRow(a))
    }

    pub fn mul_const_mat(&mut self, a: Tensor, m: Mat) -> Tensor {
        assert_eq!(self.shape(a), (m.rows, m.cols));
        let av = &self.nodes[a.0].value;
        let data: Vec<f64> = av.data.iter().zip(&m.data).map(|(&x, &y)| x * y).collect();
        let value = Mat::from_vec(av.rows, av.cols, data);
        self.push(value, Op::MulConstMat(a, m))
    }

    pub fn add_const_mat(&mut self, a: Tensor, m: &Mat) -> Tensor {
        assert_eq!(self.shape(a), (m.rows, m.cols));
        let av = &self.nodes[a.0].value;
        let data: Vec<f64> = av.data.iter().zip(&m.data).map(|(&x, &y)| x + y).collect();
        let value = Mat::from_vec(av.rows, av.cols, data);
        self.push(value, Op::AddConstMat(a))
    }

    fn map_elementwise(&mut self, a: Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let av = &self.nodes[a.0].value;
        let value = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&x| f(x)).collect());
        self.push(value, op)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.map_elementwise(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn silu(&mut self, a: Tensor) -> Tensor {
        self.map_elementwise(a, |x| x / (1.0 + (-x).exp()), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.map_elementwise(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn sin(&mut self, a: Tensor) -> Tensor {
        self.map_elementwise(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Tensor) -> Tensor {
        self.map_elementwise(a, f64::cos, Op::Cos(a))
    }

    pub fn sum_all(&mut self, a: Tensor) -> Tensor {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Tensor) -> Tensor {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.data.len() as f64;
        self.push(Mat::from_vec(1, 1, vec![s]), Op::MeanAll(a))
    }

    pub fn sum_rows(&mut self, a: Tensor) -> Tensor {
        let v = &self.nodes[a.0].value;
        let data: Vec<f64> = (0..v.rows).map(|r| v.row(r).iter().sum()).collect();
        self.push(Mat::col_vector(data), Op::SumRows(a))
    }

    pub fn mean_rows(&mut self, a: Tensor) -> Tensor {
        let v = &self.nodes[a.0].value;
        let n = v.cols as f64;
        let data: Vec<f64> = (0..v.rows).map(|r| v.row(r).iter().sum::<f64>() / n).collect();
        self.push(Mat::col_vector(data), Op::MeanRows(a))
    }

    pub fn var_rows(&mut self, a: Tensor) -> Tensor {
        let v = &self.nodes[a.0].value;
        let n = v.cols as f64;
        let data: Vec<f64> = (0..v.rows)
            .map(|r| {
                let row = v.row(r);
                let mean = row.iter().sum::<f64>() / n;
                row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n
            })
            .collect();
        self.push(Mat::col_vector(data), Op::VarRows(a))
    }

    /// Per-row layer normalization with learned affine: gamma, beta are 1 x n.
    pub fn layer_norm(&mut self, x: Tensor, gamma: Tensor, beta: Tensor, eps: f64) -> Tensor {
        let (rows, cols) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, cols));
        assert_eq!(self.shape(beta), (1, cols));
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = Mat::zeros(rows, cols);
        let n = cols as f64;
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                out.set(r, c, (row[c] - mean) * inv_std * gv.data[c] + bv.data[c]);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "concat_cols row mismatch");
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Mat::zeros(ra, ca + cb);
        for r in 0..ra {
            out.row_mut(r)[..ca].copy_from_slice(av.row(r));
            out.row_mut(r)[ca..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn reshape(&mut self, a: Tensor, rows: usize, cols: usize) -> Tensor {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.data.len(), rows * cols, "reshape element count mismatch");
        let value = Mat::from_vec(rows, cols, v.data.clone());
        self.push(value, Op::Reshape(a))
    }

    fn grad_buf(&mut self, t: Tensor) -> &mut Mat {
        if self.nodes[t.0].grad.is_none() {
            let (r, c) = self.shape(t);
            self.nodes[t.0].grad = Some(Mat::zeros(r, c));
        }
        self.nodes[t.0].grad.as_mut().unwrap()
    }

    fn add_grad(&mut self, t: Tensor, g: &Mat) {
        let buf = self.grad_buf(t);
        for (b, &v) in buf.data.iter_mut().zip(&g.data) {
            *b += v;
        }
    }

    /// Reverse pass from a scalar target. Every node reachable from the
    /// target gets a gradient buffer; query with [`Graph::grad`].
    pub fn backward(&mut self, target: Tensor) {
        {
            let v = &self.nodes[target.0].value;
            assert!(v.rows == 1 && v.cols == 1, "backward target must be scalar");
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[target.0].grad = Some(Mat::from_vec(1, 1, vec![1.0]));

        for i in (0..=target.0).rev() {
            let out_grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            // Put it back for callers, then dispatch on op.
            self.nodes[i].grad = Some(out_grad.clone());
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = out_grad.matmul_transpose_other(&self.nodes[b.0].value);
                    let db = self.nodes[a.0].value.matmul_transpose_self(&out_grad);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::BlockMatMulConst { lhs, x } => {
                    let x = *x;
                    let block = lhs.rows;
                    let cols = out_grad.cols;
                    let mut dx = Mat::zeros(out_grad.rows, cols);
                    // dX_block += lhs^T * G_block
                    for start in (0..out_grad.rows).step_by(block) {
                        for i in 0..block {
                            for k in 0..block {
                                let w = lhs.at(k, i);
                                if w == 0.0 {
                                    continue;
                                }
                                let gs = (start + k) * cols;
                                let ds = (start + i) * cols;
                                for c in 0..cols {
                                    dx.data[ds + c] += w * out_grad.data[gs + c];
                                }
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                }
                Op::GatherRows { x, idx, block_rows } => {
                    let x = *x;
                    let block_rows = *block_rows;
                    let idx = idx.clone();
                    let cols = out_grad.cols;
                    let (xr, _) = self.shape(x);
                    let mut dx = Mat::zeros(xr, cols);
                    let n_blocks = xr / block_rows;
                    for b in 0..n_blocks {
                        for (j, &i) in idx.iter().enumerate() {
                            let src = (b * idx.len() + j) * cols;
                            let dst = (b * block_rows + i) * cols;
                            for c in 0..cols {
                                dx.data[dst + c] += out_grad.data[src + c];
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, &out_grad);
                    self.add_grad(b, &out_grad);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, &out_grad);
                    let neg = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().map(|&g| -g).collect(),
                    );
                    self.add_grad(b, &neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().zip(&bv.data).map(|(&g, &v)| g * v).collect(),
                    );
                    let db = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().zip(&av.data).map(|(&g, &v)| g * v).collect(),
                    );
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::AddRow(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    self.add_grad(a, &out_grad);
                    let mut db = Mat::zeros(1, out_grad.cols);
                    for r in 0..out_grad.rows {
                        for (d, &g) in db.data.iter_mut().zip(out_grad.row(r)) {
                            *d += g;
                        }
                    }
                    self.add_grad(bias, &db);
                }
                Op::AddColBroadcast(a, col) => {
                    let (a, col) = (*a, *col);
                    self.add_grad(a, &out_grad);
                    let dc: Vec<f64> = (0..out_grad.rows).map(|r| out_grad.row(r).iter().sum()).collect();
                    self.add_grad(col, &Mat::col_vector(dc));
                }
                Op::ColTimesConstRow { col, row } => {
                    let col = *col;
                    let row = row.clone();
                    let dc: Vec<f64> = (0..out_grad.rows)
                        .map(|r| out_grad.row(r).iter().zip(&row).map(|(&g, &w)| g * w).sum())
                        .collect();
                    self.add_grad(col, &Mat::col_vector(dc));
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().map(|&g| g * k).collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::AddScalar(a) | Op::AddConstMat(a) => {
                    let a = *a;
                    self.add_grad(a, &out_grad);
                }
                Op::MulConstRow(a, row) => {
                    let a = *a;
                    let row = row.clone();
                    let mut da = out_grad.clone();
                    for r in 0..da.rows {
                        for (d, &w) in da.row_mut(r).iter_mut().zip(&row) {
                            *d *= w;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::AddConstRow(a) => {
                    let a = *a;
                    self.add_grad(a, &out_grad);
                }
                Op::MulConstMat(a, m) => {
                    let a = *a;
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().zip(&m.data).map(|(&g, &w)| g * w).collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let av = &self.nodes[a.0].value;
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad
                            .data
                            .iter()
                            .zip(&av.data)
                            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                            .collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::Silu(a) => {
                    let a = *a;
                    let av = &self.nodes[a.0].value;
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad
                            .data
                            .iter()
                            .zip(&av.data)
                            .map(|(&g, &x)| {
                                let s = 1.0 / (1.0 + (-x).exp());
                                g * s * (1.0 + x * (1.0 - s))
                            })
                            .collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let ov = &self.nodes[i].value;
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad
                            .data
                            .iter()
                            .zip(&ov.data)
                            .map(|(&g, &s)| g * s * (1.0 - s))
                            .collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::Sin(a) => {
                    let a = *a;
                    let av = &self.nodes[a.0].value;
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().zip(&av.data).map(|(&g, &x)| g * x.cos()).collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::Cos(a) => {
                    let a = *a;
                    let av = &self.nodes[a.0].value;
                    let da = Mat::from_vec(
                        out_grad.rows,
                        out_grad.cols,
                        out_grad.data.iter().zip(&av.data).map(|(&g, &x)| -g * x.sin()).collect(),
                    );
                    self.add_grad(a, &da);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let g = out_grad.data[0];
                    let (r, c) = self.shape(a);
                    let da = Mat::from_vec(r, c, vec![g; r * c]);
                    self.add_grad(a, &da);
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let (r, c) = self.shape(a);
                    let g = out_grad.data[0] / (r * c) as f64;
                    let da = Mat::from_vec(r, c, vec![g; r * c]);
                    self.add_grad(a, &da);
                }
                Op::SumRows(a) => {
                    let a = *a;
                    let (r, c) = self.shape(a);
                    let mut da = Mat::zeros(r, c);
                    for row in 0..r {
                        let g = out_grad.data[row];
                        for d in da.row_mut(row) {
                            *d = g;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::MeanRows(a) => {
                    let a = *a;
                    let (r, c) = self.shape(a);
                    let mut da = Mat::zeros(r, c);
                    for row in 0..r {
                        let g = out_grad.data[row] / c as f64;
                        for d in da.row_mut(row) {
                            *d = g;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::VarRows(a) => {
                    let a = *a;
                    let av = self.nodes[a.0].value.clone();
                    let (r, c) = (av.rows, av.cols);
                    let n = c as f64;
                    let mut da = Mat::zeros(r, c);
                    for row in 0..r {
                        let g = out_grad.data[row];
                        let mean = av.row(row).iter().sum::<f64>() / n;
                        for (d, &x) in da.row_mut(row).iter_mut().zip(av.row(row)) {
                            *d = g * 2.0 * (x - mean) / n;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                    let xv = self.nodes[x.0].value.clone();
                    let gv = self.nodes[gamma.0].value.clone();
                    let (r, c) = (xv.rows, xv.cols);
                    let n = c as f64;
                    let mut dx = Mat::zeros(r, c);
                    let mut dgamma = Mat::zeros(1, c);
                    let mut dbeta = Mat::zeros(1, c);
                    for row in 0..r {
                        let xr = xv.row(row);
                        let gr = out_grad.row(row);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        // d(normalized)/dx via the standard layer-norm backward
                        let xhat: Vec<f64> = xr.iter().map(|&v| (v - mean) * inv_std).collect();
                        let gy: Vec<f64> = gr.iter().zip(&gv.data).map(|(&g, &w)| g * w).collect();
                        let sum_gy: f64 = gy.iter().sum();
                        let sum_gy_xhat: f64 = gy.iter().zip(&xhat).map(|(&g, &h)| g * h).sum();
                        for cidx in 0..c {
                            dx.set(
                                row,
                                cidx,
                                inv_std / n * (n * gy[cidx] - sum_gy - xhat[cidx] * sum_gy_xhat),
                            );
                            dgamma.data[cidx] += gr[cidx] * xhat[cidx];
                            dbeta.data[cidx] += gr[cidx];
                        }
                    }
                    self.add_grad(x, &dx);
                    self.add_grad(gamma, &dgamma);
                    self.add_grad(beta, &dbeta);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ra, ca) = self.shape(a);
                    let (_, cb) = self.shape(b);
                    let mut da = Mat::zeros(ra, ca);
                    let mut db = Mat::zeros(ra, cb);
                    for r in 0..ra {
                        da.row_mut(r).copy_from_slice(&out_grad.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&out_grad.row(r)[ca..]);
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let (r, c) = self.shape(a);
                    let da = Mat::from_vec(r, c, out_grad.data.clone());
                    self.add_grad(a, &da);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds the graph via `f(g, param_tensor)`, backprops, and compares
    /// every parameter gradient against central differences.
    fn check_grad(f: impl Fn(&mut Graph, Tensor) -> Tensor, x0: &Mat, tol: f64) {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let loss = f(&mut g, x);
        g.backward(loss);
        let analytic = g.grad(x).clone();

        let h = 1e-6;
        for i in 0..x0.data.len() {
            let mut hi = x0.clone();
            hi.data[i] += h;
            let mut lo = x0.clone();
            lo.data[i] -= h;
            let mut gh = Graph::new();
            let xh = gh.param(hi);
            let lh = f(&mut gh, xh);
            let mut gl = Graph::new();
            let xl = gl.param(lo);
            let ll = f(&mut gl, xl);
            let fd = (gh.scalar_value(lh) - gl.scalar_value(ll)) / (2.0 * h);
            let a = analytic.data[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel < tol, "element {i}: analytic {a} vs fd {fd} (rel {rel})");
        }
    }

    #[test]
    fn relu_of_negative_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(Mat::from_vec(1, 2, vec![-1.0, 2.0]));
        let y = g.relu(x);
        let s = g.sum_all(y);
        g.backward(s);
        assert_eq!(g.value(y).data, vec![0.0, 2.0]);
        assert_eq!(g.grad(x).data, vec![0.0, 1.0]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_beta() {
        let mut g = Graph::new();
        let x = g.constant(Mat::from_vec(1, 4, vec![3.0; 4]));
        let gamma = g.param(Mat::from_vec(1, 4, vec![2.0; 4]));
        let beta = g.param(Mat::from_vec(1, 4, vec![0.5; 4]));
        let y = g.layer_norm(x, gamma, beta, 1e-5);
        for v in &g.value(y).data {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_of_constant_row_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(Mat::from_vec(1, 3, vec![2.0, 2.0, 2.0]));
        let v = g.var_rows(x);
        let s = g.sum_all(v);
        g.backward(s);
        assert_eq!(g.scalar_value(v), 0.0);
        assert_eq!(g.grad(x).data, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let x0 = Mat::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.9, 0.2, -0.4]);
        check_grad(
            |g, x| {
                let w = g.constant(Mat::from_vec(3, 2, vec![0.5, -1.0, 0.25, 0.75, -0.5, 1.5]));
                let y = g.matmul(x, w);
                let y2 = g.mul(y, y);
                g.mean_all(y2)
            },
            &x0,
            1e-7,
        );
    }

    #[test]
    fn elementwise_op_gradients_match_finite_differences() {
        let x0 = Mat::from_vec(1, 5, vec![0.4, -1.2, 0.05, 2.3, -0.6]);
        for op in ["silu", "sigmoid", "sin", "cos", "relu"] {
            check_grad(
                |g, x| {
                    let y = match op {
                        "silu" => g.silu(x),
                        "sigmoid" => g.sigmoid(x),
                        "sin" => g.sin(x),
                        "cos" => g.cos(x),
                        _ => g.relu(x),
                    };
                    let y2 = g.mul(y, y);
                    g.sum_all(y2)
                },
                &x0,
                1e-6,
            );
        }
    }

    #[test]
    fn reduction_and_norm_gradients_match_finite_differences() {
        let x0 = Mat::from_vec(2, 4, vec![0.3, 1.7, -0.9, 0.2, -1.4, 0.8, 0.6, 2.2]);
        check_grad(
            |g, x| {
                let v = g.var_rows(x);
                g.sum_all(v)
            },
            &x0,
            1e-6,
        );
        check_grad(
            |g, x| {
                let gamma = g.constant(Mat::from_vec(1, 4, vec![1.2, 0.8, -0.5, 1.0]));
                let beta = g.constant(Mat::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.0]));
                let y = g.layer_norm(x, gamma, beta, 1e-5);
                let y2 = g.mul(y, y);
                g.mean_all(y2)
            },
            &x0,
            1e-5,
        );
        check_grad(
            |g, x| {
                let m = g.mean_rows(x);
                let s = g.sum_rows(x);
                let d = g.sub(m, s);
                let d2 = g.mul(d, d);
                g.mean_all(d2)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn broadcast_and_concat_gradients_match_finite_differences() {
        let x0 = Mat::from_vec(3, 1, vec![0.5, -1.0, 2.0]);
        check_grad(
            |g, x| {
                let spread = g.col_times_const_row(x, vec![0.25, -0.5, 1.0, 2.0]);
                let base = g.constant(Mat::from_vec(3, 4, (0..12).map(|i| 0.1 * i as f64).collect()));
                let a = g.add_col_broadcast(base, x);
                let joined = g.concat_cols(spread, a);
                let sq = g.mul(joined, joined);
                g.mean_all(sq)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn block_matmul_and_gather_match_dense_equivalent() {
        // two blocks of 3 rows
        let lhs = Mat::from_vec(3, 3, vec![1.0, 0.5, 0.0, 0.5, 1.0, 0.25, 0.0, 0.25, 1.0]);
        let x0 = Mat::from_vec(6, 2, (0..12).map(|i| (i as f64) * 0.3 - 1.0).collect());
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let y = g.block_matmul_const(lhs.clone(), x);
        let picked = g.gather_rows(y, vec![2, 0], 3);
        let sq = g.mul(picked, picked);
        let loss = g.sum_all(sq);
        g.backward(loss);

        // dense check of the forward value
        for b in 0..2 {
            for i in 0..3 {
                for c in 0..2 {
                    let mut want = 0.0;
                    for k in 0..3 {
                        want += lhs.at(i, k) * x0.at(b * 3 + k, c);
                    }
                    assert!((g.value(y).at(b * 3 + i, c) - want).abs() < 1e-12);
                }
            }
        }
        assert_eq!(g.value(picked).row(0), g.value(y).row(2));
        assert_eq!(g.value(picked).row(2), g.value(y).row(5));

        let lhs2 = lhs.clone();
        check_grad(
            move |g, x| {
                let y = g.block_matmul_const(lhs2.clone(), x);
                let picked = g.gather_rows(y, vec![2, 0], 3);
                let sq = g.mul(picked, picked);
                g.sum_all(sq)
            },
            &x0,
            1e-7,
        );
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x used twice; dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.param(Mat::from_vec(1, 1, vec![3.0]));
        let xx = g.mul(x, x);
        let y = g.add(xx, x);
        g.backward(y);
        assert_eq!(g.scalar_value(y), 12.0);
        assert_eq!(g.grad(x).data[0], 7.0);
    }

    #[test]
    fn determinism_same_inputs_same_bits() {
        let build = || {
            let mut g = Graph::new();
            let x = g.param(Mat::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
            let w = g.constant(Mat::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]));
            let y = g.matmul(x, w);
            let s = g.silu(y);
            let loss = g.mean_all(s);
            g.backward(loss);
            (g.scalar_value(loss), g.grad(x).data.clone())
        };
        let (l1, g1) = build();
        let (l2, g2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
