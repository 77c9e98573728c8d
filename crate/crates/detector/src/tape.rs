//! Minimal reverse-mode automatic differentiation over row-major matrices.
//!
//! Rows are points (or grouped points), columns are channels. The op set is
//! exactly what the point network needs: dense layers, batch normalization,
//! rectifiers, row gathers, group max-pooling, column concat/slice and
//! inverse-distance interpolation. Index-producing steps (sampling,
//! grouping, neighbor search) run outside the tape and enter ops as constant
//! index tables, so their outputs are piecewise-constant in the weights.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Array1<f64>,
        batch_stats: bool,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    GroupMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Interp {
        x: Var,
        idx: Vec<[usize; 3]>,
        w: Vec<[f64; 3]>,
    },
}

struct Node {
    value: Option<Mat>,
    op: Op,
    shape: (usize, usize),
    needs_grad: bool,
}

/// Statistics of one batch-normalized activation, reported so the caller can
/// update running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Unbiased variance.
    pub var: Array1<f64>,
}

/// Records a forward computation for later differentiation.
///
/// With `record == false` the tape still evaluates everything but never
/// keeps the caches needed for backward and lets callers [`Tape::release`]
/// intermediate values to bound memory.
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
}

/// Gradients indexed by [`Var`]; `None` for nodes that received no gradient.
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new(record: bool) -> Self {
        Self {
            nodes: Vec::new(),
            record,
        }
    }

    pub fn records(&self) -> bool {
        self.record
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        let shape = value.dim();
        self.nodes.push(Node {
            value: Some(value),
            op,
            shape,
            needs_grad: needs_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("value of a released tape node was requested")
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    /// Frees an intermediate value on a non-recording tape.
    pub fn release(&mut self, v: Var) {
        if !self.record && !matches!(self.nodes[v.0].op, Op::Leaf) {
            self.nodes[v.0].value = None;
        }
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let out = self.value(x).dot(self.value(w));
        let ng = self.ng(x) || self.ng(w);
        self.push(out, Op::MatMul(x, w), ng)
    }

    /// Adds the `1 × c` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b).row(0).to_owned();
        let mut out = self.value(x).clone();
        out += &bias;
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddBias(x, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Batch normalization with the statistics of the rows of `x`. Returns the
    /// normalized output and the batch statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, BatchStats) {
        let xv = self.value(x);
        let n = xv.nrows();
        let mean = xv.mean_axis(Axis(0)).expect("batch norm over zero rows");
        let mut centered = xv - &mean;
        let var_biased = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv_std = var_biased.mapv(|v| 1.0 / (v + eps).sqrt());
        centered *= &inv_std;
        let xhat = centered;
        let out = self.affine(&xhat, gamma, beta);
        let unbiased = if n > 1 {
            var_biased * (n as f64 / (n as f64 - 1.0))
        } else {
            var_biased
        };
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let keep = if self.record { xhat } else { Mat::zeros((0, 0)) };
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: keep,
                inv_std,
                batch_stats: true,
            },
            ng,
        );
        (v, BatchStats { mean, var: unbiased })
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &Array1<f64>, var: &Array1<f64>, eps: f64) -> Var {
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut xhat = self.value(x) - mean;
        xhat *= &inv_std;
        let out = self.affine(&xhat, gamma, beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let keep = if self.record { xhat } else { Mat::zeros((0, 0)) };
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: keep,
                inv_std,
                batch_stats: false,
            },
            ng,
        )
    }

    fn affine(&self, xhat: &Mat, gamma: Var, beta: Var) -> Mat {
        let g = self.value(gamma).row(0).to_owned();
        let b = self.value(beta).row(0).to_owned();
        let mut out = xhat * &g;
        out += &b;
        out
    }

    /// Rows of `x` at `idx` (indices may repeat).
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let c = xv.ncols();
        let mut out = Mat::zeros((idx.len(), c));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&xv.row(i));
        }
        let ng = self.ng(x);
        self.push(out, Op::Gather { x, idx }, ng)
    }

    /// Column-wise max over consecutive groups of `group` rows.
    pub fn group_max(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        let (rows, c) = xv.dim();
        assert!(group > 0 && rows % group == 0, "rows {rows} not divisible into groups of {group}");
        let ngroups = rows / group;
        let mut out = Mat::zeros((ngroups, c));
        let mut argmax = vec![0usize; ngroups * c];
        for g in 0..ngroups {
            let base = g * group;
            for j in 0..c {
                let mut best = xv[(base, j)];
                let mut arg = base;
                for r in base + 1..base + group {
                    let v = xv[(r, j)];
                    if v > best {
                        best = v;
                        arg = r;
                    }
                }
                out[(g, j)] = best;
                argmax[g * c + j] = arg;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::GroupMax { x, argmax }, ng)
    }

    /// Concatenates along columns; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice(s![.., start..end]).to_owned();
        let ng = self.ng(x);
        self.push(out, Op::Slice { x, start }, ng)
    }

    /// Row `r` of the output is `Σ_k w[r][k] · x[idx[r][k]]`.
    pub fn interpolate(&mut self, x: Var, idx: Vec<[usize; 3]>, w: Vec<[f64; 3]>) -> Var {
        assert_eq!(idx.len(), w.len());
        let xv = self.value(x);
        let c = xv.ncols();
        let mut out = Mat::zeros((idx.len(), c));
        for (r, (ix, wt)) in idx.iter().zip(&w).enumerate() {
            let mut row = out.row_mut(r);
            for k in 0..3 {
                if wt[k] != 0.0 {
                    row.scaled_add(wt[k], &xv.row(ix[k]));
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Interp { x, idx, w }, ng)
    }

    /// Back-propagates the given output gradients through the whole tape.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Grads {
        assert!(self.record, "backward on a non-recording tape");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.nodes[v.0].shape, g.dim(), "seed gradient shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads(grads)
    }

    fn backward_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.dot(&self.value(*w).t()));
                }
                if self.ng(*w) {
                    accumulate(grads, *w, self.value(*x).t().dot(g));
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, -g);
                }
            }
            Op::Scale(x, c) => {
                if self.ng(*x) {
                    accumulate(grads, *x, g * *c);
                }
            }
            Op::Relu(x) => {
                if self.ng(*x) {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|gx, &xv| {
                        if xv <= 0.0 {
                            *gx = 0.0;
                        }
                    });
                    accumulate(grads, *x, gx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                if self.ng(*gamma) {
                    accumulate(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*beta) {
                    accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let gam = self.value(*gamma).row(0).to_owned();
                    let dxhat = g * &gam;
                    let gx = if *batch_stats {
                        let n = g.nrows() as f64;
                        let sum_d = dxhat.sum_axis(Axis(0));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut gx = dxhat * n - &sum_d;
                        gx -= &(xhat * &sum_dx);
                        gx *= &(inv_std / n);
                        gx
                    } else {
                        dxhat * inv_std
                    };
                    accumulate(grads, *x, gx);
                }
            }
            Op::Gather { x, idx } => {
                if self.ng(*x) {
                    let mut gx = Mat::zeros(self.nodes[x.0].shape);
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = gx.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::GroupMax { x, argmax } => {
                if self.ng(*x) {
                    let mut gx = Mat::zeros(self.nodes[x.0].shape);
                    let c = g.ncols();
                    for (k, &src) in argmax.iter().enumerate() {
                        gx[(src, k % c)] += g[(k / c, k % c)];
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Concat(parts) => {
                let mut col = 0;
                for p in parts {
                    let w = self.nodes[p.0].shape.1;
                    if self.ng(*p) {
                        accumulate(grads, *p, g.slice(s![.., col..col + w]).to_owned());
                    }
                    col += w;
                }
            }
            Op::Slice { x, start } => {
                if self.ng(*x) {
                    let mut gx = Mat::zeros(self.nodes[x.0].shape);
                    let w = g.ncols();
                    gx.slice_mut(s![.., *start..*start + w]).assign(g);
                    accumulate(grads, *x, gx);
                }
            }
            Op::Interp { x, idx, w } => {
                if self.ng(*x) {
                    let mut gx = Mat::zeros(self.nodes[x.0].shape);
                    for (r, (ix, wt)) in idx.iter().zip(w).enumerate() {
                        for k in 0..3 {
                            if wt[k] != 0.0 {
                                gx.row_mut(ix[k]).scaled_add(wt[k], &g.row(r));
                            }
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}
