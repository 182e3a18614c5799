//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! The tape is a Wengert list built eagerly: every operation computes its
//! value on creation and records enough metadata for the backward sweep.
//! Node values live in one growing arena buffer, and [`Tape::recycle`]
//! resets the list while keeping the allocation, so repeated inference
//! (sliding-window serving, validation sweeps) does not churn the allocator.
//! Attention is a fused op (softmax(Q K^T * scale) V) so the T x T weight
//! matrix is the only quadratic intermediate kept per head, and only when
//! gradients are enabled.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix. Vectors are 1 x n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Mat { rows, cols, data }
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// C (n x m) += A (n x k) * B (k x m).
fn matmul_nn_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * m..(i + 1) * m];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// Dot product with four accumulators so the reduction vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// C (n x m) += A (n x k) * B^T where B is (m x k): row-by-row dot products.
fn matmul_nt_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * m..(i + 1) * m];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}



fn transpose_into(src: &[f64], rows: usize, cols: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(rows * cols, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::new();
    transpose_into(src, rows, cols, &mut out);
    out
}

fn softmax_rows_inplace(data: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean of ((pred - target) / scale)^2 over all elements; `scale_of(i)` maps
/// a flat element index to its normalization scale.
pub fn scaled_mse(pred: &[f64], target: &[f64], scale_of: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        let d = (p - t) / scale_of(i);
        sum += d * d;
    }
    sum / pred.len() as f64
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn bce(prob: &[f64], labels: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (p, l) in prob.iter().zip(labels) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= l * p.ln() + (1.0 - l) * (1.0 - p).ln();
    }
    sum / prob.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBiasRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    LayerNormRows {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        inv_std: Vec<f64>,
        normed: Vec<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        scale: f64,
        /// Row-softmaxed T x T weights; empty when gradients are disabled.
        weights: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    ColSlice {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    RowDot(NodeId, NodeId),
    RowScale {
        x: NodeId,
        s: NodeId,
    },
    DropoutMask {
        x: NodeId,
        mask: Vec<f64>,
    },
    ScaleCols {
        x: NodeId,
        scales: Vec<f64>,
    },
    MseScaledVs {
        pred: NodeId,
        target: Vec<f64>,
        col_scale: Vec<f64>,
    },
    BceVs {
        prob: NodeId,
        labels: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    offset: usize,
    op: Op,
}

impl Node {
    fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    buffer: Vec<f64>,
    grad_enabled: bool,
    scratch: Vec<f64>,
    scratch_t: Vec<f64>,
    scratch_pool: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new(grad_enabled: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            buffer: Vec::new(),
            grad_enabled,
            scratch: Vec::new(),
            scratch_t: Vec::new(),
            scratch_pool: Vec::new(),
        }
    }

    /// Clears the node list but keeps every allocation for reuse.
    pub fn recycle(&mut self) {
        self.nodes.clear();
        self.buffer.clear();
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &self.buffer[n.offset..n.offset + n.numel()]
    }

    fn node_region(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.offset, n.numel())
    }

    /// Reserves a zeroed output region and returns (all prior values, output).
    fn alloc_out(&mut self, size: usize) -> (&[f64], &mut [f64], usize) {
        let offset = self.buffer.len();
        self.buffer.resize(offset + size, 0.0);
        let (head, tail) = self.buffer.split_at_mut(offset);
        (head, &mut tail[..size], offset)
    }

    fn push(&mut self, rows: usize, cols: usize, offset: usize, op: Op) -> NodeId {
        self.nodes.push(Node {
            rows,
            cols,
            offset,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, mat: &Mat) -> NodeId {
        self.leaf_from(mat.rows, mat.cols, &mat.data)
    }

    pub fn leaf_from(&mut self, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        assert_eq!(rows * cols, data.len());
        let offset = self.buffer.len();
        self.buffer.extend_from_slice(data);
        self.push(rows, cols, offset, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let (a_off, a_len) = self.node_region(a);
        let (b_off, b_len) = self.node_region(b);
        let (head, out, offset) = self.alloc_out(n * m);
        matmul_nn_acc(
            &head[a_off..a_off + a_len],
            &head[b_off..b_off + b_len],
            n,
            k,
            m,
            out,
        );
        self.push(n, m, offset, Op::MatMul(a, b))
    }

    /// Matrix plus a 1 x c bias row broadcast over rows.
    pub fn add_bias_row(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (n, c) = self.dims(x);
        assert_eq!(self.dims(b), (1, c), "bias shape");
        let (x_off, x_len) = self.node_region(x);
        let (b_off, b_len) = self.node_region(b);
        let (head, out, offset) = self.alloc_out(n * c);
        let xv = &head[x_off..x_off + x_len];
        let bias = &head[b_off..b_off + b_len];
        for r in 0..n {
            for j in 0..c {
                out[r * c + j] = xv[r * c + j] + bias[j];
            }
        }
        self.push(n, c, offset, Op::AddBiasRow(x, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let (n, c) = self.dims(a);
        let (a_off, len) = self.node_region(a);
        let (b_off, _) = self.node_region(b);
        let (head, out, offset) = self.alloc_out(len);
        for i in 0..len {
            out[i] = head[a_off + i] + head[b_off + i];
        }
        self.push(n, c, offset, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (n, m) = self.dims(x);
        let (x_off, len) = self.node_region(x);
        let (head, out, offset) = self.alloc_out(len);
        for i in 0..len {
            out[i] = head[x_off + i] * c;
        }
        self.push(n, m, offset, Op::Scale(x, c))
    }

    fn unary_map(&mut self, x: NodeId, f: impl Fn(f64) -> f64) -> (usize, usize, usize) {
        let (n, m) = self.dims(x);
        let (x_off, len) = self.node_region(x);
        let (head, out, offset) = self.alloc_out(len);
        for i in 0..len {
            out[i] = f(head[x_off + i]);
        }
        (n, m, offset)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (n, m, offset) = self.unary_map(x, |v| v.max(0.0));
        self.push(n, m, offset, Op::Relu(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let (n, m, offset) = self.unary_map(x, stable_softplus);
        self.push(n, m, offset, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (n, m, offset) = self.unary_map(x, sigmoid);
        self.push(n, m, offset, Op::Sigmoid(x))
    }

    /// Row-wise layer norm with learnable gamma/beta (1 x c each).
    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let (n, c) = self.dims(x);
        assert_eq!(self.dims(gamma), (1, c));
        assert_eq!(self.dims(beta), (1, c));
        let keep_cache = self.grad_enabled;
        let (x_off, x_len) = self.node_region(x);
        let (g_off, g_len) = self.node_region(gamma);
        let (b_off, b_len) = self.node_region(beta);
        let (head, out, offset) = self.alloc_out(n * c);
        let xv = &head[x_off..x_off + x_len];
        let g = &head[g_off..g_off + g_len];
        let bt = &head[b_off..b_off + b_len];
        let mut inv_std = Vec::new();
        let mut normed = Vec::new();
        if keep_cache {
            inv_std.resize(n, 0.0);
            normed.resize(n * c, 0.0);
        }
        for r in 0..n {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + EPS).sqrt();
            if keep_cache {
                inv_std[r] = istd;
            }
            for j in 0..c {
                let nv = (row[j] - mean) * istd;
                if keep_cache {
                    normed[r * c + j] = nv;
                }
                out[r * c + j] = g[j] * nv + bt[j];
            }
        }
        self.push(
            n,
            c,
            offset,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                inv_std,
                normed,
            },
        )
    }

    /// Fused scaled dot-product attention: softmax(Q K^T * scale) V.
    /// Head widths are small, so the heavy T x T products run against d x T
    /// transposed copies to keep the hot inner loops T-wide. Without
    /// gradients the weight matrix lives in recycled scratch space.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, scale: f64) -> NodeId {
        let (t, d) = self.dims(q);
        assert_eq!(self.dims(k), (t, d));
        assert_eq!(self.dims(v), (t, d));
        let (q_off, q_len) = self.node_region(q);
        let (k_off, k_len) = self.node_region(k);
        let (v_off, v_len) = self.node_region(v);

        let mut weights = std::mem::take(&mut self.scratch);
        let mut trans = std::mem::take(&mut self.scratch_t);
        weights.clear();
        weights.resize(t * t, 0.0);

        let (head, out, offset) = self.alloc_out(t * d);
        let qv = &head[q_off..q_off + q_len];
        let kv = &head[k_off..k_off + k_len];
        let vv = &head[v_off..v_off + v_len];

        transpose_into(kv, t, d, &mut trans);
        matmul_nn_acc(qv, &trans, t, d, t, &mut weights);
        for w in weights.iter_mut() {
            *w *= scale;
        }
        softmax_rows_inplace(&mut weights, t, t);

        // ctx^T = V^T W^T via row dots, then transpose into the output.
        transpose_into(vv, t, d, &mut trans);
        let mut ctx_t = vec![0.0; d * t];
        matmul_nt_acc(&trans, &weights, d, t, t, &mut ctx_t);
        for dd in 0..d {
            for i in 0..t {
                out[i * d + dd] = ctx_t[dd * t + i];
            }
        }

        let stored_weights = if self.grad_enabled {
            weights.clone()
        } else {
            Vec::new()
        };
        self.scratch = weights;
        self.scratch_t = trans;
        self.push(
            t,
            d,
            offset,
            Op::Attention {
                q,
                k,
                v,
                scale,
                weights: stored_weights,
            },
        )
    }

    /// Several independent attention applications (for example all heads of
    /// one multi-head block) computed on parallel threads. Each job writes
    /// only its own output region, so results are identical to calling
    /// [`Tape::attention`] sequentially.
    pub fn attention_many(
        &mut self,
        triples: &[(NodeId, NodeId, NodeId)],
        scale: f64,
    ) -> Vec<NodeId> {
        // Thread spawn only pays off for long sequences.
        let parallel_worthwhile = triples
            .first()
            .map(|&(q, _, _)| self.dims(q).0 >= 256)
            .unwrap_or(false);
        if triples.len() <= 1 || !parallel_worthwhile {
            return triples
                .iter()
                .map(|&(q, k, v)| self.attention(q, k, v, scale))
                .collect();
        }
        let jobs: Vec<(usize, usize, usize, usize, usize)> = triples
            .iter()
            .map(|&(q, k, v)| {
                let (t, d) = self.dims(q);
                assert_eq!(self.dims(k), (t, d));
                assert_eq!(self.dims(v), (t, d));
                (self.nodes[q.0].offset, self.nodes[k.0].offset, self.nodes[v.0].offset, t, d)
            })
            .collect();
        while self.scratch_pool.len() < triples.len() {
            self.scratch_pool.push(Vec::new());
        }
        let mut pool: Vec<Vec<f64>> = self.scratch_pool.drain(..triples.len()).collect();
        let grad = self.grad_enabled;
        let buffer = &self.buffer;
        let mut results: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .zip(pool.iter_mut())
                .map(|(&(q_off, k_off, v_off, t, d), weights)| {
                    scope.spawn(move || {
                        let qv = &buffer[q_off..q_off + t * d];
                        let kv = &buffer[k_off..k_off + t * d];
                        let vv = &buffer[v_off..v_off + t * d];
                        weights.clear();
                        weights.resize(t * t, 0.0);
                        let mut trans = Vec::new();
                        transpose_into(kv, t, d, &mut trans);
                        matmul_nn_acc(qv, &trans, t, d, t, weights);
                        for w in weights.iter_mut() {
                            *w *= scale;
                        }
                        softmax_rows_inplace(weights, t, t);
                        transpose_into(vv, t, d, &mut trans);
                        let mut ctx_t = vec![0.0; d * t];
                        matmul_nt_acc(&trans, weights, d, t, t, &mut ctx_t);
                        let mut out = vec![0.0; t * d];
                        for dd in 0..d {
                            for i in 0..t {
                                out[i * d + dd] = ctx_t[dd * t + i];
                            }
                        }
                        let stored = if grad { weights.clone() } else { Vec::new() };
                        (out, stored)
                    })
                })
                .collect();
            results = handles.into_iter().map(|h| h.join().unwrap()).collect();
        });
        for scratch in pool.into_iter().rev() {
            self.scratch_pool.insert(0, scratch);
        }
        triples
            .iter()
            .zip(results)
            .zip(jobs)
            .map(|((&(q, k, v), (ctx, weights)), (_, _, _, t, d))| {
                let (_, out, offset) = self.alloc_out(t * d);
                out.copy_from_slice(&ctx);
                self.push(
                    t,
                    d,
                    offset,
                    Op::Attention {
                        q,
                        k,
                        v,
                        scale,
                        weights,
                    },
                )
            })
            .collect()
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (n, c) = self.dims(x);
        let (x_off, len) = self.node_region(x);
        let (head, out, offset) = self.alloc_out(len);
        out.copy_from_slice(&head[x_off..x_off + len]);
        softmax_rows_inplace(out, n, c);
        self.push(n, c, offset, Op::SoftmaxRows(x))
    }

    /// Columns [start, start+len) of x.
    pub fn col_slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (n, c) = self.dims(x);
        assert!(start + len <= c, "slice {start}+{len} beyond {c}");
        let (x_off, _) = self.node_region(x);
        let (head, out, offset) = self.alloc_out(n * len);
        for r in 0..n {
            let src = &head[x_off + r * c + start..x_off + r * c + start + len];
            out[r * len..(r + 1) * len].copy_from_slice(src);
        }
        self.push(n, len, offset, Op::ColSlice { x, start })
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let n = self.dims(xs[0]).0;
        let total: usize = xs.iter().map(|&x| self.dims(x).1).sum();
        let regions: Vec<(usize, usize)> = xs
            .iter()
            .map(|&x| {
                assert_eq!(self.dims(x).0, n, "concat row mismatch");
                let (off, _) = self.node_region(x);
                (off, self.dims(x).1)
            })
            .collect();
        let (head, out, offset) = self.alloc_out(n * total);
        let mut col = 0;
        for (off, c) in regions {
            for r in 0..n {
                out[r * total + col..r * total + col + c]
                    .copy_from_slice(&head[off + r * c..off + (r + 1) * c]);
            }
            col += c;
        }
        self.push(n, total, offset, Op::ConcatCols(xs.to_vec()))
    }

    /// Row-wise dot product of two equally shaped matrices -> column (n x 1).
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.dims(a), self.dims(b));
        let (n, c) = self.dims(a);
        let (a_off, _) = self.node_region(a);
        let (b_off, _) = self.node_region(b);
        let (head, out, offset) = self.alloc_out(n);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(
                &head[a_off + r * c..a_off + (r + 1) * c],
                &head[b_off + r * c..b_off + (r + 1) * c],
            );
        }
        self.push(n, 1, offset, Op::RowDot(a, b))
    }

    /// Scales each row of x (n x c) by the matching entry of s (n x 1).
    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (n, c) = self.dims(x);
        assert_eq!(self.dims(s), (n, 1));
        let (x_off, _) = self.node_region(x);
        let (s_off, _) = self.node_region(s);
        let (head, out, offset) = self.alloc_out(n * c);
        for r in 0..n {
            let f = head[s_off + r];
            for j in 0..c {
                out[r * c + j] = head[x_off + r * c + j] * f;
            }
        }
        self.push(n, c, offset, Op::RowScale { x, s })
    }

    /// Inverted dropout: elements zeroed with probability p, survivors scaled
    /// by 1/(1-p). `unit(i)` must return a uniform draw in [0, 1).
    pub fn dropout(&mut self, x: NodeId, p: f64, mut unit: impl FnMut() -> f64) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let (n, c) = self.dims(x);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..n * c)
            .map(|_| if unit() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let (x_off, len) = self.node_region(x);
        let (head, out, offset) = self.alloc_out(len);
        for i in 0..len {
            out[i] = head[x_off + i] * mask[i];
        }
        self.push(n, c, offset, Op::DropoutMask { x, mask })
    }

    /// Per-column constant scales.
    pub fn scale_cols(&mut self, x: NodeId, scales: Vec<f64>) -> NodeId {
        let (n, c) = self.dims(x);
        assert_eq!(scales.len(), c);
        let (x_off, _) = self.node_region(x);
        let (head, out, offset) = self.alloc_out(n * c);
        for r in 0..n {
            for j in 0..c {
                out[r * c + j] = head[x_off + r * c + j] * scales[j];
            }
        }
        self.push(n, c, offset, Op::ScaleCols { x, scales })
    }

    /// Scalar node: mean of ((pred - target) / col_scale)^2.
    pub fn mse_scaled_vs(&mut self, pred: NodeId, target: Vec<f64>, col_scale: Vec<f64>) -> NodeId {
        let (n, c) = self.dims(pred);
        assert_eq!(target.len(), n * c);
        assert_eq!(col_scale.len(), c);
        let value = scaled_mse(self.value(pred), &target, |i| col_scale[i % c]);
        let (_, out, offset) = self.alloc_out(1);
        out[0] = value;
        self.push(
            1,
            1,
            offset,
            Op::MseScaledVs {
                pred,
                target,
                col_scale,
            },
        )
    }

    /// Scalar node: mean binary cross-entropy against 0/1 labels.
    pub fn bce_vs(&mut self, prob: NodeId, labels: Vec<f64>) -> NodeId {
        let (n, c) = self.dims(prob);
        assert_eq!(labels.len(), n * c);
        let value = bce(self.value(prob), &labels);
        let (_, out, offset) = self.alloc_out(1);
        out[0] = value;
        self.push(1, 1, offset, Op::BceVs { prob, labels })
    }

    /// Backward sweep from a scalar root. Returns per-node gradients; leaves
    /// keep theirs so parameter gradients can be collected by NodeId.
    pub fn backward(&mut self, root: NodeId) -> Grads {
        assert!(self.grad_enabled, "tape built without gradients");
        assert_eq!(self.dims(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
            macro_rules! grad_buf {
                ($id:expr) => {{
                    let numel = self.nodes[$id.0].numel();
                    grads[$id.0].get_or_insert_with(|| vec![0.0; numel])
                }};
            }
            macro_rules! val {
                ($id:expr) => {{
                    let node = &self.nodes[$id.0];
                    &self.buffer[node.offset..node.offset + node.numel()]
                }};
            }
            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (n, k) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                    let m = self.nodes[b.0].cols;
                    {
                        // dA += dC * B^T
                        let mut da = vec![0.0; n * k];
                        matmul_nt_acc(&gout, val!(b), n, m, k, &mut da);
                        let ga = grad_buf!(a);
                        for (g, d) in ga.iter_mut().zip(&da) {
                            *g += d;
                        }
                    }
                    {
                        // dB += A^T * dC, transposed to keep inner loops wide
                        let at = transpose(val!(a), n, k);
                        let mut db = vec![0.0; k * m];
                        matmul_nn_acc(&at, &gout, k, n, m, &mut db);
                        let gb = grad_buf!(b);
                        for (g, d) in gb.iter_mut().zip(&db) {
                            *g += d;
                        }
                    }
                }
                Op::AddBiasRow(x, b) => {
                    let (x, b) = (*x, *b);
                    {
                        let gx = grad_buf!(x);
                        for (g, d) in gx.iter_mut().zip(&gout) {
                            *g += d;
                        }
                    }
                    {
                        let gb = grad_buf!(b);
                        for r in 0..rows {
                            for j in 0..cols {
                                gb[j] += gout[r * cols + j];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    {
                        let ga = grad_buf!(a);
                        for (g, d) in ga.iter_mut().zip(&gout) {
                            *g += d;
                        }
                    }
                    {
                        let gb = grad_buf!(b);
                        for (g, d) in gb.iter_mut().zip(&gout) {
                            *g += d;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    let gx = grad_buf!(x);
                    for (g, d) in gx.iter_mut().zip(&gout) {
                        *g += c * d;
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let x_off = self.nodes[x.0].offset;
                    let x_len = self.nodes[x.0].numel();
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; x_len]);
                    for i in 0..x_len {
                        if self.buffer[x_off + i] > 0.0 {
                            gx[i] += gout[i];
                        }
                    }
                }
                Op::Softplus(x) => {
                    let x = *x;
                    let x_off = self.nodes[x.0].offset;
                    let x_len = self.nodes[x.0].numel();
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; x_len]);
                    for i in 0..x_len {
                        gx[i] += gout[i] * sigmoid(self.buffer[x_off + i]);
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y_off = self.nodes[i].offset;
                    let x_len = self.nodes[x.0].numel();
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; x_len]);
                    for idx in 0..x_len {
                        let y = self.buffer[y_off + idx];
                        gx[idx] += gout[idx] * y * (1.0 - y);
                    }
                }
                Op::LayerNormRows {
                    x,
                    gamma,
                    beta,
                    inv_std,
                    normed,
                } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let c = cols;
                    let gval = val!(gamma).to_vec();
                    let mut dx = vec![0.0; rows * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for r in 0..rows {
                        let go = &gout[r * c..(r + 1) * c];
                        let nrm = &normed[r * c..(r + 1) * c];
                        let istd = inv_std[r];
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for j in 0..c {
                            dgamma[j] += go[j] * nrm[j];
                            dbeta[j] += go[j];
                            let dn = go[j] * gval[j];
                            mean_dn += dn;
                            mean_dn_n += dn * nrm[j];
                        }
                        mean_dn /= c as f64;
                        mean_dn_n /= c as f64;
                        for j in 0..c {
                            let dn = go[j] * gval[j];
                            dx[r * c + j] = istd * (dn - mean_dn - nrm[j] * mean_dn_n);
                        }
                    }
                    {
                        let gx = grad_buf!(x);
                        for (g, d) in gx.iter_mut().zip(&dx) {
                            *g += d;
                        }
                    }
                    {
                        let gg = grad_buf!(gamma);
                        for (g, d) in gg.iter_mut().zip(&dgamma) {
                            *g += d;
                        }
                    }
                    {
                        let gb = grad_buf!(beta);
                        for (g, d) in gb.iter_mut().zip(&dbeta) {
                            *g += d;
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    scale,
                    weights,
                } => {
                    let (q, k, v, scale) = (*q, *k, *v, *scale);
                    let t = rows;
                    let d = cols;
                    // dV = W^T dY, computed transposed: dV^T = dY^T W.
                    {
                        let dyt = transpose(&gout, t, d);
                        let mut dvt = vec![0.0; d * t];
                        matmul_nn_acc(&dyt, weights, d, t, t, &mut dvt);
                        let gv = grad_buf!(v);
                        for dd in 0..d {
                            for j in 0..t {
                                gv[j * d + dd] += dvt[dd * t + j];
                            }
                        }
                    }
                    // dW = dY V^T, then dS = W o (dW - rowsum(dW o W)).
                    let mut dw = vec![0.0; t * t];
                    {
                        let vt = transpose(val!(v), t, d);
                        matmul_nn_acc(&gout, &vt, t, d, t, &mut dw);
                    }
                    for r in 0..t {
                        let w_row = &weights[r * t..(r + 1) * t];
                        let dw_row = &mut dw[r * t..(r + 1) * t];
                        let rowsum = dot(dw_row, w_row);
                        for (ds, &w) in dw_row.iter_mut().zip(w_row) {
                            *ds = w * (*ds - rowsum);
                        }
                    }
                    // dQ = dS K * scale as dQ^T = K^T dS^T (row dots of dS).
                    {
                        let kt = transpose(val!(k), t, d);
                        let mut dqt = vec![0.0; d * t];
                        matmul_nt_acc(&kt, &dw, d, t, t, &mut dqt);
                        let gq = grad_buf!(q);
                        for dd in 0..d {
                            for j in 0..t {
                                gq[j * d + dd] += scale * dqt[dd * t + j];
                            }
                        }
                    }
                    // dK = dS^T Q * scale as dK^T = Q^T dS.
                    {
                        let qt = transpose(val!(q), t, d);
                        let mut dkt = vec![0.0; d * t];
                        matmul_nn_acc(&qt, &dw, d, t, t, &mut dkt);
                        let gk = grad_buf!(k);
                        for dd in 0..d {
                            for j in 0..t {
                                gk[j * d + dd] += scale * dkt[dd * t + j];
                            }
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let x = *x;
                    let y_off = self.nodes[i].offset;
                    let x_len = self.nodes[x.0].numel();
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; x_len]);
                    for r in 0..rows {
                        let y_row = &self.buffer[y_off + r * cols..y_off + (r + 1) * cols];
                        let g_row = &gout[r * cols..(r + 1) * cols];
                        let dot_val: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gx[r * cols + j] += y_row[j] * (g_row[j] - dot_val);
                        }
                    }
                }
                Op::ColSlice { x, start } => {
                    let (x, start) = (*x, *start);
                    let xc = self.nodes[x.0].cols;
                    let gx = grad_buf!(x);
                    for r in 0..rows {
                        for j in 0..cols {
                            gx[r * xc + start + j] += gout[r * cols + j];
                        }
                    }
                }
                Op::ConcatCols(xs) => {
                    let xs = xs.clone();
                    let mut offset = 0;
                    for xid in xs {
                        let c = self.nodes[xid.0].cols;
                        let gx = grad_buf!(xid);
                        for r in 0..rows {
                            for j in 0..c {
                                gx[r * c + j] += gout[r * cols + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
                Op::RowDot(a, b) => {
                    let (a, b) = (*a, *b);
                    let c = self.nodes[a.0].cols;
                    let a_off = self.nodes[a.0].offset;
                    let b_off = self.nodes[b.0].offset;
                    {
                        let ga = grad_buf!(a);
                        for r in 0..rows {
                            let g = gout[r];
                            for j in 0..c {
                                ga[r * c + j] += g * self.buffer[b_off + r * c + j];
                            }
                        }
                    }
                    {
                        let gb = grad_buf!(b);
                        for r in 0..rows {
                            let g = gout[r];
                            for j in 0..c {
                                gb[r * c + j] += g * self.buffer[a_off + r * c + j];
                            }
                        }
                    }
                }
                Op::RowScale { x, s } => {
                    let (x, s) = (*x, *s);
                    let c = cols;
                    let x_off = self.nodes[x.0].offset;
                    let s_off = self.nodes[s.0].offset;
                    {
                        let gx = grad_buf!(x);
                        for r in 0..rows {
                            let f = self.buffer[s_off + r];
                            for j in 0..c {
                                gx[r * c + j] += gout[r * c + j] * f;
                            }
                        }
                    }
                    {
                        let gs = grad_buf!(s);
                        for r in 0..rows {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += gout[r * c + j] * self.buffer[x_off + r * c + j];
                            }
                            gs[r] += acc;
                        }
                    }
                }
                Op::DropoutMask { x, mask } => {
                    let x = *x;
                    let mask = mask.clone();
                    let gx = grad_buf!(x);
                    for ((g, d), m) in gx.iter_mut().zip(&gout).zip(&mask) {
                        *g += d * m;
                    }
                }
                Op::ScaleCols { x, scales } => {
                    let x = *x;
                    let scales = scales.clone();
                    let gx = grad_buf!(x);
                    for r in 0..rows {
                        for j in 0..cols {
                            gx[r * cols + j] += gout[r * cols + j] * scales[j];
                        }
                    }
                }
                Op::MseScaledVs {
                    pred,
                    target,
                    col_scale,
                } => {
                    let pred = *pred;
                    let (pr, pc) = (self.nodes[pred.0].rows, self.nodes[pred.0].cols);
                    let n = (pr * pc) as f64;
                    let g = gout[0];
                    let p_off = self.nodes[pred.0].offset;
                    let target = target.clone();
                    let col_scale = col_scale.clone();
                    let gp = grad_buf!(pred);
                    for (idx, gpi) in gp.iter_mut().enumerate() {
                        let s = col_scale[idx % pc];
                        *gpi += g * 2.0 * (self.buffer[p_off + idx] - target[idx]) / (s * s * n);
                    }
                }
                Op::BceVs { prob, labels } => {
                    let prob = *prob;
                    let n = self.nodes[prob.0].numel() as f64;
                    let g = gout[0];
                    let p_off = self.nodes[prob.0].offset;
                    let labels = labels.clone();
                    let gp = grad_buf!(prob);
                    for (idx, gpi) in gp.iter_mut().enumerate() {
                        let p = self.buffer[p_off + idx].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        *gpi += g * (p - labels[idx]) / (p * (1.0 - p) * n);
                    }
                }
            }
        }
        Grads { by_node: grads }
    }
}

pub struct Grads {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient for a node (typically a leaf); zeros if the node did not
    /// influence the root.
    pub fn take(&mut self, id: NodeId, numel: usize) -> Vec<f64> {
        self.by_node[id.0].take().unwrap_or_else(|| vec![0.0; numel])
    }
}
