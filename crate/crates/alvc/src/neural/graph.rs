//! Reverse-mode automatic differentiation over matrices.
//!
//! Forward values are computed eagerly while each operation is recorded on a
//! tape; [`Graph::backward`] then walks the tape in reverse and accumulates
//! gradients into the referenced parameter slots. The op set is exactly what
//! the encoder/decoder stacks need, nothing more.

use crate::num::Scalar;

use super::linalg::Matrix;

pub type NodeId = usize;

enum Op<F: Scalar> {
    /// Constant leaf: no gradient flows.
    Input,
    /// Parameter leaf: gradient accumulates into the parameter slot.
    Param(usize),
    MatMul(NodeId, NodeId),
    /// C = A · Bᵀ
    MatMulTransB(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// (n×d) plus a broadcast (1×d) bias row.
    AddBias(NodeId, NodeId),
    Scale(NodeId, F),
    Relu(NodeId),
    /// Row-wise softmax where `mask[r*cols+c] == false` excludes an entry
    /// exactly (zero weight, zero gradient). Fully masked rows yield zeros.
    SoftmaxMasked(NodeId, Vec<bool>),
    LogSoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    /// Rows gathered from an embedding table by token id.
    EmbedGather {
        table: NodeId,
        ids: Vec<u32>,
    },
    /// Inverted dropout; `mask` entries are 0 or 1/(1-p).
    Dropout {
        x: NodeId,
        mask: Matrix<F>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// 1×1 node: sum over rows with `valid[r]` of -logp[r, targets[r]].
    SumCeValid {
        logp: NodeId,
        targets: Vec<u32>,
        valid: Vec<bool>,
    },
}

struct Node<F: Scalar> {
    value: Matrix<F>,
    op: Op<F>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

const LN_EPS: f64 = 1e-5;

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Matrix<F> {
        &self.nodes[id].value
    }

    pub fn input(&mut self, value: Matrix<F>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, slot: usize, value: Matrix<F>) -> NodeId {
        self.push(value, Op::Param(slot))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_transpose_b(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.matmul_transpose_b(&self.nodes[b].value);
        self.push(value, Op::MatMulTransB(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        value.add_in_place(&self.nodes[b].value);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let bv = &self.nodes[bias].value;
        assert_eq!(bv.rows, 1, "bias must be 1×d");
        assert_eq!(bv.cols, xv.cols, "bias width mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows {
            for c in 0..value.cols {
                let v = value.at(r, c) + bv.at(0, c);
                value.set(r, c, v);
            }
        }
        self.push(value, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let mut value = self.nodes[x].value.clone();
        value.scale_in_place(c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.max(F::zero()));
        self.push(value, Op::Relu(x))
    }

    pub fn softmax_masked(&mut self, x: NodeId, mask: Vec<bool>) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(mask.len(), xv.rows * xv.cols, "mask size mismatch");
        let mut value = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let base = r * xv.cols;
            let mut max = F::neg_infinity();
            for c in 0..xv.cols {
                if mask[base + c] {
                    max = max.max(xv.at(r, c));
                }
            }
            if max == F::neg_infinity() {
                continue; // fully masked row stays zero
            }
            let mut total = F::zero();
            for c in 0..xv.cols {
                if mask[base + c] {
                    let e = (xv.at(r, c) - max).exp();
                    value.set(r, c, e);
                    total += e;
                }
            }
            for c in 0..xv.cols {
                if mask[base + c] {
                    let v = value.at(r, c) / total;
                    value.set(r, c, v);
                }
            }
        }
        self.push(value, Op::SoftmaxMasked(x, mask))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut value = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let mut max = F::neg_infinity();
            for c in 0..xv.cols {
                max = max.max(xv.at(r, c));
            }
            let mut total = F::zero();
            for c in 0..xv.cols {
                total += (xv.at(r, c) - max).exp();
            }
            let lse = max + total.ln();
            for c in 0..xv.cols {
                value.set(r, c, xv.at(r, c) - lse);
            }
        }
        self.push(value, Op::LogSoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gain].value;
        let b = &self.nodes[bias].value;
        let d = xv.cols;
        let eps = F::from_f64_c(LN_EPS);
        let mut value = Matrix::zeros(xv.rows, d);
        for r in 0..xv.rows {
            let mean = xv.row(r).iter().copied().sum::<F>() / F::from_usize_c(d);
            let var = xv
                .row(r)
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<F>()
                / F::from_usize_c(d);
            let inv_std = (var + eps).sqrt().recip();
            for c in 0..d {
                let xh = (xv.at(r, c) - mean) * inv_std;
                value.set(r, c, g.at(0, c) * xh + b.at(0, c));
            }
        }
        self.push(value, Op::LayerNorm { x, gain, bias })
    }

    pub fn embed_gather(&mut self, table: NodeId, ids: Vec<u32>) -> NodeId {
        let tv = &self.nodes[table].value;
        let mut value = Matrix::zeros(ids.len(), tv.cols);
        for (r, &id) in ids.iter().enumerate() {
            let src = id as usize * tv.cols;
            let dst = r * tv.cols;
            value.data[dst..dst + tv.cols].copy_from_slice(&tv.data[src..src + tv.cols]);
        }
        self.push(value, Op::EmbedGather { table, ids })
    }

    pub fn dropout(&mut self, x: NodeId, mask: Matrix<F>) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!((xv.rows, xv.cols), (mask.rows, mask.cols));
        let mut value = xv.clone();
        for (v, &m) in value.data.iter_mut().zip(&mask.data) {
            *v *= m;
        }
        self.push(value, Op::Dropout { x, mask })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        assert!(start + len <= xv.cols);
        let mut value = Matrix::zeros(xv.rows, len);
        for r in 0..xv.rows {
            for c in 0..len {
                value.set(r, c, xv.at(r, start + c));
            }
        }
        self.push(value, Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in &parts {
            let pv = &self.nodes[p].value;
            assert_eq!(pv.rows, rows);
            for r in 0..rows {
                for c in 0..pv.cols {
                    value.set(r, offset + c, pv.at(r, c));
                }
            }
            offset += pv.cols;
        }
        self.push(value, Op::ConcatCols(parts))
    }

    /// Summed cross entropy over valid rows: `targets[r]` indexes the
    /// log-probability row `r`.
    pub fn sum_ce_valid(&mut self, logp: NodeId, targets: Vec<u32>, valid: Vec<bool>) -> NodeId {
        let lv = &self.nodes[logp].value;
        assert_eq!(targets.len(), lv.rows);
        assert_eq!(valid.len(), lv.rows);
        let mut total = F::zero();
        for r in 0..lv.rows {
            if valid[r] {
                total -= lv.at(r, targets[r] as usize);
            }
        }
        let value = Matrix {
            rows: 1,
            cols: 1,
            data: vec![total],
        };
        self.push(
            value,
            Op::SumCeValid {
                logp,
                targets,
                valid,
            },
        )
    }

    /// Per-row negative log-probability of each target (no reduction).
    pub fn gather_neg_logp(&self, logp: NodeId, targets: &[u32]) -> Vec<F> {
        let lv = &self.nodes[logp].value;
        targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -lv.at(r, t as usize))
            .collect()
    }

    /// Runs reverse accumulation from scalar node `output` (must be 1×1) and
    /// adds parameter gradients into `param_grads` by slot.
    pub fn backward(&self, output: NodeId, param_grads: &mut [Matrix<F>]) {
        let mut grads: Vec<Option<Matrix<F>>> = vec![None; self.nodes.len()];
        grads[output] = Some(Matrix::filled(1, 1, F::one()));

        for id in (0..=output).rev() {
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(slot) => param_grads[*slot].add_in_place(&grad),
                Op::MatMul(a, b) => {
                    let da = grad.matmul_transpose_b(&self.nodes[*b].value);
                    let db = self.nodes[*a].value.matmul_transpose_a(&grad);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulTransB(a, b) => {
                    let da = grad.matmul(&self.nodes[*b].value);
                    let db = grad.matmul_transpose_a(&self.nodes[*a].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::AddBias(x, bias) => {
                    accumulate(&mut grads, *bias, grad.column_sums());
                    accumulate(&mut grads, *x, grad);
                }
                Op::Scale(x, c) => {
                    let mut dx = grad;
                    dx.scale_in_place(*c);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = grad;
                    for (d, &v) in dx.data.iter_mut().zip(&xv.data) {
                        if v <= F::zero() {
                            *d = F::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxMasked(x, mask) => {
                    let y = &self.nodes[id].value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let base = r * y.cols;
                        let mut dot = F::zero();
                        for c in 0..y.cols {
                            if mask[base + c] {
                                dot += grad.at(r, c) * y.at(r, c);
                            }
                        }
                        for c in 0..y.cols {
                            if mask[base + c] {
                                dx.set(r, c, y.at(r, c) * (grad.at(r, c) - dot));
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &self.nodes[id].value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let mut total = F::zero();
                        for c in 0..y.cols {
                            total += grad.at(r, c);
                        }
                        for c in 0..y.cols {
                            dx.set(r, c, grad.at(r, c) - y.at(r, c).exp() * total);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = &self.nodes[*x].value;
                    let g = &self.nodes[*gain].value;
                    let d = xv.cols;
                    let df = F::from_usize_c(d);
                    let eps = F::from_f64_c(LN_EPS);
                    let mut dx = Matrix::zeros(xv.rows, d);
                    let mut dg = Matrix::zeros(1, d);
                    let mut db = Matrix::zeros(1, d);
                    for r in 0..xv.rows {
                        let mean = xv.row(r).iter().copied().sum::<F>() / df;
                        let var = xv
                            .row(r)
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<F>()
                            / df;
                        let inv_std = (var + eps).sqrt().recip();
                        // dxh = dy * g; dx = inv_std*(dxh - mean(dxh) - xh*mean(dxh*xh))
                        let mut mean_dxh = F::zero();
                        let mut mean_dxh_xh = F::zero();
                        let mut xh_row = vec![F::zero(); d];
                        let mut dxh_row = vec![F::zero(); d];
                        for c in 0..d {
                            let xh = (xv.at(r, c) - mean) * inv_std;
                            let dxh = grad.at(r, c) * g.at(0, c);
                            xh_row[c] = xh;
                            dxh_row[c] = dxh;
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh;
                            dg.data[c] += grad.at(r, c) * xh;
                            db.data[c] += grad.at(r, c);
                        }
                        mean_dxh /= df;
                        mean_dxh_xh /= df;
                        for c in 0..d {
                            dx.set(
                                r,
                                c,
                                inv_std * (dxh_row[c] - mean_dxh - xh_row[c] * mean_dxh_xh),
                            );
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dg);
                    accumulate(&mut grads, *bias, db);
                }
                Op::EmbedGather { table, ids } => {
                    let tv = &self.nodes[*table].value;
                    let mut dt = Matrix::zeros(tv.rows, tv.cols);
                    for (r, &tok) in ids.iter().enumerate() {
                        let dst = tok as usize * tv.cols;
                        let src = r * tv.cols;
                        for c in 0..tv.cols {
                            dt.data[dst + c] += grad.data[src + c];
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = grad;
                    for (d, &m) in dx.data.iter_mut().zip(&mask.data) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start, len } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for c in 0..*len {
                            dx.set(r, start + c, grad.at(r, c));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &self.nodes[p].value;
                        let mut dp = Matrix::zeros(pv.rows, pv.cols);
                        for r in 0..pv.rows {
                            for c in 0..pv.cols {
                                dp.set(r, c, grad.at(r, offset + c));
                            }
                        }
                        offset += pv.cols;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::SumCeValid {
                    logp,
                    targets,
                    valid,
                } => {
                    let lv = &self.nodes[*logp].value;
                    let scale = grad.at(0, 0);
                    let mut dl = Matrix::zeros(lv.rows, lv.cols);
                    for r in 0..lv.rows {
                        if valid[r] {
                            let c = targets[r] as usize;
                            dl.set(r, c, dl.at(r, c) - scale);
                        }
                    }
                    accumulate(&mut grads, *logp, dl);
                }
            }
        }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Matrix<F>>], id: NodeId, delta: Matrix<F>) {
    match &mut grads[id] {
        Some(g) => g.add_in_place(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference gradient of a scalar graph builder with respect to
    /// one leaf matrix.
    fn finite_diff<B>(build: B, leaf: &Matrix<f64>, eps: f64) -> Matrix<f64>
    where
        B: Fn(&Matrix<f64>) -> f64,
    {
        let mut grad = Matrix::zeros(leaf.rows, leaf.cols);
        for i in 0..leaf.data.len() {
            let mut plus = leaf.clone();
            plus.data[i] += eps;
            let mut minus = leaf.clone();
            minus.data[i] -= eps;
            grad.data[i] = (build(&plus) - build(&minus)) / (2.0 * eps);
        }
        grad
    }

    fn max_rel_err(analytic: &Matrix<f64>, numeric: &Matrix<f64>) -> f64 {
        analytic
            .data
            .iter()
            .zip(&numeric.data)
            .map(|(&a, &n)| (a - n).abs() / (a.abs().max(n.abs())).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn layer_norm_and_softmax_gradients_match_differences() {
        let x = Matrix::from_rows(vec![vec![0.3, -1.2, 0.7, 2.0], vec![1.0, 0.1, -0.4, 0.5]]);
        let gain = Matrix::from_rows(vec![vec![1.1, 0.9, 1.3, 0.8]]);
        let bias = Matrix::from_rows(vec![vec![0.05, -0.1, 0.2, 0.0]]);
        let mask = vec![true, true, false, true, true, true, true, false];

        let run =
            |xv: &Matrix<f64>, gv: &Matrix<f64>, bv: &Matrix<f64>| -> (f64, Vec<Matrix<f64>>) {
                let mut g: Graph<f64> = Graph::new();
                let xn = g.param(0, xv.clone());
                let gn = g.param(1, gv.clone());
                let bn = g.param(2, bv.clone());
                let ln = g.layer_norm(xn, gn, bn);
                let sm = g.softmax_masked(ln, mask.clone());
                let lsm = g.log_softmax_rows(sm);
                let loss = g.sum_ce_valid(lsm, vec![1, 3], vec![true, true]);
                let mut grads = vec![
                    Matrix::zeros(2, 4),
                    Matrix::zeros(1, 4),
                    Matrix::zeros(1, 4),
                ];
                g.backward(loss, &mut grads);
                (g.value(loss).at(0, 0), grads)
            };

        let (_, grads) = run(&x, &gain, &bias);
        let num_x = finite_diff(|v| run(v, &gain, &bias).0, &x, 1e-6);
        let num_g = finite_diff(|v| run(&x, v, &bias).0, &gain, 1e-6);
        let num_b = finite_diff(|v| run(&x, &gain, v).0, &bias, 1e-6);
        assert!(max_rel_err(&grads[0], &num_x) < 1e-6, "x grad");
        assert!(max_rel_err(&grads[1], &num_g) < 1e-6, "gain grad");
        assert!(max_rel_err(&grads[2], &num_b) < 1e-6, "bias grad");
    }

    #[test]
    fn matmul_chain_gradients_match_differences() {
        let a = Matrix::from_rows(vec![vec![0.5, -0.3], vec![1.2, 0.8]]);
        let b = Matrix::from_rows(vec![vec![0.9, 0.4, -0.2], vec![0.1, -1.0, 0.6]]);
        let c = Matrix::from_rows(vec![vec![0.3, 0.7, -0.5], vec![1.1, 0.2, 0.4]]);

        let run =
            |av: &Matrix<f64>, bv: &Matrix<f64>, cv: &Matrix<f64>| -> (f64, Vec<Matrix<f64>>) {
                let mut g: Graph<f64> = Graph::new();
                let an = g.param(0, av.clone());
                let bn = g.param(1, bv.clone());
                let cn = g.param(2, cv.clone());
                let ab = g.matmul(an, bn); // 2x3
                let scaled = g.scale(ab, 0.7);
                let relu = g.relu(scaled);
                let scores = g.matmul_transpose_b(relu, cn); // 2x2
                let lsm = g.log_softmax_rows(scores);
                let loss = g.sum_ce_valid(lsm, vec![0, 1], vec![true, true]);
                let mut grads = vec![
                    Matrix::zeros(2, 2),
                    Matrix::zeros(2, 3),
                    Matrix::zeros(2, 3),
                ];
                g.backward(loss, &mut grads);
                (g.value(loss).at(0, 0), grads)
            };

        let (_, grads) = run(&a, &b, &c);
        let num_a = finite_diff(|v| run(v, &b, &c).0, &a, 1e-6);
        let num_b = finite_diff(|v| run(&a, v, &c).0, &b, 1e-6);
        let num_c = finite_diff(|v| run(&a, &b, v).0, &c, 1e-6);
        assert!(max_rel_err(&grads[0], &num_a) < 1e-6);
        assert!(max_rel_err(&grads[1], &num_b) < 1e-6);
        assert!(max_rel_err(&grads[2], &num_c) < 1e-6);
    }

    #[test]
    fn embed_and_slice_gradients_match_differences() {
        let table = Matrix::from_rows(vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![-0.5, 0.6, -0.7, 0.8],
            vec![0.9, -1.0, 1.1, -1.2],
        ]);
        let ids = vec![2u32, 0, 2];

        let run = |tv: &Matrix<f64>| -> (f64, Vec<Matrix<f64>>) {
            let mut g: Graph<f64> = Graph::new();
            let tn = g.param(0, tv.clone());
            let emb = g.embed_gather(tn, ids.clone()); // 3x4
            let left = g.slice_cols(emb, 0, 2);
            let right = g.slice_cols(emb, 2, 2);
            let scores = g.matmul_transpose_b(left, right); // 3x3
            let lsm = g.log_softmax_rows(scores);
            let loss = g.sum_ce_valid(lsm, vec![0, 2, 1], vec![true, false, true]);
            let mut grads = vec![Matrix::zeros(3, 4)];
            g.backward(loss, &mut grads);
            (g.value(loss).at(0, 0), grads)
        };

        let (_, grads) = run(&table);
        let num = finite_diff(|v| run(v).0, &table, 1e-6);
        assert!(max_rel_err(&grads[0], &num) < 1e-6);
    }

    #[test]
    fn fully_masked_softmax_row_is_zero_with_zero_grad() {
        let x = Matrix::from_rows(vec![vec![3.0, 1.0], vec![2.0, 5.0]]);
        let mask = vec![false, false, true, true];
        let mut g: Graph<f64> = Graph::new();
        let xn = g.param(0, x);
        let sm = g.softmax_masked(xn, mask);
        assert_eq!(g.value(sm).row(0), &[0.0, 0.0]);
        let total: f64 = g.value(sm).row(1).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
