use std::collections::HashMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use crate::params::{Gradients, ParamId, ParamStore};
use crate::segments::Segments;
use crate::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Periodic(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Conv1d {
        x: Var,
        w: Var,
        segs: Segments,
        kernel: usize,
        dilation: usize,
        lookahead: usize,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: Var,
        src_rows: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        segs: Segments,
    },
    SegmentFlatten {
        x: Var,
        segs: Segments,
    },
    SegmentUnflatten {
        x: Var,
        segs: Segments,
    },
    Broadcast {
        x: Var,
        segs: Segments,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        probs: Tensor,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    Sum(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// A single-use computation tape. Parameters are read from a borrowed
/// [`ParamStore`]; inputs and intermediates are owned by the tape.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(g) => *g += &t,
        slot => *slot = Some(t),
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.iter().all(|v| !v.is_nan()), "NaN produced");
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `a + b` with the 1×n row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.nrows(), 1, "add_row expects a row vector");
        let out = self.value(a) + bv;
        self.push(out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Identity on column 0, `sin` on every other column.
    pub fn periodic(&mut self, a: Var) -> Var {
        let mut out = self.value(a).mapv(f64::sin);
        if out.ncols() > 0 {
            out.column_mut(0).assign(&self.value(a).column(0));
        }
        self.push(out, Op::Periodic(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    /// Gathers rows by index (embedding lookup, last-step selection).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), rows);
        self.push(out, Op::SelectRows(a, rows.to_vec()))
    }

    /// One-dimensional convolution over every segment of a packed batch.
    ///
    /// `out[t] = Σ_i x[t + lookahead - dilation·i] · W_i`, where `W_i` is the
    /// i-th `c_in × c_out` block of `w` (shape `kernel·c_in × c_out`) and
    /// rows outside the segment read as zero. `lookahead = 0` gives a causal
    /// convolution; `lookahead = kernel / 2` with unit dilation gives
    /// "same" padding.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        segs: &Segments,
        kernel: usize,
        dilation: usize,
        lookahead: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let c_in = xv.ncols();
        assert_eq!(xv.nrows(), segs.total(), "conv1d: segment layout mismatch");
        assert_eq!(wv.nrows(), kernel * c_in, "conv1d: weight shape mismatch");
        let mut out = Array2::zeros((xv.nrows(), wv.ncols()));
        for_each_tap(segs, kernel, dilation, lookahead, |tap, dst, src| {
            let w_tap = wv.slice(s![tap * c_in..(tap + 1) * c_in, ..]);
            general_mat_mul(
                1.0,
                &xv.slice(s![src, ..]),
                &w_tap,
                1.0,
                &mut out.slice_mut(s![dst, ..]),
            );
        });
        self.push(
            out,
            Op::Conv1d {
                x,
                w,
                segs: segs.clone(),
                kernel,
                dilation,
                lookahead,
            },
        )
    }

    /// Stride-2, width-2 max pooling inside every segment; odd tails pool a
    /// single row. Returns the pooled variable and its layout.
    pub fn max_pool2(&mut self, x: Var, segs: &Segments) -> (Var, Segments) {
        let xv = self.value(x);
        let out_segs = segs.halved();
        let c = xv.ncols();
        let mut out = Array2::zeros((out_segs.total(), c));
        let mut argmax = vec![0usize; out_segs.total() * c];
        for (i, r) in segs.ranges().enumerate() {
            let o0 = out_segs.range(i).start;
            for (j, t) in (r.start..r.end).step_by(2).enumerate() {
                for ch in 0..c {
                    let mut best = t;
                    if t + 1 < r.end && xv[[t + 1, ch]] > xv[[t, ch]] {
                        best = t + 1;
                    }
                    out[[o0 + j, ch]] = xv[[best, ch]];
                    argmax[(o0 + j) * c + ch] = best;
                }
            }
        }
        (self.push(out, Op::MaxPool2 { x, argmax }), out_segs)
    }

    /// Nearest-neighbour upsampling by 2 into the layout `out_segs`, whose
    /// lengths must halve (rounding up) to the input lengths.
    pub fn upsample2(&mut self, x: Var, segs: &Segments, out_segs: &Segments) -> Var {
        assert_eq!(segs.len(), out_segs.len());
        let mut src_rows = Vec::with_capacity(out_segs.total());
        for i in 0..segs.len() {
            assert_eq!(
                out_segs.length(i).div_ceil(2),
                segs.length(i),
                "upsample2: incompatible lengths"
            );
            let start = segs.range(i).start;
            src_rows.extend((0..out_segs.length(i)).map(|t| start + t / 2));
        }
        let out = self.value(x).select(Axis(0), &src_rows);
        self.push(out, Op::Upsample2 { x, src_rows })
    }

    /// Mean over the rows of each segment; one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segs: &Segments) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((segs.len(), xv.ncols()));
        for (i, r) in segs.ranges().enumerate() {
            let n = r.len() as f64;
            out.row_mut(i)
                .assign(&(xv.slice(s![r, ..]).sum_axis(Axis(0)) / n));
        }
        self.push(
            out,
            Op::SegmentMean {
                x,
                segs: segs.clone(),
            },
        )
    }

    /// Flattens each segment row-major into one row of `width · c` entries,
    /// zero-filling positions past the segment end.
    pub fn segment_flatten(&mut self, x: Var, segs: &Segments, width: usize) -> Var {
        let xv = self.value(x);
        let c = xv.ncols();
        let mut out = Array2::zeros((segs.len(), width * c));
        for (i, r) in segs.ranges().enumerate() {
            assert!(r.len() <= width, "segment_flatten: segment longer than width");
            for (j, t) in r.enumerate() {
                out.slice_mut(s![i, j * c..(j + 1) * c]).assign(&xv.row(t));
            }
        }
        self.push(
            out,
            Op::SegmentFlatten {
                x,
                segs: segs.clone(),
            },
        )
    }

    /// Inverse of [`Graph::segment_flatten`]: row `i` of `x` is unpacked into
    /// the first `len_i` time steps of `c` channels each.
    pub fn segment_unflatten(&mut self, x: Var, segs: &Segments, c: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), segs.len());
        let mut out = Array2::zeros((segs.total(), c));
        for (i, r) in segs.ranges().enumerate() {
            assert!(r.len() * c <= xv.ncols(), "segment_unflatten: row too short");
            for (j, t) in r.enumerate() {
                out.row_mut(t).assign(&xv.slice(s![i, j * c..(j + 1) * c]));
            }
        }
        self.push(
            out,
            Op::SegmentUnflatten {
                x,
                segs: segs.clone(),
            },
        )
    }

    /// Replicates row `i` of `x` to every step of segment `i`.
    pub fn broadcast_segments(&mut self, x: Var, segs: &Segments) -> Var {
        assert_eq!(self.value(x).nrows(), segs.len());
        let rows: Vec<usize> = segs
            .ranges()
            .enumerate()
            .flat_map(|(i, r)| std::iter::repeat_n(i, r.len()))
            .collect();
        let out = self.value(x).select(Axis(0), &rows);
        self.push(
            out,
            Op::Broadcast {
                x,
                segs: segs.clone(),
            },
        )
    }

    /// Per-column batch normalization over all rows of `x`.
    ///
    /// With `fixed_stats = None` the batch mean and (biased) variance are
    /// used and can be read back with [`Graph::batch_norm_stats`]; otherwise
    /// the supplied running statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        fixed_stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.dim();
        let (mean, var, batch) = match fixed_stats {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mean: Vec<f64> = (0..c).map(|j| xv.column(j).sum() / n as f64).collect();
                let var: Vec<f64> = (0..c)
                    .map(|j| {
                        xv.column(j)
                            .iter()
                            .map(|v| (v - mean[j]).powi(2))
                            .sum::<f64>()
                            / n as f64
                    })
                    .collect();
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for j in 0..c {
            xhat.column_mut(j)
                .mapv_inplace(|v| (v - mean[j]) * inv_std[j]);
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let out = &xhat * gv + bv;
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: batch.then_some((mean, var)),
            },
        )
    }

    /// Batch mean and variance computed by a training-mode batch-norm node.
    pub fn batch_norm_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch_stats: Some((m, var)),
                ..
            } => Some((m, var)),
            _ => None,
        }
    }

    /// Weight normalization: column `o` of the result is `g_o · v_o / ‖v_o‖`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Var {
        let vv = self.value(v);
        let gv = self.value(g);
        assert_eq!(gv.dim(), (1, vv.ncols()));
        let norms: Vec<f64> = vv
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let mut out = vv.clone();
        for (o, mut col) in out.columns_mut().into_iter().enumerate() {
            let f = gv[[0, o]] / norms[o];
            col.mapv_inplace(|x| x * f);
        }
        self.push(out, Op::WeightNorm { v, g, norms })
    }

    /// Weighted softmax cross-entropy: `Σ_r weights[r] · -log softmax(logits_r)[targets[r]]`,
    /// returned as a 1×1 scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), weights.len());
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            assert!(t < lv.ncols(), "target class out of range");
            let row = lv.row(r);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += w * (lse - row[t]);
        }
        let out = Array2::from_elem((1, 1), loss);
        self.push(
            out,
            Op::SoftmaxCe {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Reverse pass from a scalar node; returns gradients of every parameter
    /// that the scalar depends on.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::empty(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => out.add_owned(*id, g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, g * c),
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|gv, &yv| *gv *= 1.0 - yv * yv);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|gv, &yv| *gv *= yv * (1.0 - yv));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|gv, &yv| {
                        if yv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Periodic(a) => {
                    let z = self.value(*a);
                    let mut ga = g;
                    for ((r, c), gv) in ga.indexed_iter_mut() {
                        if c > 0 {
                            *gv *= z[[r, c]].cos();
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SelectRows(a, rows) | Op::Upsample2 { x: a, src_rows: rows } => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Conv1d {
                    x,
                    w,
                    segs,
                    kernel,
                    dilation,
                    lookahead,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let c_in = xv.ncols();
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut gw = Array2::zeros(wv.raw_dim());
                    for_each_tap(segs, *kernel, *dilation, *lookahead, |tap, dst, src| {
                        let taps = tap * c_in..(tap + 1) * c_in;
                        let g_dst = g.slice(s![dst, ..]);
                        general_mat_mul(
                            1.0,
                            &g_dst,
                            &wv.slice(s![taps.clone(), ..]).t(),
                            1.0,
                            &mut gx.slice_mut(s![src.clone(), ..]),
                        );
                        general_mat_mul(
                            1.0,
                            &xv.slice(s![src, ..]).t(),
                            &g_dst,
                            1.0,
                            &mut gw.slice_mut(s![taps, ..]),
                        );
                    });
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::MaxPool2 { x, argmax } => {
                    let c = g.ncols();
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for ((r, ch), gv) in g.indexed_iter() {
                        gx[[argmax[r * c + ch], ch]] += gv;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentMean { x, segs } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (i, r) in segs.ranges().enumerate() {
                        let row = g.row(i).mapv(|v| v / r.len() as f64);
                        for t in r {
                            gx.row_mut(t).assign(&row);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentFlatten { x, segs } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    let c = gx.ncols();
                    for (i, r) in segs.ranges().enumerate() {
                        for (j, t) in r.enumerate() {
                            gx.row_mut(t).assign(&g.slice(s![i, j * c..(j + 1) * c]));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentUnflatten { x, segs } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    let c = g.ncols();
                    for (i, r) in segs.ranges().enumerate() {
                        for (j, t) in r.enumerate() {
                            gx.slice_mut(s![i, j * c..(j + 1) * c]).assign(&g.row(t));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Broadcast { x, segs } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (i, r) in segs.ranges().enumerate() {
                        gx.row_mut(i).assign(&g.slice(s![r, ..]).sum_axis(Axis(0)));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let gv = self.value(*gamma);
                    let n = xhat.nrows() as f64;
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for j in 0..xhat.ncols() {
                        let dcol = dxhat.column(j);
                        let xcol = xhat.column(j);
                        let mut gcol = gx.column_mut(j);
                        if batch_stats.is_some() {
                            let sum_d = dcol.sum();
                            let sum_dx = dcol.iter().zip(xcol.iter()).map(|(a, b)| a * b).sum::<f64>();
                            for r in 0..xcol.len() {
                                gcol[r] = inv_std[j] / n * (n * dcol[r] - sum_d - xcol[r] * sum_dx);
                            }
                        } else {
                            for r in 0..xcol.len() {
                                gcol[r] = inv_std[j] * dcol[r];
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::WeightNorm { v, g: gain, norms } => {
                    let vv = self.value(*v);
                    let gainv = self.value(*gain);
                    let mut gv = Array2::zeros(vv.raw_dim());
                    let mut ggain = Array2::zeros(gainv.raw_dim());
                    for o in 0..vv.ncols() {
                        let vhat = vv.column(o).mapv(|x| x / norms[o]);
                        let gcol = g.column(o);
                        let proj = gcol.dot(&vhat);
                        ggain[[0, o]] = proj;
                        let f = gainv[[0, o]] / norms[o];
                        let mut dst = gv.column_mut(o);
                        for r in 0..vhat.len() {
                            dst[r] = f * (gcol[r] - proj * vhat[r]);
                        }
                    }
                    acc(&mut grads, *v, gv);
                    acc(&mut grads, *gain, ggain);
                }
                Op::SoftmaxCe {
                    logits,
                    probs,
                    targets,
                    weights,
                } => {
                    let scale = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        gl[[r, t]] -= 1.0;
                        gl.row_mut(r).mapv_inplace(|v| v * w * scale);
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

/// Enumerates, per segment and kernel tap, the contiguous destination rows
/// and the source rows they read from.
fn for_each_tap(
    segs: &Segments,
    kernel: usize,
    dilation: usize,
    lookahead: usize,
    mut f: impl FnMut(usize, std::ops::Range<usize>, std::ops::Range<usize>),
) {
    for r in segs.ranges() {
        let (start, end) = (r.start as isize, r.end as isize);
        for tap in 0..kernel {
            let offset = lookahead as isize - (dilation * tap) as isize;
            let lo = start.max(start - offset);
            let hi = end.min(end - offset);
            if lo < hi {
                f(
                    tap,
                    lo as usize..hi as usize,
                    (lo + offset) as usize..(hi + offset) as usize,
                );
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a matrix of logits.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax of a matrix of logits.
pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
