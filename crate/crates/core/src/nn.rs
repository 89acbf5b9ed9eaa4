//! Layer building blocks shared by the encoders and the models.

use hipal_autograd::{init, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-forward state: training flag, dropout randomness and the batch
/// statistics that training-mode batch-norm layers produced.
pub struct ForwardCtx<'r> {
    pub train: bool,
    rng: Option<&'r mut ChaCha8Rng>,
    bn: Vec<(BatchNorm, Var)>,
}

/// Batch statistics harvested from a finished forward pass.
pub struct BnUpdates(Vec<(ParamId, ParamId, Vec<f64>, Vec<f64>)>);

impl<'r> ForwardCtx<'r> {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: None,
            bn: Vec::new(),
        }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        Self {
            train: true,
            rng: Some(rng),
            bn: Vec::new(),
        }
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let rng = self.rng.as_deref_mut().expect("training context carries an rng");
        let (r, c) = g.value(x).dim();
        let keep = 1.0 - p;
        let mask = Tensor::from_shape_simple_fn((r, c), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        g.mul_const(x, mask)
    }

    pub fn bn_updates(&self, g: &Graph) -> BnUpdates {
        BnUpdates(
            self.bn
                .iter()
                .filter_map(|(bn, v)| {
                    g.batch_norm_stats(*v)
                        .map(|(m, s)| (bn.mean, bn.var, m.to_vec(), s.to_vec()))
                })
                .collect(),
        )
    }
}

impl BnUpdates {
    /// Exponential moving average of the running statistics.
    pub fn apply(&self, store: &mut ParamStore) {
        for (mean, var, m, v) in &self.0 {
            for (dst, src) in store.value_mut(*mean).iter_mut().zip(m) {
                *dst = (1.0 - BN_MOMENTUM) * *dst + BN_MOMENTUM * src;
            }
            for (dst, src) in store.value_mut(*var).iter_mut().zip(v) {
                *dst = (1.0 - BN_MOMENTUM) * *dst + BN_MOMENTUM * src;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.w"), init::xavier(fan_in, fan_out, rng)),
            b: store.add(format!("{name}.b"), init::zeros(1, fan_out)),
        }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: store.add(format!("{name}.w"), init::zeros(fan_in, fan_out)),
            b: store.add(format!("{name}.b"), init::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), init::constant(1, c, 1.0)),
            beta: store.add(format!("{name}.beta"), init::zeros(1, c)),
            mean: store.add_buffer(format!("{name}.running_mean"), init::zeros(1, c)),
            var: store.add_buffer(format!("{name}.running_var"), init::constant(1, c, 1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, ctx: &mut ForwardCtx) -> Var {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        if ctx.train {
            let y = g.batch_norm(x, gm, bt, None, BN_EPS);
            ctx.bn.push((*self, y));
            y
        } else {
            let store = g.store();
            let mean = store.value(self.mean).iter().copied().collect::<Vec<_>>();
            let var = store.value(self.var).iter().copied().collect::<Vec<_>>();
            g.batch_norm(x, gm, bt, Some((&mean, &var)), BN_EPS)
        }
    }
}

/// Single-layer LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = init::xavier(input + hidden, 4 * hidden, rng);
        let mut b = init::zeros(1, 4 * hidden);
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), b),
            input,
            hidden,
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        LstmState {
            h: g.input(Tensor::zeros((1, self.hidden))),
            c: g.input(Tensor::zeros((1, self.hidden))),
        }
    }

    /// One step on a `1 × input` row.
    pub fn step(&self, g: &mut Graph, x: Var, s: &LstmState) -> LstmState {
        let n = self.hidden;
        let (w, b) = (g.param(self.w), g.param(self.b));
        let xh = g.concat_cols(&[x, s.h]);
        let z = g.matmul(xh, w);
        let z = g.add_row(z, b);
        let zi = g.slice_cols(z, 0, n);
        let zf = g.slice_cols(z, n, n);
        let zg = g.slice_cols(z, 2 * n, n);
        let zo = g.slice_cols(z, 3 * n, n);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, s.c);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }

    /// Runs over the rows of `xs` and returns the hidden state after each.
    pub fn run(&self, g: &mut Graph, xs: Var) -> Vec<Var> {
        let t = g.value(xs).nrows();
        let mut s = self.zero_state(g);
        let mut out = Vec::with_capacity(t);
        for k in 0..t {
            let x = g.select_rows(xs, &[k]);
            s = self.step(g, x, &s);
            out.push(s.h);
        }
        out
    }
}
