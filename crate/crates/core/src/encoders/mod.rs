//! Low-level sequence encoders mapping an embedded event sequence to one
//! fixed-size vector: FCN, CausalNet and ResTCN.

use hipal_autograd::{init, Graph, ParamId, ParamStore, Segments, Tensor, Var};
use rand::Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::logstore::Action;
use crate::nn::{BatchNorm, ForwardCtx, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Fcn,
    CausalNet,
    ResTcn,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn" => Ok(Self::Fcn),
            "causalnet" => Ok(Self::CausalNet),
            "restcn" => Ok(Self::ResTcn),
            other => Err(Error::Config(format!("unknown encoder architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fcn => "fcn",
            Self::CausalNet => "causalnet",
            Self::ResTcn => "restcn",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub arch: Arch,
    /// Convolution layers (FCN: blocks).
    pub n_layers: usize,
    /// Output channels per layer; a single entry applies to every layer.
    pub filters: Vec<usize>,
    /// Kernel width per layer; a single entry applies to every layer.
    pub kernels: Vec<usize>,
    pub dilation_base: usize,
    /// Explicit per-layer dilations, overriding the architecture schedule.
    pub dilations: Option<Vec<usize>>,
    pub dropout: f64,
    /// Longer inputs keep only their most recent `max_steps` events.
    pub max_steps: usize,
    /// Width of `h` for CausalNet; the other architectures emit their last
    /// layer's channels.
    pub out_dim: usize,
}

impl EncoderConfig {
    /// Per-shift defaults of the hierarchical model.
    pub fn hierarchical(arch: Arch) -> Self {
        match arch {
            Arch::Fcn => Self {
                arch,
                n_layers: 3,
                filters: vec![128, 256, 128],
                kernels: vec![8, 5, 3],
                dilation_base: 1,
                dilations: None,
                dropout: 0.3,
                max_steps: 3000,
                out_dim: 128,
            },
            Arch::CausalNet | Arch::ResTcn => Self {
                arch,
                n_layers: 6,
                filters: vec![64],
                kernels: vec![5],
                dilation_base: 2,
                dilations: None,
                dropout: 0.3,
                max_steps: 3000,
                out_dim: 64,
            },
        }
    }

    /// Whole-month defaults of the single-level baselines.
    pub fn single_level(arch: Arch) -> Self {
        match arch {
            Arch::Fcn => Self {
                n_layers: 6,
                filters: vec![128, 256, 128, 128, 256, 128],
                kernels: vec![8, 5, 3, 8, 5, 3],
                max_steps: 50_000,
                ..Self::hierarchical(arch)
            },
            Arch::CausalNet | Arch::ResTcn => Self {
                n_layers: 12,
                kernels: vec![7],
                dilation_base: 3,
                max_steps: 50_000,
                ..Self::hierarchical(arch)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.dilation_base == 0 {
            return Err(Error::Config("dilation base must be at least 1".into()));
        }
        for (name, v) in [("filters", &self.filters), ("kernels", &self.kernels)] {
            if v.len() != 1 && v.len() != self.n_layers {
                return Err(Error::Config(format!("{name} must list 1 or n_layers values")));
            }
            if v.contains(&0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(d) = &self.dilations {
            if d.len() != self.n_layers || d.contains(&0) {
                return Err(Error::Config("dilations must list n_layers positive values".into()));
            }
        }
        if self.arch == Arch::ResTcn && !self.n_layers.is_multiple_of(2) {
            return Err(Error::Config("restcn layers come in pairs".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.out_dim == 0 {
            return Err(Error::Config("out_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn filters_at(&self, layer: usize) -> usize {
        self.filters[if self.filters.len() == 1 { 0 } else { layer }]
    }

    pub fn kernel_at(&self, layer: usize) -> usize {
        self.kernels[if self.kernels.len() == 1 { 0 } else { layer }]
    }

    /// CausalNet grows the dilation every layer, ResTCN every residual
    /// block of two layers, FCN never.
    pub fn dilations(&self) -> Vec<usize> {
        if let Some(d) = &self.dilations {
            return d.clone();
        }
        (0..self.n_layers)
            .map(|l| match self.arch {
                Arch::Fcn => 1,
                Arch::CausalNet => self.dilation_base.pow(l as u32),
                Arch::ResTcn => self.dilation_base.pow((l / 2) as u32),
            })
            .collect()
    }

    pub fn h_dim(&self) -> usize {
        match self.arch {
            Arch::CausalNet => self.out_dim,
            _ => self.filters_at(self.n_layers - 1),
        }
    }

    /// Number of stride-2 pooling steps (CausalNet only).
    pub fn pool_layers(&self) -> usize {
        match self.arch {
            Arch::CausalNet => self.n_layers - 1,
            _ => 0,
        }
    }

    /// Sequence length after every layer of CausalNet, starting from
    /// `max_steps`.
    pub fn pooled_lengths(&self, input: usize) -> Vec<usize> {
        let mut lens = vec![input];
        for _ in 0..self.pool_layers() {
            let last = *lens.last().expect("non-empty");
            lens.push(last.div_ceil(2));
        }
        lens
    }

    pub fn flatten_width(&self) -> usize {
        *self.pooled_lengths(self.max_steps).last().expect("non-empty")
    }

    pub fn to_kv(&self) -> KvConfig {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut kv = KvConfig::new();
        kv.set("arch", self.arch.to_string());
        kv.set("n_layers", self.n_layers.to_string());
        kv.set("filters", join(&self.filters));
        kv.set("kernels", join(&self.kernels));
        kv.set("dilation_base", self.dilation_base.to_string());
        if let Some(d) = &self.dilations {
            kv.set("dilations", join(d));
        }
        kv.set("dropout", self.dropout.to_string());
        kv.set("max_steps", self.max_steps.to_string());
        kv.set("out_dim", self.out_dim.to_string());
        kv
    }

    /// Starts from the architecture's defaults for `single_level` or the
    /// hierarchical setting and applies the given keys.
    pub fn from_kv(kv: &KvConfig, single_level: bool) -> Result<Self> {
        let arch: Arch = kv.get("arch")?.unwrap_or(Arch::CausalNet);
        let mut c = if single_level {
            Self::single_level(arch)
        } else {
            Self::hierarchical(arch)
        };
        kv.read_into("n_layers", &mut c.n_layers)?;
        if let Some(f) = kv.get_list("filters")? {
            c.filters = f;
        }
        if let Some(k) = kv.get_list("kernels")? {
            c.kernels = k;
        }
        kv.read_into("dilation_base", &mut c.dilation_base)?;
        if let Some(d) = kv.get_list("dilations")? {
            c.dilations = Some(d);
        }
        kv.read_into("dropout", &mut c.dropout)?;
        kv.read_into("max_steps", &mut c.max_steps)?;
        kv.read_into("out_dim", &mut c.out_dim)?;
        c.validate()?;
        Ok(c)
    }
}

/// `1 + Σ (k_l − 1)·d_l` over the stacked convolutions.
pub fn receptive_field(cfg: &EncoderConfig) -> usize {
    1 + cfg
        .dilations()
        .iter()
        .enumerate()
        .map(|(l, d)| (cfg.kernel_at(l) - 1) * d)
        .sum::<usize>()
}

/// The most recent `max_steps` events.
pub fn truncate_recent(events: &[Action], max_steps: usize) -> &[Action] {
    &events[events.len().saturating_sub(max_steps)..]
}

/// Removes padded rows from a right-padded batch. `mask[b][t]` marks valid
/// steps, which must form a non-empty prefix of each sequence.
pub fn pack_padded(padded: &[Tensor], mask: &[Vec<bool>]) -> Result<(Tensor, Segments)> {
    let mut rows = Vec::new();
    let mut lengths = Vec::with_capacity(padded.len());
    for (x, m) in padded.iter().zip(mask) {
        let n = m.iter().take_while(|&&v| v).count();
        if n == 0 || m[n..].iter().any(|&v| v) {
            return Err(Error::Contract("padding mask must be a non-empty prefix".into()));
        }
        lengths.push(n);
        rows.extend((0..n).map(|t| x.row(t).to_owned()));
    }
    let c = padded.first().map_or(0, |x| x.ncols());
    let mut out = Tensor::zeros((rows.len(), c));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok((out, Segments::from_lengths(&lengths)))
}

/// Convolution weights of one layer, `kernel·c_in × c_out`.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub v: ParamId,
    /// Weight-norm gain (ResTCN only).
    pub gain: Option<ParamId>,
    pub bias: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub lookahead: usize,
}

impl ConvLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        lookahead: usize,
        weight_norm: bool,
        rng: &mut R,
    ) -> Self {
        let v = init::he(kernel * c_in, c_out, kernel * c_in, rng);
        let gain = weight_norm.then(|| {
            let norms: Vec<f64> = v
                .columns()
                .into_iter()
                .map(|c| c.dot(&c).sqrt())
                .collect();
            store.add(
                format!("{name}.g"),
                Tensor::from_shape_vec((1, c_out), norms).expect("row"),
            )
        });
        Self {
            v: store.add(format!("{name}.v"), v),
            gain,
            bias: store.add(format!("{name}.b"), init::zeros(1, c_out)),
            kernel,
            dilation,
            lookahead,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, segs: &Segments) -> Var {
        let v = g.param(self.v);
        let w = match self.gain {
            Some(gain) => {
                let gv = g.param(gain);
                g.weight_norm(v, gv)
            }
            None => v,
        };
        let y = g.conv1d(x, w, segs, self.kernel, self.dilation, self.lookahead);
        let b = g.param(self.bias);
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
    skip: Option<Linear>,
}

#[derive(Clone, Debug)]
enum Body {
    Fcn { convs: Vec<ConvLayer>, norms: Vec<BatchNorm> },
    CausalNet { convs: Vec<ConvLayer>, head: Linear },
    ResTcn { blocks: Vec<ResBlock> },
}

/// Output of one internal layer with its layout. `stride` is the number of
/// input steps each output step summarizes (2^pools).
pub struct LayerTrace {
    pub value: Var,
    pub segs: Segments,
    pub stride: usize,
}

/// A low-level encoder whose parameters live in a shared store under a
/// name prefix.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub in_dim: usize,
    pub prefix: String,
    body: Body,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, in_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let dil = cfg.dilations();
        let body = match cfg.arch {
            Arch::Fcn => {
                let mut convs = Vec::new();
                let mut norms = Vec::new();
                let mut c_in = in_dim;
                for l in 0..cfg.n_layers {
                    let (k, c_out) = (cfg.kernel_at(l), cfg.filters_at(l));
                    let name = format!("{prefix}.block{l}");
                    convs.push(ConvLayer::new(store, &format!("{name}.conv"), c_in, c_out, k, dil[l], k / 2, false, rng));
                    norms.push(BatchNorm::new(store, &format!("{name}.bn"), c_out));
                    c_in = c_out;
                }
                Body::Fcn { convs, norms }
            }
            Arch::CausalNet => {
                let mut convs = Vec::new();
                let mut c_in = in_dim;
                for l in 0..cfg.n_layers {
                    let (k, c_out) = (cfg.kernel_at(l), cfg.filters_at(l));
                    convs.push(ConvLayer::new(store, &format!("{prefix}.layer{l}"), c_in, c_out, k, dil[l], 0, false, rng));
                    c_in = c_out;
                }
                let flat = cfg.flatten_width() * c_in;
                let head = Linear::new(store, &format!("{prefix}.head"), flat, cfg.out_dim, rng);
                Body::CausalNet { convs, head }
            }
            Arch::ResTcn => {
                let mut blocks = Vec::new();
                let mut c_in = in_dim;
                for b in 0..cfg.n_layers / 2 {
                    let (l1, l2) = (2 * b, 2 * b + 1);
                    let name = format!("{prefix}.block{b}");
                    let f1 = cfg.filters_at(l1);
                    let f2 = cfg.filters_at(l2);
                    let conv1 = ConvLayer::new(store, &format!("{name}.conv1"), c_in, f1, cfg.kernel_at(l1), dil[l1], 0, true, rng);
                    let conv2 = ConvLayer::new(store, &format!("{name}.conv2"), f1, f2, cfg.kernel_at(l2), dil[l2], 0, true, rng);
                    let skip = (c_in != f2).then(|| Linear::new(store, &format!("{name}.skip"), c_in, f2, rng));
                    blocks.push(ResBlock { conv1, conv2, skip });
                    c_in = f2;
                }
                Body::ResTcn { blocks }
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            in_dim,
            prefix: prefix.to_owned(),
            body,
        })
    }

    pub fn h_dim(&self) -> usize {
        self.cfg.h_dim()
    }

    /// Runs every layer and returns the per-step outputs of each, before
    /// the final aggregation into `h`.
    pub fn trace(&self, g: &mut Graph, x: Var, segs: &Segments, ctx: &mut ForwardCtx) -> Vec<LayerTrace> {
        let p = self.cfg.dropout;
        let mut out = Vec::new();
        match &self.body {
            Body::Fcn { convs, norms } => {
                let mut h = x;
                for (conv, bn) in convs.iter().zip(norms) {
                    let y = conv.forward(g, h, segs);
                    let y = bn.forward(g, y, ctx);
                    h = g.relu(y);
                    out.push(LayerTrace {
                        value: h,
                        segs: segs.clone(),
                        stride: 1,
                    });
                }
            }
            Body::CausalNet { convs, .. } => {
                let mut h = x;
                let mut cur = segs.clone();
                let mut stride = 1;
                for (l, conv) in convs.iter().enumerate() {
                    let y = conv.forward(g, h, &cur);
                    let y = g.relu(y);
                    out.push(LayerTrace {
                        value: y,
                        segs: cur.clone(),
                        stride,
                    });
                    h = y;
                    if l + 1 < convs.len() {
                        let (pooled, psegs) = g.max_pool2(y, &cur);
                        h = pooled;
                        cur = psegs;
                        stride *= 2;
                    }
                }
            }
            Body::ResTcn { blocks } => {
                let mut h = x;
                for b in blocks {
                    let y = b.conv1.forward(g, h, segs);
                    let y = g.relu(y);
                    let y = ctx.dropout(g, y, p);
                    let y = b.conv2.forward(g, y, segs);
                    let y = g.relu(y);
                    let y = ctx.dropout(g, y, p);
                    let skip = match &b.skip {
                        Some(lin) => lin.forward(g, h),
                        None => h,
                    };
                    let sum = g.add(y, skip);
                    h = g.relu(sum);
                    out.push(LayerTrace {
                        value: h,
                        segs: segs.clone(),
                        stride: 1,
                    });
                }
            }
        }
        out
    }

    /// Encodes every segment of the packed input `x` into one row of `h`.
    pub fn forward(&self, g: &mut Graph, x: Var, segs: &Segments, ctx: &mut ForwardCtx) -> Var {
        let trace = self.trace(g, x, segs, ctx);
        let last = trace.last().expect("at least one layer");
        match &self.body {
            Body::Fcn { .. } => g.segment_mean(last.value, segs),
            Body::CausalNet { head, .. } => {
                let flat = g.segment_flatten(last.value, &last.segs, self.cfg.flatten_width());
                head.forward(g, flat)
            }
            Body::ResTcn { .. } => g.select_rows(last.value, &segs.last_rows()),
        }
    }

    /// Parameter-name prefix shared by every parameter of this encoder.
    pub fn param_prefix(&self) -> String {
        format!("{}.", self.prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn receptive_field_closed_forms() {
        let c = EncoderConfig {
            n_layers: 1,
            kernels: vec![2],
            ..EncoderConfig::hierarchical(Arch::CausalNet)
        };
        assert_eq!(receptive_field(&c), 2);
        let mut c = EncoderConfig::hierarchical(Arch::CausalNet);
        c.kernels = vec![5];
        assert_eq!(c.dilations(), vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(receptive_field(&c), 253);
        assert_eq!(EncoderConfig::hierarchical(Arch::ResTcn).dilations(), vec![1, 1, 2, 2, 4, 4]);
    }

    #[test]
    fn single_level_restcn_uses_base_three() {
        let c = EncoderConfig::single_level(Arch::ResTcn);
        assert_eq!(c.n_layers, 12);
        assert_eq!(c.dilations()[10], 243);
        assert_eq!(c.kernel_at(3), 7);
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let acts: Vec<Action> = (0..10).map(|t| Action { timestamp: t, code: 0 }).collect();
        let kept = truncate_recent(&acts, 3);
        assert_eq!(kept.iter().map(|a| a.timestamp).collect::<Vec<_>>(), vec![7, 8, 9]);
        assert_eq!(truncate_recent(&acts, 50).len(), 10);
    }

    #[test]
    fn config_round_trips_through_kv() {
        let mut c = EncoderConfig::hierarchical(Arch::Fcn);
        c.max_steps = 77;
        assert_eq!(EncoderConfig::from_kv(&c.to_kv(), false).unwrap(), c);
        c.filters = vec![1, 2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn fixed_h_dim_for_any_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for arch in [Arch::Fcn, Arch::CausalNet, Arch::ResTcn] {
            let mut cfg = EncoderConfig::hierarchical(arch);
            cfg.filters = vec![3];
            cfg.kernels = vec![3];
            cfg.n_layers = 2;
            cfg.max_steps = 60;
            cfg.out_dim = 5;
            let mut s = ParamStore::new();
            let enc = Encoder::new(&mut s, "enc", &cfg, 4, &mut rng).unwrap();
            let segs = Segments::from_lengths(&[1, 60]);
            let mut g = Graph::new(&s);
            let x = g.input(init::uniform(61, 4, 1.0, &mut rng));
            let h = enc.forward(&mut g, x, &segs, &mut ForwardCtx::eval());
            assert_eq!(g.value(h).dim(), (2, cfg.h_dim()), "{arch}");
        }
    }
}
