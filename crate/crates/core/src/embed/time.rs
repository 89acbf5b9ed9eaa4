use std::f64::consts::TAU;

use hipal_autograd::{init, Graph, ParamId, ParamStore, Segments, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Added to an interval before taking its logarithm so that simultaneous
/// events (Δt = 0) stay finite.
pub const LOG_EPS: f64 = 1.0;

/// Per-row time inputs for a packed batch of timestamp sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeFeatures {
    /// `ln(Δt + ε)`; 0 on the first row of a sequence.
    pub log_dt: Tensor,
    /// 0 on the first row of each sequence, 1 elsewhere.
    pub not_first: Tensor,
    /// Seconds since the sequence origin.
    pub t_rel: Tensor,
    pub segs: Segments,
}

impl TimeFeatures {
    /// `seqs` pairs each time-sorted timestamp list with its origin.
    pub fn from_sequences<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [i64], i64)>,
    {
        let mut lengths = Vec::new();
        let (mut log_dt, mut not_first, mut t_rel) = (Vec::new(), Vec::new(), Vec::new());
        for (ts, origin) in seqs {
            lengths.push(ts.len());
            for (i, &t) in ts.iter().enumerate() {
                if i == 0 {
                    log_dt.push(0.0);
                    not_first.push(0.0);
                } else {
                    let dt = (t - ts[i - 1]).max(0) as f64;
                    log_dt.push((dt + LOG_EPS).ln());
                    not_first.push(1.0);
                }
                t_rel.push((t - origin) as f64);
            }
        }
        let n = t_rel.len();
        let col = |v: Vec<f64>| Tensor::from_shape_vec((n, 1), v).expect("column");
        Self {
            log_dt: col(log_dt),
            not_first: col(not_first),
            t_rel: col(t_rel),
            segs: Segments::from_lengths(&lengths),
        }
    }

    pub fn rows(&self) -> usize {
        self.t_rel.nrows()
    }
}

/// `tanh(W_b · ln(Δt + ε) + d_b)`, exactly zero for the first event.
#[derive(Clone, Debug)]
pub struct IntervalEmbedder {
    pub w: ParamId,
    pub b: ParamId,
    pub dim: usize,
}

impl IntervalEmbedder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        // Log-intervals reach ~12, so keep the initial slopes small.
        let w = store.add(format!("{prefix}.w"), init::uniform(1, dim, 0.25, rng));
        let b = store.add(format!("{prefix}.b"), init::uniform(1, dim, 1.0, rng));
        Self { w, b, dim }
    }

    pub fn forward(&self, g: &mut Graph, tf: &TimeFeatures) -> Var {
        let x = g.input(tf.log_dt.clone());
        let (w, b) = (g.param(self.w), g.param(self.b));
        let z = g.matmul(x, w);
        let z = g.add_row(z, b);
        let y = g.tanh(z);
        let mask = Tensor::from_shape_fn((tf.rows(), self.dim), |(r, _)| tf.not_first[[r, 0]]);
        g.mul_const(y, mask)
    }
}

/// Learnable periodic time features: entry 0 is `ω_0·t + φ_0`, entry
/// `j > 0` is `sin(ω_j·t + φ_j)`.
///
/// Frequencies are stored per `time_unit` seconds; [`Self::omega_per_second`]
/// gives the equivalent per-second values.
#[derive(Clone, Debug)]
pub struct PeriodicEmbedder {
    pub omega: ParamId,
    pub phi: ParamId,
    pub dim: usize,
    pub time_unit: f64,
}

const MIN_PERIOD: f64 = 60.0;
const MAX_PERIOD: f64 = 7.0 * 86_400.0;

impl PeriodicEmbedder {
    /// Frequencies follow a log-uniform grid of periods from one minute to
    /// one week (longest first); phases are uniform in [0, 2π).
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, time_unit: f64, rng: &mut R) -> Self {
        let omega = Tensor::from_shape_fn((1, dim), |(_, j)| {
            let frac = if dim > 1 { j as f64 / (dim - 1) as f64 } else { 0.0 };
            let period = MAX_PERIOD * (MIN_PERIOD / MAX_PERIOD).powf(frac);
            TAU * time_unit / period
        });
        let phi = Tensor::from_shape_fn((1, dim), |_| rng.random::<f64>() * TAU);
        Self {
            omega: store.add(format!("{prefix}.omega"), omega),
            phi: store.add(format!("{prefix}.phi"), phi),
            dim,
            time_unit,
        }
    }

    pub fn omega_per_second(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.omega).iter().map(|w| w / self.time_unit).collect()
    }

    /// Sets frequencies given in radians per second.
    pub fn set_omega_per_second(&self, store: &mut ParamStore, omega: &[f64]) {
        let unit = self.time_unit;
        for (dst, &w) in store.value_mut(self.omega).iter_mut().zip(omega) {
            *dst = w * unit;
        }
    }

    pub fn forward(&self, g: &mut Graph, tf: &TimeFeatures) -> Var {
        let x = g.input(&tf.t_rel / self.time_unit);
        let (w, p) = (g.param(self.omega), g.param(self.phi));
        let z = g.matmul(x, w);
        let z = g.add_row(z, p);
        g.periodic(z)
    }
}

/// Month-level interval and periodicity embedders over shift start times.
#[derive(Clone, Debug)]
pub struct ShiftTimeEmbedder {
    pub interval: IntervalEmbedder,
    pub periodic: PeriodicEmbedder,
}

impl ShiftTimeEmbedder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, time_unit: f64, rng: &mut R) -> Self {
        Self {
            interval: IntervalEmbedder::new(store, &format!("{prefix}.interval"), dim, rng),
            periodic: PeriodicEmbedder::new(store, &format!("{prefix}.periodic"), dim, time_unit, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.interval.dim + self.periodic.dim
    }

    /// `(p | q)` rows for every shift, where the features treat each month
    /// as a sequence of shift start times measured from the month start.
    pub fn forward(&self, g: &mut Graph, tf: &TimeFeatures) -> Var {
        let p = self.interval.forward(g, tf);
        let q = self.periodic.forward(g, tf);
        g.concat_cols(&[p, q])
    }

    /// `(p, q)` for a single month.
    pub fn embed_shift_times(&self, store: &ParamStore, starts: &[i64], month_start: i64) -> Result<(Tensor, Tensor)> {
        check_sorted(starts)?;
        let tf = TimeFeatures::from_sequences([(starts, month_start)]);
        let mut g = Graph::new(store);
        let p = self.interval.forward(&mut g, &tf);
        let q = self.periodic.forward(&mut g, &tf);
        Ok((g.value(p).clone(), g.value(q).clone()))
    }
}

fn check_sorted(ts: &[i64]) -> Result<()> {
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("timestamps must be non-decreasing".into()));
    }
    Ok(())
}

/// Interval embedding of a single gap; `None` marks the first event.
pub fn embed_interval(store: &ParamStore, emb: &IntervalEmbedder, dt: Option<i64>) -> Result<Vec<f64>> {
    let ts: Vec<i64> = match dt {
        None => vec![0],
        Some(d) if d < 0 => {
            return Err(Error::Contract(format!("negative interval {d}")));
        }
        Some(d) => vec![0, d],
    };
    let tf = TimeFeatures::from_sequences([(ts.as_slice(), 0)]);
    let mut g = Graph::new(store);
    let y = emb.forward(&mut g, &tf);
    Ok(g.value(y).row(ts.len() - 1).to_vec())
}

/// Periodicity embedding of `t` seconds past the origin.
pub fn embed_periodic(store: &ParamStore, emb: &PeriodicEmbedder, t: f64) -> Vec<f64> {
    let tf = TimeFeatures {
        log_dt: Tensor::zeros((1, 1)),
        not_first: Tensor::zeros((1, 1)),
        t_rel: Tensor::from_elem((1, 1), t),
        segs: Segments::single(1),
    };
    let mut g = Graph::new(store);
    let y = emb.forward(&mut g, &tf);
    g.value(y).row(0).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize) -> (ParamStore, IntervalEmbedder, PeriodicEmbedder) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let i = IntervalEmbedder::new(&mut s, "iv", dim, &mut rng);
        let p = PeriodicEmbedder::new(&mut s, "pe", dim, 3600.0, &mut rng);
        (s, i, p)
    }

    #[test]
    fn first_event_is_exact_zero() {
        let (s, i, _) = setup(6);
        assert_eq!(embed_interval(&s, &i, None).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn interval_inside_open_unit_interval() {
        let (s, i, _) = setup(6);
        for dt in [0, 1, 59, 3600, 86_400 * 30] {
            let v = embed_interval(&s, &i, Some(dt)).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1.0), "{dt}: {v:?}");
        }
        assert!(embed_interval(&s, &i, Some(-1)).is_err());
    }

    #[test]
    fn zero_interval_parameters_give_zero() {
        let (mut s, i, _) = setup(4);
        s.value_mut(i.w).fill(0.0);
        s.value_mut(i.b).fill(0.0);
        assert_eq!(embed_interval(&s, &i, Some(1234)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn interval_matches_direct_formula() {
        let (s, i, _) = setup(3);
        let v = embed_interval(&s, &i, Some(90)).unwrap();
        for j in 0..3 {
            let want = (s.value(i.w)[[0, j]] * 91f64.ln() + s.value(i.b)[[0, j]]).tanh();
            assert!((v[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_zero_parameters_give_zero() {
        let (mut s, _, p) = setup(5);
        s.value_mut(p.omega).fill(0.0);
        s.value_mut(p.phi).fill(0.0);
        assert_eq!(embed_periodic(&s, &p, 12345.0), vec![0.0; 5]);
    }

    #[test]
    fn periodic_entries_repeat_after_period() {
        let (s, _, p) = setup(5);
        let omega = p.omega_per_second(&s);
        let t = 777.0;
        let a = embed_periodic(&s, &p, t);
        for j in 1..5 {
            let b = embed_periodic(&s, &p, t + TAU / omega[j]);
            assert!((a[j] - b[j]).abs() < 1e-9);
            assert!(a[j].abs() <= 1.0);
        }
    }

    #[test]
    fn linear_entry_is_affine() {
        let (s, _, p) = setup(3);
        let w0 = p.omega_per_second(&s)[0];
        let t = 5000.0;
        let d = embed_periodic(&s, &p, 2.0 * t)[0] - embed_periodic(&s, &p, t)[0];
        assert!((d - w0 * t).abs() < 1e-9);
    }

    #[test]
    fn omega_grid_spans_minute_to_week() {
        let (s, _, p) = setup(50);
        let w = p.omega_per_second(&s);
        assert!((w[0] - TAU / MAX_PERIOD).abs() < 1e-15);
        assert!((w[49] - TAU / MIN_PERIOD).abs() < 1e-12);
        assert!(w.windows(2).all(|x| x[1] > x[0]));
    }

    #[test]
    fn shift_times_first_p_is_zero_and_day_gap_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let e = ShiftTimeEmbedder::new(&mut s, "hi", 4, 3600.0, &mut rng);
        s.value_mut(e.interval.w).fill(1.0);
        s.value_mut(e.interval.b).fill(0.0);
        let (p, q) = e.embed_shift_times(&s, &[1000, 1000 + 86_400], 0).unwrap();
        assert!(p.row(0).iter().all(|&v| v == 0.0));
        let want = (86_400.0f64 + LOG_EPS).ln().tanh();
        assert!(p.row(1).iter().all(|&v| (v - want).abs() < 1e-12));
        assert!(q.rows().into_iter().all(|r| r.iter().skip(1).all(|v| v.abs() <= 1.0)));
        assert!(e.embed_shift_times(&s, &[5, 1], 0).is_err());
    }
}
