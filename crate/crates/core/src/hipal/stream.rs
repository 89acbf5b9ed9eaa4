use hipal_autograd::{softmax_rows, Graph, Tensor};

use super::HiPALModel;
use crate::embed::TimeFeatures;
use crate::encoders::truncate_recent;
use crate::error::{Error, Result};
use crate::logstore::{Action, Shift};
use crate::nn::{ForwardCtx, LstmState};

/// Online inference over a month: shifts arrive one at a time and each
/// arrival updates the recurrent state and yields the current estimates.
pub struct StreamingPredictor<'m> {
    model: &'m HiPALModel,
    origin: i64,
    h: Tensor,
    c: Tensor,
    last_start: Option<i64>,
    shifts_seen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamUpdate {
    /// Monthly burnout probability given the shifts so far.
    pub gamma: f64,
    /// Daily risk of the shift just observed.
    pub alpha: f64,
}

impl<'m> StreamingPredictor<'m> {
    pub fn new(model: &'m HiPALModel, window_start: i64) -> Self {
        let n = model.cfg.lstm_hidden;
        Self {
            model,
            origin: window_start,
            h: Tensor::zeros((1, n)),
            c: Tensor::zeros((1, n)),
            last_start: None,
            shifts_seen: 0,
        }
    }

    pub fn shifts_seen(&self) -> usize {
        self.shifts_seen
    }

    pub fn push(&mut self, shift: &Shift) -> Result<StreamUpdate> {
        self.push_events(shift.events())
    }

    pub fn push_events(&mut self, events: &[Action]) -> Result<StreamUpdate> {
        let m = self.model;
        let events = truncate_recent(events, m.cfg.encoder.max_steps);
        let start = events
            .first()
            .ok_or_else(|| Error::Validation("empty shift".into()))?
            .timestamp;
        if self.last_start.is_some_and(|prev| start < prev) {
            return Err(Error::Contract("shifts must arrive in time order".into()));
        }
        let mut g = Graph::new(&m.store);
        let mut ctx = ForwardCtx::eval();
        let h = m.encode_shifts(&mut g, &[events], &mut ctx)?;
        let (starts, row) = match self.last_start {
            Some(prev) => (vec![prev, start], 1),
            None => (vec![start], 0),
        };
        let tf = TimeFeatures::from_sequences([(starts.as_slice(), self.origin)]);
        let pq = m.high.forward(&mut g, &tf);
        let pq = g.select_rows(pq, &[row]);
        let r = g.concat_cols(&[h, pq]);
        let tc = m.tc.forward(&mut g, r);
        let state = LstmState {
            h: g.input(self.h.clone()),
            c: g.input(self.c.clone()),
        };
        let next = m.lstm.step(&mut g, r, &state);
        let logits = m.classify(&mut g, next.h, &mut ctx);
        let update = StreamUpdate {
            gamma: softmax_rows(g.value(logits))[[0, 1]],
            alpha: softmax_rows(g.value(tc))[[0, 1]],
        };
        self.h = g.value(next.h).clone();
        self.c = g.value(next.c).clone();
        self.last_start = Some(start);
        self.shifts_seen += 1;
        Ok(update)
    }
}
