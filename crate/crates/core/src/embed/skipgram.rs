use hipal_autograd::{init, Adam, Graph, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ActionEmbedding;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Context radius: up to `window` actions on each side.
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Centre positions per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramResult {
    pub embedding: ActionEmbedding,
    /// Mean per-pair cross-entropy of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Context positions of `i` in a sequence of length `n`, truncated at the
/// sequence boundaries.
pub(crate) fn context_positions(i: usize, n: usize, window: usize) -> impl Iterator<Item = usize> {
    (i.saturating_sub(window)..(i + window + 1).min(n)).filter(move |&j| j != i)
}

/// Trains action embeddings whose rows predict the surrounding actions
/// through a full softmax over the vocabulary.
pub fn pretrain_skipgram(sequences: &[Vec<u32>], vocab_size: usize, cfg: &SkipGramConfig) -> Result<SkipGramResult> {
    if !sequences.iter().any(|s| s.len() >= 2) {
        return Err(Error::Validation("skip-gram needs a sequence with at least two actions".into()));
    }
    if let Some(c) = sequences.iter().flatten().find(|&&c| c as usize >= vocab_size) {
        return Err(Error::Validation(format!("action code {c} outside vocabulary")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let emb = store.add("W_a", ActionEmbedding::random(vocab_size, cfg.dim, &mut rng).matrix);
    let out = store.add("out.w", init::uniform(cfg.dim, vocab_size, 0.5 / cfg.dim as f64, &mut rng));
    let bias = store.add("out.b", init::zeros(1, vocab_size));

    let mut centres: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= 2)
        .flat_map(|(k, s)| (0..s.len()).map(move |i| (k, i)))
        .collect();
    let mut opt = Adam::new(cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        centres.shuffle(&mut rng);
        let (mut total, mut pairs) = (0.0, 0usize);
        for chunk in centres.chunks(cfg.batch_size.max(1)) {
            let mut rows = Vec::new();
            let mut targets = Vec::new();
            let codes: Vec<usize> = chunk.iter().map(|&(k, i)| sequences[k][i] as usize).collect();
            for (r, &(k, i)) in chunk.iter().enumerate() {
                let s = &sequences[k];
                for j in context_positions(i, s.len(), cfg.window) {
                    rows.push(r);
                    targets.push(s[j] as usize);
                }
            }
            let n = targets.len();
            let weights = vec![1.0 / n as f64; n];
            let grads = {
                let mut g = Graph::new(&store);
                let table = g.param(emb);
                let h = g.select_rows(table, &codes);
                let (w, b) = (g.param(out), g.param(bias));
                let logits = g.matmul(h, w);
                let logits = g.add_row(logits, b);
                let logits = g.select_rows(logits, &rows);
                let loss = g.softmax_cross_entropy(logits, &targets, &weights);
                total += g.scalar(loss) * n as f64;
                g.backward(loss)
            };
            pairs += n;
            opt.step(&mut store, &grads);
        }
        epoch_losses.push(total / pairs as f64);
    }
    Ok(SkipGramResult {
        embedding: ActionEmbedding {
            matrix: store.value(emb).clone(),
        },
        epoch_losses,
    })
}
