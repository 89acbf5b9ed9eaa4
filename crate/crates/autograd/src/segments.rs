use std::ops::Range;

/// Row layout of a packed (ragged) batch of sequences.
///
/// A batch of sequences with different lengths is stored as one matrix whose
/// rows are the concatenated time steps; `Segments` records where each
/// sequence starts. Sequence operations (convolution, pooling, per-sequence
/// reductions) never mix rows across segment boundaries, so packing is
/// equivalent to padding every sequence and masking the padded steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &l in lengths {
            acc += l;
            offsets.push(acc);
        }
        Self { offsets }
    }

    pub fn single(len: usize) -> Self {
        Self::from_lengths(&[len])
    }

    /// Number of sequences.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of rows.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn length(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    /// Layout after a stride-2 pooling step: each length becomes ceil(len / 2).
    pub fn halved(&self) -> Self {
        let lengths: Vec<usize> = self.lengths().iter().map(|&l| l.div_ceil(2)).collect();
        Self::from_lengths(&lengths)
    }

    /// Row index of the last step of every sequence.
    pub fn last_rows(&self) -> Vec<usize> {
        self.offsets[1..].iter().map(|&e| e - 1).collect()
    }
}
