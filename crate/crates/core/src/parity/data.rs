use ndarray::Array2;
use rand::Rng;

/// Bit sequences right-padded with zeros to the longest length in the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ParityBatch {
    /// `[batch, max_len]`, entries past a sequence's length are padding.
    pub bits: Array2<u8>,
    pub lengths: Vec<usize>,
    pub labels: Vec<u8>,
}

impl ParityBatch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.bits.ncols()
    }

    pub fn mask(&self) -> Array2<bool> {
        Array2::from_shape_fn(self.bits.dim(), |(b, t)| t < self.lengths[b])
    }

    pub fn from_sequences(seqs: &[Vec<u8>]) -> Self {
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut bits = Array2::zeros((seqs.len(), max_len));
        for (b, s) in seqs.iter().enumerate() {
            for (t, &x) in s.iter().enumerate() {
                bits[[b, t]] = x;
            }
        }
        ParityBatch {
            bits,
            lengths: seqs.iter().map(Vec::len).collect(),
            labels: seqs.iter().map(|s| parity(s)).collect(),
        }
    }
}

pub fn parity(bits: &[u8]) -> u8 {
    bits.iter().fold(0, |acc, &b| acc ^ (b & 1))
}

/// `batch` sequences of i.i.d. fair bits with lengths uniform in `[min_len, max_len]`.
pub fn parity_batch<R: Rng>(
    rng: &mut R,
    batch: usize,
    min_len: usize,
    max_len: usize,
) -> ParityBatch {
    let seqs: Vec<Vec<u8>> = (0..batch)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len);
            (0..len).map(|_| rng.random_range(0..2u8)).collect()
        })
        .collect();
    ParityBatch::from_sequences(&seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn labels() {
        assert_eq!(parity(&[1, 0, 1, 1]), 1);
        assert_eq!(parity(&[0; 17]), 0);
        assert_eq!(parity(&[]), 0);
    }

    #[test]
    fn padding_and_mask() {
        let b = ParityBatch::from_sequences(&[vec![1, 1, 1], vec![1]]);
        assert_eq!(b.max_len(), 3);
        assert_eq!(b.bits.row(1).to_vec(), vec![1, 0, 0]);
        assert_eq!(b.labels, vec![1, 1]);
        assert_eq!(b.mask().row(1).to_vec(), vec![true, false, false]);
    }

    #[test]
    fn lengths_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = parity_batch(&mut rng, 500, 40, 256);
        assert!(b.lengths.iter().all(|&l| (40..=256).contains(&l)));
        assert!(b.lengths.contains(&40) || b.lengths.iter().min().unwrap() < &50);
        for i in 0..b.len() {
            let len = b.lengths[i];
            assert_eq!(b.labels[i], parity(&b.bits.row(i).to_vec()[..len]));
        }
    }
}
