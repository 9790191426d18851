//! Mini-batches mixing synthetic and user-written instances one to one.

use rand::seq::SliceRandom;
use rand::RngExt;

use super::DatagenError;
use crate::rng::Rng;

/// Indices into the synthetic and user sets making up one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedBatch {
    pub synthetic: Vec<usize>,
    pub user: Vec<usize>,
}

/// One pass over the synthetic set in shuffled order. Each batch holds
/// `ceil(b/2)` synthetic instances (the final batch wraps around to stay
/// full) and `floor(b/2)` user instances drawn with replacement.
pub fn mixed_batches(
    synthetic_len: usize,
    user_len: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<MixedBatch>, DatagenError> {
    if synthetic_len == 0 {
        return Err(DatagenError::EmptySet("synthetic"));
    }
    if user_len == 0 {
        return Err(DatagenError::EmptySet("user"));
    }
    let batch_size = batch_size.max(1);
    let (n_syn, n_user) = (batch_size.div_ceil(2), batch_size / 2);
    let mut order: Vec<usize> = (0..synthetic_len).collect();
    order.shuffle(rng);
    let batches = synthetic_len.div_ceil(n_syn);
    Ok((0..batches)
        .map(|b| MixedBatch {
            synthetic: (0..n_syn).map(|k| order[(b * n_syn + k) % synthetic_len]).collect(),
            user: (0..n_user).map(|_| rng.random_range(0..user_len)).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn halves() {
        let mut r = rng::seeded(1);
        let b = mixed_batches(1000, 40, 256, &mut r).unwrap();
        assert!(b.iter().all(|x| x.synthetic.len() == 128 && x.user.len() == 128));
        let b = mixed_batches(10, 4, 3, &mut r).unwrap();
        assert!(b.iter().all(|x| x.synthetic.len() == 2 && x.user.len() == 1));
        let mut seen: Vec<usize> = b.iter().flat_map(|x| x.synthetic.clone()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn single_user_instance_repeats() {
        let b = mixed_batches(9, 1, 4, &mut rng::seeded(2)).unwrap();
        assert!(b.iter().all(|x| x.user == vec![0, 0]));
    }

    #[test]
    fn empty_sets() {
        let mut r = rng::seeded(0);
        assert!(matches!(mixed_batches(0, 3, 4, &mut r), Err(DatagenError::EmptySet("synthetic"))));
        assert!(matches!(mixed_batches(3, 0, 4, &mut r), Err(DatagenError::EmptySet("user"))));
    }
}
