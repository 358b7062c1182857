use std::collections::HashSet;

use crate::numerics::Rng;

pub const MAX_RESAMPLES: usize = 100;

/// Draws `count` negative destinations per positive `(src, dst)` uniformly
/// from `candidates`. A draw is rejected when it equals the source or forms a
/// pair that occurs among the batch positives (in either direction); after
/// [`MAX_RESAMPLES`] rejections the last draw is accepted.
pub fn negative_sample(positives: &[(usize, usize)], candidates: &[usize], rng: &mut Rng, count: usize) -> Vec<Vec<usize>> {
    if candidates.is_empty() {
        return vec![Vec::new(); positives.len()];
    }
    let present: HashSet<(usize, usize)> = positives
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    positives
        .iter()
        .map(|&(i, _)| {
            (0..count)
                .map(|_| {
                    let mut pick = candidates[rng.below(candidates.len())];
                    for _ in 0..MAX_RESAMPLES {
                        if pick != i && !present.contains(&(i, pick)) {
                            break;
                        }
                        pick = candidates[rng.below(candidates.len())];
                    }
                    pick
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_returns_the_batch_positive() {
        let mut r = Rng::new(0, 0);
        let pos = vec![(0, 1), (0, 2), (3, 4)];
        let cand: Vec<usize> = (0..6).collect();
        for negs in negative_sample(&pos, &cand, &mut r, 50).iter().zip(&pos) {
            let (n, &(i, _)) = negs;
            assert!(n.iter().all(|&j| j != i && !pos.contains(&(i, j))));
        }
    }

    #[test]
    fn exhaustion_falls_back() {
        let mut r = Rng::new(0, 0);
        let n = negative_sample(&[(0, 1)], &[0, 1], &mut r, 3);
        assert_eq!(n[0].len(), 3);
    }
}
