//! Vose alias table for O(1) sampling from a finite distribution.

use rand::Rng;

#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Builds the table from nonnegative weights (need not be normalized).
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0, "alias table needs at least one outcome");
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        AliasTable { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// Index drawn from a single uniform in `[0, 1)`.
    #[inline]
    pub fn sample_with(&self, u: f64) -> usize {
        let x = u * self.prob.len() as f64;
        let i = (x as usize).min(self.prob.len() - 1);
        if x - (i as f64) < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_with(rng.random::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_gof;
    use rand::SeedableRng;

    #[test]
    fn exact_mass_by_uniform_grid() {
        // Integrating the selector over a fine uniform grid recovers the weights.
        let w = [0.1, 0.0, 0.45, 0.3, 0.15];
        let t = AliasTable::new(&w);
        let n = 1_000_000;
        let mut counts = [0u64; 5];
        for k in 0..n {
            counts[t.sample_with((k as f64 + 0.5) / n as f64)] += 1;
        }
        for (c, p) in counts.iter().zip(w) {
            assert!((*c as f64 / n as f64 - p).abs() < 1e-5);
        }
    }

    #[test]
    fn random_sampling_passes_chi_square() {
        let w = [0.6, 0.4];
        let t = AliasTable::new(&w);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u64; 2];
        for _ in 0..100_000 {
            counts[t.sample(&mut rng)] += 1;
        }
        assert!(chi_square_gof(&counts, &w).p_value > 0.001);
    }

    #[test]
    fn single_outcome() {
        let t = AliasTable::new(&[3.0]);
        assert_eq!(t.sample_with(0.999), 0);
    }
}
