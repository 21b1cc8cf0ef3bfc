use rand::Rng;

use super::{DomainError, Problem};
use crate::SearchRng;

/// Count of ones.
pub fn score_onemax(bits: &[bool]) -> f64 {
    bits.iter().filter(|&&b| b).count() as f64
}

/// Concatenated deceptive trap: a block scores `block` when all ones,
/// otherwise `block - 1 - ones`.
pub fn score_trap(bits: &[bool], block: usize) -> Result<f64, DomainError> {
    if block == 0 || !bits.len().is_multiple_of(block) {
        return Err(DomainError::BadLength { len: bits.len(), block });
    }
    Ok(bits
        .chunks(block)
        .map(|chunk| {
            let ones = chunk.iter().filter(|&&b| b).count();
            if ones == block {
                block as f64
            } else {
                (block - 1 - ones) as f64
            }
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitObjective {
    OneMax,
    Trap { block: usize },
}

#[derive(Debug, Clone)]
pub struct BitProblem {
    name: String,
    objective: BitObjective,
    len: usize,
    active: Vec<bool>,
    exemplar: Option<Vec<bool>>,
}

impl BitProblem {
    pub fn onemax(len: usize) -> Self {
        BitProblem {
            name: "onemax".into(),
            objective: BitObjective::OneMax,
            len,
            active: vec![true; len],
            exemplar: None,
        }
    }

    pub fn trap(len: usize, block: usize) -> Result<Self, DomainError> {
        if block == 0 || !len.is_multiple_of(block) {
            return Err(DomainError::BadLength { len, block });
        }
        Ok(BitProblem {
            name: "trap".into(),
            objective: BitObjective::Trap { block },
            len,
            active: vec![true; len],
            exemplar: None,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn pinned(&self, i: usize) -> Option<bool> {
        if self.active[i] {
            None
        } else {
            self.exemplar.as_ref().map(|e| e[i])
        }
    }
}

impl Problem for BitProblem {
    type Genotype = Vec<bool>;

    fn name(&self) -> &str {
        &self.name
    }

    fn input_arity(&self) -> usize {
        self.len
    }

    fn score(&self, g: &Vec<bool>) -> f64 {
        match self.objective {
            BitObjective::OneMax => score_onemax(g),
            // length validated at construction
            BitObjective::Trap { block } => score_trap(g, block).unwrap_or(f64::NEG_INFINITY),
        }
    }

    fn target(&self) -> Option<f64> {
        Some(self.len as f64)
    }

    fn random_genotype(&self, rng: &mut SearchRng) -> Vec<bool> {
        (0..self.len)
            .map(|i| self.pinned(i).unwrap_or_else(|| rng.random_bool(0.5)))
            .collect()
    }

    fn mutate(&self, g: &Vec<bool>, rate: f64, rng: &mut SearchRng) -> Vec<bool> {
        let mut out = g.clone();
        for (i, bit) in out.iter_mut().enumerate() {
            if self.active[i] && rate > 0.0 && rng.random::<f64>() < rate {
                *bit = !*bit;
            }
        }
        out
    }

    fn crossover(&self, a: &Vec<bool>, b: &Vec<bool>, rng: &mut SearchRng) -> Vec<bool> {
        a.iter().zip(b).map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y }).collect()
    }

    fn default_mutation_rate(&self) -> f64 {
        1.0 / self.len.max(1) as f64
    }

    fn loci(&self, g: &Vec<bool>) -> Vec<u32> {
        g.iter().map(|&b| b as u32).collect()
    }

    fn locus_cardinality(&self) -> Vec<u32> {
        vec![2; self.len]
    }

    fn from_loci(&self, loci: &[u32], _rng: &mut SearchRng) -> Vec<bool> {
        loci.iter()
            .enumerate()
            .map(|(i, &v)| self.pinned(i).unwrap_or(v == 1))
            .collect()
    }

    fn d_geno(&self, a: &Vec<bool>, b: &Vec<bool>) -> f64 {
        a.iter().zip(b).filter(|(x, y)| x != y).count() as f64
            + a.len().abs_diff(b.len()) as f64
    }

    fn d_pheno(&self, a: &Vec<bool>, b: &Vec<bool>) -> f64 {
        (self.score(a) - self.score(b)).abs()
    }

    fn key(&self, g: &Vec<bool>) -> Vec<u8> {
        let mut out = vec![0u8; g.len().div_ceil(8)];
        for (i, &b) in g.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    fn render(&self, g: &Vec<bool>) -> String {
        g.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    fn restrict(&self, features: &[usize], exemplar: &Vec<bool>) -> Self {
        let mut active = vec![false; self.len];
        for &f in features {
            active[f] = true;
        }
        BitProblem { active, exemplar: Some(exemplar.clone()), ..self.clone() }
    }

    fn conform(&self, g: &Vec<bool>, _features: &[usize], _rng: &mut SearchRng) -> Vec<bool> {
        g.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn onemax_counts_ones() {
        assert_eq!(score_onemax(&[true; 50]), 50.0);
        assert_eq!(score_onemax(&[false, true, false]), 1.0);
    }

    #[test]
    fn trap_block_cases() {
        let block = |s: &str| s.chars().map(|c| c == '1').collect::<Vec<_>>();
        assert_eq!(score_trap(&block("11111"), 5).unwrap(), 5.0);
        assert_eq!(score_trap(&block("00000"), 5).unwrap(), 4.0);
        assert_eq!(score_trap(&block("11110"), 5).unwrap(), 0.0);
        assert_eq!(score_trap(&[true; 30], 5).unwrap(), 30.0);
        assert_eq!(score_trap(&[true; 7], 5), Err(DomainError::BadLength { len: 7, block: 5 }));
        assert!(BitProblem::trap(12, 5).is_err());
    }

    #[test]
    fn hamming_distance() {
        let p = BitProblem::onemax(8);
        let a = vec![true, false, true, false, true, false, true, false];
        let b: Vec<bool> = a.iter().map(|x| !x).collect();
        assert_eq!(p.d_geno(&a, &b), 8.0);
        assert_eq!(p.d_geno(&a, &a), 0.0);
    }

    #[test]
    fn zero_rate_mutation_is_identity() {
        let p = BitProblem::onemax(30);
        let mut rng = SearchRng::seed_from_u64(1);
        let g = p.random_genotype(&mut rng);
        assert_eq!(p.mutate(&g, 0.0, &mut rng), g);
    }

    #[test]
    fn restriction_pins_inactive_bits() {
        let p = BitProblem::onemax(10);
        let exemplar = vec![false; 10];
        let r = p.restrict(&[2, 5], &exemplar);
        let mut rng = SearchRng::seed_from_u64(3);
        for _ in 0..50 {
            let g = r.mutate(&r.random_genotype(&mut rng), 1.0, &mut rng);
            for (i, &bit) in g.iter().enumerate() {
                if i != 2 && i != 5 {
                    assert!(!bit);
                }
            }
            let sampled = r.from_loci(&[1; 10], &mut rng);
            assert_eq!(score_onemax(&sampled), 2.0);
        }
    }

    #[test]
    fn key_distinguishes_genotypes() {
        let p = BitProblem::onemax(9);
        let a = vec![false; 9];
        let mut b = a.clone();
        b[8] = true;
        assert_ne!(p.key(&a), p.key(&b));
    }
}
