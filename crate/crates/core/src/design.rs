//! Space-filling and factorial designs on the integer grid.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::catalog::PoolConfig;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Scrambled Halton sequence: each dimension uses its own prime base with a
/// seeded digit permutation, and the sequence starts at a seeded offset.
#[derive(Debug, Clone)]
pub struct ScrambledHalton {
    perms: Vec<Vec<u32>>,
    bases: Vec<u32>,
    index: u64,
}

impl ScrambledHalton {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let bases: Vec<u32> = PRIMES[..dims].to_vec();
        let perms = bases
            .iter()
            .map(|&b| {
                let mut p: Vec<u32> = (0..b).collect();
                // keep 0 fixed so the permuted radical inverse stays in [0, 1)
                p[1..].shuffle(&mut rng);
                p
            })
            .collect();
        let index = rng.random_range(1..1024);
        ScrambledHalton { perms, bases, index }
    }

    fn radical_inverse(&self, dim: usize, mut i: u64) -> f64 {
        let b = u64::from(self.bases[dim]);
        let perm = &self.perms[dim];
        let inv_b = 1.0 / b as f64;
        let mut scale = inv_b;
        let mut out = 0.0;
        while i > 0 {
            let digit = (i % b) as usize;
            out += f64::from(perm[digit]) * scale;
            scale *= inv_b;
            i /= b;
        }
        out
    }

    /// Next point in `[0, 1)^dims`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        (0..self.bases.len()).map(|d| self.radical_inverse(d, i)).collect()
    }

    /// Next point mapped onto `[0, m_d]` per dimension.
    pub fn next_config(&mut self, bounds: &[u32]) -> PoolConfig {
        let u = self.next_point();
        PoolConfig::new(
            u.iter()
                .zip(bounds)
                .map(|(&u, &m)| ((u * f64::from(m + 1)).floor() as u32).min(m))
                .collect(),
        )
    }
}

/// Face-centered central composite design on levels `{0, round(m/2), m}`:
/// `2^n` corners, `2n` face centers and the center, coincident points removed.
/// Corners come first, then face centers, then the center.
pub fn face_centered_ccd(bounds: &[u32]) -> Vec<PoolConfig> {
    let n = bounds.len();
    let mid: Vec<u32> = bounds.iter().map(|&m| (f64::from(m) / 2.0).round() as u32).collect();
    let mut points = Vec::with_capacity((1 << n) + 2 * n + 1);
    for mask in 0..(1u64 << n) {
        points.push(PoolConfig::new(
            (0..n)
                .map(|d| if mask >> (n - 1 - d) & 1 == 1 { bounds[d] } else { 0 })
                .collect(),
        ));
    }
    for d in 0..n {
        for level in [0, bounds[d]] {
            let mut c = mid.clone();
            c[d] = level;
            points.push(PoolConfig::new(c));
        }
    }
    points.push(PoolConfig::new(mid));
    let mut seen = HashSet::new();
    points.retain(|p| seen.insert(p.clone()));
    points
}

/// Uniform configuration in the grid.
pub fn random_config<R: Rng + ?Sized>(bounds: &[u32], rng: &mut R) -> PoolConfig {
    PoolConfig::new(bounds.iter().map(|&m| rng.random_range(0..=m)).collect())
}
