//! Fixture builders shared by the benchmarks.

use earpipe_core::embedding::{splitmix64, EmbeddingTable};
use earpipe_core::verification::{PairPlan, ScoreSet};
use earpipe_core::{BinaryMask, Embedding};

fn unit(seed: u64, i: u64) -> f64 {
    (splitmix64(seed ^ splitmix64(i)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Genuine scores shifted up by 0.2 so the AUC is neither 0.5 nor 1.
pub fn score_set(genuine: usize, impostor: usize, seed: u64) -> ScoreSet {
    ScoreSet {
        genuine: (0..genuine as u64).map(|i| unit(seed, i) + 0.2).collect(),
        impostor: (0..impostor as u64).map(|i| unit(seed + 1, i)).collect(),
    }
}

/// A filled disk with salt-and-pepper noise at the given rate.
pub fn noisy_disk(size: u32, noise: f64, seed: u64) -> BinaryMask {
    let c = size as f64 / 2.0;
    let r2 = (size as f64 / 3.0).powi(2);
    BinaryMask::from_fn(size, size, |x, y| {
        let inside = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) < r2;
        let flip = unit(seed, u64::from(y * size + x)) < noise;
        inside ^ flip
    })
}

/// `identities` groups of `per_identity` random vectors of length `dim`.
pub fn embeddings(identities: usize, per_identity: usize, dim: usize, seed: u64) -> (EmbeddingTable, PairPlan) {
    let plan = PairPlan::from_sizes(&vec![per_identity; identities]).expect("non-empty groups");
    let mut table = EmbeddingTable::new();
    let mut n = 0u64;
    for (_, recs) in plan.groups() {
        for k in recs {
            let v: Vec<f32> = (0..dim as u64).map(|d| (unit(seed + n, d) * 2.0 - 1.0) as f32).collect();
            table.insert(k.clone(), Embedding::new(k.clone(), v).expect("valid vector"));
            n += 1;
        }
    }
    (table, plan)
}
