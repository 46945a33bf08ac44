//! Planted-structure generator for blocked rare-class data.
//!
//! Every block holds `block_size` cases of which 1 to `max_positives` are
//! positive. Each positive belongs to one of two subpopulations, A or B,
//! with equal probability. Two latent scores are drawn per case,
//!
//! ```text
//! z_A ~ N(shift_a * [positive of type A], 1)
//! z_B ~ N(shift_b * [positive of type B], 1)
//! ```
//!
//! and each is hidden inside a pair of features that share a nuisance term
//! `u ~ N(0, nuisance^2)`:
//!
//! ```text
//! x1 = z_A + u_A      x2 = u_A - z_A
//! x3 = z_B + u_B      x4 = u_B - z_B
//! ```
//!
//! A single feature of a pair sees its latent score through the nuisance;
//! a model on both recovers it exactly, so each pair is jointly predictive.
//! The two pairs detect different positives, so an average of their two
//! models ranks better than either alone and better than one model on all
//! four features. The remaining `n_noise` features are independent N(0, 1).
//!
//! Feature layout (0-based): pair A at 0 and 1, pair B at 2 and 3, noise
//! from 4 on.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::BlockedDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_blocks: usize,
    pub block_size: usize,
    pub max_positives: usize,
    pub shift_a: f64,
    pub shift_b: f64,
    pub nuisance: f64,
    pub n_noise: usize,
}

impl Default for PlantedConfig {
    /// 40 blocks of 100 cases, 1 to 3 positives per block (2% on average),
    /// six noise features.
    fn default() -> Self {
        PlantedConfig {
            n_blocks: 40,
            block_size: 100,
            max_positives: 3,
            shift_a: 3.0,
            shift_b: 3.0,
            nuisance: 2.0,
            n_noise: 6,
        }
    }
}

impl PlantedConfig {
    /// A quicker variant for unit tests.
    pub fn small() -> Self {
        PlantedConfig {
            n_blocks: 12,
            block_size: 60,
            n_noise: 2,
            ..PlantedConfig::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        4 + self.n_noise
    }
}

/// Which subpopulation each positive came from; `None` for negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveKind {
    A,
    B,
}

pub struct Planted {
    pub dataset: BlockedDataset,
    pub kinds: Vec<Option<PositiveKind>>,
}

pub fn planted_pairs(config: &PlantedConfig, seed: u64) -> BlockedDataset {
    planted_pairs_with_kinds(config, seed).dataset
}

pub fn planted_pairs_with_kinds(config: &PlantedConfig, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.n_vars();
    let n = config.n_blocks * config.block_size;
    let mut block_ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);

    for b in 0..config.n_blocks {
        let h = rng.gen_range(1..=config.max_positives.min(config.block_size));
        let mut kind = vec![None; config.block_size];
        for pos in sample(&mut rng, config.block_size, h) {
            kind[pos] = Some(if rng.gen_bool(0.5) { PositiveKind::A } else { PositiveKind::B });
        }
        for k in kind {
            let mut normal = || rng.sample::<f64, _>(StandardNormal);
            let z_a = normal() + if k == Some(PositiveKind::A) { config.shift_a } else { 0.0 };
            let z_b = normal() + if k == Some(PositiveKind::B) { config.shift_b } else { 0.0 };
            let u_a = config.nuisance * normal();
            let u_b = config.nuisance * normal();
            features.extend([z_a + u_a, u_a - z_a, z_b + u_b, u_b - z_b]);
            for _ in 0..config.n_noise {
                features.push(normal());
            }
            block_ids.push(format!("B{:03}", b + 1));
            labels.push(k.is_some() as u8);
            kinds.push(k);
        }
    }

    let dataset = BlockedDataset::new(block_ids, None, Some(labels), features, d)
        .expect("generator produces a valid dataset");
    Planted { dataset, kinds }
}
