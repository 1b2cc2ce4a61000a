use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    ByScene,
    ByVideo,
}

impl Grouping {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scene" | "by-scene" => Ok(Grouping::ByScene),
            "video" | "by-video" => Ok(Grouping::ByVideo),
            other => Err(Error::Config(format!("unknown grouping {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub ratio: f64,
    pub grouping: Grouping,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for run `index` of stream `stream` under `master`:
/// `splitmix64(master + golden * (stream * 2^32 + index + 1))`.
pub fn derive_seed(master: u64, stream: u32, index: u32) -> u64 {
    let counter = ((stream as u64) << 32 | index as u64).wrapping_add(1);
    mix(master.wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Shuffles groups with `seed` and assigns the first `ceil(ratio * G)` to
/// the training side, keeping at least one group on each side.
pub fn split(manifest: &DatasetManifest, ratio: f64, grouping: Grouping, seed: u64) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &manifest.records {
        let key = match grouping {
            Grouping::ByScene => r.scene_id.as_str(),
            Grouping::ByVideo => r.video_id.as_str(),
        };
        groups.entry(key).or_default().push(r.video_id.as_str());
    }
    let g = groups.len();
    if g < 2 {
        return Err(Error::InvalidInput(format!("split needs at least 2 groups, found {g}")));
    }
    let mut keys: Vec<&str> = groups.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The small slack keeps products like 0.7 * 10 from rounding up past 7.
    let n_train = ((ratio * g as f64 - 1e-9).ceil() as usize).clamp(1, g - 1);
    let collect = |ks: &[&str]| -> Vec<String> {
        ks.iter()
            .flat_map(|k| groups[k].iter().map(|s| s.to_string()))
            .collect()
    };
    Ok(SplitPlan {
        seed,
        ratio,
        grouping,
        train_ids: collect(&keys[..n_train]),
        test_ids: collect(&keys[n_train..]),
    })
}
