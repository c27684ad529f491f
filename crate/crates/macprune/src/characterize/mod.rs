//! Transition distributions, partial-sum bins, and per-weight power and
//! delay profiles.

mod bins;
mod profile;

pub use bins::{assign_bin, build_bins, BinPartition};
pub use profile::{
    delay_profile, delay_profile_all, power_profile_all, DelayProfile, PowerProfile,
    WeightDelayEntry,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::WorkloadStats;

/// Empirical probability over the 256x256 activation transitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActDist {
    /// Row-major (from, to), sums to 1.
    pub probs: Vec<f64>,
}

impl ActDist {
    pub fn prob(&self, from: u8, to: u8) -> f64 {
        self.probs[from as usize * 256 + to as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability mass of |to - from| <= band.
    pub fn band_mass(&self, band: u16) -> f64 {
        let mut mass = 0.0;
        for from in 0..256u16 {
            for to in 0..256u16 {
                if from.abs_diff(to) <= band {
                    mass += self.probs[from as usize * 256 + to as usize];
                }
            }
        }
        mass
    }
}

/// Normalizes the workload's activation transition counts.
pub fn build_act_dist(stats: &WorkloadStats) -> Result<ActDist> {
    let total: u64 = stats.act_transitions.iter().sum();
    if total == 0 {
        return Err(Error::Input("workload produced no activation transitions".into()));
    }
    let probs = stats
        .act_transitions
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    Ok(ActDist { probs })
}

/// Probability over bin-to-bin partial-sum transitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinDist {
    pub k: usize,
    /// Row-major (from_bin, to_bin), sums to 1.
    pub probs: Vec<f64>,
}

impl BinDist {
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.k + to]
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Maps each sampled partial-sum transition onto bin indices and
/// normalizes the counts.
pub fn build_bin_dist(stats: &WorkloadStats, partition: &BinPartition) -> Result<BinDist> {
    let samples = stats.psum_transitions.items();
    if samples.is_empty() {
        return Err(Error::Input("workload recorded no partial-sum transitions".into()));
    }
    let k = partition.k();
    let mut counts = vec![0u64; k * k];
    for (from, to) in samples {
        counts[assign_bin(partition, from) * k + assign_bin(partition, to)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(BinDist { k, probs })
}

/// One combined stimulus: an activation transition paired with concrete
/// partial-sum values drawn from the sampled bin transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedTransition {
    pub a_from: u8,
    pub a_to: u8,
    pub p_from: u32,
    pub p_to: u32,
}

/// Draws `n` combined transitions: the activation transition from
/// `act_dist` and the bin transition from `bin_dist`, independently; the
/// concrete partial sums come uniformly from the chosen bins' member
/// lists. Fully determined by `seed`.
pub fn sample_combined(
    act_dist: &ActDist,
    bin_dist: &BinDist,
    partition: &BinPartition,
    n: usize,
    seed: u64,
) -> Result<Vec<CombinedTransition>> {
    if n == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    let act_cdf = Cdf::new(&act_dist.probs);
    let bin_cdf = Cdf::new(&bin_dist.probs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a_idx = act_cdf.draw(&mut rng);
        let b_idx = bin_cdf.draw(&mut rng);
        let (from_bin, to_bin) = (b_idx / bin_dist.k, b_idx % bin_dist.k);
        let p_from = draw_member(partition, from_bin, &mut rng)?;
        let p_to = draw_member(partition, to_bin, &mut rng)?;
        out.push(CombinedTransition {
            a_from: (a_idx / 256) as u8,
            a_to: (a_idx % 256) as u8,
            p_from,
            p_to,
        });
    }
    Ok(out)
}

fn draw_member(partition: &BinPartition, bin: usize, rng: &mut ChaCha8Rng) -> Result<u32> {
    let members = partition.members(bin);
    if members.is_empty() {
        return Err(Error::Input(format!("bin {bin} has no members")));
    }
    Ok(members[rng.random_range(0..members.len())])
}

/// Cumulative distribution with binary-search draws.
struct Cdf {
    cum: Vec<f64>,
}

impl Cdf {
    fn new(probs: &[f64]) -> Cdf {
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in probs {
            acc += p;
            cum.push(acc);
        }
        Cdf { cum }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cum.last().expect("non-empty distribution");
        let u: f64 = rng.random_range(0.0..total);
        self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{Reservoir, TileStats, WorkloadStats};

    pub(crate) fn stats_with(
        act: &[((u8, u8), u64)],
        psum_transitions: &[(u32, u32)],
    ) -> WorkloadStats {
        let mut act_transitions = vec![0u64; 65536];
        for &((from, to), c) in act {
            act_transitions[from as usize * 256 + to as usize] = c;
        }
        let mut values = Reservoir::new(1 << 16, 0);
        let mut transitions = Reservoir::new(1 << 16, 1);
        for (i, &(a, b)) in psum_transitions.iter().enumerate() {
            values.offer(2 * i as u64, a);
            values.offer(2 * i as u64 + 1, b);
            transitions.offer(i as u64, (a, b));
        }
        WorkloadStats {
            rows: 1,
            cols: 1,
            act_transitions,
            psum_values: values,
            psum_transitions: transitions,
            tiles: vec![TileStats { layer: 0, weight_map: vec![Some(1)], cycles: 1 }],
            total_cycles: 1,
        }
    }

    #[test]
    fn act_dist_normalizes_counts() {
        let stats = stats_with(&[((5, 5), 3), ((5, 6), 1)], &[(0, 1)]);
        let d = build_act_dist(&stats).unwrap();
        assert!((d.prob(5, 5) - 0.75).abs() < 1e-12);
        assert!((d.prob(5, 6) - 0.25).abs() < 1e-12);
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_counts_give_uniform_probs() {
        let mut stats = stats_with(&[], &[(0, 1)]);
        stats.act_transitions = vec![7; 65536];
        let d = build_act_dist(&stats).unwrap();
        assert!((d.prob(0, 0) - 1.0 / 65536.0).abs() < 1e-15);
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_workload_is_an_error() {
        let stats = stats_with(&[], &[]);
        assert!(build_act_dist(&stats).is_err());
        let p = build_bins(&[1, 2, 3], 2, 0, 16).unwrap();
        assert!(build_bin_dist(&stats, &p).is_err());
    }

    #[test]
    fn bin_dist_normalizes() {
        // 9 transitions staying in the low bin, 1 crossing.
        let low = 0x000000u32;
        let low2 = 0x000001u32;
        let high = 0x3FFFFFu32;
        let mut transitions = vec![(low, low2); 9];
        transitions.push((low, high));
        let stats = stats_with(&[((0, 0), 1)], &transitions);
        let p = build_bins(&[low, low2, high], 2, 7, 16).unwrap();
        let d = build_bin_dist(&stats, &p).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        let b_low = assign_bin(&p, low);
        let b_high = assign_bin(&p, high);
        assert!((d.prob(b_low, b_low) - 0.9).abs() < 1e-12);
        assert!((d.prob(b_low, b_high) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn point_mass_sampling_repeats_one_transition() {
        let stats = stats_with(&[((9, 17), 4)], &[(33, 44), (33, 44)]);
        let p = build_bins(&[33, 44], 2, 3, 16).unwrap();
        let act = build_act_dist(&stats).unwrap();
        let bins = build_bin_dist(&stats, &p).unwrap();
        let samples = sample_combined(&act, &bins, &p, 50, 5).unwrap();
        assert_eq!(samples.len(), 50);
        for s in &samples {
            assert_eq!((s.a_from, s.a_to), (9, 17));
            // Both partial sums come from the sampled bin pair.
            assert!([33, 44].contains(&s.p_from));
            assert!([33, 44].contains(&s.p_to));
        }
        // Determinism contract.
        let again = sample_combined(&act, &bins, &p, 50, 5).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn sampling_tracks_distribution_within_3_sigma() {
        // Two activation transitions at 0.75/0.25; multinomial check.
        let stats = stats_with(&[((5, 5), 3), ((5, 6), 1)], &[(0, 1)]);
        let act = build_act_dist(&stats).unwrap();
        let p = build_bins(&[0, 1], 2, 3, 16).unwrap();
        let bins = build_bin_dist(&stats, &p).unwrap();
        let n = 10_000;
        let samples = sample_combined(&act, &bins, &p, n, 11).unwrap();
        let hits = samples.iter().filter(|s| (s.a_from, s.a_to) == (5, 5)).count() as f64;
        let expect = 0.75 * n as f64;
        let sigma = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((hits - expect).abs() < 3.0 * sigma, "hits {hits} expect {expect}");
    }
}
