use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorpusManifest;
use crate::error::{config_err, Result};

/// Domain-balanced epoch sampler: a source subset fixed for the whole run
/// and a fresh target draw every epoch. Epochs are pure functions of
/// `(seed, epoch)`, so any epoch can be regenerated out of order.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    source_subset: Vec<String>,
    target_pool: Vec<String>,
    n_per_domain: usize,
    seed: u64,
    with_replacement: bool,
}

impl EpochSampler {
    pub fn new(manifest: &CorpusManifest, n_per_domain: usize, seed: u64, with_replacement: bool) -> Result<Self> {
        if manifest.source_ids.is_empty() || manifest.target_ids.is_empty() {
            return config_err("epoch sampling needs samples in both domains");
        }
        if n_per_domain == 0 {
            return config_err("n_per_domain must be positive");
        }
        if !with_replacement && n_per_domain > manifest.source_ids.len().min(manifest.target_ids.len()) {
            return config_err(format!(
                "n_per_domain {n_per_domain} exceeds domain sizes {}/{} without replacement",
                manifest.source_ids.len(),
                manifest.target_ids.len()
            ));
        }
        let mut rng = Self::rng(seed, 0);
        let source_subset = draw(&mut rng, &manifest.source_ids, n_per_domain, with_replacement);
        Ok(Self {
            source_subset,
            target_pool: manifest.target_ids.clone(),
            n_per_domain,
            seed,
            with_replacement,
        })
    }

    fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    pub fn source_subset(&self) -> &[String] {
        &self.source_subset
    }

    pub fn n_per_domain(&self) -> usize {
        self.n_per_domain
    }

    /// Ids for `epoch`, alternating source and target.
    pub fn epoch(&self, epoch: usize) -> Vec<String> {
        let mut rng = Self::rng(self.seed, epoch as u64 + 1);
        let mut sources = self.source_subset.clone();
        sources.shuffle(&mut rng);
        let targets = draw(&mut rng, &self.target_pool, self.n_per_domain, self.with_replacement);
        sources.into_iter().zip(targets).flat_map(|(s, t)| [s, t]).collect()
    }
}

fn draw(rng: &mut ChaCha8Rng, pool: &[String], n: usize, with_replacement: bool) -> Vec<String> {
    if with_replacement {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
    } else {
        index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect()
    }
}

/// First epoch of a fresh sampler.
pub fn sample_epoch(manifest: &CorpusManifest, n_per_domain: usize, seed: u64) -> Result<Vec<String>> {
    Ok(EpochSampler::new(manifest, n_per_domain, seed, false)?.epoch(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn manifest(ns: usize, nt: usize) -> CorpusManifest {
        CorpusManifest {
            source_ids: (0..ns).map(|i| format!("s{i}")).collect(),
            target_ids: (0..nt).map(|i| format!("t{i}")).collect(),
            image_dims: (32, 32),
            seed: 0,
            noise_amplitude: 0.05,
        }
    }

    #[test]
    fn balanced_counts() {
        let ids = sample_epoch(&manifest(4, 4), 2, 1).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(ids.iter().filter(|i| i.starts_with('s')).count(), 2);
        assert!(ids[0].starts_with('s') && ids[1].starts_with('t'));
    }

    #[test]
    fn fixed_sources_fresh_targets() {
        let sampler = EpochSampler::new(&manifest(50, 50), 10, 3, false).unwrap();
        let split = |ids: Vec<String>| -> (HashSet<String>, Vec<String>) {
            (ids.iter().filter(|i| i.starts_with('s')).cloned().collect(), ids.into_iter().filter(|i| i.starts_with('t')).collect())
        };
        let (s0, t0) = split(sampler.epoch(0));
        let (s1, t1) = split(sampler.epoch(1));
        assert_eq!(s0, s1);
        assert_ne!(t0, t1);
        let uniq: HashSet<_> = t0.iter().collect();
        assert_eq!(uniq.len(), 10);
    }

    #[test]
    fn reproducible_across_runs() {
        let a = EpochSampler::new(&manifest(20, 30), 5, 9, false).unwrap();
        let b = EpochSampler::new(&manifest(20, 30), 5, 9, false).unwrap();
        for e in 0..4 {
            assert_eq!(a.epoch(e), b.epoch(e));
        }
    }

    #[test]
    fn empty_domain_is_an_error() {
        assert!(EpochSampler::new(&manifest(4, 0), 1, 0, false).is_err());
        assert!(EpochSampler::new(&manifest(4, 4), 5, 0, false).is_err());
        assert_eq!(EpochSampler::new(&manifest(4, 4), 5, 0, true).unwrap().epoch(0).len(), 10);
    }
}
