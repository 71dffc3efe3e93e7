//! Sampling from the truncated families by table inversion.

use rand::Rng;

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::model::MixtureParams;
use crate::real::CompensatedSum;

const TAIL_EPS: f64 = 1e-13;
const MAX_SUPPORT: usize = 1 << 24;

/// Inverse-CDF sampler for one left-truncated distribution.
#[derive(Debug, Clone)]
pub struct TruncatedSampler {
    l: u64,
    cdf: Vec<f64>,
}

impl TruncatedSampler {
    pub fn new(spec: &DistributionSpec) -> Result<Self> {
        let l = spec.trunc.l as usize;
        let z = spec.ln_normalizer()?.exp();
        let mut x_max = (4 * l).max(256);
        loop {
            let table = spec.pmf_table(x_max)?;
            let mut acc = CompensatedSum::new();
            let cdf: Vec<f64> = table[l..]
                .iter()
                .map(|f| {
                    acc.add(f / z);
                    acc.value()
                })
                .collect();
            let last = *cdf.last().unwrap_or(&0.0);
            if last >= 1.0 - TAIL_EPS || x_max >= MAX_SUPPORT {
                return Ok(TruncatedSampler { l: l as u64, cdf });
            }
            x_max *= 4;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        self.l + k as u64
    }
}

/// `n` draws from the truncated distribution.
pub fn sample_truncated<R: Rng + ?Sized>(spec: &DistributionSpec, n: usize, rng: &mut R) -> Result<Vec<u64>> {
    let s = TruncatedSampler::new(spec)?;
    Ok((0..n).map(|_| s.sample(rng)).collect())
}

/// Sampler for a mixture of two truncated components.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    w: f64,
    major: TruncatedSampler,
    minor: Option<TruncatedSampler>,
}

impl MixtureSampler {
    pub fn new(mix: &MixtureParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix.w) {
            return Err(Error::domain(format!("mixture weight {} outside [0,1]", mix.w)));
        }
        let major = TruncatedSampler::new(&mix.major)?;
        let minor = if mix.w < 1.0 { Some(TruncatedSampler::new(&mix.minor)?) } else { None };
        Ok(MixtureSampler { w: mix.w, major, minor })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.minor {
            Some(minor) if rng.gen::<f64>() >= self.w => minor.sample(rng),
            _ => self.major.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{NbParams, Params, Truncation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empirical_frequencies_match_pmf() {
        let spec = DistributionSpec::new(Params::Nb(NbParams { r: 6.0, p: 0.5 }), Truncation { l: 5 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let draws = sample_truncated(&spec, n, &mut rng).unwrap();
        assert!(draws.iter().all(|&x| x >= 5));
        for x in [5u64, 6, 8, 12] {
            let freq = draws.iter().filter(|&&d| d == x).count() as f64 / n as f64;
            let p = spec.ln_pmf_truncated(x).unwrap().exp();
            assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "x={x}: {freq} vs {p}");
        }
    }
}
