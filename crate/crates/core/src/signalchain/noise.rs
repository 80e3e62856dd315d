use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Acquisition noise.
///
/// `phase_noise_deg` is an effective white phase noise per output sample.
/// Synchronization jitter alone, averaged over tens of thousands of traces,
/// leaves far less residual than is observed in practice; this knob absorbs
/// the difference (see [`NoiseConfig::for_residual`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Peak-to-peak per-trace timing offset between source and AWG, in s.
    pub jitter_pkpk: f64,
    /// White voltage noise relative to the unit signal amplitude.
    pub additive_noise_rms: f64,
    /// White phase noise per sample, in degrees.
    pub phase_noise_deg: f64,
    pub n_averages: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            jitter_pkpk: 20e-12,
            additive_noise_rms: 0.0,
            phase_noise_deg: 0.0,
            n_averages: 1,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// No noise of any kind.
    pub fn noiseless() -> Self {
        Self {
            jitter_pkpk: 0.0,
            ..Self::default()
        }
    }

    /// Phase noise chosen so that `n_averages` averaged traces leave
    /// `residual_deg` of per-sample noise.
    pub fn for_residual(residual_deg: f64, n_averages: usize, seed: u64) -> Self {
        Self {
            phase_noise_deg: residual_deg * (n_averages.max(1) as f64).sqrt(),
            n_averages,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("jitter_pkpk", self.jitter_pkpk),
            ("additive_noise_rms", self.additive_noise_rms),
            ("phase_noise_deg", self.phase_noise_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.n_averages == 0 {
            return Err(Error::param("n_averages", "must be >= 1"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.jitter_pkpk == 0.0 && self.additive_noise_rms == 0.0 && self.phase_noise_deg == 0.0
    }

    /// Independent generator for trace `index`, reproducible regardless of
    /// the order in which traces are produced.
    pub fn trace_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}
