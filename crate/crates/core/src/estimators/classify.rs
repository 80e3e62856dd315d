use std::fmt;

use super::settling::StepRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PackageClass {
    Good,
    Bad,
    VeryBad,
}

impl PackageClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PackageClass::Good => "good",
            PackageClass::Bad => "bad",
            PackageClass::VeryBad => "very_bad",
        }
    }
}

impl fmt::Display for PackageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds are heuristics separating good packages (settled to the
/// 10^-4 level after 1 µs), ones with a slow 10^-3 tail, and ones with a
/// slow tail of tens of percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyConfig {
    pub horizon_us: f64,
    /// Time after the edge taken as the early reference level.
    pub reference_us: f64,
    /// Averaging window around the reference time and at the horizon.
    pub window_ns: f64,
    pub bad_from: f64,
    pub very_bad_from: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            horizon_us: 500.0,
            reference_us: 1.0,
            window_ns: 100.0,
            bad_from: 2e-3,
            very_bad_from: 5e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub class: PackageClass,
    /// |level at horizon - level at 1 µs| / step.
    pub late_settling: f64,
}

/// Classifies the slow settling of a step record with its edge at
/// `edge_ns`.
pub fn classify_package(rec: &dyn StepRecord, edge_ns: f64, cfg: &ClassifyConfig) -> Result<Classification> {
    if !(cfg.bad_from > 0.0 && cfg.very_bad_from > cfg.bad_from) {
        return Err(Error::param("thresholds", "need 0 < bad_from < very_bad_from"));
    }
    if !(cfg.window_ns > 0.0 && cfg.reference_us * 1e3 + cfg.window_ns < cfg.horizon_us * 1e3) {
        return Err(Error::param("horizon", "must exceed the reference time plus the window"));
    }
    let v = rec.values();
    let dt = 1e9 / rec.sample_rate();
    let horizon = edge_ns + cfg.horizon_us * 1e3;
    let end = rec.time_ns(v.len() - 1);
    if end + 0.5 * dt < horizon {
        return Err(Error::InsufficientData(format!(
            "record ends {:.3} us after the edge, horizon is {} us",
            (end - edge_ns) / 1e3,
            cfg.horizon_us
        )));
    }
    let mean_over = |a: f64, b: f64| -> Result<f64> {
        let (s, n) = (0..v.len())
            .filter(|&i| {
                let t = rec.time_ns(i);
                t >= a && t <= b
            })
            .fold((0.0, 0usize), |(s, n), i| (s + v[i], n + 1));
        if n == 0 {
            return Err(Error::InsufficientData(format!("no samples in [{a}, {b}] ns")));
        }
        Ok(s / n as f64)
    };
    let baseline = mean_over(f64::NEG_INFINITY, edge_ns - 0.5 * dt)?;
    let half = 0.5 * cfg.window_ns;
    let early_t = edge_ns + cfg.reference_us * 1e3;
    let early = mean_over(early_t - half, early_t + half)?;
    let last = mean_over(horizon - cfg.window_ns, horizon)?;
    let step = last - baseline;
    if step == 0.0 {
        return Err(Error::Degenerate("step amplitude is zero".into()));
    }
    let late = ((last - early) / step).abs();
    let class = if late < cfg.bad_from {
        PackageClass::Good
    } else if late < cfg.very_bad_from {
        PackageClass::Bad
    } else {
        PackageClass::VeryBad
    };
    Ok(Classification {
        class,
        late_settling: late,
    })
}
