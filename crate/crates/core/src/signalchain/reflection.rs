//! Transient reflections between the resonator and a spurious impedance
//! step, and the family-spread analysis used to bound them.

use num_complex::Complex64;

use super::trace::PhaseTrace;
use crate::error::{Error, Result};

/// Bounces are summed until r^n falls below this.
const TRUNCATION: f64 = 1e-10;

/// Aggregate spurious reflector seen from the resonator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionScenario {
    /// Reflection magnitude in dB; `-inf` means no reflection.
    pub amplitude_db: f64,
    /// Resonator to reflector propagation delay, in ns.
    pub one_way_delay_ns: f64,
    /// Orientation of the spurious reflection phasor, in degrees.
    pub reflection_phase_deg: f64,
    /// Resonator to digitizer propagation delay, in ns.
    pub chain_delay_ns: f64,
}

impl ReflectionScenario {
    pub fn new(amplitude_db: f64, one_way_delay_ns: f64, reflection_phase_deg: f64) -> Result<Self> {
        let s = Self {
            amplitude_db,
            one_way_delay_ns,
            reflection_phase_deg,
            chain_delay_ns: 10.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude_db.is_nan() || self.amplitude_db >= 0.0 {
            return Err(Error::param(
                "amplitude_db",
                format!("must be < 0 dB, got {}", self.amplitude_db),
            ));
        }
        for (field, v) in [
            ("one_way_delay", self.one_way_delay_ns),
            ("chain_delay", self.chain_delay_ns),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(field, format!("must be >= 0 ns, got {v}")));
            }
        }
        if !self.reflection_phase_deg.is_finite() {
            return Err(Error::param("reflection_phase", "must be finite"));
        }
        Ok(())
    }

    /// Linear reflection magnitude.
    pub fn magnitude(&self) -> f64 {
        10f64.powf(self.amplitude_db / 20.0)
    }

    /// Scattering parameters (S11, S21, S22) of the lossless two-port that
    /// sits between the probe line and the resonator.
    fn s_params(&self) -> (Complex64, f64, Complex64) {
        let r = self.magnitude();
        let phi = self.reflection_phase_deg.to_radians();
        (
            Complex64::from_polar(r, phi),
            (1.0 - r * r).sqrt(),
            Complex64::from_polar(-r, -phi),
        )
    }
}

/// Reflection of an impedance step from `z1` into `z_t` (real impedances),
/// as (amplitude in dB, phase in degrees).
pub fn reflection_from_impedances(z_t: f64, z1: f64) -> Result<(f64, f64)> {
    if !(z_t.is_finite() && z_t > 0.0) {
        return Err(Error::param("z_t", "must be > 0"));
    }
    if !(z1.is_finite() && z1 > 0.0) {
        return Err(Error::param("z1", "must be > 0"));
    }
    let r = (z_t - z1) / (z_t + z1);
    let phase = if r < 0.0 { 180.0 } else { 0.0 };
    Ok((20.0 * r.abs().log10(), phase))
}

/// Individual phasors of the output sum for a fixed sequence of resonator
/// angles: the spurious reflection first, then bounce n (n = 1, 2, ...)
/// for which the wave has visited the resonator n times, the k-th visit
/// seeing `angles_deg[k]` (most recent first).
pub fn bounce_terms(scenario: &ReflectionScenario, angles_deg: &[f64]) -> Result<Vec<Complex64>> {
    scenario.validate()?;
    let (s11, s21, s22) = scenario.s_params();
    let mut terms = vec![s11];
    let mut visits = Complex64::new(s21 * s21, 0.0);
    for (k, a) in angles_deg.iter().enumerate() {
        visits *= Complex64::from_polar(1.0, a.to_radians());
        if k > 0 {
            visits *= s22;
        }
        terms.push(visits);
    }
    Ok(terms)
}

fn bounce_count(r: f64) -> usize {
    if r <= 0.0 {
        return 0;
    }
    let n = (TRUNCATION.ln() / r.ln()).ceil();
    (n.max(1.0) as usize).min(100_000)
}

/// Phase of the reflected wave including multiple bounces between the
/// resonator and the scenario's reflector.
///
/// `schedule` holds the resonator reflection angle versus time. Each bounce
/// revisits the resonator 2τ earlier, so the output at t sums phasors built
/// from θ(t), θ(t - 2τ), θ(t - 4τ), ... with the schedule held at its first
/// value before the record starts. The direct path through the reflector is
/// taken as the time origin.
pub fn bounce_series(schedule: &PhaseTrace, scenario: &ReflectionScenario) -> Result<PhaseTrace> {
    scenario.validate()?;
    let r = scenario.magnitude();
    if r == 0.0 {
        return Ok(schedule.with_phase(schedule.phase_deg().to_vec()));
    }
    let (s11, s21, s22) = scenario.s_params();
    let n_terms = bounce_count(r);
    let round_trip = 2.0 * scenario.one_way_delay_ns;
    let out = (0..schedule.len())
        .map(|j| {
            let t = schedule.time_ns(j);
            let theta = schedule.phase_deg()[j];
            let mut visits = Complex64::new(s21 * s21, 0.0);
            let mut sum = Complex64::new(0.0, 0.0);
            for k in 0..n_terms {
                let a = if k == 0 {
                    theta
                } else {
                    schedule.phase_at(t - k as f64 * round_trip)
                };
                visits *= Complex64::from_polar(1.0, a.to_radians());
                if k > 0 {
                    visits *= s22;
                }
                sum += visits;
            }
            let v = s11 + sum;
            // referenced to the schedule so the output stays on its branch
            (v * Complex64::from_polar(1.0, -theta.to_radians())).arg().to_degrees() + theta
        })
        .collect();
    Ok(schedule.with_phase(out))
}

/// Settings of [`theta_err_scan`]. Times are relative to the flux edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub edge_ns: f64,
    /// Samples before this offset are ignored.
    pub start_ns: f64,
    pub window_ns: f64,
}

impl ScanConfig {
    pub fn new(edge_ns: f64, window_ns: f64) -> Self {
        Self {
            edge_ns,
            start_ns: 0.0,
            window_ns,
        }
    }
}

/// Family spread versus time after the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaScan {
    pub times_ns: Vec<f64>,
    pub spread_deg: Vec<f64>,
    pub max_spread_deg: f64,
    /// Time of the largest spread.
    pub t_max_ns: f64,
    /// Half-height crossing on the trailing side of the spread peak. For a
    /// reflector this is the round trip 2τ, where the plateau ends.
    pub t_peak_ns: f64,
    /// Median spread over the second half of the window.
    pub noise_floor_deg: f64,
    /// Time after which the spread stays below twice the floor (or 10^-3 of
    /// the maximum, for noiseless families).
    pub settle_ns: f64,
}

/// Spread across a family of traces of their deviation from the family
/// mean.
///
/// Every trace should share its final flux; the deviation from the mean then
/// isolates whatever depends on each trace's history.
pub fn theta_err_scan(family: &[PhaseTrace], cfg: &ScanConfig) -> Result<ThetaScan> {
    if family.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 traces, got {}",
            family.len()
        )));
    }
    if let Some(k) = family.iter().position(|t| !t.same_grid(&family[0])) {
        return Err(Error::ShapeMismatch(format!(
            "trace {k} differs from trace 0 in rate, start or length"
        )));
    }
    if !(cfg.window_ns > cfg.start_ns) {
        return Err(Error::param("window", "must exceed the scan start"));
    }
    let first = &family[0];
    let idx: Vec<usize> = (0..first.len())
        .filter(|&i| {
            let t = first.time_ns(i) - cfg.edge_ns;
            t >= cfg.start_ns && t <= cfg.window_ns
        })
        .collect();
    if idx.len() < 4 {
        return Err(Error::InsufficientData("scan window holds fewer than 4 samples".into()));
    }
    let n = family.len() as f64;
    let spread: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let mean = family.iter().map(|t| t.phase_deg()[i]).sum::<f64>() / n;
            let (lo, hi) = family.iter().fold((f64::MAX, f64::MIN), |(lo, hi), t| {
                let e = t.phase_deg()[i] - mean;
                (lo.min(e), hi.max(e))
            });
            hi - lo
        })
        .collect();
    let times: Vec<f64> = idx.iter().map(|&i| first.time_ns(i) - cfg.edge_ns).collect();

    let mut late: Vec<f64> = spread[spread.len() / 2..].to_vec();
    late.sort_by(f64::total_cmp);
    let floor = late[late.len() / 2];

    let (imax, max) = spread
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let half = 0.5 * (max + floor);
    let mut t_peak = times[imax];
    for i in imax..spread.len() - 1 {
        if spread[i] >= half && spread[i + 1] < half {
            let f = (spread[i] - half) / (spread[i] - spread[i + 1]);
            t_peak = times[i] + f * (times[i + 1] - times[i]);
            break;
        }
    }
    let threshold = (2.0 * floor).max(1e-3 * max);
    let settle = match spread.iter().rposition(|&v| v > threshold) {
        Some(i) if i + 1 < times.len() => times[i + 1],
        Some(_) => times[times.len() - 1],
        None => times[0],
    };
    Ok(ThetaScan {
        times_ns: times,
        spread_deg: spread,
        max_spread_deg: max,
        t_max_ns: times_at(&idx, imax, first, cfg),
        t_peak_ns: t_peak,
        noise_floor_deg: floor,
        settle_ns: settle,
    })
}

fn times_at(idx: &[usize], k: usize, first: &PhaseTrace, cfg: &ScanConfig) -> f64 {
    first.time_ns(idx[k]) - cfg.edge_ns
}

/// Amplitude range and distance of a reflector consistent with an observed
/// family spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionBound {
    pub amp_low_db: f64,
    pub amp_high_db: f64,
    pub distance_ns: f64,
}

impl ReflectionBound {
    pub fn contains(&self, amplitude_db: f64) -> bool {
        amplitude_db >= self.amp_low_db && amplitude_db <= self.amp_high_db
    }
}

/// The family sampled one extreme of the reflection orientation at most
/// (upper bound) or both extremes at least (lower bound).
pub fn infer_reflection_bound(max_spread_deg: f64, t_peak_ns: f64) -> Result<ReflectionBound> {
    if !(max_spread_deg.is_finite() && max_spread_deg > 0.0) {
        return Err(Error::param("max_spread", format!("must be > 0, got {max_spread_deg}")));
    }
    if max_spread_deg >= 90.0 {
        return Err(Error::ModelInvalid(format!(
            "spread of {max_spread_deg} deg is beyond the small-reflection model"
        )));
    }
    if !(t_peak_ns.is_finite() && t_peak_ns >= 0.0) {
        return Err(Error::param("t_peak", format!("must be >= 0 ns, got {t_peak_ns}")));
    }
    let s = max_spread_deg.to_radians();
    Ok(ReflectionBound {
        amp_low_db: 20.0 * (s / 2.0).tan().log10(),
        amp_high_db: 20.0 * s.tan().log10(),
        distance_ns: t_peak_ns / 2.0,
    })
}
