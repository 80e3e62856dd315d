//! AWG model: flux steps, Gaussian shaping, exponential settling and its
//! inverse, and the reflection-probe waveform family.
//!
//! Waveforms are uniformly sampled and immutable; every transformation
//! returns a new [`FluxWaveform`]. Filters are primed with the first sample
//! so a waveform that starts flat is treated as DC-settled.

use std::f64::consts::{PI, SQRT_2};

use crate::circuit::{self, CircuitParams};
use crate::error::{Error, Result};

/// Flux versus time, uniformly sampled, in units of Φ0.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxWaveform {
    sample_rate: f64,
    samples: Vec<f64>,
    t0_ns: f64,
}

impl FluxWaveform {
    pub fn new(sample_rate: f64, samples: Vec<f64>, t0_ns: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::param("sample_rate", format!("must be > 0, got {sample_rate}")));
        }
        if samples.len() < 2 {
            return Err(Error::param("samples", "need at least 2 samples"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("samples", format!("non-finite value at index {i}")));
        }
        if !t0_ns.is_finite() {
            return Err(Error::param("t0", "must be finite"));
        }
        Ok(Self {
            sample_rate,
            samples,
            t0_ns,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn t0_ns(&self) -> f64 {
        self.t0_ns
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample spacing in ns.
    pub fn dt_ns(&self) -> f64 {
        1e9 / self.sample_rate
    }

    pub fn time_ns(&self, i: usize) -> f64 {
        self.t0_ns + i as f64 * self.dt_ns()
    }

    pub fn times_ns(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time_ns(i)).collect()
    }

    /// Value held at time `t_ns` (zero-order hold, clamped at both ends).
    pub fn value_at(&self, t_ns: f64) -> f64 {
        let idx = ((t_ns - self.t0_ns) / self.dt_ns()).floor();
        if idx <= 0.0 {
            self.samples[0]
        } else {
            let i = (idx as usize).min(self.samples.len() - 1);
            self.samples[i]
        }
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            sample_rate: self.sample_rate,
            samples,
            t0_ns: self.t0_ns,
        }
    }

    /// Pointwise `a·self + b·other`; both waveforms must share a time grid.
    pub fn linear_combination(&self, a: f64, other: &FluxWaveform, b: f64) -> Result<Self> {
        if self.len() != other.len() || self.sample_rate != other.sample_rate {
            return Err(Error::ShapeMismatch("waveforms differ in length or rate".into()));
        }
        Ok(self.with_samples(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }
}

/// AWG configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformConfig {
    /// DAC rate in samples/s.
    pub awg_rate: f64,
    /// Gaussian shaping filter -3 dB frequency in Hz.
    pub lpf_cutoff: f64,
    /// Bias line to SQUID mutual inductance in H, when known.
    pub mutual_inductance: Option<f64>,
    /// On-chip flux at AWG full scale, in Φ0.
    pub full_scale_flux: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            awg_rate: 1e9,
            lpf_cutoff: 220e6,
            mutual_inductance: None,
            full_scale_flux: 1.75,
        }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.awg_rate.is_finite() && self.awg_rate > 0.0) {
            return Err(Error::param("awg_rate", format!("must be > 0, got {}", self.awg_rate)));
        }
        if !(self.lpf_cutoff.is_finite() && self.lpf_cutoff > 0.0) {
            return Err(Error::param("lpf_cutoff", format!("must be > 0, got {}", self.lpf_cutoff)));
        }
        if let Some(m) = self.mutual_inductance {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::param("mutual_inductance", format!("must be > 0, got {m}")));
            }
        }
        if !(self.full_scale_flux.is_finite() && self.full_scale_flux > 0.0) {
            return Err(Error::param("full_scale_flux", "must be > 0"));
        }
        Ok(())
    }

    /// Bias current (A) to SQUID flux (Φ0) through the mutual inductance.
    pub fn current_to_flux(&self, current: f64) -> Result<f64> {
        let m = self
            .mutual_inductance
            .ok_or_else(|| Error::Config("mutual_inductance is not configured".into()))?;
        Ok(m * current / circuit::PHI0)
    }
}

/// One decaying term of the settling model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlingTerm {
    pub alpha: f64,
    pub tau_ns: f64,
}

/// Step response A(t) = 1 - Σ alpha_i·exp(-t/tau_i).
///
/// Terms are kept sorted by ascending time constant. Σ|alpha| < 1 keeps the
/// step response positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpSettlingModel {
    terms: Vec<SettlingTerm>,
}

impl ExpSettlingModel {
    pub fn new(terms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut terms: Vec<SettlingTerm> = terms
            .into_iter()
            .map(|(alpha, tau_ns)| SettlingTerm { alpha, tau_ns })
            .collect();
        for t in &terms {
            if !t.alpha.is_finite() {
                return Err(Error::param("alpha", "must be finite"));
            }
            if !(t.tau_ns.is_finite() && t.tau_ns > 0.0) {
                return Err(Error::param("tau", format!("must be > 0, got {}", t.tau_ns)));
            }
        }
        let total: f64 = terms.iter().map(|t| t.alpha.abs()).sum();
        if total >= 1.0 {
            return Err(Error::param("alpha", format!("sum of |alpha| must be < 1, got {total}")));
        }
        terms.sort_by(|a, b| a.tau_ns.total_cmp(&b.tau_ns));
        Ok(Self { terms })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Three-term settling of the machined aluminum package.
    pub fn reference_package() -> Self {
        Self::new([(0.48, 0.73), (0.04, 7.9), (0.01, 53.5)]).expect("valid constants")
    }

    pub fn terms(&self) -> &[SettlingTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Returns a copy with one more term.
    pub fn with_term(&self, alpha: f64, tau_ns: f64) -> Result<Self> {
        Self::new(
            self.terms
                .iter()
                .map(|t| (t.alpha, t.tau_ns))
                .chain(std::iter::once((alpha, tau_ns))),
        )
    }

    /// Continuous-time unit step response at `t_ns` after the edge.
    pub fn step_response(&self, t_ns: f64) -> f64 {
        if t_ns < 0.0 {
            return 0.0;
        }
        1.0 - self
            .terms
            .iter()
            .map(|t| t.alpha * (-t_ns / t.tau_ns).exp())
            .sum::<f64>()
    }
}

/// Ideal step from `flux_start` to `flux_end` at `t_edge_ns`, sampled at the
/// AWG rate over `duration_ns`.
pub fn make_step(
    flux_start: f64,
    flux_end: f64,
    t_edge_ns: f64,
    duration_ns: f64,
    cfg: &WaveformConfig,
) -> Result<FluxWaveform> {
    cfg.validate()?;
    for (field, v) in [("flux_start", flux_start), ("flux_end", flux_end)] {
        if !(v.is_finite() && v.abs() <= 0.5) {
            return Err(Error::Range(format!("{field} = {v} Phi0 is outside +-0.5 Phi0")));
        }
    }
    if !(t_edge_ns >= 0.0 && duration_ns > t_edge_ns) {
        return Err(Error::param(
            "duration",
            format!("need duration > t_edge >= 0, got t_edge={t_edge_ns}, duration={duration_ns}"),
        ));
    }
    let dt = 1e9 / cfg.awg_rate;
    let n = ((duration_ns / dt).round() as usize).max(2);
    let samples = (0..n)
        .map(|i| {
            // tolerate rounding of i*dt right at the edge
            if (i as f64) * dt + 1e-9 * dt < t_edge_ns {
                flux_start
            } else {
                flux_end
            }
        })
        .collect();
    FluxWaveform::new(cfg.awg_rate, samples, 0.0)
}

/// Symmetric Gaussian kernel whose sampled frequency response falls to
/// 1/√2 exactly at `cutoff`. Truncated at ±5σ and normalized to unit sum.
pub fn gaussian_kernel(cutoff: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::Config(format!("cutoff must be > 0, got {cutoff}")));
    }
    if cutoff >= sample_rate / 2.0 {
        return Err(Error::Config(format!(
            "cutoff {cutoff} Hz is at or above Nyquist ({} Hz)",
            sample_rate / 2.0
        )));
    }
    let build = |sigma: f64| -> Vec<f64> {
        let half = (5.0 * sigma).ceil().max(1.0) as i64;
        let mut k: Vec<f64> = (-half..=half)
            .map(|j| (-(j as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    };
    let response = |k: &[f64]| -> f64 {
        let half = (k.len() / 2) as f64;
        let w = 2.0 * PI * cutoff / sample_rate;
        k.iter()
            .enumerate()
            .map(|(j, v)| v * (w * (j as f64 - half)).cos())
            .sum()
    };
    // continuous-time value, in samples
    let sigma0 = (2f64.ln()).sqrt() / (2.0 * PI * cutoff) * sample_rate;
    let target = 1.0 / SQRT_2;
    let (mut lo, mut hi) = (sigma0 * 0.05, sigma0 * 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if response(&build(mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(build(0.5 * (lo + hi)))
}

/// Convolves with `kernel` (odd length, centered), padding each end with the
/// edge sample.
pub(crate) fn convolve_primed(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = kernel.len() / 2;
    let n = x.len();
    let at = |i: isize| -> f64 {
        if i < 0 {
            x[0]
        } else if i as usize >= n {
            x[n - 1]
        } else {
            x[i as usize]
        }
    };
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * at(i as isize + j as isize - half as isize))
                .sum()
        })
        .collect()
}

/// Gaussian low-pass shaping with -3 dB point at `cutoff` (Hz).
pub fn gaussian_lowpass(wf: &FluxWaveform, cutoff: f64) -> Result<FluxWaveform> {
    let kernel = gaussian_kernel(cutoff, wf.sample_rate)?;
    Ok(wf.with_samples(convolve_primed(&wf.samples, &kernel)))
}

/// Per-term pole d = exp(-dt/tau) of the step-invariant discretization.
fn poles(model: &ExpSettlingModel, dt_ns: f64) -> Vec<f64> {
    model
        .terms
        .iter()
        .map(|t| (-dt_ns / t.tau_ns).exp())
        .collect()
}

/// Passes `wf` through the LTI system whose unit step response is the
/// settling model.
///
/// Each term is realized as a first-order high-pass section whose step
/// response is exactly exp(-t/tau) at the sample instants, which is exact
/// for the piecewise-constant output of a DAC.
pub fn apply_settling(wf: &FluxWaveform, model: &ExpSettlingModel) -> FluxWaveform {
    wf.with_samples(settle_samples(&wf.samples, wf.dt_ns(), model))
}

/// [`apply_settling`] on bare samples spaced `dt_ns` apart.
pub(crate) fn settle_samples(x: &[f64], dt_ns: f64, model: &ExpSettlingModel) -> Vec<f64> {
    if model.is_empty() || x.is_empty() {
        return x.to_vec();
    }
    let d = poles(model, dt_ns);
    let mut state = vec![0.0; d.len()];
    let mut prev = x[0];
    x.iter()
        .map(|&v| {
            let dx = v - prev;
            prev = v;
            let mut y = v;
            for ((h, dk), term) in state.iter_mut().zip(&d).zip(&model.terms) {
                *h = dk * *h + dx;
                y -= term.alpha * *h;
            }
            y
        })
        .collect()
}

/// Numerator of the discretized transfer function, coefficients of z^-k
/// for k = 0..=K. Its roots are the poles of the inverse filter.
fn inverse_pole_polynomial(model: &ExpSettlingModel, dt_ns: f64) -> Vec<f64> {
    let d = poles(model, dt_ns);
    let k = d.len();
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let prod_except = |skip: Option<usize>| -> Vec<f64> {
        (0..k)
            .filter(|&i| Some(i) != skip)
            .fold(vec![1.0], |acc, i| mul(&acc, &[1.0, -d[i]]))
    };
    let mut num = prod_except(None);
    for (i, term) in model.terms.iter().enumerate() {
        let part = mul(&[1.0, -1.0], &prod_except(Some(i)));
        for (n, p) in num.iter_mut().zip(part) {
            *n -= term.alpha * p;
        }
    }
    num
}

/// Schur-Cohn test: true when every root of the polynomial
/// a[0]·z^K + a[1]·z^(K-1) + ... + a[K] lies strictly inside the unit circle.
pub(crate) fn schur_stable(coeffs: &[f64]) -> bool {
    let mut a: Vec<f64> = coeffs.to_vec();
    while a.len() > 1 && a[a.len() - 1] == 0.0 {
        // a root at the origin is stable; deflate it
        a.pop();
    }
    while a.len() > 1 {
        let m = a.len() - 1;
        if a[0] == 0.0 {
            return false;
        }
        let k = a[m] / a[0];
        if !(k.abs() < 1.0) {
            return false;
        }
        a = (0..m).map(|i| a[i] - k * a[m - i]).collect();
    }
    true
}

/// Inverse of [`apply_settling`]: the waveform that comes out as `wf` after
/// the settling model is applied.
///
/// The inverse is the exact rational inverse of the discretized forward
/// filter. Models whose inverse is unstable at this sample rate are rejected.
pub fn predistort(wf: &FluxWaveform, model: &ExpSettlingModel) -> Result<FluxWaveform> {
    if model.is_empty() {
        return Ok(wf.clone());
    }
    let dt = wf.dt_ns();
    let num = inverse_pole_polynomial(model, dt);
    if !schur_stable(&num) {
        return Err(Error::Model(format!(
            "inverse of the settling model is unstable at {} ns sampling",
            dt
        )));
    }
    let d = poles(model, dt);
    let gain = 1.0 - model.terms.iter().map(|t| t.alpha).sum::<f64>();
    let mut state = vec![0.0; d.len()];
    let mut prev = wf.samples[0];
    let out = wf
        .samples
        .iter()
        .map(|&y| {
            let mut acc = y;
            for ((h, dk), term) in state.iter().zip(&d).zip(&model.terms) {
                acc += term.alpha * (dk * h - prev);
            }
            let x = acc / gain;
            let dx = x - prev;
            for (h, dk) in state.iter_mut().zip(&d) {
                *h = dk * *h + dx;
            }
            prev = x;
            x
        })
        .collect();
    Ok(wf.with_samples(out))
}

/// Timing shared by every waveform of a step family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTiming {
    pub t_edge_ns: f64,
    pub duration_ns: f64,
}

impl Default for StepTiming {
    fn default() -> Self {
        Self {
            t_edge_ns: 20.0,
            duration_ns: 100.0,
        }
    }
}

/// Steps from `n` initial fluxes to a common `final_flux`.
///
/// Initial fluxes are chosen on the monotone calibration branch so their
/// reflection angles are evenly spaced over `span_deg`, starting from the
/// angle at zero flux. A single waveform starts at zero flux.
pub fn angle_sweep_family(
    calib: &CircuitParams,
    n: usize,
    final_flux: f64,
    span_deg: f64,
    timing: StepTiming,
    cfg: &WaveformConfig,
) -> Result<Vec<FluxWaveform>> {
    calib.validate()?;
    if n == 0 {
        return Err(Error::param("n", "need at least one waveform"));
    }
    if !(span_deg >= 180.0) {
        return Err(Error::param("span_deg", format!("must be >= 180, got {span_deg}")));
    }
    let (lo, hi) = circuit::branch_range(calib)?;
    if span_deg > hi - lo {
        return Err(Error::Range(format!(
            "a {span_deg} deg span is not reachable; the calibration branch covers {:.1} deg",
            hi - lo
        )));
    }
    (0..n)
        .map(|i| {
            let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let target = hi - frac * span_deg;
            let start = if i == 0 {
                0.0
            } else {
                circuit::flux_for_angle(target.max(lo), calib)?
            };
            make_step(start, final_flux, timing.t_edge_ns, timing.duration_ns, cfg)
        })
        .collect()
}
