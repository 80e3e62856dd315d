use std::f64::consts::PI;

use super::trace::{IqTrace, PhaseTrace, RFTrace};
use crate::circuit::unwrap_degrees;
use crate::error::{Error, Result};
use crate::waveforms::{settle_samples, ExpSettlingModel};

/// Stopband attenuation of the demodulation filter, in dB.
const STOPBAND_DB: f64 = 120.0;

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass with unit DC gain. The -6 dB point sits at
/// `cutoff`; the stopband begins at `cutoff + transition / 2`.
pub fn kaiser_lowpass(cutoff: f64, transition: f64, sample_rate: f64, atten_db: f64) -> Vec<f64> {
    let dw = 2.0 * PI * transition / sample_rate;
    let beta = if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    };
    let mut len = ((atten_db - 8.0) / (2.285 * dw)).ceil() as usize + 1;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let m = (len / 2) as f64;
    let fc = cutoff / sample_rate;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let x = n as f64 - m;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let r = x / m;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Centered FIR over the region where the kernel fits; edge outputs hold the
/// nearest valid value. Zero group delay by construction.
fn filter_centered(x: &[f64], h: &[f64], step: usize) -> Vec<f64> {
    let half = h.len() / 2;
    let n = x.len();
    let valid = |i: usize| -> f64 {
        let i = i.clamp(half, n - 1 - half);
        h.iter().zip(&x[i - half..=i + half]).map(|(a, b)| a * b).sum()
    };
    (0..n).step_by(step).map(valid).collect()
}

struct Mixed {
    i: Vec<f64>,
    q: Vec<f64>,
}

fn mix(trace: &RFTrace, lpf_cutoff: f64) -> Result<(Mixed, Vec<f64>)> {
    let fp = trace.probe_freq;
    if !(lpf_cutoff.is_finite() && lpf_cutoff > 0.0 && lpf_cutoff < fp / 2.0) {
        return Err(Error::Config(format!(
            "lpf_cutoff must lie in (0, {} Hz), got {lpf_cutoff}",
            fp / 2.0
        )));
    }
    if fp >= trace.sample_rate / 2.0 {
        return Err(Error::Config(format!(
            "probe at {fp} Hz is above the Nyquist frequency of the record"
        )));
    }
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let (ref_rms, sig_rms) = (rms(&trace.reference), rms(&trace.signal));
    if ref_rms == 0.0 || ref_rms < 1e-9 * sig_rms {
        return Err(Error::Demodulation("reference amplitude is ~0".into()));
    }
    let wt = 2.0 * PI * fp / trace.sample_rate;
    let (c, s) = (wt.cos(), wt.sin());
    if s.abs() < 1e-3 {
        return Err(Error::Demodulation("probe is too close to DC or Nyquist".into()));
    }
    // exact quadrature of a pure tone from neighbouring samples
    let r = &trace.reference;
    let n = r.len();
    let quad: Vec<f64> = (0..n)
        .map(|k| {
            if k + 1 < n {
                (r[k] * c - r[k + 1]) / s
            } else {
                (r[k - 1] - r[k] * c) / s
            }
        })
        .collect();
    let h = kaiser_lowpass(lpf_cutoff, lpf_cutoff, trace.sample_rate, STOPBAND_DB);
    if n < h.len() {
        return Err(Error::InsufficientData(format!(
            "record of {n} samples is shorter than the {}-tap demodulation filter",
            h.len()
        )));
    }
    let i = trace.signal.iter().zip(r).map(|(a, b)| a * b).collect();
    let q = trace.signal.iter().zip(&quad).map(|(a, b)| -a * b).collect();
    Ok((Mixed { i, q }, h))
}

fn phase_of(i: &[f64], q: &[f64]) -> Vec<f64> {
    let wrapped: Vec<f64> = i.iter().zip(q).map(|(i, q)| q.atan2(*i).to_degrees()).collect();
    unwrap_degrees(&wrapped)
}

/// Software homodyne: mixes the signal with the reference and its
/// quadrature, low-pass filters with a linear-phase FIR, and returns the
/// unwrapped phase on the input time grid.
pub fn digital_demodulate(trace: &RFTrace, lpf_cutoff: f64) -> Result<PhaseTrace> {
    let (m, h) = mix(trace, lpf_cutoff)?;
    let i = filter_centered(&m.i, &h, 1);
    let q = filter_centered(&m.q, &h, 1);
    PhaseTrace::new(trace.sample_rate, trace.t0_ns, phase_of(&i, &q))
}

/// Default demodulation cutoff for a probe frequency.
pub fn default_lpf_cutoff(probe_freq: f64) -> f64 {
    probe_freq / 8.0
}

/// Analog IQ mixer followed by a decimating oscilloscope whose DC response
/// settles slowly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScopeModel {
    pub dc_settle_amp: f64,
    pub dc_settle_tau_ns: f64,
    /// Rate after decimation, in samples/s.
    pub output_rate: f64,
    /// Baseband filter cutoff; defaults to the smaller of probe/8 and 0.4 of
    /// the output rate.
    pub lpf_cutoff: Option<f64>,
}

impl Default for ScopeModel {
    fn default() -> Self {
        Self {
            dc_settle_amp: 2e-3,
            dc_settle_tau_ns: 30_000.0,
            output_rate: 1e9,
            lpf_cutoff: None,
        }
    }
}

impl ScopeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.output_rate.is_finite() && self.output_rate > 0.0) {
            return Err(Error::param("output_rate", "must be > 0"));
        }
        self.artifact().map(|_| ())
    }

    fn artifact(&self) -> Result<ExpSettlingModel> {
        if self.dc_settle_amp == 0.0 {
            return Ok(ExpSettlingModel::empty());
        }
        ExpSettlingModel::new([(self.dc_settle_amp, self.dc_settle_tau_ns)])
    }
}

/// Hardware demodulation of an RF record: IQ mixing, baseband filtering,
/// decimation to the scope's output rate, then the scope's DC settling.
pub fn hardware_demodulate(trace: &RFTrace, scope: &ScopeModel) -> Result<PhaseTrace> {
    scope.validate()?;
    let ratio = trace.sample_rate / scope.output_rate;
    let step = ratio.round();
    if step < 1.0 || (ratio - step).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "output_rate must divide the record rate {} Hz, got {}",
            trace.sample_rate, scope.output_rate
        )));
    }
    let cutoff = scope
        .lpf_cutoff
        .unwrap_or_else(|| default_lpf_cutoff(trace.probe_freq).min(0.4 * scope.output_rate));
    if cutoff >= scope.output_rate / 2.0 {
        return Err(Error::Config("lpf_cutoff must be below half the output rate".into()));
    }
    let (m, h) = mix(trace, cutoff)?;
    let step = step as usize;
    let i = filter_centered(&m.i, &h, step);
    let q = filter_centered(&m.q, &h, step);
    let iq = IqTrace::new(trace.sample_rate / step as f64, trace.t0_ns, i, q)?;
    hardware_demodulate_iq(&iq, scope)
}

/// Phase of an already mixed-down IQ record, with the scope's DC settling
/// applied to changes in the phase.
pub fn hardware_demodulate_iq(iq: &IqTrace, scope: &ScopeModel) -> Result<PhaseTrace> {
    let artifact = scope.artifact()?;
    let phase = iq.to_phase()?;
    let settled = settle_samples(phase.phase_deg(), phase.dt_ns(), &artifact);
    PhaseTrace::new(phase.sample_rate(), phase.t0_ns(), settled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(phase_deg: f64, n: usize) -> RFTrace {
        let (fs, fp) = (40e9, 6.4e9);
        let w = 2.0 * PI * fp / fs;
        let th = phase_deg.to_radians();
        let s = (0..n).map(|k| (w * k as f64 + th).cos()).collect();
        let r = (0..n).map(|k| (w * k as f64).cos()).collect();
        RFTrace::new(fs, 0.0, fp, s, r).unwrap()
    }

    #[test]
    fn bessel_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(10.0) - 2815.716_628_466_254).abs() < 1e-9);
    }

    #[test]
    fn kaiser_response() {
        let h = kaiser_lowpass(800e6, 800e6, 40e9, 120.0);
        let resp = |f: f64| -> f64 {
            let m = (h.len() / 2) as f64;
            h.iter()
                .enumerate()
                .map(|(n, v)| v * (2.0 * PI * f / 40e9 * (n as f64 - m)).cos())
                .sum::<f64>()
        };
        assert!((resp(0.0) - 1.0).abs() < 1e-12);
        assert!(resp(12.8e9).abs() < 1e-5);
        assert!(resp(1.3e9).abs() < 1e-5);
    }

    #[test]
    fn static_phase_recovered() {
        for p in [129.5, -20.0, 0.0, 179.0] {
            let out = digital_demodulate(&tone(p, 2000), 800e6).unwrap();
            assert!(out.phase_deg().iter().all(|v| (v - p).abs() < 1e-3), "{p}");
        }
    }

    #[test]
    fn demod_errors() {
        let mut t = tone(10.0, 2000);
        assert!(matches!(digital_demodulate(&t, 4e9), Err(Error::Config(_))));
        t.reference.iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(digital_demodulate(&t, 800e6), Err(Error::Demodulation(_))));
        assert!(matches!(
            digital_demodulate(&tone(10.0, 100), 800e6),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn hardware_without_artifact_matches_digital() {
        let t = tone(42.0, 4000);
        let scope = ScopeModel {
            dc_settle_amp: 0.0,
            ..ScopeModel::default()
        };
        let hw = hardware_demodulate(&t, &scope).unwrap();
        assert_eq!(hw.len(), 100);
        assert!(hw.phase_deg().iter().all(|v| (v - 42.0).abs() < 1e-3));
    }

    #[test]
    fn scope_artifact_on_a_step() {
        let n = 200_000;
        let p: Vec<f64> = (0..n).map(|k| if k < 1000 { 0.0 } else { 1.0 }).collect();
        let tr = PhaseTrace::new(1e9, 0.0, p).unwrap();
        let out = hardware_demodulate_iq(&IqTrace::from_phase(&tr), &ScopeModel::default()).unwrap();
        assert!((out.phase_deg()[1000] - (1.0 - 2e-3)).abs() < 1e-9);
        let late = out.phase_deg()[1000 + 30_000];
        assert!((late - (1.0 - 2e-3 / std::f64::consts::E)).abs() < 1e-6);
    }
}
