use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::noise::NoiseConfig;
use super::reflection::{bounce_series, ReflectionScenario};
use super::trace::{PhaseTrace, RFTrace};
use crate::circuit::{reflection_angle, CircuitParams};
use crate::error::{Error, Result};
use crate::waveforms::FluxWaveform;

/// Options for RF synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Digitizer rate in samples/s.
    pub rf_rate: f64,
    /// Selects the noise stream; traces with distinct indices are independent.
    pub trace_index: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            rf_rate: 40e9,
            trace_index: 0,
        }
    }
}

fn output_len(wf: &FluxWaveform, rate: f64) -> usize {
    ((wf.len() as f64 * rate / wf.sample_rate()).round() as usize).max(2)
}

/// Zero-order-hold resampling onto a grid at `rate` covering the same span.
pub fn resample_zoh(wf: &FluxWaveform, rate: f64) -> Result<FluxWaveform> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::param("sample_rate", format!("must be > 0, got {rate}")));
    }
    let n = output_len(wf, rate);
    let ratio = wf.sample_rate() / rate;
    let samples = (0..n)
        .map(|j| {
            let i = ((j as f64 * ratio) + 1e-9).floor() as usize;
            wf.samples()[i.min(wf.len() - 1)]
        })
        .collect();
    FluxWaveform::new(rate, samples, wf.t0_ns())
}

/// Resonator reflection angle seen at the digitizer, sampled at `rate`,
/// without noise. With a scenario the flux is delayed by the chain delay and
/// the reflector's bounces are added.
pub fn ideal_phase_trace(
    wf: &FluxWaveform,
    params: &CircuitParams,
    scenario: Option<&ReflectionScenario>,
    rate: f64,
) -> Result<PhaseTrace> {
    params.validate()?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::param("sample_rate", format!("must be > 0, got {rate}")));
    }
    let angles = wf
        .samples()
        .iter()
        .map(|&f| reflection_angle(f, params).map(|a| a.value()))
        .collect::<Result<Vec<f64>>>()?;
    let delay = match scenario {
        Some(s) => {
            s.validate()?;
            s.chain_delay_ns
        }
        None => 0.0,
    };
    let n = output_len(wf, rate);
    let dt_out = 1e9 / rate;
    let dt_in = wf.dt_ns();
    let phase = (0..n)
        .map(|j| {
            let x = (j as f64 * dt_out - delay) / dt_in;
            let i = if x <= 0.0 { 0 } else { (x + 1e-9).floor() as usize };
            angles[i.min(angles.len() - 1)]
        })
        .collect();
    let ideal = PhaseTrace::new(rate, wf.t0_ns(), phase)?;
    match scenario {
        Some(s) => bounce_series(&ideal, s),
        None => Ok(ideal),
    }
}

fn jitter_offset<R: Rng>(noise: &NoiseConfig, rng: &mut R) -> f64 {
    if noise.jitter_pkpk > 0.0 {
        let h = noise.jitter_pkpk / 2.0;
        Uniform::new_inclusive(-h, h).expect("finite bounds").sample(rng)
    } else {
        0.0
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma is finite and >= 0")
}

/// Homodyne record of the reflected probe tone for one shot.
///
/// The signal is cos(ω(t + δ) + θ(t) + phase noise) plus voltage noise,
/// with δ a per-trace uniform timing offset; the reference is the undelayed
/// local oscillator cos(ωt), so the timing offset shows up as a phase
/// offset of ω·δ after demodulation.
pub fn synthesize_trace(
    wf: &FluxWaveform,
    params: &CircuitParams,
    noise: &NoiseConfig,
    scenario: Option<&ReflectionScenario>,
    opts: &SynthOptions,
) -> Result<RFTrace> {
    noise.validate()?;
    params.validate()?;
    if params.probe_freq >= opts.rf_rate / 2.0 {
        return Err(Error::param(
            "sample_rate",
            format!(
                "probe at {} Hz needs a sample rate above {} Hz",
                params.probe_freq,
                2.0 * params.probe_freq
            ),
        ));
    }
    let theta = ideal_phase_trace(wf, params, scenario, opts.rf_rate)?;
    let mut rng = noise.trace_rng(opts.trace_index);
    let delta = jitter_offset(noise, &mut rng);
    let phase_noise = normal(noise.phase_noise_deg.to_radians());
    let volt_noise = normal(noise.additive_noise_rms);
    let w = 2.0 * PI * params.probe_freq;
    let dt = 1.0 / opts.rf_rate;
    let t0 = wf.t0_ns() * 1e-9;
    let mut signal = Vec::with_capacity(theta.len());
    let mut reference = Vec::with_capacity(theta.len());
    for (j, th) in theta.phase_deg().iter().enumerate() {
        let t = t0 + j as f64 * dt;
        let mut ph = w * (t + delta) + th.to_radians();
        if noise.phase_noise_deg > 0.0 {
            ph += phase_noise.sample(&mut rng);
        }
        let mut s = ph.cos();
        if noise.additive_noise_rms > 0.0 {
            s += volt_noise.sample(&mut rng);
        }
        signal.push(s);
        reference.push((w * t).cos());
    }
    RFTrace::new(opts.rf_rate, wf.t0_ns(), params.probe_freq, signal, reference)
}

/// Per-sample phase noise in degrees from the phase and voltage terms. For
/// a unit-amplitude tone a small voltage noise σ maps to σ radians.
fn phase_sigma_deg(noise: &NoiseConfig) -> f64 {
    noise
        .phase_noise_deg
        .hypot(noise.additive_noise_rms.to_degrees())
}

/// Demodulated phase of one shot without the RF round trip: the ideal phase
/// plus the jitter offset and white phase noise, at `rate`.
pub fn simulate_phase_trace(
    wf: &FluxWaveform,
    params: &CircuitParams,
    noise: &NoiseConfig,
    scenario: Option<&ReflectionScenario>,
    rate: f64,
    trace_index: u64,
) -> Result<PhaseTrace> {
    noise.validate()?;
    let ideal = ideal_phase_trace(wf, params, scenario, rate)?;
    let mut rng = noise.trace_rng(trace_index);
    let offset = (params.probe_omega() * jitter_offset(noise, &mut rng)).to_degrees();
    let sigma = phase_sigma_deg(noise);
    let dist = normal(sigma);
    let phase = ideal
        .phase_deg()
        .iter()
        .map(|p| {
            let n = if sigma > 0.0 { dist.sample(&mut rng) } else { 0.0 };
            p + offset + n
        })
        .collect();
    Ok(ideal.with_phase(phase))
}

/// Average of `noise.n_averages` shots from [`simulate_phase_trace`],
/// drawn directly from the distribution of the average: the mean of the
/// per-shot jitter offsets plus white noise reduced by √N.
pub fn simulate_averaged_phase(
    wf: &FluxWaveform,
    params: &CircuitParams,
    noise: &NoiseConfig,
    scenario: Option<&ReflectionScenario>,
    rate: f64,
) -> Result<PhaseTrace> {
    noise.validate()?;
    let ideal = ideal_phase_trace(wf, params, scenario, rate)?;
    let n = noise.n_averages;
    let mut rng = noise.trace_rng(0);
    let mean_delta = (0..n).map(|_| jitter_offset(noise, &mut rng)).sum::<f64>() / n as f64;
    let offset = (params.probe_omega() * mean_delta).to_degrees();
    let sigma = phase_sigma_deg(noise) / (n as f64).sqrt();
    let dist = normal(sigma);
    let phase = ideal
        .phase_deg()
        .iter()
        .map(|p| {
            let e = if sigma > 0.0 { dist.sample(&mut rng) } else { 0.0 };
            p + offset + e
        })
        .collect();
    Ok(ideal.with_phase(phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveforms::{make_step, WaveformConfig};

    #[test]
    fn zoh_resample() {
        let wf = FluxWaveform::new(1e9, vec![0.0, 1.0, 2.0], 5.0).unwrap();
        let fine = resample_zoh(&wf, 4e9).unwrap();
        assert_eq!(fine.len(), 12);
        assert_eq!(&fine.samples()[..5], &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(fine.t0_ns(), 5.0);
    }

    #[test]
    fn static_trace_is_a_shifted_tone() {
        let p = CircuitParams::designed();
        let wf = FluxWaveform::new(1e9, vec![0.2; 10], 0.0).unwrap();
        let rf = synthesize_trace(&wf, &p, &NoiseConfig::noiseless(), None, &SynthOptions::default())
            .unwrap();
        assert_eq!(rf.len(), 400);
        let theta = reflection_angle(0.2, &p).unwrap().radians();
        let w = p.probe_omega();
        for (j, s) in rf.signal().iter().enumerate() {
            let t = j as f64 / 40e9;
            assert!((s - (w * t + theta).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_and_clamp_rejected() {
        let p = CircuitParams::designed();
        let wf = FluxWaveform::new(1e9, vec![0.2; 10], 0.0).unwrap();
        let opts = SynthOptions {
            rf_rate: 10e9,
            trace_index: 0,
        };
        assert!(synthesize_trace(&wf, &p, &NoiseConfig::noiseless(), None, &opts).is_err());
        let hot = FluxWaveform::new(1e9, vec![0.45; 10], 0.0).unwrap();
        assert!(matches!(
            synthesize_trace(&hot, &p, &NoiseConfig::noiseless(), None, &SynthOptions::default()),
            Err(Error::OperatingRange { .. })
        ));
    }

    #[test]
    fn chain_delay_shifts_schedule() {
        let p = CircuitParams::designed();
        let cfg = WaveformConfig::default();
        let wf = make_step(0.0, 0.3, 20.0, 60.0, &cfg).unwrap();
        let mut s = ReflectionScenario::new(f64::NEG_INFINITY, 1.0, 0.0).unwrap();
        s.chain_delay_ns = 10.0;
        let tr = ideal_phase_trace(&wf, &p, Some(&s), 1e9).unwrap();
        let a0 = reflection_angle(0.0, &p).unwrap().value();
        assert_eq!(tr.phase_deg()[29], a0);
        assert_ne!(tr.phase_deg()[30], a0);
    }

    #[test]
    fn jitter_bounded() {
        let p = CircuitParams::designed();
        let wf = FluxWaveform::new(1e9, vec![0.0; 4], 0.0).unwrap();
        let noise = NoiseConfig::default();
        let a0 = reflection_angle(0.0, &p).unwrap().value();
        let bound = 0.5 * 20e-12 * 6.4e9 * 360.0;
        let offsets: Vec<f64> = (0..500)
            .map(|k| simulate_phase_trace(&wf, &p, &noise, None, 1e9, k).unwrap().phase_deg()[0] - a0)
            .collect();
        assert!(offsets.iter().all(|o| o.abs() <= bound + 1e-9));
        assert!(offsets.iter().any(|o| o.abs() > 0.8 * bound));
    }
}
