//! Homodyne readout: RF synthesis from flux waveforms, digital and hardware
//! demodulation, averaging, and transient reflections.

mod demod;
mod noise;
mod reflection;
mod synth;
mod trace;

pub use demod::{
    default_lpf_cutoff, digital_demodulate, hardware_demodulate, hardware_demodulate_iq,
    kaiser_lowpass, ScopeModel,
};
pub use noise::NoiseConfig;
pub use reflection::{
    bounce_series, bounce_terms, infer_reflection_bound, reflection_from_impedances,
    theta_err_scan, ReflectionBound, ReflectionScenario, ScanConfig, ThetaScan,
};
pub use synth::{
    ideal_phase_trace, resample_zoh, simulate_averaged_phase, simulate_phase_trace,
    synthesize_trace, SynthOptions,
};
pub use trace::{average_traces, IqTrace, PhaseTrace, RFTrace};
