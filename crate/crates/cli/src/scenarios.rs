//! Package scenarios and the end-to-end pipeline that runs them.
//!
//! A scenario is a [`Config`] with a name. The pipeline programs a flux
//! step, distorts it with the scenario's settling model, synthesizes and
//! demodulates the probe tone, converts phase back to flux through a fitted
//! calibration, fits the settling, and classifies a long record of the same
//! step.

use std::path::Path;

use fluxprobe::circuit::{reflection_angle, CircuitParams};
use fluxprobe::estimators::{
    classify_package, fit_calibration_with, fit_settling_with, invert_calibration,
    select_model_order_with, CalibrationFit, CalibrationOptions, Classification, SettlingFit,
};
use fluxprobe::signalchain::{
    digital_demodulate, hardware_demodulate, ideal_phase_trace, simulate_averaged_phase,
    synthesize_trace, PhaseTrace, ScopeModel, SynthOptions,
};
use fluxprobe::waveforms::{apply_settling, gaussian_lowpass, make_step, FluxWaveform, WaveformConfig};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::plot::{render_svg, PlotData, PlotKind, Series};
use crate::report::Report;
use crate::tracefile::{save_trace, TraceFile};

pub const BUILTIN_NAMES: [&str; 6] = [
    "machined-aluminum",
    "al-pcb-2layer",
    "al-pcb-3layer",
    "short-bias-line",
    "cu-via-pcb",
    "gold-cu-pcb",
];

const REFERENCE: [(f64, f64); 3] = [(0.48, 0.73), (0.04, 7.9), (0.01, 53.5)];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: Config,
}

impl Scenario {
    /// Built-in scenario on top of `base`; only the name, notes and settling
    /// terms are replaced.
    pub fn builtin(name: &str, base: &Config) -> CliResult<Self> {
        let (terms, notes): (Vec<(f64, f64)>, &str) = match name {
            "machined-aluminum" => (REFERENCE.to_vec(), "machined aluminum package, reference settling"),
            "al-pcb-2layer" => (
                vec![(0.45, 0.8), (0.05, 6.0), (0.015, 40.0)],
                "aluminum package, two-layer board",
            ),
            "al-pcb-3layer" => (
                vec![(0.5, 0.7), (0.035, 9.5), (0.012, 70.0)],
                "aluminum package, three-layer board",
            ),
            "short-bias-line" => (vec![(0.4, 0.5), (0.03, 4.0)], "short on-chip bias line"),
            "cu-via-pcb" => {
                let mut t = REFERENCE.to_vec();
                t.push((-5e-3, 100_000.0));
                (t, "copper package, board with vias; slow undershoot")
            }
            "gold-cu-pcb" => {
                let mut t = REFERENCE.to_vec();
                t.push((0.2, 1_000_000.0));
                (t, "gold-plated copper package; large slow tail")
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown scenario `{other}`; built-ins are {}",
                    BUILTIN_NAMES.join(", ")
                )))
            }
        };
        let mut config = base.clone();
        config.name = Some(name.to_string());
        config.notes = Some(notes.to_string());
        config.settling.terms = terms;
        config.validate()?;
        Ok(Self { name: name.to_string(), config })
    }

    /// Scenario file: a config file whose `name` key names the scenario.
    pub fn from_file(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let config = Config::load(Some(path), overrides)?;
        let name = config.name.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into())
        });
        Ok(Self { name, config })
    }

    /// A built-in name, or else a path to a scenario file.
    pub fn resolve(name_or_path: &str, base: &Config, overrides: &[String]) -> CliResult<Self> {
        if BUILTIN_NAMES.contains(&name_or_path) {
            Self::builtin(name_or_path, base)
        } else if Path::new(name_or_path).is_file() {
            Self::from_file(Path::new(name_or_path), overrides)
        } else {
            Self::builtin(name_or_path, base)
        }
    }
}

pub enum Artifact {
    Trace(TraceFile),
    Svg(String),
    Text(String),
}

/// Outputs of one scenario run, keyed by file name.
pub struct Bundle {
    pub name: String,
    pub report: Report,
    pub calibration: CalibrationFit,
    pub settling: SettlingFit,
    pub classification: Classification,
    pub artifacts: Vec<(String, Artifact)>,
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (file, a) in &self.artifacts {
            let path = dir.join(file);
            match a {
                Artifact::Trace(t) => save_trace(t, &path)?,
                Artifact::Svg(s) | Artifact::Text(s) => {
                    std::fs::write(&path, s).map_err(|e| CliError::io(&path, e))?
                }
            }
        }
        Ok(())
    }
}

/// Programmed step, shaped if configured, and distorted by the settling
/// model, at `cfg.awg_rate`.
pub fn programmed_step(config: &Config, wcfg: &WaveformConfig, duration_ns: f64) -> CliResult<(FluxWaveform, FluxWaveform)> {
    let s = &config.step;
    let mut step = make_step(s.start, s.end, s.edge_ns, duration_ns, wcfg)?;
    if config.waveform.shaping {
        step = gaussian_lowpass(&step, wcfg.lpf_cutoff)?;
    }
    let distorted = apply_settling(&step, &config.settling_model()?);
    Ok((step, distorted))
}

/// Noisy calibration sweep: 64 flux points across the clamp range with the
/// averaged phase noise of the configured acquisition.
pub fn calibration_sweep(config: &Config, params: &CircuitParams) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let noise = config.noise_config();
    let clamp = params.flux_clamp;
    let n = 64;
    let flux: Vec<f64> = (0..n).map(|i| -clamp + 2.0 * clamp * i as f64 / (n - 1) as f64).collect();
    let sigma = noise
        .phase_noise_deg
        .hypot(noise.additive_noise_rms.to_degrees())
        / (noise.n_averages as f64).sqrt();
    let mut rng = noise.trace_rng(u64::MAX);
    let dist = Normal::new(0.0, sigma).map_err(|e| CliError::Config(format!("noise: {e}")))?;
    let phase = flux
        .iter()
        .map(|&f| {
            let e = if sigma > 0.0 { dist.sample(&mut rng) } else { 0.0 };
            Ok(reflection_angle(f, params)?.value() + e)
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok((flux, phase))
}

pub fn fit_sweep(config: &Config, flux: &[f64], phase: &[f64]) -> CliResult<CalibrationFit> {
    let init = config.circuit_params()?;
    let opts = CalibrationOptions {
        exclusion: config.fit.exclusion,
        ..CalibrationOptions::default()
    };
    Ok(fit_calibration_with(flux, phase, init.probe_freq, &init, &opts)?)
}

/// Averaged, demodulated phase of the distorted step on the AWG grid. The RF round trip is noiseless; the averaged noise is
/// added afterwards.
pub fn measured_phase(config: &Config, params: &CircuitParams, wf: &FluxWaveform) -> CliResult<PhaseTrace> {
    let scenario = config.reflection()?;
    let noise = config.noise_config();
    let rate = wf.sample_rate();
    let opts = SynthOptions {
        rf_rate: config.demod.rf_rate_gsps * 1e9,
        trace_index: 0,
    };
    let rf = synthesize_trace(wf, params, &fluxprobe::signalchain::NoiseConfig::noiseless(), scenario.as_ref(), &opts)?;
    let demod = if config.demod.hardware {
        let scope = ScopeModel {
            dc_settle_amp: config.demod.dc_settle_amp,
            dc_settle_tau_ns: config.demod.dc_settle_tau_us * 1e3,
            output_rate: rate,
            lpf_cutoff: Some(config.demod_cutoff()),
        };
        hardware_demodulate(&rf, &scope)?
    } else {
        let full = digital_demodulate(&rf, config.demod_cutoff())?;
        let step = (full.sample_rate() / rate).round() as usize;
        if step == 0 || ((full.sample_rate() / rate) - step as f64).abs() > 1e-9 {
            return Err(CliError::Config(
                "`demod.rf_rate_gsps` must be an integer multiple of the AWG rate".into(),
            ));
        }
        // Read each AWG hold in its middle, away from the filtered
        // transitions, and label it with the hold's start time.
        let phase: Vec<f64> = full.phase_deg().iter().skip(step / 2).step_by(step).copied().collect();
        PhaseTrace::new(rate, full.t0_ns(), phase)?
    };
    let noisy = simulate_averaged_phase(wf, params, &noise, scenario.as_ref(), rate)?;
    let ideal = ideal_phase_trace(wf, params, scenario.as_ref(), rate)?;
    let n = demod.len().min(noisy.len());
    let phase = (0..n)
        .map(|i| demod.phase_deg()[i] + noisy.phase_deg()[i] - ideal.phase_deg()[i])
        .collect();
    Ok(PhaseTrace::new(rate, demod.t0_ns(), phase)?)
}

/// Attaches the flux recovered through the calibration.
pub fn to_flux(trace: PhaseTrace, cal: &CalibrationFit) -> CliResult<PhaseTrace> {
    let flux = trace
        .phase_deg()
        .iter()
        .map(|p| invert_calibration(*p, cal))
        .collect::<fluxprobe::Result<Vec<f64>>>()?;
    Ok(trace.with_flux(flux)?)
}

/// Edge time as seen at the digitizer.
pub fn observed_edge_ns(config: &Config) -> f64 {
    config.step.edge_ns + config.reflection.as_ref().map_or(0.0, |r| r.chain_delay_ns)
}

pub fn fit_step(config: &Config, rec: &dyn fluxprobe::estimators::StepRecord, edge_ns: f64) -> CliResult<SettlingFit> {
    let opts = config.settling_options();
    Ok(match config.fit.n_terms {
        Some(n) => fit_settling_with(rec, edge_ns, n, &opts)?,
        None => select_model_order_with(rec, edge_ns, &opts)?,
    })
}

pub fn settling_report(r: &mut Report, prefix: &str, fit: &SettlingFit) {
    r.text(&format!("{prefix}.n_terms"), fit.n_terms.to_string());
    for (k, t) in fit.model.terms().iter().enumerate() {
        r.value(&format!("{prefix}.alpha_{}", k + 1), t.alpha);
        r.value(&format!("{prefix}.tau_ns_{}", k + 1), t.tau_ns);
    }
    r.value(&format!("{prefix}.step_amplitude"), fit.step_amplitude);
    r.value(&format!("{prefix}.residual_rms"), fit.residual_rms);
    r.text(&format!("{prefix}.degenerate"), fit.degenerate.to_string());
}

pub fn calibration_report(r: &mut Report, prefix: &str, fit: &CalibrationFit) {
    r.value(&format!("{prefix}.ic_total_ua"), fit.params.ic_total * 1e6);
    r.value(&format!("{prefix}.c_shunt_pf"), fit.params.c_shunt * 1e12);
    r.value(&format!("{prefix}.z0_ohm"), fit.params.z0);
    r.value(&format!("{prefix}.offset_deg"), fit.offset_deg);
    r.value(&format!("{prefix}.residual_deg"), fit.residual_rms);
    r.text(&format!("{prefix}.n_used"), fit.n_used.to_string());
    r.text(&format!("{prefix}.n_excluded"), fit.n_excluded.to_string());
}

/// Normalized data and fitted model of a step, for plotting.
pub fn step_plot(name: &str, trace: &PhaseTrace, fit: &SettlingFit, edge_ns: f64) -> CliResult<String> {
    let values = trace.flux().unwrap_or(trace.phase_deg());
    let (t, a): (Vec<f64>, Vec<f64>) = (0..trace.len())
        .map(|i| (trace.time_ns(i), (values[i] - fit.baseline) / fit.step_amplitude))
        .unzip();
    let model: Vec<f64> = t
        .iter()
        .map(|&ti| if ti < edge_ns { 0.0 } else { fit.model.step_response(ti - edge_ns) })
        .collect();
    render_svg(&PlotData::new(
        PlotKind::Step,
        format!("{name}: step response"),
        vec![Series::markers("data", t.clone(), a), Series::line("fit", t, model)],
    ))
}

pub fn calibration_plot(name: &str, flux: &[f64], phase: &[f64], fit: &CalibrationFit) -> CliResult<String> {
    let model = flux.iter().map(|f| fit.phase(*f)).collect::<fluxprobe::Result<Vec<f64>>>()?;
    render_svg(&PlotData::new(
        PlotKind::Calibration,
        format!("{name}: calibration"),
        vec![
            Series::markers("data", flux.to_vec(), phase.to_vec()),
            Series::line("fit", flux.to_vec(), model),
        ],
    ))
}

pub fn run_scenario(scenario: &Scenario) -> CliResult<Bundle> {
    let config = &scenario.config;
    let params = config.circuit_params()?;
    let wcfg = config.waveform_config();

    let (flux, phase) = calibration_sweep(config, &params)?;
    let cal = fit_sweep(config, &flux, &phase)?;

    let edge = observed_edge_ns(config);
    let (_, distorted) = programmed_step(config, &wcfg, config.step.duration_ns)?;
    let short = to_flux(measured_phase(config, &params, &distorted)?, &cal)?;
    let settling = fit_step(config, &short, edge)?;

    let long_cfg = WaveformConfig {
        awg_rate: config.classify.record_rate_msps * 1e6,
        ..wcfg
    };
    let ccfg = config.classify_config();
    let long_ns = config.step.edge_ns + ccfg.horizon_us * 1e3 + 2_000.0;
    let (_, long_wf) = programmed_step(config, &long_cfg, long_ns)?;
    let long_phase = simulate_averaged_phase(
        &long_wf,
        &params,
        &config.noise_config(),
        config.reflection()?.as_ref(),
        long_cfg.awg_rate,
    )?;
    let long = to_flux(long_phase, &cal)?;
    let classification = classify_package(&long, edge, &ccfg)?;

    let mut report = Report::new();
    report.text("scenario", scenario.name.clone());
    if let Some(n) = &config.notes {
        report.text("notes", n.clone());
    }
    report.text("seed", config.seed.to_string());
    calibration_report(&mut report, "calibration", &cal);
    settling_report(&mut report, "settling", &settling);
    report.text("class", classification.class.as_str());
    report.value("late_settling", classification.late_settling);

    let name = &scenario.name;
    let artifacts = vec![
        ("report.txt".to_string(), Artifact::Text(report.render())),
        (
            "calibration.csv".to_string(),
            Artifact::Trace(TraceFile::from_calibration(&flux, &phase).with_seed(config.seed).with_scenario(name)),
        ),
        (
            "step.csv".to_string(),
            Artifact::Trace(TraceFile::from_phase(&short).with_seed(config.seed).with_scenario(name)),
        ),
        (
            "long.csv.gz".to_string(),
            Artifact::Trace(TraceFile::from_phase(&long).with_seed(config.seed).with_scenario(name)),
        ),
        ("calibration.svg".to_string(), Artifact::Svg(calibration_plot(name, &flux, &phase, &cal)?)),
        ("step.svg".to_string(), Artifact::Svg(step_plot(name, &short, &settling, edge)?)),
    ];
    Ok(Bundle {
        name: name.clone(),
        report,
        calibration: cal,
        settling,
        classification,
        artifacts,
    })
}

/// Runs independent scenarios on worker threads, keeping input order.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<CliResult<Bundle>> {
    scenarios.par_iter().map(run_scenario).collect()
}
