//! Subcommands. Each returns the `key: value` report printed on stdout.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fluxprobe::circuit::{
    bandwidth, flux_sensitivity, peak_gain, reflection_angle, resonant_frequency, transducer_gain,
};
use fluxprobe::signalchain::{
    digital_demodulate, hardware_demodulate, ideal_phase_trace, infer_reflection_bound,
    resample_zoh, simulate_averaged_phase, synthesize_trace, theta_err_scan, PhaseTrace,
    ReflectionScenario, ScanConfig, ScopeModel, SynthOptions,
};
use fluxprobe::waveforms::{angle_sweep_family, StepTiming, WaveformConfig};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::plot::{emit_plot, PlotData, PlotKind, Series};
use crate::report::Report;
use crate::scenarios::{
    calibration_plot, calibration_report, calibration_sweep, fit_step, fit_sweep, measured_phase,
    observed_edge_ns, programmed_step, run_batch, settling_report, step_plot, to_flux, Scenario,
    BUILTIN_NAMES,
};
use crate::tracefile::{load_trace, save_trace, Column, TraceFile, TraceKind};

#[derive(Debug, Parser)]
#[command(name = "fluxprobe", version, about = "Flux-step settling and reflection analysis")]
pub struct Cli {
    /// Config file; defaults to fluxprobe.toml in $FLUXPROBE_CONFIG_DIR.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set circuit.z0_ohm=14.8
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelKind {
    Calibration,
    Gain,
    Sensitivity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotArg {
    Calibration,
    Gain,
    Sensitivity,
    Step,
    ThetaScan,
}

impl From<PlotArg> for PlotKind {
    fn from(k: PlotArg) -> Self {
        match k {
            PlotArg::Calibration => PlotKind::Calibration,
            PlotArg::Gain => PlotKind::Gain,
            PlotArg::Sensitivity => PlotKind::Sensitivity,
            PlotArg::Step => PlotKind::Step,
            PlotArg::ThetaScan => PlotKind::ThetaScan,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the circuit model over flux.
    Model {
        #[arg(long, value_enum, default_value = "calibration")]
        kind: ModelKind,
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Simulate the measured response to the configured step.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Write one RF shot instead of the averaged phase.
        #[arg(long, conflicts_with = "long")]
        rf: bool,
        /// Long record for package classification.
        #[arg(long)]
        long: bool,
        /// Also write the noisy calibration sweep.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Demodulate an RF trace to phase.
    Demod {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Analog mixer and oscilloscope path instead of digital demodulation.
        #[arg(long)]
        hardware: bool,
    },
    /// Fit the settling model to a step record.
    FitStep {
        #[arg(long)]
        input: PathBuf,
        /// Edge time; defaults to the configured edge.
        #[arg(long)]
        edge_ns: Option<f64>,
        /// Calibration sweep used to convert phase to flux.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Fit the flux-to-phase calibration to a sweep.
    FitCal {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Scan an angle-sweep family for reflections and bound their amplitude.
    ReflectScan {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run a built-in scenario or a scenario file end to end.
    Scenario {
        /// Built-in name or path; omit with --all.
        #[arg(required_unless_present_any = ["all", "list"])]
        name: Option<String>,
        /// Run every built-in scenario.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        list: bool,
        /// Directory for the artifact bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a trace or table file as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Cli {
    pub fn load_config(&self) -> CliResult<Config> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        Config::load(self.config.as_deref(), &overrides)
    }
}

pub fn run(cli: &Cli) -> CliResult<String> {
    let config = cli.load_config()?;
    let report = match &cli.command {
        Command::Model { kind, points, out, plot } => model(&config, *kind, *points, out.as_deref(), plot.as_deref())?,
        Command::Simulate { out, rf, long, calibration } => simulate(&config, out, *rf, *long, calibration.as_deref())?,
        Command::Demod { input, out, hardware } => demod(&config, input, out, *hardware)?,
        Command::FitStep { input, edge_ns, calibration, plot } => {
            fit_step_cmd(&config, input, *edge_ns, calibration.as_deref(), plot.as_deref())?
        }
        Command::FitCal { input, plot } => fit_cal(&config, input, plot.as_deref())?,
        Command::ReflectScan { out, plot } => reflect_scan(&config, out.as_deref(), plot.as_deref())?,
        Command::Scenario { name, all, list, out } => {
            scenario(&config, cli, name.as_deref(), *all, *list, out.as_deref())?
        }
        Command::Plot { kind, input, out } => plot_file((*kind).into(), input, out)?,
    };
    Ok(report.render())
}

fn model(config: &Config, kind: ModelKind, points: usize, out: Option<&Path>, plot: Option<&Path>) -> CliResult<Report> {
    if points < 2 {
        return Err(CliError::Config("`--points` must be >= 2".into()));
    }
    let p = config.circuit_params()?;
    let clamp = p.flux_clamp;
    let flux: Vec<f64> = (0..points)
        .map(|i| -clamp + 2.0 * clamp * i as f64 / (points - 1) as f64)
        .collect();
    let noise = config.noise_config();
    let residual = noise.phase_noise_deg.hypot(noise.additive_noise_rms.to_degrees()) / (noise.n_averages as f64).sqrt();
    let (peak_flux, peak) = peak_gain(&p)?;

    let mut r = Report::new();
    r.text("kind", format!("{kind:?}").to_lowercase());
    r.value("bandwidth_ghz", bandwidth(&p) / 1e9);
    r.value("resonance_ghz_at_zero_flux", resonant_frequency(0.0, &p)? / 1e9);
    r.value("peak_gain_flux", peak_flux);
    r.value("peak_gain_deg_per_phi0", peak);
    r.value("phase_noise_deg", residual);
    r.value("sensitivity_at_peak_phi0", flux_sensitivity(peak_flux, &p, residual)?.value());

    let (name, unit, plot_kind, x, y): (&str, &str, PlotKind, Vec<f64>, Vec<f64>) = match kind {
        ModelKind::Calibration => {
            let y = flux.iter().map(|f| Ok(reflection_angle(*f, &p)?.value())).collect::<CliResult<_>>()?;
            ("phase", "deg", PlotKind::Calibration, flux, y)
        }
        ModelKind::Gain => {
            let y = flux.iter().map(|f| Ok(transducer_gain(*f, &p)?)).collect::<CliResult<_>>()?;
            ("gain", "deg/Phi0", PlotKind::Gain, flux, y)
        }
        ModelKind::Sensitivity => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for f in flux {
                let s = flux_sensitivity(f, &p, residual)?.value();
                if s.is_finite() && s > 0.0 {
                    xs.push(f);
                    ys.push(s);
                }
            }
            ("sensitivity", "Phi0", PlotKind::Sensitivity, xs, ys)
        }
    };
    if let Some(path) = out {
        let t = TraceFile::table(
            if plot_kind == PlotKind::Calibration { TraceKind::Calibration } else { TraceKind::Table },
            vec![(Column::new("flux", "Phi0"), x.clone()), (Column::new(name, unit), y.clone())],
        );
        save_trace(&t.with_seed(config.seed), path)?;
    }
    if let Some(path) = plot {
        emit_plot(&PlotData::new(plot_kind, format!("model: {name}"), vec![Series::line("model", x, y)]), path)?;
    }
    Ok(r)
}

fn simulate(config: &Config, out: &Path, rf: bool, long: bool, calibration: Option<&Path>) -> CliResult<Report> {
    let p = config.circuit_params()?;
    let wcfg = config.waveform_config();
    let mut r = Report::new();
    r.text("seed", config.seed.to_string());
    let trace = if rf {
        let (_, wf) = programmed_step(config, &wcfg, config.step.duration_ns)?;
        let opts = SynthOptions {
            rf_rate: config.demod.rf_rate_gsps * 1e9,
            trace_index: 0,
        };
        let noise = config.noise_config();
        let tr = synthesize_trace(&wf, &p, &noise, config.reflection()?.as_ref(), &opts)?;
        r.text("record", "rf");
        r.text("samples", tr.len().to_string());
        r.value("sample_rate_hz", tr.sample_rate());
        TraceFile::from_rf(&tr)
    } else if long {
        let lcfg = WaveformConfig {
            awg_rate: config.classify.record_rate_msps * 1e6,
            ..wcfg
        };
        let duration = config.step.edge_ns + config.classify.horizon_us * 1e3 + 2_000.0;
        let (_, wf) = programmed_step(config, &lcfg, duration)?;
        let tr = simulate_averaged_phase(&wf, &p, &config.noise_config(), config.reflection()?.as_ref(), lcfg.awg_rate)?;
        r.text("record", "long");
        r.text("samples", tr.len().to_string());
        r.value("sample_rate_hz", tr.sample_rate());
        TraceFile::from_phase(&tr)
    } else {
        let (_, wf) = programmed_step(config, &wcfg, config.step.duration_ns)?;
        let tr = measured_phase(config, &p, &wf)?;
        r.text("record", "short");
        r.text("samples", tr.len().to_string());
        r.value("sample_rate_hz", tr.sample_rate());
        TraceFile::from_phase(&tr)
    };
    r.value("edge_ns", observed_edge_ns(config));
    save_trace(&trace.with_seed(config.seed), out)?;
    if let Some(path) = calibration {
        let (flux, phase) = calibration_sweep(config, &p)?;
        save_trace(&TraceFile::from_calibration(&flux, &phase).with_seed(config.seed), path)?;
    }
    Ok(r)
}

fn demod(config: &Config, input: &Path, out: &Path, hardware: bool) -> CliResult<Report> {
    let file = load_trace(input)?;
    let rf = file.to_rf()?;
    let tr = if hardware {
        let scope = ScopeModel {
            dc_settle_amp: config.demod.dc_settle_amp,
            dc_settle_tau_ns: config.demod.dc_settle_tau_us * 1e3,
            output_rate: config.demod.scope_output_rate_gsps * 1e9,
            lpf_cutoff: Some(config.demod_cutoff()),
        };
        hardware_demodulate(&rf, &scope)?
    } else {
        digital_demodulate(&rf, config.demod_cutoff())?
    };
    let mut r = Report::new();
    r.text("path", if hardware { "hardware" } else { "digital" });
    r.text("samples", tr.len().to_string());
    r.value("sample_rate_hz", tr.sample_rate());
    r.value("mean_phase_deg", tr.phase_deg().iter().sum::<f64>() / tr.len() as f64);
    let mut f = TraceFile::from_phase(&tr);
    f.seed = file.seed;
    f.scenario = file.scenario.clone();
    save_trace(&f, out)?;
    Ok(r)
}

fn fit_step_cmd(
    config: &Config,
    input: &Path,
    edge_ns: Option<f64>,
    calibration: Option<&Path>,
    plot: Option<&Path>,
) -> CliResult<Report> {
    let file = load_trace(input)?;
    let edge = edge_ns.unwrap_or_else(|| observed_edge_ns(config));
    let mut r = Report::new();
    r.text("input", input.display().to_string());
    r.value("edge_ns", edge);
    let trace = match file.kind {
        TraceKind::Flux => {
            let wf = file.to_flux()?;
            PhaseTrace::new(wf.sample_rate(), wf.t0_ns(), wf.samples().to_vec())?.with_flux(wf.samples().to_vec())?
        }
        TraceKind::Phase => {
            let tr = file.to_phase()?;
            match calibration {
                Some(path) => {
                    let (flux, phase) = load_trace(path)?.to_calibration()?;
                    let cal = fit_sweep(config, &flux, &phase)?;
                    calibration_report(&mut r, "calibration", &cal);
                    to_flux(tr, &cal)?
                }
                None => tr,
            }
        }
        other => {
            return Err(CliError::Data(format!(
                "fit-step needs a flux or phase trace, got `{}`",
                other.as_str()
            )))
        }
    };
    r.text("units", if trace.flux().is_some() { "Phi0" } else { "deg" });
    let fit = fit_step(config, &trace, edge)?;
    settling_report(&mut r, "settling", &fit);
    if let Some(path) = plot {
        let svg = step_plot("fit-step", &trace, &fit, edge)?;
        std::fs::write(path, svg).map_err(|e| CliError::io(path, e))?;
    }
    Ok(r)
}

fn fit_cal(config: &Config, input: &Path, plot: Option<&Path>) -> CliResult<Report> {
    let (flux, phase) = load_trace(input)?.to_calibration()?;
    let cal = fit_sweep(config, &flux, &phase)?;
    let mut r = Report::new();
    calibration_report(&mut r, "calibration", &cal);
    r.text("iterations", cal.iterations.to_string());
    if let Some(path) = plot {
        let svg = calibration_plot("fit-cal", &flux, &phase, &cal)?;
        std::fs::write(path, svg).map_err(|e| CliError::io(path, e))?;
    }
    Ok(r)
}

fn reflect_scan(config: &Config, out: Option<&Path>, plot: Option<&Path>) -> CliResult<Report> {
    let p = config.circuit_params()?;
    let sc = &config.scan;
    let section = config.reflection.clone().unwrap_or_default();
    let mut scenario = ReflectionScenario::new(section.amplitude_db, section.one_way_delay_ns, section.reflection_phase_deg)?;
    scenario.chain_delay_ns = section.chain_delay_ns;
    let timing = StepTiming::default();
    let family = angle_sweep_family(&p, sc.family_size, sc.final_flux, sc.span_deg, timing, &config.waveform_config())?;
    let rate = sc.fine_rate_gsps * 1e9;
    let noise = config.noise_config();
    let traces = family
        .par_iter()
        .enumerate()
        .map(|(k, wf)| {
            let fine = resample_zoh(wf, rate)?;
            if sc.with_noise {
                let mut n = noise;
                n.seed = noise.seed.wrapping_add(k as u64);
                simulate_averaged_phase(&fine, &p, &n, Some(&scenario), rate)
            } else {
                ideal_phase_trace(&fine, &p, Some(&scenario), rate)
            }
        })
        .collect::<fluxprobe::Result<Vec<PhaseTrace>>>()?;
    let edge = timing.t_edge_ns + scenario.chain_delay_ns;
    let scan = theta_err_scan(&traces, &ScanConfig::new(edge, sc.window_ns))?;
    let bound = infer_reflection_bound(scan.max_spread_deg, scan.t_peak_ns)?;

    let mut r = Report::new();
    r.value("injected_amplitude_db", scenario.amplitude_db);
    r.value("injected_delay_ns", scenario.one_way_delay_ns);
    r.text("family_size", sc.family_size.to_string());
    r.value("max_spread_deg", scan.max_spread_deg);
    r.value("t_max_ns", scan.t_max_ns);
    r.value("t_peak_ns", scan.t_peak_ns);
    r.value("noise_floor_deg", scan.noise_floor_deg);
    r.value("settle_ns", scan.settle_ns);
    r.value("bound_low_db", bound.amp_low_db);
    r.value("bound_high_db", bound.amp_high_db);
    r.value("distance_ns", bound.distance_ns);
    r.text("bound_contains_injected", bound.contains(scenario.amplitude_db).to_string());
    if let Some(path) = out {
        let t = TraceFile::table(
            TraceKind::Table,
            vec![
                (Column::new("time", "ns"), scan.times_ns.clone()),
                (Column::new("spread", "deg"), scan.spread_deg.clone()),
            ],
        );
        save_trace(&t.with_seed(config.seed), path)?;
    }
    if let Some(path) = plot {
        emit_plot(
            &PlotData::new(
                PlotKind::ThetaScan,
                "angle spread after the edge",
                vec![Series::line("spread", scan.times_ns.clone(), scan.spread_deg.clone())],
            ),
            path,
        )?;
    }
    Ok(r)
}

fn scenario(
    config: &Config,
    cli: &Cli,
    name: Option<&str>,
    all: bool,
    list: bool,
    out: Option<&Path>,
) -> CliResult<Report> {
    let mut r = Report::new();
    if list {
        for n in BUILTIN_NAMES {
            r.text("scenario", n);
        }
        return Ok(r);
    }
    let scenarios = if all {
        BUILTIN_NAMES
            .iter()
            .map(|n| Scenario::builtin(n, config))
            .collect::<CliResult<Vec<_>>>()?
    } else {
        let name = name.ok_or_else(|| CliError::Config("no scenario given".into()))?;
        vec![Scenario::resolve(name, config, &cli.set)?]
    };
    for b in run_batch(&scenarios) {
        let b = b?;
        if let Some(dir) = out {
            if all {
                b.write(&dir.join(&b.name))?;
            } else {
                b.write(dir)?;
            }
        }
        r.extend(&b.report);
    }
    Ok(r)
}

fn pick<'a>(file: &'a TraceFile, names: &[&'a str]) -> CliResult<(&'a str, &'a [f64])> {
    names
        .iter()
        .find_map(|n| file.column(n).map(|c| (*n, c)))
        .ok_or_else(|| CliError::Data(format!("file has none of the columns {}", names.join(", "))))
}

fn plot_file(kind: PlotKind, input: &Path, out: &Path) -> CliResult<Report> {
    let file = load_trace(input)?;
    let x = file
        .data
        .first()
        .ok_or_else(|| CliError::Data("file has no columns".into()))?
        .clone();
    let wanted: &[&str] = match kind {
        PlotKind::Calibration => &["phase"],
        PlotKind::Gain => &["gain"],
        PlotKind::Sensitivity => &["sensitivity"],
        PlotKind::Step => &["flux", "phase"],
        PlotKind::ThetaScan => &["spread"],
    };
    let (label, y) = pick(&file, wanted)?;
    let mut series = vec![if kind == PlotKind::Calibration {
        Series::markers(label, x.clone(), y.to_vec())
    } else {
        Series::line(label, x.clone(), y.to_vec())
    }];
    if let Some(fit) = file.column("fit") {
        series.push(Series::line("fit", x, fit.to_vec()));
    }
    let title = input
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    emit_plot(&PlotData::new(kind, title, series), out)?;
    let mut r = Report::new();
    r.text("plot", out.display().to_string());
    r.text("kind", kind.as_str());
    r.text("points", file.rows().to_string());
    Ok(r)
}
