//! TOML run configuration.
//!
//! Every key is optional. Quantities carry their unit in the key name.
//! `--set section.key=value` overrides are applied to the parsed document
//! before it is interpreted.

use std::path::{Path, PathBuf};

use fluxprobe::circuit::CircuitParams;
use fluxprobe::estimators::{ClassifyConfig, SettlingOptions};
use fluxprobe::signalchain::{NoiseConfig, ReflectionScenario};
use fluxprobe::waveforms::{ExpSettlingModel, WaveformConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory searched for `fluxprobe.toml`.
pub const CONFIG_DIR_ENV: &str = "FLUXPROBE_CONFIG_DIR";
pub const DEFAULT_CONFIG_NAME: &str = "fluxprobe.toml";

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSection {
    pub ic_total_ua: f64,
    pub c_shunt_pf: f64,
    pub z0_ohm: f64,
    pub probe_ghz: f64,
    pub flux_clamp: f64,
}

impl Default for CircuitSection {
    fn default() -> Self {
        Self {
            ic_total_ua: 4.0,
            c_shunt_pf: 4.0,
            z0_ohm: 15.0,
            probe_ghz: 6.4,
            flux_clamp: 0.38,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub awg_rate_gsps: f64,
    pub lpf_cutoff_mhz: f64,
    pub full_scale_flux: f64,
    pub mutual_inductance_ph: Option<f64>,
    /// Apply the Gaussian shaping filter to simulated steps.
    pub shaping: bool,
}

impl Default for WaveformSection {
    fn default() -> Self {
        Self {
            awg_rate_gsps: 1.0,
            lpf_cutoff_mhz: 220.0,
            full_scale_flux: 1.75,
            mutual_inductance_ph: None,
            shaping: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StepSection {
    pub start: f64,
    pub end: f64,
    pub edge_ns: f64,
    pub duration_ns: f64,
}

impl Default for StepSection {
    fn default() -> Self {
        Self {
            start: 0.08,
            end: 0.31,
            edge_ns: 100.0,
            duration_ns: 1100.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SettlingSection {
    /// (alpha, tau_ns) pairs.
    pub terms: Vec<(f64, f64)>,
}

impl Default for SettlingSection {
    fn default() -> Self {
        Self {
            terms: vec![(0.48, 0.73), (0.04, 7.9), (0.01, 53.5)],
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub jitter_ps: f64,
    pub additive_rms: f64,
    pub phase_noise_deg: f64,
    pub n_averages: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            jitter_ps: 20.0,
            additive_rms: 0.0,
            phase_noise_deg: 0.25 * (50_000f64).sqrt(),
            n_averages: 50_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectionSection {
    pub amplitude_db: f64,
    pub one_way_delay_ns: f64,
    pub reflection_phase_deg: f64,
    pub chain_delay_ns: f64,
}

impl Default for ReflectionSection {
    fn default() -> Self {
        Self {
            amplitude_db: -33.0,
            one_way_delay_ns: 1.5,
            reflection_phase_deg: 140.0,
            chain_delay_ns: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DemodSection {
    pub rf_rate_gsps: f64,
    /// Defaults to an eighth of the probe frequency.
    pub lpf_cutoff_mhz: Option<f64>,
    pub hardware: bool,
    pub scope_output_rate_gsps: f64,
    pub dc_settle_amp: f64,
    pub dc_settle_tau_us: f64,
}

impl Default for DemodSection {
    fn default() -> Self {
        Self {
            rf_rate_gsps: 40.0,
            lpf_cutoff_mhz: None,
            hardware: false,
            scope_output_rate_gsps: 1.0,
            dc_settle_amp: 2e-3,
            dc_settle_tau_us: 30.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// 1, 2 or 3; absent means automatic order selection.
    pub n_terms: Option<usize>,
    pub skip_ns: f64,
    pub exclusion: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            n_terms: None,
            skip_ns: 0.0,
            exclusion: 0.38,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub horizon_us: f64,
    pub record_rate_msps: f64,
    pub bad_from: f64,
    pub very_bad_from: f64,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            horizon_us: 500.0,
            record_rate_msps: 100.0,
            bad_from: 2e-3,
            very_bad_from: 5e-2,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub family_size: usize,
    pub span_deg: f64,
    pub final_flux: f64,
    pub fine_rate_gsps: f64,
    pub window_ns: f64,
    /// Add the configured acquisition noise to every family member.
    pub with_noise: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            family_size: 16,
            span_deg: 180.0,
            final_flux: 0.08,
            fine_rate_gsps: 20.0,
            window_ns: 40.0,
            with_noise: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Scenario files only.
    pub name: Option<String>,
    pub notes: Option<String>,
    pub circuit: CircuitSection,
    pub waveform: WaveformSection,
    pub step: StepSection,
    pub settling: SettlingSection,
    pub noise: NoiseSection,
    pub reflection: Option<ReflectionSection>,
    pub demod: DemodSection,
    pub fit: FitSection,
    pub classify: ClassifySection,
    pub scan: ScanSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            name: None,
            notes: None,
            circuit: CircuitSection::default(),
            waveform: WaveformSection::default(),
            step: StepSection::default(),
            settling: SettlingSection::default(),
            noise: NoiseSection::default(),
            reflection: None,
            demod: DemodSection::default(),
            fit: FitSection::default(),
            classify: ClassifySection::default(),
            scan: ScanSection::default(),
        }
    }
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}` {reason}"))
}

fn positive(key: &str, v: f64) -> CliResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(key, format!("must be > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> CliResult<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(bad(key, format!("must be >= 0, got {v}")))
    }
}

/// Applies `section.key=value` (value in TOML syntax; bare words are taken
/// as strings) to a parsed document.
fn apply_override(doc: &mut toml::Table, item: &str) -> CliResult<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{k}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl Config {
    pub fn parse(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or `fluxprobe.toml` in the directory named by
    /// `FLUXPROBE_CONFIG_DIR` when no path is given and that file exists,
    /// or falls back to the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let resolved: Option<PathBuf> = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_DIR_ENV)
                .map(|d| Path::new(&d).join(DEFAULT_CONFIG_NAME))
                .filter(|p| p.is_file()),
        };
        let text = match &resolved {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> CliResult<()> {
        let c = &self.circuit;
        positive("circuit.ic_total_ua", c.ic_total_ua)?;
        positive("circuit.c_shunt_pf", c.c_shunt_pf)?;
        positive("circuit.z0_ohm", c.z0_ohm)?;
        positive("circuit.probe_ghz", c.probe_ghz)?;
        if !(c.flux_clamp > 0.0 && c.flux_clamp < 0.5) {
            return Err(bad("circuit.flux_clamp", format!("must lie in (0, 0.5), got {}", c.flux_clamp)));
        }
        let w = &self.waveform;
        positive("waveform.awg_rate_gsps", w.awg_rate_gsps)?;
        positive("waveform.lpf_cutoff_mhz", w.lpf_cutoff_mhz)?;
        positive("waveform.full_scale_flux", w.full_scale_flux)?;
        if let Some(m) = w.mutual_inductance_ph {
            positive("waveform.mutual_inductance_ph", m)?;
        }
        if w.lpf_cutoff_mhz * 1e6 >= w.awg_rate_gsps * 1e9 / 2.0 {
            return Err(bad("waveform.lpf_cutoff_mhz", "must be below half the AWG rate"));
        }
        let s = &self.step;
        for (k, v) in [("step.start", s.start), ("step.end", s.end)] {
            if !(v.is_finite() && v.abs() <= 0.5) {
                return Err(bad(k, format!("must lie within +-0.5 Phi0, got {v}")));
            }
        }
        non_negative("step.edge_ns", s.edge_ns)?;
        if !(s.duration_ns > s.edge_ns) {
            return Err(bad("step.duration_ns", "must exceed step.edge_ns"));
        }
        self.settling_model()?;
        let n = &self.noise;
        non_negative("noise.jitter_ps", n.jitter_ps)?;
        non_negative("noise.additive_rms", n.additive_rms)?;
        non_negative("noise.phase_noise_deg", n.phase_noise_deg)?;
        if n.n_averages == 0 {
            return Err(bad("noise.n_averages", "must be >= 1"));
        }
        if let Some(r) = &self.reflection {
            if r.amplitude_db.is_nan() || r.amplitude_db >= 0.0 {
                return Err(bad("reflection.amplitude_db", format!("must be < 0, got {}", r.amplitude_db)));
            }
            non_negative("reflection.one_way_delay_ns", r.one_way_delay_ns)?;
            non_negative("reflection.chain_delay_ns", r.chain_delay_ns)?;
            if !r.reflection_phase_deg.is_finite() {
                return Err(bad("reflection.reflection_phase_deg", "must be finite"));
            }
        }
        let d = &self.demod;
        positive("demod.rf_rate_gsps", d.rf_rate_gsps)?;
        if d.rf_rate_gsps * 1e9 <= 2.0 * c.probe_ghz * 1e9 {
            return Err(bad("demod.rf_rate_gsps", "must exceed twice the probe frequency"));
        }
        if let Some(f) = d.lpf_cutoff_mhz {
            positive("demod.lpf_cutoff_mhz", f)?;
            if f * 1e6 >= c.probe_ghz * 1e9 / 2.0 {
                return Err(bad("demod.lpf_cutoff_mhz", "must be below half the probe frequency"));
            }
        }
        positive("demod.scope_output_rate_gsps", d.scope_output_rate_gsps)?;
        non_negative("demod.dc_settle_amp", d.dc_settle_amp)?;
        positive("demod.dc_settle_tau_us", d.dc_settle_tau_us)?;
        if let Some(k) = self.fit.n_terms {
            if !(1..=3).contains(&k) {
                return Err(bad("fit.n_terms", format!("must be 1, 2 or 3, got {k}")));
            }
        }
        non_negative("fit.skip_ns", self.fit.skip_ns)?;
        if !(self.fit.exclusion > 0.0 && self.fit.exclusion < 0.5) {
            return Err(bad("fit.exclusion", "must lie in (0, 0.5)"));
        }
        let k = &self.classify;
        positive("classify.horizon_us", k.horizon_us)?;
        positive("classify.record_rate_msps", k.record_rate_msps)?;
        positive("classify.bad_from", k.bad_from)?;
        if !(k.very_bad_from > k.bad_from) {
            return Err(bad("classify.very_bad_from", "must exceed classify.bad_from"));
        }
        let sc = &self.scan;
        if sc.family_size < 3 {
            return Err(bad("scan.family_size", "must be >= 3"));
        }
        if !(sc.span_deg >= 180.0) {
            return Err(bad("scan.span_deg", "must be >= 180"));
        }
        positive("scan.fine_rate_gsps", sc.fine_rate_gsps)?;
        positive("scan.window_ns", sc.window_ns)?;
        if !(sc.final_flux.abs() <= c.flux_clamp) {
            return Err(bad("scan.final_flux", "must lie within the flux clamp"));
        }
        Ok(())
    }

    pub fn circuit_params(&self) -> CliResult<CircuitParams> {
        let c = &self.circuit;
        Ok(CircuitParams::new(c.ic_total_ua * 1e-6, c.c_shunt_pf * 1e-12, c.z0_ohm, c.probe_ghz * 1e9)?
            .with_flux_clamp(c.flux_clamp)?)
    }

    pub fn waveform_config(&self) -> WaveformConfig {
        let w = &self.waveform;
        WaveformConfig {
            awg_rate: w.awg_rate_gsps * 1e9,
            lpf_cutoff: w.lpf_cutoff_mhz * 1e6,
            mutual_inductance: w.mutual_inductance_ph.map(|m| m * 1e-12),
            full_scale_flux: w.full_scale_flux,
        }
    }

    pub fn settling_model(&self) -> CliResult<ExpSettlingModel> {
        ExpSettlingModel::new(self.settling.terms.iter().copied())
            .map_err(|e| bad("settling.terms", e))
    }

    pub fn noise_config(&self) -> NoiseConfig {
        let n = &self.noise;
        NoiseConfig {
            jitter_pkpk: n.jitter_ps * 1e-12,
            additive_noise_rms: n.additive_rms,
            phase_noise_deg: n.phase_noise_deg,
            n_averages: n.n_averages,
            seed: self.seed,
        }
    }

    pub fn reflection(&self) -> CliResult<Option<ReflectionScenario>> {
        self.reflection
            .as_ref()
            .map(|r| {
                let mut s = ReflectionScenario::new(r.amplitude_db, r.one_way_delay_ns, r.reflection_phase_deg)?;
                s.chain_delay_ns = r.chain_delay_ns;
                Ok(s)
            })
            .transpose()
    }

    pub fn demod_cutoff(&self) -> f64 {
        self.demod
            .lpf_cutoff_mhz
            .map(|f| f * 1e6)
            .unwrap_or(self.circuit.probe_ghz * 1e9 / 8.0)
    }

    pub fn settling_options(&self) -> SettlingOptions {
        SettlingOptions {
            skip_ns: self.fit.skip_ns,
            ..SettlingOptions::default()
        }
    }

    pub fn classify_config(&self) -> ClassifyConfig {
        ClassifyConfig {
            horizon_us: self.classify.horizon_us,
            bad_from: self.classify.bad_from,
            very_bad_from: self.classify.very_bad_from,
            ..ClassifyConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = Config::parse("", &[]).unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.circuit_params().unwrap(), CircuitParams::designed());
    }

    #[test]
    fn overrides_apply() {
        let c = Config::parse("[circuit]\nz0_ohm = 15.0\n", &["circuit.z0_ohm=14.8".into(), "seed=9".into()])
            .unwrap();
        assert_eq!(c.circuit.z0_ohm, 14.8);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn invalid_fields_are_named() {
        for (o, key) in [
            ("circuit.z0_ohm=-1", "circuit.z0_ohm"),
            ("circuit.flux_clamp=0.6", "circuit.flux_clamp"),
            ("noise.n_averages=0", "noise.n_averages"),
            ("settling.terms=[[0.7, 1.0], [0.5, 2.0]]", "settling.terms"),
            ("demod.rf_rate_gsps=10", "demod.rf_rate_gsps"),
            ("step.end=0.7", "step.end"),
        ] {
            let e = Config::parse("", &[o.into()]).unwrap_err();
            assert!(e.to_string().contains(key), "{o}: {e}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = Config::parse("[circuit]\nz1 = 3\n", &[]).unwrap_err();
        assert!(e.to_string().contains("z1"), "{e}");
    }
}
