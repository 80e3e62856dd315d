//! CSV trace format.
//!
//! ```text
//! # kind: phase
//! # sample_rate: 1000000000 Hz
//! # t0: 0 ns
//! # seed: 7
//! time[ns],phase[deg],flux[Phi0]
//! 0.0000000000000000e0,1.2950000000000000e2,0.0000000000000000e0
//! ```
//!
//! Every column and every dimensional header value carries a unit. Values
//! are written with 17 significant digits so a save/load cycle reproduces
//! them exactly. Paths ending in `.gz` are gzip-compressed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use fluxprobe::signalchain::{PhaseTrace, RFTrace};
use fluxprobe::waveforms::FluxWaveform;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Flux,
    Phase,
    Rf,
    Calibration,
    Table,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Flux => "flux",
            TraceKind::Phase => "phase",
            TraceKind::Rf => "rf",
            TraceKind::Calibration => "calibration",
            TraceKind::Table => "table",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "flux" => TraceKind::Flux,
            "phase" => TraceKind::Phase,
            "rf" => TraceKind::Rf,
            "calibration" => TraceKind::Calibration,
            "table" => TraceKind::Table,
            _ => return None,
        })
    }

    /// Kinds whose first column is a uniformly sampled time axis.
    pub fn is_time_series(self) -> bool {
        matches!(self, TraceKind::Flux | TraceKind::Phase | TraceKind::Rf)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub kind: TraceKind,
    /// Samples/s; required for time series.
    pub sample_rate: Option<f64>,
    pub t0_ns: f64,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    /// Probe frequency in Hz, for RF records.
    pub probe_freq: Option<f64>,
    /// Other `key: value` header lines, kept verbatim.
    pub extra: BTreeMap<String, String>,
    pub columns: Vec<Column>,
    /// Column-major data.
    pub data: Vec<Vec<f64>>,
}

impl TraceFile {
    fn time_series(kind: TraceKind, rate: f64, t0_ns: f64, cols: Vec<(Column, Vec<f64>)>) -> Self {
        let n = cols.first().map_or(0, |c| c.1.len());
        let dt = 1e9 / rate;
        let time = (0..n).map(|i| t0_ns + i as f64 * dt).collect();
        let (mut columns, mut data) = (vec![Column::new("time", "ns")], vec![time]);
        for (c, d) in cols {
            columns.push(c);
            data.push(d);
        }
        Self {
            kind,
            sample_rate: Some(rate),
            t0_ns,
            seed: None,
            scenario: None,
            probe_freq: None,
            extra: BTreeMap::new(),
            columns,
            data,
        }
    }

    pub fn from_flux(wf: &FluxWaveform) -> Self {
        Self::time_series(
            TraceKind::Flux,
            wf.sample_rate(),
            wf.t0_ns(),
            vec![(Column::new("flux", "Phi0"), wf.samples().to_vec())],
        )
    }

    pub fn from_phase(tr: &PhaseTrace) -> Self {
        let mut cols = vec![(Column::new("phase", "deg"), tr.phase_deg().to_vec())];
        if let Some(f) = tr.flux() {
            cols.push((Column::new("flux", "Phi0"), f.to_vec()));
        }
        Self::time_series(TraceKind::Phase, tr.sample_rate(), tr.t0_ns(), cols)
    }

    pub fn from_rf(tr: &RFTrace) -> Self {
        let mut f = Self::time_series(
            TraceKind::Rf,
            tr.sample_rate(),
            tr.t0_ns(),
            vec![
                (Column::new("signal", "V"), tr.signal().to_vec()),
                (Column::new("reference", "V"), tr.reference().to_vec()),
            ],
        );
        f.probe_freq = Some(tr.probe_freq());
        f
    }

    pub fn from_calibration(flux: &[f64], phase_deg: &[f64]) -> Self {
        Self::table(
            TraceKind::Calibration,
            vec![
                (Column::new("flux", "Phi0"), flux.to_vec()),
                (Column::new("phase", "deg"), phase_deg.to_vec()),
            ],
        )
    }

    /// Untimed table of equally long columns.
    pub fn table(kind: TraceKind, cols: Vec<(Column, Vec<f64>)>) -> Self {
        let (columns, data) = cols.into_iter().unzip();
        Self {
            kind,
            sample_rate: None,
            t0_ns: 0.0,
            seed: None,
            scenario: None,
            probe_freq: None,
            extra: BTreeMap::new(),
            columns,
            data,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_scenario(mut self, name: &str) -> Self {
        self.scenario = Some(name.to_string());
        self
    }

    pub fn rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .map(|i| self.data[i].as_slice())
    }

    fn require(&self, name: &str) -> CliResult<&[f64]> {
        self.column(name)
            .ok_or_else(|| CliError::Data(format!("trace has no `{name}` column")))
    }

    fn rate(&self) -> CliResult<f64> {
        self.sample_rate
            .ok_or_else(|| CliError::Data("trace has no sample_rate".into()))
    }

    pub fn to_flux(&self) -> CliResult<FluxWaveform> {
        Ok(FluxWaveform::new(self.rate()?, self.require("flux")?.to_vec(), self.t0_ns)?)
    }

    pub fn to_phase(&self) -> CliResult<PhaseTrace> {
        let tr = PhaseTrace::new(self.rate()?, self.t0_ns, self.require("phase")?.to_vec())?;
        Ok(match self.column("flux") {
            Some(f) => tr.with_flux(f.to_vec())?,
            None => tr,
        })
    }

    pub fn to_rf(&self) -> CliResult<RFTrace> {
        let probe = self
            .probe_freq
            .ok_or_else(|| CliError::Data("RF trace has no probe_freq header".into()))?;
        Ok(RFTrace::new(
            self.rate()?,
            self.t0_ns,
            probe,
            self.require("signal")?.to_vec(),
            self.require("reference")?.to_vec(),
        )?)
    }

    /// (flux, phase) pairs of a calibration sweep.
    pub fn to_calibration(&self) -> CliResult<(Vec<f64>, Vec<f64>)> {
        Ok((self.require("flux")?.to_vec(), self.require("phase")?.to_vec()))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kind: {}", self.kind.as_str());
        if let Some(r) = self.sample_rate {
            let _ = writeln!(s, "# sample_rate: {r} Hz");
            let _ = writeln!(s, "# t0: {} ns", self.t0_ns);
        }
        if let Some(p) = self.probe_freq {
            let _ = writeln!(s, "# probe_freq: {p} Hz");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed: {seed}");
        }
        if let Some(name) = &self.scenario {
            let _ = writeln!(s, "# scenario: {name}");
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let header: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{}[{}]", c.name, c.unit))
            .collect();
        let _ = writeln!(s, "{}", header.join(","));
        for i in 0..self.rows() {
            for (k, col) in self.data.iter().enumerate() {
                if k > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{:.16e}", col[i]);
            }
            s.push('\n');
        }
        s
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn save_trace(trace: &TraceFile, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let text = trace.render();
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(text.as_bytes()).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(text.as_bytes()).and_then(|_| w.flush())
    };
    res.map_err(|e| CliError::io(path, e))
}

pub fn load_trace(path: &Path) -> CliResult<TraceFile> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_trace(BufReader::new(reader), path)
}

fn quantity(value: &str, unit: &str, key: &str) -> Result<f64, String> {
    let mut parts = value.split_whitespace();
    let (Some(num), Some(u), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("`{key}` needs a value and the unit {unit}"));
    };
    if u != unit {
        return Err(format!("`{key}` must be given in {unit}, found {u}"));
    }
    num.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{key}` is not a finite number: {num}"))
}

pub fn parse_trace(reader: impl BufRead, path: &Path) -> CliResult<TraceFile> {
    let err = |line: usize, msg: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut kind = None;
    let mut sample_rate = None;
    let mut t0 = None;
    let mut seed = None;
    let mut scenario = None;
    let mut probe_freq = None;
    let mut extra = BTreeMap::new();
    let mut columns: Option<Vec<Column>> = None;
    let mut data: Vec<Vec<f64>> = Vec::new();
    let mut header_line = 0;

    for (idx, line) in reader.lines().enumerate() {
        let no = idx + 1;
        let line = line.map_err(|e| CliError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            if columns.is_some() {
                return Err(err(no, "header line after the data started".into()));
            }
            let Some((k, v)) = h.split_once(':') else {
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "kind" => {
                    kind = Some(TraceKind::parse(v).ok_or_else(|| err(no, format!("unknown kind `{v}`")))?)
                }
                "sample_rate" => sample_rate = Some(quantity(v, "Hz", k).map_err(|m| err(no, m))?),
                "t0" => t0 = Some(quantity(v, "ns", k).map_err(|m| err(no, m))?),
                "probe_freq" => probe_freq = Some(quantity(v, "Hz", k).map_err(|m| err(no, m))?),
                "seed" => seed = Some(v.parse().map_err(|_| err(no, format!("bad seed `{v}`")))?),
                "scenario" => scenario = Some(v.to_string()),
                _ => {
                    extra.insert(k.to_string(), v.to_string());
                }
            }
            continue;
        }
        match &columns {
            None => {
                let cols = line
                    .split(',')
                    .map(|c| {
                        let c = c.trim();
                        match (c.find('['), c.strip_suffix(']')) {
                            (Some(i), Some(_)) if i > 0 && i + 2 < c.len() => {
                                Ok(Column::new(&c[..i], &c[i + 1..c.len() - 1]))
                            }
                            _ => Err(err(no, format!("column `{c}` lacks a [unit]"))),
                        }
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                data = vec![Vec::new(); cols.len()];
                columns = Some(cols);
                header_line = no;
            }
            Some(cols) => {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != cols.len() {
                    return Err(err(
                        no,
                        format!("expected {} columns, found {}", cols.len(), fields.len()),
                    ));
                }
                for (k, f) in fields.iter().enumerate() {
                    let v: f64 = f
                        .trim()
                        .parse()
                        .map_err(|_| err(no, format!("not a number: `{}`", f.trim())))?;
                    if !v.is_finite() {
                        return Err(err(no, format!("non-finite value `{}`", f.trim())));
                    }
                    data[k].push(v);
                }
            }
        }
    }
    let columns = columns.ok_or_else(|| err(header_line, "no column header".into()))?;
    let kind = kind.unwrap_or(TraceKind::Table);
    let trace = TraceFile {
        kind,
        sample_rate,
        t0_ns: t0.unwrap_or(0.0),
        seed,
        scenario,
        probe_freq,
        extra,
        columns,
        data,
    };
    if kind.is_time_series() {
        check_time_axis(&trace, header_line).map_err(|(line, m)| err(line, m))?;
    }
    Ok(trace)
}

fn check_time_axis(t: &TraceFile, header_line: usize) -> Result<(), (usize, String)> {
    let rate = t
        .sample_rate
        .ok_or((header_line, "missing sample_rate header".to_string()))?;
    if rate <= 0.0 {
        return Err((header_line, "sample_rate must be > 0".into()));
    }
    if t.columns[0].name != "time" || t.columns[0].unit != "ns" {
        return Err((header_line, "first column must be time[ns]".into()));
    }
    let time = &t.data[0];
    if time.len() < 2 {
        return Err((header_line, "need at least 2 samples".into()));
    }
    if let Some(i) = time.windows(2).position(|w| w[1] <= w[0]) {
        return Err((header_line + i + 2, "time is not strictly increasing".into()));
    }
    let n = time.len();
    let measured = (n - 1) as f64 * 1e9 / (time[n - 1] - time[0]);
    if ((measured - rate) / rate).abs() > 1e-9 {
        return Err((
            header_line,
            format!("timestamps imply {measured} Hz but sample_rate is {rate} Hz"),
        ));
    }
    Ok(())
}
