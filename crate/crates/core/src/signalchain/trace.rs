use crate::circuit::unwrap_degrees;
use crate::error::{Error, Result};

fn check_rate(sample_rate: f64) -> Result<()> {
    if sample_rate.is_finite() && sample_rate > 0.0 {
        Ok(())
    } else {
        Err(Error::param("sample_rate", format!("must be > 0, got {sample_rate}")))
    }
}

fn check_finite(field: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::param(field, format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// Digitized homodyne record: reflected signal and the local oscillator
/// copy, sampled together.
#[derive(Debug, Clone, PartialEq)]
pub struct RFTrace {
    pub(crate) sample_rate: f64,
    pub(crate) t0_ns: f64,
    pub(crate) probe_freq: f64,
    pub(crate) signal: Vec<f64>,
    pub(crate) reference: Vec<f64>,
}

impl RFTrace {
    pub fn new(
        sample_rate: f64,
        t0_ns: f64,
        probe_freq: f64,
        signal: Vec<f64>,
        reference: Vec<f64>,
    ) -> Result<Self> {
        check_rate(sample_rate)?;
        if !(probe_freq.is_finite() && probe_freq > 0.0) {
            return Err(Error::param("probe_freq", "must be > 0"));
        }
        if signal.len() != reference.len() {
            return Err(Error::ShapeMismatch(format!(
                "signal has {} samples, reference {}",
                signal.len(),
                reference.len()
            )));
        }
        if signal.len() < 2 {
            return Err(Error::param("signal", "need at least 2 samples"));
        }
        check_finite("signal", &signal)?;
        check_finite("reference", &reference)?;
        Ok(Self {
            sample_rate,
            t0_ns,
            probe_freq,
            signal,
            reference,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn t0_ns(&self) -> f64 {
        self.t0_ns
    }

    pub fn probe_freq(&self) -> f64 {
        self.probe_freq
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

/// Demodulated phase in degrees, unwrapped, with optional flux obtained by
/// inverting a calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    sample_rate: f64,
    t0_ns: f64,
    phase_deg: Vec<f64>,
    flux: Option<Vec<f64>>,
}

impl PhaseTrace {
    /// Takes phases as given; use [`PhaseTrace::from_wrapped`] for raw
    /// atan2 output.
    pub fn new(sample_rate: f64, t0_ns: f64, phase_deg: Vec<f64>) -> Result<Self> {
        check_rate(sample_rate)?;
        if phase_deg.len() < 2 {
            return Err(Error::param("phase", "need at least 2 samples"));
        }
        check_finite("phase", &phase_deg)?;
        if !t0_ns.is_finite() {
            return Err(Error::param("t0", "must be finite"));
        }
        Ok(Self {
            sample_rate,
            t0_ns,
            phase_deg,
            flux: None,
        })
    }

    pub fn from_wrapped(sample_rate: f64, t0_ns: f64, wrapped_deg: &[f64]) -> Result<Self> {
        Self::new(sample_rate, t0_ns, unwrap_degrees(wrapped_deg))
    }

    pub fn with_flux(mut self, flux: Vec<f64>) -> Result<Self> {
        if flux.len() != self.phase_deg.len() {
            return Err(Error::ShapeMismatch(format!(
                "flux has {} samples, phase {}",
                flux.len(),
                self.phase_deg.len()
            )));
        }
        check_finite("flux", &flux)?;
        self.flux = Some(flux);
        Ok(self)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn t0_ns(&self) -> f64 {
        self.t0_ns
    }

    pub fn phase_deg(&self) -> &[f64] {
        &self.phase_deg
    }

    pub fn flux(&self) -> Option<&[f64]> {
        self.flux.as_deref()
    }

    pub fn len(&self) -> usize {
        self.phase_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase_deg.is_empty()
    }

    pub fn dt_ns(&self) -> f64 {
        1e9 / self.sample_rate
    }

    pub fn time_ns(&self, i: usize) -> f64 {
        self.t0_ns + i as f64 * self.dt_ns()
    }

    pub fn times_ns(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time_ns(i)).collect()
    }

    /// Phase at `t_ns` by linear interpolation, held constant outside the
    /// record.
    pub fn phase_at(&self, t_ns: f64) -> f64 {
        let x = (t_ns - self.t0_ns) / self.dt_ns();
        let last = self.phase_deg.len() - 1;
        if x <= 0.0 {
            return self.phase_deg[0];
        }
        if x >= last as f64 {
            return self.phase_deg[last];
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        self.phase_deg[i] * (1.0 - f) + self.phase_deg[i + 1] * f
    }

    pub(crate) fn with_phase(&self, phase_deg: Vec<f64>) -> Self {
        Self {
            sample_rate: self.sample_rate,
            t0_ns: self.t0_ns,
            phase_deg,
            flux: None,
        }
    }

    pub(crate) fn same_grid(&self, other: &PhaseTrace) -> bool {
        self.len() == other.len()
            && self.sample_rate == other.sample_rate
            && self.t0_ns == other.t0_ns
    }
}

/// Baseband in-phase and quadrature record from an IQ mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct IqTrace {
    sample_rate: f64,
    t0_ns: f64,
    i: Vec<f64>,
    q: Vec<f64>,
}

impl IqTrace {
    pub fn new(sample_rate: f64, t0_ns: f64, i: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        check_rate(sample_rate)?;
        if i.len() != q.len() {
            return Err(Error::ShapeMismatch(format!("I has {} samples, Q {}", i.len(), q.len())));
        }
        if i.len() < 2 {
            return Err(Error::param("i", "need at least 2 samples"));
        }
        check_finite("i", &i)?;
        check_finite("q", &q)?;
        Ok(Self { sample_rate, t0_ns, i, q })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn t0_ns(&self) -> f64 {
        self.t0_ns
    }

    pub fn i(&self) -> &[f64] {
        &self.i
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Unit-amplitude IQ record carrying the given phase.
    pub fn from_phase(trace: &PhaseTrace) -> Self {
        let (i, q) = trace
            .phase_deg()
            .iter()
            .map(|p| {
                let r = p.to_radians();
                (r.cos(), r.sin())
            })
            .unzip();
        Self {
            sample_rate: trace.sample_rate(),
            t0_ns: trace.t0_ns(),
            i,
            q,
        }
    }

    pub fn to_phase(&self) -> Result<PhaseTrace> {
        if let Some(k) = self.i.iter().zip(&self.q).position(|(i, q)| i.hypot(*q) == 0.0) {
            return Err(Error::Demodulation(format!("zero IQ amplitude at sample {k}")));
        }
        let wrapped: Vec<f64> = self
            .i
            .iter()
            .zip(&self.q)
            .map(|(i, q)| q.atan2(*i).to_degrees())
            .collect();
        PhaseTrace::from_wrapped(self.sample_rate, self.t0_ns, &wrapped)
    }
}

/// Pointwise mean of phase traces sharing one time grid. Flux is averaged
/// too when every trace carries it.
pub fn average_traces(traces: &[PhaseTrace]) -> Result<PhaseTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InsufficientData("no traces to average".into()))?;
    if let Some(k) = traces.iter().position(|t| !t.same_grid(first)) {
        return Err(Error::ShapeMismatch(format!(
            "trace {k} differs from trace 0 in rate, start or length"
        )));
    }
    let n = traces.len() as f64;
    let mean = |get: &dyn Fn(&PhaseTrace) -> &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; first.len()];
        for t in traces {
            for (a, v) in acc.iter_mut().zip(get(t)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    };
    let mut out = first.with_phase(mean(&|t| t.phase_deg()));
    if traces.iter().all(|t| t.flux.is_some()) {
        out.flux = Some(mean(&|t| t.flux().unwrap_or_default()));
    }
    Ok(out)
}
