use nalgebra::{DMatrix, DVector};

use super::lm::{minimize, LmOptions};
use crate::error::{Error, Result};
use crate::signalchain::PhaseTrace;
use crate::waveforms::{ExpSettlingModel, FluxWaveform};

/// A uniformly sampled record containing one step.
pub trait StepRecord {
    fn values(&self) -> &[f64];
    fn sample_rate(&self) -> f64;
    fn t0_ns(&self) -> f64;

    fn time_ns(&self, i: usize) -> f64 {
        self.t0_ns() + i as f64 * 1e9 / self.sample_rate()
    }
}

impl StepRecord for FluxWaveform {
    fn values(&self) -> &[f64] {
        self.samples()
    }
    fn sample_rate(&self) -> f64 {
        FluxWaveform::sample_rate(self)
    }
    fn t0_ns(&self) -> f64 {
        FluxWaveform::t0_ns(self)
    }
}

/// Uses the inverted flux when present, otherwise the phase.
impl StepRecord for PhaseTrace {
    fn values(&self) -> &[f64] {
        self.flux().unwrap_or(self.phase_deg())
    }
    fn sample_rate(&self) -> f64 {
        PhaseTrace::sample_rate(self)
    }
    fn t0_ns(&self) -> f64 {
        PhaseTrace::t0_ns(self)
    }
}

/// Fitted settling of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SettlingFit {
    pub model: ExpSettlingModel,
    /// Final minus baseline level, in the record's units.
    pub step_amplitude: f64,
    pub baseline: f64,
    /// RMS misfit of the normalized step response.
    pub residual_rms: f64,
    pub n_terms: usize,
    /// Two fitted time constants lie within a factor 1.5 of each other.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlingOptions {
    /// Post-edge samples earlier than this are left out, e.g. to skip the
    /// rise of a band-limited edge.
    pub skip_ns: f64,
    /// Shortest initial time constant, in ns.
    pub tau_min_ns: f64,
    pub lm: LmOptions,
}

impl Default for SettlingOptions {
    fn default() -> Self {
        Self {
            skip_ns: 0.0,
            tau_min_ns: 0.3,
            lm: LmOptions::default(),
        }
    }
}

/// Ratio below which two time constants are reported as degenerate.
pub const DEGENERATE_RATIO: f64 = 1.5;

struct Normalized {
    t: Vec<f64>,
    /// 1 - A(t), the part explained by the decaying terms.
    z: Vec<f64>,
    baseline: f64,
    step: f64,
}

fn normalize(rec: &dyn StepRecord, edge_ns: f64, skip_ns: f64) -> Result<Normalized> {
    let v = rec.values();
    let n = v.len();
    let pre: Vec<f64> = (0..n)
        .take_while(|&i| rec.time_ns(i) < edge_ns)
        .map(|i| v[i])
        .collect();
    if pre.is_empty() {
        return Err(Error::InsufficientData("no samples before the edge".into()));
    }
    if pre.len() >= n {
        return Err(Error::InsufficientData("no samples after the edge".into()));
    }
    let baseline = pre.iter().sum::<f64>() / pre.len() as f64;
    let tail = (n / 10).max(1);
    let last = v[n - tail..].iter().sum::<f64>() / tail as f64;
    let step = last - baseline;
    let scale = baseline.abs().max(last.abs());
    if step == 0.0 || step.abs() <= 1e-12 * scale {
        return Err(Error::Degenerate("step amplitude is zero".into()));
    }
    let (t, z) = (pre.len()..n)
        .map(|i| (rec.time_ns(i) - edge_ns, 1.0 - (v[i] - baseline) / step))
        .filter(|(t, _)| *t >= skip_ns)
        .unzip();
    Ok(Normalized { t, z, baseline, step })
}

fn basis(t: &[f64], taus: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), taus.len(), |i, k| (-t[i] / taus[k]).exp())
}

/// Amplitudes minimizing the misfit for fixed time constants.
fn solve_alpha(t: &[f64], z: &[f64], taus: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = basis(t, taus);
    let zv = DVector::from_column_slice(z);
    let svd = a.clone().svd(true, true);
    let alpha = svd
        .solve(&zv, 1e-13)
        .map_err(|e| Error::Degenerate(format!("amplitude solve failed: {e}")))?;
    let r = zv - a * &alpha;
    Ok((alpha.iter().copied().collect(), r.iter().copied().collect()))
}

/// Least-squares fit of A(t) = 1 - Σ α_i·exp(-t/τ_i) to the normalized
/// step after `edge_ns`.
///
/// The record is normalized by the pre-edge mean and the mean of its last
/// 10 %. Time constants are fitted in log space and start log-spaced over
/// [0.3 ns, a third of the post-edge record]; for each trial set the
/// amplitudes are solved by linear least squares.
pub fn fit_settling(rec: &dyn StepRecord, edge_ns: f64, n_terms: usize) -> Result<SettlingFit> {
    fit_settling_with(rec, edge_ns, n_terms, &SettlingOptions::default())
}

pub fn fit_settling_with(
    rec: &dyn StepRecord,
    edge_ns: f64,
    n_terms: usize,
    opts: &SettlingOptions,
) -> Result<SettlingFit> {
    if !(1..=3).contains(&n_terms) {
        return Err(Error::param("n_terms", format!("must be 1, 2 or 3, got {n_terms}")));
    }
    let norm = normalize(rec, edge_ns, opts.skip_ns)?;
    if norm.t.len() < 10 * n_terms {
        return Err(Error::InsufficientData(format!(
            "{} post-edge samples is too few for {n_terms} terms",
            norm.t.len()
        )));
    }
    let span = norm.t[norm.t.len() - 1];
    let tau_max = span / 3.0;
    if tau_max <= opts.tau_min_ns {
        return Err(Error::InsufficientData(format!(
            "post-edge record of {span} ns is too short"
        )));
    }
    let (la, lb) = (opts.tau_min_ns.ln(), tau_max.ln());
    let u0: Vec<f64> = if n_terms == 1 {
        vec![0.5 * (la + lb)]
    } else {
        (0..n_terms)
            .map(|k| la + (lb - la) * k as f64 / (n_terms - 1) as f64)
            .collect()
    };
    let dt = 1e9 / rec.sample_rate();
    let lower = vec![(0.05 * dt).ln(); n_terms];
    let upper = vec![(100.0 * span).ln(); n_terms];
    let (t, z) = (&norm.t, &norm.z);
    let resid = |u: &[f64]| -> Result<Vec<f64>> {
        let taus: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        Ok(solve_alpha(t, z, &taus)?.1)
    };
    let rep = minimize(resid, &u0, &lower, &upper, &opts.lm)?;
    let taus: Vec<f64> = rep.x.iter().map(|v| v.exp()).collect();
    let (alpha, r) = solve_alpha(t, z, &taus)?;
    let mut pairs: Vec<(f64, f64)> = alpha.into_iter().zip(taus).collect();
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
    let degenerate = pairs.windows(2).any(|w| w[1].1 / w[0].1 < DEGENERATE_RATIO);
    let model = ExpSettlingModel::new(pairs.iter().copied()).map_err(|_| {
        Error::Degenerate(format!(
            "fitted amplitudes {:?} do not form a valid settling model",
            pairs.iter().map(|p| p.0).collect::<Vec<_>>()
        ))
    })?;
    Ok(SettlingFit {
        model,
        step_amplitude: norm.step,
        baseline: norm.baseline,
        residual_rms: (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt(),
        n_terms,
        degenerate,
    })
}

/// Residuals below this (normalized units) count as exact, so noiseless
/// records do not demand terms that only shave off rounding error.
const RESIDUAL_FLOOR: f64 = 1e-9;

/// Fits 1, 2 and 3 terms and keeps the smallest order whose residual is
/// within 10 % of the 3-term residual and whose time constants are well
/// separated.
pub fn select_model_order(rec: &dyn StepRecord, edge_ns: f64) -> Result<SettlingFit> {
    select_model_order_with(rec, edge_ns, &SettlingOptions::default())
}

pub fn select_model_order_with(
    rec: &dyn StepRecord,
    edge_ns: f64,
    opts: &SettlingOptions,
) -> Result<SettlingFit> {
    let mut fits = Vec::new();
    let mut first_err = None;
    for n in 1..=3 {
        match fit_settling_with(rec, edge_ns, n, opts) {
            Ok(f) => fits.push(f),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let reference = fits
        .iter()
        .find(|f| f.n_terms == 3)
        .or_else(|| fits.iter().min_by(|a, b| a.residual_rms.total_cmp(&b.residual_rms)))
        .map(|f| f.residual_rms);
    let Some(reference) = reference else {
        return Err(first_err.expect("no fit and no error"));
    };
    let well_posed = |f: &&SettlingFit| !f.degenerate;
    fits.iter()
        .filter(well_posed)
        .find(|f| f.residual_rms <= 1.1 * reference + RESIDUAL_FLOOR)
        .or_else(|| {
            fits.iter()
                .filter(well_posed)
                .min_by(|a, b| a.residual_rms.total_cmp(&b.residual_rms))
        })
        .cloned()
        .ok_or_else(|| Error::Degenerate("every fitted order has degenerate time constants".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveforms::{apply_settling, make_step, WaveformConfig};

    fn distorted(model: &ExpSettlingModel) -> FluxWaveform {
        let step = make_step(0.08, 0.31, 100.0, 1100.0, &WaveformConfig::default()).unwrap();
        apply_settling(&step, model)
    }

    #[test]
    fn single_term_recovered() {
        let m = ExpSettlingModel::new([(0.2, 10.0)]).unwrap();
        let fit = fit_settling(&distorted(&m), 100.0, 1).unwrap();
        let t = fit.model.terms()[0];
        assert!((t.alpha - 0.2).abs() < 1e-6 && (t.tau_ns - 10.0).abs() < 1e-4, "{t:?}");
        assert!((fit.step_amplitude - 0.23).abs() < 1e-9);
        assert!(!fit.degenerate);
    }

    #[test]
    fn three_terms_noiseless() {
        let m = ExpSettlingModel::reference_package();
        let fit = fit_settling(&distorted(&m), 100.0, 3).unwrap();
        for (a, b) in fit.model.terms().iter().zip(m.terms()) {
            assert!((a.alpha - b.alpha).abs() < 1e-3, "{fit:?}");
            assert!((a.tau_ns / b.tau_ns - 1.0).abs() < 0.02, "{fit:?}");
        }
    }

    #[test]
    fn order_selection() {
        let one = ExpSettlingModel::new([(0.2, 10.0)]).unwrap();
        assert_eq!(select_model_order(&distorted(&one), 100.0).unwrap().n_terms, 1);
        let three = ExpSettlingModel::reference_package();
        assert_eq!(select_model_order(&distorted(&three), 100.0).unwrap().n_terms, 3);
    }

    #[test]
    fn invalid_requests() {
        let wf = distorted(&ExpSettlingModel::empty());
        assert!(fit_settling(&wf, 100.0, 4).is_err());
        assert!(matches!(fit_settling(&wf, 0.0, 1), Err(Error::InsufficientData(_))));
        let flat = make_step(0.1, 0.1, 100.0, 400.0, &WaveformConfig::default()).unwrap();
        assert!(matches!(fit_settling(&flat, 100.0, 1), Err(Error::Degenerate(_))));
    }
}
