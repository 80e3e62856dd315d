use super::lm::{minimize, LmOptions};
use crate::circuit::{self, wrap_degrees, CircuitParams};
use crate::error::{Error, Result};

/// Fitted flux-to-phase calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub params: CircuitParams,
    /// Global phase offset added to the model angle, in degrees.
    pub offset_deg: f64,
    pub residual_rms: f64,
    /// Points with |flux| above this were left out of the fit.
    pub exclusion: f64,
    pub n_excluded: usize,
    pub n_used: usize,
    pub iterations: usize,
}

impl CalibrationFit {
    /// Calibrated phase at `flux`, in degrees.
    pub fn phase(&self, flux: f64) -> Result<f64> {
        Ok(circuit::reflection_angle(flux, &self.params)?.value() + self.offset_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Points with |flux| above this are excluded before fitting.
    pub exclusion: f64,
    pub min_points: usize,
    /// Minimum flux span of the retained points, in Φ0.
    pub min_span: f64,
    pub lm: LmOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            exclusion: 0.38,
            min_points: 8,
            min_span: 0.25,
            lm: LmOptions::default(),
        }
    }
}

/// Least-squares fit of the reflection-angle model plus a global offset.
///
/// The reflection angle depends on z0, the critical current and the shunt
/// capacitance only through z0·ic and z0·c, so the three cannot be fitted
/// together. z0 is held at `init.z0` and the critical current, capacitance
/// and offset are fitted; a z0 known to a given accuracy therefore bounds
/// the accuracy of the other two.
pub fn fit_calibration(
    flux: &[f64],
    phase_deg: &[f64],
    probe_freq: f64,
    init: &CircuitParams,
) -> Result<CalibrationFit> {
    fit_calibration_with(flux, phase_deg, probe_freq, init, &CalibrationOptions::default())
}

pub fn fit_calibration_with(
    flux: &[f64],
    phase_deg: &[f64],
    probe_freq: f64,
    init: &CircuitParams,
    opts: &CalibrationOptions,
) -> Result<CalibrationFit> {
    if flux.len() != phase_deg.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} flux points but {} phases",
            flux.len(),
            phase_deg.len()
        )));
    }
    if flux.iter().chain(phase_deg).any(|v| !v.is_finite()) {
        return Err(Error::param("calibration data", "contains non-finite values"));
    }
    if !(opts.exclusion > 0.0 && opts.exclusion < 0.5) {
        return Err(Error::param("exclusion", "must lie in (0, 0.5) Phi0"));
    }
    let mut model = init.with_probe_freq(probe_freq)?;
    model.flux_clamp = model.flux_clamp.max(opts.exclusion);
    let pts: Vec<(f64, f64)> = flux
        .iter()
        .zip(phase_deg)
        .filter(|(f, _)| f.abs() <= opts.exclusion)
        .map(|(f, p)| (*f, *p))
        .collect();
    let n_excluded = flux.len() - pts.len();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if pts.len() >= 2 && hi == lo {
        return Err(Error::Degenerate("all calibration fluxes are equal".into()));
    }
    if pts.len() < opts.min_points {
        return Err(Error::InsufficientData(format!(
            "{} usable points, need {}",
            pts.len(),
            opts.min_points
        )));
    }
    if hi - lo < opts.min_span {
        return Err(Error::InsufficientData(format!(
            "flux span {:.4} Phi0 is below {}",
            hi - lo,
            opts.min_span
        )));
    }

    let build = |x: &[f64]| -> CircuitParams {
        CircuitParams {
            ic_total: x[0] * 1e-6,
            c_shunt: x[1] * 1e-12,
            ..model
        }
    };
    // circular mean of the misfit at the initial guess
    let (s, c) = pts.iter().try_fold((0.0, 0.0), |(s, c), (f, p)| {
        let d = (p - circuit::reflection_angle(*f, &model)?.value()).to_radians();
        Ok::<_, Error>((s + d.sin(), c + d.cos()))
    })?;
    let offset0 = s.atan2(c).to_degrees();
    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let p = build(x);
        pts.iter()
            .map(|(f, ph)| Ok(wrap_degrees(circuit::reflection_angle(*f, &p)?.value() + x[2] - ph)))
            .collect()
    };
    let x0 = [model.ic_total * 1e6, model.c_shunt * 1e12, offset0];
    let rep = minimize(
        residuals,
        &x0,
        &[1e-3, 1e-3, -1e4],
        &[1e3, 1e4, 1e4],
        &opts.lm,
    )?;
    let mut params = build(&rep.x);
    params.flux_clamp = init.flux_clamp;
    params.validate()?;
    Ok(CalibrationFit {
        params,
        offset_deg: rep.x[2],
        residual_rms: (2.0 * rep.cost / pts.len() as f64).sqrt(),
        exclusion: opts.exclusion,
        n_excluded,
        n_used: pts.len(),
        iterations: rep.iterations,
    })
}

/// Flux on the monotone branch [0, flux_clamp] that produces `phase_deg`
/// under the fitted calibration.
pub fn invert_calibration(phase_deg: f64, fit: &CalibrationFit) -> Result<f64> {
    let target = wrap_degrees(phase_deg - fit.offset_deg);
    circuit::flux_for_angle(target, &fit.params).map_err(|e| match e {
        Error::OutOfBranch { low, high, .. } => Error::OutOfBranch {
            phase: phase_deg,
            low: low + fit.offset_deg,
            high: high + fit.offset_deg,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::IcConvention;

    fn synthetic(p: &CircuitParams, offset: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let flux: Vec<f64> = (0..n).map(|i| -0.37 + 0.74 * i as f64 / (n - 1) as f64).collect();
        let phase = flux
            .iter()
            .map(|f| circuit::reflection_angle(*f, p).unwrap().value() + offset)
            .collect();
        (flux, phase)
    }

    #[test]
    fn noiseless_self_consistency() {
        let truth = CircuitParams::calibration_fit(IcConvention::PerJunction);
        let (f, p) = synthetic(&truth, 12.0, 64);
        let fit = fit_calibration(&f, &p, 6.4e9, &CircuitParams::designed()).unwrap();
        assert!(fit.residual_rms < 1e-6, "{}", fit.residual_rms);
        // exact in the identifiable combinations z0·ic and z0·c
        let k = fit.params.z0 / truth.z0;
        assert!((fit.params.ic_total * k / truth.ic_total - 1.0).abs() < 1e-6);
        assert!((fit.params.c_shunt * k / truth.c_shunt - 1.0).abs() < 1e-6);
    }

    #[test]
    fn excluded_points_do_not_matter() {
        let truth = CircuitParams::calibration_fit(IcConvention::PerJunction);
        let (mut f, mut p) = synthetic(&truth, 0.0, 40);
        let a = fit_calibration(&f, &p, 6.4e9, &CircuitParams::designed()).unwrap();
        f.extend([0.4, -0.45, 0.49]);
        p.extend([10.0, -70.0, 33.0]);
        let b = fit_calibration(&f, &p, 6.4e9, &CircuitParams::designed()).unwrap();
        assert_eq!(b.n_excluded, 3);
        assert_eq!(a.params, b.params);
        assert_eq!(a.offset_deg, b.offset_deg);
    }

    #[test]
    fn data_checks() {
        let init = CircuitParams::designed();
        let f = vec![0.1; 10];
        let p = vec![1.0; 10];
        assert!(matches!(fit_calibration(&f, &p, 6.4e9, &init), Err(Error::Degenerate(_))));
        let f: Vec<f64> = (0..5).map(|i| i as f64 * 0.08).collect();
        assert!(matches!(
            fit_calibration(&f, &p[..5], 6.4e9, &init),
            Err(Error::InsufficientData(_))
        ));
        let f: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        assert!(matches!(fit_calibration(&f, &p, 6.4e9, &init), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn inversion_round_trip() {
        let truth = CircuitParams::calibration_fit(IcConvention::PerJunction);
        let (f, p) = synthetic(&truth, 7.0, 64);
        let fit = fit_calibration(&f, &p, 6.4e9, &CircuitParams::designed()).unwrap();
        let ph = fit.phase(0.31).unwrap();
        assert!((invert_calibration(ph, &fit).unwrap() - 0.31).abs() < 1e-6);
        let too_far = fit.phase(0.0).unwrap() + 5.0;
        assert!(matches!(invert_calibration(too_far, &fit), Err(Error::OutOfBranch { .. })));
    }
}
