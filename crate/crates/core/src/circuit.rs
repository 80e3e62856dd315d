//! Closed-form model of the flux-tunable resonator.
//!
//! A two-junction SQUID shunted by a capacitor sits behind an impedance
//! transformer of impedance `z0`. Applied flux changes the Josephson
//! inductance, which moves the resonance and therefore the angle of the
//! reflected probe tone. Everything here is a pure function of
//! [`CircuitParams`] and the applied flux (in units of the flux quantum).
//!
//! Parameters are stored in SI units; flux is always in units of Φ0.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Magnetic flux quantum h/2e in Wb.
pub const PHI0: f64 = 2.067_833_848_461_929e-15;

/// Default operating-range limit in Φ0.
pub const DEFAULT_FLUX_CLAMP: f64 = 0.38;

/// How a quoted critical current relates to the SQUID total.
///
/// The model always uses the total SQUID critical current (twice the
/// per-junction value). Quoted values are converted through this flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IcConvention {
    /// The quoted value is the per-junction critical current.
    #[default]
    PerJunction,
    /// The quoted value already is the SQUID total.
    Total,
}

impl IcConvention {
    pub fn to_total(self, quoted: f64) -> f64 {
        match self {
            IcConvention::PerJunction => 2.0 * quoted,
            IcConvention::Total => quoted,
        }
    }
}

/// Circuit parameters of the transducer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    /// Total SQUID critical current in A (2x the per-junction value).
    pub ic_total: f64,
    /// Shunt capacitance in F.
    pub c_shunt: f64,
    /// Transformer impedance in Ohm.
    pub z0: f64,
    /// Probe tone frequency in Hz.
    pub probe_freq: f64,
    /// Operating-range limit in Φ0; must lie in (0, 0.5).
    pub flux_clamp: f64,
}

impl CircuitParams {
    pub fn new(ic_total: f64, c_shunt: f64, z0: f64, probe_freq: f64) -> Result<Self> {
        let p = Self {
            ic_total,
            c_shunt,
            z0,
            probe_freq,
            flux_clamp: DEFAULT_FLUX_CLAMP,
        };
        p.validate()?;
        Ok(p)
    }

    /// Design values: 2 µA junctions (4 µA total), 4 pF, 15 Ω, 6.4 GHz probe.
    pub fn designed() -> Self {
        Self {
            ic_total: 4e-6,
            c_shunt: 4e-12,
            z0: 15.0,
            probe_freq: 6.4e9,
            flux_clamp: DEFAULT_FLUX_CLAMP,
        }
    }

    /// Fitted values of the DC calibration (1.8 µA, 14.8 Ω, 3.8 pF at 6.4 GHz),
    /// with the quoted critical current interpreted through `convention`.
    pub fn calibration_fit(convention: IcConvention) -> Self {
        Self {
            ic_total: convention.to_total(1.8e-6),
            c_shunt: 3.8e-12,
            z0: 14.8,
            probe_freq: 6.4e9,
            flux_clamp: DEFAULT_FLUX_CLAMP,
        }
    }

    pub fn with_flux_clamp(mut self, clamp: f64) -> Result<Self> {
        self.flux_clamp = clamp;
        self.validate()?;
        Ok(self)
    }

    pub fn with_probe_freq(mut self, probe_freq: f64) -> Result<Self> {
        self.probe_freq = probe_freq;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        positive("ic_total", self.ic_total)?;
        positive("c_shunt", self.c_shunt)?;
        positive("z0", self.z0)?;
        positive("probe_freq", self.probe_freq)?;
        if !(self.flux_clamp > 0.0 && self.flux_clamp < 0.5) {
            return Err(Error::param(
                "flux_clamp",
                format!("must lie in (0, 0.5) Phi0, got {}", self.flux_clamp),
            ));
        }
        Ok(())
    }

    pub fn probe_omega(&self) -> f64 {
        2.0 * PI * self.probe_freq
    }

    fn check_clamp(&self, flux: f64) -> Result<()> {
        if !flux.is_finite() || flux.abs() > self.flux_clamp {
            return Err(Error::OperatingRange {
                flux,
                clamp: self.flux_clamp,
            });
        }
        Ok(())
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and > 0, got {v}")))
    }
}

/// An angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PhaseDeg(f64);

impl PhaseDeg {
    /// Wraps `deg` into (-180, 180].
    pub fn wrapped(deg: f64) -> Self {
        PhaseDeg(wrap_degrees(deg))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }
}

impl From<PhaseDeg> for f64 {
    fn from(p: PhaseDeg) -> f64 {
        p.0
    }
}

/// Wraps an angle into (-180, 180].
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut w = deg.rem_euclid(360.0);
    if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Nearest-multiple-of-360 continuation of a sampled angle sequence.
/// The first sample is kept as is.
pub fn unwrap_degrees(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phases {
        if let Some(q) = prev {
            let step = p + offset - q;
            offset -= 360.0 * (step / 360.0).round();
        }
        let v = p + offset;
        out.push(v);
        prev = Some(v);
    }
    out
}

/// Josephson inductance of the SQUID, in H.
pub fn josephson_inductance(flux: f64, params: &CircuitParams) -> Result<f64> {
    let c = (PI * flux).cos().abs();
    if !flux.is_finite() || c < 1e-12 {
        return Err(Error::Divergence { flux });
    }
    Ok(PHI0 / (2.0 * PI * params.ic_total * c))
}

/// Resonance frequency in Hz. Flux must lie inside the operating range.
pub fn resonant_frequency(flux: f64, params: &CircuitParams) -> Result<f64> {
    params.check_clamp(flux)?;
    let l = josephson_inductance(flux, params)?;
    Ok(1.0 / (2.0 * PI * (l * params.c_shunt).sqrt()))
}

/// Impedance of the SQUID in parallel with the shunt capacitor at angular
/// frequency `omega`. Purely imaginary; the sign flips across resonance.
pub fn resonator_impedance(omega: f64, flux: f64, params: &CircuitParams) -> Result<Complex64> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::param("omega", format!("must be > 0, got {omega}")));
    }
    params.check_clamp(flux)?;
    let l = josephson_inductance(flux, params)?;
    let denom = 1.0 - omega * omega * l * params.c_shunt;
    if denom.abs() < 1e-12 {
        return Err(Error::Pole { flux });
    }
    Ok(Complex64::new(0.0, omega * l / denom))
}

/// Susceptance of the resonator at the probe frequency, in S.
/// Y = 1/Z_r = -i * b; finite everywhere inside the operating range.
fn probe_susceptance(flux: f64, params: &CircuitParams) -> Result<f64> {
    let l = josephson_inductance(flux, params)?;
    let w = params.probe_omega();
    Ok(1.0 / (w * l) - w * params.c_shunt)
}

/// Complex reflection coefficient (Z_r - Z0)/(Z_r + Z0) at the probe frequency.
///
/// Evaluated through the admittance Y = 1/Z_r, which is the same quantity
/// but stays finite when the probe sits exactly on resonance.
pub fn reflection_coefficient(flux: f64, params: &CircuitParams) -> Result<Complex64> {
    params.check_clamp(flux)?;
    let b = probe_susceptance(flux, params)?;
    let zy = Complex64::new(0.0, -params.z0 * b);
    let one = Complex64::new(1.0, 0.0);
    Ok((one - zy) / (one + zy))
}

/// Angle of the reflected probe tone, wrapped into (-180, 180].
pub fn reflection_angle(flux: f64, params: &CircuitParams) -> Result<PhaseDeg> {
    let g = reflection_coefficient(flux, params)?;
    Ok(PhaseDeg::wrapped(g.arg().to_degrees()))
}

/// Reflection angle for any flux, ignoring the operating-range clamp. The
/// model is Φ0-periodic and even in flux; it diverges only at half-integer
/// flux.
pub fn reflection_angle_unclamped(flux: f64, params: &CircuitParams) -> Result<PhaseDeg> {
    let b = probe_susceptance(flux, params)?;
    let zy = Complex64::new(0.0, -params.z0 * b);
    let one = Complex64::new(1.0, 0.0);
    Ok(PhaseDeg::wrapped(((one - zy) / (one + zy)).arg().to_degrees()))
}

/// Flux-to-phase gain d(angle)/d(flux) in deg/Φ0, analytic.
///
/// The angle is 2·atan(z0·b(flux)) with b the probe susceptance, so the
/// derivative follows from d(1/L_j)/dflux.
pub fn transducer_gain(flux: f64, params: &CircuitParams) -> Result<f64> {
    params.check_clamp(flux)?;
    let b = probe_susceptance(flux, params)?;
    let x = params.z0 * b;
    let arg = PI * flux;
    let sign = arg.cos().signum();
    let d_inv_l = -2.0 * PI * params.ic_total * PI * arg.sin() * sign / PHI0;
    let db = d_inv_l / params.probe_omega();
    Ok((2.0 * params.z0 / (1.0 + x * x) * db).to_degrees())
}

/// Flux-to-phase gain by Richardson-extrapolated central differences.
/// Independent route to [`transducer_gain`]; uses the unwrapped angle.
pub fn transducer_gain_numeric(flux: f64, params: &CircuitParams) -> Result<f64> {
    params.check_clamp(flux)?;
    let room = params.flux_clamp - flux.abs();
    let h = (1e-4_f64).min(0.5 * room.max(1e-9));
    let central = |h: f64| -> Result<f64> {
        let lo = reflection_angle(flux - h, params)?.value();
        let hi = reflection_angle(flux + h, params)?.value();
        Ok(wrap_degrees(hi - lo) / (2.0 * h))
    };
    let d1 = central(h)?;
    let d2 = central(h / 2.0)?;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Flux sensitivity for a given phase noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxSensitivity {
    Finite(f64),
    /// The gain vanishes at this flux, so no finite flux resolution exists.
    Infinite,
}

impl FluxSensitivity {
    pub fn value(self) -> f64 {
        match self {
            FluxSensitivity::Finite(v) => v,
            FluxSensitivity::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, FluxSensitivity::Infinite)
    }
}

/// Smallest resolvable flux (Φ0) given `phase_noise` degrees of phase noise.
pub fn flux_sensitivity(
    flux: f64,
    params: &CircuitParams,
    phase_noise: f64,
) -> Result<FluxSensitivity> {
    if !(phase_noise.is_finite() && phase_noise >= 0.0) {
        return Err(Error::param(
            "phase_noise",
            format!("must be finite and >= 0, got {phase_noise}"),
        ));
    }
    let gain = transducer_gain(flux, params)?.abs();
    if phase_noise == 0.0 {
        return Ok(FluxSensitivity::Finite(0.0));
    }
    if gain < 1e-12 {
        return Ok(FluxSensitivity::Infinite);
    }
    Ok(FluxSensitivity::Finite(phase_noise / gain))
}

/// Resonator bandwidth 1/(2π·z0·C) in Hz; independent of flux.
pub fn bandwidth(params: &CircuitParams) -> f64 {
    1.0 / (2.0 * PI * params.z0 * params.c_shunt)
}

/// Angle range of the single-valued branch [0, flux_clamp], as
/// (angle at flux_clamp, angle at 0) in degrees. The angle decreases
/// monotonically along the branch.
pub fn branch_range(params: &CircuitParams) -> Result<(f64, f64)> {
    let hi = reflection_angle(0.0, params)?.value();
    let lo = reflection_angle(params.flux_clamp, params)?.value();
    Ok((lo, hi))
}

/// Flux on [0, flux_clamp] whose reflection angle equals `angle_deg`,
/// found by bisection on the monotone branch.
pub fn flux_for_angle(angle_deg: f64, params: &CircuitParams) -> Result<f64> {
    let (lo, hi) = branch_range(params)?;
    if !(angle_deg >= lo && angle_deg <= hi) {
        return Err(Error::OutOfBranch {
            phase: angle_deg,
            low: lo,
            high: hi,
        });
    }
    let (mut a, mut b) = (0.0, params.flux_clamp);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if reflection_angle(mid, params)?.value() > angle_deg {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Flux of maximum |gain| on [0, flux_clamp], by golden-section search
/// over a coarse grid bracket.
pub fn peak_gain(params: &CircuitParams) -> Result<(f64, f64)> {
    let n = 400;
    let clamp = params.flux_clamp;
    let mut best = (0usize, 0.0);
    for i in 0..=n {
        let f = clamp * i as f64 / n as f64;
        let g = transducer_gain(f, params)?.abs();
        if g > best.1 {
            best = (i, g);
        }
    }
    let step = clamp / n as f64;
    let mut a = (best.0 as f64 - 1.0).max(0.0) * step;
    let mut b = ((best.0 as f64 + 1.0) * step).min(clamp);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if transducer_gain(c, params)?.abs() > transducer_gain(d, params)?.abs() {
            b = d;
        } else {
            a = c;
        }
    }
    let f = 0.5 * (a + b);
    Ok((f, transducer_gain(f, params)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn oracle_angle(flux: f64, p: &CircuitParams) -> f64 {
        // direct evaluation of (Z - Z0)/(Z + Z0) with Z from the LC formula
        let l = PHI0 / (2.0 * PI * p.ic_total * (PI * flux).cos().abs());
        let w = p.probe_omega();
        let z = Complex64::new(0.0, w * l / (1.0 - w * w * l * p.c_shunt));
        ((z - p.z0) / (z + p.z0)).arg().to_degrees()
    }

    #[test]
    fn inductance_values() {
        let p = CircuitParams::designed();
        assert_relative_eq!(josephson_inductance(0.0, &p).unwrap(), 82.28e-12, max_relative = 1e-3);
        assert_relative_eq!(josephson_inductance(0.25, &p).unwrap(), 116.36e-12, max_relative = 1e-3);
        let l0 = josephson_inductance(0.0, &p).unwrap();
        assert_relative_eq!(
            josephson_inductance(0.25, &p).unwrap(),
            l0 / (PI / 4.0).cos(),
            max_relative = 1e-12
        );
        assert!(matches!(josephson_inductance(0.5, &p), Err(Error::Divergence { .. })));
        assert!(matches!(josephson_inductance(-1.5, &p), Err(Error::Divergence { .. })));
    }

    #[test]
    fn resonance_values() {
        let p = CircuitParams::designed();
        let f0 = resonant_frequency(0.0, &p).unwrap();
        assert!((f0 - 8.77e9).abs() < 0.01e9, "{f0}");
        let f25 = resonant_frequency(0.25, &p).unwrap();
        assert_relative_eq!(f25, f0 * (PI / 4.0).cos().sqrt(), max_relative = 1e-12);
        assert!((f25 - 7.38e9).abs() < 0.01e9);
        assert!(matches!(resonant_frequency(0.5, &p), Err(Error::OperatingRange { .. })));
    }

    #[test]
    fn impedance_values() {
        let p = CircuitParams::designed();
        let z = resonator_impedance(2.0 * PI * 6.4e9, 0.0, &p).unwrap();
        assert!(z.re.abs() < 1e-15);
        assert!((z.im - 7.07).abs() < 0.02, "{z}");
        let w = 2.0 * PI * 1e3;
        let z = resonator_impedance(w, 0.1, &p).unwrap();
        assert_relative_eq!(z.im / w, josephson_inductance(0.1, &p).unwrap(), max_relative = 1e-9);
        let fr = resonant_frequency(0.0, &p).unwrap();
        let above = resonator_impedance(2.0 * PI * fr * 1.001, 0.0, &p).unwrap();
        let below = resonator_impedance(2.0 * PI * fr * 0.999, 0.0, &p).unwrap();
        assert!(above.im < 0.0 && below.im > 0.0);
        assert!(resonator_impedance(-1.0, 0.0, &p).is_err());
    }

    #[test]
    fn angle_at_zero_flux() {
        let p = CircuitParams::designed();
        let a = reflection_angle(0.0, &p).unwrap().value();
        let z = resonator_impedance(p.probe_omega(), 0.0, &p).unwrap().im;
        assert_relative_eq!(a, 180.0 - 2.0 * (z / 15.0).atan().to_degrees(), max_relative = 1e-12);
        assert!((a - 129.5).abs() < 0.05, "{a}");
        assert_relative_eq!(a, oracle_angle(0.0, &p), epsilon = 1e-9);
    }

    #[test]
    fn angle_crosses_zero_at_resonance() {
        let p = CircuitParams::designed();
        // flux where f_r = probe, from f_r(flux) = f_r(0) sqrt(cos(pi flux))
        let f0 = resonant_frequency(0.0, &p).unwrap();
        let flux = ((p.probe_freq / f0).powi(2)).acos() / PI;
        assert!(reflection_angle(flux, &p).unwrap().value().abs() < 1e-6);
        assert!(reflection_angle(flux - 0.01, &p).unwrap().value() > 0.0);
        assert!(reflection_angle(flux + 0.01, &p).unwrap().value() < 0.0);
    }

    #[test]
    fn gain_and_sensitivity() {
        let p = CircuitParams::calibration_fit(IcConvention::PerJunction);
        let (f, g) = peak_gain(&p).unwrap();
        assert!((0.28..=0.34).contains(&f), "{f}");
        assert!((g.abs() - 1200.0).abs() < 240.0, "{g}");
        assert_eq!(transducer_gain(0.0, &p).unwrap(), 0.0);
        let s = flux_sensitivity(f, &p, 0.25).unwrap().value();
        assert!((s - 2.1e-4).abs() < 0.25 * 2.1e-4, "{s}");
        assert_eq!(flux_sensitivity(f, &p, 0.0).unwrap(), FluxSensitivity::Finite(0.0));
        assert!(flux_sensitivity(0.0, &p, 0.25).unwrap().is_infinite());
        assert!(flux_sensitivity(0.1, &p, -1.0).is_err());
    }

    #[test]
    fn bandwidth_values() {
        let p = CircuitParams::designed();
        assert!((bandwidth(&p) - 2.65e9).abs() < 0.01e9);
        let mut q = p;
        q.z0 *= 2.0;
        assert_relative_eq!(bandwidth(&q), bandwidth(&p) / 2.0, max_relative = 1e-14);
        let fit = CircuitParams::calibration_fit(IcConvention::PerJunction);
        assert!((bandwidth(&fit) - 2.83e9).abs() < 0.01e9);
    }

    #[test]
    fn params_validation() {
        assert!(CircuitParams::new(-1.0, 4e-12, 15.0, 6.4e9).is_err());
        assert!(CircuitParams::designed().with_flux_clamp(0.5).is_err());
        let err = CircuitParams::new(4e-6, 0.0, 15.0, 6.4e9).unwrap_err();
        assert!(err.to_string().contains("c_shunt"));
        assert_eq!(IcConvention::Total.to_total(3.6e-6), 3.6e-6);
    }

    #[test]
    fn unwrap_and_wrap() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(190.0), -170.0);
        let u = unwrap_degrees(&[170.0, -175.0, -160.0, 175.0]);
        assert_eq!(u, vec![170.0, 185.0, 200.0, 175.0]);
    }

    #[test]
    fn branch_inversion() {
        let p = CircuitParams::designed();
        let a = reflection_angle(0.31, &p).unwrap().value();
        assert!((flux_for_angle(a, &p).unwrap() - 0.31).abs() < 1e-10);
        assert!(matches!(flux_for_angle(179.0, &p), Err(Error::OutOfBranch { .. })));
        let (lo, hi) = branch_range(&p).unwrap();
        assert!((hi - lo - 202.8).abs() < 0.5, "{}", hi - lo);
    }
}
