//! Closed-form conductance response of a charge-trap-flash synapse.
//!
//! Threshold voltage and conductance are used interchangeably: a device state
//! is a single `f64` in conductance-equivalent volts. A fitted pulse response
//! `v(n) = x1 * n^x2 + x3` turns into a state-dependent step size
//! `Δ(g) = x1 * x2 * ((g - x3) / x1)^((x2 - 1) / x2)`, which is what the
//! crossbar applies per coincidence.

mod fit;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fit::{fit_power_law, FitReport, PulseTrace};

/// Parameters of `v(n) = x1 * n^x2 + x3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl PowerLawFit {
    /// Fit of the program (+12.5 V, 0.85 ms) response.
    pub const MEASURED_LTD: PowerLawFit = PowerLawFit {
        x1: 9.55e-4,
        x2: 0.719,
        x3: -0.322,
    };

    /// Fit of the erase (-12.5 V, 15 ms) response.
    pub const MEASURED_LTP: PowerLawFit = PowerLawFit {
        x1: -2.38e-3,
        x2: 0.580,
        x3: -0.112,
    };

    pub fn value(&self, pulse: f64) -> f64 {
        self.x1 * pulse.powf(self.x2) + self.x3
    }

    /// Step law obtained by differentiating the fit and re-expressing the
    /// slope as a function of the current state.
    pub fn step_law(&self) -> StepLaw {
        let exponent = (self.x2 - 1.0) / self.x2;
        let side = if self.x1 >= 0.0 {
            Side::Above
        } else {
            Side::Below
        };
        StepLaw {
            coefficient: self.x1 * self.x2 * self.x1.abs().powf(-exponent),
            singularity: self.x3,
            exponent,
            side,
        }
    }

    fn check_ltd(&self) -> Result<()> {
        self.check_exponent("ltd")?;
        if !(self.x1 > 0.0 && self.x3 < 0.0) {
            return Err(Error::InvalidDevice(format!(
                "ltd fit needs x1 > 0 and x3 < 0, got x1 = {}, x3 = {}",
                self.x1, self.x3
            )));
        }
        Ok(())
    }

    fn check_ltp(&self) -> Result<()> {
        self.check_exponent("ltp")?;
        if !(self.x1 < 0.0) {
            return Err(Error::InvalidDevice(format!(
                "ltp fit needs x1 < 0, got {}",
                self.x1
            )));
        }
        Ok(())
    }

    fn check_exponent(&self, which: &str) -> Result<()> {
        if !(self.x2 > 0.0 && self.x2 < 1.0) {
            return Err(Error::InvalidDevice(format!(
                "{which} exponent x2 must lie in (0, 1), got {}",
                self.x2
            )));
        }
        Ok(())
    }
}

/// Which side of the singularity the law is real-valued on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `g > singularity`, base `g - singularity`.
    Above,
    /// `g < singularity`, base `singularity - g`.
    Below,
}

/// `Δ(g) = coefficient * base(g)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLaw {
    pub coefficient: f64,
    pub singularity: f64,
    pub exponent: f64,
    pub side: Side,
}

impl StepLaw {
    /// `4.50 (g + 0.32)^-0.39 × 10^-5`, the published potentiation law.
    pub const PUBLISHED_POTENTIATION: StepLaw = StepLaw {
        coefficient: 4.50e-5,
        singularity: -0.32,
        exponent: -0.39,
        side: Side::Above,
    };

    /// `-1.74 (-g - 0.11)^-0.72 × 10^-5`, the published depression law.
    pub const PUBLISHED_DEPRESSION: StepLaw = StepLaw {
        coefficient: -1.74e-5,
        singularity: -0.11,
        exponent: -0.72,
        side: Side::Below,
    };

    #[inline]
    fn base(&self, g: f64) -> f64 {
        match self.side {
            Side::Above => g - self.singularity,
            Side::Below => self.singularity - g,
        }
    }

    /// Evaluates the law; `None` on or beyond the singularity.
    #[inline]
    pub fn eval(&self, g: f64) -> Option<f64> {
        let base = self.base(g);
        (base > 0.0).then(|| self.coefficient * base.powf(self.exponent))
    }

    fn covers(&self, g: f64) -> bool {
        self.base(g) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Potentiate,
    Depress,
}

/// Result of one programming pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseOutcome {
    pub conductance: f64,
    /// The unclamped target fell outside the window.
    pub clamped: bool,
}

/// Lower clamp, inside the potentiation singularity with margin.
pub const DEFAULT_G_MIN: f64 = -0.315;
/// No ceiling: positive-cycle training only ever potentiates, and a clamp
/// below the depression singularity saturates output layers within an epoch.
pub const DEFAULT_G_MAX: f64 = f64::INFINITY;
/// Upper clamp for a window on which both step laws are real.
pub const BOUNDED_G_MAX: f64 = -0.115;
/// Conductance center used for initialization and for anchoring the noise level.
pub const DEFAULT_G_CENTER: f64 = -0.2;

/// Immutable device response: step laws for both polarities, a constant
/// update-noise level and the usable conductance window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    potentiation: StepLaw,
    depression: StepLaw,
    noise_fraction: f64,
    g_min: f64,
    g_max: f64,
    g_center: f64,
    noise_std: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self::published(1.0)
    }
}

impl DeviceModel {
    /// Published step laws on the default (open-topped) window.
    pub fn published(noise_fraction: f64) -> Self {
        Self::published_window(noise_fraction, DEFAULT_G_MIN, DEFAULT_G_MAX)
            .expect("published device parameters are valid")
    }

    /// Published step laws on `[DEFAULT_G_MIN, BOUNDED_G_MAX]`.
    pub fn published_bounded(noise_fraction: f64) -> Self {
        Self::published_window(noise_fraction, DEFAULT_G_MIN, BOUNDED_G_MAX)
            .expect("published device parameters are valid")
    }

    pub fn published_window(noise_fraction: f64, g_min: f64, g_max: f64) -> Result<Self> {
        Self::new(
            StepLaw::PUBLISHED_POTENTIATION,
            StepLaw::PUBLISHED_DEPRESSION,
            noise_fraction,
            g_min,
            g_max,
            DEFAULT_G_CENTER,
        )
    }

    pub fn new(
        potentiation: StepLaw,
        depression: StepLaw,
        noise_fraction: f64,
        g_min: f64,
        g_max: f64,
        g_center: f64,
    ) -> Result<Self> {
        if !(noise_fraction >= 0.0 && noise_fraction.is_finite()) {
            return Err(Error::InvalidDevice(format!(
                "noise fraction must be finite and >= 0, got {noise_fraction}"
            )));
        }
        if !(g_min.is_finite() && g_min < g_max) {
            return Err(Error::InvalidDevice(format!(
                "empty window [{g_min}, {g_max}]"
            )));
        }
        if !(g_min..=g_max).contains(&g_center) {
            return Err(Error::InvalidDevice(format!(
                "center {g_center} outside window [{g_min}, {g_max}]"
            )));
        }
        // depression only has to be real below its own singularity; pulses
        // above it are rejected rather than clamped
        let needs = [
            ("potentiation", &potentiation, g_max),
            ("depression", &depression, g_min),
        ];
        for (name, law, edge) in needs {
            if !(law.covers(g_min) && law.covers(edge)) {
                return Err(Error::InvalidDevice(format!(
                    "{name} law singular at {} inside window [{g_min}, {g_max}]",
                    law.singularity
                )));
            }
        }
        if !depression.covers(g_center) {
            return Err(Error::InvalidDevice(format!(
                "center {g_center} past the depression singularity {}",
                depression.singularity
            )));
        }
        // base^exponent > 0 on the window, so the sign is the coefficient's
        if !(potentiation.coefficient > 0.0) {
            return Err(Error::InvalidDevice(
                "potentiation step must be positive".into(),
            ));
        }
        if !(depression.coefficient < 0.0) {
            return Err(Error::InvalidDevice(
                "depression step must be negative".into(),
            ));
        }
        let center_step = potentiation
            .eval(g_center)
            .expect("center lies inside the potentiation domain");
        Ok(Self {
            potentiation,
            depression,
            noise_fraction,
            g_min,
            g_max,
            g_center,
            noise_std: noise_fraction * center_step,
        })
    }

    /// Builds the step laws from raw program (ltd) and erase (ltp) fits.
    pub fn from_fits(
        ltd: PowerLawFit,
        ltp: PowerLawFit,
        noise_fraction: f64,
        g_min: f64,
        g_max: f64,
        g_center: f64,
    ) -> Result<Self> {
        ltd.check_ltd()?;
        ltp.check_ltp()?;
        Self::new(
            ltd.step_law(),
            ltp.step_law(),
            noise_fraction,
            g_min,
            g_max,
            g_center,
        )
    }

    pub fn with_noise_fraction(&self, noise_fraction: f64) -> Result<Self> {
        Self::new(
            self.potentiation,
            self.depression,
            noise_fraction,
            self.g_min,
            self.g_max,
            self.g_center,
        )
    }

    pub fn potentiation_law(&self) -> &StepLaw {
        &self.potentiation
    }

    pub fn depression_law(&self) -> &StepLaw {
        &self.depression
    }

    pub fn noise_fraction(&self) -> f64 {
        self.noise_fraction
    }

    /// Standard deviation of the additive update noise, shared by both polarities.
    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn g_min(&self) -> f64 {
        self.g_min
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn g_center(&self) -> f64 {
        self.g_center
    }

    pub fn contains(&self, g: f64) -> bool {
        (self.g_min..=self.g_max).contains(&g)
    }

    fn check_finite_range(&self, lo: f64, hi: f64) -> Result<()> {
        self.check_domain(lo)?;
        self.check_domain(hi)?;
        if !(hi.is_finite() && lo <= hi) {
            return Err(Error::Domain {
                g: hi,
                min: lo,
                max: self.g_max,
            });
        }
        Ok(())
    }

    fn check_domain(&self, g: f64) -> Result<()> {
        if self.contains(g) {
            Ok(())
        } else {
            Err(Error::Domain {
                g,
                min: self.g_min,
                max: self.g_max,
            })
        }
    }

    /// Mean potentiation step at `g`.
    pub fn delta_potentiate(&self, g: f64) -> Result<f64> {
        self.check_domain(g)?;
        Ok(self.potentiation_step(g))
    }

    /// Mean depression step at `g` (negative).
    pub fn delta_depress(&self, g: f64) -> Result<f64> {
        self.check_domain(g)?;
        self.depression.eval(g).ok_or(Error::Domain {
            g,
            min: self.g_min,
            max: self.depression.singularity,
        })
    }

    /// Upper end of the range where depression is defined.
    pub fn depression_ceiling(&self) -> f64 {
        self.g_max.min(self.depression.singularity)
    }

    /// Mean step at the window center, the reference for noise and input scaling.
    pub fn center_step(&self) -> f64 {
        self.potentiation_step(self.g_center)
    }

    #[inline]
    pub(crate) fn potentiation_step(&self, g: f64) -> f64 {
        self.potentiation.eval(g).unwrap_or(0.0)
    }

    #[inline]
    pub(crate) fn depression_step(&self, g: f64) -> f64 {
        self.depression.eval(g).unwrap_or(0.0)
    }

    /// One noisy programming pulse with a pre-drawn standard normal sample.
    /// `g` must already lie in the window. Depression past its singularity
    /// contributes noise only.
    #[inline]
    pub(crate) fn pulse_with(
        &self,
        g: f64,
        direction: Direction,
        standard_normal: f64,
    ) -> PulseOutcome {
        let mean = match direction {
            Direction::Potentiate => self.potentiation_step(g),
            Direction::Depress => self.depression_step(g),
        };
        let target = g + mean + self.noise_std * standard_normal;
        let conductance = target.clamp(self.g_min, self.g_max);
        PulseOutcome {
            conductance,
            clamped: conductance != target,
        }
    }

    /// Applies one noisy pulse, drawing exactly one normal sample from `rng`.
    pub fn apply_pulse<R: Rng + ?Sized>(
        &self,
        g: f64,
        direction: Direction,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_domain(g)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.pulse_with(g, direction, z).conductance)
    }

    /// Number of noiseless potentiation pulses that fit between `lo` and `hi`.
    pub fn level_count(&self, lo: f64, hi: f64) -> Result<u64> {
        self.check_finite_range(lo, hi)?;
        let mut g = lo;
        let mut levels = 0u64;
        while g < hi {
            let step = self.potentiation_step(g);
            if !(step > 0.0) {
                break;
            }
            g += step;
            if g <= hi {
                levels += 1;
            }
        }
        Ok(levels)
    }

    /// Worst-case noise-to-step ratio of potentiation over `[lo, hi]`.
    pub fn max_noise_ratio(&self, lo: f64, hi: f64) -> Result<f64> {
        self.check_finite_range(lo, hi)?;
        // |Δ⁺| falls with g, so the smallest step sits at `hi`
        Ok(self.noise_std / self.potentiation_step(hi))
    }

    /// Ratio of largest to smallest potentiation step over `[lo, hi]`.
    pub fn nonlinearity(&self, lo: f64, hi: f64) -> Result<f64> {
        self.check_finite_range(lo, hi)?;
        Ok(self.potentiation_step(lo) / self.potentiation_step(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // mpmath, 30 digits: 4.50e-5 * 0.12^-0.39 and -1.74e-5 * 0.09^-0.72
    const POT_AT_MINUS_0_2: f64 = 1.028_802_066_243_013e-4;
    const DEP_AT_MINUS_0_2: f64 = -9.851_324_877_370_648e-5;

    fn model() -> DeviceModel {
        DeviceModel::published_bounded(0.0)
    }

    #[test]
    fn published_potentiation_at_reference_point() {
        let d = model().delta_potentiate(-0.2).unwrap();
        assert_relative_eq!(d, POT_AT_MINUS_0_2, max_relative = 1e-12);
    }

    #[test]
    fn published_depression_at_reference_point() {
        let d = model().delta_depress(-0.2).unwrap();
        assert_relative_eq!(d, DEP_AT_MINUS_0_2, max_relative = 1e-12);
    }

    #[test]
    fn endpoints_are_finite_and_ordered() {
        let m = model();
        let lo = m.delta_potentiate(m.g_min()).unwrap();
        let hi = m.delta_potentiate(m.g_max()).unwrap();
        assert!(lo.is_finite() && hi.is_finite());
        assert!(lo > 0.0 && hi > 0.0);
        assert!(lo > hi);
        let dlo = m.delta_depress(m.g_min()).unwrap();
        let dhi = m.delta_depress(m.g_max()).unwrap();
        assert!(dlo < 0.0 && dhi < 0.0);
        assert!(dhi.abs() > dlo.abs());
    }

    #[test]
    fn outside_window_is_a_domain_error() {
        let m = model();
        assert!(matches!(
            m.delta_potentiate(-0.33),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(m.delta_depress(-0.1), Err(Error::Domain { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.apply_pulse(0.0, Direction::Potentiate, &mut rng).is_err());
    }

    #[test]
    fn fitted_law_matches_published_coefficients() {
        let law = PowerLawFit::MEASURED_LTD.step_law();
        let published = StepLaw::PUBLISHED_POTENTIATION;
        // the published form rounds the singularity from -0.322 to -0.32,
        // which only matters close to g_min
        let max_gap = |lo: f64, hi: f64| {
            (0..100)
                .map(|i| lo + (hi - lo) * i as f64 / 99.0)
                .map(|g| (law.eval(g).unwrap() / published.eval(g).unwrap() - 1.0).abs())
                .fold(0.0, f64::max)
        };
        assert!(max_gap(-0.28, BOUNDED_G_MAX) < 0.01);
        assert!(max_gap(DEFAULT_G_MIN, BOUNDED_G_MAX) < 0.12);

        let law = PowerLawFit::MEASURED_LTP.step_law();
        assert_relative_eq!(law.coefficient, -1.74e-5, max_relative = 0.01);
        assert_relative_eq!(law.exponent, -0.72, max_relative = 0.01);
        assert_eq!(law.side, Side::Below);
    }

    #[test]
    fn symmetry_point_exists() {
        let m = model();
        let f = |g: f64| m.delta_potentiate(g).unwrap() + m.delta_depress(g).unwrap();
        let (mut lo, mut hi) = (m.g_min(), m.g_max());
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // mpmath bisection of the two closed forms
        assert_relative_eq!(lo, -0.196_186_499_730_030_2, max_relative = 1e-9);
    }

    #[test]
    fn depression_diverges_at_window_edge() {
        let law = StepLaw::PUBLISHED_DEPRESSION;
        let mut last = 0.0f64;
        for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
            let d = law.eval(law.singularity - eps).unwrap().abs();
            assert!(d > last);
            last = d;
        }
        assert!(last > 1.0);
    }

    #[test]
    fn noiseless_pulse_is_exact() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = m
            .apply_pulse(-0.2, Direction::Potentiate, &mut rng)
            .unwrap();
        assert_eq!(g, -0.2 + m.delta_potentiate(-0.2).unwrap());
    }

    #[test]
    fn pulse_saturates_at_window_max() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = m
            .apply_pulse(m.g_max(), Direction::Potentiate, &mut rng)
            .unwrap();
        assert_eq!(g, m.g_max());
        let g = m
            .apply_pulse(m.g_min(), Direction::Depress, &mut rng)
            .unwrap();
        assert_eq!(g, m.g_min());
    }

    #[test]
    fn noisy_pulse_statistics() {
        let m = DeviceModel::published(1.0);
        let g0 = -0.2;
        let mean_step = m.delta_potentiate(g0).unwrap();
        let sigma = m.noise_std();
        assert_relative_eq!(sigma, m.center_step(), max_relative = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let steps: Vec<f64> = (0..n)
            .map(|_| m.apply_pulse(g0, Direction::Potentiate, &mut rng).unwrap() - g0)
            .collect();
        let mean = steps.iter().sum::<f64>() / n as f64;
        let var = steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = sigma / (n as f64).sqrt();
        assert!(
            (mean - mean_step).abs() < 3.0 * se,
            "mean {mean} vs {mean_step}"
        );
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.05);
    }

    #[test]
    fn difference_equation_tracks_fitted_curve() {
        let fit = PowerLawFit::MEASURED_LTD;
        let law = fit.step_law();
        let mut g = fit.value(1.0);
        for n in 1..=1000u32 {
            let v = fit.value(n as f64);
            assert!(((g - v) / v).abs() < 0.005, "n = {n}: {g} vs {v}");
            g += law.eval(g).unwrap();
        }
    }

    #[test]
    fn level_count_shrinks_with_range() {
        let m = model();
        let c = m.g_center();
        let mut last = u64::MAX;
        for half in [0.08, 0.05, 0.02, 0.01] {
            let n = m.level_count(c - half, c + half).unwrap();
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn rejects_windows_past_singularities() {
        let r = DeviceModel::new(
            StepLaw::PUBLISHED_POTENTIATION,
            StepLaw::PUBLISHED_DEPRESSION,
            0.1,
            -0.33,
            -0.115,
            -0.2,
        );
        assert!(matches!(r, Err(Error::InvalidDevice(_))));
        let r = DeviceModel::from_fits(
            PowerLawFit {
                x1: -1e-3,
                ..PowerLawFit::MEASURED_LTD
            },
            PowerLawFit::MEASURED_LTP,
            0.1,
            DEFAULT_G_MIN,
            BOUNDED_G_MAX,
            DEFAULT_G_CENTER,
        );
        assert!(r.is_err());
        // a ceiling past the depression singularity is fine, a floor is not
        assert!(DeviceModel::published_window(0.1, DEFAULT_G_MIN, 0.5).is_ok());
        assert!(DeviceModel::published_window(0.1, -0.1, 0.5).is_err());
    }

    #[test]
    fn open_window_has_no_ceiling() {
        let m = DeviceModel::published(0.0);
        assert_eq!(m.g_max(), f64::INFINITY);
        assert_eq!(m.depression_ceiling(), -0.11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = m.apply_pulse(2.0, Direction::Potentiate, &mut rng).unwrap();
        assert!(g > 2.0);
        assert!(matches!(m.delta_depress(-0.05), Err(Error::Domain { .. })));
        assert!(m.level_count(-0.2, f64::INFINITY).is_err());
        assert!(m.level_count(-0.2, 0.5).unwrap() > 0);
    }
}
