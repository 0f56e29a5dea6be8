//! Closed-form effective conductivities used as benchmarks and oracles.
//!
//! The doubly coated sphere assemblage is built from rescaled copies of one
//! three-layer sphere: core `sigma1` (radius `r1`), interphase `sigma2`
//! (out to `r2`) and coating `sigma3` (out to `r3`). Its effective
//! conductivity is isotropic and known exactly. Collapsing the interphase
//! into the coating (fixed core fraction) gives the singly coated sphere
//! assemblage used as reference composite.
//!
//! The nested fractions below are Möbius maps in each conductivity, so the
//! removable singularities (`sigma2 == sigma1`, a neutral inner sphere,
//! `sigma1 == sigma3`) are resolved by merging phases rather than by
//! perturbing inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRACTION_TOLERANCE: f64 = 1e-12;

/// Radii and phase conductivities of one doubly coated sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblageSpec {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
}

impl AssemblageSpec {
    pub fn new(r1: f64, r2: f64, r3: f64, sigma1: f64, sigma2: f64, sigma3: f64) -> Result<Self> {
        let spec = Self { r1, r2, r3, sigma1, sigma2, sigma3 };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the sphere from outer radius and volume fractions; `r1` and
    /// `r2` follow from `theta1 = (r1/r3)^3` and [`radius_from_fraction`].
    pub fn from_fractions(r3: f64, theta1: f64, theta2: f64, sigma1: f64, sigma2: f64, sigma3: f64) -> Result<Self> {
        if !(r3 > 0.0) || !(0.0..=1.0).contains(&theta1) {
            return Err(Error::InvalidGeometry(format!("need r3 > 0 and theta1 in [0, 1], got {r3}, {theta1}")));
        }
        let r1 = r3 * theta1.cbrt();
        let r2 = radius_from_fraction(r1, r3, theta2)?;
        Self::new(r1, r2, r3, sigma1, sigma2, sigma3)
    }

    pub fn validate(&self) -> Result<()> {
        let radii = [self.r1, self.r2, self.r3];
        if radii.iter().any(|r| !r.is_finite()) || !(0.0 < self.r1 && self.r1 <= self.r2 && self.r2 <= self.r3) {
            return Err(Error::InvalidGeometry(format!(
                "radii must satisfy 0 < r1 <= r2 <= r3, got ({}, {}, {})",
                self.r1, self.r2, self.r3
            )));
        }
        for s in [self.sigma1, self.sigma2, self.sigma3] {
            check_conductivity(s)?;
        }
        Ok(())
    }

    /// Interphase thickness `r2 - r1`.
    pub fn thickness(&self) -> f64 {
        self.r2 - self.r1
    }

    pub fn fractions(&self) -> Result<VolumeFractions> {
        volume_fractions(self)
    }

    pub fn exact(&self) -> Result<f64> {
        exact_sigma_star(self)
    }

    pub fn reference(&self) -> Result<f64> {
        reference_sigma_star(self.sigma1, self.sigma3, self.fractions()?.theta1)
    }

    pub fn first_order_delta(&self) -> Result<f64> {
        let theta1 = self.fractions()?.theta1;
        delta_sigma_first_order(self.sigma1, self.sigma2, self.sigma3, theta1, self.r1, self.thickness())
    }

    pub fn approx(&self) -> Result<f64> {
        let theta1 = self.fractions()?.theta1;
        approx_sigma_star(self.sigma1, self.sigma2, self.sigma3, theta1, self.r1, self.thickness())
    }
}

/// Volume fractions of core, interphase and coating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeFractions {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl VolumeFractions {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Result<Self> {
        let f = Self { theta1, theta2, theta3 };
        if [theta1, theta2, theta3].iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t <= 1.0)) {
            return Err(Error::InvalidFractions(format!("fractions must lie in [0, 1]: {f:?}")));
        }
        if (theta1 + theta2 + theta3 - 1.0).abs() > FRACTION_TOLERANCE {
            return Err(Error::InvalidFractions(format!("fractions must sum to 1: {f:?}")));
        }
        Ok(f)
    }

    /// Core and interphase fractions; the coating takes the rest.
    pub fn from_core_and_interphase(theta1: f64, theta2: f64) -> Result<Self> {
        Self::new(theta1, theta2, (1.0 - theta1 - theta2).max(0.0))
    }

    /// Interphase thickness relative to the core radius, `h / r1`, which is
    /// all the first-order correction needs from the geometry.
    pub fn relative_thickness(&self) -> f64 {
        ((self.theta1 + self.theta2) / self.theta1).cbrt() - 1.0
    }
}

fn check_conductivity(s: f64) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::NonFinite("conductivity"));
    }
    if s <= 0.0 {
        return Err(Error::NonpositiveConductivity(s));
    }
    Ok(())
}

fn nonzero(x: f64, what: &str) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        Err(Error::Domain(format!("{what} denominator is {x}")))
    } else {
        Ok(x)
    }
}

pub fn volume_fractions(spec: &AssemblageSpec) -> Result<VolumeFractions> {
    spec.validate()?;
    let a = (spec.r1 / spec.r3).powi(3);
    let b = (spec.r2 / spec.r3).powi(3);
    VolumeFractions::new(a, b - a, 1.0 - b)
}

/// Middle radius giving interphase fraction `theta2` for fixed `r1`, `r3`.
pub fn radius_from_fraction(r1: f64, r3: f64, theta2: f64) -> Result<f64> {
    if !(r1 > 0.0 && r1 <= r3 && r3.is_finite()) {
        return Err(Error::InvalidGeometry(format!("need 0 < r1 <= r3, got ({r1}, {r3})")));
    }
    let max = 1.0 - (r1 / r3).powi(3);
    if !(theta2 >= 0.0 && theta2 <= max + FRACTION_TOLERANCE) {
        return Err(Error::InvalidFractions(format!("theta2 = {theta2} outside feasible range [0, {max}]")));
    }
    Ok((theta2 * r3.powi(3) + r1.powi(3)).cbrt().min(r3))
}

/// Exact effective conductivity of the doubly coated sphere assemblage.
pub fn exact_sigma_star(spec: &AssemblageSpec) -> Result<f64> {
    let f = volume_fractions(spec)?;
    exact_sigma_star_from_fractions(spec.sigma1, spec.sigma2, spec.sigma3, &f)
}

pub fn exact_sigma_star_from_fractions(sigma1: f64, sigma2: f64, sigma3: f64, f: &VolumeFractions) -> Result<f64> {
    for s in [sigma1, sigma2, sigma3] {
        check_conductivity(s)?;
    }
    let VolumeFractions { theta1, theta2, theta3 } = *f;
    if theta2 == 0.0 {
        return reference_sigma_star(sigma1, sigma3, theta1);
    }
    if theta1 == 0.0 {
        // No core: the interphase is the core.
        return reference_sigma_star(sigma2, sigma3, theta2);
    }
    if sigma2 == sigma1 {
        return reference_sigma_star(sigma1, sigma3, theta1 + theta2);
    }
    let inner_coated = 1.0 - theta3;
    let inner = nonzero(theta2 - 3.0 * sigma2 * inner_coated / (sigma2 - sigma1), "interphase")?;
    // `mid` is sigma3 minus the conductivity of the core+interphase sphere.
    let mid = sigma3 - sigma2 - 3.0 * sigma2 * theta1 / inner;
    if mid == 0.0 {
        return Ok(sigma3);
    }
    let outer = nonzero(theta3 - 3.0 * sigma3 / mid, "coating")?;
    Ok(sigma3 + 3.0 * sigma3 * inner_coated / outer)
}

/// Singly coated sphere (core `sigma1`, coating `sigma3`, core fraction
/// `theta1`): the reference composite of the assemblage.
pub fn reference_sigma_star(sigma1: f64, sigma3: f64, theta1: f64) -> Result<f64> {
    check_conductivity(sigma1)?;
    check_conductivity(sigma3)?;
    if !(0.0..=1.0).contains(&theta1) {
        return Err(Error::InvalidFractions(format!("theta1 = {theta1} outside [0, 1]")));
    }
    if sigma1 == sigma3 {
        return Ok(sigma3);
    }
    let denom = nonzero(1.0 - theta1 - 3.0 * sigma3 / (sigma3 - sigma1), "reference")?;
    Ok(sigma3 + 3.0 * sigma3 * theta1 / denom)
}

/// First-order change of the assemblage conductivity when an interphase of
/// thickness `h` is grown between core and coating (closed-form derivative
/// with respect to `h` at `h = 0`, times `h`).
///
/// The coefficient diverges like `1 / sigma2` as `sigma2 -> 0`, so only
/// `sigma2 > 0` is accepted.
pub fn delta_sigma_first_order(sigma1: f64, sigma2: f64, sigma3: f64, theta1: f64, r1: f64, h: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("interphase conductivity must be > 0, got {sigma2}")));
    }
    check_conductivity(sigma1)?;
    check_conductivity(sigma3)?;
    if !(r1 > 0.0) || !(h >= 0.0) || !(0.0..=1.0).contains(&theta1) {
        return Err(Error::InvalidGeometry(format!("need r1 > 0, h >= 0, theta1 in [0, 1]; got {r1}, {h}, {theta1}")));
    }
    let numer = -9.0 * sigma3 * theta1 * (sigma3 - sigma2) * (sigma1 * sigma1 + 2.0 * sigma2 * sigma3);
    let base = (sigma3 - sigma1) * theta1 + sigma1 + 2.0 * sigma3;
    Ok(h * numer / (r1 * sigma2 * base * base))
}

/// Reference value plus first-order correction.
pub fn approx_sigma_star(sigma1: f64, sigma2: f64, sigma3: f64, theta1: f64, r1: f64, h: f64) -> Result<f64> {
    Ok(reference_sigma_star(sigma1, sigma3, theta1)? + delta_sigma_first_order(sigma1, sigma2, sigma3, theta1, r1, h)?)
}

fn coated_core_fraction(f: &VolumeFractions) -> Result<f64> {
    let c = 1.0 - f.theta3;
    if c > 0.0 {
        Ok(c)
    } else {
        Err(Error::Domain("limit formulas need theta3 < 1".into()))
    }
}

/// Highly conducting thin interphase: `theta2 -> 0`, `sigma2 -> inf` with
/// `theta2 * sigma2` held at `product`.
pub fn high_contrast_limit(sigma1: f64, sigma3: f64, f: &VolumeFractions, product: f64) -> Result<f64> {
    check_conductivity(sigma1)?;
    check_conductivity(sigma3)?;
    if !(product >= 0.0) {
        return Err(Error::Domain(format!("theta2*sigma2 must be >= 0, got {product}")));
    }
    let c = coated_core_fraction(f)?;
    let mid = sigma3 - sigma1 - 2.0 * product / (3.0 * c);
    coated_sphere_from_mid(sigma3, c, f.theta3, mid)
}

/// Poorly conducting thin interphase: `theta2 -> 0`, `sigma2 -> 0` with
/// `sigma2 / theta2` held at `ratio`. `ratio = inf` recovers the reference.
pub fn low_contrast_limit(sigma1: f64, sigma3: f64, f: &VolumeFractions, ratio: f64) -> Result<f64> {
    check_conductivity(sigma1)?;
    check_conductivity(sigma3)?;
    if !(ratio >= 0.0) {
        return Err(Error::Domain(format!("sigma2/theta2 must be >= 0, got {ratio}")));
    }
    let c = coated_core_fraction(f)?;
    let effective_core = 3.0 / (3.0 / sigma1 + 1.0 / (c * ratio));
    coated_sphere_from_mid(sigma3, c, f.theta3, sigma3 - effective_core)
}

fn coated_sphere_from_mid(sigma3: f64, c: f64, theta3: f64, mid: f64) -> Result<f64> {
    if mid == 0.0 {
        return Ok(sigma3);
    }
    let outer = nonzero(theta3 - 3.0 * sigma3 / mid, "coating")?;
    Ok(sigma3 + 3.0 * c * sigma3 / outer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Field along the layers: arithmetic mean.
    Parallel,
    /// Field across the layers: harmonic mean.
    Perpendicular,
}

pub fn laminate_sigma_star(conductivities: &[f64], fractions: &[f64], orientation: Orientation) -> Result<f64> {
    if conductivities.len() != fractions.len() || conductivities.is_empty() {
        return Err(Error::LengthMismatch { expected: conductivities.len(), found: fractions.len() });
    }
    for &s in conductivities {
        check_conductivity(s)?;
    }
    if fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::InvalidFractions("laminate fractions must be >= 0".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > FRACTION_TOLERANCE {
        return Err(Error::InvalidFractions(format!("laminate fractions sum to {total}")));
    }
    let pairs = conductivities.iter().zip(fractions);
    Ok(match orientation {
        Orientation::Parallel => pairs.map(|(s, f)| f * s).sum(),
        Orientation::Perpendicular => 1.0 / pairs.map(|(s, f)| f / s).sum::<f64>(),
    })
}

/// Raised when the interphase conductivity leaves the band
/// `[min(sigma1, sigma3) / 10, 10 max(sigma1, sigma3)]` where the first-order
/// correction is meant to be used. Results are still computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityWarning {
    pub sigma2: f64,
    pub lower: f64,
    pub upper: f64,
}

impl std::fmt::Display for FeasibilityWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sigma2={} outside intermediate band [{}, {}]", self.sigma2, self.lower, self.upper)
    }
}

pub fn intermediate_band_warning(sigma1: f64, sigma2: f64, sigma3: f64) -> Option<FeasibilityWarning> {
    let lower = sigma1.min(sigma3) / 10.0;
    let upper = 10.0 * sigma1.max(sigma3);
    (!(lower..=upper).contains(&sigma2)).then_some(FeasibilityWarning { sigma2, lower, upper })
}
