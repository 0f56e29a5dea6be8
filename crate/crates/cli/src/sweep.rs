//! Parameter sweeps over the interphase conductivity and their CSV form.

use std::fmt::Write as _;

use interphase_core::assemblage::{
    approx_sigma_star, exact_sigma_star_from_fractions, high_contrast_limit, intermediate_band_warning,
    low_contrast_limit, radius_from_fraction, reference_sigma_star, VolumeFractions,
};
use rayon::prelude::*;

use crate::config::{Curve, SweepConfig};
use crate::CliError;

pub const WARN_OUTSIDE_BAND: &str = "outside_band";
pub const WARN_OUTSIDE_WIENER: &str = "outside_wiener";

/// One sample. Curves that were not selected are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma2: f64,
    pub sigma_star_exact: Option<f64>,
    pub sigma_star_approx: Option<f64>,
    pub sigma_star_reference: Option<f64>,
    pub sigma_star_high: Option<f64>,
    pub sigma_star_low: Option<f64>,
    pub warnings: Vec<String>,
}

impl SweepRow {
    pub fn get(&self, curve: Curve) -> Option<f64> {
        match curve {
            Curve::Exact => self.sigma_star_exact,
            Curve::Approx => self.sigma_star_approx,
            Curve::Reference => self.sigma_star_reference,
            Curve::HighLimit => self.sigma_star_high,
            Curve::LowLimit => self.sigma_star_low,
        }
    }

    fn set(&mut self, curve: Curve, value: f64) {
        let slot = match curve {
            Curve::Exact => &mut self.sigma_star_exact,
            Curve::Approx => &mut self.sigma_star_approx,
            Curve::Reference => &mut self.sigma_star_reference,
            Curve::HighLimit => &mut self.sigma_star_high,
            Curve::LowLimit => &mut self.sigma_star_low,
        };
        *slot = Some(value);
    }
}

/// Geometry derived from the config before any conductivity is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepGeometry {
    pub fractions: VolumeFractions,
    pub r2: f64,
    /// Interphase thickness `r2 - r1`.
    pub h: f64,
}

impl SweepGeometry {
    pub fn from_config(config: &SweepConfig) -> Result<Self, CliError> {
        if !(config.theta2 > 0.0) {
            return Err(CliError::Config(format!("theta2 must be > 0, got {}", config.theta2)));
        }
        let r2 = radius_from_fraction(config.r1, config.r3, config.theta2)
            .map_err(|e| CliError::Config(format!("infeasible theta2: {e}")))?;
        let fractions = VolumeFractions::from_core_and_interphase(config.theta1(), config.theta2)
            .map_err(|e| CliError::Config(format!("infeasible theta2: {e}")))?;
        if !(fractions.theta3 > 0.0) {
            return Err(CliError::Config(format!("theta2={} leaves no outer coating", config.theta2)));
        }
        Ok(Self { fractions, r2, h: r2 - config.r1 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub config: SweepConfig,
    pub geometry: SweepGeometry,
    pub rows: Vec<SweepRow>,
}

fn evaluate(config: &SweepConfig, g: &SweepGeometry, curves: &[Curve], sigma2: f64) -> Result<SweepRow, CliError> {
    let (s1, s3, f) = (config.sigma1, config.sigma3, &g.fractions);
    let mut row = SweepRow {
        sigma2,
        sigma_star_exact: None,
        sigma_star_approx: None,
        sigma_star_reference: None,
        sigma_star_high: None,
        sigma_star_low: None,
        warnings: Vec::new(),
    };
    for &curve in curves {
        let value = match curve {
            Curve::Exact => exact_sigma_star_from_fractions(s1, sigma2, s3, f),
            Curve::Approx => approx_sigma_star(s1, sigma2, s3, f.theta1, config.r1, g.h),
            Curve::Reference => reference_sigma_star(s1, s3, f.theta1),
            Curve::HighLimit => high_contrast_limit(s1, s3, f, f.theta2 * sigma2),
            Curve::LowLimit => low_contrast_limit(s1, s3, f, sigma2 / f.theta2),
        }
        .map_err(|e| CliError::Sample { sigma2, curve: curve.column(), source: e })?;
        row.set(curve, value);
    }
    if intermediate_band_warning(s1, sigma2, s3).is_some() {
        row.warnings.push(WARN_OUTSIDE_BAND.into());
    }
    if let Some(x) = row.sigma_star_exact {
        let lo = s1.min(sigma2).min(s3);
        let hi = s1.max(sigma2).max(s3);
        if !(x >= lo && x <= hi) {
            row.warnings.push(WARN_OUTSIDE_WIENER.into());
        }
    }
    Ok(row)
}

/// Evaluates every selected curve at every sample. Rows come back sorted by
/// `sigma2` whatever the evaluation order.
pub fn run_sweep(config: &SweepConfig) -> Result<Sweep, CliError> {
    config.validate()?;
    let geometry = SweepGeometry::from_config(config)?;
    let curves = config.curves();
    let rows = config
        .sigma2_samples()
        .into_par_iter()
        .map(|s| evaluate(config, &geometry, &curves, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sweep { config: config.clone(), geometry, rows })
}

/// 17 significant digits: parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let curves = self.config.curves();
        let g = &self.geometry;
        let mut out = String::new();
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let _ = writeln!(out, "# interphase sweep v{}", env!("CARGO_PKG_VERSION"));
        if let Some(name) = &self.config.name {
            let _ = writeln!(out, "# name: {name}");
        }
        let _ = writeln!(out, "# config: {config}");
        for (k, v) in [
            ("theta1", g.fractions.theta1),
            ("theta2", g.fractions.theta2),
            ("theta3", g.fractions.theta3),
            ("r1", self.config.r1),
            ("r2", g.r2),
            ("r3", self.config.r3),
            ("h", g.h),
        ] {
            let _ = writeln!(out, "# {k}: {}", format_float(v));
        }
        let mut header = vec!["sigma2"];
        header.extend(curves.iter().map(|c| c.column()));
        header.push("warnings");
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut cells = vec![format_float(row.sigma2)];
            cells.extend(curves.iter().map(|&c| format_float(row.get(c).expect("selected curve computed"))));
            cells.push(row.warnings.join(";"));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Parsed sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub metadata: Vec<(String, String)>,
    pub curves: Vec<Curve>,
    pub sigma2: Vec<f64>,
    /// `values[k][i]`: curve `k` at sample `i`.
    pub values: Vec<Vec<f64>>,
    pub warnings: Vec<Vec<String>>,
}

impl SweepTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn curve(&self, curve: Curve) -> Option<&[f64]> {
        self.curves.iter().position(|&c| c == curve).map(|k| self.values[k].as_slice())
    }
}

pub fn parse_csv(text: &str) -> Result<SweepTable, CliError> {
    let err = |line: usize, message: String| CliError::Csv { line, message };
    let mut metadata = Vec::new();
    let mut header: Option<(Vec<Curve>, bool)> = None;
    let mut sigma2 = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut warnings = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let raw = raw.trim_end_matches('\r');
        if let Some(comment) = raw.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once(": ") {
                metadata.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        let Some((curves, has_warnings)) = &header else {
            if fields[0] != "sigma2" {
                return Err(err(line, format!("expected header starting with sigma2, found {:?}", fields[0])));
            }
            let has_warnings = fields.last() == Some(&"warnings");
            let names = &fields[1..fields.len() - usize::from(has_warnings)];
            let curves = names
                .iter()
                .map(|n| Curve::from_column(n).ok_or_else(|| err(line, format!("unknown column {n:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            values = vec![Vec::new(); curves.len()];
            header = Some((curves, has_warnings));
            continue;
        };
        let expected = 1 + curves.len() + usize::from(*has_warnings);
        if fields.len() != expected {
            return Err(err(line, format!("expected {expected} fields, found {}", fields.len())));
        }
        let number = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| err(line, format!("invalid number {s:?}")))
        };
        sigma2.push(number(fields[0])?);
        for (k, f) in fields[1..=curves.len()].iter().enumerate() {
            values[k].push(number(f)?);
        }
        let w = if *has_warnings { fields[expected - 1] } else { "" };
        warnings.push(w.split(';').filter(|s| !s.is_empty()).map(String::from).collect());
    }
    let Some((curves, _)) = header else {
        return Err(err(text.lines().count().max(1), "missing header row".into()));
    };
    Ok(SweepTable { metadata, curves, sigma2, values, warnings })
}
