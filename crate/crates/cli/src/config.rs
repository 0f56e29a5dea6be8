//! Sweep configuration: one JSON document per figure, with command-line
//! overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Agreement required between an explicit `theta1` and `(r1 / r3)^3`.
const THETA1_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    Exact,
    Approx,
    Reference,
    HighLimit,
    LowLimit,
}

impl Curve {
    pub const ALL: [Curve; 5] = [Curve::Exact, Curve::Approx, Curve::Reference, Curve::HighLimit, Curve::LowLimit];

    /// CSV column name.
    pub fn column(self) -> &'static str {
        match self {
            Curve::Exact => "sigma_star_exact",
            Curve::Approx => "sigma_star_approx",
            Curve::Reference => "sigma_star_reference",
            Curve::HighLimit => "sigma_star_high",
            Curve::LowLimit => "sigma_star_low",
        }
    }

    pub fn from_column(name: &str) -> Option<Curve> {
        Curve::ALL.into_iter().find(|c| c.column() == name)
    }

    /// Legend label.
    pub fn label(self) -> &'static str {
        match self {
            Curve::Exact => "exact σ*",
            Curve::Approx => "first-order σ̃*",
            Curve::Reference => "reference σ*⁰",
            Curve::HighLimit => "high-conduction σ*ᴴ",
            Curve::LowLimit => "low-conduction σ*ᴸ",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Range {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Sigma2Range {
    /// Log-spaced samples from `lo` to `hi`, endpoints exact.
    pub fn samples(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let last = self.points - 1;
        (0..self.points)
            .map(|i| match i {
                0 => self.lo,
                i if i == last => self.hi,
                i => (a + (b - a) * i as f64 / last as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotStyle {
    #[default]
    LogX,
    LogLog,
}

impl std::str::FromStr for PlotStyle {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "log-x" | "log_x" => Ok(PlotStyle::LogX),
            "log-log" | "log_log" => Ok(PlotStyle::LogLog),
            other => Err(CliError::Config(format!("unknown plot style {other:?}, expected log-x or log-log"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
    #[serde(default)]
    pub style: PlotStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub r1: f64,
    pub r3: f64,
    /// Optional; must equal `(r1 / r3)^3` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    pub theta2: f64,
    pub sigma1: f64,
    pub sigma3: f64,
    pub sigma2_range: Sigma2Range,
    /// Extra samples merged into the log-spaced ones, e.g. `sigma3` so the
    /// crossing is sampled exactly.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub include_sigma2: Vec<f64>,
    pub outputs: Vec<Curve>,
    #[serde(default)]
    pub output: OutputPaths,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: SweepConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn theta1(&self) -> f64 {
        (self.r1 / self.r3).powi(3)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.r1 > 0.0 && self.r1 < self.r3 && self.r3.is_finite()) {
            return bad(format!("need 0 < r1 < r3, got r1={}, r3={}", self.r1, self.r3));
        }
        if let Some(t) = self.theta1 {
            if (t - self.theta1()).abs() > THETA1_TOLERANCE {
                return bad(format!("theta1={t} inconsistent with (r1/r3)^3={}", self.theta1()));
            }
        }
        for (name, s) in [("sigma1", self.sigma1), ("sigma3", self.sigma3)] {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {s}"));
            }
        }
        let Sigma2Range { lo, hi, points } = self.sigma2_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("sigma2_range needs 0 < lo < hi, got [{lo}, {hi}]"));
        }
        if points < 2 {
            return bad(format!("sigma2_range needs at least 2 points, got {points}"));
        }
        if let Some(s) = self.include_sigma2.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("include_sigma2 entries must be positive, got {s}"));
        }
        if self.outputs.is_empty() {
            return bad("outputs must select at least one curve".into());
        }
        Ok(())
    }

    /// Sorted, deduplicated sample set.
    pub fn sigma2_samples(&self) -> Vec<f64> {
        let mut s = self.sigma2_range.samples();
        // An included value replaces a log sample it matches up to rounding.
        s.retain(|x| !self.include_sigma2.iter().any(|v| (x - v).abs() <= 1e-12 * v));
        s.extend(&self.include_sigma2);
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }

    /// Selected curves in canonical column order.
    pub fn curves(&self) -> Vec<Curve> {
        let mut c = self.outputs.clone();
        c.sort();
        c.dedup();
        c
    }
}

/// Field overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub r1: Option<f64>,
    pub r3: Option<f64>,
    pub theta2: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma3: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: Option<usize>,
    pub outputs: Option<Vec<Curve>>,
    pub csv: Option<PathBuf>,
}

impl SweepConfig {
    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        let geometry_changed = o.r1.is_some() || o.r3.is_some();
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.r1, o.r1);
        set!(self.r3, o.r3);
        set!(self.theta2, o.theta2);
        set!(self.sigma1, o.sigma1);
        set!(self.sigma3, o.sigma3);
        set!(self.sigma2_range.lo, o.lo);
        set!(self.sigma2_range.hi, o.hi);
        set!(self.sigma2_range.points, o.points);
        set!(self.outputs, o.outputs);
        if o.csv.is_some() {
            self.output.csv = o.csv.clone();
        }
        if geometry_changed {
            self.theta1 = None;
        }
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = r#"{
        "r1": 3, "r3": 4, "theta2": 0.1, "sigma1": 1, "sigma3": 10,
        "sigma2_range": {"lo": 0.01, "hi": 100, "points": 5},
        "include_sigma2": [10],
        "outputs": ["low_limit", "exact", "approx"]
    }"#;

    #[test]
    fn parses_and_orders() {
        let c = SweepConfig::from_json(FIG).unwrap();
        assert_eq!(c.curves(), vec![Curve::Exact, Curve::Approx, Curve::LowLimit]);
        let s = c.sigma2_samples();
        assert_eq!(s.len(), 5);
        assert_eq!(s[0], 0.01);
        assert_eq!(s[4], 100.0);
        assert!(s.contains(&10.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let with = |from: &str, to: &str| SweepConfig::from_json(&FIG.replace(from, to));
        assert!(with("\"lo\": 0.01", "\"lo\": 0").is_err());
        assert!(with("\"points\": 5", "\"points\": 1").is_err());
        assert!(with("[\"low_limit\", \"exact\", \"approx\"]", "[]").is_err());
        assert!(with("\"theta2\": 0.1", "\"theta2\": 0.1, \"theta1\": 0.5").is_err());
        assert!(with("\"theta2\": 0.1", "\"theta2\": 0.1, \"theta1\": 0.421875").is_ok());
        assert!(with("\"theta2\": 0.1", "\"theta2\": 0.1, \"bogus\": 1").is_err());
    }

    #[test]
    fn overrides_apply_and_revalidate() {
        let c = SweepConfig::from_json(FIG).unwrap();
        let o = Overrides { theta2: Some(0.01), points: Some(9), ..Default::default() };
        let c = c.apply(&o).unwrap();
        assert_eq!(c.theta2, 0.01);
        assert_eq!(c.sigma2_range.points, 9);
        let bad = Overrides { outputs: Some(vec![]), ..Default::default() };
        assert!(c.apply(&bad).is_err());
    }

    #[test]
    fn curve_columns_round_trip() {
        for c in Curve::ALL {
            assert_eq!(Curve::from_column(c.column()), Some(c));
        }
    }
}
