//! Per-sample metric collection with a plain-text `mean±std` summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::full::{full_scores, DLambdaVariant};
use super::reduced::{ergas, q2n, sam, scc};
use crate::data::{MtfProfile, RATIO};
use crate::error::{Error, Result};
use crate::image::ImagePlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionMode {
    Reduced,
    Full,
}

impl ResolutionMode {
    /// Metric names reported in this mode, in display order.
    pub fn metric_names(self) -> &'static [&'static str] {
        match self {
            Self::Reduced => &["SAM", "ERGAS", "Q2n", "SCC"],
            Self::Full => &["D_lambda", "D_s", "HQNR"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reduced => "reduced",
            Self::Full => "full",
        }
    }
}

impl std::str::FromStr for ResolutionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(Self::Reduced),
            "full" => Ok(Self::Full),
            other => Err(Error::invalid("mode", format!("expected reduced|full, got {other:?}"))),
        }
    }
}

/// Mean and sample standard deviation (N − 1; 0 for a single sample).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    mode: ResolutionMode,
    per_sample: BTreeMap<String, Vec<f64>>,
}

impl MetricsReport {
    pub fn new(mode: ResolutionMode) -> Self {
        let per_sample = mode
            .metric_names()
            .iter()
            .map(|n| (n.to_string(), Vec::new()))
            .collect();
        Self { mode, per_sample }
    }

    pub fn mode(&self) -> ResolutionMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.per_sample.values().map(Vec::len).next().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self, metric: &str) -> Option<&[f64]> {
        self.per_sample.get(metric).map(Vec::as_slice)
    }

    /// Appends one sample's scores; `scores` must cover exactly the mode's
    /// metric set.
    pub fn push(&mut self, scores: &[(&str, f64)]) -> Result<()> {
        let names = self.mode.metric_names();
        if scores.len() != names.len() || !names.iter().all(|n| scores.iter().any(|(k, _)| k == n)) {
            return Err(Error::invalid(
                "metrics",
                format!("{} mode expects {:?}", self.mode.as_str(), names),
            ));
        }
        for (k, v) in scores {
            self.per_sample.get_mut(*k).expect("checked above").push(*v);
        }
        Ok(())
    }

    /// Scores a reduced-resolution prediction against its reference.
    pub fn push_reduced(&mut self, pred: &ImagePlane, gt: &ImagePlane) -> Result<()> {
        self.require(ResolutionMode::Reduced)?;
        let block = 32.min(gt.height()).min(gt.width());
        self.push(&[
            ("SAM", sam(pred, gt)?),
            ("ERGAS", ergas(pred, gt, RATIO as f64)?),
            ("Q2n", q2n(pred, gt, block)?),
            ("SCC", scc(pred, gt)?),
        ])
    }

    /// Scores a full-resolution fusion against its inputs.
    pub fn push_full(
        &mut self,
        fused: &ImagePlane,
        ms: &ImagePlane,
        pan: &ImagePlane,
        profile: &MtfProfile,
        variant: DLambdaVariant,
    ) -> Result<()> {
        self.require(ResolutionMode::Full)?;
        let s = full_scores(fused, ms, pan, profile, variant)?;
        self.push(&[("D_lambda", s.d_lambda), ("D_s", s.d_s), ("HQNR", s.hqnr)])
    }

    fn require(&self, mode: ResolutionMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::invalid(
                "mode",
                format!("report is {} but {} scores were pushed", self.mode.as_str(), mode.as_str()),
            ));
        }
        Ok(())
    }

    /// Summary per metric in display order.
    pub fn summary(&self) -> Vec<(&'static str, Summary)> {
        self.mode
            .metric_names()
            .iter()
            .map(|n| (*n, Summary::of(&self.per_sample[*n])))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "mode={}", self.mode.as_str()).unwrap();
        writeln!(s, "[per_sample]").unwrap();
        writeln!(s, "metric,sample,value").unwrap();
        for name in self.mode.metric_names() {
            for (i, v) in self.per_sample[*name].iter().enumerate() {
                writeln!(s, "{name},{i},{v:e}").unwrap();
            }
        }
        writeln!(s, "[summary]").unwrap();
        writeln!(s, "metric,mean,std,display").unwrap();
        for (name, sm) in self.summary() {
            writeln!(s, "{name},{:e},{:e},{sm}", sm.mean, sm.std).unwrap();
        }
        s
    }

    /// Parses the per-sample section of [`Self::to_text`]; the summary is
    /// recomputed rather than trusted.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Serde(format!("metrics report: {reason}"));
        let mut lines = text.lines();
        let mode = lines
            .next()
            .and_then(|l| l.strip_prefix("mode="))
            .ok_or_else(|| bad("missing mode= header".into()))?
            .parse::<ResolutionMode>()?;
        let mut report = Self::new(mode);
        let mut in_samples = false;
        for line in lines {
            match line.trim() {
                "[per_sample]" => in_samples = true,
                "[summary]" => break,
                "" | "metric,sample,value" => {}
                row if in_samples => {
                    let parts: Vec<&str> = row.split(',').collect();
                    let [name, idx, val] = parts[..] else {
                        return Err(bad(format!("malformed row {row:?}")));
                    };
                    let list = report
                        .per_sample
                        .get_mut(name)
                        .ok_or_else(|| bad(format!("unknown metric {name:?}")))?;
                    let idx: usize = idx.parse().map_err(|_| bad(format!("bad index in {row:?}")))?;
                    if idx != list.len() {
                        return Err(bad(format!("non-sequential index in {row:?}")));
                    }
                    list.push(val.parse().map_err(|_| bad(format!("bad value in {row:?}")))?);
                }
                row => return Err(bad(format!("unexpected line {row:?}"))),
            }
        }
        let n = report.len();
        if report.per_sample.values().any(|v| v.len() != n) {
            return Err(bad("metrics have different sample counts".into()));
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
