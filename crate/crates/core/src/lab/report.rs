use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Schema version of the JSON report.
pub const REPORT_VERSION: u32 = 1;

/// One checked quantity; `margin` is the signed slack, nonnegative on success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Margin {
    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self::build(name, value, threshold, value - threshold)
    }

    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self::build(name, value, threshold, threshold - value)
    }

    fn build(name: &str, value: f64, threshold: f64, margin: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            margin,
            pass: margin >= 0.0,
        }
    }
}

/// Machine-readable outcome of a run. Runtime is kept out of the serialized
/// form so equal `(config, seed)` give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub pass: bool,
    pub margins: Vec<Margin>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl BoundReport {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            version: REPORT_VERSION,
            config_hash,
            seed,
            metrics: BTreeMap::new(),
            pass: true,
            margins: Vec::new(),
            runtime_secs: 0.0,
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Records a margin; the report passes only if every margin does.
    pub fn check(&mut self, m: Margin) {
        self.pass &= m.pass;
        self.margins.push(m);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with columns `kind, name, value, threshold, margin, pass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "name", "value", "threshold", "margin", "pass"])?;
        w.write_record(["meta", "version", &self.version.to_string(), "", "", ""])?;
        w.write_record(["meta", "seed", &self.seed.to_string(), "", "", ""])?;
        w.write_record(["meta", "config_hash", &self.config_hash, "", "", ""])?;
        w.write_record(["meta", "pass", &self.pass.to_string(), "", "", ""])?;
        for (k, v) in &self.metrics {
            w.write_record(["metric", k, &v.to_string(), "", "", ""])?;
        }
        for m in &self.margins {
            w.write_record([
                "margin",
                &m.name,
                &m.value.to_string(),
                &m.threshold.to_string(),
                &m.margin.to_string(),
                &m.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_and_pass_logic() {
        let mut r = BoundReport::new("ab".into(), 7);
        r.metric("c1", 0.5);
        r.check(Margin::at_least("c1_positive", 0.5, 0.0));
        assert!(r.pass);
        r.check(Margin::at_most("violations", 3.0, 1.0));
        assert!(!r.pass && r.margins[1].margin == -2.0);
        r.runtime_secs = 12.0;
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["config_hash", "margins", "metrics", "pass", "seed", "version"]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("margin,violations,3,1,-2,false"));
    }
}
