use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cross_sensor::{CrossSensorReport, EvalReport};
use super::metrics::{ClassMetrics, RegReport};
use super::svg::{line_chart, Series};
use super::EvalError;

pub const SCHEMA_VERSION: u32 = 1;

/// One evaluation run as written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDocument {
    pub schema_version: u32,
    pub model: String,
    pub modality: String,
    pub report: EvalReport,
    pub cross_sensor: Option<CrossSensorReport>,
}

fn unit(name: &str, v: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(EvalError::InvalidReport(format!("{name} = {v} outside [0, 1]")))
    }
}

fn check_class(name: &str, m: &ClassMetrics) -> Result<(), EvalError> {
    unit(&format!("{name}.precision"), m.precision)?;
    unit(&format!("{name}.recall"), m.recall)?;
    unit(&format!("{name}.f1"), m.f1)
}

fn check_reg(r: &RegReport) -> Result<(), EvalError> {
    if !(r.mae.is_finite() && r.rmse.is_finite() && r.mae >= 0.0 && r.rmse >= r.mae) {
        return Err(EvalError::InvalidReport(format!("mae {} rmse {}", r.mae, r.rmse)));
    }
    unit("within_1yr", r.within_1yr)?;
    unit("within_2yr", r.within_2yr)?;
    if r.within_1yr > r.within_2yr {
        return Err(EvalError::InvalidReport("within_1yr exceeds within_2yr".into()));
    }
    Ok(())
}

impl EvalReport {
    /// Checks the structural invariants of every section.
    pub fn validate(&self) -> Result<(), EvalError> {
        let c = &self.classification;
        if c.confusion.iter().flatten().sum::<usize>() != c.n {
            return Err(EvalError::InvalidReport("confusion does not sum to n".into()));
        }
        unit("accuracy", c.accuracy)?;
        unit("macro_f1", c.macro_f1)?;
        check_class("young", &c.young)?;
        check_class("old", &c.old)?;
        check_reg(&self.regression)?;
        let mut binned = 0;
        for b in &self.age_bins.bins {
            binned += b.n;
            match (&b.metrics, b.n) {
                (None, 0) => {}
                (Some(m), n) if m.n == n => check_reg(m)?,
                _ => return Err(EvalError::InvalidReport(format!("bin {} inconsistent", b.label))),
            }
        }
        if binned != self.regression.n {
            return Err(EvalError::InvalidReport("age bins do not partition the samples".into()));
        }
        let mut counted = 0;
        for p in &self.confidence.points {
            counted += p.count;
            if let Some(m) = p.mean_confidence {
                if !(0.5..=1.0).contains(&m) {
                    return Err(EvalError::InvalidReport(format!("confidence {m} at age {}", p.age)));
                }
            }
        }
        if counted != self.regression.n {
            return Err(EvalError::InvalidReport("confidence counts do not sum to n".into()));
        }
        Ok(())
    }

    /// `metric,value` rows of the headline numbers.
    pub fn metrics_csv(&self) -> String {
        let c = &self.classification;
        let r = &self.regression;
        let rows = [
            ("n", r.n as f64),
            ("accuracy", c.accuracy),
            ("young_precision", c.young.precision),
            ("young_recall", c.young.recall),
            ("young_f1", c.young.f1),
            ("old_precision", c.old.precision),
            ("old_recall", c.old.recall),
            ("old_f1", c.old.f1),
            ("macro_f1", c.macro_f1),
            ("mae", r.mae),
            ("rmse", r.rmse),
            ("within_1yr", r.within_1yr),
            ("within_2yr", r.within_2yr),
        ];
        let mut s = String::from("metric,value\n");
        for (k, v) in rows {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }

    pub fn age_bins_csv(&self) -> String {
        let mut s = String::from("bin,n,mae,rmse,within_1yr,within_2yr\n");
        for b in &self.age_bins.bins {
            match &b.metrics {
                Some(m) => s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    b.label, b.n, m.mae, m.rmse, m.within_1yr, m.within_2yr
                )),
                None => s.push_str(&format!("{},0,,,,\n", b.label)),
            }
        }
        s
    }

    pub fn confidence_csv(&self) -> String {
        let mut s = String::from("age,count,mean_confidence\n");
        for p in &self.confidence.points {
            let m = p.mean_confidence.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{m}\n", p.age, p.count));
        }
        s
    }
}

impl EvalDocument {
    pub fn new(model: &str, modality: &str, report: EvalReport, cross_sensor: Option<CrossSensorReport>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: model.into(),
            modality: modality.into(),
            report,
            cross_sensor,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(EvalError::InvalidReport(format!("schema version {}", self.schema_version)));
        }
        self.report.validate()?;
        if let Some(x) = &self.cross_sensor {
            x.same_sensor.validate()?;
            x.other_sensor.validate()?;
            let d = &x.delta;
            if ![d.accuracy_drop, d.macro_f1_drop, d.mae_increase, d.rmse_increase]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(EvalError::InvalidReport("non-finite sensor delta".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Parses and validates a report document.
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| EvalError::InvalidReport(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    /// Writes `report.json`, CSV mirrors and SVG charts into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let put = |name: &str, body: &str| std::fs::write(dir.join(name), body).map_err(io);
        put("report.json", &self.to_json())?;
        put("metrics.csv", &self.report.metrics_csv())?;
        put("age_bins.csv", &self.report.age_bins_csv())?;
        put("confidence.csv", &self.report.confidence_csv())?;

        let mut reports = vec![(self.model.clone(), &self.report)];
        if let Some(x) = &self.cross_sensor {
            put("other_sensor_metrics.csv", &x.other_sensor.metrics_csv())?;
            put("other_sensor_age_bins.csv", &x.other_sensor.age_bins_csv())?;
            put("other_sensor_confidence.csv", &x.other_sensor.confidence_csv())?;
            let d = &x.delta;
            put(
                "sensor_delta.csv",
                &format!(
                    "metric,value\naccuracy_drop,{}\nmacro_f1_drop,{}\nmae_increase,{}\nrmse_increase,{}\n",
                    d.accuracy_drop, d.macro_f1_drop, d.mae_increase, d.rmse_increase
                ),
            )?;
            reports.push((format!("{} (other sensor)", self.model), &x.other_sensor));
        }
        let conf: Vec<Series> = reports
            .iter()
            .map(|(name, r)| Series {
                name,
                points: r
                    .confidence
                    .points
                    .iter()
                    .map(|p| (f64::from(p.age), p.mean_confidence))
                    .collect(),
            })
            .collect();
        put(
            "confidence.svg",
            &line_chart("Mean confidence by age", "age (years)", "mean confidence", &conf),
        )?;
        let bins: Vec<Series> = reports
            .iter()
            .map(|(name, r)| Series {
                name,
                points: r
                    .age_bins
                    .bins
                    .iter()
                    .map(|b| (f64::from(b.min_age + b.max_age) / 2.0, b.metrics.map(|m| m.mae)))
                    .collect(),
            })
            .collect();
        put("age_bin_mae.svg", &line_chart("MAE by age bin", "bin centre age (years)", "MAE (years)", &bins))
    }
}
