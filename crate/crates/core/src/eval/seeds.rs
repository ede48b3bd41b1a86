use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_seeds: usize,
}

impl SeedAggregate {
    /// Welford's single-pass update.
    pub fn from_values(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::NoReports);
        }
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, &x) in values.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let n = values.len();
        Ok(Self {
            mean,
            std: (m2.max(0.0) / n as f64).sqrt(),
            n_seeds: n,
        })
    }

    /// `mean±std` in percent, one decimal.
    pub fn percent(&self) -> String {
        format!("{:.1}±{:.1}", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean_ap: SeedAggregate,
    pub mean_ap50: SeedAggregate,
    pub per_category: BTreeMap<String, (SeedAggregate, SeedAggregate)>,
}

pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedSummary, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    let keys: Vec<&String> = first.per_category.keys().collect();
    for r in reports {
        let other: Vec<&String> = r.per_category.keys().collect();
        if other != keys {
            return Err(EvalError::CategorySetMismatch {
                expected: keys.iter().map(|s| s.to_string()).collect(),
                found: other.iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    let series = |f: &dyn Fn(&EvalReport) -> f64| -> Result<SeedAggregate, EvalError> {
        SeedAggregate::from_values(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let mut per_category = BTreeMap::new();
    for k in keys {
        let ap = series(&|r| r.per_category[k].ap)?;
        let ap50 = series(&|r| r.per_category[k].ap50)?;
        per_category.insert(k.clone(), (ap, ap50));
    }
    Ok(SeedSummary {
        mean_ap: series(&|r| r.mean_ap)?,
        mean_ap50: series(&|r| r.mean_ap50)?,
        per_category,
    })
}
