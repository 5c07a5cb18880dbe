use std::fmt;

use serde::{Deserialize, Serialize};

/// One line of a coefficient table. `se`/`z` are absent for coefficients
/// flagged as diverging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub label: String,
    pub coef: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
}

impl CoefRow {
    pub fn new(label: impl Into<String>, coef: f64, se: Option<f64>) -> Self {
        let se = se.filter(|s| s.is_finite());
        CoefRow {
            label: label.into(),
            coef,
            se,
            z: se.map(|s| coef / s),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub rows: Vec<CoefRow>,
}

impl CoefficientTable {
    pub fn get(&self, label: &str) -> Option<&CoefRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

impl fmt::Display for CoefficientTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "term coef se z")?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or_else(|| "---".to_string(), |v| format!("{v:.3}"));
            writeln!(f, "{} {:.3} {} {}", r.label, r.coef, opt(r.se), opt(r.z))?;
        }
        Ok(())
    }
}
