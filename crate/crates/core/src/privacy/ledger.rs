use serde::{Deserialize, Serialize};

use super::BudgetSplit;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub params: serde_json::Value,
    pub eps: f64,
    pub delta: f64,
}

/// The budget split and every charge made against it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub eps1: f64,
    pub delta1: f64,
    pub eps2: f64,
    pub delta2: f64,
    pub eps: f64,
    pub delta: f64,
    pub entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new(split: BudgetSplit) -> Self {
        Self {
            eps1: split.eps1,
            delta1: split.delta1,
            eps2: split.eps2,
            delta2: split.delta2,
            eps: split.eps(),
            delta: split.delta(),
            entries: Vec::new(),
        }
    }

    pub fn split(&self) -> BudgetSplit {
        BudgetSplit {
            eps1: self.eps1,
            delta1: self.delta1,
            eps2: self.eps2,
            delta2: self.delta2,
        }
    }

    pub fn consumed(&self) -> (f64, f64) {
        self.entries
            .iter()
            .fold((0.0, 0.0), |(e, d), x| (e + x.eps, d + x.delta))
    }

    /// Records a mechanism invocation. Charges that would push the running
    /// total above `(eps, delta)` are refused.
    pub fn charge(&mut self, name: &str, params: serde_json::Value, eps: f64, delta: f64) -> Result<()> {
        let (e, d) = self.consumed();
        if e + eps > self.eps * (1.0 + 1e-12) || d + delta > self.delta * (1.0 + 1e-12) {
            return Err(Error::BudgetViolation(format!(
                "charging `{name}` ({eps}, {delta:e}) on top of ({e}, {d:e}) exceeds ({}, {:e})",
                self.eps, self.delta
            )));
        }
        self.entries.push(LedgerEntry {
            name: name.to_string(),
            params,
            eps,
            delta,
        });
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}
