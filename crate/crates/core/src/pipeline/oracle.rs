use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{contract, Result};

/// Reveal counts per access channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleAudit {
    /// Labels spent from the selection budget.
    pub budget_reveals: usize,
    /// Labels of the degradation probe.
    pub probe_reveals: usize,
    /// Target training-split labels used by the `full` baseline.
    pub full_reveals: usize,
    /// Ground truth read for scoring. Never enters training.
    pub evaluation_reveals: usize,
}

/// Ground-truth oracle over a target set with hidden labels.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    truth: Vec<usize>,
    audit: OracleAudit,
}

impl SimulatedOracle {
    pub fn new(target: &Dataset) -> Result<Self> {
        let truth = target
            .hidden_truth()
            .ok_or_else(|| contract("simulated oracle needs a target with hidden truth"))?
            .to_vec();
        Ok(Self {
            truth,
            audit: OracleAudit::default(),
        })
    }

    fn lookup(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                self.truth
                    .get(i)
                    .copied()
                    .ok_or_else(|| contract(format!("no hidden truth for index {i}")))
            })
            .collect()
    }

    /// Labels for the selected batch, charged to the budget.
    pub fn reveal(&mut self, indices: &[usize]) -> Result<Vec<usize>> {
        let out = self.lookup(indices)?;
        self.audit.budget_reveals += out.len();
        Ok(out)
    }

    pub fn probe(&mut self, indices: &[usize]) -> Result<Vec<usize>> {
        let out = self.lookup(indices)?;
        self.audit.probe_reveals += out.len();
        Ok(out)
    }

    pub fn full_split(&mut self, indices: &[usize]) -> Result<Vec<usize>> {
        let out = self.lookup(indices)?;
        self.audit.full_reveals += out.len();
        Ok(out)
    }

    pub fn evaluation_truth(&mut self, indices: &[usize]) -> Result<Vec<usize>> {
        let out = self.lookup(indices)?;
        self.audit.evaluation_reveals += out.len();
        Ok(out)
    }

    pub fn audit(&self) -> OracleAudit {
        self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::{rec, schema};

    fn target() -> Dataset {
        let recs = (0..10).map(|i| rec(0, i as f64, 0.0, i % 3)).collect();
        Dataset::labeled(schema(), recs).unwrap().hide_labels().unwrap()
    }

    #[test]
    fn channels_are_audited_separately() {
        let mut o = SimulatedOracle::new(&target()).unwrap();
        assert!(o.reveal(&[]).unwrap().is_empty());
        assert_eq!(o.reveal(&[3, 4]).unwrap(), vec![0, 1]);
        o.probe(&[0]).unwrap();
        assert_eq!(o.evaluation_truth(&(0..10).collect::<Vec<_>>()).unwrap().len(), 10);
        let a = o.audit();
        assert_eq!((a.budget_reveals, a.probe_reveals, a.evaluation_reveals), (2, 1, 10));
        assert!(o.reveal(&[10]).is_err());
    }

    #[test]
    fn needs_hidden_truth() {
        let recs = (0..3).map(|i| rec(0, i as f64, 0.0, 0)).collect();
        let ds = Dataset::unlabeled(schema(), recs).unwrap();
        assert!(SimulatedOracle::new(&ds).is_err());
    }
}
