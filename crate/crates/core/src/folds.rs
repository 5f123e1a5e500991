use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::glm::{Dataset, Family};
use crate::numerics::RngStream;

/// Assignment of samples to `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
    seed: Option<u64>,
}

impl FoldPlan {
    /// Balanced random folds.
    pub fn random(n: usize, k: usize, rng: &RngStream) -> Result<Self> {
        check_k(n, k)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng.rng());
        let mut assignments = vec![0; n];
        for (t, &i) in order.iter().enumerate() {
            assignments[i] = t % k;
        }
        Ok(Self {
            k,
            assignments,
            seed: Some(rng.seed()),
        })
    }

    /// Folds balanced within each class of a 0/1 response. Every fold holds
    /// both classes, which requires at least `k` members of each.
    pub fn stratified(y: &[f64], k: usize, rng: &RngStream) -> Result<Self> {
        let n = y.len();
        check_k(n, k)?;
        let mut gen = rng.rng();
        let mut assignments = vec![0; n];
        let mut t = 0usize;
        for class in [0.0, 1.0] {
            let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == class).collect();
            if members.len() < k {
                return Err(Error::DegenerateFold(format!(
                    "class {class} has {} samples, fewer than the {k} folds",
                    members.len()
                )));
            }
            members.shuffle(&mut gen);
            for i in members {
                assignments[i] = t % k;
                t += 1;
            }
        }
        Ok(Self {
            k,
            assignments,
            seed: Some(rng.seed()),
        })
    }

    /// Stratified for binomial data, random otherwise.
    pub fn for_dataset(data: &Dataset, k: usize, rng: &RngStream) -> Result<Self> {
        match data.family() {
            Family::Gaussian => Self::random(data.n(), k, rng),
            Family::Binomial => Self::stratified(&data.y().to_vec(), k, rng),
        }
    }

    /// Explicit 0-based fold indices.
    pub fn from_assignments(assignments: Vec<usize>, k: usize) -> Result<Self> {
        check_k(assignments.len(), k)?;
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            if a >= k {
                return Err(Error::InvalidParameter(format!("fold index {a} out of range 0..{k}")));
            }
            sizes[a] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::DegenerateFold(format!("fold {} is empty", empty + 1)));
        }
        Ok(Self {
            k,
            assignments,
            seed: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// 0-based fold of sample `i`.
    pub fn fold_of(&self, i: usize) -> usize {
        self.assignments[i]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn held_in(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::DegenerateFold(format!("{n} samples cannot fill {k} folds")));
    }
    Ok(())
}

/// Fold count capped so that every fold keeps at least two samples.
pub(crate) fn effective_folds(n: usize, requested: usize) -> usize {
    requested.min(n / 2).max(2)
}
