use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regulator::ConstraintSpec;
use crate::tabular::{SaTable, TabularMdp};

/// Multipliers plus constraint orientation: everything needed to collapse a
/// reward vector into the single reward the learner optimizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizedSpec {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sign: Vec<f64>,
    pub horizon: usize,
}

impl ScalarizedSpec {
    pub fn new(lambda: Vec<f64>, alpha: Vec<f64>, sign: Vec<f64>, horizon: usize) -> Result<Self> {
        let spec = Self { lambda, alpha, sign, horizon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_constraints(lambda: &[f64], constraints: &ConstraintSpec, horizon: usize) -> Result<Self> {
        Self::new(lambda.to_vec(), constraints.alpha.clone(), constraints.sign.clone(), horizon)
    }

    /// Objective only, no constraints.
    pub fn objective_only(horizon: usize) -> Self {
        Self { lambda: vec![], alpha: vec![], sign: vec![], horizon }
    }

    /// `lambda = 0` over `m` constraints.
    pub fn unconstrained(constraints: &ConstraintSpec, horizon: usize) -> Self {
        Self { lambda: vec![0.0; constraints.m()], alpha: constraints.alpha.clone(), sign: constraints.sign.clone(), horizon }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.lambda.len();
        if self.alpha.len() != m || self.sign.len() != m {
            return Err(Error::Shape(format!(
                "{m} multipliers, {} thresholds, {} signs",
                self.alpha.len(),
                self.sign.len()
            )));
        }
        if let Some((index, &value)) = self.lambda.iter().enumerate().find(|(_, l)| !(**l >= 0.0)) {
            return Err(Error::NegativeMultiplier { index, value });
        }
        if self.horizon == 0 {
            return Err(Error::EmptyHorizon);
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    /// `sum_i lambda_i alpha_i / H`, the reward-independent part.
    fn offset(&self) -> f64 {
        let h = self.horizon as f64;
        self.lambda.iter().zip(&self.alpha).map(|(l, a)| l * a / h).sum()
    }

    /// Scalarized reward without shape checks; `reward.len() == m + 1`.
    #[inline]
    pub fn apply(&self, reward: &[f64]) -> f64 {
        let mut out = reward[0] + self.offset();
        for ((l, s), r) in self.lambda.iter().zip(&self.sign).zip(&reward[1..]) {
            out -= l * s * r;
        }
        out
    }

    /// Scalarized reward table of a tabular MDP.
    pub fn table(&self, mdp: &TabularMdp) -> Result<SaTable> {
        if mdp.n_objectives() != self.m() + 1 {
            return Err(Error::Shape(format!(
                "MDP has {} reward tables, spec needs {}",
                mdp.n_objectives(),
                self.m() + 1
            )));
        }
        let mut t = mdp.reward(0).clone();
        let offset = self.offset();
        t.values.iter_mut().for_each(|v| *v += offset);
        for (i, (l, s)) in self.lambda.iter().zip(&self.sign).enumerate() {
            t = t.add_scaled(mdp.reward(i + 1), -l * s);
        }
        Ok(t)
    }
}

/// `r_0 + sum_i lambda_i (alpha_i / H - sign_i r_i)`.
pub fn scalarize(reward: &[f64], spec: &ScalarizedSpec) -> Result<f64> {
    spec.validate()?;
    if reward.len() != spec.m() + 1 {
        return Err(Error::Shape(format!("reward has {} entries, spec needs {}", reward.len(), spec.m() + 1)));
    }
    Ok(spec.apply(reward))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lambda: Vec<f64>, alpha: Vec<f64>, horizon: usize) -> ScalarizedSpec {
        let m = lambda.len();
        ScalarizedSpec::new(lambda, alpha, vec![1.0; m], horizon).unwrap()
    }

    #[test]
    fn zero_multipliers_give_the_objective() {
        let s = spec(vec![0.0, 0.0], vec![3.0, -2.0], 10);
        assert_eq!(scalarize(&[1.25, 7.0, -4.0], &s).unwrap(), 1.25);
    }

    #[test]
    fn hand_substitution() {
        let s = spec(vec![2.0], vec![10.0], 10);
        assert!((scalarize(&[1.0, 0.5], &s).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_slack_rewards_are_a_fixed_point() {
        let s = spec(vec![0.7, 3.0], vec![4.0, 2.0], 8);
        let r = [0.3, 0.5, 0.25];
        assert!((scalarize(&r, &s).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn negative_multiplier_rejected() {
        let s = ScalarizedSpec { lambda: vec![-0.1], alpha: vec![1.0], sign: vec![1.0], horizon: 5 };
        assert!(matches!(scalarize(&[0.0, 0.0], &s), Err(Error::NegativeMultiplier { index: 0, .. })));
    }

    #[test]
    fn affine_in_multipliers() {
        let r = [0.4, 0.9, -0.2];
        let alpha = vec![1.5, -0.5];
        let a = spec(vec![0.3, 1.1], alpha.clone(), 6);
        let b = spec(vec![2.0, 0.25], alpha.clone(), 6);
        let sum = spec(vec![2.3, 1.35], alpha, 6);
        let lhs = scalarize(&r, &sum).unwrap();
        let rhs = scalarize(&r, &a).unwrap() + scalarize(&r, &b).unwrap() - r[0];
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn table_matches_pointwise_scalarization() {
        let mdp = TabularMdp::random(3, 2, 4, 3, 5);
        let s = ScalarizedSpec::new(vec![0.5, 2.0], vec![1.0, 0.3], vec![1.0, -1.0], 4).unwrap();
        let t = s.table(&mdp).unwrap();
        for st in 0..3 {
            for a in 0..2 {
                let r: Vec<f64> = (0..3).map(|i| mdp.reward(i).get(st, a)).collect();
                assert!((t.get(st, a) - scalarize(&r, &s).unwrap()).abs() < 1e-14);
            }
        }
    }
}
