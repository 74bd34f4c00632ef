//! The multiplier player: projected online gradient descent on the set
//! `{lambda >= 0, |lambda|_1 <= C}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constraint thresholds and orientation. Constraint `i` reads
/// `sign_i * v_i <= alpha_i`; its slack is `alpha_i - sign_i * v_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub alpha: Vec<f64>,
    pub sign: Vec<f64>,
    /// Budget on the l1 norm of the multipliers.
    pub cap: f64,
    pub labels: Vec<String>,
}

impl ConstraintSpec {
    pub fn new(alpha: Vec<f64>, sign: Vec<f64>, cap: f64, labels: Vec<String>) -> Result<Self> {
        let spec = Self { alpha, sign, cap, labels };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.alpha.len();
        if self.sign.len() != m || self.labels.len() != m {
            return Err(Error::Config(format!(
                "constraint spec has {m} thresholds, {} signs and {} labels",
                self.sign.len(),
                self.labels.len()
            )));
        }
        if !(self.cap > 0.0) || !self.cap.is_finite() {
            return Err(Error::Config(format!("multiplier cap must be positive, got {}", self.cap)));
        }
        if let Some(s) = self.sign.iter().find(|s| **s != 1.0 && **s != -1.0) {
            return Err(Error::Config(format!("constraint sign must be +1 or -1, got {s}")));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("non-finite constraint threshold".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    /// Euclidean diameter of the multiplier set: `C` for one constraint
    /// (the segment `[0, C]`), `C * sqrt(2)` otherwise (two distinct vertices
    /// `C e_i`, `C e_j`).
    pub fn diameter(&self) -> f64 {
        if self.m() <= 1 {
            self.cap
        } else {
            self.cap * std::f64::consts::SQRT_2
        }
    }

    /// Copy with every threshold tightened by `delta_i` (a conservative
    /// margin applied while training).
    pub fn tightened(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.m() {
            return Err(Error::Shape("tightening vector length".into()));
        }
        let mut out = self.clone();
        for (a, d) in out.alpha.iter_mut().zip(delta) {
            *a -= d;
        }
        Ok(out)
    }
}

/// A point of the multiplier set. Construct through [`project_lambda`] or
/// [`LagrangeWeights::new`], both of which guarantee membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeWeights(Vec<f64>);

impl LagrangeWeights {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    /// Accepts `values` only if it already lies in the set.
    pub fn new(values: Vec<f64>, cap: f64) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeMultiplier { index, value });
        }
        let total = l1(&values);
        if total > cap {
            return Err(Error::Validation(format!("multiplier l1 norm {total} exceeds cap {cap}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l1(&self) -> f64 {
        l1(&self.0)
    }
}

impl std::ops::Deref for LagrangeWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Left-to-right sum; the membership checks use this exact order.
fn l1(x: &[f64]) -> f64 {
    x.iter().sum()
}

/// `g_i = alpha_i - sign_i * v_i` for the constraint values `v_1..v_m`.
pub fn compute_slacks(constraint_values: &[f64], spec: &ConstraintSpec) -> Result<Vec<f64>> {
    if constraint_values.len() != spec.m() {
        return Err(Error::Shape(format!(
            "{} constraint values for {} constraints",
            constraint_values.len(),
            spec.m()
        )));
    }
    Ok(spec.alpha.iter().zip(&spec.sign).zip(constraint_values).map(|((a, s), v)| a - s * v).collect())
}

/// Euclidean projection onto `{x >= 0, sum x <= cap}`.
///
/// Negative entries are clamped; if the clamped point exceeds the budget the
/// sorted-threshold simplex projection is applied. Points already in the set
/// come back bit-for-bit unchanged.
pub fn project_lambda(v: &[f64], cap: f64) -> LagrangeWeights {
    let clamped: Vec<f64> = v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    if l1(&clamped) <= cap {
        return LagrangeWeights(clamped);
    }
    let mut sorted = clamped.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - cap) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = clamped.iter().map(|&x| (x - theta).max(0.0)).collect();
    // rounding can leave the sum a few ulps above the budget; shave the
    // excess off the largest coordinate until membership holds exactly
    while l1(&out) > cap {
        let excess = l1(&out) - cap;
        let (k, _) = out.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        out[k] = (out[k] - excess.max(out[k] * f64::EPSILON)).max(0.0);
    }
    LagrangeWeights(out)
}

/// One regulator step: `Proj(lambda - eta * g)`. A violated constraint
/// (`g_i < 0`) pushes its multiplier up.
pub fn ogd_step(lambda: &LagrangeWeights, g: &[f64], eta: f64, spec: &ConstraintSpec) -> Result<LagrangeWeights> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {eta}")));
    }
    if g.len() != lambda.len() || g.len() != spec.m() {
        return Err(Error::Shape("slack and multiplier lengths differ".into()));
    }
    let raw: Vec<f64> = lambda.iter().zip(g).map(|(l, gi)| l - eta * gi).collect();
    Ok(project_lambda(&raw, spec.cap))
}

/// Step-size policy for the regulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSize {
    /// `D / (G sqrt(T))`, the rate that gives regret at most `D G sqrt(T)`.
    Theoretical { rounds: usize, grad_bound: f64 },
    Constant { eta: f64 },
}

impl StepSize {
    pub fn eta(&self, spec: &ConstraintSpec) -> Result<f64> {
        match *self {
            StepSize::Theoretical { rounds, grad_bound } => {
                if rounds == 0 || !(grad_bound > 0.0) {
                    return Err(Error::Config("theoretical step size needs rounds >= 1 and G > 0".into()));
                }
                Ok(spec.diameter() / (grad_bound * (rounds as f64).sqrt()))
            }
            StepSize::Constant { eta } if eta > 0.0 => Ok(eta),
            StepSize::Constant { eta } => Err(Error::Config(format!("step size must be positive, got {eta}"))),
        }
    }
}

/// Regret of the played multipliers against the best fixed multiplier in
/// hindsight, for losses `lambda -> lambda . g_t` (the part of the Lagrangian
/// that depends on the multipliers). The loss is linear, so the comparator
/// is a vertex of the set: `0` or `C e_i` for the coordinate with the most
/// negative cumulative slack.
pub fn realized_regret(played: &[Vec<f64>], slacks: &[Vec<f64>], cap: f64) -> Result<f64> {
    if played.is_empty() {
        return Err(Error::Empty("game trace"));
    }
    if played.len() != slacks.len() {
        return Err(Error::Shape("one multiplier vector per slack vector required".into()));
    }
    let m = slacks[0].len();
    let mut incurred = 0.0;
    let mut cumulative = vec![0.0; m];
    for (l, g) in played.iter().zip(slacks) {
        if l.len() != m || g.len() != m {
            return Err(Error::Shape("ragged trace".into()));
        }
        incurred += l.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        for (c, gi) in cumulative.iter_mut().zip(g) {
            *c += gi;
        }
    }
    let best_vertex = cumulative.iter().fold(0.0f64, |acc, &c| acc.min(cap * c));
    Ok(incurred - best_vertex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::project_bruteforce;
    use proptest::prelude::*;

    fn spec(m: usize, cap: f64) -> ConstraintSpec {
        ConstraintSpec::new(vec![0.0; m], vec![1.0; m], cap, (0..m).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn slacks_vanish_on_the_boundary() {
        let s = ConstraintSpec::new(vec![2.0, 3.0], vec![1.0, -1.0], 10.0, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(compute_slacks(&[2.0, -3.0], &s).unwrap(), vec![0.0, 0.0]);
        assert_eq!(compute_slacks(&[1.0, 0.0], &s).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn spec_validation() {
        assert!(ConstraintSpec::new(vec![1.0], vec![1.0], 0.0, vec!["a".into()]).is_err());
        assert!(ConstraintSpec::new(vec![1.0], vec![0.5], 1.0, vec!["a".into()]).is_err());
        assert!(ConstraintSpec::new(vec![1.0], vec![1.0], 1.0, vec![]).is_err());
    }

    #[test]
    fn ogd_fixed_point_and_hand_step() {
        let s = spec(2, 1e6);
        let l = LagrangeWeights::new(vec![1.0, 1.0], 1e6).unwrap();
        assert_eq!(ogd_step(&l, &[0.0, 0.0], 0.5, &s).unwrap(), l);
        assert_eq!(ogd_step(&l, &[-2.0, 3.0], 0.5, &s).unwrap().as_slice(), &[2.0, 0.0]);
        assert!(ogd_step(&l, &[0.0, 0.0], 0.0, &s).is_err());
    }

    #[test]
    fn projection_known_threshold() {
        let p = project_lambda(&[3.0, 4.0, -1.0], 5.0);
        assert_eq!(p.as_slice(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn multipliers_rise_under_violation() {
        let s = spec(2, 100.0);
        let mut l = LagrangeWeights::zeros(2);
        let mut prev = 0.0;
        for _ in 0..10 {
            l = ogd_step(&l, &[-1.5, 0.2], 0.3, &s).unwrap();
            assert!(l[0] > prev);
            prev = l[0];
        }
    }

    #[test]
    fn regret_matches_vertex_enumeration() {
        let played = vec![vec![0.5, 1.0], vec![1.0, 0.0]];
        let slacks = vec![vec![-1.0, 2.0], vec![0.5, -3.0]];
        let cap = 2.0;
        let incurred = 0.5 * -1.0 + 2.0 + 0.5;
        let vertices = [vec![0.0, 0.0], vec![cap, 0.0], vec![0.0, cap]];
        let best = vertices
            .iter()
            .map(|v| slacks.iter().map(|g| v[0] * g[0] + v[1] * g[1]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(realized_regret(&played, &slacks, cap).unwrap(), incurred - best);
        assert!(realized_regret(&[], &[], cap).is_err());
    }

    #[test]
    fn regret_with_satisfied_constraints_uses_zero_comparator() {
        let played = vec![vec![0.3], vec![0.7]];
        let slacks = vec![vec![1.0], vec![2.0]];
        let r = realized_regret(&played, &slacks, 5.0).unwrap();
        assert_eq!(r, 0.3 + 1.4);
    }

    proptest! {
        #[test]
        fn projection_is_member_idempotent_and_nearest(
            v in prop::collection::vec(-50.0f64..50.0, 1..=3),
            cap in 0.1f64..60.0,
        ) {
            let p = project_lambda(&v, cap);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!(p.l1() <= cap);
            let again = project_lambda(&p, cap);
            prop_assert!(again.iter().zip(p.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            let reference = project_bruteforce(&v, cap);
            for (a, b) in p.iter().zip(&reference) {
                prop_assert!((a - b).abs() <= 1e-9, "{:?} vs {:?}", p, reference);
            }
        }

        #[test]
        fn ogd_output_is_always_a_member(
            l in prop::collection::vec(0.0f64..5.0, 4),
            g in prop::collection::vec(-100.0f64..100.0, 4),
            eta in 1e-3f64..10.0,
        ) {
            let s = spec(4, 10.0);
            let start = project_lambda(&l, 10.0);
            let next = ogd_step(&start, &g, eta, &s).unwrap();
            prop_assert!(next.iter().all(|&x| x >= 0.0) && next.l1() <= 10.0);
        }
    }
}
