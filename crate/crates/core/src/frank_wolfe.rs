//! Concave best response over the occupancy polytope of a tabular MDP.
//!
//! The learner maximizes `V_0(d) - lambda [max_i (V_i(d) - alpha_i)]_+`,
//! which is concave and piecewise linear in the occupancy `d`. Each iteration
//! takes a supergradient, calls the exact linear oracle (backward induction)
//! and moves toward its answer with step `2 / (1 + w)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{backward_induction, occupancy_of_policy, OccupancyMeasure, SaTable, TabularMdp, TabularPolicy};

const FLOW_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;

/// Per-constraint values `V_i(d) - alpha_i`, `i = 1..=m`.
pub fn violations(mdp: &TabularMdp, d: &OccupancyMeasure, alpha: &[f64]) -> Vec<f64> {
    alpha.iter().enumerate().map(|(i, a)| d.value(mdp.reward(i + 1)) - a).collect()
}

/// `V_0(d) - lambda [max_i (V_i(d) - alpha_i)]_+`.
pub fn reformulated_value(mdp: &TabularMdp, d: &OccupancyMeasure, lambda: f64, alpha: &[f64]) -> f64 {
    let g = violations(mdp, d, alpha).into_iter().fold(f64::NEG_INFINITY, f64::max);
    d.value(mdp.reward(0)) - lambda * g.max(0.0)
}

/// Supergradient at `d` and the argmax set it used. When the worst
/// violation is nonpositive (including exactly zero) the answer is `r_0`;
/// otherwise `r_0 - lambda * mean_{j in argmax} r_j`.
pub fn supergradient(mdp: &TabularMdp, d: &OccupancyMeasure, lambda: f64, alpha: &[f64]) -> (SaTable, Vec<usize>) {
    let v = violations(mdp, d, alpha);
    let g = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lambda == 0.0 || g <= 0.0 || v.is_empty() {
        return (mdp.reward(0).clone(), vec![]);
    }
    let tol = TIE_TOL * g.abs().max(1.0);
    let active: Vec<usize> = v.iter().enumerate().filter(|(_, &x)| x >= g - tol).map(|(i, _)| i + 1).collect();
    let w = lambda / active.len() as f64;
    let mut s = mdp.reward(0).clone();
    for &j in &active {
        s = s.add_scaled(mdp.reward(j), -w);
    }
    (s, active)
}

/// Exact linear maximization over the occupancy polytope: the optimal
/// deterministic policy for `reward` (ties to the lowest action) and its
/// occupancy.
pub fn lmo(mdp: &TabularMdp, reward: &SaTable) -> Result<(OccupancyMeasure, TabularPolicy)> {
    let bi = backward_induction(mdp, reward)?;
    let d = occupancy_of_policy(mdp, &bi.policy)?;
    Ok((d, bi.policy))
}

/// `pi_h(a|s) = q_h(s,a) / sum_a' q_h(s,a')`; unvisited `(h, s)` get the
/// uniform distribution.
pub fn policy_from_occupancy(d: &OccupancyMeasure) -> TabularPolicy {
    let (ns, na) = (d.n_states, d.n_actions);
    let mut probs = Vec::with_capacity(d.per_step.len());
    for row in d.per_step.chunks(na) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            probs.extend(row.iter().map(|q| q / total));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / na as f64, na));
        }
    }
    // renormalize rows so they pass the stochasticity check exactly
    for row in probs.chunks_mut(na) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    TabularPolicy::from_probs(ns, na, d.horizon, probs).expect("rows are distributions")
}

/// Stationary readout from the summed occupancy `d = sum_h q_h`. Loses the
/// step dependence of non-stationary mixtures.
pub fn stationary_policy_from_occupancy(d: &OccupancyMeasure) -> TabularPolicy {
    let summed = d.summed();
    let (ns, na) = (d.n_states, d.n_actions);
    let mut one_step = Vec::with_capacity(ns * na);
    for row in summed.values.chunks(na) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            one_step.extend(row.iter().map(|q| q / total));
        } else {
            one_step.extend(std::iter::repeat_n(1.0 / na as f64, na));
        }
    }
    TabularPolicy::from_probs(ns, na, d.horizon, one_step.repeat(d.horizon)).expect("rows are distributions")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwLogRow {
    pub w: usize,
    pub step: f64,
    pub value: f64,
    pub gap: f64,
    pub active: Vec<usize>,
}

/// Solver state: the iterate is the weighted sum of the atoms.
#[derive(Debug, Clone)]
pub struct FwState {
    pub x: OccupancyMeasure,
    pub w: usize,
    pub gap: f64,
    pub atoms: Vec<(OccupancyMeasure, TabularPolicy)>,
    pub weights: Vec<f64>,
}

impl FwState {
    /// Distance between the iterate and the recombined atoms, and how far
    /// the weights are from summing to one.
    pub fn consistency(&self) -> (f64, f64) {
        let parts: Vec<(&OccupancyMeasure, f64)> = self.atoms.iter().map(|(o, _)| o).zip(self.weights.iter().copied()).collect();
        let recombined = OccupancyMeasure::combine(&parts).expect("at least one atom");
        let dist = recombined.per_step.iter().zip(&self.x.per_step).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (dist, (self.weights.iter().sum::<f64>() - 1.0).abs())
    }
}

#[derive(Debug, Clone)]
pub struct FwResult {
    pub state: FwState,
    /// Per-step readout of the final iterate; its occupancy equals the iterate.
    pub policy: TabularPolicy,
    pub value: f64,
    pub converged: bool,
    pub log: Vec<FwLogRow>,
}

impl FwResult {
    /// Columns: `w, step, value, gap, active` (active indices joined by `;`).
    pub fn log_csv(&self) -> String {
        let mut out = String::from("w,step,value,gap,active\n");
        for r in &self.log {
            let active: Vec<String> = r.active.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{},{},{},{},{}", r.w, r.step, r.value, r.gap, active.join(";"));
        }
        out
    }
}

/// Frank–Wolfe from the uniform-policy occupancy.
pub fn fw_best_response(mdp: &TabularMdp, lambda: f64, alpha: &[f64], max_iter: usize, eps: f64) -> Result<FwResult> {
    let uniform = TabularPolicy::uniform(mdp);
    let x0 = occupancy_of_policy(mdp, &uniform)?;
    fw_best_response_from(mdp, lambda, alpha, max_iter, eps, (x0, uniform))
}

/// Frank–Wolfe from a given starting atom.
pub fn fw_best_response_from(
    mdp: &TabularMdp,
    lambda: f64,
    alpha: &[f64],
    max_iter: usize,
    eps: f64,
    start: (OccupancyMeasure, TabularPolicy),
) -> Result<FwResult> {
    if max_iter == 0 || !(eps > 0.0) {
        return Err(Error::Config("Frank-Wolfe needs at least one iteration and a positive tolerance".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::NegativeMultiplier { index: 0, value: lambda });
    }
    if alpha.len() + 1 != mdp.n_objectives() {
        return Err(Error::Shape("one threshold per constraint reward required".into()));
    }
    let residual = start.0.flow_residual(mdp);
    if residual > FLOW_TOL {
        return Err(Error::Validation(format!("initial occupancy violates the flow constraints by {residual}")));
    }
    let mut state = FwState { x: start.0.clone(), w: 0, gap: f64::INFINITY, atoms: vec![start], weights: vec![1.0] };
    let mut log = Vec::new();
    let mut converged = false;
    for w in 1..=max_iter {
        let (s, active) = supergradient(mdp, &state.x, lambda, alpha);
        let (d, pi) = lmo(mdp, &s)?;
        let gap = d.value(&s) - state.x.value(&s);
        let step = 2.0 / (1.0 + w as f64);
        log.push(FwLogRow { w, step, value: reformulated_value(mdp, &state.x, lambda, alpha), gap, active });
        state.w = w;
        state.gap = gap;
        if gap <= eps {
            converged = true;
            break;
        }
        state.x = state.x.mix(&d, step);
        for wt in &mut state.weights {
            *wt *= 1.0 - step;
        }
        match state.atoms.iter().position(|(_, p)| *p == pi) {
            Some(k) => state.weights[k] += step,
            None => {
                state.atoms.push((d, pi));
                state.weights.push(step);
            }
        }
        let keep: Vec<bool> = state.weights.iter().map(|&wt| wt > 0.0).collect();
        let mut k = 0;
        state.atoms.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        state.weights.retain(|&wt| wt > 0.0);
    }
    if !converged {
        // certificate at the final iterate
        let (s, _) = supergradient(mdp, &state.x, lambda, alpha);
        let (d, _) = lmo(mdp, &s)?;
        state.gap = d.value(&s) - state.x.value(&s);
        converged = state.gap <= eps;
    }
    let policy = policy_from_occupancy(&state.x);
    let value = reformulated_value(mdp, &state.x, lambda, alpha);
    Ok(FwResult { state, policy, value, converged, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::oracle::{deterministic_policies, deterministic_value_points, max_reformulated_over_hull};
    use crate::rng::seeded;
    use crate::tabular::policy_values;
    use rand::Rng;

    #[test]
    fn step_schedule() {
        let mdp = TabularMdp::random(2, 2, 2, 2, 1);
        let r = fw_best_response(&mdp, 5.0, &[1.0], 50, 1e-300).unwrap();
        assert_eq!(r.log[0].step, 1.0);
        for (k, row) in r.log.iter().enumerate() {
            assert_eq!(row.w, k + 1);
            assert_eq!(row.step, 2.0 / (2.0 + k as f64));
        }
    }

    #[test]
    fn linear_objective_stops_after_one_oracle_call() {
        let mdp = TabularMdp::random(3, 2, 3, 2, 7);
        let r = fw_best_response(&mdp, 0.0, &[0.5], 100, 1e-9).unwrap();
        assert!(r.converged);
        assert_eq!(r.log.len(), 2);
        assert!(r.log[1].gap.abs() < 1e-12);
    }

    #[test]
    fn supergradient_cases() {
        let mdp = TabularMdp::random(3, 2, 3, 3, 4);
        let d = occupancy_of_policy(&mdp, &TabularPolicy::uniform(&mdp)).unwrap();
        let (s, active) = supergradient(&mdp, &d, 2.0, &[100.0, 100.0]);
        assert!(active.is_empty());
        assert_eq!(&s, mdp.reward(0));
        let v = violations(&mdp, &d, &[0.0, 0.0]);
        let j = if v[0] > v[1] { 1 } else { 2 };
        let (s, active) = supergradient(&mdp, &d, 2.0, &[0.0, 0.0]);
        assert_eq!(active, vec![j]);
        assert_eq!(s, mdp.reward(0).add_scaled(mdp.reward(j), -2.0));
    }

    #[test]
    fn supergradient_inequality_on_random_pairs() {
        let mdp = TabularMdp::random(3, 2, 3, 3, 12);
        let pols: Vec<TabularPolicy> = deterministic_policies(&mdp).step_by(37).collect();
        let occ: Vec<OccupancyMeasure> = pols.iter().map(|p| occupancy_of_policy(&mdp, p).unwrap()).collect();
        let mut rng = seeded(3);
        let alpha = [1.2, 0.9];
        for _ in 0..100 {
            let (i, j, k) = (rng.random_range(0..occ.len()), rng.random_range(0..occ.len()), rng.random_range(0..occ.len()));
            let x = occ[i].mix(&occ[j], rng.random::<f64>());
            let y = occ[k].mix(&occ[j], rng.random::<f64>());
            let (s, _) = supergradient(&mdp, &x, 1.7, &alpha);
            let lhs = reformulated_value(&mdp, &y, 1.7, &alpha);
            let rhs = reformulated_value(&mdp, &x, 1.7, &alpha) + y.value(&s) - x.value(&s);
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn supergradient_bounds_directional_differences() {
        let mdp = TabularMdp::random(3, 2, 3, 2, 21);
        let pols: Vec<TabularPolicy> = deterministic_policies(&mdp).step_by(11).collect();
        let occ: Vec<OccupancyMeasure> = pols.iter().map(|p| occupancy_of_policy(&mdp, p).unwrap()).collect();
        let x = occ[0].mix(&occ[1], 0.4);
        let alpha = [x.value(mdp.reward(1)) - 0.05];
        let (s, _) = supergradient(&mdp, &x, 3.0, &alpha);
        let mut rng = seeded(11);
        let h = 1e-6;
        for _ in 0..100 {
            let target = &occ[rng.random_range(0..occ.len())];
            // feasible direction: toward another occupancy
            let moved = x.mix(target, h);
            let diff = reformulated_value(&mdp, &moved, 3.0, &alpha) - reformulated_value(&mdp, &x, 3.0, &alpha);
            let lin = moved.value(&s) - x.value(&s);
            assert!(diff <= lin + 1e-12, "{diff} > {lin}");
        }
    }

    #[test]
    fn lmo_matches_enumeration_and_degenerate_reward() {
        let mdp = TabularMdp::random(2, 2, 3, 1, 5);
        let (d, _) = lmo(&mdp, mdp.reward(0)).unwrap();
        let best = deterministic_policies(&mdp).map(|p| policy_values(&mdp, &p).unwrap()[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!((d.value(mdp.reward(0)) - best).abs() < 1e-9);
        let zero = SaTable::zeros(2, 2);
        let (d0, p0) = lmo(&mdp, &zero).unwrap();
        assert_eq!(p0, TabularPolicy::constant(&mdp, 0));
        assert_eq!(d0.value(&zero), 0.0);
    }

    #[test]
    fn readout_round_trips() {
        let mdp = TabularMdp::random(3, 3, 4, 1, 9);
        let pols: Vec<TabularPolicy> = deterministic_policies(&mdp).step_by(1009).take(3).collect();
        let occ: Vec<OccupancyMeasure> = pols.iter().map(|p| occupancy_of_policy(&mdp, p).unwrap()).collect();
        // deterministic: recovered on visited cells
        let back = policy_from_occupancy(&occ[0]);
        for h in 0..4 {
            for s in 0..3 {
                let visited: f64 = (0..3).map(|a| occ[0].per_step[(h * 3 + s) * 3 + a]).sum();
                if visited > 0.0 {
                    assert_eq!(back.row(h, s), pols[0].row(h, s));
                }
            }
        }
        // mixture: per-step readout reproduces the occupancy
        let mix = OccupancyMeasure::combine(&[(&occ[0], 0.2), (&occ[1], 0.5), (&occ[2], 0.3)]).unwrap();
        let again = occupancy_of_policy(&mdp, &policy_from_occupancy(&mix)).unwrap();
        for (a, b) in again.per_step.iter().zip(&mix.per_step) {
            assert!((a - b).abs() < 1e-12);
        }
        // uniform occupancy gives the uniform policy
        let u = occupancy_of_policy(&mdp, &TabularPolicy::uniform(&mdp)).unwrap();
        let readout = policy_from_occupancy(&u);
        for h in 0..4 {
            for s in 0..3 {
                assert!(readout.row(h, s).iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let mdp = TabularMdp::random(2, 2, 2, 2, 3);
        let mut x = occupancy_of_policy(&mdp, &TabularPolicy::uniform(&mdp)).unwrap();
        x.per_step[0] += 0.1;
        let start = (x, TabularPolicy::uniform(&mdp));
        assert!(matches!(fw_best_response_from(&mdp, 1.0, &[0.5], 10, 1e-3, start), Err(Error::Validation(_))));
    }

    #[test]
    fn iterates_stay_in_polytope_and_certify() {
        for inst in fixtures::fw_suite() {
            let r = fw_best_response(&inst.mdp, inst.lambda, &inst.alpha, 200, 1e-12).unwrap();
            assert!(r.state.x.flow_residual(&inst.mdp) <= 1e-9);
            let (dist, wsum) = r.state.consistency();
            assert!(dist <= 1e-9 && wsum <= 1e-12, "{}: {dist} {wsum}", inst.name);
            let best = max_reformulated_over_hull(&deterministic_value_points(&inst.mdp), inst.lambda, &inst.alpha);
            for row in &r.log {
                assert!(row.value <= best + 1e-9);
                assert!(best <= row.value + row.gap + 1e-9, "{}: w={} {} + {} < {best}", inst.name, row.w, row.value, row.gap);
            }
        }
    }
}
