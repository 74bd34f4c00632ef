//! Brute-force reference computations used to check the fast paths.
//!
//! Everything here is exponential or quadratic in the instance size and is
//! meant for the small fixtures only.

use std::collections::BTreeMap;

use crate::mdp::EpisodicMdp;
use crate::tabular::{occupancy_of_policy, TabularMdp, TabularPolicy};

/// Every deterministic non-stationary policy, in lexicographic order of the
/// flattened `[h][s]` action table (action of `(0, 0)` varies slowest).
pub fn deterministic_policies(mdp: &TabularMdp) -> impl Iterator<Item = TabularPolicy> + '_ {
    let cells = mdp.horizon() * mdp.n_states();
    let na = mdp.n_actions();
    let total = (na as u128).checked_pow(cells as u32).expect("too many policies to enumerate");
    assert!(total <= 1 << 22, "{total} deterministic policies is too many to enumerate");
    (0..total as u64).map(move |mut code| {
        let mut flat = vec![0usize; cells];
        for slot in flat.iter_mut().rev() {
            *slot = (code % na as u64) as usize;
            code /= na as u64;
        }
        let actions: Vec<Vec<usize>> = flat.chunks(mdp.n_states()).map(<[usize]>::to_vec).collect();
        TabularPolicy::deterministic(mdp, &actions)
    })
}

/// Distinct value vectors `(V_0, ..., V_m)` of all deterministic policies.
/// Every occupancy measure is a mixture of these, so the achievable value set
/// is exactly their convex hull.
pub fn deterministic_value_points(mdp: &TabularMdp) -> Vec<Vec<f64>> {
    let mut seen = BTreeMap::new();
    for pi in deterministic_policies(mdp) {
        let d = occupancy_of_policy(mdp, &pi).expect("fixture MDP is valid");
        let v: Vec<f64> = mdp.rewards().iter().map(|r| d.value(r)).collect();
        let key: Vec<i64> = v.iter().map(|x| (x * 1e10).round() as i64).collect();
        seen.entry(key).or_insert(v);
    }
    seen.into_values().collect()
}

/// `v_0 - lambda * [max_i (v_i - alpha_i)]_+` on a value vector.
pub fn reformulated_value(v: &[f64], lambda: f64, alpha: &[f64]) -> f64 {
    let g = v[1..].iter().zip(alpha).map(|(x, a)| x - a).fold(f64::NEG_INFINITY, f64::max);
    v[0] - lambda * g.max(0.0)
}

/// Breakpoint hyperplanes `<coef, v> = rhs` of the piecewise-linear penalty:
/// `v_i = alpha_i` and `v_i - alpha_i = v_j - alpha_j`.
fn breakpoints(alpha: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let m = alpha.len();
    let mut out = Vec::new();
    for i in 0..m {
        let mut c = vec![0.0; m + 1];
        c[i + 1] = 1.0;
        out.push((c, alpha[i]));
        for j in i + 1..m {
            let mut c = vec![0.0; m + 1];
            c[i + 1] = 1.0;
            c[j + 1] = -1.0;
            out.push((c, alpha[i] - alpha[j]));
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact maximum of the reformulated Lagrangian over the convex hull of
/// `points`. The objective is concave and piecewise linear, so its maximum
/// sits on a face of the hull of dimension `k` cut by `k` breakpoint
/// hyperplanes; such a point is a combination of at most `k + 1` hull points.
/// Enumerates single points, crossings on segments, and (for two
/// constraints) crossings inside triangles.
pub fn max_reformulated_over_hull(points: &[Vec<f64>], lambda: f64, alpha: &[f64]) -> f64 {
    assert!(alpha.len() <= 2, "hull enumeration supports at most two constraints");
    let f = |v: &[f64]| reformulated_value(v, lambda, alpha);
    let mut best = points.iter().map(|p| f(p)).fold(f64::NEG_INFINITY, f64::max);
    if lambda == 0.0 {
        return best;
    }
    let planes = breakpoints(alpha);
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect() };
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (p, q) = (&points[i], &points[j]);
            for (c, rhs) in &planes {
                let (cp, cq) = (dot(c, p), dot(c, q));
                if (cq - cp).abs() < 1e-15 {
                    continue;
                }
                let t = (rhs - cp) / (cq - cp);
                if (0.0..=1.0).contains(&t) {
                    best = best.max(f(&lerp(p, q, t)));
                }
            }
        }
    }
    if alpha.len() == 2 {
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                for k in j + 1..points.len() {
                    let (p, q, r) = (&points[i], &points[j], &points[k]);
                    for a in 0..planes.len() {
                        for b in a + 1..planes.len() {
                            // weights (1 - u - w, u, w): solve the 2x2 system
                            let (c1, r1) = (&planes[a].0, planes[a].1);
                            let (c2, r2) = (&planes[b].0, planes[b].1);
                            let (a11, a12, b1) = (dot(c1, q) - dot(c1, p), dot(c1, r) - dot(c1, p), r1 - dot(c1, p));
                            let (a21, a22, b2) = (dot(c2, q) - dot(c2, p), dot(c2, r) - dot(c2, p), r2 - dot(c2, p));
                            let det = a11 * a22 - a12 * a21;
                            if det.abs() < 1e-15 {
                                continue;
                            }
                            let u = (b1 * a22 - a12 * b2) / det;
                            let w = (a11 * b2 - b1 * a21) / det;
                            if u >= 0.0 && w >= 0.0 && u + w <= 1.0 {
                                let v: Vec<f64> =
                                    (0..p.len()).map(|n| (1.0 - u - w) * p[n] + u * q[n] + w * r[n]).collect();
                                best = best.max(f(&v));
                            }
                        }
                    }
                }
            }
        }
    }
    best
}

/// Euclidean projection onto `{x >= 0, sum x <= cap}` by enumerating KKT
/// active sets: for every support set the candidate is either the clamped
/// point (budget slack) or the support shifted down by a common threshold
/// (budget tight). The nearest feasible candidate is the projection.
pub fn project_bruteforce(v: &[f64], cap: f64) -> Vec<f64> {
    let m = v.len();
    assert!(m <= 16);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |x: Vec<f64>| {
        if x.iter().any(|&c| c < -1e-12) || x.iter().sum::<f64>() > cap + 1e-9 {
            return;
        }
        let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    };
    for mask in 0u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut free = vec![0.0; m];
        for &i in &support {
            free[i] = v[i];
        }
        consider(free);
        if !support.is_empty() {
            let theta = (support.iter().map(|&i| v[i]).sum::<f64>() - cap) / support.len() as f64;
            let mut tight = vec![0.0; m];
            for &i in &support {
                tight[i] = v[i] - theta;
            }
            consider(tight);
        }
    }
    best.expect("the origin is always feasible").1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_all_policies() {
        let mdp = TabularMdp::random(2, 3, 2, 1, 0);
        assert_eq!(deterministic_policies(&mdp).count(), 81);
        let first = deterministic_policies(&mdp).next().unwrap();
        assert_eq!(first.deterministic_action(1, 1), Some(0));
    }

    #[test]
    fn hull_max_of_two_points_finds_the_kink() {
        // V0 = 0.2 + 0.8p, V1 = p, alpha = 0.5, lambda = 2: max at p = 0.5
        let pts = vec![vec![1.0, 1.0], vec![0.2, 0.0]];
        let best = max_reformulated_over_hull(&pts, 2.0, &[0.5]);
        assert!((best - 0.6).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_projection_known_case() {
        let p = project_bruteforce(&[3.0, 4.0, -1.0], 5.0);
        for (a, b) in p.iter().zip([2.0, 3.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
