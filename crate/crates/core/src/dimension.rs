//! Combinatorics of the modified doubling index: the constants α and ε₀,
//! binomial tails and their Stirling bound, the N′ recursion on a tree of
//! K-generation steps, a synthetic branching simulator, and box counting.
//!
//! Logarithms are natural except in μ_j, which uses base 2.

use std::collections::BTreeSet;
use std::f64::consts::{LN_2, PI};

use num_bigint::BigUint;
use num_traits::{Float, One};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nodal::Verdict;

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// α solving δ₀/(1−δ₀)·(1−α)/α = 3.
pub fn alpha_from_delta0(delta0: f64) -> Result<f64> {
    unit_interval("delta0", delta0)?;
    Ok(delta0 / (3.0 - 2.0 * delta0))
}

/// ε₀ solving α = log(1+ε₀)/(log(1+ε₀) + log 2), i.e. 2^{α/(1−α)} − 1.
pub fn eps0_from_alpha(alpha: f64) -> Result<f64> {
    unit_interval("alpha", alpha)?;
    Ok((LN_2 * alpha / (1.0 - alpha)).exp_m1())
}

/// x·ln y with the convention 0·ln 0 = 0.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// z(β) = δ₀^β(1−δ₀)^{1−β} / (β^β(1−β)^{1−β}).
pub fn rate_z(beta: f64, delta0: f64) -> f64 {
    (xlny(beta, delta0) + xlny(1.0 - beta, 1.0 - delta0)
        - xlny(beta, beta)
        - xlny(1.0 - beta, 1.0 - beta))
        .exp()
}

/// ⌊jβ⌋, robust to products like 0.3·10 landing just below an integer.
pub fn tail_cutoff(j: u64, beta: f64) -> u64 {
    let x = j as f64 * beta;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as u64
    } else {
        x.floor() as u64
    }
}

/// Σ_{i=0}^{kmax} C(j,i) p^i (1−p)^{j−i}, accumulated in the log domain.
pub fn binomial_cdf(j: u64, kmax: u64, p: f64) -> f64 {
    if kmax >= j {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut logc = 0.0;
    let mut logs = Vec::with_capacity(kmax as usize + 1);
    for i in 0..=kmax {
        if i > 0 {
            logc += ((j - i + 1) as f64).ln() - (i as f64).ln();
        }
        logs.push(logc + i as f64 * lp + (j - i) as f64 * lq);
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
    (m + s.ln()).exp().min(1.0)
}

/// A_j = Σ_{i=0}^{⌊jβ⌋} C(j,i) δ₀^i (1−δ₀)^{j−i}.
pub fn binomial_tail_exact(j: u64, beta: f64, delta0: f64) -> f64 {
    if beta >= 1.0 {
        return 1.0;
    }
    binomial_cdf(j, tail_cutoff(j, beta), delta0)
}

/// Probability that fewer than jβ of j independent steps are good.
pub fn binomial_tail_strict(j: u64, beta: f64, delta0: f64) -> f64 {
    let x = j as f64 * beta;
    let k = tail_cutoff(j, beta);
    let below = if (k as f64 - x).abs() <= 1e-9 * x.max(1.0) {
        // jβ is an integer: exclude it
        match k.checked_sub(1) {
            Some(k) => k,
            None => return 0.0,
        }
    } else {
        k
    };
    binomial_cdf(j, below, delta0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailBound {
    pub bound: f64,
    pub exact: f64,
    /// exact / bound.
    pub ratio: f64,
    /// β ∈ (0, δ₀) and 2 < δ₀/(1−δ₀)·(1−β)/β < 4.
    pub in_regime: bool,
}

/// 2/√(2πjβ(1−β))·z(β)^j together with the exact tail.
pub fn binomial_tail_bound(j: u64, beta: f64, delta0: f64) -> Result<TailBound> {
    if j == 0 {
        return Err(Error::InvalidParameter("j must be at least 1".into()));
    }
    unit_interval("beta", beta)?;
    unit_interval("delta0", delta0)?;
    let jf = j as f64;
    let bound = 2.0 / (2.0 * PI * jf * beta * (1.0 - beta)).sqrt() * rate_z(beta, delta0).powf(jf);
    let exact = binomial_tail_exact(j, beta, delta0);
    let q = delta0 / (1.0 - delta0) * (1.0 - beta) / beta;
    Ok(TailBound {
        bound,
        exact,
        ratio: exact / bound,
        in_regime: beta < delta0 && q > 2.0 && q < 4.0,
    })
}

/// β as the exact fraction p/q of its binary expansion.
fn exact_fraction(beta: f64) -> (BigUint, BigUint) {
    let (mantissa, exponent, _) = beta.integer_decode();
    let mut p = BigUint::from(mantissa);
    let mut q = BigUint::one();
    if exponent >= 0 {
        p <<= exponent as usize;
    } else {
        q <<= (-exponent) as usize;
    }
    (p, q)
}

/// C(j, k−1) < β/(1−β)·C(j, k) for all 0 < k ≤ ⌊jβ⌋, in exact arithmetic
/// with β taken as its binary value.
pub fn ratio_inequality_holds(j: u64, beta: f64) -> bool {
    let (p, q) = exact_fraction(beta);
    if p >= q {
        return false;
    }
    let kmax = tail_cutoff(j, beta).min(j);
    let mut prev = BigUint::one(); // C(j, 0)
    for k in 1..=kmax {
        let next = &prev * BigUint::from(j - k + 1) / BigUint::from(k);
        // C(j,k−1)(q − p) < p C(j,k)
        if &prev * (&q - &p) >= &p * &next {
            return false;
        }
        prev = next;
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinatorialParams {
    pub delta0: f64,
    pub epsilon: f64,
    pub n0: f64,
    /// Generations per step.
    pub k: usize,
    pub d: usize,
}

impl CombinatorialParams {
    pub fn validate(&self) -> Result<()> {
        let alpha = alpha_from_delta0(self.delta0)?;
        let eps0 = eps0_from_alpha(alpha)?;
        if !(self.epsilon > 0.0 && self.epsilon < eps0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon = {} must lie in (0, eps0(alpha) = {eps0})",
                self.epsilon
            )));
        }
        if !(self.n0 > 1.0) {
            return Err(Error::InvalidParameter("N0 must exceed 1".into()));
        }
        if self.k == 0 || !(2..=3).contains(&self.d) {
            return Err(Error::InvalidParameter("need K >= 1 and d in {2, 3}".into()));
        }
        if (self.d - 1) * self.k > 40 {
            return Err(Error::InvalidParameter("M = 2^((d-1)K) exceeds 2^40".into()));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.delta0 / (3.0 - 2.0 * self.delta0)
    }

    /// M = 2^{(d−1)K} children per step.
    pub fn m(&self) -> u64 {
        1u64 << ((self.d - 1) * self.k)
    }
}

/// (d−1)(log M + log z(α))/log M.
pub fn dimension_bound(params: &CombinatorialParams) -> Result<f64> {
    let alpha = alpha_from_delta0(params.delta0)?;
    let lm = (params.m() as f64).ln();
    Ok((params.d - 1) as f64 * (lm + rate_z(alpha, params.delta0).ln()) / lm)
}

/// Input to the N′ recursion: a tree of K-generation steps where node i of
/// step j has children `i·M .. (i+1)·M` at step j + 1.
#[derive(Debug, Clone, Serialize)]
pub struct StepNode {
    /// N(Q) = N*(x_Q, Sℓ(Q)); `None` when it could not be computed.
    pub n: Option<f64>,
    /// Sign verdict on t(Q) ∩ Ω.
    pub translate: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepTree {
    pub m: usize,
    pub levels: Vec<Vec<StepNode>>,
}

impl StepTree {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeIndexState {
    pub n_prime: Vec<Vec<f64>>,
    pub good: Vec<Vec<bool>>,
    /// F_j at every node of step j (0 at the root).
    pub frequency: Vec<Vec<f64>>,
    /// Nodes whose path keeps F_i < α + μ_i for every 1 ≤ i ≤ j.
    pub survivors: Vec<Vec<bool>>,
    /// μ_j for j = 0..=depth (μ_0 unused, set to +∞).
    pub mu: Vec<f64>,
    pub alpha: f64,
    /// Nodes handled with a missing verdict or doubling value.
    pub undetermined: usize,
    /// Children of a sign-definite translate whose own translate is not.
    pub lineage_conflicts: usize,
    /// Nodes (j > 1) audited for F_j ≥ α + μ_j ⇒ N′ < N₀/2.
    pub claim_checked: usize,
    pub claim_violations: usize,
}

/// The modified doubling index N′ over a step tree.
pub fn modified_index_recursion(
    tree: &StepTree,
    params: &CombinatorialParams,
) -> Result<TreeIndexState> {
    params.validate()?;
    let m = tree.m;
    if tree.levels.is_empty() || tree.levels[0].len() != 1 {
        return Err(Error::InvalidParameter("step tree needs a single root".into()));
    }
    for (j, level) in tree.levels.iter().enumerate() {
        if level.len() != m.pow(j as u32) {
            return Err(Error::InvalidParameter(format!(
                "step {j} has {} nodes, expected {}",
                level.len(),
                m.pow(j as u32)
            )));
        }
    }
    let alpha = params.alpha();
    let half_n0 = params.n0 / 2.0;
    let grow = 1.0 + params.epsilon;
    let halve_count = (params.delta0 * m as f64).floor() as usize;
    let mut undetermined = 0;
    let mut lineage_conflicts = 0;

    let root = &tree.levels[0][0];
    let root_value = match root.n {
        Some(n) => n.max(half_n0),
        None => {
            undetermined += 1;
            half_n0
        }
    };
    let mut n_prime = vec![vec![root_value]];
    let mut good = vec![vec![false]];
    // lineage[j][i]: some ancestor-or-self translate is sign-definite
    let mut lineage = vec![vec![root.translate.is_definite()]];
    for j in 1..tree.levels.len() {
        let level = &tree.levels[j];
        let mut np = vec![0.0; level.len()];
        let mut gd = vec![false; level.len()];
        let mut ln = vec![false; level.len()];
        for p in 0..tree.levels[j - 1].len() {
            let parent = n_prime[j - 1][p];
            let kids = p * m..(p + 1) * m;
            if lineage[j - 1][p] {
                // case (a): children with definite translates halve first
                let mut order: Vec<usize> = kids.clone().collect();
                order.sort_by_key(|&c| (!level[c].translate.is_definite(), c));
                for (rank, &c) in order.iter().enumerate() {
                    np[c] = if rank < halve_count { parent / 2.0 } else { grow * parent };
                    ln[c] = true;
                    if !level[c].translate.is_definite() {
                        lineage_conflicts += 1;
                    }
                }
            } else {
                for c in kids {
                    let node = &level[c];
                    ln[c] = node.translate.is_definite();
                    np[c] = if node.translate.is_definite() {
                        parent / 2.0
                    } else {
                        if node.translate == Verdict::Undetermined {
                            undetermined += 1;
                        }
                        match node.n {
                            Some(n) => n.max(half_n0),
                            None => {
                                undetermined += 1;
                                grow * parent
                            }
                        }
                    };
                }
            }
            for c in p * m..(p + 1) * m {
                gd[c] = np[c] <= parent / 2.0;
            }
        }
        n_prime.push(np);
        good.push(gd);
        lineage.push(ln);
    }

    let depth = tree.depth();
    let log_ratio = (2.0 * root_value / params.n0).log2();
    let mut mu = vec![f64::INFINITY];
    mu.extend((1..=depth).map(|j| log_ratio / j as f64));
    let mut count = vec![vec![0usize]];
    let mut frequency = vec![vec![0.0]];
    let mut survivors = vec![vec![true]];
    let mut claim_checked = 0;
    let mut claim_violations = 0;
    for j in 1..=depth {
        let n = tree.levels[j].len();
        let mut ct = vec![0usize; n];
        let mut fr = vec![0.0; n];
        let mut sv = vec![false; n];
        for i in 0..n {
            let p = i / m;
            ct[i] = count[j - 1][p] + usize::from(good[j][i]);
            fr[i] = ct[i] as f64 / j as f64;
            let threshold = alpha + mu[j];
            sv[i] = survivors[j - 1][p] && fr[i] < threshold;
            if j > 1 && fr[i] >= threshold {
                claim_checked += 1;
                if n_prime[j][i] >= half_n0 {
                    claim_violations += 1;
                }
            }
        }
        count.push(ct);
        frequency.push(fr);
        survivors.push(sv);
    }
    Ok(TreeIndexState {
        n_prime,
        good,
        frequency,
        survivors,
        mu,
        alpha,
        undetermined,
        lineage_conflicts,
        claim_checked,
        claim_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoodCount {
    /// ⌈δ₀M⌉ good children per node.
    Ceil,
    /// ⌊δ₀M⌋ good children per node.
    Floor,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimulationParams {
    pub delta0: f64,
    pub m: u64,
    /// Dimension d of the ambient space (box side M^{−1/(d−1)} per step).
    pub d: usize,
    pub depth: usize,
    pub trials: usize,
    pub seed: u64,
    pub mode: GoodCount,
    /// log₂(2N′(R)/N₀) ≥ 0, so that μ_j = this / j.
    pub root_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthRow {
    pub depth: usize,
    pub threshold: f64,
    /// Fraction of sampled paths with F_j < α + μ_j.
    pub survivors: f64,
    /// Fraction surviving at every step up to j.
    pub persistent: f64,
    pub exact_tail: f64,
    pub stirling_bound: f64,
    /// Standard error of `survivors` under the exact tail.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub params: SimulationParams,
    pub alpha: f64,
    pub good_per_node: u64,
    /// good_per_node / M, the per-step success probability.
    pub p_good: f64,
    pub rows: Vec<DepthRow>,
    /// Box-count slope of the estimated survivor counts M^j·fraction_j.
    pub fitted_dimension: Option<f64>,
    pub dimension_bound: f64,
}

impl SimulationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth,survivors,exact_tail,stirling_bound\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.depth, r.survivors, r.exact_tail, r.stirling_bound
            ));
        }
        s
    }
}

const PATH_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Good children of the node with address `(level, path)`, drawn from a
/// stream keyed by the address so that every trial sees the same tree.
fn good_children(seed: u64, level: usize, path: u64, m: u64, good: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 40) | path);
    let mut v: Vec<u64> = sample(&mut rng, m as usize, good as usize)
        .into_iter()
        .map(|c| c as u64)
        .collect();
    v.sort_unstable();
    v
}

/// Uniformly random root-to-leaf paths through an M-ary tree in which every
/// node marks a fixed number of good children.
pub fn branching_simulate(params: &SimulationParams) -> Result<SimulationReport> {
    unit_interval("delta0", params.delta0)?;
    if params.m < 2 || !params.m.is_power_of_two() {
        return Err(Error::InvalidParameter("M must be a power of two >= 2".into()));
    }
    let bits = params.m.trailing_zeros() as usize;
    if params.depth == 0 || params.depth * bits > 40 {
        return Err(Error::InvalidParameter("depth must be >= 1 with depth·log2(M) <= 40".into()));
    }
    if params.trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if !(params.root_excess >= 0.0) {
        return Err(Error::InvalidParameter("root excess must be >= 0".into()));
    }
    let alpha = alpha_from_delta0(params.delta0)?;
    let raw = params.delta0 * params.m as f64;
    let good = match params.mode {
        GoodCount::Ceil => raw.ceil() as u64,
        GoodCount::Floor => raw.floor() as u64,
    };
    let p_good = good as f64 / params.m as f64;
    let threshold = |j: usize| alpha + params.root_excess / j as f64;
    // per trial: goodness flags along the sampled path
    let paths: Vec<Vec<bool>> = (0..params.trials)
        .into_par_iter()
        .map(|t| {
            // path choice uses a seed distinct from the tree's
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(PATH_SEED_OFFSET));
            rng.set_stream(t as u64);
            let mut path = 0u64;
            let mut flags = Vec::with_capacity(params.depth);
            for level in 0..params.depth {
                let child = rng.gen_range(0..params.m);
                let goods = good_children(params.seed, level, path, params.m, good);
                flags.push(goods.binary_search(&child).is_ok());
                path = (path << bits) | child;
            }
            flags
        })
        .collect();
    let mut rows = Vec::with_capacity(params.depth);
    let mut alive = vec![true; params.trials];
    for j in 1..=params.depth {
        let beta = threshold(j);
        let mut hit = 0usize;
        for (t, flags) in paths.iter().enumerate() {
            let goods = flags[..j].iter().filter(|&&g| g).count();
            let ok = (goods as f64) < beta * j as f64;
            hit += usize::from(ok);
            alive[t] &= ok;
        }
        let persistent = alive.iter().filter(|&&a| a).count();
        let exact = binomial_tail_strict(j as u64, beta, p_good);
        let stirling = if beta > 0.0 && beta < 1.0 {
            binomial_tail_bound(j as u64, beta, p_good).map(|b| b.bound).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        rows.push(DepthRow {
            depth: j,
            threshold: beta,
            survivors: hit as f64 / params.trials as f64,
            persistent: persistent as f64 / params.trials as f64,
            exact_tail: exact,
            stirling_bound: stirling,
            sigma: (exact * (1.0 - exact) / params.trials as f64).sqrt(),
        });
    }
    // box-count fit: M^j·fraction boxes of relative side M^{−j/(d−1)}
    let lm = (params.m as f64).ln();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.survivors > 0.0)
        .map(|r| {
            let x = r.depth as f64 * lm / (params.d - 1) as f64;
            (x, r.depth as f64 * lm + r.survivors.ln())
        })
        .collect();
    let fitted_dimension = least_squares_slope(&pts);
    let dimension_bound = (params.d - 1) as f64 * (lm + rate_z(alpha, params.delta0).ln()) / lm;
    Ok(SimulationReport {
        params: *params,
        alpha,
        good_per_node: good,
        p_good,
        rows,
        fitted_dimension,
        dimension_bound,
    })
}

/// Least-squares slope of y against x; `None` with fewer than two points.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxCountReport {
    /// Box sides, as given.
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub slope: f64,
    /// Theoretical comparator, when one applies.
    pub comparator: Option<f64>,
}

/// Box-counting slope of a point set in `dim` dimensions: the least-squares
/// slope of log(count) against log(1/side) over the given sides.
pub fn box_count_dimension(points: &[[f64; 3]], dim: usize, scales: &[f64]) -> Result<BoxCountReport> {
    if scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter("box sides must be positive".into()));
    }
    let counts: Vec<usize> = scales
        .iter()
        .map(|&s| {
            points
                .iter()
                .map(|p| {
                    let mut k = [0i64; 3];
                    for i in 0..dim {
                        k[i] = (p[i] / s).floor() as i64;
                    }
                    k
                })
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect();
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| (-(s.ln()), (c as f64).ln()))
        .collect();
    let slope = least_squares_slope(&pts)
        .ok_or_else(|| Error::InvalidParameter("need at least two nonempty scales".into()))?;
    Ok(BoxCountReport {
        scales: scales.to_vec(),
        counts,
        slope,
        comparator: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn closed_form_constants() {
        assert_eq!(alpha_from_delta0(0.25).unwrap(), 0.1);
        assert_eq!(alpha_from_delta0(0.5).unwrap(), 0.25);
        assert!((alpha_from_delta0(1.0 - 1e-12).unwrap() - 1.0).abs() < 1e-11);
        assert!(alpha_from_delta0(1.5).is_err());
        assert!((eps0_from_alpha(0.5).unwrap() - 1.0).abs() < 1e-15);
        let e = eps0_from_alpha(0.1).unwrap();
        assert!((e - (2f64.powf(1.0 / 9.0) - 1.0)).abs() < 1e-12);
        // substitution back into the defining relation
        let a = (1.0 + e).ln() / ((1.0 + e).ln() + LN_2);
        assert!((a - 0.1).abs() < 1e-12);
        assert!(eps0_from_alpha(1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn rate_function_values() {
        assert!((rate_z(0.25, 0.25) - 1.0).abs() < 1e-12);
        // ln z(0.1) = 0.1 ln 2.5 + 0.9 ln(0.75/0.9)
        let oracle = (0.1 * 2.5f64.ln() + 0.9 * (0.75f64 / 0.9).ln()).exp();
        assert!((rate_z(0.1, 0.25) - oracle).abs() < 1e-15);
        assert!((rate_z(0.1, 0.25) - 0.9301).abs() < 5e-5);
        assert_eq!(rate_z(0.0, 0.25), 0.75);
        for k in 1..250 {
            assert!(rate_z(k as f64 / 1000.0, 0.25) < 1.0);
        }
    }

    #[test]
    fn exact_tails() {
        let oracle = 0.75f64.powi(10) + 10.0 * 0.25 * 0.75f64.powi(9)
            + 45.0 * 0.0625 * 0.75f64.powi(8);
        assert!((binomial_tail_exact(10, 0.2, 0.25) - oracle).abs() < 1e-14);
        assert!((binomial_tail_exact(10, 0.2, 0.25) - 0.525593).abs() < 1e-6);
        assert_eq!(binomial_tail_exact(7, 1.0, 0.3), 1.0);
        assert!((binomial_tail_exact(1, 0.5, 0.25) - 0.75).abs() < 1e-15);
        assert_eq!(tail_cutoff(10, 0.3), 3);
        // strict version drops the i = jβ term
        let strict = binomial_tail_strict(10, 0.2, 0.25);
        assert!((strict - (oracle - 45.0 * 0.0625 * 0.75f64.powi(8))).abs() < 1e-14);
        // large j stays finite and tiny
        let t = binomial_tail_exact(5000, 0.1, 0.25);
        assert!(t > 0.0 && t < 1e-50);
    }

    #[test]
    fn stirling_bound_dominates() {
        for beta in [0.05, 0.1, 0.15] {
            for j in 50..=500 {
                let b = binomial_tail_bound(j, beta, 0.25).unwrap();
                assert!(b.exact <= 4.0 * b.bound, "j {j} beta {beta}: {b:?}");
            }
        }
        let b = binomial_tail_bound(100, 0.1, 0.25).unwrap();
        assert!(b.in_regime && b.ratio <= 4.0);
        assert!(!binomial_tail_bound(100, 0.05, 0.25).unwrap().in_regime);
        assert!(binomial_tail_bound(4000, 0.1, 0.25).unwrap().bound < 1e-100);
    }

    #[test]
    fn ratio_inequality_exact() {
        for j in 1..=200 {
            for beta in [0.05, 0.1, 0.15, 0.2, 0.3, 0.45] {
                assert!(ratio_inequality_holds(j, beta), "j {j} beta {beta}");
            }
        }
    }

    #[test]
    fn dimension_bound_values() {
        let p = CombinatorialParams {
            delta0: 0.25,
            epsilon: 0.05,
            n0: 4.0,
            k: 4,
            d: 2,
        };
        let b = dimension_bound(&p).unwrap();
        assert!((b - (1.0 + rate_z(0.1, 0.25).ln() / 16f64.ln())).abs() < 1e-15);
        assert!((b - 0.9739).abs() < 1e-4);
        let mut last = 0.0;
        for k in 1..=6 {
            let b = dimension_bound(&CombinatorialParams { k, ..p }).unwrap();
            assert!(b > last && b < 1.0);
            last = b;
        }
    }

    fn flat_tree(m: usize, depth: usize, verdict: Verdict, n: f64) -> StepTree {
        StepTree {
            m,
            levels: (0..=depth)
                .map(|j| {
                    (0..m.pow(j as u32))
                        .map(|_| StepNode {
                            n: Some(n),
                            translate: verdict,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn recursion_case_a_halves_one_child() {
        let p = CombinatorialParams {
            delta0: 0.5,
            epsilon: 0.1,
            n0: 4.0,
            k: 1,
            d: 2,
        };
        let state = modified_index_recursion(&flat_tree(2, 2, Verdict::Positive, 1.0), &p).unwrap();
        assert_eq!(state.n_prime[0][0], 2.0);
        assert!(state.mu[1..].iter().all(|&m| m == 0.0));
        for j in 1..=2 {
            for pair in state.good[j].chunks(2) {
                assert_eq!(pair.iter().filter(|&&g| g).count(), 1);
            }
        }
        assert_eq!(state.n_prime[1], vec![1.0, 2.0 * 1.1]);
    }

    #[test]
    fn recursion_case_b() {
        let p = CombinatorialParams {
            delta0: 0.25,
            epsilon: 0.05,
            n0: 4.0,
            k: 1,
            d: 3,
        };
        let mut tree = flat_tree(4, 1, Verdict::SignChanging, 10.0);
        tree.levels[1][1].translate = Verdict::Negative;
        tree.levels[1][2].n = Some(1.0);
        tree.levels[1][3].n = None;
        let s = modified_index_recursion(&tree, &p).unwrap();
        assert_eq!(s.n_prime[1], vec![10.0, 5.0, 2.0, 10.0 * 1.05]);
        assert_eq!(s.good[1], vec![false, true, true, false]);
        assert_eq!(s.undetermined, 1);
    }

    #[test]
    fn claim_holds_on_random_trees() {
        // values drawn so that case (b2) never exceeds (1+ε)N′(parent)
        let p = CombinatorialParams {
            delta0: 0.25,
            epsilon: 0.05,
            n0: 4.0,
            k: 1,
            d: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let depth = 6;
        let mut levels = vec![vec![StepNode {
            n: Some(6.0),
            translate: Verdict::SignChanging,
        }]];
        for j in 1..=depth {
            levels.push(
                (0..4usize.pow(j as u32))
                    .map(|_| {
                        let definite = rng.gen_bool(0.3);
                        StepNode {
                            n: Some(rng.gen_range(0.5..2.0)),
                            translate: if definite { Verdict::Positive } else { Verdict::SignChanging },
                        }
                    })
                    .collect(),
            );
        }
        let s = modified_index_recursion(&StepTree { m: 4, levels }, &p).unwrap();
        assert!(s.claim_checked > 0);
        assert_eq!(s.claim_violations, 0);
    }

    #[test]
    fn simulation_matches_binomial() {
        let params = SimulationParams {
            delta0: 0.25,
            m: 16,
            d: 2,
            depth: 8,
            trials: 1000,
            seed: 7,
            mode: GoodCount::Ceil,
            root_excess: 0.0,
        };
        let rep = branching_simulate(&params).unwrap();
        for r in &rep.rows {
            assert!((r.survivors - r.exact_tail).abs() <= 3.0 * r.sigma + 1e-12, "{r:?}");
        }
        assert!(rep.fitted_dimension.unwrap() <= rep.dimension_bound + 0.05);
        let again = branching_simulate(&params).unwrap();
        assert_eq!(rep.to_csv(), again.to_csv());
        let all = branching_simulate(&SimulationParams {
            delta0: 0.99,
            ..params
        })
        .unwrap();
        assert!(all.rows.iter().all(|r| r.survivors == 0.0));
    }

    #[test]
    fn box_counts_of_reference_sets() {
        let point = [[0.3, 0.0, 0.0]];
        let scales: Vec<f64> = (1..=10).map(|k| 2f64.powi(-k)).collect();
        assert_eq!(box_count_dimension(&point, 1, &scales).unwrap().slope, 0.0);
        let full: Vec<[f64; 3]> = (0..1024).map(|i| [(i as f64 + 0.5) / 1024.0, 0.0, 0.0]).collect();
        assert!((box_count_dimension(&full, 1, &scales).unwrap().slope - 1.0).abs() < 1e-12);
        let mut cantor = vec![0.0f64];
        for k in 1..=10 {
            let s = 3f64.powi(-k);
            cantor = cantor.iter().flat_map(|&a| [a, a + 2.0 * s]).collect();
        }
        let side = 3f64.powi(-10);
        let pts: Vec<[f64; 3]> = cantor.iter().map(|&a| [a + side / 2.0, 0.0, 0.0]).collect();
        let tern: Vec<f64> = (1..=10).map(|k| 3f64.powi(-k)).collect();
        let rep = box_count_dimension(&pts, 1, &tern).unwrap();
        assert!((rep.slope - 2f64.ln() / 3f64.ln()).abs() < 0.02);
        assert!(rep.counts.windows(2).all(|w| w[0] <= w[1]));
        assert!(box_count_dimension(&point, 1, &[0.5]).is_err());
    }

    proptest! {
        #[test]
        fn alpha_satisfies_defining_relation(delta0 in 1e-3f64..0.999) {
            let a = alpha_from_delta0(delta0).unwrap();
            let lhs = delta0 / (1.0 - delta0) * (1.0 - a) / a;
            prop_assert!((lhs - 3.0).abs() < 1e-12);
            prop_assert!(a < delta0);
        }

        #[test]
        fn contraction_below_eps0(delta0 in 0.01f64..0.99, t in 0.0f64..1.0) {
            let a = alpha_from_delta0(delta0).unwrap();
            let e0 = eps0_from_alpha(a).unwrap();
            let eps = t * e0 * (1.0 - 1e-9);
            prop_assert!(0.5f64.powf(a) * (1.0 + eps).powf(1.0 - a) < 1.0);
        }

        #[test]
        fn tail_monotone(j in 1u64..300, b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, d1 in 0.01f64..0.99, d2 in 0.01f64..0.99) {
            let (blo, bhi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            let (dlo, dhi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(binomial_tail_exact(j, blo, dlo) <= binomial_tail_exact(j, bhi, dlo) * (1.0 + 1e-12));
            prop_assert!(binomial_tail_exact(j, blo, dhi) <= binomial_tail_exact(j, blo, dlo) * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn bound_strictly_below_codimension(delta0 in 0.01f64..0.99, k in 1usize..8, d in 2usize..4) {
            let p = CombinatorialParams { delta0, epsilon: 1e-6, n0: 2.0, k, d };
            prop_assert!(dimension_bound(&p).unwrap() < (d - 1) as f64);
        }
    }
}
