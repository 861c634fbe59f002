//! Multiple-choice knapsack over coupon patterns: pick `k_s` for every
//! provider to maximize `sum_s deltas_s[k_s]` subject to `sum_s k_s = N`
//! (or `<= N`).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{AllocError, BudgetMode, BudgetSpec, SolverChoice, BRUTE_FORCE_MAX_ITEMS};
use crate::ser::PatternCurve;

/// Tables up to this many cells are solved by the plain provider-by-budget
/// program; above it, concave curves are first merged into one.
const PLAIN_DP_CELLS: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MckpSolution {
    /// Coupons per curve, aligned with the input curves.
    pub counts: Vec<usize>,
    /// `sum_s deltas_s[counts[s]]`, summed in curve order.
    pub objective: f64,
}

impl MckpSolution {
    fn from_counts(curves: &[PatternCurve], counts: Vec<usize>) -> Self {
        let objective = curves
            .iter()
            .zip(&counts)
            .fold(0.0, |acc, (c, &k)| acc + c.deltas[k]);
        Self { counts, objective }
    }

    pub fn total_coupons(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn solve_mckp(
    curves: &[PatternCurve],
    budget: BudgetSpec,
    solver: SolverChoice,
) -> Result<MckpSolution, AllocError> {
    let available: usize = curves.iter().map(PatternCurve::max_coupons).sum();
    if budget.mode == BudgetMode::Exact && budget.n_coupons > available {
        return Err(AllocError::InfeasibleBudget {
            needed: budget.n_coupons,
            available,
        });
    }
    let counts = match solver {
        SolverChoice::DpExact => dp_exact(curves, budget, available),
        SolverChoice::GreedyMarginal => greedy_marginal(curves, budget),
        SolverChoice::BruteForce => {
            if available > BRUTE_FORCE_MAX_ITEMS {
                return Err(AllocError::BruteForceTooLarge { items: available });
            }
            brute_force(curves, budget)
        }
    };
    Ok(MckpSolution::from_counts(curves, counts))
}

fn dp_exact(curves: &[PatternCurve], budget: BudgetSpec, available: usize) -> Vec<usize> {
    let cap = budget.n_coupons.min(available);
    if curves.len().saturating_mul(cap + 1) <= PLAIN_DP_CELLS {
        let all: Vec<usize> = (0..curves.len()).collect();
        let table = DpTable::build(curves, &all, cap);
        let target = match budget.mode {
            BudgetMode::Exact => cap,
            BudgetMode::AtMost => table.best_total_upto(cap).0,
        };
        let mut counts = vec![0; curves.len()];
        table.backtrack(target, &mut counts);
        counts
    } else {
        dp_with_concave_merge(curves, budget, cap)
    }
}

/// Value of the best allocation for every total budget, with backpointers.
struct DpTable {
    members: Vec<usize>,
    value: Vec<f64>,
    choice: Vec<Vec<u16>>,
}

impl DpTable {
    fn build(curves: &[PatternCurve], members: &[usize], cap: usize) -> Self {
        let mut value = vec![f64::NEG_INFINITY; cap + 1];
        value[0] = 0.0;
        let mut next = vec![f64::NEG_INFINITY; cap + 1];
        let mut choice = Vec::with_capacity(members.len());
        for &s in members {
            let deltas = &curves[s].deltas;
            assert!(
                deltas.len() <= u16::MAX as usize,
                "curve too long for the DP"
            );
            let mut pick = vec![0u16; cap + 1];
            next.fill(f64::NEG_INFINITY);
            for (k, &d) in deltas.iter().enumerate().take(cap + 1) {
                for b in k..=cap {
                    let v = value[b - k] + d;
                    if v > next[b] {
                        next[b] = v;
                        pick[b] = k as u16;
                    }
                }
            }
            std::mem::swap(&mut value, &mut next);
            choice.push(pick);
        }
        Self {
            members: members.to_vec(),
            value,
            choice,
        }
    }

    /// Smallest total `t <= limit` attaining the best value.
    fn best_total_upto(&self, limit: usize) -> (usize, f64) {
        let mut best = (0, self.value[0]);
        for (t, &v) in self.value.iter().enumerate().take(limit + 1) {
            if v > best.1 {
                best = (t, v);
            }
        }
        best
    }

    fn backtrack(&self, mut total: usize, counts: &mut [usize]) {
        for (idx, &s) in self.members.iter().enumerate().rev() {
            let k = self.choice[idx][total] as usize;
            counts[s] = k;
            total -= k;
        }
        debug_assert_eq!(total, 0);
    }
}

#[derive(Clone, Copy)]
struct Gain {
    value: f64,
    curve: usize,
}

impl PartialEq for Gain {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Gain {}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gain {
    // Larger gain first; among equal gains the lower curve index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(Reverse(self.curve).cmp(&Reverse(other.curve)))
    }
}

fn greedy_marginal(curves: &[PatternCurve], budget: BudgetSpec) -> Vec<usize> {
    let mut counts = vec![0; curves.len()];
    let mut heap: BinaryHeap<Gain> = curves
        .iter()
        .enumerate()
        .filter(|(_, c)| c.max_coupons() > 0)
        .map(|(s, c)| Gain {
            value: c.marginal(0),
            curve: s,
        })
        .collect();
    let mut placed = 0;
    while placed < budget.n_coupons {
        let Some(top) = heap.pop() else { break };
        if budget.mode == BudgetMode::AtMost && top.value <= 0.0 {
            break;
        }
        let s = top.curve;
        counts[s] += 1;
        placed += 1;
        if counts[s] < curves[s].max_coupons() {
            heap.push(Gain {
                value: curves[s].marginal(counts[s]),
                curve: s,
            });
        }
    }
    counts
}

fn brute_force(curves: &[PatternCurve], budget: BudgetSpec) -> Vec<usize> {
    let mut counts = vec![0; curves.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let used: usize = counts.iter().sum();
        if budget.admits(used) {
            let value = curves
                .iter()
                .zip(&counts)
                .fold(0.0, |acc, (c, &k)| acc + c.deltas[k]);
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, counts.clone()));
            }
        }
        // Mixed-radix increment.
        let mut s = 0;
        loop {
            if s == curves.len() {
                return best
                    .map(|(_, c)| c)
                    .unwrap_or_else(|| vec![0; curves.len()]);
            }
            if counts[s] < curves[s].max_coupons() {
                counts[s] += 1;
                break;
            }
            counts[s] = 0;
            s += 1;
        }
    }
}

/// Exact solve for large instances.
///
/// For a set of concave curves, the best value at total budget `b` is the sum
/// of the `b` largest marginals across them, taken in sorted order. Those
/// curves collapse into one merged curve; the remaining non-concave curves go
/// through the plain table, and the two are combined by scanning the split.
fn dp_with_concave_merge(curves: &[PatternCurve], budget: BudgetSpec, cap: usize) -> Vec<usize> {
    let (concave, other): (Vec<usize>, Vec<usize>) =
        (0..curves.len()).partition(|&s| curves[s].is_concave());

    let mut gains: Vec<(f64, usize, usize)> = concave
        .iter()
        .flat_map(|&s| (0..curves[s].max_coupons()).map(move |k| (curves[s].marginal(k), s, k)))
        .collect();
    gains.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let merged_len = gains.len().min(cap);
    let mut merged = Vec::with_capacity(merged_len + 1);
    merged.push(0.0);
    for g in &gains[..merged_len] {
        merged.push(merged.last().unwrap() + g.0);
    }

    let other_cap = other
        .iter()
        .map(|&s| curves[s].max_coupons())
        .sum::<usize>()
        .min(cap);
    let table = DpTable::build(curves, &other, other_cap);

    // Best non-concave total at most r, for the at-most budget.
    let mut best_upto = Vec::with_capacity(other_cap + 1);
    let mut running = (0usize, table.value[0]);
    for (r, &v) in table.value.iter().enumerate() {
        if v > running.1 {
            running = (r, v);
        }
        best_upto.push(running);
    }

    let mut best: Option<(f64, usize, usize)> = None;
    for (b, &g) in merged.iter().enumerate() {
        let rest = cap - b;
        let (r, v) = match budget.mode {
            BudgetMode::Exact => {
                if rest > other_cap {
                    continue;
                }
                (rest, table.value[rest])
            }
            BudgetMode::AtMost => best_upto[rest.min(other_cap)],
        };
        let total = g + v;
        if best.is_none_or(|(t, _, _)| total > t) {
            best = Some((total, b, r));
        }
    }
    let (_, take, rest) = best.expect("exact budget was checked to be feasible");

    let mut counts = vec![0; curves.len()];
    for &(_, s, _) in &gains[..take] {
        counts[s] += 1;
    }
    table.backtrack(rest, &mut counts);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ItemId, ProviderId};

    fn raw_curve(deltas: &[f64]) -> PatternCurve {
        let k = deltas.len() - 1;
        PatternCurve {
            provider_id: ProviderId(0),
            item_order: (0..k as u64).map(ItemId).collect(),
            item_uplift: vec![0.1; k],
            deltas: deltas.to_vec(),
        }
    }

    /// Deterministic pseudo-random curves, some concave, some not.
    fn curve_family(n: usize, seed: u64) -> Vec<PatternCurve> {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n)
            .map(|_| {
                let k = (next() * 6.0) as usize;
                let mut d = vec![0.0];
                for _ in 0..k {
                    let step = if next() < 0.3 {
                        next() * 0.5
                    } else {
                        next() * 0.1
                    };
                    d.push(d.last().unwrap() + step);
                }
                raw_curve(&d)
            })
            .collect()
    }

    #[test]
    fn merged_solve_matches_plain_table() {
        for seed in 0..40 {
            let curves = curve_family(30, seed);
            let available: usize = curves.iter().map(|c| c.max_coupons()).sum();
            for n in [0, 1, 5, available / 2, available] {
                for budget in [BudgetSpec::exact(n), BudgetSpec::at_most(n)] {
                    let all: Vec<usize> = (0..curves.len()).collect();
                    let cap = n.min(available);
                    let table = DpTable::build(&curves, &all, cap);
                    let target = match budget.mode {
                        BudgetMode::Exact => cap,
                        BudgetMode::AtMost => table.best_total_upto(cap).0,
                    };
                    let mut plain = vec![0; curves.len()];
                    table.backtrack(target, &mut plain);
                    let plain = MckpSolution::from_counts(&curves, plain);
                    let merged = MckpSolution::from_counts(
                        &curves,
                        dp_with_concave_merge(&curves, budget, cap),
                    );
                    assert!(
                        (plain.objective - merged.objective).abs() < 1e-12,
                        "seed {seed} n {n}: {} vs {}",
                        plain.objective,
                        merged.objective
                    );
                    assert!(budget.admits(merged.total_coupons()));
                }
            }
        }
    }

    #[test]
    fn greedy_can_miss_non_concave_optimum() {
        // Second coupon on curve 0 is worth much more than the first.
        let curves = vec![raw_curve(&[0.0, 0.1, 0.9]), raw_curve(&[0.0, 0.2])];
        let dp = solve_mckp(&curves, BudgetSpec::exact(2), SolverChoice::DpExact).unwrap();
        let greedy =
            solve_mckp(&curves, BudgetSpec::exact(2), SolverChoice::GreedyMarginal).unwrap();
        assert_eq!(dp.counts, vec![2, 0]);
        assert!((dp.objective - 0.9).abs() < 1e-15);
        assert!(greedy.objective < dp.objective);
    }

    #[test]
    fn at_most_stops_on_non_positive_gain() {
        let curves = vec![raw_curve(&[0.0, 0.3, 0.2]), raw_curve(&[0.0, -0.1])];
        for solver in [
            SolverChoice::DpExact,
            SolverChoice::GreedyMarginal,
            SolverChoice::BruteForce,
        ] {
            let s = solve_mckp(&curves, BudgetSpec::at_most(3), solver).unwrap();
            assert_eq!(s.counts, vec![1, 0], "{solver:?}");
        }
        let exact = solve_mckp(&curves, BudgetSpec::exact(3), SolverChoice::DpExact).unwrap();
        assert_eq!(exact.counts, vec![2, 1]);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let curves: Vec<_> = (0..7).map(|_| raw_curve(&[0.0, 0.1, 0.2, 0.3])).collect();
        let err = solve_mckp(&curves, BudgetSpec::exact(2), SolverChoice::BruteForce).unwrap_err();
        assert!(matches!(err, AllocError::BruteForceTooLarge { items: 21 }));
    }
}
