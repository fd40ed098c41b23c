//! Reference-trial outcome frequencies against exhaustively enumerated probabilities.

use std::collections::HashMap;
use std::sync::Arc;

use coxhoa::linalg::Matrix;
use coxhoa::refcensor::{simulate_reference_trial, ReferenceCensoringPlan, RngStream, StratumPlan};
use coxhoa::LogLinear;

type Outcome = (Vec<usize>, Vec<usize>, Vec<Vec<usize>>);

fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = Vec::new();
    for mut s in subsets(&items[1..], k - 1) {
        s.insert(0, items[0]);
        out.push(s);
    }
    out.extend(subsets(&items[1..], k));
    out
}

fn enumerate(risk: Vec<f64>, config: &[usize]) -> HashMap<Outcome, f64> {
    fn rec(
        rr: &[f64],
        alive: Vec<usize>,
        config: &[usize],
        stage: usize,
        acc: Outcome,
        prob: f64,
        out: &mut HashMap<Outcome, f64>,
    ) {
        if stage == config.len() {
            out.insert(acc, prob);
            return;
        }
        let total: f64 = alive.iter().map(|&i| rr[i]).sum();
        for &f in &alive {
            let rest: Vec<usize> = alive.iter().copied().filter(|&i| i != f).collect();
            let pf = rr[f] / total;
            let c = config[stage];
            for cens in subsets(&rest, c) {
                let left: Vec<usize> = rest.iter().copied().filter(|i| !cens.contains(i)).collect();
                let mut next = acc.clone();
                next.1.push(f);
                next.2.push(cens);
                rec(rr, left, config, stage + 1, next, prob * pf / choose(rest.len(), c), out);
            }
        }
    }
    let n = risk.len();
    let all: Vec<usize> = (0..n).collect();
    let mut out = HashMap::new();
    for early in subsets(&all, config[0]) {
        let alive: Vec<usize> = all.iter().copied().filter(|i| !early.contains(i)).collect();
        rec(&risk, alive, config, 1, (early, vec![], vec![]), 1.0 / choose(n, config[0]), &mut out);
    }
    out
}

#[test]
fn outcome_frequencies_match_enumeration() {
    let z = [0.9, -0.4, 0.0, 1.3, -1.1];
    let theta = 0.6f64;
    let config = vec![1, 1, 0, 0];
    let exact = enumerate(z.iter().map(|v| (theta * v).exp()).collect(), &config);
    let total: f64 = exact.values().sum();
    assert!((total - 1.0).abs() < 1e-12);

    let covs = Arc::new(Matrix::from_row_major(5, 1, z.to_vec()));
    let plan = ReferenceCensoringPlan {
        strata: vec![StratumPlan {
            label: 0,
            cohort: (0..5).collect(),
            config: config.clone(),
        }],
    };
    let trials = 100_000u64;
    let mut counts: HashMap<Outcome, usize> = HashMap::new();
    for t in 0..trials {
        let r = simulate_reference_trial(&[theta], &covs, &plan, &LogLinear, RngStream::new(2024, t)).unwrap();
        let s = &r.strata()[0];
        let mut early = s.early_censored.clone();
        early.sort_unstable();
        let fails = s.failure_order();
        let groups = (0..s.m())
            .map(|i| {
                let end = if i + 1 < s.m() { s.failure_pos[i + 1] } else { s.exit_order.len() };
                let mut g = s.exit_order[s.failure_pos[i] + 1..end].to_vec();
                g.sort_unstable();
                g
            })
            .collect();
        *counts.entry((early, fails, groups)).or_default() += 1;
    }
    for k in counts.keys() {
        assert!(exact.contains_key(k), "impossible outcome {k:?}");
    }
    for (k, &p) in &exact {
        let f = *counts.get(k).unwrap_or(&0) as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        // 3 SE per outcome, with a small allowance for the number of outcomes compared
        assert!((f - p).abs() < 3.0 * se + 1e-4, "{k:?}: {f} vs {p}");
    }
}

#[test]
fn score_variance_matches_enumeration_at_null() {
    use coxhoa::hoa::estimate_covariances;
    use coxhoa::partial_lik::score;
    use coxhoa::survdata::{RankData, StratumRanks};

    // two covariates, θ = 0: every admissible outcome is a uniform draw
    let z = vec![0.9, 0.2, -0.4, 1.0, 0.0, -0.7, 1.3, 0.4, -1.1, -0.3];
    let covs = Arc::new(Matrix::from_row_major(5, 2, z));
    let config = vec![1, 1, 0, 0];
    let exact = enumerate(vec![1.0; 5], &config);
    let mut var = [[0.0; 2]; 2];
    let mut reference = None;
    for ((early, fails, groups), prob) in &exact {
        let s = StratumRanks::from_sequence(0, early.clone(), fails, groups);
        let rank = RankData::from_parts(vec![s], covs.clone()).unwrap();
        let u = score(&rank, &LogLinear, &[0.0, 0.0]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                var[a][b] += prob * u[a] * u[b];
            }
        }
        reference.get_or_insert(rank);
    }
    let rank = reference.unwrap();
    let cov = estimate_covariances(&rank, &LogLinear, &[0.0, 0.0], &[0.0, 0.0], 50_000, 77).unwrap();
    for a in 0..2 {
        for b in 0..2 {
            let (est, se) = (cov.i_hat[(a, b)], cov.mc_se.i_hat[(a, b)]);
            assert!((est - var[a][b]).abs() < 3.0 * se, "({a},{b}): {est} vs {} (se {se})", var[a][b]);
        }
    }
}
