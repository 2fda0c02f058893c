//! Square-root-proportional dataset mixing.
//!
//! Dataset `d` with `N_d` records is drawn with probability
//! `p_d = sqrt(N_d) / sum_i sqrt(N_i)`. Within a dataset, records are served
//! from a seeded Fisher-Yates shuffle that is redrawn each time the dataset is
//! exhausted.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::{substream, Rng as StreamRng};

/// Draws are stratified over blocks of this many samples.
const STRATUM_BLOCK: u64 = 1 << 16;

/// Sampling probabilities proportional to the square root of each count.
pub fn compute_weights(counts: &[u64]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyPlan);
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCount(i));
    }
    let roots: Vec<f64> = counts.iter().map(|&c| (c as f64).sqrt()).collect();
    let total = kahan_sum(&roots);
    Ok(roots.into_iter().map(|r| r / total).collect())
}

fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// `round(total * fraction)`, at least 1.
pub fn budget_from_fraction(total: u64, fraction: f64) -> u64 {
    ((total as f64 * fraction).round() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixEntry {
    pub name: String,
    pub count: u64,
    pub no_exemplars: bool,
    pub n_shots: u32,
}

/// Resolved dataset weights, budget and seed for one build.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixPlan {
    pub datasets: Vec<MixEntry>,
    pub probabilities: Vec<f64>,
    pub budget: u64,
    pub seed: u64,
}

impl MixPlan {
    pub fn new(datasets: Vec<MixEntry>, budget: u64, seed: u64) -> Result<Self> {
        let counts: Vec<u64> = datasets.iter().map(|d| d.count).collect();
        let probabilities = compute_weights(&counts)?;
        Ok(MixPlan {
            datasets,
            probabilities,
            budget: budget.max(1),
            seed,
        })
    }

    /// `round(p_d * budget)` per dataset.
    pub fn expected_counts(&self) -> Vec<u64> {
        self.probabilities
            .iter()
            .map(|p| (p * self.budget as f64).round() as u64)
            .collect()
    }
}

/// One sampled item: dataset position, record position within the dataset,
/// and which pass over the dataset it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Draw {
    pub dataset: usize,
    pub record: usize,
    pub cycle: u64,
}

/// The draw sequence for `plan`. Exactly `plan.budget` items.
pub fn sample_stream(plan: &MixPlan) -> MixStream<'_> {
    let mut cumulative = Vec::with_capacity(plan.probabilities.len());
    let mut acc = 0.0;
    for p in &plan.probabilities {
        acc += p;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    MixStream {
        plan,
        cumulative,
        rng: substream(plan.seed, &[b"mix"]),
        emitted: 0,
        block: Vec::new(),
        block_pos: 0,
        shuffles: plan
            .datasets
            .iter()
            .map(|d| CyclingShuffle::new(plan.seed, &d.name, d.count as usize))
            .collect(),
    }
}

/// Resolves draws to `(dataset name, record)` pairs over in-memory datasets.
pub fn sample_records<'a, T>(
    plan: &'a MixPlan,
    datasets: &'a [Vec<T>],
) -> impl Iterator<Item = (&'a str, &'a T)> + 'a {
    sample_stream(plan).map(move |d| (plan.datasets[d.dataset].name.as_str(), &datasets[d.dataset][d.record]))
}

/// Iterator over the draws of one plan.
///
/// Dataset choice is inverse-CDF over the cumulative probabilities. The
/// uniforms are stratified within blocks: in a block of `B` draws, draw `t`
/// uses `(pi(t) + U_t) / B` for a random permutation `pi`, so each draw is
/// marginally categorical over `p_d` while block frequencies track `p_d`
/// closely.
pub struct MixStream<'a> {
    plan: &'a MixPlan,
    cumulative: Vec<f64>,
    rng: StreamRng,
    emitted: u64,
    block: Vec<u32>,
    block_pos: usize,
    shuffles: Vec<CyclingShuffle>,
}

impl MixStream<'_> {
    fn next_uniform(&mut self) -> f64 {
        if self.block_pos == self.block.len() {
            let remaining = self.plan.budget - self.emitted;
            let len = remaining.min(STRATUM_BLOCK) as u32;
            self.block.clear();
            self.block.extend(0..len);
            self.block.shuffle(&mut self.rng);
            self.block_pos = 0;
        }
        let stratum = self.block[self.block_pos] as f64;
        self.block_pos += 1;
        let jitter: f64 = self.rng.gen();
        (stratum + jitter) / self.block.len() as f64
    }
}

impl Iterator for MixStream<'_> {
    type Item = Draw;

    fn next(&mut self) -> Option<Draw> {
        if self.emitted >= self.plan.budget {
            return None;
        }
        let u = self.next_uniform();
        let dataset = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        self.emitted += 1;
        let (record, cycle) = self.shuffles[dataset].next();
        Some(Draw {
            dataset,
            record,
            cycle,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.plan.budget - self.emitted) as usize;
        (left, Some(left))
    }
}

/// Endless shuffled passes over `0..len`, one seeded permutation per pass.
struct CyclingShuffle {
    seed: u64,
    name: String,
    cycle: Option<u64>,
    pos: usize,
    order: Vec<u32>,
}

impl CyclingShuffle {
    fn new(seed: u64, name: &str, len: usize) -> Self {
        CyclingShuffle {
            seed,
            name: name.to_string(),
            cycle: None,
            pos: 0,
            order: vec![0; len],
        }
    }

    fn next(&mut self) -> (usize, u64) {
        let cycle = match self.cycle {
            Some(c) if self.pos < self.order.len() => c,
            Some(c) => self.reshuffle(c + 1),
            None => self.reshuffle(0),
        };
        let r = self.order[self.pos] as usize;
        self.pos += 1;
        (r, cycle)
    }

    fn reshuffle(&mut self, cycle: u64) -> u64 {
        let mut rng = substream(self.seed, &[b"shuffle", self.name.as_bytes(), &cycle.to_le_bytes()]);
        for (i, v) in self.order.iter_mut().enumerate() {
            *v = i as u32;
        }
        self.order.shuffle(&mut rng);
        self.pos = 0;
        self.cycle = Some(cycle);
        cycle
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(counts: &[u64], budget: u64, seed: u64) -> MixPlan {
        let entries = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| MixEntry {
                name: format!("d{i}"),
                count: c,
                no_exemplars: false,
                n_shots: 0,
            })
            .collect();
        MixPlan::new(entries, budget, seed).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn weights_examples() {
        assert!(close(&compute_weights(&[1, 1, 1, 1]).unwrap(), &[0.25; 4]));
        assert!(close(&compute_weights(&[4, 1]).unwrap(), &[2.0 / 3.0, 1.0 / 3.0]));
        assert!(close(
            &compute_weights(&[9, 16, 25]).unwrap(),
            &[3.0 / 12.0, 4.0 / 12.0, 5.0 / 12.0]
        ));
    }

    #[test]
    fn weights_errors() {
        assert!(matches!(compute_weights(&[]), Err(Error::EmptyPlan)));
        assert!(matches!(compute_weights(&[3, 0]), Err(Error::ZeroCount(1))));
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget_from_fraction(5_800_000, 0.10), 580_000);
        assert_eq!(budget_from_fraction(10, 1.0), 10);
        assert_eq!(budget_from_fraction(3, 0.1), 1);
    }

    #[test]
    fn stream_emits_budget() {
        assert_eq!(sample_stream(&plan(&[4, 1], 1, 3)).count(), 1);
        assert_eq!(sample_stream(&plan(&[4, 1], 70_000, 3)).count(), 70_000);
    }

    #[test]
    fn two_dataset_frequencies() {
        let p = plan(&[4, 1], 60_000, 11);
        let mut counts = [0f64; 2];
        for d in sample_stream(&p) {
            counts[d.dataset] += 1.0;
        }
        let l1 = (counts[0] / 60_000.0 - 2.0 / 3.0).abs() + (counts[1] / 60_000.0 - 1.0 / 3.0).abs();
        assert!(l1 < 0.01, "{counts:?}");
    }

    #[test]
    fn single_dataset_is_a_permutation_per_cycle() {
        let p = plan(&[50], 150, 2);
        let draws: Vec<Draw> = sample_stream(&p).collect();
        for cycle in 0..3u64 {
            let mut seen: Vec<usize> = draws
                .iter()
                .filter(|d| d.cycle == cycle)
                .map(|d| d.record)
                .collect();
            assert_eq!(seen.len(), 50);
            let first_pass = seen.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..50).collect::<Vec<_>>());
            assert_ne!(first_pass, (0..50).collect::<Vec<_>>(), "pass {cycle} left unshuffled");
        }
        let pass = |c: u64| draws.iter().filter(|d| d.cycle == c).map(|d| d.record).collect::<Vec<_>>();
        assert_ne!(pass(0), pass(1));
    }

    #[test]
    fn stream_is_deterministic() {
        let a: Vec<Draw> = sample_stream(&plan(&[7, 30, 2], 500, 9)).collect();
        let b: Vec<Draw> = sample_stream(&plan(&[7, 30, 2], 500, 9)).collect();
        let c: Vec<Draw> = sample_stream(&plan(&[7, 30, 2], 500, 10)).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn records_resolve() {
        let data = vec![vec!["a0", "a1"], vec!["b0"]];
        let p = plan(&[2, 1], 10, 1);
        let items: Vec<(&str, &&str)> = sample_records(&p, &data).collect();
        assert_eq!(items.len(), 10);
        for (name, record) in items {
            let prefix = if name == "d0" { "a" } else { "b" };
            assert!(record.starts_with(prefix), "{name} {record}");
        }
    }
}
