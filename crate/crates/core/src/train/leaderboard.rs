use rand::{Rng, RngCore};
use serde::Serialize;

/// Head-to-head record of one controller against one disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchRecord {
    /// Episodes in which the controller stayed safe.
    pub safe: usize,
    pub played: usize,
}

impl MatchRecord {
    pub fn success_rate(&self) -> f64 {
        if self.played == 0 {
            0.0
        } else {
            self.safe as f64 / self.played as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry<P> {
    pub id: usize,
    pub policy: P,
}

/// Finite archives of past controllers and disturbances with their
/// pairwise records.
#[derive(Debug, Clone)]
pub struct Leaderboard<U, D> {
    pub controls: Vec<Entry<U>>,
    pub disturbances: Vec<Entry<D>>,
    /// `records[i][j]`: controller `i` against disturbance `j`.
    pub records: Vec<Vec<MatchRecord>>,
    pub capacity_controls: usize,
    pub capacity_disturbances: usize,
    pub temperature: f64,
    next_id: usize,
}

/// Serializable view of the leaderboard state.
#[derive(Debug, Clone, Serialize)]
pub struct LeaderboardSnapshot {
    pub control_ids: Vec<usize>,
    pub disturbance_ids: Vec<usize>,
    pub win_rates: Vec<Vec<f64>>,
    pub records: Vec<Vec<MatchRecord>>,
    pub disturbance_scores: Vec<f64>,
    pub sampling: Vec<f64>,
}

impl<U: Clone, D: Clone> Leaderboard<U, D> {
    pub fn new(capacity_controls: usize, capacity_disturbances: usize, temperature: f64) -> Self {
        assert!(capacity_controls > 0 && capacity_disturbances > 0);
        Self {
            controls: Vec::new(),
            disturbances: Vec::new(),
            records: Vec::new(),
            capacity_controls,
            capacity_disturbances,
            temperature,
            next_id: 0,
        }
    }

    /// Controller `i`'s safety-success rate against every disturbance.
    pub fn win_rate(&self, i: usize, j: usize) -> f64 {
        self.records[i][j].success_rate()
    }

    fn control_score(&self, i: usize) -> f64 {
        mean((0..self.disturbances.len()).map(|j| self.win_rate(i, j)))
    }

    /// `m_j`: mean failure-induction rate of disturbance `j`.
    pub fn disturbance_scores(&self) -> Vec<f64> {
        (0..self.disturbances.len())
            .map(|j| mean((0..self.controls.len()).map(|i| 1.0 - self.win_rate(i, j))))
            .collect()
    }

    /// `softmax(m / temperature)` over the disturbance archive.
    pub fn sampling_distribution(&self) -> Vec<f64> {
        let m = self.disturbance_scores();
        if m.is_empty() {
            return m;
        }
        let top = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = m.iter().map(|v| ((v - top) / self.temperature).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    pub fn sample_disturbance(&self, rng: &mut dyn RngCore) -> Option<&D> {
        let p = self.sampling_distribution();
        if p.is_empty() {
            return None;
        }
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if r < acc {
                return Some(&self.disturbances[j].policy);
            }
        }
        Some(&self.disturbances.last().unwrap().policy)
    }

    /// Adds the current pair, plays `play(u, d)` for every new pairing,
    /// then drops the worst entries beyond capacity.
    pub fn tournament_update<F>(&mut self, control: U, disturbance: D, play: F)
    where
        F: Fn(&U, &D) -> MatchRecord + Sync,
        U: Sync,
        D: Sync,
    {
        self.controls.push(Entry {
            id: self.next_id,
            policy: control,
        });
        self.disturbances.push(Entry {
            id: self.next_id + 1,
            policy: disturbance,
        });
        self.next_id += 2;
        let nu = self.controls.len();
        let nd = self.disturbances.len();
        for row in &mut self.records {
            row.push(MatchRecord::default());
        }
        self.records.push(vec![MatchRecord::default(); nd]);
        for i in 0..nu {
            for j in 0..nd {
                if i == nu - 1 || j == nd - 1 {
                    self.records[i][j] = play(&self.controls[i].policy, &self.disturbances[j].policy);
                }
            }
        }
        while self.controls.len() > self.capacity_controls {
            let worst = argmin_oldest(&(0..self.controls.len()).map(|i| self.control_score(i)).collect::<Vec<_>>());
            self.controls.remove(worst);
            self.records.remove(worst);
        }
        while self.disturbances.len() > self.capacity_disturbances {
            let worst = argmin_oldest(&self.disturbance_scores());
            self.disturbances.remove(worst);
            for row in &mut self.records {
                row.remove(worst);
            }
        }
    }

    pub fn snapshot(&self) -> LeaderboardSnapshot {
        LeaderboardSnapshot {
            control_ids: self.controls.iter().map(|e| e.id).collect(),
            disturbance_ids: self.disturbances.iter().map(|e| e.id).collect(),
            win_rates: (0..self.controls.len())
                .map(|i| (0..self.disturbances.len()).map(|j| self.win_rate(i, j)).collect())
                .collect(),
            records: self.records.clone(),
            disturbance_scores: self.disturbance_scores(),
            sampling: self.sampling_distribution(),
        }
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Index of the smallest score; among ties, the oldest entry.
fn argmin_oldest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}
