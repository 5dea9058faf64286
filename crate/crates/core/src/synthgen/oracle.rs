//! Nearest-centroid classifier over hand-built features. It shares no code
//! with the neural model and serves as the separability canary for a world.

use crate::domain::{ranges, Observation};

pub const FEATURES: usize = 5;
const ENERGY_SCALE: f64 = 4.0;

/// (scaled texture energy, four range-normalized sensor values).
pub fn oracle_features(obs: &Observation) -> [f64; FEATURES] {
    let px = obs.image.pixels();
    let energy = px.iter().map(|p| (p - 0.5) * (p - 0.5)).sum::<f64>() / px.len() as f64;
    let mut f = [0.0; FEATURES];
    f[0] = energy * ENERGY_SCALE;
    for (i, v) in obs.sensors.values().iter().enumerate() {
        let (lo, hi) = ranges::ALL[i];
        f[i + 1] = (v - lo) / (hi - lo);
    }
    f
}

#[derive(Debug, Clone)]
pub struct NearestCentroid {
    centroids: Vec<[f64; FEATURES]>,
}

impl NearestCentroid {
    /// Centroids from labeled observations; classes absent from `train`
    /// get a centroid at infinity and are never predicted.
    pub fn fit(train: &[Observation], classes: usize) -> Self {
        let mut sums = vec![[0.0; FEATURES]; classes];
        let mut counts = vec![0usize; classes];
        for obs in train {
            let Some(k) = obs.label else { continue };
            let f = oracle_features(obs);
            for (s, v) in sums[k].iter_mut().zip(f) {
                *s += v;
            }
            counts[k] += 1;
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| {
                if n == 0 {
                    [f64::INFINITY; FEATURES]
                } else {
                    s.map(|v| v / n as f64)
                }
            })
            .collect();
        NearestCentroid { centroids }
    }

    pub fn predict(&self, obs: &Observation) -> usize {
        let f = oracle_features(obs);
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    /// Fraction of labeled observations classified correctly.
    pub fn accuracy(&self, data: &[Observation]) -> f64 {
        let labeled: Vec<_> = data.iter().filter(|o| o.label.is_some()).collect();
        if labeled.is_empty() {
            return 0.0;
        }
        let hits = labeled
            .iter()
            .filter(|o| Some(self.predict(o)) == o.label)
            .count();
        hits as f64 / labeled.len() as f64
    }
}
