//! Finite-state Markov fading channels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Markov chain over a grid of gain powers `|H|^2`, shared by every
/// (link, subcarrier) component. Components evolve independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ChannelModel {
    levels: Vec<f64>,
    transition: Vec<Vec<f64>>,
    #[serde(skip)]
    cumulative: Vec<Vec<f64>>,
    irreducible: bool,
}

/// Deserialized form; derived fields are rebuilt by [`ChannelModel::new`].
#[derive(Deserialize)]
struct RawModel {
    levels: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl TryFrom<RawModel> for ChannelModel {
    type Error = Error;

    fn try_from(r: RawModel) -> Result<Self> {
        Self::new(r.levels, r.transition)
    }
}

impl ChannelModel {
    /// Builds a model from gain powers and a row-stochastic matrix.
    pub fn new(levels: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let k = levels.len();
        if k == 0 {
            return Err(Error::Channel("empty state grid".into()));
        }
        if let Some(g) = levels.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(Error::Channel(format!("gain power {g} is not a finite nonnegative number")));
        }
        if transition.len() != k || transition.iter().any(|r| r.len() != k) {
            return Err(Error::Channel(format!("transition matrix must be {k}x{k}")));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Channel(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::Channel(format!("row {i} sums to {sum}")));
            }
        }
        let irreducible = strongly_connected(&transition);
        let mut m = Self {
            levels,
            transition,
            cumulative: Vec::new(),
            irreducible,
        };
        m.rebuild_cumulative();
        Ok(m)
    }

    /// Constant channel with a single gain power.
    pub fn constant(gain: f64) -> Result<Self> {
        Self::new(vec![gain], vec![vec![1.0]])
    }

    /// Unit-mean Rayleigh gain power quantized into `k` equal-probability bins
    /// (each level is the conditional mean of its bin) with adjacent-level
    /// moves. The chain stays put with probability `persistence` and otherwise
    /// steps up or down with equal probability; a blocked step at the edge
    /// stays put. The stationary law is uniform.
    pub fn rayleigh_birth_death(k: usize, persistence: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Channel("need at least one level".into()));
        }
        if !(0.0..=1.0).contains(&persistence) {
            return Err(Error::Channel(format!("persistence {persistence} outside [0, 1]")));
        }
        let levels = rayleigh_levels(k);
        let mut p = vec![vec![0.0; k]; k];
        let step = (1.0 - persistence) / 2.0;
        for i in 0..k {
            p[i][i] += persistence;
            if i > 0 { p[i][i - 1] += step } else { p[i][i] += step }
            if i + 1 < k { p[i][i + 1] += step } else { p[i][i] += step }
        }
        Self::new(levels, p)
    }

    fn rebuild_cumulative(&mut self) {
        self.cumulative = self
            .transition
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
    }

    pub fn n_states(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }

    pub fn require_irreducible(&self) -> Result<()> {
        if self.irreducible { Ok(()) } else { Err(Error::Reducible) }
    }

    /// Draws the successor of grid state `i`.
    pub fn sample_next<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        if self.cumulative.is_empty() {
            // Deserialized models skip the cache.
            let mut acc = 0.0;
            let u: f64 = rng.gen();
            for (j, p) in self.transition[i].iter().enumerate() {
                acc += p;
                if u < acc {
                    return j;
                }
            }
            return last_positive(&self.transition[i]);
        }
        let u: f64 = rng.gen();
        let cum = &self.cumulative[i];
        match cum.iter().position(|&c| u < c) {
            Some(j) if self.transition[i][j] > 0.0 => j,
            _ => last_positive(&self.transition[i]),
        }
    }

    /// Expectation of `f(next)` given the current grid state.
    pub fn expect_next(&self, i: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.transition[i]
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(j, p)| p * f(j))
            .sum()
    }
}

fn last_positive(row: &[f64]) -> usize {
    row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Conditional means of equal-probability bins of an Exp(1) variable.
pub fn rayleigh_levels(k: usize) -> Vec<f64> {
    let kf = k as f64;
    // Upper-tail mass e^{-a} at each boundary is 1 - i/k.
    let boundary = |i: usize| -> (f64, f64) {
        let tail = 1.0 - i as f64 / kf;
        if tail <= 0.0 { (f64::INFINITY, 0.0) } else { (-tail.ln(), tail) }
    };
    (0..k)
        .map(|i| {
            let (a, ea) = boundary(i);
            let (b, eb) = boundary(i + 1);
            let upper = if b.is_infinite() { 0.0 } else { (b + 1.0) * eb };
            ((a + 1.0) * ea - upper) / (ea - eb)
        })
        .collect()
}

fn strongly_connected(p: &[Vec<f64>]) -> bool {
    let k = p.len();
    let reach = |forward: bool| -> usize {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let edge = if forward { p[i][j] } else { p[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().filter(|s| **s).count()
    };
    reach(true) == k && reach(false) == k
}

/// Stationary law of an irreducible chain.
pub fn stationary_dist(m: &ChannelModel) -> Result<Vec<f64>> {
    m.require_irreducible()?;
    let k = m.n_states();
    // Solve (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = m.transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut b = DVector::<f64>::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    b[k - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(Error::Reducible)?;
    Ok(pi.iter().map(|v| v.max(0.0)).collect())
}

/// Grid index of every (link, subcarrier) component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelState {
    links: usize,
    subcarriers: usize,
    idx: Vec<usize>,
}

impl ChannelState {
    pub fn uniform(links: usize, subcarriers: usize, index: usize) -> Self {
        Self {
            links,
            subcarriers,
            idx: vec![index; links * subcarriers],
        }
    }

    pub fn from_indices(links: usize, subcarriers: usize, idx: Vec<usize>, m: &ChannelModel) -> Result<Self> {
        if idx.len() != links * subcarriers {
            return Err(Error::Dimension(format!(
                "{} indices for {links} links x {subcarriers} subcarriers",
                idx.len()
            )));
        }
        if let Some(i) = idx.iter().find(|i| **i >= m.n_states()) {
            return Err(Error::Channel(format!("index {i} outside grid of {}", m.n_states())));
        }
        Ok(Self { links, subcarriers, idx })
    }

    /// Draws every component from the stationary law.
    pub fn stationary<R: Rng + ?Sized>(m: &ChannelModel, links: usize, subcarriers: usize, rng: &mut R) -> Result<Self> {
        let pi = stationary_dist(m)?;
        let idx = (0..links * subcarriers)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (j, p) in pi.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return j;
                    }
                }
                last_positive(&pi)
            })
            .collect();
        Ok(Self { links, subcarriers, idx })
    }

    pub fn links(&self) -> usize {
        self.links
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn index(&self, l: usize, m: usize) -> usize {
        self.idx[l * self.subcarriers + m]
    }

    pub fn set_index(&mut self, l: usize, m: usize, i: usize) {
        self.idx[l * self.subcarriers + m] = i;
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    /// Gain power `|H_{l,m}|^2`.
    pub fn gain(&self, model: &ChannelModel, l: usize, m: usize) -> f64 {
        model.level(self.index(l, m))
    }
}

/// Advances every component by one independent draw from its row.
pub fn channel_next<R: Rng + ?Sized>(m: &ChannelModel, s: &ChannelState, rng: &mut R) -> ChannelState {
    let mut next = s.clone();
    for i in next.idx.iter_mut() {
        *i = m.sample_next(*i, rng);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_keeps_state() {
        let m = ChannelModel::new(vec![0.5, 2.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ChannelState::from_indices(2, 2, vec![0, 1, 1, 0], &m).unwrap();
        let start = s.clone();
        for _ in 0..1000 {
            s = channel_next(&m, &s, &mut rng);
        }
        assert_eq!(s, start);
        assert!(matches!(stationary_dist(&m), Err(Error::Reducible)));
    }

    #[test]
    fn single_state_is_constant() {
        let m = ChannelModel::constant(3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = channel_next(&m, &ChannelState::uniform(3, 2, 0), &mut rng);
        assert!(s.indices().iter().all(|&i| i == 0));
        assert_eq!(stationary_dist(&m).unwrap(), vec![1.0]);
    }

    #[test]
    fn transition_frequencies_match_matrix() {
        let m = ChannelModel::new(vec![0.5, 2.0], vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut counts = [[0usize; 2]; 2];
        let mut s = ChannelState::uniform(1, 1, 0);
        for _ in 0..n {
            let next = channel_next(&m, &s, &mut rng);
            counts[s.index(0, 0)][next.index(0, 0)] += 1;
            s = next;
        }
        for i in 0..2 {
            let visits = (counts[i][0] + counts[i][1]) as f64;
            let freq = counts[i][1 - i] as f64 / visits;
            let sigma = (0.1 * 0.9 / visits).sqrt();
            assert!((freq - 0.1).abs() < 3.0 * sigma, "row {i}: {freq}");
        }
    }

    #[test]
    fn stationary_examples() {
        let m = ChannelModel::new(vec![1.0, 2.0], vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let pi = stationary_dist(&m).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
        let m = ChannelModel::new(vec![1.0, 2.0], vec![vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let pi = stationary_dist(&m).unwrap();
        assert_abs_diff_eq!(pi[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(ChannelModel::new(vec![1.0, 2.0], vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(ChannelModel::new(vec![1.0, 2.0], vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(ChannelModel::new(vec![1.0], vec![vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn rayleigh_levels_have_unit_mean() {
        for k in [1, 2, 4, 8] {
            let lv = rayleigh_levels(k);
            let mean = lv.iter().sum::<f64>() / k as f64;
            assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
            assert!(lv.windows(2).all(|w| w[0] < w[1]));
        }
        // Two bins split at ln 2: lower mean 1 - ln 2, upper mean 1 + ln 2.
        let lv = rayleigh_levels(2);
        assert_abs_diff_eq!(lv[0], 1.0 - 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lv[1], 1.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn empirical_occupancy_matches_stationary_law() {
        let m = ChannelModel::new(
            vec![0.2, 1.0, 3.0],
            vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.3, 0.3, 0.4]],
        )
        .unwrap();
        let pi = stationary_dist(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut counts = [0f64; 3];
        let mut i = 0;
        for _ in 0..n {
            i = m.sample_next(i, &mut rng);
            counts[i] += 1.0;
        }
        // Chi-square with 2 degrees of freedom; the chain is correlated, so the
        // threshold is loose relative to the i.i.d. 0.1% quantile (13.8).
        let chi2: f64 = (0..3).map(|j| (counts[j] - n as f64 * pi[j]).powi(2) / (n as f64 * pi[j])).sum();
        assert!(chi2 < 30.0, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn birth_death_rows_are_stochastic(k in 1usize..12, rho in 0.0f64..1.0) {
            let m = ChannelModel::rayleigh_birth_death(k, rho).unwrap();
            for i in 0..k {
                let s: f64 = m.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
            if rho < 1.0 || k == 1 {
                let pi = stationary_dist(&m).unwrap();
                for p in pi {
                    prop_assert!((p - 1.0 / k as f64).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn stationary_solves_balance(raw in proptest::collection::vec(0.05f64..1.0, 16)) {
            let k = 4;
            let rows: Vec<Vec<f64>> = raw.chunks(k).map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            // Renormalize exactly so the 1e-12 row check passes.
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| {
                let s: f64 = r[..k - 1].iter().sum();
                r[k - 1] = 1.0 - s;
                r
            }).collect();
            let m = ChannelModel::new(vec![1.0; k], rows.clone()).unwrap();
            let pi = stationary_dist(&m).unwrap();
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for j in 0..k {
                let back: f64 = (0..k).map(|i| pi[i] * rows[i][j]).sum();
                prop_assert!((back - pi[j]).abs() < 1e-9);
            }
        }
    }
}
