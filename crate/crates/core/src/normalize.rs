//! Per-feature min/max scaling into [-1, 1].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trajectory::{Space, State, TrajectoryTensor, FEATURE_DIM, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != FEATURE_DIM || max.len() != FEATURE_DIM {
            return Err(Error::rejected(format!(
                "stats must have {FEATURE_DIM} features, got {}/{}",
                min.len(),
                max.len()
            )));
        }
        if let Some(j) = (0..FEATURE_DIM).find(|&j| !(max[j] >= min[j]) || !min[j].is_finite()) {
            return Err(Error::rejected(format!(
                "feature {j}: max {} < min {}",
                max[j], min[j]
            )));
        }
        Ok(NormalizationStats { min, max })
    }

    pub fn is_constant(&self, feature: usize) -> bool {
        self.max[feature] == self.min[feature]
    }

    /// Stable identifier derived from the exact bit patterns of the bounds.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for v in self.min.iter().chain(&self.max) {
            h.update(v.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn space(&self) -> Space {
        Space::Normalized {
            stats: self.fingerprint(),
        }
    }

    #[inline]
    fn forward(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[j], self.max[j]);
        if hi == lo {
            0.0
        } else {
            2.0 * (x - lo) / (hi - lo) - 1.0
        }
    }

    #[inline]
    fn inverse(&self, j: usize, y: f64) -> f64 {
        let (lo, hi) = (self.min[j], self.max[j]);
        if hi == lo {
            lo
        } else {
            (y + 1.0) * 0.5 * (hi - lo) + lo
        }
    }

    pub fn normalize_state(&self, s: &State) -> State {
        let mut out = [0.0; STATE_DIM];
        for j in 0..STATE_DIM {
            out[j] = self.forward(j, s[j]);
        }
        out
    }

    pub fn denormalize_state(&self, s: &State) -> State {
        let mut out = [0.0; STATE_DIM];
        for j in 0..STATE_DIM {
            out[j] = self.inverse(j, s[j]);
        }
        out
    }
}

pub fn normalize(traj: &TrajectoryTensor, stats: &NormalizationStats) -> Result<TrajectoryTensor> {
    if traj.is_normalized() {
        return Err(Error::rejected("trajectory is already normalized"));
    }
    check_dims(traj, stats)?;
    let mut out = traj.clone();
    for mut row in out.values_mut().rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = stats.forward(j, *v);
        }
    }
    Ok(out.with_space(stats.space()))
}

pub fn denormalize(traj: &TrajectoryTensor, stats: &NormalizationStats) -> Result<TrajectoryTensor> {
    match traj.space() {
        Space::Raw => return Err(Error::rejected("trajectory is not normalized")),
        Space::Normalized { stats: id } if id != stats.fingerprint() => {
            return Err(Error::rejected(format!(
                "trajectory normalized with stats {id:016x}, got {:016x}",
                stats.fingerprint()
            )))
        }
        _ => {}
    }
    check_dims(traj, stats)?;
    let mut out = traj.clone();
    for mut row in out.values_mut().rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = stats.inverse(j, *v);
        }
    }
    Ok(out.with_space(Space::Raw))
}

fn check_dims(traj: &TrajectoryTensor, stats: &NormalizationStats) -> Result<()> {
    let d = traj.values().ncols();
    if stats.min.len() != d || stats.max.len() != d {
        return Err(Error::rejected(format!(
            "stats cover {} features, trajectory has {d}",
            stats.min.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats() -> NormalizationStats {
        let min: Vec<f64> = (0..FEATURE_DIM).map(|j| -(j as f64) - 1.0).collect();
        let mut max: Vec<f64> = (0..FEATURE_DIM).map(|j| 2.0 * j as f64 + 1.0).collect();
        max[5] = min[5];
        NormalizationStats::new(min, max).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let st = stats();
        let mut v = Array2::zeros((3, FEATURE_DIM));
        for j in 0..FEATURE_DIM {
            v[[0, j]] = st.min[j];
            v[[1, j]] = 0.5 * (st.min[j] + st.max[j]);
            v[[2, j]] = st.max[j];
        }
        let t = TrajectoryTensor::new(v, 3, Space::Raw).unwrap();
        let n = normalize(&t, &st).unwrap();
        assert!(n.is_normalized());
        for j in 0..FEATURE_DIM {
            if st.is_constant(j) {
                assert_eq!(n.values()[[0, j]], 0.0);
                assert_eq!(n.values()[[2, j]], 0.0);
                continue;
            }
            assert_eq!(n.values()[[0, j]], -1.0);
            assert!(n.values()[[1, j]].abs() < 1e-15);
            assert!((n.values()[[2, j]] - 1.0).abs() < 1e-15);
        }
        let back = denormalize(&n, &st).unwrap();
        for j in 0..FEATURE_DIM {
            assert_eq!(back.values()[[0, j]], st.min[j]);
            assert!((back.values()[[2, j]] - st.max[j]).abs() <= 1e-12 * st.max[j].abs());
        }
    }

    #[test]
    fn roundtrip_random_tensors() {
        let st = stats();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = Array2::from_shape_fn((4, FEATURE_DIM), |(_, j)| {
                let (lo, hi) = (st.min[j], st.max[j]);
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo - 5.0..hi + 5.0)
                }
            });
            let t = TrajectoryTensor::new(v.clone(), 4, Space::Raw).unwrap();
            let rt = denormalize(&normalize(&t, &st).unwrap(), &st).unwrap();
            for (a, b) in rt.values().iter().zip(v.iter()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn space_checks() {
        let st = stats();
        let t = TrajectoryTensor::new(Array2::zeros((2, FEATURE_DIM)), 2, Space::Raw).unwrap();
        assert!(denormalize(&t, &st).is_err());
        let n = normalize(&t, &st).unwrap();
        assert!(normalize(&n, &st).is_err());
        let mut other = st.clone();
        other.max[0] += 1.0;
        assert!(denormalize(&n, &other).is_err());
    }

    #[test]
    fn rejects_inverted_bounds() {
        let mut st = stats();
        st.max[3] = st.min[3] - 1.0;
        assert!(NormalizationStats::new(st.min, st.max).is_err());
        assert!(NormalizationStats::new(vec![0.0; 3], vec![1.0; 3]).is_err());
    }
}
