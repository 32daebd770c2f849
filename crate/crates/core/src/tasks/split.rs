use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::SyntheticGraph;
use crate::error::{Error, Result};

/// Fractions of the full pool assigned to each split.
///
/// With the defaults the held-out auxiliary split is 20% of the
/// 75% training pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub aux: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.60,
            aux: 0.15,
            valid: 0.10,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn as_array(&self) -> [f64; 4] {
        [self.train, self.aux, self.valid, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.as_array();
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::usage(format!("split fractions must be nonnegative: {f:?}")));
        }
        let total: f64 = f.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("split fractions sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items; ties go to the earlier split.
    pub fn counts(&self, n: usize) -> [usize; 4] {
        let exact = self.as_array().map(|f| f * n as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SyntheticGraph>,
    /// Held-out part of the training pool used by the outer (bi-level) objective.
    pub aux_heldout: Vec<SyntheticGraph>,
    pub valid: Vec<SyntheticGraph>,
    pub test: Vec<SyntheticGraph>,
}

/// Seeded shuffle, then contiguous slices in train / aux / valid / test order.
pub fn split_dataset(graphs: &[SyntheticGraph], seed: u64, fractions: &SplitFractions) -> Result<DatasetSplit> {
    fractions.validate()?;
    let mut shuffled = graphs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_aux, n_valid, _] = fractions.counts(graphs.len());
    let mut rest = shuffled.into_iter();
    let train = rest.by_ref().take(n_train).collect();
    let aux_heldout = rest.by_ref().take(n_aux).collect();
    let valid = rest.by_ref().take(n_valid).collect();
    let test = rest.collect();
    Ok(DatasetSplit {
        train,
        aux_heldout,
        valid,
        test,
    })
}
