use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_users: BTreeSet<String>,
    pub val_users: BTreeSet<String>,
    pub test_users: BTreeSet<String>,
}

/// User-disjoint cross-validation plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Checks pairwise disjointness within folds and that test sets partition the users.
    pub fn audit(&self, all_users: &BTreeSet<String>) -> Result<()> {
        let mut seen_test = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            let overlap = f
                .train_users
                .intersection(&f.test_users)
                .next()
                .or_else(|| f.train_users.intersection(&f.val_users).next())
                .or_else(|| f.val_users.intersection(&f.test_users).next());
            if let Some(u) = overlap {
                return Err(Error::Validation(format!("fold {i}: user `{u}` appears in two splits")));
            }
            for u in &f.test_users {
                if !seen_test.insert(u.clone()) {
                    return Err(Error::Validation(format!("user `{u}` is tested in more than one fold")));
                }
            }
        }
        if &seen_test != all_users {
            return Err(Error::Validation("test sets do not cover every user exactly once".into()));
        }
        Ok(())
    }
}

/// Shuffles users with `seed` and cuts them into `num_folds` near-equal test groups.
/// Per fold, 20% of the remaining users (rounded up, at least one) validate and the
/// rest train.
pub fn make_user_folds(user_ids: &BTreeSet<String>, num_folds: usize, seed: u64) -> Result<FoldPlan> {
    if num_folds == 0 {
        return Err(Error::arg("need at least one fold"));
    }
    if user_ids.len() < num_folds {
        return Err(Error::arg(format!("{} users cannot fill {num_folds} folds", user_ids.len())));
    }
    let mut users: Vec<String> = user_ids.iter().cloned().collect();
    users.shuffle(&mut rng::stream(seed, &[0xf01d]));
    let n = users.len();
    let base = n / num_folds;
    let extra = n % num_folds;
    let mut folds = Vec::with_capacity(num_folds);
    let mut start = 0;
    for k in 0..num_folds {
        let size = base + usize::from(k < extra);
        let test: BTreeSet<String> = users[start..start + size].iter().cloned().collect();
        let rest: Vec<&String> = users.iter().filter(|u| !test.contains(*u)).collect();
        let n_val = ((rest.len() as f64 * 0.2).ceil() as usize).max(1).min(rest.len());
        folds.push(Fold {
            val_users: rest[..n_val].iter().map(|u| (*u).clone()).collect(),
            train_users: rest[n_val..].iter().map(|u| (*u).clone()).collect(),
            test_users: test,
        });
        start += size;
    }
    Ok(FoldPlan { seed, folds })
}
