use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanScheme {
    /// `round(T · (1 - i/K))`
    Uniform,
    /// `round(T · (1 - i/K)²)`
    Quadratic,
    /// Caller-provided timesteps.
    Explicit,
}

/// Strictly decreasing timesteps `T = t_0 > t_1 > ... > t_K = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    timesteps: Vec<usize>,
    scheme: PlanScheme,
}

impl StepPlan {
    /// Validates an explicit sequence.
    pub fn explicit(timesteps: Vec<usize>) -> Result<Self> {
        Self::checked(timesteps, PlanScheme::Explicit)
    }

    fn checked(timesteps: Vec<usize>, scheme: PlanScheme) -> Result<Self> {
        if timesteps.len() < 2 {
            return Err(Error::config("a step plan needs at least two timesteps"));
        }
        if timesteps.last() != Some(&0) {
            return Err(Error::config(format!("step plan must end at 0, got {timesteps:?}")));
        }
        if timesteps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config(format!("step plan must be strictly decreasing, got {timesteps:?}")));
        }
        Ok(Self { timesteps, scheme })
    }

    /// The full plan `T, T-1, ..., 0`.
    pub fn full(steps: usize) -> Result<Self> {
        make_plan(steps, steps, PlanScheme::Uniform)
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn scheme(&self) -> PlanScheme {
        self.scheme
    }

    /// Starting timestep `T`.
    pub fn start(&self) -> usize {
        self.timesteps[0]
    }

    /// Number of reverse updates `K`.
    pub fn len(&self) -> usize {
        self.timesteps.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(t, t')` for each update, in order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps.windows(2).map(|w| (w[0], w[1]))
    }

    /// Index `k_c` whose timestep is closest to `t_c` (ties go to the
    /// earlier, noisier index).
    pub fn nearest_index(&self, t_c: usize) -> usize {
        let mut best = 0;
        for (k, &t) in self.timesteps.iter().enumerate() {
            if t.abs_diff(t_c) < self.timesteps[best].abs_diff(t_c) {
                best = k;
            }
        }
        best
    }
}

/// Builds a `K`-update plan over `T` steps. Rounded grids are deduplicated,
/// so a quadratic plan can end up with fewer than `K` updates.
pub fn make_plan(steps: usize, k: usize, scheme: PlanScheme) -> Result<StepPlan> {
    if k == 0 || k > steps {
        return Err(Error::config(format!("step budget K = {k} outside [1, T = {steps}]")));
    }
    let shape: fn(f64) -> f64 = match scheme {
        PlanScheme::Uniform => |u| u,
        PlanScheme::Quadratic => |u| u * u,
        PlanScheme::Explicit => {
            return Err(Error::config("explicit plans are built with StepPlan::explicit"))
        }
    };
    let mut ts: Vec<usize> = (0..=k)
        .map(|i| (steps as f64 * shape(1.0 - i as f64 / k as f64)).round() as usize)
        .collect();
    ts.dedup();
    if ts.last() != Some(&0) {
        ts.push(0);
    }
    StepPlan::checked(ts, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_plan() {
        let p = make_plan(1000, 1000, PlanScheme::Uniform).unwrap();
        assert_eq!(p.len(), 1000);
        assert!(p.timesteps().iter().rev().enumerate().all(|(i, &t)| t == i));
    }

    #[test]
    fn four_step_uniform() {
        let p = make_plan(1000, 4, PlanScheme::Uniform).unwrap();
        assert_eq!(p.timesteps(), &[1000, 750, 500, 250, 0]);
    }

    #[test]
    fn quadratic_dedups() {
        let p = make_plan(10, 10, PlanScheme::Quadratic).unwrap();
        assert_eq!(p.start(), 10);
        assert_eq!(*p.timesteps().last().unwrap(), 0);
        assert!(p.timesteps().windows(2).all(|w| w[1] < w[0]));
        assert!(p.len() < 10);
    }

    #[test]
    fn errors() {
        assert!(make_plan(10, 11, PlanScheme::Uniform).is_err());
        assert!(make_plan(10, 0, PlanScheme::Uniform).is_err());
        assert!(StepPlan::explicit(vec![10, 5, 5, 0]).is_err());
        assert!(StepPlan::explicit(vec![10, 5, 1]).is_err());
        assert!(StepPlan::explicit(vec![0]).is_err());
        assert_eq!(StepPlan::explicit(vec![10, 3, 0]).unwrap().len(), 2);
    }

    #[test]
    fn nearest_cutoff() {
        let p = make_plan(1000, 25, PlanScheme::Uniform).unwrap();
        let k = p.nearest_index(291);
        assert_eq!(p.timesteps()[k], 280);
        assert_eq!(k, 18);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn plans_are_valid(t in 1usize..2000, kf in 0.0f64..1.0, quad in any::<bool>()) {
                let k = 1 + ((t - 1) as f64 * kf) as usize;
                let scheme = if quad { PlanScheme::Quadratic } else { PlanScheme::Uniform };
                let p = make_plan(t, k, scheme).unwrap();
                prop_assert_eq!(p.start(), t);
                prop_assert_eq!(*p.timesteps().last().unwrap(), 0);
                prop_assert!(!p.is_empty() && p.len() <= k);
                if !quad { prop_assert_eq!(p.len(), k); }
            }
        }
    }
}
