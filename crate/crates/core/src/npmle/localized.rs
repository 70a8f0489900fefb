use serde::{Deserialize, Serialize};

use super::{finish, CountData, FitOptions, FitResult, Grid, GridOptions, Problem};
use crate::error::{invalid, Result};
use crate::kernels::{pmf_matrix, MixtureKernel};

/// Localisation threshold multiplier and the optional independent split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedConfig {
    pub kappa: f64,
    /// Independent counts `N'` used only to choose the small-count subset.
    pub split_counts: Option<CountData>,
}

impl Default for LocalizedConfig {
    fn default() -> Self {
        Self {
            kappa: 3.6,
            split_counts: None,
        }
    }
}

/// NPMLE on the small-count subset plus the partition it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedFit {
    /// `None` when no category falls under the threshold.
    pub fit: Option<FitResult>,
    pub grid: Option<Grid>,
    /// Categories with `p̂'_i ≤ κ ln n / n`; indices past the explicit counts are
    /// implicit zeros.
    pub small: Vec<usize>,
    pub large: Vec<usize>,
    /// `κ ln n / n`.
    pub threshold: f64,
}

impl LocalizedFit {
    pub fn is_empty(&self) -> bool {
        self.small.is_empty()
    }
}

/// Fits the NPMLE to `{N_i : p̂'_i ≤ κ ln n / n}` on a grid inside `[0, κ ln n / n]`.
pub fn fit_localized(
    counts: &CountData,
    cfg: &LocalizedConfig,
    kernel: &MixtureKernel,
    grid_opts: &GridOptions,
    opts: &FitOptions,
) -> Result<LocalizedFit> {
    if !(cfg.kappa > 0.0) {
        return Err(invalid("kappa must be positive"));
    }
    if counts.n() < 2 {
        return Err(invalid("localisation needs n >= 2"));
    }
    let selector = match &cfg.split_counts {
        Some(split) => {
            if split.k() != counts.k() {
                return Err(invalid("split counts must cover the same alphabet"));
            }
            split
        }
        None => counts,
    };
    let n = counts.n() as f64;
    let threshold = cfg.kappa * n.ln() / n;
    let (small, large): (Vec<usize>, Vec<usize>) = (0..counts.k()).partition(|&i| selector.p_hat(i) <= threshold);
    if small.is_empty() {
        return Ok(LocalizedFit {
            fit: None,
            grid: None,
            small,
            large,
            threshold,
        });
    }
    let subset = counts.subset(&small)?;
    let sized = GridOptions {
        size: Some(grid_opts.resolve_size(counts.k())),
        min_mass: grid_opts.min_mass,
    };
    let grid = clip_grid(sized.build(&subset)?, threshold)?;
    let pm = pmf_matrix(kernel, &subset, &grid)?;
    let problem = Problem::new(&pm)?;
    let outcome = problem.solve(opts, None);
    let fit = finish(
        &problem,
        &grid,
        outcome.weights,
        outcome.iterations,
        outcome.converged,
        opts.tol,
    )?;
    Ok(LocalizedFit {
        fit: Some(fit),
        grid: Some(grid),
        small,
        large,
        threshold,
    })
}

fn clip_grid(grid: Grid, threshold: f64) -> Result<Grid> {
    if grid.atoms().last().is_some_and(|&a| a <= threshold) {
        return Ok(grid);
    }
    let mut atoms: Vec<f64> = grid.atoms().iter().copied().filter(|&a| a < threshold).collect();
    atoms.push(threshold.min(1.0));
    Grid::new(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(n: u64) -> MixtureKernel {
        MixtureKernel::poisson(n).unwrap()
    }

    #[test]
    fn all_large_counts_give_empty_fit() {
        let counts = CountData::new(vec![500, 400, 900], 1000).unwrap();
        let out = fit_localized(
            &counts,
            &LocalizedConfig::default(),
            &kernel(1000),
            &GridOptions::default(),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(out.is_empty() && out.fit.is_none());
        assert_eq!(out.large, vec![0, 1, 2]);
    }

    #[test]
    fn all_zero_counts_fit_point_mass_at_zero() {
        let counts = CountData::with_k(vec![0, 0], 100, 7).unwrap();
        let out = fit_localized(
            &counts,
            &LocalizedConfig::default(),
            &kernel(100),
            &GridOptions::default(),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(out.small, (0..7).collect::<Vec<_>>());
        let fit = out.fit.unwrap();
        assert_eq!(fit.mixing.atoms(), &[0.0]);
    }

    #[test]
    fn split_counts_select_the_subset() {
        let counts = CountData::new(vec![100, 1, 2], 1000).unwrap();
        let split = CountData::new(vec![1, 100, 2], 1000).unwrap();
        let cfg = LocalizedConfig {
            kappa: 3.6,
            split_counts: Some(split),
        };
        let out = fit_localized(
            &counts,
            &cfg,
            &kernel(1000),
            &GridOptions::sized(50),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(out.small, vec![0, 2]);
        assert_eq!(out.large, vec![1]);
        // Grid stays within the localisation interval even though N_0 = 100 is large.
        let grid = out.grid.unwrap();
        assert!(*grid.atoms().last().unwrap() <= out.threshold + 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let counts = CountData::new(vec![1], 1).unwrap();
        assert!(fit_localized(
            &counts,
            &LocalizedConfig::default(),
            &kernel(1),
            &GridOptions::default(),
            &FitOptions::default()
        )
        .is_err());
        let counts = CountData::new(vec![1], 10).unwrap();
        let cfg = LocalizedConfig {
            kappa: 0.0,
            split_counts: None,
        };
        assert!(fit_localized(
            &counts,
            &cfg,
            &kernel(10),
            &GridOptions::default(),
            &FitOptions::default()
        )
        .is_err());
    }
}
