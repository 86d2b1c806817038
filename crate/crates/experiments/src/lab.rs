use zk_core::modulation::Fitter;
use zk_core::{solve_ground_state, Grid, GroundState};

use crate::error::{ExperimentError, Result};
use crate::spec::GroundStateConfig;

/// Ground state shared by every run that uses the same reference config.
pub struct Lab {
    config: GroundStateConfig,
    gs: GroundState,
}

impl Lab {
    pub fn new(config: &GroundStateConfig) -> Result<Self> {
        let grid =
            Grid::new(config.n, config.n, config.l, config.l).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let gs = solve_ground_state(&grid, config.tol, config.max_iter)?;
        Ok(Lab { config: *config, gs })
    }

    pub fn config(&self) -> &GroundStateConfig {
        &self.config
    }

    pub fn ground_state(&self) -> &GroundState {
        &self.gs
    }

    pub fn fitter(&self, grid: &Grid) -> Fitter {
        Fitter::new(&self.gs, grid)
    }

    /// Fails if `config` differs from the one this lab was built with.
    pub fn check(&self, config: &GroundStateConfig) -> Result<()> {
        if *config == self.config {
            Ok(())
        } else {
            Err(ExperimentError::Config(format!(
                "spec wants ground state {config:?}, lab holds {:?}",
                self.config
            )))
        }
    }
}
