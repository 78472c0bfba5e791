//! Stateful stepping of an LTI system.

use super::linalg::Vector;
use super::{step_lti, StateSpace};
use crate::error::{Error, Result};

/// An LTI system together with its current state.
#[derive(Clone, Debug)]
pub struct LtiFilter {
    sys: StateSpace,
    x: Vector,
}

impl LtiFilter {
    pub fn new(sys: StateSpace) -> Self {
        let x = Vector::zeros(sys.n());
        LtiFilter { sys, x }
    }

    pub fn system(&self) -> &StateSpace {
        &self.sys
    }

    pub fn state(&self) -> &Vector {
        &self.x
    }

    pub fn set_state(&mut self, x: Vector) -> Result<()> {
        if x.len() != self.sys.n() {
            return Err(Error::dim("filter state dimension mismatch"));
        }
        self.x = x;
        Ok(())
    }

    /// Output for `u` without advancing the state.
    pub fn peek(&self, u: &Vector) -> Result<Vector> {
        if u.len() != self.sys.m() {
            return Err(Error::dim(format!(
                "filter expects {} inputs, got {}",
                self.sys.m(),
                u.len()
            )));
        }
        Ok(self.sys.c() * &self.x + self.sys.d() * u)
    }

    /// Output for `u`, then advance the state.
    pub fn step(&mut self, u: &Vector) -> Result<Vector> {
        let (next, y) = step_lti(&self.sys, &self.x, u)?;
        self.x = next;
        Ok(y)
    }

    pub fn reset(&mut self) {
        self.x.fill(0.0);
    }

    /// Swap in a new realization. The state is kept when the order matches and zeroed otherwise.
    pub fn replace_system(&mut self, sys: StateSpace) -> Result<()> {
        if sys.m() != self.sys.m() || sys.p() != self.sys.p() {
            return Err(Error::dim("replacement system must keep input and output dimensions"));
        }
        if sys.n() != self.sys.n() {
            self.x = Vector::zeros(sys.n());
        }
        self.sys = sys;
        Ok(())
    }
}
