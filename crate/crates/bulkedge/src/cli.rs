//! Config-driven experiment runner shared by the `bulkedge` binary and the
//! examples: deterministic ensembles, JSON + CSV outputs, and a selfcheck.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BulkIndex,
    EdgeIndex,
    BecCheck,
    PhaseScan,
    MuScan,
    HomotopyCheck,
    LocalityCheck,
    Selfcheck,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
}

pub fn placeholder() -> Result<()> {
    Err(Error::Config("cli experiments not wired yet".into()))
}
