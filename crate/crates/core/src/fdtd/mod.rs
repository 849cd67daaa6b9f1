//! Time-domain Maxwell solver on a Yee grid.

mod field;
mod grid;
mod solver;
mod waveform;

pub use field::{vector_norm, vector_norm_sqr, ComplexFieldMap, EVector, PlaneGeometry};
pub use grid::{discretize, CellMaterial, Grid, LayerSlab, LumpedPort, PlaneSpec, Wire, PORT_IMPEDANCE};
pub use solver::{
    extract_phasor_field, run, run_with, Component, Excitation, ExcitationTarget, Monitor, MonitorData, PortRecord,
    RunOptions, RunResult,
};
pub use waveform::{SourceWaveform, WaveformKind};

/// Bumped whenever a change to the update equations alters results, so
/// cached field libraries from older builds are not reused.
pub const SOLVER_REVISION: u32 = 2;
