//! Model files, result export and error metrics.

mod export;
mod metrics;
mod model;

pub use export::{write_stage_csv, write_step_csv, write_summary, write_vtk, RunSummary, STEP_CSV_HEADER};
pub use metrics::{
    cube_analytical_displacement, histogram, lateral_stretch, nre_field, nrmse, ErrorReport, Histogram, MetricError,
};
pub use model::{load_model, MaterialSpec, ModelError, ModelFile, RunSettings};
