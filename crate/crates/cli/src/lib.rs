//! Library side of the `glod` binary, so commands can be driven from tests.

pub mod cmd;
pub mod report;

pub use report::{BenchReport, ConfigRow, FrameRow, RunConfig, Summary};
