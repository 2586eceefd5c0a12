pub mod cv;
pub mod features;
pub mod merge;
pub mod report;
pub mod synth;
pub mod train;
