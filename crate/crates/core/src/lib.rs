pub mod blockdev;
pub mod crashgen;
pub mod fstarget;
pub mod generator;
pub mod harness;
pub mod report;
pub mod cli;
