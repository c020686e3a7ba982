//! Workbench for inserting stealthy hardware Trojans into gate-level
//! netlists and measuring them against logic-testing and side-channel
//! detection techniques.

pub mod artifact;
pub mod charact;
pub mod cli;
pub mod config;
pub mod designgen;
pub mod detectors;
pub mod evalharness;
pub mod logicsim;
pub mod netlist;
pub mod rlagent;
pub mod satcore;
pub mod trojan;
