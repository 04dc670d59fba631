// SPDX-License-Identifier: Apache-2.0

//! Experiment harness for the private multiplicative weights library.

pub mod audit;
pub mod cli;
pub mod erm_runs;
pub mod families;
pub mod olvq;
pub mod output;
pub mod spec;
pub mod verify;
