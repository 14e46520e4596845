//! Phase-contrast MRI flow phantom simulator and analysis pipeline.

pub mod acquisition;
pub mod cycle;
pub mod format;
pub mod harness;
pub mod phantom;
pub mod quantify;
pub mod stats;
