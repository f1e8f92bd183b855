//! Map-reduce question answering over long videos.
//!
//! Captioning turns a video into timestamped scene captions and a
//! character registry; analysis answers multiple-choice questions over
//! those captions with targeted visual follow-up.

pub mod analysis;
pub mod captioning;
pub mod config;
pub mod diagnostics;
pub mod framing;
pub mod gateway;
pub mod harness;
pub mod parallel;
pub mod store;
pub mod structured_io;
pub mod types;
pub mod video;
