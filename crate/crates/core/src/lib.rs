//! Event-camera 3D line mapping.
//!
//! This crate implements a monocular event-camera line mapping pipeline:
//! event frames are built from a time-ordered event stream, 2D segments are
//! detected on several per-frame representations and merged, each segment is
//! refined by fitting a plane to its events in space-time, segments are
//! tracked across frames, tracks are triangulated as 3D lines on the affine
//! Grassmannian, and lines (optionally together with camera poses) are
//! polished by a damped Gauss-Newton pass over subspace residuals. A
//! wireframe event simulator and map/trajectory quality metrics round out
//! the toolbox.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature enables the standard library for normal builds. File IO, the CLI,
//! and on-disk formats live in the companion `evline-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod camera;
pub mod config;
pub mod detect;
pub mod event;
pub mod frame;
pub mod geom;
pub mod icp;
pub mod matching;
pub mod metrics;
pub mod planefit;
pub mod recon;
pub mod spatial;
pub mod synth;
