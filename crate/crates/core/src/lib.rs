//! Deterministic table-tennis rally simulation for training a robot to catch
//! and return spinning balls.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] – ball flight under gravity, drag and Magnus lift.
//! * [`contact`] – impulse model for spinning ball impacts on table and racket.
//! * [`rally`] – the eight-state rally cycle, event classification and validity.
//! * [`reward`] – the stage-indexed reward matrix and performance penalty.
//! * [`arena`] – the robot, sensing model and the batched step/reset loop.
//! * [`seedgen`] – valid-rally discovery and the seed buffer feeding resets.
//! * [`learner`] – curriculum PPO with a dense-connection actor–critic.
//! * [`real2sim`] – ingestion and replay of recorded ball trajectories.
//!
//! Batch work goes through [`exec`], which runs on rayon when the `parallel`
//! feature is enabled and sequentially otherwise. Results never depend on
//! the worker count.

pub mod arena;
pub mod contact;
pub mod dynamics;
pub mod eval;
pub mod exec;
pub mod learner;
pub mod rally;
pub mod real2sim;
pub mod seedgen;
pub mod reward;

/// 3-vector used for every physical quantity.
pub type Vec3 = nalgebra::Vector3<f64>;
