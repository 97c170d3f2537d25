//! Decentralized, risk-aware multi-target tracking.
//!
//! A robot team tracks moving targets whose proximity damages sensors. Each
//! robot picks a goal position trading tracking accuracy against risk, a CBF
//! quadratic program keeps the communication graph connected and the robots
//! apart, and a Kalman-consensus filter fuses estimates. All robot-to-robot
//! data moves through [`netsim`], which only delivers between graph neighbors.

// `!(x > 0.0)` style checks are there to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod estimation;
pub mod graph;
pub mod netsim;
pub mod planning;
pub mod rng;
pub mod runner;
pub mod spectral;
pub mod world;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
