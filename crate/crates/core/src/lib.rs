//! Software model of a mural-painting hybrid cable robot: planar cable-robot
//! physics, precomputed-gain trajectory tracking, winch and task-space
//! calibration, artwork-to-toolpath compilation and the painting session
//! state machines.

pub mod artwork;
pub mod calibration;
pub mod console;
pub mod control;
pub mod coordination;
pub mod evaluation;
pub mod format;
pub mod geometry;
pub mod simulator;
