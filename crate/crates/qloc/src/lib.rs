//! Exact solver for congested facility location.
//!
//! The problem: choose which facilities to open, how fast each one should
//! work, and which customer zone each facility serves. Every open facility
//! behaves as an M/G/1 queue, so waiting time couples the assignment and
//! sizing decisions nonlinearly. The library reformulates the whole problem
//! as a mixed-integer second-order cone program, strengthens it with valid
//! inequalities and lift-and-project cuts, and solves it with branch-and-bound
//! over a built-in conic interior-point engine. A brute-force oracle for tiny
//! instances is included for verification.
//!
//! Module map:
//! - [`instance`]: problem data, JSON I/O, seeded synthetic generator
//! - [`queueing`]: M/G/1 waiting-time formulas and service-time variance
//! - [`conic`]: conic program IR, SOC gadgets, point evaluation, export
//! - [`socp`]: interior-point engine for continuous relaxations
//! - [`formulations`]: the mixed-integer conic models
//! - [`cuts`]: valid inequalities and lift-and-project separation
//! - [`bnb`]: branch-and-bound driver and solution reports
//! - [`oracle`]: exhaustive reference solver

pub mod bnb;
pub mod conic;
pub mod cuts;
pub mod formulations;
pub mod instance;
pub mod oracle;
pub mod queueing;
pub mod socp;
