//! Exact equilibrium computation for linear exchange markets.
//!
//! Each of `n` agents owns one unit of a distinct good and has linear
//! utilities over a subset of the goods. The solver finds exact rational
//! prices and a money flow such that every good is fully sold, every agent
//! spends their whole budget, and money moves only along best-bang-per-buck
//! edges. All arithmetic is over arbitrary precision rationals; there is no
//! floating point anywhere in the solver path.
//!
//! The top-level entry point is [`driver::solve`]. The submodules expose the
//! building blocks: market model and validation ([`market`]), max-flow and
//! balanced flows ([`flow`]), the scaling subroutine ([`dm`]), the reduced
//! price LP ([`lpbuild`]), its two-variable relaxation ([`zplus`],
//! [`m2vpi`]), the price boost step ([`boost`]) and an independent simplex
//! based checker ([`oracle`]).

// Index loops over parallel agent/good arrays are the house style here;
// iterator-chain rewrites obscure which side of the bipartite graph is meant.
#![allow(clippy::needless_range_loop)]

pub mod boost;
pub mod dm;
pub mod driver;
pub mod flow;
pub mod lpbuild;
pub mod m2vpi;
pub mod market;
pub mod oracle;
pub mod rational;
pub mod zplus;

pub use rational::Rat;
