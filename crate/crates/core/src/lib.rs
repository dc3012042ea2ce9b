//! Finite-difference solvers for elliptic equations in double-divergence
//! form, `∂²ᵢⱼ(aⁱʲ(x)u) = 0`, together with tools that measure how fast
//! solutions decay at their zero level-set and how fast gradients decay where
//! both the solution and its gradient vanish.

pub mod assemble;
pub mod banded;
pub mod cli;
pub mod coeff;
pub mod grid;
pub mod oracle;
pub mod regmeter;
