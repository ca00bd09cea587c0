pub mod error;
pub mod fft;
pub mod grid;
pub mod par;
pub mod riesz;
pub mod energy;
pub mod fiber;
pub mod bubble;
pub mod regularity;
pub mod solver;
pub mod cli;
