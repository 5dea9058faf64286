pub mod distill;
pub mod eval;
pub mod gradcheck;
pub mod run;
pub mod sim;
pub mod synth;
