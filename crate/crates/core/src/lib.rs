pub mod branch_cut;
pub mod fusion;
pub mod imagegraph;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod scribble;
pub mod separation;
