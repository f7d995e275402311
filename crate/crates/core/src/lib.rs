pub mod mdp;
pub mod numeric;
pub mod rational;
pub mod staircase;
pub mod bellman;
pub mod approx;
pub mod exact;
pub mod linear;
pub mod acyclic;
pub mod tree;
pub mod policy;
pub mod ssg;
