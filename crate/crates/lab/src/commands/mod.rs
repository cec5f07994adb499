pub mod attn;
pub mod capacity;
pub mod cluster;
pub mod icl;
pub mod landscape;
