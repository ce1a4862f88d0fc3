pub mod numcore;
pub mod seed;
pub mod tree;
pub mod treebank;
pub mod decoder;
pub mod model;
pub mod synthetic;
pub mod analysis;
pub mod trainer;
