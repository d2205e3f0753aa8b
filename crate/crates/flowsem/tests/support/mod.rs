pub mod fixtures;
pub mod golden;
pub mod logistic;
