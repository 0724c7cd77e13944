pub mod corpus;
pub mod error;
pub mod normalize;
pub mod similarity;
pub mod adjudication;
pub mod matrix;
pub mod clustering;
pub mod characterize;
pub mod render;
pub mod review;
pub mod pipeline;
