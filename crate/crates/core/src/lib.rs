pub mod classical;
pub mod gridnet;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod slicing;
pub mod tensor;
pub mod trainer;
