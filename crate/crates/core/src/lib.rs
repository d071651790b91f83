pub mod autodiff;
pub mod camera;
pub mod error;
pub mod gradcheck;
pub mod gsplat;
pub mod image;
pub mod mae;
pub mod pointcloud;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
