//! CPU-only RGB-D visual odometry for dynamic scenes.
//!
//! The tracking thread propagates dynamic-object masks from stale detector
//! output (sample, track, cluster, predict), tracks static points with
//! sparse optical flow on non-keyframes, and falls back to ORB feature
//! tracking on keyframes. A semantic worker thread turns detector bounding
//! boxes into depth-segmented masks behind single-slot latest-wins buffers.
//!
//! Supporting modules cover TUM-format dataset I/O, a deterministic
//! synthetic RGB-D scene generator, and ATE/RPE/timing evaluation.


pub mod dataset;

pub mod flow;
pub mod geometry;


pub mod segmentation;




pub use dataset::{Detection, Frame, Trajectory};
pub use geometry::{CameraIntrinsics, DepthImage, GrayImage, PoseSE3};
pub use segmentation::BinaryMask;
