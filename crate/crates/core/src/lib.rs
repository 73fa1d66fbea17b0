//! Non-neural core of a traffic sign detector that regresses template
//! vertices (a 2D pose) instead of bounding boxes.
//!
//! A sign is described by the four *template vertices* of its minimum
//! bounding quadrilateral. The homography from the unit template square to
//! those vertices carries the template's boundary corners into the image,
//! which yields the precise sign boundary. The crate covers:
//!
//! - [`geometry`]: homographies, projection, box IoU, two-view DLT triangulation.
//! - [`templates`]: shape templates and boundary/template-vertex conversion.
//! - [`anchors`]: default boxes and the vertex/box regression codecs.
//! - [`targets`]: anchor matching, hard negative mining and the training loss.
//! - [`detector`]: decoding prediction grids, NMS and the crop/resize merge.
//! - [`refine`]: affine boundary refinement against the image gradient.
//! - [`evalkit`]: precision/recall, AP/mAP sweeps and average vertex error.
//! - [`augment`]: perspective and crop augmentation, image pruning.
//! - [`mapsim`]: the two-view sign mapping accuracy simulation.
//! - [`harness`]: file formats, configuration, synthetic scenes and the
//!   oracle predictor standing in for the CNN.

pub mod anchors;
pub mod augment;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod harness;
pub mod mapsim;
pub mod refine;
pub mod rng;
pub mod targets;
pub mod templates;

pub use anchors::{DefaultBox, GridSpec, RegressionCodec, RegressionVector};
pub use detector::{BoxPrediction, Detection, PredictionGrid};
pub use error::{Error, Result};
pub use geometry::{AABox, Homography, Point2, Point3, Quad};
pub use mapsim::{CameraView, SimScene};
pub use templates::{GroundTruthSign, ShapeClass, ShapeTemplate};
