use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::anchors::{GridSpec, RegressionCodec, RegressionVector};
use crate::augment::AnnotatedImage;
use crate::detector::{BoxPrediction, Detection, PredictionGrid};
use crate::error::{Error, Result};
use crate::evalkit::EvalImage;
use crate::geometry::{Point2, Quad};
use crate::templates::{GroundTruthSign, ShapeClass};

/// One annotated sign as stored on disk. `template_vertices` may be omitted
/// and is then derived from the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignRecord {
    pub shape: ShapeClass,
    pub boundary: Vec<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_vertices: Option<Quad>,
    #[serde(default)]
    pub difficult: bool,
}

impl SignRecord {
    pub fn to_sign(&self) -> Result<GroundTruthSign> {
        let expected = self
            .shape
            .corner_count()
            .ok_or_else(|| Error::Format("background is not a sign shape".into()))?;
        if self.boundary.len() != expected {
            return Err(Error::Format(format!(
                "{} needs {expected} boundary corners, got {}",
                self.shape.name(),
                self.boundary.len()
            )));
        }
        match self.template_vertices {
            Some(q) => Ok(GroundTruthSign {
                shape: self.shape,
                boundary: self.boundary.clone(),
                template_vertices: q,
                difficult: self.difficult,
            }),
            None => GroundTruthSign::from_boundary(self.shape, self.boundary.clone(), self.difficult),
        }
    }
}

impl From<&GroundTruthSign> for SignRecord {
    fn from(s: &GroundTruthSign) -> Self {
        SignRecord {
            shape: s.shape,
            boundary: s.boundary.clone(),
            template_vertices: Some(s.template_vertices),
            difficult: s.difficult,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub signs: Vec<SignRecord>,
}

/// Annotation file: `{"images": [{id, width, height, signs: [...]}]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetFile {
    pub images: Vec<DatasetImage>,
}

impl DatasetFile {
    pub fn from_images(images: &[AnnotatedImage]) -> DatasetFile {
        DatasetFile {
            images: images
                .iter()
                .map(|img| DatasetImage {
                    id: img.id.clone(),
                    width: img.width,
                    height: img.height,
                    signs: img.signs.iter().map(SignRecord::from).collect(),
                })
                .collect(),
        }
    }

    /// Validate and convert to in-memory annotations.
    pub fn to_images(&self) -> Result<Vec<AnnotatedImage>> {
        self.images
            .iter()
            .map(|img| {
                if img.width == 0 || img.height == 0 {
                    return Err(Error::Format(format!("image {:?} has zero size", img.id)));
                }
                let signs = img
                    .signs
                    .iter()
                    .map(SignRecord::to_sign)
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Format(format!("image {:?}: {e}", img.id)))?;
                Ok(AnnotatedImage {
                    id: img.id.clone(),
                    width: img.width,
                    height: img.height,
                    signs,
                })
            })
            .collect()
    }

    pub fn from_json(s: &str) -> Result<DatasetFile> {
        let f: DatasetFile = serde_json::from_str(s)?;
        f.to_images()?;
        Ok(f)
    }
}

/// Which input a prediction grid was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    #[default]
    Full,
    /// Centered half-size crop at native resolution.
    Crop,
    /// Full frame at half resolution.
    Half,
}

/// Predictions for one image (or one view of it). `width`/`height` are those
/// of the original image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub id: String,
    #[serde(default)]
    pub view: View,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub records: Vec<BoxPrediction>,
}

/// Prediction file. Records are in default-box order. When `sidecar` names a
/// file, `records` are left empty in the JSON and stored there instead as
/// little-endian `f32` values: per image, per box, `class_count` logits then
/// the 8 regression values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub grid_spec: GridSpec,
    pub class_count: usize,
    #[serde(default)]
    pub codec: RegressionCodec,
    pub images: Vec<ImagePredictions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
}

impl PredictionFile {
    pub fn grid(&self, index: usize) -> Result<PredictionGrid> {
        let img = self
            .images
            .get(index)
            .ok_or_else(|| Error::Format(format!("no image at index {index}")))?;
        let expected = self.grid_spec.box_count();
        if img.records.len() != expected {
            return Err(Error::MisalignedGrid {
                expected,
                found: img.records.len(),
            });
        }
        Ok(PredictionGrid {
            class_count: self.class_count,
            records: img.records.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec.validate()?;
        let expected = self.grid_spec.box_count();
        for img in &self.images {
            if img.records.len() != expected {
                return Err(Error::MisalignedGrid {
                    expected,
                    found: img.records.len(),
                });
            }
            if let Some(r) = img.records.iter().find(|r| r.logits.len() != self.class_count) {
                return Err(Error::InconsistentShapes(format!(
                    "record with {} logits in a {}-class file",
                    r.logits.len(),
                    self.class_count
                )));
            }
        }
        Ok(())
    }
}

/// Move all records into `out` as little-endian f32 and clear them.
pub fn write_sidecar<W: Write>(file: &mut PredictionFile, mut out: W) -> Result<()> {
    for img in &mut file.images {
        for r in img.records.drain(..) {
            for v in r.logits.iter().chain(r.dp.0.iter()) {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Fill every image's records from a sidecar stream.
pub fn read_sidecar<R: Read>(file: &mut PredictionFile, mut input: R) -> Result<()> {
    let n = file.grid_spec.box_count();
    let per_record = file.class_count + 8;
    let mut buf = vec![0u8; per_record * 4];
    for img in &mut file.images {
        img.records.clear();
        img.records.reserve(n);
        for _ in 0..n {
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated sidecar: {e}")))?;
            let vals: Vec<f64> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let mut dp = [0.0; 8];
            dp.copy_from_slice(&vals[file.class_count..]);
            img.records.push(BoxPrediction {
                logits: vals[..file.class_count].to_vec(),
                dp: RegressionVector(dp),
            });
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("sidecar has trailing data".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

/// Detector output: `{"images": [{id, width, height, detections: [...]}]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionFile {
    pub images: Vec<ImageDetections>,
}

impl DetectionFile {
    /// Pair detections with annotations by image id. Images without a
    /// detection entry are evaluated with no detections.
    pub fn pair_with(&self, gt: &[AnnotatedImage]) -> Result<Vec<EvalImage>> {
        for d in &self.images {
            if !gt.iter().any(|g| g.id == d.id) {
                return Err(Error::Format(format!("detections for unknown image {:?}", d.id)));
            }
        }
        Ok(gt
            .iter()
            .map(|g| EvalImage {
                id: g.id.clone(),
                width: g.width,
                height: g.height,
                detections: self
                    .images
                    .iter()
                    .find(|d| d.id == g.id)
                    .map(|d| d.detections.clone())
                    .unwrap_or_default(),
                ground_truths: g.signs.clone(),
            })
            .collect())
    }
}
