use std::collections::BTreeMap;

use super::formats::{DetectionFile, ImageDetections, PredictionFile, View};
use crate::detector::{crop_resize_merge, decode_with_boxes, nms, Detection, DetectorConfig, PredictionGrid};
use crate::anchors::generate_default_boxes;
use crate::error::{Error, Result};

/// Run decode + NMS on every image of a prediction file.
///
/// Full-frame entries are detected directly. Crop and half-resolution
/// entries of the same image id are each decoded, mapped back to full-image
/// coordinates and merged with a joint NMS. The file's codec is used for
/// decoding; `cfg` supplies the thresholds.
pub fn detect_file(file: &PredictionFile, cfg: &DetectorConfig) -> Result<DetectionFile> {
    file.validate()?;
    let boxes = generate_default_boxes(&file.grid_spec)?;
    let decode = |records: &[crate::detector::BoxPrediction]| -> Result<Vec<Detection>> {
        let grid = PredictionGrid {
            class_count: file.class_count,
            records: records.to_vec(),
        };
        decode_with_boxes(&grid, &boxes, &file.codec, cfg.score_threshold)
    };

    // keep first-appearance order of image ids
    let mut order: Vec<String> = Vec::new();
    let mut branches: BTreeMap<String, (u32, u32, Option<Vec<Detection>>, Option<Vec<Detection>>)> = BTreeMap::new();
    let mut full: BTreeMap<String, ImageDetections> = BTreeMap::new();
    for img in &file.images {
        if !order.contains(&img.id) {
            order.push(img.id.clone());
        }
        match img.view {
            View::Full => {
                if full.contains_key(&img.id) || branches.contains_key(&img.id) {
                    return Err(Error::Format(format!("image {:?} listed twice", img.id)));
                }
                let dets = nms(&decode(&img.records)?, cfg.nms_iou);
                full.insert(
                    img.id.clone(),
                    ImageDetections {
                        id: img.id.clone(),
                        width: img.width,
                        height: img.height,
                        detections: dets,
                    },
                );
            }
            View::Crop | View::Half => {
                if full.contains_key(&img.id) {
                    return Err(Error::Format(format!("image {:?} mixes full and branch views", img.id)));
                }
                let entry = branches
                    .entry(img.id.clone())
                    .or_insert((img.width, img.height, None, None));
                let slot = if img.view == View::Crop { &mut entry.2 } else { &mut entry.3 };
                if slot.is_some() {
                    return Err(Error::Format(format!("image {:?} has a duplicate {:?} view", img.id, img.view)));
                }
                *slot = Some(decode(&img.records)?);
            }
        }
    }

    let mut images = Vec::with_capacity(order.len());
    for id in order {
        if let Some(d) = full.remove(&id) {
            images.push(d);
            continue;
        }
        let (w, h, crop, half) = branches.remove(&id).expect("id seen");
        let (Some(crop), Some(half)) = (crop, half) else {
            return Err(Error::Format(format!("image {id:?} needs both crop and half views")));
        };
        images.push(ImageDetections {
            id,
            width: w,
            height: h,
            detections: crop_resize_merge(&crop, &half, w, h, cfg.nms_iou),
        });
    }
    Ok(DetectionFile { images })
}
