//! Multi-scale default boxes and the regression codecs.
//!
//! Each default box contributes four corners `p_d` (TL, TR, BR, BL). The
//! vertex codec stores the offsets `p_t - p_d` to the four template vertices,
//! optionally divided by the box width and height. The box codec does the
//! same for `(left, top, right, bottom)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AABox, Point2, Quad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub input_width: u32,
    pub input_height: u32,
    pub layer_strides: Vec<u32>,
    pub aspect_ratios: Vec<f64>,
    /// Box side at ratio 1 is `scale_factor * stride`.
    pub scale_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            input_width: 800,
            input_height: 450,
            layer_strides: vec![8, 16, 32, 64, 128, 256],
            aspect_ratios: vec![1.0, 2.0, 3.0, 0.5, 1.0 / 3.0],
            scale_factor: 4.0,
        }
    }
}

impl GridSpec {
    pub fn with_input(width: u32, height: u32) -> Self {
        GridSpec {
            input_width: width,
            input_height: height,
            ..GridSpec::default()
        }
    }

    /// Same layers and ratios for a different input size, dropping strides
    /// larger than the input's shorter side.
    pub fn fitted_to(&self, width: u32, height: u32) -> Self {
        let limit = width.min(height);
        GridSpec {
            input_width: width,
            input_height: height,
            layer_strides: self.layer_strides.iter().copied().filter(|&s| s <= limit).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.input_width == 0 || self.input_height == 0 {
            return bad("input dimensions must be positive");
        }
        if self.layer_strides.is_empty() {
            return bad("no layer strides");
        }
        if self.layer_strides.contains(&0) {
            return bad("strides must be positive");
        }
        if self.layer_strides.windows(2).any(|w| w[0] >= w[1]) {
            return bad("strides must be strictly ascending");
        }
        if self.aspect_ratios.is_empty() {
            return bad("no aspect ratios");
        }
        if self.aspect_ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("aspect ratios must be positive");
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return bad("scale factor must be positive");
        }
        let largest = *self.layer_strides.last().expect("non-empty");
        if self.input_width < largest || self.input_height < largest {
            return bad("input dimensions are smaller than the largest stride");
        }
        Ok(())
    }

    /// Grid cells (columns, rows) of the layer with the given stride.
    pub fn layer_dims(&self, stride: u32) -> (u32, u32) {
        (self.input_width.div_ceil(stride), self.input_height.div_ceil(stride))
    }

    pub fn box_count(&self) -> usize {
        self.layer_strides
            .iter()
            .map(|&s| {
                let (c, r) = self.layer_dims(s);
                c as usize * r as usize * self.aspect_ratios.len()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub layer_index: usize,
    pub cell_row: u32,
    pub cell_col: u32,
    pub ratio_index: usize,
}

impl DefaultBox {
    pub fn aabox(&self) -> AABox {
        AABox::new(
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn corners(&self) -> Quad {
        self.aabox().corners()
    }
}

/// Default boxes ordered by (layer, row, col, ratio).
pub fn generate_default_boxes(spec: &GridSpec) -> Result<Vec<DefaultBox>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.box_count());
    for (layer_index, &stride) in spec.layer_strides.iter().enumerate() {
        let s = stride as f64;
        let (cols, rows) = spec.layer_dims(stride);
        for row in 0..rows {
            for col in 0..cols {
                for (ratio_index, &r) in spec.aspect_ratios.iter().enumerate() {
                    let root = r.sqrt();
                    out.push(DefaultBox {
                        cx: (col as f64 + 0.5) * s,
                        cy: (row as f64 + 0.5) * s,
                        w: spec.scale_factor * s * root,
                        h: spec.scale_factor * s / root,
                        layer_index,
                        cell_row: row,
                        cell_col: col,
                        ratio_index,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Eight offsets `(dx1, dy1, ..., dx4, dy4)`, one 2-vector per template vertex.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegressionVector(pub [f64; 8]);

impl RegressionVector {
    pub fn vertex(&self, i: usize) -> [f64; 2] {
        [self.0[2 * i], self.0[2 * i + 1]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Vertex and box regression codec.
///
/// With `normalize` set, offsets are divided by the default box's width (x)
/// and height (y); without it they are raw pixel differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionCodec {
    pub normalize: bool,
}

impl Default for RegressionCodec {
    fn default() -> Self {
        RegressionCodec { normalize: true }
    }
}

impl RegressionCodec {
    pub const RAW: RegressionCodec = RegressionCodec { normalize: false };
    pub const NORMALIZED: RegressionCodec = RegressionCodec { normalize: true };

    fn scales(&self, b: &DefaultBox) -> (f64, f64) {
        if self.normalize {
            (b.w, b.h)
        } else {
            (1.0, 1.0)
        }
    }

    pub fn encode_vertices(&self, target: &Quad, b: &DefaultBox) -> RegressionVector {
        let (sx, sy) = self.scales(b);
        let d = b.corners();
        let mut out = [0.0; 8];
        for i in 0..4 {
            out[2 * i] = (target.0[i].x - d.0[i].x) / sx;
            out[2 * i + 1] = (target.0[i].y - d.0[i].y) / sy;
        }
        RegressionVector(out)
    }

    pub fn decode_vertices(&self, dp: &RegressionVector, b: &DefaultBox) -> Quad {
        let (sx, sy) = self.scales(b);
        let d = b.corners();
        let mut q = d;
        for i in 0..4 {
            q.0[i] = Point2::new(d.0[i].x + dp.0[2 * i] * sx, d.0[i].y + dp.0[2 * i + 1] * sy);
        }
        q
    }

    pub fn encode_box(&self, target: &AABox, b: &DefaultBox) -> [f64; 4] {
        let (sx, sy) = self.scales(b);
        let d = b.aabox();
        [
            (target.left - d.left) / sx,
            (target.top - d.top) / sy,
            (target.right - d.right) / sx,
            (target.bottom - d.bottom) / sy,
        ]
    }

    pub fn decode_box(&self, delta: &[f64; 4], b: &DefaultBox) -> AABox {
        let (sx, sy) = self.scales(b);
        let d = b.aabox();
        AABox::new(
            d.left + delta[0] * sx,
            d.top + delta[1] * sy,
            d.right + delta[2] * sx,
            d.bottom + delta[3] * sy,
        )
    }
}

pub fn encode_vertices(target: &Quad, b: &DefaultBox) -> RegressionVector {
    RegressionCodec::default().encode_vertices(target, b)
}

pub fn decode_vertices(dp: &RegressionVector, b: &DefaultBox) -> Quad {
    RegressionCodec::default().decode_vertices(dp, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn box_at(left: f64, top: f64, w: f64, h: f64) -> DefaultBox {
        DefaultBox {
            cx: left + w / 2.0,
            cy: top + h / 2.0,
            w,
            h,
            layer_index: 0,
            cell_row: 0,
            cell_col: 0,
            ratio_index: 0,
        }
    }

    #[test]
    fn single_cell_grid() {
        let spec = GridSpec {
            input_width: 256,
            input_height: 256,
            layer_strides: vec![256],
            aspect_ratios: vec![1.0],
            scale_factor: 4.0,
        };
        let boxes = generate_default_boxes(&spec).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].cx, boxes[0].cy, boxes[0].w, boxes[0].h), (128.0, 128.0, 1024.0, 1024.0));
    }

    #[test]
    fn grid_counts_use_ceiling() {
        let spec = GridSpec {
            layer_strides: vec![8],
            aspect_ratios: vec![1.0],
            ..GridSpec::default()
        };
        assert_eq!(spec.layer_dims(8), (100, 57));
        let boxes = generate_default_boxes(&spec).unwrap();
        assert_eq!(boxes.len(), 100 * 57);
        let last = boxes.last().unwrap();
        assert_eq!((last.cell_row, last.cell_col), (56, 99));
        assert_eq!(last.cy, 56.5 * 8.0);

        let full = GridSpec::default();
        let expected: usize = [8u32, 16, 32, 64, 128, 256]
            .iter()
            .map(|&s| 5 * ((800 + s - 1) / s) as usize * ((450 + s - 1) / s) as usize)
            .sum();
        assert_eq!(generate_default_boxes(&full).unwrap().len(), expected);
        assert_eq!(expected, 38_325);
    }

    #[test]
    fn ratio_geometry_and_order() {
        let boxes = generate_default_boxes(&GridSpec::default()).unwrap();
        let b2 = boxes[1];
        assert_eq!(b2.ratio_index, 1);
        assert!((b2.w / b2.h - 2.0).abs() < 1e-12);
        assert!((b2.w * b2.h - 32.0 * 32.0).abs() < 1e-9);
        let again = generate_default_boxes(&GridSpec::default()).unwrap();
        assert_eq!(boxes, again);
        let q = boxes[7].corners();
        assert!(q.0[0].x < q.0[1].x && q.0[1].y < q.0[2].y && q.0[3].x < q.0[2].x);
    }

    #[test]
    fn invalid_specs() {
        let mut s = GridSpec::default();
        s.input_width = 0;
        assert!(matches!(generate_default_boxes(&s), Err(Error::InvalidSpec(_))));
        let mut s = GridSpec::default();
        s.layer_strides = vec![16, 8];
        assert!(generate_default_boxes(&s).is_err());
        let mut s = GridSpec::default();
        s.aspect_ratios = vec![1.0, -2.0];
        assert!(generate_default_boxes(&s).is_err());
        let s = GridSpec::with_input(200, 200);
        assert!(generate_default_boxes(&s).is_err());
    }

    #[test]
    fn codec_examples() {
        let b = box_at(0.0, 0.0, 100.0, 100.0);
        let codec = RegressionCodec::default();
        assert_eq!(codec.encode_vertices(&b.corners(), &b), RegressionVector([0.0; 8]));
        let shifted = b.corners().translate(10.0, 0.0);
        let dp = codec.encode_vertices(&shifted, &b);
        for i in 0..4 {
            assert!((dp.vertex(i)[0] - 0.1).abs() < 1e-15 && dp.vertex(i)[1] == 0.0);
        }
        assert_eq!(codec.decode_vertices(&RegressionVector([0.0; 8]), &b), b.corners());
        let mut tenth = [0.0; 8];
        for i in 0..4 {
            tenth[2 * i] = 0.1;
        }
        let q = codec.decode_vertices(&RegressionVector(tenth), &b);
        assert!(q.max_corner_distance(&shifted) < 1e-12);

        let raw = RegressionCodec::RAW.encode_vertices(&shifted, &b);
        assert!((raw.0[0] - 10.0).abs() < 1e-12);

        assert_eq!(codec.encode_box(&b.aabox(), &b), [0.0; 4]);
        let d = codec.encode_box(&b.aabox().translate(10.0, 0.0), &b);
        assert!((d[0] - 0.1).abs() < 1e-15 && d[1] == 0.0 && (d[2] - 0.1).abs() < 1e-15 && d[3] == 0.0);
    }

    fn arb_box() -> impl Strategy<Value = DefaultBox> {
        (-500.0..1500.0f64, -500.0..1500.0f64, 1.0..1000.0f64, 1.0..1000.0f64)
            .prop_map(|(l, t, w, h)| box_at(l, t, w, h))
    }

    proptest! {
        #[test]
        fn vertex_codec_round_trip(b in arb_box(), normalize in any::<bool>(),
                                   coords in prop::array::uniform8(-2000.0..2000.0f64)) {
            let codec = RegressionCodec { normalize };
            let q = Quad([
                Point2::new(coords[0], coords[1]), Point2::new(coords[2], coords[3]),
                Point2::new(coords[4], coords[5]), Point2::new(coords[6], coords[7]),
            ]);
            let back = codec.decode_vertices(&codec.encode_vertices(&q, &b), &b);
            for (a, c) in back.0.iter().zip(&q.0) {
                prop_assert!((a.x - c.x).abs() <= 1e-12 * c.x.abs().max(1.0));
                prop_assert!((a.y - c.y).abs() <= 1e-12 * c.y.abs().max(1.0));
            }
        }

        #[test]
        fn box_codec_round_trip(b in arb_box(), normalize in any::<bool>(),
                                l in -1000.0..1000.0f64, t in -1000.0..1000.0f64,
                                w in 0.0..500.0f64, h in 0.0..500.0f64) {
            let codec = RegressionCodec { normalize };
            let target = AABox::new(l, t, l + w, t + h);
            let back = codec.decode_box(&codec.encode_box(&target, &b), &b);
            for (a, c) in [(back.left, l), (back.top, t), (back.right, l + w), (back.bottom, t + h)] {
                prop_assert!((a - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }
    }
}
