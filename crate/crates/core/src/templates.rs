//! Sign shape templates and conversion between annotated boundary corners
//! and template vertices.
//!
//! A template lives in the unit square. Its four template vertices are the
//! square's corners; its boundary corners are the actual polygon of the sign.
//! Boundaries run clockwise in image coordinates (y down), starting from the
//! corner nearest the template origin.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{homography_from_correspondences, project, Point2, Quad};

/// Cut length of the regular octagon inscribed in the unit square.
pub const OCTAGON_CUT: f64 = 0.292_893_218_813_452_5; // 1 / (2 + √2)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Background,
    Rectangle,
    Diamond,
    Octagon,
}

impl ShapeClass {
    /// Classes in logit order; index 0 is background.
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Background,
        ShapeClass::Rectangle,
        ShapeClass::Diamond,
        ShapeClass::Octagon,
    ];
    /// Shapes that carry a template.
    pub const SIGNS: [ShapeClass; 3] = [ShapeClass::Rectangle, ShapeClass::Diamond, ShapeClass::Octagon];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            ShapeClass::Background => 0,
            ShapeClass::Rectangle => 1,
            ShapeClass::Diamond => 2,
            ShapeClass::Octagon => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<ShapeClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Background => "background",
            ShapeClass::Rectangle => "rectangle",
            ShapeClass::Diamond => "diamond",
            ShapeClass::Octagon => "octagon",
        }
    }

    /// Number of boundary corners of the builtin template.
    pub fn corner_count(self) -> Option<usize> {
        match self {
            ShapeClass::Background => None,
            ShapeClass::Rectangle | ShapeClass::Diamond => Some(4),
            ShapeClass::Octagon => Some(8),
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A shape's normalized boundary polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTemplate {
    pub shape: ShapeClass,
    pub corners: Vec<Point2>,
}

impl ShapeTemplate {
    /// Validating constructor for user-supplied templates.
    pub fn new(shape: ShapeClass, corners: Vec<Point2>) -> Result<Self> {
        let t = ShapeTemplate { shape, corners };
        t.validate()?;
        Ok(t)
    }

    pub fn corner_count(&self) -> usize {
        self.corners.len()
    }

    /// Checks that corners sit in the unit square and form a convex,
    /// clockwise polygon starting at the corner nearest the origin.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTemplate(format!("{}: {msg}", self.shape)));
        if self.shape == ShapeClass::Background {
            return bad("background has no template".into());
        }
        let m = self.corners.len();
        if m < 3 {
            return bad(format!("{m} corners"));
        }
        const EPS: f64 = 1e-12;
        if self.corners.iter().any(|c| {
            !c.is_finite() || c.x < -EPS || c.y < -EPS || c.x > 1.0 + EPS || c.y > 1.0 + EPS
        }) {
            return bad("corner outside the unit square".into());
        }
        let origin = Point2::new(0.0, 0.0);
        let d0 = self.corners[0].distance(&origin);
        if self.corners.iter().any(|c| c.distance(&origin) < d0 - EPS) {
            return bad("first corner is not the one nearest (0,0)".into());
        }
        // y points down, so a positive cross product is a clockwise turn on screen.
        for i in 0..m {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % m];
            let c = self.corners[(i + 2) % m];
            let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
            if cross <= EPS {
                return bad(format!("not strictly convex clockwise at corner {}", (i + 1) % m));
            }
        }
        let winding: f64 = (0..m)
            .map(|i| {
                let a = self.corners[i];
                let b = self.corners[(i + 1) % m];
                a.x * b.y - b.x * a.y
            })
            .sum();
        // A convex polygon that turns the same way at every corner is simple
        // only if it winds around once.
        let turning: f64 = (0..m)
            .map(|i| {
                let a = self.corners[i];
                let b = self.corners[(i + 1) % m];
                let c = self.corners[(i + 2) % m];
                let e1 = (b.y - a.y).atan2(b.x - a.x);
                let e2 = (c.y - b.y).atan2(c.x - b.x);
                let mut d = e2 - e1;
                while d <= -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                d
            })
            .sum();
        if winding <= 0.0 || (turning - 2.0 * std::f64::consts::PI).abs() > 1e-6 {
            return bad("polygon is not simple".into());
        }
        Ok(())
    }

    /// Image-space template vertices from annotated boundary corners.
    ///
    /// Uses every corner correspondence; with more than four corners the
    /// homography is the normalized least-squares DLT solution.
    pub fn boundary_to_vertices(&self, boundary: &[Point2]) -> Result<Quad> {
        if boundary.len() != self.corners.len() {
            return Err(Error::InconsistentShapes(format!(
                "{} boundary has {} corners, template has {}",
                self.shape,
                boundary.len(),
                self.corners.len()
            )));
        }
        if self.corners == Quad::UNIT.0 {
            // the template is the unit square itself, so the mapping is exact
            return Ok(Quad([boundary[0], boundary[1], boundary[2], boundary[3]]));
        }
        let h = homography_from_correspondences(&self.corners, boundary)?;
        h.project_quad(&Quad::UNIT)
    }

    /// Image-space boundary corners from template vertices.
    pub fn vertices_to_boundary(&self, quad: &Quad) -> Result<Vec<Point2>> {
        let h = homography_from_correspondences(&Quad::UNIT.0, &quad.0)?;
        if self.corners == Quad::UNIT.0 {
            return Ok(quad.0.to_vec());
        }
        project(&h, &self.corners)
    }
}

/// Builtin template for a sign shape.
pub fn builtin_template(shape: ShapeClass) -> Result<ShapeTemplate> {
    let p = Point2::new;
    let corners = match shape {
        ShapeClass::Background => return Err(Error::NoTemplate(shape.to_string())),
        ShapeClass::Rectangle => Quad::UNIT.0.to_vec(),
        ShapeClass::Diamond => vec![p(0.5, 0.0), p(1.0, 0.5), p(0.5, 1.0), p(0.0, 0.5)],
        ShapeClass::Octagon => {
            let a = OCTAGON_CUT;
            let b = 1.0 - a;
            vec![
                p(a, 0.0),
                p(b, 0.0),
                p(1.0, a),
                p(1.0, b),
                p(b, 1.0),
                p(a, 1.0),
                p(0.0, b),
                p(0.0, a),
            ]
        }
    };
    Ok(ShapeTemplate { shape, corners })
}

pub fn boundary_to_template_vertices(boundary: &[Point2], shape: ShapeClass) -> Result<Quad> {
    builtin_template(shape)?.boundary_to_vertices(boundary)
}

pub fn template_vertices_to_boundary(quad: &Quad, shape: ShapeClass) -> Result<Vec<Point2>> {
    builtin_template(shape)?.vertices_to_boundary(quad)
}

/// A set of templates keyed by shape; the JSON form is
/// `{"templates": [{"shape": "...", "corners": [[x, y], ...]}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: Vec<ShapeTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            templates: ShapeClass::SIGNS
                .iter()
                .map(|&s| builtin_template(s).expect("sign shapes have templates"))
                .collect(),
        }
    }
}

impl TemplateSet {
    pub fn get(&self, shape: ShapeClass) -> Result<&ShapeTemplate> {
        self.templates
            .iter()
            .find(|t| t.shape == shape)
            .ok_or_else(|| Error::NoTemplate(shape.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: TemplateSet = serde_json::from_str(s)?;
        for t in &set.templates {
            t.validate()?;
        }
        Ok(set)
    }
}

/// An annotated sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSign {
    pub shape: ShapeClass,
    pub boundary: Vec<Point2>,
    pub template_vertices: Quad,
    #[serde(default)]
    pub difficult: bool,
}

impl GroundTruthSign {
    pub fn from_boundary(shape: ShapeClass, boundary: Vec<Point2>, difficult: bool) -> Result<Self> {
        let template_vertices = boundary_to_template_vertices(&boundary, shape)?;
        Ok(Self {
            shape,
            boundary,
            template_vertices,
            difficult,
        })
    }

    pub fn from_vertices(shape: ShapeClass, quad: Quad, difficult: bool) -> Result<Self> {
        let boundary = template_vertices_to_boundary(&quad, shape)?;
        Ok(Self {
            shape,
            boundary,
            template_vertices: quad,
            difficult,
        })
    }

    pub fn bbox(&self) -> crate::geometry::AABox {
        self.template_vertices.bbox()
    }
}
