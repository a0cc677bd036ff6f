//! Detection manifests: the per-screen document an upstream detector emits.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "screen_id": "login_000001",
//!   "width": 1920, "height": 1080,
//!   "elements": [
//!     {"type": "Button", "bbox": [0, 0, 100, 50], "confidence": 0.97, "text": "Sign in"}
//!   ],
//!   "visual_vec": [0.1, 0.2],
//!   "intent_label": "login"
//! }
//! ```

use serde::{Deserialize, Serialize};

use super::element::ElementType;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn scale(&self, s: f64) -> BBox {
        BBox::new(self.x_min * s, self.y_min * s, self.x_max * s, self.y_max * s)
    }

    fn clamp(&self, w: f64, h: f64) -> BBox {
        BBox::new(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub elem_type: ElementType,
    pub bbox: BBox,
    pub confidence: f64,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionManifest {
    pub screen_id: String,
    pub width: f64,
    pub height: f64,
    pub elements: Vec<Detection>,
    pub visual_vec: Option<Vec<f32>>,
    pub intent_label: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("invalid screen dimensions {width}x{height}: both must be positive")]
    Dimensions { width: f64, height: f64 },
    #[error("element {index} ({elem_type}): {reason}")]
    Element { index: usize, elem_type: String, reason: String },
    #[error("visual_vec contains non-finite values")]
    VisualVec,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Detections below this confidence are dropped at load.
    pub confidence_threshold: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawElement {
    #[serde(rename = "type")]
    elem_type: String,
    bbox: [f64; 4],
    #[serde(default = "one")]
    confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn current_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default = "current_version")]
    schema_version: u32,
    screen_id: String,
    width: f64,
    height: f64,
    elements: Vec<RawElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual_vec: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent_label: Option<String>,
}

/// Parses and validates a manifest with the default confidence threshold.
pub fn load_manifest(raw: &[u8]) -> Result<DetectionManifest, ManifestError> {
    load_manifest_with(raw, LoadOptions::default())
}

pub fn load_manifest_with(raw: &[u8], opts: LoadOptions) -> Result<DetectionManifest, ManifestError> {
    let doc: RawManifest = serde_json::from_slice(raw).map_err(|e| ManifestError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ManifestError::Version(doc.schema_version));
    }
    let (w, h) = (doc.width, doc.height);
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(ManifestError::Dimensions { width: w, height: h });
    }
    if let Some(v) = &doc.visual_vec {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ManifestError::VisualVec);
        }
    }

    let mut elements = Vec::with_capacity(doc.elements.len());
    for (index, el) in doc.elements.into_iter().enumerate() {
        let bad = |reason: String| ManifestError::Element {
            index,
            elem_type: el.elem_type.clone(),
            reason,
        };
        let elem_type: ElementType = el.elem_type.parse().map_err(|_| {
            bad(format!("unknown element type; valid types: {}", ElementType::valid_names()))
        })?;
        if !(0.0..=1.0).contains(&el.confidence) {
            return Err(bad(format!("confidence {} outside [0, 1]", el.confidence)));
        }
        let [x1, y1, x2, y2] = el.bbox;
        if el.bbox.iter().any(|v| !v.is_finite()) {
            return Err(bad("bbox has non-finite coordinates".into()));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(bad(format!(
                "bbox [{x1}, {y1}, {x2}, {y2}] requires x_min < x_max and y_min < y_max"
            )));
        }
        let bbox = BBox::new(x1, y1, x2, y2).clamp(w, h);
        if bbox.width() <= 0.0 || bbox.height() <= 0.0 {
            return Err(bad(format!("bbox [{x1}, {y1}, {x2}, {y2}] lies outside the {w}x{h} screen")));
        }
        if el.confidence < opts.confidence_threshold {
            continue;
        }
        elements.push(Detection { elem_type, bbox, confidence: el.confidence, text: el.text });
    }

    Ok(DetectionManifest {
        screen_id: doc.screen_id,
        width: w,
        height: h,
        elements,
        visual_vec: doc.visual_vec,
        intent_label: doc.intent_label,
    })
}

impl DetectionManifest {
    /// Serializes in the documented schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("manifest serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("manifest serializes")
    }

    /// JSON value in the documented schema, for embedding in API responses.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("manifest serializes")
    }

    fn to_raw(&self) -> RawManifest {
        RawManifest {
            schema_version: SCHEMA_VERSION,
            screen_id: self.screen_id.clone(),
            width: self.width,
            height: self.height,
            elements: self
                .elements
                .iter()
                .map(|d| RawElement {
                    elem_type: d.elem_type.name().to_string(),
                    bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
                    confidence: d.confidence,
                    text: d.text.clone(),
                })
                .collect(),
            visual_vec: self.visual_vec.clone(),
            intent_label: self.intent_label.clone(),
        }
    }

    /// Per-type element counts, indexed by [`ElementType::index`].
    pub fn type_counts(&self) -> [u32; super::NUM_ELEMENT_TYPES] {
        let mut counts = [0u32; super::NUM_ELEMENT_TYPES];
        for d in &self.elements {
            counts[d.elem_type.index()] += 1;
        }
        counts
    }

    /// All element texts joined by spaces, in manifest order.
    pub fn joined_text(&self) -> String {
        self.elements
            .iter()
            .filter_map(|d| d.text.as_deref())
            .collect::<Vec<_>>()
            .join(" ")
    }
}
