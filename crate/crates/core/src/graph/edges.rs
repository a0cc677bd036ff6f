//! Spatial edge rule and edge weights.
//!
//! Two elements are connected when their centers are closer than a quarter of
//! the screen diagonal or their boxes overlap with IoU above 0.1. The weight
//! mixes distance similarity, type agreement and overlap.

use super::manifest::BBox;
use super::Node;

pub const DISTANCE_FRACTION: f64 = 0.25;
pub const IOU_THRESHOLD: f64 = 0.1;
pub const WEIGHT_DISTANCE: f64 = 0.6;
pub const WEIGHT_TYPE: f64 = 0.3;
pub const WEIGHT_IOU: f64 = 0.1;

pub fn distance_threshold(dims: (f64, f64)) -> f64 {
    DISTANCE_FRACTION * (dims.0 * dims.0 + dims.1 * dims.1).sqrt()
}

pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

pub fn edge_criterion(a: &Node, b: &Node, dims: (f64, f64)) -> bool {
    center_distance(&a.bbox, &b.bbox) < distance_threshold(dims) || iou(&a.bbox, &b.bbox) > IOU_THRESHOLD
}

/// Weight in (0, 1] for a pair satisfying [`edge_criterion`].
pub fn edge_weight(a: &Node, b: &Node, dims: (f64, f64)) -> f64 {
    let dist_sim = (1.0 - center_distance(&a.bbox, &b.bbox) / distance_threshold(dims)).max(0.0);
    let type_sim = if a.elem_type == b.elem_type { 1.0 } else { 0.0 };
    WEIGHT_DISTANCE * dist_sim + WEIGHT_TYPE * type_sim + WEIGHT_IOU * iou(&a.bbox, &b.bbox)
}
