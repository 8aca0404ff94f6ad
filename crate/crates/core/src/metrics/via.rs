use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::imagecore::{rasterize_polygon, BinaryMask, Polygon};

/// Tumor polygons from a VGG Image Annotator export, keyed by image file
/// name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViaAnnotations {
    images: BTreeMap<String, Vec<Polygon>>,
    /// Regions that were not usable polygons (other shapes, fewer than three
    /// distinct vertices).
    pub skipped_regions: usize,
}

fn base_name(name: &str) -> &str {
    Path::new(name).file_name().and_then(|s| s.to_str()).unwrap_or(name)
}

fn coords(value: Option<&Value>, what: &str) -> Result<Vec<f64>> {
    value
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Annotation(format!("polygon without {what}")))?
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| Error::Annotation(format!("non-numeric entry in {what}"))))
        .collect()
}

impl ViaAnnotations {
    /// Accepts both the plain export (`{key: {filename, regions, ..}}`) and
    /// a project file holding `_via_img_metadata`. `regions` may be a list or
    /// an object keyed by index.
    pub fn parse(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Annotation(e.to_string()))?;
        let entries = root
            .get("_via_img_metadata")
            .unwrap_or(&root)
            .as_object()
            .ok_or_else(|| Error::Annotation("top level is not an object".into()))?;

        let mut out = ViaAnnotations::default();
        for (key, entry) in entries {
            let filename = entry.get("filename").and_then(Value::as_str).unwrap_or(key);
            let regions: Vec<&Value> = match entry.get("regions") {
                Some(Value::Array(list)) => list.iter().collect(),
                Some(Value::Object(map)) => map.values().collect(),
                None | Some(Value::Null) => Vec::new(),
                Some(_) => return Err(Error::Annotation(format!("regions of {filename} are malformed"))),
            };
            let polygons = out.images.entry(base_name(filename).to_string()).or_default();
            for region in regions {
                let shape = region
                    .get("shape_attributes")
                    .ok_or_else(|| Error::Annotation(format!("region of {filename} lacks shape_attributes")))?;
                if shape.get("name").and_then(Value::as_str) != Some("polygon") {
                    out.skipped_regions += 1;
                    continue;
                }
                let xs = coords(shape.get("all_points_x"), "all_points_x")?;
                let ys = coords(shape.get("all_points_y"), "all_points_y")?;
                if xs.len() != ys.len() {
                    return Err(Error::Annotation(format!(
                        "polygon in {filename} has {} x and {} y coordinates",
                        xs.len(),
                        ys.len()
                    )));
                }
                match Polygon::new(xs.into_iter().zip(ys).collect()) {
                    Ok(p) => polygons.push(p),
                    Err(_) => out.skipped_regions += 1,
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Polygons for an image, matched on file name only.
    pub fn polygons_for(&self, image: &str) -> Option<&[Polygon]> {
        self.images.get(base_name(image)).map(Vec::as_slice)
    }

    pub fn image_names(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    /// Union of the image's polygons rasterized on a `width x height` grid,
    /// after scaling coordinates by `(sx, sy)`. `None` when the image has no
    /// annotation entry.
    pub fn tumor_mask(&self, image: &str, width: usize, height: usize, sx: f64, sy: f64) -> Option<BinaryMask> {
        let polygons = self.polygons_for(image)?;
        let mut mask = BinaryMask::new(width, height);
        for p in polygons {
            let raster = rasterize_polygon(&p.scaled(sx, sy).clipped(width, height), width, height);
            mask = mask.union(&raster).expect("same dimensions");
        }
        Some(mask)
    }
}
