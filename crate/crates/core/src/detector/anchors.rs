use crate::geometry::BBox;

use super::config::DetectorConfig;

/// Anchors for every pyramid level of an input with extent `(x, y, z)`.
///
/// Ordering matches the proposal-network output tensors: level, then anchor
/// type, then cell in `(z, y, x)` raster order.
pub fn generate_anchors(cfg: &DetectorConfig, input: [usize; 3]) -> Vec<Vec<BBox>> {
    let planar = cfg.dimensionality == 2;
    (0..cfg.pyramid_levels)
        .map(|l| {
            let s = cfg.level_stride(l) as f64;
            let sz = cfg.level_z_stride(l);
            let (nx, ny) = (input[0] / cfg.level_stride(l), input[1] / cfg.level_stride(l));
            let nz = if planar { 1 } else { input[2] / sz };
            let mut shapes: Vec<(f64, f64, f64)> = Vec::new();
            for &scale in &cfg.anchors.scales {
                for &ratio in &cfg.anchors.ratios {
                    let base = cfg.anchors.sizes[l] * scale;
                    let w = base / ratio.sqrt();
                    let h = base * ratio.sqrt();
                    if planar {
                        shapes.push((w, h, 1.0));
                    } else {
                        for &d in &cfg.anchors.z_sizes {
                            shapes.push((w, h, d));
                        }
                    }
                }
            }
            let mut out = Vec::with_capacity(shapes.len() * nx * ny * nz);
            for &(w, h, d) in &shapes {
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let cx = (x as f64 + 0.5) * s;
                            let cy = (y as f64 + 0.5) * s;
                            if planar {
                                out.push(BBox::new_2d(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0));
                            } else {
                                let cz = (z as f64 + 0.5) * sz as f64;
                                out.push(BBox::new_3d(
                                    [cx - w / 2.0, cy - h / 2.0, cz - d / 2.0],
                                    [cx + w / 2.0, cy + h / 2.0, cz + d / 2.0],
                                ));
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}
