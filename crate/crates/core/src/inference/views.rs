use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::volume::Volume;

/// Mirroring along a subset of the `(x, y, z)` axes of a volume with fixed extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub mirror: [bool; 3],
    pub dims: [usize; 3],
}

impl ViewTransform {
    pub fn identity(dims: [usize; 3]) -> Self {
        ViewTransform {
            mirror: [false; 3],
            dims,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mirror == [false; 3]
    }

    pub fn apply(&self, v: &Volume) -> Volume {
        v.mirrored(self.mirror)
    }

    /// Map a box from the original frame into the view.
    pub fn forward_box(&self, b: &BBox) -> BBox {
        let mut out = *b;
        for a in 0..b.ndim() {
            if self.mirror[a] {
                let e = self.dims[a] as f64;
                out.min[a] = e - b.max[a];
                out.max[a] = e - b.min[a];
            }
        }
        out
    }

    /// Map a box predicted in the view back to the original frame.
    pub fn inverse_box(&self, b: &BBox) -> BBox {
        // Mirrors are involutions.
        self.forward_box(b)
    }
}

/// Identity plus three mirrors: x, y and both. z is never mirrored.
pub fn mirror_views(dims: [usize; 3]) -> Vec<ViewTransform> {
    [[false, false], [true, false], [false, true], [true, true]]
        .into_iter()
        .map(|[x, y]| ViewTransform {
            mirror: [x, y, false],
            dims,
        })
        .collect()
}
