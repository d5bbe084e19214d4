//! Scalar intensity volumes and the `.vol` on-disk format.
//!
//! A `.vol` file is the 4-byte magic `VOL1`, a little-endian `u32` header
//! length, a UTF-8 JSON header `{"dtype":"float32","shape":[nx,ny,nz],"spacing":[sx,sy,sz]}`
//! and then `nx*ny*nz` little-endian `f32` values with x varying fastest.
//! 2D images are stored with `nz = 1`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VOL1";

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    pub spacing: [f64; 3],
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: [usize; 3],
    spacing: [f64; 3],
}

impl Volume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Self {
        Volume {
            dims,
            spacing: [1.0; 3],
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_data(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() || dims.contains(&0) {
            return Err(Error::Shape(format!(
                "volume dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Volume {
            dims,
            spacing: [1.0; 3],
            data,
        })
    }

    /// `[nx, ny, nz]`.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn is_2d(&self) -> bool {
        self.dims[2] == 1
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Copy out the block starting at `origin` with extent `shape`.
    pub fn crop(&self, origin: [usize; 3], shape: [usize; 3]) -> Result<Volume> {
        for a in 0..3 {
            if origin[a] + shape[a] > self.dims[a] {
                return Err(Error::Shape(format!(
                    "crop {origin:?}+{shape:?} exceeds volume {:?}",
                    self.dims
                )));
            }
        }
        let mut out = Volume::zeros(shape);
        out.spacing = self.spacing;
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                let src = self.index(origin[0], origin[1] + y, origin[2] + z);
                let dst = out.index(0, y, z);
                out.data[dst..dst + shape[0]].copy_from_slice(&self.data[src..src + shape[0]]);
            }
        }
        Ok(out)
    }

    /// Single z-slice as a 2D volume.
    pub fn slice_z(&self, z: usize) -> Result<Volume> {
        self.crop([0, 0, z], [self.dims[0], self.dims[1], 1])
    }

    /// Reverse the voxel order along each flagged axis.
    pub fn mirrored(&self, flip: [bool; 3]) -> Volume {
        let [nx, ny, nz] = self.dims;
        let mut out = self.clone();
        for z in 0..nz {
            let sz = if flip[2] { nz - 1 - z } else { z };
            for y in 0..ny {
                let sy = if flip[1] { ny - 1 - y } else { y };
                for x in 0..nx {
                    let sx = if flip[0] { nx - 1 - x } else { x };
                    let v = self.get(sx, sy, sz);
                    out.set(x, y, z, v);
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            dtype: "float32".into(),
            shape: self.dims,
            spacing: self.spacing,
        })
        .expect("header serializes");
        let mut buf = Vec::with_capacity(8 + header.len() + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Volume> {
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::format(path, "missing VOL1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + hlen {
            return Err(Error::format(path, "truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if header.dtype != "float32" {
            return Err(Error::format(path, format!("unsupported dtype {}", header.dtype)));
        }
        let n: usize = header.shape.iter().product();
        let payload = &bytes[8 + hlen..];
        if payload.len() != 4 * n {
            return Err(Error::format(
                path,
                format!(
                    "shape {:?} needs {} bytes of payload, found {}",
                    header.shape,
                    4 * n,
                    payload.len()
                ),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut v = Volume::from_data(header.shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        v.spacing = header.spacing;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product();
        Volume::from_data(dims, (0..n).map(|i| i as f32 * 0.5).collect()).unwrap()
    }

    #[test]
    fn mirror_is_an_involution() {
        let v = ramp([5, 4, 3]);
        for flip in [[true, false, false], [false, true, false], [true, true, true]] {
            assert_eq!(v.mirrored(flip).mirrored(flip), v);
        }
        assert_ne!(v.mirrored([true, false, false]), v);
    }

    #[test]
    fn crop_copies_block() {
        let v = ramp([6, 5, 2]);
        let c = v.crop([1, 2, 1], [3, 2, 1]).unwrap();
        assert_eq!(c.get(0, 0, 0), v.get(1, 2, 1));
        assert_eq!(c.get(2, 1, 0), v.get(3, 3, 1));
        assert!(v.crop([4, 0, 0], [3, 1, 1]).is_err());
    }

    #[test]
    fn file_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vol");
        let mut v = ramp([7, 3, 2]);
        v.spacing = [0.7, 0.7, 2.5];
        v.write(&p).unwrap();
        assert_eq!(Volume::read(&p).unwrap(), v);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = Volume::read(&p).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }
}
