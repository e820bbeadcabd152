//! Compact little-endian scan log. Layout is described in `docs/formats.md`.

use std::io::{Read, Write};

use nalgebra::Matrix3;

use super::{ScanRecord, UltrasoundFrame, VesselObservation};
use crate::error::{Error, Result};
use crate::geometry::{ImageCalibration, PixelCoord, PoseFrame, RigidTransform};
use crate::Vec3;

pub const SCAN_LOG_MAGIC: [u8; 8] = *b"CVCSCAN\0";
pub const SCAN_LOG_VERSION: u16 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u16(&mut self, v: u16) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }
    fn vec3(&mut self, v: &Vec3) -> Result<()> {
        v.iter().try_for_each(|c| self.f64(*c))
    }
    /// Rotation columns followed by translation.
    fn pose(&mut self, x: &Vec3, y: &Vec3, z: &Vec3, t: &Vec3) -> Result<()> {
        for v in [x, y, z, t] {
            self.vec3(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r
            .read_exact(&mut buf)
            .map_err(|e| fmt_err(format!("truncated scan log: {e}")))?;
        Ok(buf)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn pose(&mut self) -> Result<PoseFrame> {
        Ok(PoseFrame {
            x: self.vec3()?,
            y: self.vec3()?,
            z: self.vec3()?,
            t: self.vec3()?,
        })
    }
}

pub fn write_binary<W: Write>(rec: &ScanRecord, w: W) -> Result<()> {
    rec.validate()?;
    let mut w = Writer { w };
    w.w.write_all(&SCAN_LOG_MAGIC)?;
    w.u16(SCAN_LOG_VERSION)?;
    w.u16(0)?;
    let cal = &rec.calibration;
    w.f64(cal.sx)?;
    w.f64(cal.sy)?;
    w.u32(cal.width)?;
    w.u32(cal.height)?;
    let r = rec.t_u_e.rotation_matrix();
    w.pose(
        &r.column(0).into_owned(),
        &r.column(1).into_owned(),
        &r.column(2).into_owned(),
        &rec.t_u_e.translation(),
    )?;
    let count = u32::try_from(rec.frames.len()).map_err(|_| fmt_err("too many frames"))?;
    w.u32(count)?;
    for f in &rec.frames {
        w.u32(f.index)?;
        w.f64(f.force)?;
        let p = &f.probe_pose;
        w.pose(&p.x, &p.y, &p.z, &p.t)?;
        w.u32(f.observations.len() as u32)?;
        for o in &f.observations {
            w.f64(o.centroid_px.ix)?;
            w.f64(o.centroid_px.iy)?;
            w.f64(o.area_px2)?;
        }
    }
    w.w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(r: R) -> Result<ScanRecord> {
    let mut r = Reader { r };
    if r.bytes::<8>()? != SCAN_LOG_MAGIC {
        return Err(fmt_err("not a scan log (bad magic)"));
    }
    let version = r.u16()?;
    if version != SCAN_LOG_VERSION {
        return Err(fmt_err(format!("unsupported scan log version {version}")));
    }
    let _flags = r.u16()?;
    let calibration = ImageCalibration {
        sx: r.f64()?,
        sy: r.f64()?,
        width: r.u32()?,
        height: r.u32()?,
    };
    let p = r.pose()?;
    let t_u_e = RigidTransform::new(Matrix3::from_columns(&[p.x, p.y, p.z]), p.t)?;
    let count = r.u32()?;
    let mut frames = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let index = r.u32()?;
        let force = r.f64()?;
        let probe_pose = r.pose()?;
        let n = r.u32()?;
        if n as usize > super::MAX_OBSERVATIONS {
            return Err(fmt_err(format!("frame {index} claims {n} observations")));
        }
        let observations = (0..n)
            .map(|_| {
                Ok(VesselObservation {
                    centroid_px: PixelCoord::new(r.f64()?, r.f64()?),
                    area_px2: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(UltrasoundFrame {
            index,
            probe_pose,
            force,
            observations,
        });
    }
    if r.r.read(&mut [0u8; 1])? != 0 {
        return Err(fmt_err("trailing bytes after last frame"));
    }
    let rec = ScanRecord {
        calibration,
        t_u_e,
        frames,
    };
    rec.validate()?;
    Ok(rec)
}
