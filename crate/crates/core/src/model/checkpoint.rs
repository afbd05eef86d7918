//! Checkpoint layout (all integers little-endian `u32`):
//!
//! - magic `P2RGBD1`
//! - header length, then UTF-8 `key=value` lines: the model config followed
//!   by pose bounds and depth range
//! - entry count, then per entry: name length, name, rank, dims, value
//!   count, `f32` values. Parameters come in layout order, followed by the
//!   running mean and variance of each batch norm.

use std::path::Path;

use super::config::ModelConfig;
use super::frame::{DepthRange, DepthUnit};
use super::Model;
use crate::error::{Error, Result};
use crate::numerics::{RunningStats, Tensor};
use crate::pose::PoseBounds;

pub const MAGIC: &[u8; 7] = b"P2RGBD1";

fn header(model: &Model) -> String {
    let b = model.bounds();
    let d = model.depth_range();
    let unit = match d.unit {
        DepthUnit::Meters => "meters",
        DepthUnit::Unscaled => "unscaled",
    };
    format!(
        "{}bounds_min={},{},{}\nbounds_max={},{},{}\ndepth_min={}\ndepth_max={}\ndepth_unit={unit}\n",
        model.config().to_canonical_text(),
        b.min[0],
        b.min[1],
        b.min[2],
        b.max[0],
        b.max[1],
        b.max[2],
        d.min,
        d.max,
    )
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len())?;
    for &d in shape {
        put_u32(out, d)?;
    }
    put_u32(out, values.len())?;
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let text = header(model);
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let layout = model.layout();
    put_u32(&mut out, layout.params.len() + 2 * layout.batch_norms.len())?;
    for (spec, p) in layout.params.iter().zip(model.params()) {
        put_entry(&mut out, &spec.name, p.shape(), p.data())?;
    }
    for (spec, s) in layout.batch_norms.iter().zip(model.running_stats()) {
        put_entry(&mut out, &format!("{}.running_mean", spec.name), &[s.channels()], &s.mean)?;
        put_entry(&mut out, &format!("{}.running_var", spec.name), &[s.channels()], &s.var)?;
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint text is not UTF-8".into()))
    }

    fn entry(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name = self.string()?;
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = self.u32()?;
        if shape.iter().product::<usize>() != count {
            return Err(Error::Format(format!("{name}: shape {shape:?} does not hold {count} values")));
        }
        let values = self
            .take(count.checked_mul(4).ok_or_else(|| Error::Format("entry too large".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((name, shape, values))
    }
}

fn header_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Format(format!("checkpoint header missing {key}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
}

fn parse_vec3(s: &str) -> Result<[f64; 3]> {
    let v = s.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| Error::Format(format!("expected three values, got {s:?}")))
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a P2RGBD1 checkpoint".into()));
    }
    let text = r.string()?;
    let config = ModelConfig::from_canonical_text(&text)?;
    let bounds = PoseBounds::new(
        parse_vec3(header_value(&text, "bounds_min")?)?,
        parse_vec3(header_value(&text, "bounds_max")?)?,
    )?;
    let unit = match header_value(&text, "depth_unit")? {
        "meters" => DepthUnit::Meters,
        "unscaled" => DepthUnit::Unscaled,
        other => return Err(Error::Format(format!("unknown depth unit {other:?}"))),
    };
    let depth = DepthRange::new(
        parse_f64(header_value(&text, "depth_min")?)?,
        parse_f64(header_value(&text, "depth_max")?)?,
        unit,
    )?;
    let layout = super::Layout::new(&config)?;
    let count = r.u32()?;
    if count != layout.params.len() + 2 * layout.batch_norms.len() {
        return Err(Error::Format(format!("checkpoint holds {count} entries, config expects more or fewer")));
    }
    let mut params = Vec::with_capacity(layout.params.len());
    for spec in &layout.params {
        let (name, shape, values) = r.entry()?;
        if name != spec.name {
            return Err(Error::Format(format!("expected entry {}, found {name}", spec.name)));
        }
        params.push(Tensor::new(shape, values)?);
    }
    let mut stats = Vec::with_capacity(layout.batch_norms.len());
    for spec in &layout.batch_norms {
        let (mname, _, mean) = r.entry()?;
        let (vname, _, var) = r.entry()?;
        if mname != format!("{}.running_mean", spec.name) || vname != format!("{}.running_var", spec.name) {
            return Err(Error::Format(format!("running stats of {} out of order", spec.name)));
        }
        stats.push(RunningStats { mean, var });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Model::from_parts(config, bounds, depth, params, stats)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
