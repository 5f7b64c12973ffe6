use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MasqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainKind {
    Flat,
    Uneven,
}

/// Parameters of the uneven-terrain generator: repeating pyramids plus
/// uniform per-cell noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnevenParams {
    pub pyramid_rise: f64,
    pub pyramid_period: f64,
    pub noise_height: f64,
    pub cell_size: f64,
    pub half_extent: f64,
}

impl Default for UnevenParams {
    fn default() -> Self {
        Self {
            pyramid_rise: 0.05,
            pyramid_period: 2.0,
            noise_height: 0.02,
            cell_size: 0.1,
            half_extent: 12.0,
        }
    }
}

/// Heightfield over a regular grid; heights are row-major with rows along y.
#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    pub kind: TerrainKind,
    pub cell_size: f64,
    pub origin: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f64>,
    pub friction: f64,
    pub restitution: f64,
}

impl Terrain {
    pub fn flat() -> Self {
        Self {
            kind: TerrainKind::Flat,
            cell_size: 1.0,
            origin: (0.0, 0.0),
            nx: 1,
            ny: 1,
            heights: vec![0.0],
            friction: 1.0,
            restitution: 0.0,
        }
    }

    /// Pyramid slopes plus uniform noise in `[0, noise_height]`.
    pub fn uneven<R: Rng + ?Sized>(params: &UnevenParams, rng: &mut R) -> Self {
        let n = (2.0 * params.half_extent / params.cell_size).round() as usize + 1;
        let origin = (-params.half_extent, -params.half_extent);
        let mut heights = Vec::with_capacity(n * n);
        for j in 0..n {
            let y = origin.1 + j as f64 * params.cell_size;
            for i in 0..n {
                let x = origin.0 + i as f64 * params.cell_size;
                let period = params.pyramid_period;
                let u = (x / period).rem_euclid(1.0) * 2.0 - 1.0;
                let v = (y / period).rem_euclid(1.0) * 2.0 - 1.0;
                let pyramid = params.pyramid_rise * (1.0 - u.abs().max(v.abs()));
                let noise = if params.noise_height > 0.0 {
                    rng.random_range(0.0..params.noise_height)
                } else {
                    0.0
                };
                heights.push(pyramid + noise);
            }
        }
        Self {
            kind: TerrainKind::Uneven,
            cell_size: params.cell_size,
            origin,
            nx: n,
            ny: n,
            heights,
            friction: 1.0,
            restitution: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heights.len() != self.nx * self.ny || self.nx == 0 || self.ny == 0 {
            return Err(MasqError::Config(
                "heightfield size does not match nx*ny".into(),
            ));
        }
        if !(self.cell_size > 0.0) {
            return Err(MasqError::Config(
                "heightfield cell size must be positive".into(),
            ));
        }
        if !self.heights.iter().all(|h| h.is_finite()) {
            return Err(MasqError::NonFinite("heightfield".into()));
        }
        if !(self.friction >= 0.0) || !(self.restitution >= 0.0) {
            return Err(MasqError::Config(
                "friction and restitution must be >= 0".into(),
            ));
        }
        if self.kind == TerrainKind::Flat && self.heights.iter().any(|&h| h != 0.0) {
            return Err(MasqError::Config(
                "flat terrain must have zero heights".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    /// CSV export: one header row naming the grid metadata, one row of
    /// metadata values, then `ny` rows of `nx` heights.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record([
            "kind",
            "cell_size",
            "origin_x",
            "origin_y",
            "nx",
            "ny",
            "friction",
            "restitution",
        ])?;
        let kind = match self.kind {
            TerrainKind::Flat => "flat",
            TerrainKind::Uneven => "uneven",
        };
        w.write_record([
            kind.to_string(),
            self.cell_size.to_string(),
            self.origin.0.to_string(),
            self.origin.1.to_string(),
            self.nx.to_string(),
            self.ny.to_string(),
            self.friction.to_string(),
            self.restitution.to_string(),
        ])?;
        for j in 0..self.ny {
            w.write_record(
                self.heights[j * self.nx..(j + 1) * self.nx]
                    .iter()
                    .map(|h| h.to_string()),
            )?;
        }
        w.flush().map_err(|e| MasqError::io("heightfield csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(input);
        let mut records = rd.records();
        let meta = records
            .next()
            .ok_or_else(|| MasqError::Config("heightfield csv missing metadata row".into()))??;
        let field = |i: usize| -> Result<&str> {
            meta.get(i).ok_or_else(|| {
                MasqError::Config(format!("heightfield metadata column {i} missing"))
            })
        };
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .trim()
                .parse::<f64>()
                .map_err(|e| MasqError::Config(format!("heightfield metadata column {i}: {e}")))
        };
        let kind = match field(0)?.trim() {
            "flat" => TerrainKind::Flat,
            "uneven" => TerrainKind::Uneven,
            other => return Err(MasqError::Config(format!("unknown terrain kind {other:?}"))),
        };
        let nx = num(4)? as usize;
        let ny = num(5)? as usize;
        let mut heights = Vec::with_capacity(nx * ny);
        for rec in records {
            let rec = rec?;
            if rec.len() != nx {
                return Err(MasqError::dim("heightfield row", nx, rec.len()));
            }
            for v in rec.iter() {
                heights.push(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| MasqError::Config(format!("heightfield value: {e}")))?,
                );
            }
        }
        let t = Terrain {
            kind,
            cell_size: num(1)?,
            origin: (num(2)?, num(3)?),
            nx,
            ny,
            heights,
            friction: num(6)?,
            restitution: num(7)?,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Bilinear interpolation on the heightfield, clamped at the grid edges.
pub fn terrain_height(terrain: &Terrain, x: f64, y: f64) -> f64 {
    if terrain.kind == TerrainKind::Flat {
        return 0.0;
    }
    let locate = |v: f64, origin: f64, n: usize| -> (usize, f64) {
        if n == 1 {
            return (0, 0.0);
        }
        let f = ((v - origin) / terrain.cell_size).clamp(0.0, (n - 1) as f64);
        let i = (f.floor() as usize).min(n - 2);
        (i, f - i as f64)
    };
    let (i, tx) = locate(x, terrain.origin.0, terrain.nx);
    let (j, ty) = locate(y, terrain.origin.1, terrain.ny);
    let i1 = (i + 1).min(terrain.nx - 1);
    let j1 = (j + 1).min(terrain.ny - 1);
    let h00 = terrain.at(i, j);
    let h10 = terrain.at(i1, j);
    let h01 = terrain.at(i, j1);
    let h11 = terrain.at(i1, j1);
    // convex-combination form reproduces node heights exactly
    let lower = (1.0 - tx) * h00 + tx * h10;
    let upper = (1.0 - tx) * h01 + tx * h11;
    (1.0 - ty) * lower + ty * upper
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> Terrain {
        Terrain {
            kind: TerrainKind::Uneven,
            cell_size: 1.0,
            origin: (0.0, 0.0),
            nx: 2,
            ny: 2,
            heights: vec![0.1, 0.3, 0.5, 0.9],
            friction: 1.0,
            restitution: 0.0,
        }
    }

    #[test]
    fn flat_is_zero_everywhere() {
        let t = Terrain::flat();
        assert_eq!(terrain_height(&t, 123.0, -4.5), 0.0);
    }

    #[test]
    fn edge_midpoint_interpolates() {
        assert!((terrain_height(&two_by_two(), 0.5, 0.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn nodes_are_exact_and_outside_clamps() {
        let t = two_by_two();
        assert_eq!(terrain_height(&t, 0.0, 0.0), 0.1);
        assert_eq!(terrain_height(&t, 1.0, 1.0), 0.9);
        assert_eq!(terrain_height(&t, 0.0, 1.0), 0.5);
        assert_eq!(terrain_height(&t, -5.0, -5.0), 0.1);
        assert_eq!(terrain_height(&t, 7.0, 9.0), 0.9);
    }

    #[test]
    fn uneven_generator_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = UnevenParams {
            half_extent: 3.0,
            ..UnevenParams::default()
        };
        let t = Terrain::uneven(&p, &mut rng);
        t.validate().unwrap();
        assert!(t.heights.iter().all(|&h| (0.0..=0.07).contains(&h)));
        assert!(t.heights.iter().any(|&h| h > 0.04));
    }

    #[test]
    fn csv_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = UnevenParams {
            half_extent: 0.5,
            ..UnevenParams::default()
        };
        let t = Terrain::uneven(&p, &mut rng);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Terrain::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_with_short_row_rejected() {
        let text = "kind,cell_size,origin_x,origin_y,nx,ny,friction,restitution\n\
                    uneven,0.1,0,0,2,2,1,0\n0.1,0.2\n0.3\n";
        assert!(Terrain::read_csv(text.as_bytes()).is_err());
    }
}
