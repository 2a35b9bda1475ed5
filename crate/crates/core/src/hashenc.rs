//! Multiresolution hash-grid encoding with exact analytic gradients.
//!
//! Each level scales the domain to an `N_l`-cell grid, fetches the eight
//! cell-corner feature entries (dense indexing when the level fits the
//! table, spatial hash otherwise) and interpolates them trilinearly. Level
//! outputs are concatenated. Hash collisions share a slot silently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

/// Per-axis hash multipliers: identity on x plus two large odd constants.
const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridConfig {
    /// Level count.
    pub levels: usize,
    /// Base resolution in cells per axis.
    pub base_resolution: u32,
    /// Per-level geometric growth factor.
    pub growth_factor: f64,
    /// Table size per level; must be a power of two.
    pub table_size: usize,
    /// Features per table entry.
    pub features: usize,
    pub domain: Aabb,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            base_resolution: 4,
            growth_factor: 1.5,
            table_size: 1 << 14,
            features: 2,
            domain: Aabb::cube(crate::geometry::SCENE_HALF_EXTENT),
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("hash grid needs at least one level".into()));
        }
        if self.base_resolution < 2 {
            return Err(Error::Config("base resolution must be at least 2".into()));
        }
        if self.growth_factor <= 1.0 {
            return Err(Error::Config("growth factor must exceed 1".into()));
        }
        if !self.table_size.is_power_of_two() {
            return Err(Error::Config("table size must be a power of two".into()));
        }
        if self.features < 1 {
            return Err(Error::Config("need at least one feature per entry".into()));
        }
        Ok(())
    }

    /// Grid resolution (cells per axis) of level `l`.
    pub fn level_resolution(&self, l: usize) -> u32 {
        (self.base_resolution as f64 * self.growth_factor.powi(l as i32)).floor() as u32
    }

    /// Length of the concatenated feature vector.
    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    pub fn table_len(&self) -> usize {
        self.levels * self.table_size * self.features
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    pub config: HashGridConfig,
    /// Flat `levels * table_size * features` trainable values.
    pub tables: Vec<f64>,
}

/// One corner contribution: (level, table slot, trilinear weight).
#[derive(Debug, Clone, Copy)]
pub struct CornerRef {
    pub level: u32,
    pub slot: u32,
    pub weight: f64,
    /// d(weight)/d(p) in world units; used for the input-point gradient.
    pub dweight: Vec3,
}

/// Forward cache: the eight corner references per level.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub corners: Vec<CornerRef>,
}

/// Gradient contribution to one table slot.
#[derive(Debug, Clone)]
pub struct TableGrad {
    pub level: usize,
    pub slot: usize,
    pub grad: Vec<f64>,
}

impl HashGrid {
    /// Tables initialized uniformly in [-1e-4, 1e-4] from the given seed.
    pub fn init(config: HashGridConfig, seed: u64) -> Result<HashGrid> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..config.table_len())
            .map(|_| rng.gen_range(-1e-4..1e-4))
            .collect();
        Ok(HashGrid { config, tables })
    }

    pub fn from_tables(config: HashGridConfig, tables: Vec<f64>) -> Result<HashGrid> {
        config.validate()?;
        if tables.len() != config.table_len() {
            return Err(Error::Config(format!(
                "table length {} does not match config ({})",
                tables.len(),
                config.table_len()
            )));
        }
        if !tables.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("hash grid tables".into()));
        }
        Ok(HashGrid { config, tables })
    }

    /// Slot index for integer grid coordinates at the given resolution:
    /// dense when the full vertex lattice fits the table, hashed otherwise.
    pub fn slot_index(&self, coords: [u32; 3], resolution: u32) -> u32 {
        let verts = resolution as u64 + 1;
        let table = self.config.table_size as u64;
        if verts * verts * verts <= table {
            (coords[0] as u64 + verts * (coords[1] as u64 + verts * coords[2] as u64)) as u32
        } else {
            let mut h: u64 = 0;
            for (c, prime) in coords.iter().zip(HASH_PRIMES) {
                h ^= (*c as u64).wrapping_mul(prime);
            }
            (h & (table - 1)) as u32
        }
    }

    fn entry(&self, level: usize, slot: usize) -> &[f64] {
        let f = self.config.features;
        let base = (level * self.config.table_size + slot) * f;
        &self.tables[base..base + f]
    }

    /// Encodes `p` (clamped to the domain) into the concatenated per-level
    /// feature vector, returning the cache needed by the backward pass.
    pub fn encode(&self, p: Vec3) -> Result<(Vec<f64>, EncodeCache)> {
        if !p.is_finite() {
            return Err(Error::NonFinite("hash grid query point".into()));
        }
        let cfg = &self.config;
        let p = p.clamp(cfg.domain.min, cfg.domain.max);
        let ext = cfg.domain.extent();
        let mut out = vec![0.0; cfg.output_dim()];
        let mut corners = Vec::with_capacity(cfg.levels * 8);
        for level in 0..cfg.levels {
            let res = cfg.level_resolution(level);
            // Scale into [0, res] grid coordinates per axis.
            let scale = Vec3 {
                x: res as f64 / ext.x,
                y: res as f64 / ext.y,
                z: res as f64 / ext.z,
            };
            let g = Vec3 {
                x: (p.x - cfg.domain.min.x) * scale.x,
                y: (p.y - cfg.domain.min.y) * scale.y,
                z: (p.z - cfg.domain.min.z) * scale.z,
            };
            let cell = [
                (g.x.floor() as u32).min(res - 1),
                (g.y.floor() as u32).min(res - 1),
                (g.z.floor() as u32).min(res - 1),
            ];
            let frac = [
                g.x - cell[0] as f64,
                g.y - cell[1] as f64,
                g.z - cell[2] as f64,
            ];
            for corner in 0..8u32 {
                let offs = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let coords = [
                    cell[0] + offs[0],
                    cell[1] + offs[1],
                    cell[2] + offs[2],
                ];
                let mut w = 1.0;
                for axis in 0..3 {
                    w *= if offs[axis] == 1 {
                        frac[axis]
                    } else {
                        1.0 - frac[axis]
                    };
                }
                // d(weight)/d(p): product of the other axes' weights times
                // the sign of this axis, scaled back to world units.
                let mut dw = [0.0; 3];
                for axis in 0..3 {
                    let mut prod = 1.0;
                    for other in 0..3 {
                        if other == axis {
                            continue;
                        }
                        prod *= if offs[other] == 1 {
                            frac[other]
                        } else {
                            1.0 - frac[other]
                        };
                    }
                    let sign = if offs[axis] == 1 { 1.0 } else { -1.0 };
                    dw[axis] = sign * prod * scale[axis as usize];
                }
                let slot = self.slot_index(coords, res);
                let entry = self.entry(level, slot as usize);
                for (f, &val) in entry.iter().enumerate() {
                    out[level * cfg.features + f] += w * val;
                }
                corners.push(CornerRef {
                    level: level as u32,
                    slot,
                    weight: w,
                    dweight: Vec3::from_array(dw),
                });
            }
        }
        Ok((out, EncodeCache { corners }))
    }

    /// Scatters `upstream` (length `output_dim`) back to table-slot
    /// gradients and the analytic input-point gradient.
    pub fn encode_backward(&self, cache: &EncodeCache, upstream: &[f64]) -> (Vec<TableGrad>, Vec3) {
        let f = self.config.features;
        let mut table_grads: Vec<TableGrad> = Vec::with_capacity(cache.corners.len());
        let mut d_point = Vec3::ZERO;
        for corner in &cache.corners {
            let level = corner.level as usize;
            let up = &upstream[level * f..(level + 1) * f];
            let grad: Vec<f64> = up.iter().map(|&u| u * corner.weight).collect();
            let entry = self.entry(level, corner.slot as usize);
            let dot: f64 = up.iter().zip(entry).map(|(u, e)| u * e).sum();
            d_point += corner.dweight * dot;
            table_grads.push(TableGrad {
                level,
                slot: corner.slot as usize,
                grad,
            });
        }
        (table_grads, d_point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> HashGrid {
        let config = HashGridConfig {
            levels: 3,
            base_resolution: 2,
            growth_factor: 1.7,
            table_size: 1 << 9,
            features: 2,
            domain: Aabb::cube(1.0),
        };
        HashGrid::init(config, 99).unwrap()
    }

    fn random_grid(seed: u64) -> HashGrid {
        let config = HashGridConfig {
            levels: 4,
            base_resolution: 3,
            growth_factor: 1.6,
            table_size: 1 << 8,
            features: 2,
            domain: Aabb::cube(1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..config.table_len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        HashGrid::from_tables(config, tables).unwrap()
    }

    /// Grid-vertex world position of level `l` vertex (i, j, k).
    fn vertex_pos(grid: &HashGrid, level: usize, coords: [u32; 3]) -> Vec3 {
        let cfg = &grid.config;
        let res = cfg.level_resolution(level) as f64;
        let ext = cfg.domain.extent();
        vec3(
            cfg.domain.min.x + coords[0] as f64 / res * ext.x,
            cfg.domain.min.y + coords[1] as f64 / res * ext.y,
            cfg.domain.min.z + coords[2] as f64 / res * ext.z,
        )
    }

    #[test]
    fn value_at_grid_vertex_is_stored_entry() {
        let grid = random_grid(1);
        let level = 1;
        let coords = [1u32, 2, 0];
        let p = vertex_pos(&grid, level, coords);
        let (out, _) = grid.encode(p).unwrap();
        let res = grid.config.level_resolution(level);
        let slot = grid.slot_index(coords, res);
        let entry = grid.entry(level, slot as usize);
        for f in 0..grid.config.features {
            assert!((out[level * grid.config.features + f] - entry[f]).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_midpoint_averages_endpoints() {
        let grid = random_grid(2);
        let level = 0; // resolution 3, dense
        let a = [0u32, 1, 1];
        let b = [1u32, 1, 1];
        let p = (vertex_pos(&grid, level, a) + vertex_pos(&grid, level, b)) * 0.5;
        let (out, _) = grid.encode(p).unwrap();
        let res = grid.config.level_resolution(level);
        let ea = grid.entry(level, grid.slot_index(a, res) as usize).to_vec();
        let eb = grid.entry(level, grid.slot_index(b, res) as usize).to_vec();
        for f in 0..grid.config.features {
            assert!((out[f] - 0.5 * (ea[f] + eb[f])).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_sweep_matches_trilinear_oracle() {
        let grid = random_grid(3);
        let cfg = grid.config;
        let level = 2;
        let res = cfg.level_resolution(level);
        let ext = cfg.domain.extent();
        // Sweep x within one cell; compare against the direct 8-corner sum.
        let cell = [2u32, 1, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let fx: f64 = rng.gen_range(0.01..0.99);
            let fy = 0.37;
            let fz = 0.81;
            let p = vec3(
                cfg.domain.min.x + (cell[0] as f64 + fx) / res as f64 * ext.x,
                cfg.domain.min.y + (cell[1] as f64 + fy) / res as f64 * ext.y,
                cfg.domain.min.z + (cell[2] as f64 + fz) / res as f64 * ext.z,
            );
            let (out, _) = grid.encode(p).unwrap();
            let mut oracle = vec![0.0; cfg.features];
            for corner in 0..8u32 {
                let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let w = (if o[0] == 1 { fx } else { 1.0 - fx })
                    * (if o[1] == 1 { fy } else { 1.0 - fy })
                    * (if o[2] == 1 { fz } else { 1.0 - fz });
                let slot = grid.slot_index([cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]], res);
                for (f, item) in oracle.iter_mut().enumerate() {
                    *item += w * grid.entry(level, slot as usize)[f];
                }
            }
            for f in 0..cfg.features {
                assert!((out[level * cfg.features + f] - oracle[f]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let grid = random_grid(4);
        let p = vec3(0.123, -0.456, 0.789);
        let (a, _) = grid.encode(p).unwrap();
        let (b, _) = grid.encode(p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let grid = small_grid();
        let (_, cache) = grid.encode(vec3(0.2, 0.3, -0.1)).unwrap();
        let upstream = vec![0.0; grid.config.output_dim()];
        let (tg, dp) = grid.encode_backward(&cache, &upstream);
        assert!(tg.iter().all(|g| g.grad.iter().all(|&v| v == 0.0)));
        assert_eq!(dp, Vec3::ZERO);
    }

    #[test]
    fn vertex_point_puts_all_mass_on_one_slot() {
        let grid = random_grid(5);
        let level = 1;
        let coords = [1u32, 1, 2];
        let p = vertex_pos(&grid, level, coords);
        let (_, cache) = grid.encode(p).unwrap();
        let upstream = vec![1.0; grid.config.output_dim()];
        let (tg, _) = grid.encode_backward(&cache, &upstream);
        let res = grid.config.level_resolution(level);
        let target = grid.slot_index(coords, res) as usize;
        for g in tg.iter().filter(|g| g.level == level) {
            if g.slot == target {
                assert!(g.grad.iter().all(|&v| (v - 1.0).abs() < 1e-12));
            } else {
                assert!(g.grad.iter().all(|&v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn table_gradients_match_finite_differences() {
        let mut grid = random_grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for trial in 0..100 {
            let p = vec3(
                rng.gen_range(-0.95..0.95),
                rng.gen_range(-0.95..0.95),
                rng.gen_range(-0.95..0.95),
            );
            let upstream: Vec<f64> = (0..grid.config.output_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let (_, cache) = grid.encode(p).unwrap();
            let (tg, _) = grid.encode_backward(&cache, &upstream);
            // Accumulate duplicate slots (hash collisions within the stencil).
            let mut acc = std::collections::HashMap::new();
            for g in &tg {
                for (f, &v) in g.grad.iter().enumerate() {
                    *acc.entry((g.level, g.slot, f)).or_insert(0.0) += v;
                }
            }
            // Check a few random entries per trial against central differences
            // of the scalar objective <upstream, encode(p)>.
            let objective = |grid: &HashGrid| -> f64 {
                let (out, _) = grid.encode(p).unwrap();
                out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
            };
            let keys: Vec<_> = acc.keys().cloned().collect();
            for _ in 0..3.min(keys.len()) {
                let key = keys[rng.gen_range(0..keys.len())];
                let (level, slot, f) = key;
                let idx = (level * grid.config.table_size + slot) * grid.config.features + f;
                let h = 1e-5;
                let orig = grid.tables[idx];
                grid.tables[idx] = orig + h;
                let hi = objective(&grid);
                grid.tables[idx] = orig - h;
                let lo = objective(&grid);
                grid.tables[idx] = orig;
                let fd = (hi - lo) / (2.0 * h);
                let an = acc[&key];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-6,
                    "trial {trial}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn point_gradient_matches_finite_differences() {
        let grid = random_grid(7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..100 {
            let p = vec3(
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
            );
            let upstream: Vec<f64> = (0..grid.config.output_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let (_, cache) = grid.encode(p).unwrap();
            let (_, dp) = grid.encode_backward(&cache, &upstream);
            let objective = |q: Vec3| -> f64 {
                let (out, _) = grid.encode(q).unwrap();
                out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
            };
            let h = 1e-7;
            for axis in 0..3 {
                let mut hi = p;
                let mut lo = p;
                hi[axis] += h;
                lo[axis] -= h;
                // Skip when the stencil crosses a cell boundary (kink).
                let (_, chi) = grid.encode(hi).unwrap();
                let (_, clo) = grid.encode(lo).unwrap();
                let same_cells = chi
                    .corners
                    .iter()
                    .zip(&clo.corners)
                    .all(|(a, b)| a.slot == b.slot);
                if !same_cells {
                    continue;
                }
                let fd = (objective(hi) - objective(lo)) / (2.0 * h);
                let an = dp[axis];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() / denom < 1e-5, "fd={fd} analytic={an}");
            }
        }
    }

    #[test]
    fn out_of_domain_points_clamp() {
        let grid = random_grid(8);
        let (inside, _) = grid.encode(vec3(1.0, 1.0, 1.0)).unwrap();
        let (outside, _) = grid.encode(vec3(5.0, 9.0, 2.0)).unwrap();
        assert_eq!(inside, outside);
        assert!(grid.encode(vec3(f64::NAN, 0.0, 0.0)).is_err());
    }
}
