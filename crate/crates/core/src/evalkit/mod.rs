//! Reconstruction heatmaps, correlation scores, tabular returns and the
//! vanilla-versus-adapted comparison.

use crate::adapt::{zol_adapt, AdaptResult, ZolParams};
use crate::diffcore::Matrix;
use crate::envs::{DonutWorld, OfflineDataset, TaskReward, TransitionRecord};
use crate::error::{Result, ZolError};
use crate::fbmodel::FbModel;
use crate::mdporacle::{occupancy_exact, TabularMDP, TabularPolicy, TabularReward};

/// Reconstructed reward on a square grid over `[-bound, bound]^2`. Row 0 is
/// the top (largest `y`); cells outside the annulus hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub resolution: usize,
    pub bound: f64,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl HeatmapGrid {
    /// Center of the cell at `(row, col)`.
    pub fn center(resolution: usize, bound: f64, row: usize, col: usize) -> [f64; 2] {
        let step = |i: usize| bound * (2 * i + 1) as f64 / resolution as f64 - bound;
        [step(col), -step(row)]
    }

    /// Grid geometry with the annulus mask and NaN values.
    pub fn empty(resolution: usize) -> Result<Self> {
        if resolution < 8 {
            return Err(ZolError::Config(format!(
                "heatmap resolution must be >= 8, got {resolution}"
            )));
        }
        let world = DonutWorld::default();
        let bound = world.rad_max;
        let mut mask = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            for col in 0..resolution {
                mask.push(world.contains(&Self::center(resolution, bound, row, col)));
            }
        }
        Ok(Self {
            resolution,
            bound,
            values: vec![f64::NAN; resolution * resolution],
            mask,
        })
    }

    /// Centers of the masked cells in row-major order.
    pub fn masked_centers(&self) -> Vec<[f64; 2]> {
        let r = self.resolution;
        (0..r * r)
            .filter(|&k| self.mask[k])
            .map(|k| Self::center(r, self.bound, k / r, k % r))
            .collect()
    }

    pub fn masked_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Rows of comma-separated values; masked-out cells read `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.resolution) {
            let line: Vec<String> = row
                .iter()
                .map(|v| if v.is_nan() { "NaN".to_string() } else { format!("{v}") })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit graymap, min-max scaled over masked cells; masked-out
    /// cells are black.
    pub fn to_pgm(&self) -> Vec<u8> {
        let vals = self.masked_values();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P5\n{} {}\n255\n", self.resolution, self.resolution).into_bytes();
        for (v, &m) in self.values.iter().zip(&self.mask) {
            let px = if !m {
                0
            } else if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                128
            };
            out.push(px);
        }
        out
    }
}

/// `B(c)^T z` on the cell centers of a `resolution x resolution` grid.
pub fn render_heatmap(model: &FbModel, z: &[f64], resolution: usize) -> Result<HeatmapGrid> {
    let mut grid = HeatmapGrid::empty(resolution)?;
    let centers = grid.masked_centers();
    if !centers.is_empty() {
        let states = Matrix::from_rows(&centers)?;
        let rewards = model.reconstruct_reward(&states, z);
        let mut it = rewards.into_iter();
        for (v, &m) in grid.values.iter_mut().zip(&grid.mask) {
            if m {
                *v = it.next().unwrap_or(f64::NAN);
            }
        }
    }
    Ok(grid)
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ZolError::Degenerate(format!(
            "need two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(ZolError::Degenerate("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between grid values and the task reward over the
/// masked cells.
pub fn reconstruction_correlation(grid: &HeatmapGrid, task: &TaskReward) -> Result<f64> {
    let truth: Vec<f64> = grid.masked_centers().iter().map(|c| task.eval(c)).collect();
    pearson(&grid.masked_values(), &truth)
}

/// Expected reward under the discounted occupancy of `pi`.
pub fn tabular_return(mdp: &TabularMDP, pi: &TabularPolicy, reward: &TabularReward) -> Result<f64> {
    let d = occupancy_exact(mdp, pi)?;
    Ok(d.iter().zip(reward.values()).map(|(d, r)| d * r).sum())
}

/// Resolution used for comparison scoring.
pub const COMPARISON_RESOLUTION: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub corr_fb: f64,
    pub corr_zol: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub task: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedComparison>,
    pub corr_fb: f64,
    pub corr_zol: f64,
    pub delta: f64,
}

impl ComparisonReport {
    pub fn from_rows(task: &str, rows: Vec<SeedComparison>) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            task: task.to_string(),
            seeds: rows.iter().map(|r| r.seed).collect(),
            corr_fb: rows.iter().map(|r| r.corr_fb).sum::<f64>() / n,
            corr_zol: rows.iter().map(|r| r.corr_zol).sum::<f64>() / n,
            delta: rows.iter().map(|r| r.delta).sum::<f64>() / n,
            rows,
        }
    }

    /// Seeds where adaptation raised the correlation.
    pub fn improved(&self) -> usize {
        self.rows.iter().filter(|r| r.delta > 0.0).count()
    }

    /// One row per seed followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,seed,corr_fb,corr_zol,delta\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.task, r.seed, r.corr_fb, r.corr_zol, r.delta
            ));
        }
        out.push_str(&format!(
            "{},mean,{},{},{}\n",
            self.task, self.corr_fb, self.corr_zol, self.delta
        ));
        out
    }
}

/// Everything produced for one seed of a comparison.
#[derive(Clone, Debug)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub adapt: AdaptResult,
    pub heat_fb: HeatmapGrid,
    pub heat_zol: HeatmapGrid,
}

/// Per seed: the inferred latent (the adaptation start) against the
/// adapted latent, both scored on the annulus grid.
pub fn compare_fb_vs_zol(
    model: &FbModel,
    dataset: &OfflineDataset,
    task: &TaskReward,
    params: &ZolParams,
    seeds: &[u64],
) -> Result<(ComparisonReport, Vec<SeedArtifacts>)> {
    let reward = |r: &TransitionRecord| task.eval(&r.s);
    let world = DonutWorld::default();
    let mut rows = Vec::with_capacity(seeds.len());
    let mut artifacts = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let p = ZolParams { seed, ..params.clone() };
        let adapt = zol_adapt(model, dataset, &reward, &world, &p)?;
        let heat_fb = render_heatmap(model, &adapt.z_init, COMPARISON_RESOLUTION)?;
        let heat_zol = render_heatmap(model, &adapt.z_final, COMPARISON_RESOLUTION)?;
        let corr_fb = reconstruction_correlation(&heat_fb, task)?;
        let corr_zol = reconstruction_correlation(&heat_zol, task)?;
        rows.push(SeedComparison {
            seed,
            corr_fb,
            corr_zol,
            delta: corr_zol - corr_fb,
        });
        artifacts.push(SeedArtifacts {
            seed,
            adapt,
            heat_fb,
            heat_zol,
        });
    }
    Ok((ComparisonReport::from_rows(task.name(), rows), artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::build_gridworld;
    use crate::fbmodel::{ActionSpace, FbArch};

    fn model() -> FbModel {
        let arch = FbArch {
            d: 4,
            f_hidden: vec![8],
            b_hidden: vec![8],
            ..FbArch::default()
        };
        FbModel::new(&arch, 2, ActionSpace::Compass { step: 0.1 }, 2).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = HeatmapGrid::empty(64).unwrap();
        assert_eq!(g.values.len(), 4096);
        let mut count = 0;
        for row in 0..64 {
            for col in 0..64 {
                let c = HeatmapGrid::center(64, 1.5, row, col);
                let r = c[0].hypot(c[1]);
                if (0.25..=1.5).contains(&r) {
                    count += 1;
                }
            }
        }
        assert_eq!(g.masked_count(), count);
        assert!(HeatmapGrid::empty(7).is_err());
        assert_eq!(HeatmapGrid::center(8, 1.5, 0, 0), [-1.3125, 1.3125]);
    }

    #[test]
    fn zero_latent_renders_zeros() {
        let g = render_heatmap(&model(), &[0.0; 4], 16).unwrap();
        assert!(g.masked_values().iter().all(|&v| v == 0.0));
        assert!(g.values.iter().zip(&g.mask).all(|(v, &m)| m || v.is_nan()));
    }

    #[test]
    fn coinciding_centers_agree_across_resolutions() {
        // Resolution 3k shares the centers of resolution k at offsets 1, 4, ...
        let m = model();
        let z = [0.5, -1.0, 1.5, 0.2];
        let coarse = render_heatmap(&m, &z, 8).unwrap();
        let fine = render_heatmap(&m, &z, 24).unwrap();
        for row in 0..8 {
            for col in 0..8 {
                let a = coarse.values[row * 8 + col];
                let b = fine.values[(3 * row + 1) * 24 + 3 * col + 1];
                assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }

    #[test]
    fn correlation_examples() {
        let task = TaskReward::from_name("cross").unwrap();
        let mut g = HeatmapGrid::empty(32).unwrap();
        let truth: Vec<f64> = g.masked_centers().iter().map(|c| task.eval(c)).collect();
        let mut it = truth.iter();
        for (v, &m) in g.values.iter_mut().zip(&g.mask) {
            if m {
                *v = *it.next().unwrap();
            }
        }
        assert!((reconstruction_correlation(&g, &task).unwrap() - 1.0).abs() < 1e-12);
        for v in g.values.iter_mut() {
            *v = -*v;
        }
        assert!((reconstruction_correlation(&g, &task).unwrap() + 1.0).abs() < 1e-12);
        let flat = render_heatmap(&model(), &[0.0; 4], 32).unwrap();
        assert!(matches!(
            reconstruction_correlation(&flat, &task),
            Err(ZolError::Degenerate(_))
        ));
    }

    #[test]
    fn pgm_and_csv_layout() {
        let g = render_heatmap(&model(), &[1.0, 0.0, 0.0, 1.0], 8).unwrap();
        let pgm = g.to_pgm();
        let header = b"P5\n8 8\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 64);
        let body = &pgm[header.len()..];
        assert!(body.contains(&255) && body.iter().zip(&g.mask).any(|(&p, &m)| m && p == 0));
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().next().unwrap().starts_with("NaN"));
    }

    #[test]
    fn tabular_return_examples() {
        let mdp = build_gridworld(2, 1, 0.5, &[]).unwrap();
        let mut p = vec![0.0; 8];
        p[3] = 1.0;
        p[4 + 3] = 1.0;
        let pi = TabularPolicy::new(2, 4, p).unwrap();
        let ones = TabularReward::constant(2, 4, 1.0);
        assert!((tabular_return(&mdp, &pi, &ones).unwrap() - 1.0).abs() < 1e-12);
        // rho0 is uniform over the two cells here, so half the mass starts
        // in the right cell and the rest drifts there.
        let right = TabularReward::from_state_values(4, &[0.0, 1.0]).unwrap();
        assert!((tabular_return(&mdp, &pi, &right).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn report_bookkeeping() {
        let rows = vec![
            SeedComparison {
                seed: 0,
                corr_fb: 0.1,
                corr_zol: 0.3,
                delta: 0.2,
            },
            SeedComparison {
                seed: 1,
                corr_fb: 0.2,
                corr_zol: 0.1,
                delta: -0.1,
            },
        ];
        let r = ComparisonReport::from_rows("cross", rows);
        assert!((r.delta - 0.05).abs() < 1e-12);
        assert_eq!(r.improved(), 1);
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
