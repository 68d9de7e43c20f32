use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Random erasing: with probability `prob` a random rectangle of each
/// training map is overwritten with standard-normal noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErasingConfig {
    pub prob: f64,
    /// Erased fraction of the map area.
    pub area: [f64; 2],
    /// Height-to-width ratio of the rectangle.
    pub aspect: [f64; 2],
}

impl Default for ErasingConfig {
    fn default() -> Self {
        Self { prob: 0.5, area: [0.02, 0.4], aspect: [0.3, 3.3] }
    }
}

impl ErasingConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !(0.0..=1.0).contains(&self.prob) || !ordered(self.area) || self.area[1] > 1.0 || !ordered(self.aspect) {
            return Err(Error::Config(format!("invalid random erasing settings {self:?}")));
        }
        Ok(())
    }
}

const ATTEMPTS: usize = 10;

/// Erases in place over an `N×H×W×C` batch.
pub fn random_erase(x: &mut Tensor, cfg: &ErasingConfig, rng: &mut impl Rng) -> Result<()> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("random erasing needs N×H×W×C, got {s:?}")));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let data = x.data_mut();
    for b in 0..n {
        if cfg.prob == 0.0 || rng.random::<f64>() >= cfg.prob {
            continue;
        }
        for _ in 0..ATTEMPTS {
            let area = rng.random_range(cfg.area[0]..=cfg.area[1]) * (h * w) as f64;
            let aspect = rng.random_range(cfg.aspect[0]..=cfg.aspect[1]);
            let eh = (area * aspect).sqrt().round() as usize;
            let ew = (area / aspect).sqrt().round() as usize;
            if eh == 0 || ew == 0 || eh > h || ew > w {
                continue;
            }
            let y0 = rng.random_range(0..=h - eh);
            let x0 = rng.random_range(0..=w - ew);
            for y in y0..y0 + eh {
                for xx in x0..x0 + ew {
                    let at = ((b * h + y) * w + xx) * c;
                    for v in &mut data[at..at + c] {
                        *v = StandardNormal.sample(rng);
                    }
                }
            }
            break;
        }
    }
    Ok(())
}
