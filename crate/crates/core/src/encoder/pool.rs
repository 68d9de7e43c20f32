use super::config::N_PARTS;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn map_dims(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::Dimension(format!("expected N×H×W×C, got {:?}", x.shape()))),
    }
}

/// Splits the height into four equal bands, averages each band over its full
/// spatial extent and concatenates: `N×H×W×C → N×4C`, band-major.
pub fn part_pool(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = map_dims(x)?;
    if h % N_PARTS != 0 {
        return Err(Error::Config(format!("height {h} is not divisible into {N_PARTS} parts")));
    }
    let band = h / N_PARTS;
    let scale = 1.0 / (band * w) as f64;
    let mut out = vec![0.0; n * N_PARTS * c];
    for b in 0..n {
        for y in 0..h {
            let part = y / band;
            let dst = (b * N_PARTS + part) * c;
            for xx in 0..w {
                let src = ((b * h + y) * w + xx) * c;
                for ch in 0..c {
                    out[dst + ch] += x.data()[src + ch] * scale;
                }
            }
        }
    }
    Tensor::new(vec![n, N_PARTS * c], out)
}

pub fn part_pool_backward(dy: &Tensor, map_shape: &[usize]) -> Result<Tensor> {
    let (n, h, w, c) = (map_shape[0], map_shape[1], map_shape[2], map_shape[3]);
    if dy.shape() != [n, N_PARTS * c] {
        return Err(Error::Dimension("part-pool backward: gradient shape".into()));
    }
    let band = h / N_PARTS;
    let scale = 1.0 / (band * w) as f64;
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            let src = (b * N_PARTS + y / band) * c;
            for xx in 0..w {
                let dst = ((b * h + y) * w + xx) * c;
                for ch in 0..c {
                    dx[dst + ch] = dy.data()[src + ch] * scale;
                }
            }
        }
    }
    Tensor::new(map_shape.to_vec(), dx)
}

/// Spatial mean: `N×H×W×C → N×C`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = map_dims(x)?;
    let scale = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for p in 0..h * w {
            let src = (b * h * w + p) * c;
            for ch in 0..c {
                out[b * c + ch] += x.data()[src + ch] * scale;
            }
        }
    }
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward(dy: &Tensor, map_shape: &[usize]) -> Result<Tensor> {
    let (n, h, w, c) = (map_shape[0], map_shape[1], map_shape[2], map_shape[3]);
    if dy.shape() != [n, c] {
        return Err(Error::Dimension("global-pool backward: gradient shape".into()));
    }
    let scale = 1.0 / (h * w) as f64;
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        for p in 0..h * w {
            let dst = (b * h * w + p) * c;
            for ch in 0..c {
                dx[dst + ch] = dy.data()[b * c + ch] * scale;
            }
        }
    }
    Tensor::new(map_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use proptest::prelude::*;

    #[test]
    fn constant_map() {
        let x = Tensor::filled(&[1, 8, 4, 256], 0.75);
        let y = part_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1024]);
        assert!(y.data().iter().all(|v| (*v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn paper_dims_band_shape() {
        let x = Tensor::filled(&[1, 64, 32, 256], 1.0);
        assert_eq!(part_pool(&x).unwrap().shape(), &[1, 1024]);
    }

    #[test]
    fn band_constants_oracle() {
        let (h, w, c) = (8, 3, 5);
        let mut data = vec![0.0; h * w * c];
        for y in 0..h {
            for i in 0..w * c {
                data[y * w * c + i] = (y / 2 + 1) as f64;
            }
        }
        let y = part_pool(&Tensor::new(vec![1, h, w, c], data).unwrap()).unwrap();
        let expected: Vec<f64> = (1..=4).flat_map(|b| vec![b as f64; c]).collect();
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_uneven_bands() {
        assert!(matches!(part_pool(&Tensor::zeros(&[1, 6, 2, 1])), Err(Error::Config(_))));
    }

    #[test]
    fn pooling_gradients() {
        let shape = [2, 4, 3, 2];
        let x0: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        for pool in [0, 1] {
            let err = check_gradients(
                |v| {
                    let x = Tensor::new(shape.to_vec(), v.to_vec()).unwrap();
                    let y = if pool == 0 { part_pool(&x) } else { global_avg_pool(&x) }.unwrap();
                    let val = y.data().iter().map(|a| a * a).sum();
                    let dy = y.map(|a| 2.0 * a);
                    let dx = if pool == 0 {
                        part_pool_backward(&dy, &shape)
                    } else {
                        global_avg_pool_backward(&dy, &shape)
                    };
                    (val, dx.unwrap().into_data())
                },
                &x0,
                1e-6,
            );
            assert!(err < 1e-6, "{err}");
        }
    }

    proptest! {
        #[test]
        fn invariant_to_shuffles_within_a_band(seed in any::<u64>(), shift in -3.0f64..3.0) {
            let (h, w, c) = (8usize, 4usize, 3usize);
            let data: Vec<f64> = (0..h * w * c).map(|i| ((i as u64).wrapping_mul(seed | 1) % 101) as f64 / 10.0).collect();
            let x = Tensor::new(vec![1, h, w, c], data.clone()).unwrap();
            // swap two columns inside band 0 and rotate rows inside band 2
            let mut shuffled = data.clone();
            for y in 0..2 {
                for ch in 0..c {
                    shuffled.swap((y * w) * c + ch, (y * w + 3) * c + ch);
                }
            }
            let row = |y: usize| y * w * c..(y + 1) * w * c;
            let r4: Vec<f64> = data[row(4)].to_vec();
            let r5: Vec<f64> = data[row(5)].to_vec();
            shuffled[row(4)].copy_from_slice(&r5);
            shuffled[row(5)].copy_from_slice(&r4);
            let a = part_pool(&x).unwrap();
            let b = part_pool(&Tensor::new(vec![1, h, w, c], shuffled).unwrap()).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            // adding a constant to band 1 shifts only band 1's output
            let mut shifted = data;
            for v in &mut shifted[2 * w * c..4 * w * c] {
                *v += shift;
            }
            let s = part_pool(&Tensor::new(vec![1, h, w, c], shifted).unwrap()).unwrap();
            for (i, (p, q)) in a.data().iter().zip(s.data()).enumerate() {
                let expect = if (c..2 * c).contains(&i) { p + shift } else { *p };
                prop_assert!((q - expect).abs() < 1e-12);
            }
        }
    }
}
