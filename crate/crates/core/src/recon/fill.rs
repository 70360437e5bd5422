use crate::error::{ensure, Error, Result};

/// Fills unknown samples of an `h x w x c` grid with the inverse-square-
/// distance weighted mean of known samples inside a square window. The
/// window starts at `radius` and doubles for samples with no known
/// neighbour. Known samples are returned unchanged.
pub fn inverse_distance_fill(
    values: &[f64],
    known: &[bool],
    h: usize,
    w: usize,
    c: usize,
    radius: usize,
) -> Result<Vec<f64>> {
    ensure!(
        values.len() == h * w * c && known.len() == h * w,
        Error::Shape("inverse_distance_fill buffer sizes".into())
    );
    ensure!(known.iter().any(|&k| k), Error::Degenerate("no known samples to fill from".into()));
    let mut out = values.to_vec();
    let mut acc = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            if known[y * w + x] {
                continue;
            }
            let mut r = radius.max(1);
            loop {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut wsum = 0.0;
                for ny in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for nx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        if !known[ny * w + nx] {
                            continue;
                        }
                        let dy = ny as f64 - y as f64;
                        let dx = nx as f64 - x as f64;
                        let wt = 1.0 / (dy * dy + dx * dx);
                        wsum += wt;
                        let base = (ny * w + nx) * c;
                        for (ch, a) in acc.iter_mut().enumerate() {
                            *a += wt * values[base + ch];
                        }
                    }
                }
                if wsum > 0.0 {
                    let base = (y * w + x) * c;
                    for ch in 0..c {
                        out[base + ch] = acc[ch] / wsum;
                    }
                    break;
                }
                r *= 2;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_from_neighbours() {
        // 1x5 row, known at both ends
        let v = [1.0, 0.0, 0.0, 0.0, 5.0];
        let k = [true, false, false, false, true];
        let out = inverse_distance_fill(&v, &k, 1, 5, 1, 8).unwrap();
        // middle: equal weights
        assert!((out[2] - 3.0).abs() < 1e-12);
        // x=1: weights 1 and 1/9
        assert!((out[1] - (1.0 + 5.0 / 9.0) / (1.0 + 1.0 / 9.0)).abs() < 1e-12);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn grows_window_and_rejects_empty() {
        let mut k = vec![false; 100];
        k[0] = true;
        let mut v = vec![0.0; 100];
        v[0] = 0.7;
        let out = inverse_distance_fill(&v, &k, 10, 10, 1, 1).unwrap();
        assert!(out.iter().all(|&x| (x - 0.7).abs() < 1e-12));
        assert!(inverse_distance_fill(&v, &[false; 100], 10, 10, 1, 1).is_err());
    }
}
