use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// 2-D sinusoidal code of shape `(rows, cols, channels)`.
///
/// The first `channels/2` channels encode the row index and the rest the
/// column index. Each half holds `channels/4` interleaved `(sin, cos)` pairs
/// at frequencies `10000^(-i / (channels/4))`.
pub fn sinusoidal_pe_2d(rows: usize, cols: usize, channels: usize) -> Result<Tensor> {
    ensure!(channels % 4 == 0, "positional channels must be divisible by 4, got {channels}");
    let row_codes: Vec<usize> = (0..rows).collect();
    Ok(encode(&row_codes, cols, channels))
}

/// Like [`sinusoidal_pe_2d`] over a `(tasks*height, width)` grid, with rows
/// numbered either globally or restarting at zero for every task.
pub fn sinusoidal_pe_tasks(
    tasks: usize,
    height: usize,
    width: usize,
    channels: usize,
    per_task_rows: bool,
) -> Result<Tensor> {
    ensure!(channels % 4 == 0, "positional channels must be divisible by 4, got {channels}");
    let row_codes: Vec<usize> = (0..tasks * height)
        .map(|r| if per_task_rows { r % height } else { r })
        .collect();
    Ok(encode(&row_codes, width, channels))
}

fn encode(row_codes: &[usize], cols: usize, channels: usize) -> Tensor {
    let quarter = channels / 4;
    let half = channels / 2;
    let freqs: Vec<f64> =
        (0..quarter).map(|i| 10000f64.powf(-(i as f64) / quarter as f64)).collect();
    let mut out = Tensor::zeros([row_codes.len(), cols, channels]);
    let data = out.data_mut();
    for (r, &code) in row_codes.iter().enumerate() {
        for c in 0..cols {
            let px = &mut data[(r * cols + c) * channels..(r * cols + c + 1) * channels];
            for (i, f) in freqs.iter().enumerate() {
                let (sr, cr) = (code as f64 * f).sin_cos();
                let (sc, cc) = (c as f64 * f).sin_cos();
                px[2 * i] = sr;
                px[2 * i + 1] = cr;
                px[half + 2 * i] = sc;
                px[half + 2 * i + 1] = cc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_sin_zero_cos_one() {
        let pe = sinusoidal_pe_2d(3, 3, 8).unwrap();
        let px = &pe.data()[..8];
        for pair in px.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn bounded_and_rows_distinct() {
        let pe = sinusoidal_pe_2d(8, 8, 24).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let row = |r: usize| &pe.data()[(r * 8) * 24..(r * 8 + 1) * 24];
        let diff = row(1).iter().zip(row(5)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    #[test]
    fn column_half_encodes_column() {
        let pe = sinusoidal_pe_2d(2, 4, 8).unwrap();
        // row 1, column 0: row channels move, column channels stay at (0, 1)
        let px = &pe.data()[4 * 8..5 * 8];
        assert!((px[0] - 1f64.sin()).abs() < 1e-15);
        assert_eq!(&px[4..], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn per_task_rows_repeat() {
        let pe = sinusoidal_pe_tasks(2, 3, 2, 4, true).unwrap();
        assert_eq!(&pe.data()[..24], &pe.data()[24..]);
        let global = sinusoidal_pe_tasks(2, 3, 2, 4, false).unwrap();
        assert_eq!(global, sinusoidal_pe_2d(6, 2, 4).unwrap());
    }

    #[test]
    fn rejects_bad_channel_count() {
        assert!(sinusoidal_pe_2d(2, 2, 6).is_err());
    }
}
