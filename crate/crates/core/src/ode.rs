//! Adaptive Dormand–Prince 5(4) for autonomous systems. Steps are clipped
//! so that every requested output time is hit exactly (no interpolation).

use crate::error::{Error, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates y' = f(y) from t0 through each time in `outputs` (increasing),
/// calling `on_output(i, y)` at outputs[i].
pub fn dopri5(
    mut f: impl FnMut(&[f64], &mut [f64]),
    y: &mut [f64],
    t0: f64,
    outputs: &[f64],
    rtol: f64,
    atol: f64,
    mut on_output: impl FnMut(usize, &[f64]),
) -> Result<OdeStats> {
    let n = y.len();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut stats = OdeStats::default();
    let mut t = t0;
    let mut h = 1e-3f64;
    f(y, &mut k[0]);
    for (i, &target) in outputs.iter().enumerate() {
        while t < target {
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            for s in 1..7 {
                for j in 0..n {
                    let mut acc = y[j];
                    for (m, km) in k.iter().enumerate().take(s) {
                        acc += step * A[s][m] * km[j];
                    }
                    tmp[j] = acc;
                }
                f(&tmp, &mut k[s]);
                if s == 6 {
                    ynew.copy_from_slice(&tmp);
                }
            }
            let mut err = 0.0;
            for j in 0..n {
                let mut e = 0.0;
                for (m, km) in k.iter().enumerate() {
                    e += E[m] * km[j];
                }
                let scale = atol + rtol * y[j].abs().max(ynew[j].abs());
                let r = step * e / scale;
                err += r * r;
            }
            let err = (err / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Unstable { step: stats.accepted });
            }
            let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            if err <= 1.0 {
                y.copy_from_slice(&ynew);
                k.swap(0, 6);
                t = if last { target } else { t + step };
                stats.accepted += 1;
                if !last || fac < 1.0 {
                    h = step * fac;
                }
            } else {
                stats.rejected += 1;
                h = step * fac;
            }
            if stats.accepted + stats.rejected > 50_000_000 {
                return Err(Error::Unstable { step: stats.accepted });
            }
        }
        on_output(i, y);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_and_oscillator() {
        let mut y = vec![1.0, 1.0, 0.0];
        let mut got = vec![];
        dopri5(
            |y, dy| {
                dy[0] = -y[0];
                dy[1] = y[2];
                dy[2] = -y[1];
            },
            &mut y,
            0.0,
            &[0.5, 1.0, 10.0],
            1e-11,
            1e-12,
            |_, y| got.push(y.to_vec()),
        )
        .unwrap();
        assert!((got[1][0] - (-1f64).exp()).abs() < 1e-10);
        assert!((got[2][0] - (-10f64).exp()).abs() < 1e-10);
        assert!((got[2][1] - 10f64.cos()).abs() < 1e-9);
    }
}
